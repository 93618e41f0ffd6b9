//! Applications, the IRM and the DA directory lookup.

use super::{AppKind, Event, FlowUser, Network};
use crate::daf::{da_lookup, AppAction, FlowStatus, IrmEntry, IrmError, PingMessage};
use crate::engine::Engine;
use crate::flow_alloc::FaError;
use crate::identifiers::{Apn, PortId, QosRequirements};

impl Network {
    /// Delegates an allocation to the FA of the node's IPCP in the first
    /// DIF the directory lists for `dst`.
    fn irm_allocate(
        &mut self,
        eng: &mut Engine<Event>,
        app: usize,
        dst: &Apn,
        qos: QosRequirements,
    ) -> Result<(), IrmError> {
        let node = self.apps[app].node;
        let difs = da_lookup(dst, &self.directory);
        let x = difs
            .first()
            .and_then(|dan| {
                self.nodes[node]
                    .ipcps
                    .iter()
                    .copied()
                    .find(|&i| self.difs[self.ipcps[i].dif].name == dan.0)
            })
            .ok_or_else(|| IrmError::AllocationFailed(FaError::NoRoute(dst.clone())))?;
        let src = self.apps[app].apn.clone();
        let id = self
            .fa_submit(eng, x, src, dst.clone(), qos, FlowUser::App(app))
            .map_err(IrmError::AllocationFailed)?;
        let f = &self.ipcps[x].fais[&id];
        let port = f.rec.port_id;
        // The submit may already have failed synchronously.
        if f.rec.is_live() {
            let entry = IrmEntry {
                app,
                ipcp: x,
                remote: dst.clone(),
                status: FlowStatus::Pending,
            };
            self.nodes[node].irm.insert(port, entry);
        }
        Ok(())
    }

    fn irm_deallocate(
        &mut self,
        eng: &mut Engine<Event>,
        node: usize,
        port: PortId,
    ) -> Result<(), IrmError> {
        let x = self.nodes[node]
            .irm
            .get(port)
            .ok_or(IrmError::NoSuchFlow(port))?
            .ipcp;
        self.nodes[node]
            .irm
            .set_status(port, FlowStatus::Releasing)?;
        self.fa_deallocate(eng, x, port)
            .map_err(IrmError::AllocationFailed)
    }

    pub(crate) fn app_start(&mut self, eng: &mut Engine<Event>, app: usize) {
        let AppKind::Initiator(p) = &self.apps[app].kind else {
            return;
        };
        let (dst, qos) = (p.cfg.dst.clone(), p.cfg.qos.clone());
        trace_app!(self, eng.now(), app, "APP_ALLOC_REQ", "dst={dst}");
        if let Err(e) = self.irm_allocate(eng, app, &dst, qos) {
            trace_app!(
                self,
                eng.now(),
                app,
                "APP_ALLOC_FAIL",
                "reason={}",
                e.to_string().replace(' ', "_")
            );
            if let AppKind::Initiator(p) = &mut self.apps[app].kind {
                p.on_failed();
            }
        }
    }

    pub(crate) fn app_allocated(&mut self, eng: &mut Engine<Event>, app: usize, port: PortId) {
        let node = self.apps[app].node;
        let _ = self.nodes[node].irm.set_status(port, FlowStatus::Allocated);
        trace_app!(self, eng.now(), app, "APP_FLOW_ALLOCATED", "port={port}");
        let now = eng.now();
        let actions = match &mut self.apps[app].kind {
            AppKind::Initiator(p) => p.on_allocated(port, now),
            AppKind::Responder(_) => Vec::new(),
        };
        self.run_actions(eng, app, port, actions);
    }

    pub(crate) fn app_failed(
        &mut self,
        eng: &mut Engine<Event>,
        app: usize,
        port: PortId,
        reason: &str,
    ) {
        self.nodes[self.apps[app].node].irm.remove(port);
        trace_app!(
            self,
            eng.now(),
            app,
            "APP_ALLOC_FAIL",
            "port={port} reason={reason}"
        );
        if let AppKind::Initiator(p) = &mut self.apps[app].kind {
            p.on_failed();
        }
    }

    /// The peer tore the flow down.
    pub(crate) fn app_flow_closed(&mut self, eng: &mut Engine<Event>, app: usize, port: PortId) {
        self.nodes[self.apps[app].node].irm.remove(port);
        trace_app!(self, eng.now(), app, "APP_FLOW_CLOSED", "port={port}");
    }

    pub(crate) fn app_tick(&mut self, eng: &mut Engine<Event>, app: usize) {
        let now = eng.now();
        let AppKind::Initiator(p) = &mut self.apps[app].kind else {
            return;
        };
        let Some(port) = p.port else { return };
        let actions = p.on_tick(now);
        self.run_actions(eng, app, port, actions);
    }

    pub(crate) fn app_final(&mut self, eng: &mut Engine<Event>, app: usize) {
        let AppKind::Initiator(p) = &mut self.apps[app].kind else {
            return;
        };
        let Some(port) = p.port else { return };
        let actions = p.on_final();
        self.run_actions(eng, app, port, actions);
    }

    pub(crate) fn app_deliver(
        &mut self,
        eng: &mut Engine<Event>,
        app: usize,
        port: PortId,
        sdu: Vec<u8>,
    ) {
        let now = eng.now();
        if let Some(m) = PingMessage::decode(&sdu) {
            trace_app!(
                self,
                now,
                app,
                "APP_READ",
                "port={port} op={} seq={}",
                m.op.as_str(),
                m.seq
            );
        }
        let actions = match &mut self.apps[app].kind {
            AppKind::Initiator(p) => p.on_sdu(&sdu, now),
            AppKind::Responder(r) => r.on_sdu(&sdu, now),
        };
        self.run_actions(eng, app, port, actions);
    }

    fn run_actions(
        &mut self,
        eng: &mut Engine<Event>,
        app: usize,
        port: PortId,
        actions: Vec<AppAction>,
    ) {
        for a in actions {
            match a {
                AppAction::Write(bytes) => self.app_write(eng, app, port, &bytes),
                AppAction::ScheduleTick(t) => {
                    eng.schedule(t, Event::AppTick { app })
                        .expect("tick is in the future");
                }
                AppAction::ScheduleFinal(t) => {
                    eng.schedule(t, Event::AppFinal { app })
                        .expect("final timeout is in the future");
                }
                AppAction::Release => {
                    trace_app!(self, eng.now(), app, "APP_RELEASE", "port={port}");
                    let stop = match &self.apps[app].kind {
                        AppKind::Initiator(p) => p.stop_message(),
                        AppKind::Responder(_) => continue,
                    };
                    self.app_write(eng, app, port, &stop);
                    if let Err(e) = self.irm_deallocate(eng, self.apps[app].node, port) {
                        trace_app!(
                            self,
                            eng.now(),
                            app,
                            "APP_DEALLOC_FAIL",
                            "port={port} reason={}",
                            e.to_string().replace(' ', "_")
                        );
                    }
                }
            }
        }
    }

    fn app_write(&mut self, eng: &mut Engine<Event>, app: usize, port: PortId, bytes: &[u8]) {
        let now = eng.now();
        let node = self.apps[app].node;
        if let Some(m) = PingMessage::decode(bytes) {
            trace_app!(
                self,
                now,
                app,
                "APP_WRITE",
                "port={port} op={} seq={}",
                m.op.as_str(),
                m.seq
            );
        }
        let Some(x) = self.nodes[node].irm.get(port).map(|e| e.ipcp) else {
            return;
        };
        let Some(cep) = self.ipcps[x]
            .fais
            .values()
            .find(|f| f.rec.port_id == port)
            .and_then(|f| f.cep)
        else {
            return;
        };
        let Some(rt) = self.ipcps[x].efcp.get_mut(&cep) else {
            return;
        };
        match rt.inst.dtp_send(bytes, now) {
            Ok((_, outs)) => self.apply_efcp(eng, x, cep, outs),
            Err(e) => trace_app!(
                self,
                now,
                app,
                "APP_WRITE_FAIL",
                "port={port} reason={}",
                e.to_string().replace(' ', "_")
            ),
        }
    }
}
