//! Control plane: RIB daemon dispatch, enrollment, routing and the flow
//! allocator's allocation and deallocation exchanges.

use super::{Event, FaiRt, FlowUser, Network, PortKey};
use crate::daf::{FlowStatus, IrmEntry};
use crate::efcp::{EfcpInstance, Pdu};
use crate::engine::Engine;
use crate::flow_alloc::{FaError, FaiId, FaiRecord, FaiState};
use crate::identifiers::{
    select_cube, Address, Apn, CepId, ConnectionId, Dan, QosCube, QosId, QosRequirements,
};
use crate::mgmt::{
    EnrollState, EnrollmentFsm, FlowDescriptor, Lsa, MgmtBody, MgmtMessage, RoutingStep,
};

fn mgmt_detail(msg: &MgmtMessage) -> String {
    let mut s = String::new();
    if let Some(f) = msg.flow() {
        s = format!(
            " src_apn={} dst_apn={} scep={} dcep={} qos={}",
            f.src_apn, f.dst_apn, f.src_cep, f.dst_cep, f.qos_id
        );
    }
    if let MgmtBody::RoutingUpdate { lsa } = &msg.body {
        s = format!(" origin={} version={}", lsa.origin, lsa.version);
    }
    if let Some(r) = msg.result() {
        s.push_str(if r { " result=+" } else { " result=-" });
    }
    s
}

impl Network {
    pub(crate) fn ribd_send(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        dst: Address,
        body: MgmtBody,
    ) {
        let src = self.ipcps[x].addr;
        let msg = MgmtMessage { src, dst, body };
        if self.tracer.enabled() {
            let nh = self
                .next_hop(x, dst, QosId::MANAGEMENT)
                .map_or("-".to_string(), |a| a.to_string());
            let detail = mgmt_detail(&msg);
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "ribd",
                "RIBD_SEND",
                "kind={} dst={dst} next_hop={nh}{detail}",
                msg.kind()
            );
        }
        let pdu = Pdu::management(src, dst, msg.encode());
        self.rmt_out(eng, x, pdu, true);
    }

    pub(crate) fn ribd_deliver(&mut self, eng: &mut Engine<Event>, x: usize, msg: MgmtMessage) {
        if self.tracer.enabled() {
            let detail = mgmt_detail(&msg);
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "ribd",
                "RIBD_RECV",
                "kind={} src={}{detail}",
                msg.kind(),
                msg.src
            );
        }
        let src = msg.src;
        match msg.body {
            MgmtBody::MConnect { dif, auth } => self.on_mconnect(eng, x, src, &dif, &auth),
            MgmtBody::MConnectResponse { positive, .. } => {
                self.on_mconnect_response(eng, x, src, positive)
            }
            MgmtBody::RoutingUpdate { lsa } => self.on_routing_update(eng, x, src, lsa),
            MgmtBody::CreateFlowRequest { flow } => {
                self.fa_handle_create_request(eng, x, src, flow)
            }
            MgmtBody::CreateFlowResponse { flow, positive } => {
                self.fai_on_create_response(eng, x, src, flow, positive)
            }
            MgmtBody::DeleteFlowRequest { flow } => {
                self.fa_handle_delete_request(eng, x, src, flow)
            }
            MgmtBody::DeleteFlowResponse { flow, .. } => self.fai_on_delete_response(eng, x, flow),
        }
    }

    // ---- enrollment ----------------------------------------------------

    fn new_fsm(&self, x: usize, peer: Address) -> EnrollmentFsm {
        let ip = &self.ipcps[x];
        EnrollmentFsm::new(peer, Dan(self.difs[ip.dif].name.clone()), ip.auth.clone())
    }

    fn trace_enroll(&mut self, eng: &Engine<Event>, x: usize, peer: Address, state: EnrollState) {
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "enroll",
            "ENROLL_STATE",
            "peer={peer} state={} dif={}",
            state.as_str(),
            self.difs[self.ipcps[x].dif].name
        );
    }

    /// Starts taking part in the DIF: enroll with every configured neighbour.
    pub(crate) fn join(&mut self, eng: &mut Engine<Event>, x: usize) {
        if self.ipcps[x].joined {
            return;
        }
        self.ipcps[x].joined = true;
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "enroll",
            "DIF_JOIN",
            "dif={}",
            self.difs[self.ipcps[x].dif].name
        );
        let neighbors: Vec<Address> = self.ipcps[x].neighbors.keys().copied().collect();
        for nb in neighbors {
            self.ensure_enroll(eng, x, nb);
        }
    }

    /// Bootstraps the management flow to `peer` if needed, then enrolls.
    fn ensure_enroll(&mut self, eng: &mut Engine<Event>, x: usize, peer: Address) {
        if self.ipcps[x].enroll.contains_key(&peer) {
            return;
        }
        let fsm = self.new_fsm(x, peer);
        self.ipcps[x].enroll.insert(peer, fsm);
        let ra = &mut self.ipcps[x].ra;
        if ra.get(peer, QosId::MANAGEMENT).is_some() {
            self.start_enroll(eng, x, peer);
        } else if ra.ra_get_or_allocate_n1_flow(peer, QosId::MANAGEMENT, super::Cont::Enroll(peer))
            == crate::flow_alloc::RaLookup::Started
        {
            self.start_n1(eng, x, peer, QosId::MANAGEMENT);
        }
    }

    /// Management flow is up: send MConnect.
    pub(crate) fn start_enroll(&mut self, eng: &mut Engine<Event>, x: usize, peer: Address) {
        if !self.ipcps[x].enroll.contains_key(&peer) {
            let fsm = self.new_fsm(x, peer);
            self.ipcps[x].enroll.insert(peer, fsm);
        }
        let Ok(body) = self.ipcps[x]
            .enroll
            .get_mut(&peer)
            .unwrap()
            .enroll_initiate()
        else {
            return;
        };
        self.trace_enroll(eng, x, peer, EnrollState::Connecting);
        let timeout = self.difs[self.ipcps[x].dif].spec.enroll_timeout();
        let h = eng.schedule_in(timeout, Event::EnrollTimeout { ipcp: x, peer });
        self.ipcps[x].enroll_timers.insert(peer, h);
        self.ribd_send(eng, x, peer, body);
    }

    fn on_mconnect(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Address,
        dif: &str,
        auth: &str,
    ) {
        if !self.ipcps[x].enroll.contains_key(&src) {
            let fsm = self.new_fsm(x, src);
            self.ipcps[x].enroll.insert(src, fsm);
        }
        let fsm = self.ipcps[x].enroll.get_mut(&src).unwrap();
        let before = fsm.state;
        let body = fsm.on_mconnect(dif, auth);
        let after = fsm.state;
        if before != after {
            self.trace_enroll(eng, x, src, after);
        }
        self.ribd_send(eng, x, src, body);
        if after == EnrollState::Enrolled {
            self.on_enrolled(eng, x, src);
        }
    }

    fn on_mconnect_response(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Address,
        positive: bool,
    ) {
        let Some(fsm) = self.ipcps[x].enroll.get_mut(&src) else {
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "enroll",
                "ENROLL_UNEXPECTED",
                "peer={src}"
            );
            return;
        };
        let before = fsm.state;
        let after = fsm.on_response(positive);
        if before != after {
            self.trace_enroll(eng, x, src, after);
        }
        match after {
            EnrollState::Enrolled => self.on_enrolled(eng, x, src),
            EnrollState::Failed => {
                if let Some(h) = self.ipcps[x].enroll_timers.remove(&src) {
                    eng.cancel(h);
                }
            }
            _ => {}
        }
    }

    pub(crate) fn on_enroll_timeout(&mut self, eng: &mut Engine<Event>, x: usize, peer: Address) {
        self.ipcps[x].enroll_timers.remove(&peer);
        let Some(fsm) = self.ipcps[x].enroll.get_mut(&peer) else {
            return;
        };
        let before = fsm.state;
        let after = fsm.on_timeout();
        if before != after {
            self.trace_enroll(eng, x, peer, after);
        }
    }

    fn on_enrolled(&mut self, eng: &mut Engine<Event>, x: usize, peer: Address) {
        if let Some(h) = self.ipcps[x].enroll_timers.remove(&peer) {
            eng.cancel(h);
        }
        if !self.ipcps[x].adjacent.insert(peer) {
            return;
        }
        let metric = self.ipcps[x].neighbors.get(&peer).map_or(1, |n| n.metric);
        if let Some(step) = self.ipcps[x].routing.add_neighbor(peer, metric) {
            self.apply_routing_step(eng, x, step);
        }
        let me = self.ipcps[x].addr;
        let sync: Vec<Lsa> = self.ipcps[x]
            .routing
            .db_sync()
            .into_iter()
            .filter(|l| l.origin != me && l.origin != peer)
            .collect();
        for lsa in sync {
            self.ribd_send(eng, x, peer, MgmtBody::RoutingUpdate { lsa });
        }
        if !self.ipcps[x].joined {
            self.join(eng, x);
        }
        self.recheck_awaiting(eng, x);
    }

    // ---- routing -------------------------------------------------------

    fn on_routing_update(&mut self, eng: &mut Engine<Event>, x: usize, src: Address, lsa: Lsa) {
        let step = self.ipcps[x].routing.routing_step(lsa, src);
        self.apply_routing_step(eng, x, step);
    }

    fn apply_routing_step(&mut self, eng: &mut Engine<Event>, x: usize, step: RoutingStep) {
        for (nb, lsa) in step.flood {
            if self.ipcps[x].adjacent.contains(&nb) {
                self.ribd_send(eng, x, nb, MgmtBody::RoutingUpdate { lsa });
            }
        }
        if step.changed {
            let ids: Vec<QosId> = self.cubes.iter().map(|c| c.id).collect();
            let ip = &mut self.ipcps[x];
            ip.fwd = ip.routing.forwarding_table(&ids);
            let digest = ip.routing.digest();
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "routing",
                "ROUTING_INSTALL",
                "table={digest}"
            );
            self.recheck_awaiting(eng, x);
        }
    }

    // ---- flow allocation -----------------------------------------------

    fn fai_set(&mut self, eng: &Engine<Event>, x: usize, id: FaiId, to: FaiState) -> bool {
        let Some(f) = self.ipcps[x].fais.get_mut(&id) else {
            return false;
        };
        match f.rec.transition(to) {
            Ok(from) => {
                let port = f.rec.port_id;
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "fa",
                    "FAI_STATE",
                    "fai={} port={port} from={} to={} dif={}",
                    id.0,
                    from.as_str(),
                    to.as_str(),
                    self.difs[self.ipcps[x].dif].name
                );
                true
            }
            Err(e) => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "fa",
                    "FAI_ILLEGAL",
                    "fai={} reason={}",
                    id.0,
                    e.to_string().replace(' ', "_")
                );
                false
            }
        }
    }

    fn data_cubes(&self) -> Vec<QosCube> {
        self.cubes
            .iter()
            .filter(|c| c.id != QosId::MANAGEMENT)
            .cloned()
            .collect()
    }

    /// Creates an initiator FAI in ALLOC_PENDING with its EFCP instance and
    /// queues the CreateFlowRequest until a route and an enrolled next hop
    /// exist.
    pub(crate) fn fa_submit(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Apn,
        dst: Apn,
        req: QosRequirements,
        user: FlowUser,
    ) -> Result<FaiId, FaError> {
        let qos = select_cube(&req, &self.data_cubes()).ok_or(FaError::NoQosCube)?;
        let dif = self.ipcps[x].dif;
        let dst_addr = *self.difs[dif]
            .apns
            .get(&dst)
            .ok_or_else(|| FaError::NoRoute(dst.clone()))?;
        if let FlowUser::App(_) = user {
            let dup = self.ipcps[x].fais.values().any(|f| {
                f.user == user
                    && f.rec.remote_apn == dst
                    && f.rec.qos_id == qos
                    && f.rec.state == FaiState::AllocPending
            });
            if dup {
                return Err(FaError::DuplicateRequest);
            }
        }
        let node = self.ipcps[x].node;
        let port = self.nodes[node]
            .ports
            .allocate_port_id()
            .map_err(|_| FaError::Exhausted)?;
        let Ok(cep) = self.ipcps[x].ceps.allocate_cep_id() else {
            self.nodes[node].ports.release(port);
            return Err(FaError::Exhausted);
        };
        let ip = &mut self.ipcps[x];
        let id = FaiId(ip.next_fai);
        ip.next_fai += 1;
        let conn = ConnectionId {
            src_cep: cep,
            dst_cep: CepId(0),
            qos_id: qos,
        };
        let mut rec = FaiRecord::new(
            id,
            src.clone(),
            dst.clone(),
            port,
            conn,
            qos,
            ip.name.clone(),
            true,
        );
        rec.remote_addr = Some(dst_addr);
        let timeout = self.difs[dif].spec.allocate_timeout();
        let h = eng.schedule_in(timeout, Event::AllocTimeout { ipcp: x, fai: id });
        self.ipcps[x].fais.insert(
            id,
            FaiRt {
                rec,
                user,
                cep: Some(cep),
                dst_addr,
                timeout: Some(h),
            },
        );
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "fa",
            "FA_ALLOC_REQ",
            "fai={} src={src} dst={dst} port={port} qos={qos} dif={}",
            id.0,
            self.difs[dif].name
        );
        self.fai_set(eng, x, id, FaiState::AllocPending);
        let inst = EfcpInstance::new(self.ipcps[x].addr, dst_addr, conn, self.efcp_policy(x, qos));
        self.spawn_efcp(x, cep, id, inst);
        self.ipcps[x].awaiting.push(id);
        if !self.ipcps[x].joined {
            self.join(eng, x);
        }
        self.recheck_awaiting(eng, x);
        Ok(id)
    }

    /// Sends every queued CreateFlowRequest whose next hop is now enrolled.
    fn recheck_awaiting(&mut self, eng: &mut Engine<Event>, x: usize) {
        let list = std::mem::take(&mut self.ipcps[x].awaiting);
        let mut keep = Vec::new();
        for id in list {
            let Some(f) = self.ipcps[x].fais.get(&id) else {
                continue;
            };
            if f.rec.state != FaiState::AllocPending {
                continue;
            }
            let dst = f.dst_addr;
            if dst == self.ipcps[x].addr {
                self.send_create_request(eng, x, id);
                continue;
            }
            match self.next_hop(x, dst, QosId::MANAGEMENT) {
                Some(nh)
                    if self.ipcps[x]
                        .enroll
                        .get(&nh)
                        .is_some_and(EnrollmentFsm::is_enrolled) =>
                {
                    self.send_create_request(eng, x, id);
                }
                Some(nh) => {
                    if self.ipcps[x].neighbors.contains_key(&nh) {
                        self.ensure_enroll(eng, x, nh);
                    }
                    keep.push(id);
                }
                None => keep.push(id),
            }
        }
        let added = std::mem::take(&mut self.ipcps[x].awaiting);
        keep.extend(added);
        self.ipcps[x].awaiting = keep;
    }

    fn send_create_request(&mut self, eng: &mut Engine<Event>, x: usize, id: FaiId) {
        let f = &self.ipcps[x].fais[&id];
        let flow = FlowDescriptor {
            src_apn: f.rec.local_apn.clone(),
            dst_apn: f.rec.remote_apn.clone(),
            src_cep: f.rec.connection_id.src_cep,
            dst_cep: CepId(0),
            qos_id: f.rec.qos_id,
        };
        let dst = f.dst_addr;
        self.provision(eng, x, dst, flow.qos_id);
        self.ribd_send(eng, x, dst, MgmtBody::CreateFlowRequest { flow });
    }

    /// Who would take an incoming flow for `flow.dst_apn` on this IPCP.
    fn find_flow_user(&self, x: usize, flow: &FlowDescriptor) -> Option<FlowUser> {
        let node = self.ipcps[x].node;
        if let Some(a) = self
            .apps
            .iter()
            .position(|a| a.node == node && a.apn == flow.dst_apn)
        {
            return Some(FlowUser::App(a));
        }
        let &upper = self.ipcp_by_name.get(&flow.dst_apn.name)?;
        if !self.ipcps[upper].under.contains(&x) {
            return None;
        }
        let &requester = self.ipcp_by_name.get(&flow.src_apn.name)?;
        let qos = flow
            .src_apn
            .instance
            .as_deref()
            .and_then(|q| q.parse().ok())
            .map_or(QosId::MANAGEMENT, QosId);
        Some(FlowUser::Ipcp {
            upper,
            peer: self.ipcps[requester].addr,
            qos,
        })
    }

    fn fa_handle_create_request(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Address,
        flow: FlowDescriptor,
    ) {
        let negative = |flow: FlowDescriptor| MgmtBody::CreateFlowResponse {
            flow,
            positive: false,
        };
        let Some(user) = self.find_flow_user(x, &flow) else {
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "fa",
                "FA_UNKNOWN_APN",
                "apn={}",
                flow.dst_apn
            );
            self.ribd_send(eng, x, src, negative(flow));
            return;
        };
        let node = self.ipcps[x].node;
        let Ok(port) = self.nodes[node].ports.allocate_port_id() else {
            self.ribd_send(eng, x, src, negative(flow));
            return;
        };
        let Ok(cep) = self.ipcps[x].ceps.allocate_cep_id() else {
            self.nodes[node].ports.release(port);
            self.ribd_send(eng, x, src, negative(flow));
            return;
        };
        let qos = flow.qos_id;
        let ip = &mut self.ipcps[x];
        let id = FaiId(ip.next_fai);
        ip.next_fai += 1;
        let conn = ConnectionId {
            src_cep: cep,
            dst_cep: flow.src_cep,
            qos_id: qos,
        };
        let mut rec = FaiRecord::new(
            id,
            flow.dst_apn.clone(),
            flow.src_apn.clone(),
            port,
            conn,
            qos,
            ip.name.clone(),
            false,
        );
        rec.remote_addr = Some(src);
        ip.fais.insert(
            id,
            FaiRt {
                rec,
                user,
                cep: Some(cep),
                dst_addr: src,
                timeout: None,
            },
        );
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "fa",
            "FA_FLOW_NOTIFY",
            "fai={} src={} dst={} port={port} qos={qos} dif={}",
            id.0,
            flow.src_apn,
            flow.dst_apn,
            self.difs[self.ipcps[x].dif].name
        );
        self.fai_set(eng, x, id, FaiState::NotifyPending);
        let accept = match user {
            FlowUser::App(a) => self.apps[a].accept,
            FlowUser::Ipcp { .. } => true,
        };
        if !accept {
            if let FlowUser::App(a) = user {
                trace_app!(
                    self,
                    eng.now(),
                    a,
                    "APP_FLOW_DENY",
                    "remote={}",
                    flow.src_apn
                );
            }
            self.fai_set(eng, x, id, FaiState::Deallocated);
            self.nodes[node].ports.release(port);
            self.ipcps[x].ceps.release(cep);
            self.ipcps[x].fais.remove(&id);
            self.ribd_send(eng, x, src, negative(flow));
            return;
        }
        self.fai_set(eng, x, id, FaiState::Allocated);
        self.flows_allocated += 1;
        let mut inst = EfcpInstance::new(self.ipcps[x].addr, src, conn, self.efcp_policy(x, qos));
        inst.bind(src, conn);
        self.spawn_efcp(x, cep, id, inst);
        if let FlowUser::App(a) = user {
            let entry = IrmEntry {
                app: a,
                ipcp: x,
                remote: flow.src_apn.clone(),
                status: FlowStatus::Allocated,
            };
            self.nodes[node].irm.insert(port, entry);
            trace_app!(
                self,
                eng.now(),
                a,
                "APP_FLOW_ACCEPT",
                "port={port} remote={}",
                flow.src_apn
            );
        }
        self.provision(eng, x, src, qos);
        let reply = FlowDescriptor {
            dst_cep: cep,
            ..flow
        };
        self.ribd_send(
            eng,
            x,
            src,
            MgmtBody::CreateFlowResponse {
                flow: reply,
                positive: true,
            },
        );
        if let FlowUser::Ipcp { .. } = user {
            self.register_carrier(eng, x, id);
        }
    }

    /// Offers an allocated (N-1)-flow to the RA of the IPCP above. An
    /// already usable flow for the same key is kept.
    fn register_carrier(&mut self, eng: &mut Engine<Event>, x: usize, id: FaiId) {
        let f = &self.ipcps[x].fais[&id];
        let FlowUser::Ipcp { upper, peer, qos } = f.user else {
            return;
        };
        let key = PortKey::Lower {
            ipcp: x,
            port: f.rec.port_id,
        };
        if self.ipcps[upper].ra.get(peer, qos).is_some() {
            return;
        }
        self.ensure_port(upper, key);
        let label = self.port_label(key);
        trace_ipcp!(
            self,
            eng.now(),
            upper,
            "ra",
            "RA_N1_READY",
            "peer={peer} qos={qos} port={label}"
        );
        let conts = self.ipcps[upper].ra.ready(peer, qos, key);
        self.resume(eng, upper, conts);
    }

    fn fai_on_create_response(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Address,
        flow: FlowDescriptor,
        positive: bool,
    ) {
        let found = self.ipcps[x]
            .fais
            .values()
            .find(|f| {
                f.rec.initiator
                    && f.cep == Some(flow.src_cep)
                    && f.rec.state == FaiState::AllocPending
            })
            .map(|f| f.rec.id);
        let Some(id) = found else {
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "fa",
                "FA_UNEXPECTED",
                "kind=CreateFlowResponse scep={} src={src}",
                flow.src_cep
            );
            return;
        };
        if let Some(h) = self.ipcps[x].fais.get_mut(&id).unwrap().timeout.take() {
            eng.cancel(h);
        }
        if !positive {
            self.fail_fai(eng, x, id, "negative_response");
            return;
        }
        self.fai_set(eng, x, id, FaiState::Allocated);
        self.flows_allocated += 1;
        let conn = ConnectionId {
            src_cep: flow.src_cep,
            dst_cep: flow.dst_cep,
            qos_id: flow.qos_id,
        };
        let f = self.ipcps[x].fais.get_mut(&id).unwrap();
        f.rec.connection_id = conn;
        f.rec.remote_addr = Some(src);
        let (user, port) = (f.user, f.rec.port_id);
        if let Some(rt) = self.ipcps[x].efcp.get_mut(&flow.src_cep) {
            rt.inst.bind(src, conn);
        }
        match user {
            FlowUser::App(a) => self.app_allocated(eng, a, port),
            FlowUser::Ipcp { .. } => self.register_carrier(eng, x, id),
        }
    }

    /// An allocation attempt ended without a flow: free everything and tell
    /// the user.
    fn fail_fai(&mut self, eng: &mut Engine<Event>, x: usize, id: FaiId, reason: &str) {
        self.fai_set(eng, x, id, FaiState::Deallocated);
        let Some(f) = self.ipcps[x].fais.remove(&id) else {
            return;
        };
        if let Some(h) = f.timeout {
            eng.cancel(h);
        }
        if let Some(cep) = f.cep {
            self.remove_efcp(eng, x, cep);
        }
        self.nodes[self.ipcps[x].node].ports.release(f.rec.port_id);
        self.ipcps[x].awaiting.retain(|a| *a != id);
        self.allocation_failures += 1;
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "fa",
            "FA_ALLOC_FAIL",
            "fai={} dst={} reason={reason}",
            id.0,
            f.rec.remote_apn
        );
        match f.user {
            FlowUser::App(a) => self.app_failed(eng, a, f.rec.port_id, reason),
            FlowUser::Ipcp { upper, peer, qos } => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    upper,
                    "ra",
                    "RA_N1_FAIL",
                    "peer={peer} qos={qos} reason={reason}"
                );
                let conts = self.ipcps[upper].ra.failed(peer, qos);
                self.fail_conts(eng, upper, conts);
            }
        }
    }

    pub(crate) fn on_alloc_timeout(&mut self, eng: &mut Engine<Event>, x: usize, id: FaiId) {
        let Some(f) = self.ipcps[x].fais.get_mut(&id) else {
            return;
        };
        f.timeout = None;
        match f.rec.state {
            FaiState::AllocPending => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "fa",
                    "FA_TIMEOUT",
                    "fai={} state=ALLOC_PENDING",
                    id.0
                );
                self.fail_fai(eng, x, id, "timeout");
            }
            FaiState::DeallocPending => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "fa",
                    "FA_TIMEOUT",
                    "fai={} state=DEALLOC_PENDING",
                    id.0
                );
                self.finalize_dealloc(eng, x, id);
            }
            _ => {}
        }
    }

    // ---- deallocation --------------------------------------------------

    pub(crate) fn fa_deallocate(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        port: crate::identifiers::PortId,
    ) -> Result<(), FaError> {
        let id = self.ipcps[x]
            .fais
            .values()
            .find(|f| f.rec.port_id == port && f.rec.state == FaiState::Allocated)
            .map(|f| f.rec.id)
            .ok_or(FaError::NoSuchFlow(port))?;
        let f = &self.ipcps[x].fais[&id];
        let flow = FlowDescriptor {
            src_apn: f.rec.local_apn.clone(),
            dst_apn: f.rec.remote_apn.clone(),
            src_cep: f.rec.connection_id.src_cep,
            dst_cep: f.rec.connection_id.dst_cep,
            qos_id: f.rec.qos_id,
        };
        let dst = f.dst_addr;
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "fa",
            "FA_DEALLOC",
            "fai={} port={port} src={} dst={} dif={}",
            id.0,
            flow.src_apn,
            flow.dst_apn,
            self.difs[self.ipcps[x].dif].name
        );
        self.fai_set(eng, x, id, FaiState::DeallocPending);
        let timeout = self.difs[self.ipcps[x].dif].spec.allocate_timeout();
        let h = eng.schedule_in(timeout, Event::AllocTimeout { ipcp: x, fai: id });
        self.ipcps[x].fais.get_mut(&id).unwrap().timeout = Some(h);
        self.ribd_send(eng, x, dst, MgmtBody::DeleteFlowRequest { flow });
        Ok(())
    }

    fn fa_handle_delete_request(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        src: Address,
        flow: FlowDescriptor,
    ) {
        let found = self.ipcps[x]
            .fais
            .values()
            .find(|f| {
                f.cep == Some(flow.dst_cep)
                    && f.rec.state == FaiState::Allocated
                    && f.dst_addr == src
            })
            .map(|f| f.rec.id);
        let Some(id) = found else {
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "fa",
                "FA_UNEXPECTED",
                "kind=DeleteFlowRequest dcep={} src={src}",
                flow.dst_cep
            );
            self.ribd_send(
                eng,
                x,
                src,
                MgmtBody::DeleteFlowResponse {
                    flow,
                    positive: false,
                },
            );
            return;
        };
        let f = &self.ipcps[x].fais[&id];
        let (user, port, cep) = (f.user, f.rec.port_id, f.cep);
        if let FlowUser::App(a) = user {
            self.app_flow_closed(eng, a, port);
        }
        if let Some(cep) = cep {
            self.remove_efcp(eng, x, cep);
        }
        self.fai_set(eng, x, id, FaiState::Deallocated);
        self.nodes[self.ipcps[x].node].ports.release(port);
        self.ipcps[x].fais.remove(&id);
        self.flows_deallocated += 1;
        self.ribd_send(
            eng,
            x,
            src,
            MgmtBody::DeleteFlowResponse {
                flow,
                positive: true,
            },
        );
    }

    fn fai_on_delete_response(&mut self, eng: &mut Engine<Event>, x: usize, flow: FlowDescriptor) {
        let found = self.ipcps[x]
            .fais
            .values()
            .find(|f| {
                f.rec.initiator
                    && f.cep == Some(flow.src_cep)
                    && f.rec.state == FaiState::DeallocPending
            })
            .map(|f| f.rec.id);
        match found {
            Some(id) => self.finalize_dealloc(eng, x, id),
            None => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "fa",
                    "FA_UNEXPECTED",
                    "kind=DeleteFlowResponse scep={}",
                    flow.src_cep
                )
            }
        }
    }

    fn finalize_dealloc(&mut self, eng: &mut Engine<Event>, x: usize, id: FaiId) {
        let Some(f) = self.ipcps[x].fais.get_mut(&id) else {
            return;
        };
        if let Some(h) = f.timeout.take() {
            eng.cancel(h);
        }
        let (user, port, cep) = (f.user, f.rec.port_id, f.cep);
        if let Some(cep) = cep {
            self.remove_efcp(eng, x, cep);
        }
        self.fai_set(eng, x, id, FaiState::Deallocated);
        let node = self.ipcps[x].node;
        self.nodes[node].ports.release(port);
        self.ipcps[x].fais.remove(&id);
        self.flows_deallocated += 1;
        if let FlowUser::App(a) = user {
            self.nodes[node].irm.remove(port);
            trace_app!(self, eng.now(), a, "APP_FLOW_RELEASED", "port={port}");
        }
    }
}
