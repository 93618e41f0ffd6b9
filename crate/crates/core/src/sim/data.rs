//! Data path: RMT queues, links, the glue between RMT and EFCP, and the
//! hand-off of SDUs between stacked IPCPs.

use super::{Cont, EfcpRt, Event, FlowUser, Network, PortKey, Via};
use crate::efcp::{demux, mux, EfcpOutput, EfcpPolicy, Pdu, PduKind, Side, StateDiscard};
use crate::engine::{Engine, SimTime};
use crate::flow_alloc::{FaiState, RaLookup};
use crate::identifiers::{Address, CepId, QosId};
use crate::mgmt::{MgmtBody, MgmtMessage};
use crate::rmt::{Direction, Enqueued, RmtPort};

impl Network {
    pub(crate) fn port_label(&self, key: PortKey) -> String {
        match key {
            PortKey::Link(l) => format!("link{l}"),
            PortKey::Lower { ipcp, port } => format!("{}:{port}", self.ipcps[ipcp].name),
        }
    }

    pub(crate) fn ensure_port(&mut self, x: usize, key: PortKey) {
        if !self.ipcps[x].ports.contains_key(&key) {
            let spec = &self.difs[self.ipcps[x].dif].spec;
            let policy = spec.scheduler.parse().unwrap_or_default();
            let port = RmtPort::new(spec.queue_capacity, policy);
            self.ipcps[x].ports.insert(key, port);
        }
    }

    pub(crate) fn next_hop(&self, x: usize, dst: Address, qos: QosId) -> Option<Address> {
        let ip = &self.ipcps[x];
        ip.fwd
            .lookup(dst, qos)
            .copied()
            .or_else(|| ip.neighbors.contains_key(&dst).then_some(dst))
    }

    /// Hands a PDU to the RMT for transmission. `originated` is false when
    /// relaying or resuming a PDU that was already counted.
    pub(crate) fn rmt_out(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        pdu: Pdu,
        originated: bool,
    ) {
        let rank = self.ipcps[x].rank;
        if originated {
            self.counter(rank).originated += 1;
        }
        if pdu.dst_addr == self.ipcps[x].addr {
            self.rmt_local(eng, x, pdu);
            return;
        }
        let qos = pdu.qos_id();
        let Some(nh) = self.next_hop(x, pdu.dst_addr, qos) else {
            trace_ipcp!(
                self,
                eng.now(),
                x,
                "rmt",
                "RMT_NO_ROUTE",
                "dst={} qos={qos} kind={}",
                pdu.dst_addr,
                pdu.kind.as_str()
            );
            self.counter(rank).no_route += 1;
            return;
        };
        if let Some(&port) = self.ipcps[x].ra.get(nh, qos) {
            self.enqueue_out(eng, x, port, pdu);
            return;
        }
        if self.ipcps[x]
            .ra
            .ra_get_or_allocate_n1_flow(nh, qos, Cont::Forward(pdu))
            == RaLookup::Started
        {
            self.start_n1(eng, x, nh, qos);
        }
    }

    /// Sets up the (N-1)-flow toward `dst` for `qos` ahead of the traffic
    /// that will need it.
    pub(crate) fn provision(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        dst: Address,
        qos: QosId,
    ) {
        let Some(nh) = self.next_hop(x, dst, qos) else {
            return;
        };
        let ra = &mut self.ipcps[x].ra;
        if ra.get(nh, qos).is_none()
            && !ra.is_pending(nh, qos)
            && ra.ra_get_or_allocate_n1_flow(nh, qos, Cont::Provision) == RaLookup::Started
        {
            self.start_n1(eng, x, nh, qos);
        }
    }

    /// Obtains the (N-1)-flow to neighbour `peer`: inherent on a link, a
    /// recursive allocation in the lower DIF otherwise.
    pub(crate) fn start_n1(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        peer: Address,
        qos: QosId,
    ) {
        let now = eng.now();
        let rank = self.ipcps[x].rank;
        match self.ipcps[x].neighbors.get(&peer).map(|n| n.via) {
            Some(Via::Link(l)) => {
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "ra",
                    "RA_N1_ALLOC",
                    "peer={peer} qos={qos} rank={rank} target=medium"
                );
                if self.links[l].link.medium_allocate() {
                    let key = PortKey::Link(l);
                    self.ensure_port(x, key);
                    trace_ipcp!(
                        self,
                        now,
                        x,
                        "ra",
                        "RA_N1_READY",
                        "peer={peer} qos={qos} port=link{l}"
                    );
                    let conts = self.ipcps[x].ra.ready(peer, qos, key);
                    self.resume(eng, x, conts);
                }
            }
            Some(Via::Lower { lower, .. }) => {
                let target = self.ipcps[lower].name.clone();
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "ra",
                    "RA_N1_ALLOC",
                    "peer={peer} qos={qos} rank={rank} target={target}"
                );
                let src = crate::identifiers::Apn::with_instance(
                    self.ipcps[x].name.clone(),
                    qos.0.to_string(),
                );
                let upper_peer = self.difs[self.ipcps[x].dif].by_addr[&peer];
                let dst = self.ipcps[upper_peer].apn.clone();
                let req = self.carrier_requirements(qos);
                let user = FlowUser::Ipcp {
                    upper: x,
                    peer,
                    qos,
                };
                if let Err(e) = self.fa_submit(eng, lower, src, dst, req, user) {
                    trace_ipcp!(
                        self,
                        now,
                        x,
                        "ra",
                        "RA_N1_FAIL",
                        "peer={peer} qos={qos} reason={}",
                        e.to_string().replace(' ', "_")
                    );
                    let conts = self.ipcps[x].ra.failed(peer, qos);
                    self.fail_conts(eng, x, conts);
                }
            }
            None => {
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "ra",
                    "RA_N1_FAIL",
                    "peer={peer} qos={qos} reason=not_a_neighbour"
                );
                let conts = self.ipcps[x].ra.failed(peer, qos);
                self.fail_conts(eng, x, conts);
            }
        }
    }

    /// QoS asked of the lower DIF for a carrier of upper qos `qos`.
    /// Management traffic rides a reliable carrier.
    fn carrier_requirements(&self, qos: QosId) -> crate::identifiers::QosRequirements {
        match self
            .cubes
            .iter()
            .find(|c| c.id == qos && qos != QosId::MANAGEMENT)
        {
            Some(c) => crate::identifiers::QosRequirements {
                reliable: c.reliable,
                ordered: c.ordered,
                ..Default::default()
            },
            None => crate::identifiers::QosRequirements {
                reliable: true,
                ordered: true,
                ..Default::default()
            },
        }
    }

    pub(crate) fn resume(&mut self, eng: &mut Engine<Event>, x: usize, conts: Vec<Cont>) {
        for c in conts {
            match c {
                Cont::Forward(pdu) => self.rmt_out(eng, x, pdu, false),
                Cont::Enroll(peer) => self.start_enroll(eng, x, peer),
                Cont::Provision => {}
            }
        }
    }

    pub(crate) fn fail_conts(&mut self, eng: &mut Engine<Event>, x: usize, conts: Vec<Cont>) {
        let rank = self.ipcps[x].rank;
        for c in conts {
            match c {
                Cont::Forward(pdu) => {
                    trace_ipcp!(
                        self,
                        eng.now(),
                        x,
                        "rmt",
                        "RMT_NO_ROUTE",
                        "dst={} qos={} kind={}",
                        pdu.dst_addr,
                        pdu.qos_id(),
                        pdu.kind.as_str()
                    );
                    self.counter(rank).no_route += 1;
                }
                Cont::Enroll(peer) => {
                    // Forget the attempt so a later join can retry.
                    self.ipcps[x].enroll.remove(&peer);
                }
                Cont::Provision => {}
            }
        }
    }

    fn enqueue_out(&mut self, eng: &mut Engine<Event>, x: usize, key: PortKey, pdu: Pdu) {
        self.ensure_port(x, key);
        let rank = self.ipcps[x].rank;
        let label = self.port_label(key);
        let res = self.ipcps[x]
            .ports
            .get_mut(&key)
            .unwrap()
            .rmt_enqueue(pdu, Direction::Out);
        match res {
            Enqueued::Accepted { len } => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "rmt",
                    "RMT_ENQ",
                    "port={label} dir=out len={len}"
                );
            }
            Enqueued::Dropped { len } => {
                trace_ipcp!(
                    self,
                    eng.now(),
                    x,
                    "rmt",
                    "RMT_QUEUE_DROP",
                    "port={label} dir=out len={len}"
                );
                self.counter(rank).queue_drops += 1;
            }
        }
        self.drain_out(eng, x, key);
    }

    pub(crate) fn drain_out(&mut self, eng: &mut Engine<Event>, x: usize, key: PortKey) {
        let now = eng.now();
        let label = self.port_label(key);
        match key {
            PortKey::Link(l) => {
                let side = if self.links[l].ends[0] == x { 0 } else { 1 };
                while self.links[l].link.is_idle(side, now) {
                    let Some(port) = self.ipcps[x].ports.get_mut(&key) else {
                        return;
                    };
                    let Some(pdu) = port.dequeue(Direction::Out) else {
                        return;
                    };
                    let len = port.queue(Direction::Out).len();
                    trace_ipcp!(
                        self,
                        now,
                        x,
                        "rmt",
                        "RMT_DEQ",
                        "port={label} dir=out len={len}"
                    );
                    let corruptible = pdu.qos_id() != QosId::MANAGEMENT;
                    let tx = self.links[l]
                        .link
                        .transmit(side, pdu.wire_bits(), now, corruptible);
                    self.links[l].in_transit += 1;
                    eng.schedule(
                        tx.arrive_at,
                        Event::LinkArrival {
                            link: l,
                            side: 1 - side,
                            pdu,
                            dropped: tx.dropped,
                        },
                    )
                    .expect("arrival is in the future");
                    eng.schedule(tx.tx_done, Event::LinkTxDone { link: l, side })
                        .expect("tx end is in the future");
                }
            }
            PortKey::Lower { ipcp: lower, port } => loop {
                let Some(q) = self.ipcps[x].ports.get_mut(&key) else {
                    return;
                };
                let Some(pdu) = q.dequeue(Direction::Out) else {
                    return;
                };
                let len = q.queue(Direction::Out).len();
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "rmt",
                    "RMT_DEQ",
                    "port={label} dir=out len={len}"
                );
                self.lower_send(eng, x, lower, port, pdu);
            },
        }
    }

    /// Writes an (N)-PDU as one SDU on the (N-1)-flow behind `port`.
    fn lower_send(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        lower: usize,
        port: crate::identifiers::PortId,
        pdu: Pdu,
    ) {
        let rank = self.ipcps[x].rank;
        let now = eng.now();
        let cep = self.ipcps[lower]
            .fais
            .values()
            .find(|f| f.rec.port_id == port && f.rec.state == FaiState::Allocated)
            .and_then(|f| f.cep);
        let sent = cep.and_then(|cep| {
            let rt = self.ipcps[lower].efcp.get_mut(&cep)?;
            rt.inst
                .dtp_send(&mux(&pdu), now)
                .ok()
                .map(|(id, outs)| (cep, id, outs))
        });
        match sent {
            Some((cep, sdu_id, outs)) => {
                self.carried.insert((lower, cep, sdu_id), rank);
                self.apply_efcp(eng, lower, cep, outs);
            }
            None => {
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "rmt",
                    "RMT_LOWER_LOSS",
                    "port={}:{port} dst={}",
                    self.ipcps[lower].name,
                    pdu.dst_addr
                );
                self.counter(rank).lower_losses += 1;
            }
        }
    }

    pub(crate) fn on_link_arrival(
        &mut self,
        eng: &mut Engine<Event>,
        l: usize,
        side: usize,
        pdu: Pdu,
        dropped: bool,
    ) {
        let now = eng.now();
        let y = self.links[l].ends[side];
        self.links[l].in_transit -= 1;
        if dropped {
            trace_ipcp!(
                self,
                now,
                y,
                "medium",
                "MEDIUM_DROP",
                "link={l} bits={} kind={}",
                pdu.wire_bits(),
                pdu.kind.as_str()
            );
            self.counter(0).medium_drops += 1;
            return;
        }
        self.links[l].link.note_delivered();
        let key = PortKey::Link(l);
        self.ensure_port(y, key);
        let port = self.ipcps[y].ports.get_mut(&key).unwrap();
        match port.rmt_enqueue(pdu, Direction::In) {
            Enqueued::Accepted { len } => {
                trace_ipcp!(
                    self,
                    now,
                    y,
                    "rmt",
                    "RMT_ENQ",
                    "port=link{l} dir=in len={len}"
                );
                // Input queues are served at once: the RMT has no processing delay.
                let port = self.ipcps[y].ports.get_mut(&key).unwrap();
                let pdu = port.dequeue(Direction::In).expect("just enqueued");
                let len = port.queue(Direction::In).len();
                trace_ipcp!(
                    self,
                    now,
                    y,
                    "rmt",
                    "RMT_DEQ",
                    "port=link{l} dir=in len={len}"
                );
                self.rmt_in(eng, y, pdu);
            }
            Enqueued::Dropped { len } => {
                trace_ipcp!(
                    self,
                    now,
                    y,
                    "rmt",
                    "RMT_QUEUE_DROP",
                    "port=link{l} dir=in len={len}"
                );
                self.counter(0).queue_drops += 1;
            }
        }
    }

    /// A PDU arrived from below: deliver it here or relay it.
    pub(crate) fn rmt_in(&mut self, eng: &mut Engine<Event>, x: usize, pdu: Pdu) {
        if pdu.dst_addr == self.ipcps[x].addr {
            self.rmt_local(eng, x, pdu);
            return;
        }
        if pdu.kind == PduKind::Mgmt {
            // A relay sets up carriers for a flow it will forward, before
            // forwarding the request that announces it.
            if let Ok(MgmtMessage {
                src,
                dst,
                body: MgmtBody::CreateFlowRequest { flow },
            }) = MgmtMessage::decode(&pdu.payload)
            {
                self.provision(eng, x, dst, flow.qos_id);
                self.provision(eng, x, src, flow.qos_id);
            }
        }
        self.rmt_out(eng, x, pdu, false);
    }

    fn rmt_local(&mut self, eng: &mut Engine<Event>, x: usize, pdu: Pdu) {
        let now = eng.now();
        let rank = self.ipcps[x].rank;
        self.counter(rank).delivered += 1;
        if pdu.kind == PduKind::Mgmt {
            match MgmtMessage::decode(&pdu.payload) {
                Ok(msg) => self.ribd_deliver(eng, x, msg),
                Err(_) => trace_ipcp!(
                    self,
                    now,
                    x,
                    "ribd",
                    "RIBD_DROP",
                    "src={} reason=undecodable",
                    pdu.src_addr
                ),
            }
            return;
        }
        let cep = pdu.connection_id.dst_cep;
        let conn = pdu.connection_id;
        let Some(rt) = self.ipcps[x].efcp.get_mut(&cep) else {
            trace_ipcp!(
                self,
                now,
                x,
                "efcp",
                "EFCP_STALE",
                "conn={conn} seq={} kind={}",
                pdu.seq,
                pdu.kind.as_str()
            );
            return;
        };
        let kind = pdu.kind;
        let seq = pdu.seq;
        let outs = match kind {
            PduKind::Ack => Ok(rt.inst.dtcp_on_ack(&pdu, now)),
            _ => rt.inst.dtp_receive(pdu, now),
        };
        trace_ipcp!(
            self,
            now,
            x,
            "efcp",
            "EFCP_RECV",
            "conn={conn} seq={seq} kind={}",
            kind.as_str()
        );
        match outs {
            Ok(outs) => self.apply_efcp(eng, x, cep, outs),
            Err(e) => {
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "efcp",
                    "EFCP_REJECT",
                    "conn={conn} seq={seq} reason={}",
                    e.to_string().replace(' ', "_")
                )
            }
        }
    }

    pub(crate) fn trace_efcp_tx(
        &mut self,
        now: SimTime,
        x: usize,
        _cep: CepId,
        pdu: &Pdu,
        retransmission: bool,
    ) {
        let ev = match (pdu.kind, retransmission) {
            (PduKind::Ack, _) => "EFCP_ACK",
            (_, true) => "EFCP_RTX",
            _ => "EFCP_SEND",
        };
        trace_ipcp!(
            self,
            now,
            x,
            "efcp",
            ev,
            "conn={} seq={} sdu={} len={}",
            pdu.connection_id,
            pdu.seq,
            pdu.sdu_id,
            pdu.payload.len()
        );
    }

    /// Turns EFCP actions into transmissions, deliveries and timers.
    pub(crate) fn apply_efcp(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        cep: CepId,
        outs: Vec<EfcpOutput>,
    ) {
        let now = eng.now();
        for out in outs {
            let Some(rt) = self.ipcps[x].efcp.get_mut(&cep) else {
                return;
            };
            let epoch = rt.epoch;
            match out {
                EfcpOutput::Transmit {
                    pdu,
                    retransmission,
                } => {
                    self.trace_efcp_tx(now, x, cep, &pdu, retransmission);
                    self.rmt_out(eng, x, pdu, true);
                }
                EfcpOutput::TransmitAt { at, pdu } => {
                    eng.schedule(
                        at,
                        Event::EfcpEmit {
                            ipcp: x,
                            cep,
                            epoch,
                            pdu,
                        },
                    )
                    .expect("rate limiter looks ahead");
                }
                EfcpOutput::Deliver { sdu, sdu_id } => self.deliver_up(eng, x, cep, sdu, sdu_id),
                EfcpOutput::ArmRto { seq, at } => {
                    let h = eng
                        .schedule(
                            at,
                            Event::EfcpRto {
                                ipcp: x,
                                cep,
                                epoch,
                                seq,
                            },
                        )
                        .expect("rto is in the future");
                    if let Some(old) = rt.rto.insert(seq, h) {
                        eng.cancel(old);
                    }
                }
                EfcpOutput::CancelRto { seq } => {
                    if let Some(h) = rt.rto.remove(&seq) {
                        eng.cancel(h);
                    }
                }
                EfcpOutput::ArmAck { at } => {
                    eng.schedule(
                        at,
                        Event::EfcpAck {
                            ipcp: x,
                            cep,
                            epoch,
                        },
                    )
                    .expect("ack timer is in the future");
                }
                EfcpOutput::ArmIdle { side, at } => {
                    let h = eng
                        .schedule(
                            at,
                            Event::EfcpIdle {
                                ipcp: x,
                                cep,
                                epoch,
                                side,
                            },
                        )
                        .expect("idle timer is in the future");
                    if let Some(old) = rt.idle[side.index()].replace(h) {
                        eng.cancel(old);
                    }
                }
                EfcpOutput::Opened { side, baseline } => {
                    let conn = rt.inst.connection_id();
                    trace_ipcp!(
                        self,
                        now,
                        x,
                        "efcp",
                        "EFCP_OPEN",
                        "conn={conn} seq={baseline} side={}",
                        side.as_str()
                    );
                }
                EfcpOutput::FlowError { seq } => {
                    let conn = rt.inst.connection_id();
                    trace_ipcp!(
                        self,
                        now,
                        x,
                        "efcp",
                        "EFCP_FLOW_ERROR",
                        "conn={conn} seq={seq}"
                    );
                    self.flow_errors += 1;
                }
            }
        }
    }

    /// Passes a reassembled SDU to whoever uses the flow: an application
    /// or the IPCP above.
    fn deliver_up(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        cep: CepId,
        sdu: Vec<u8>,
        sdu_id: u32,
    ) {
        let rt = &self.ipcps[x].efcp[&cep];
        let (fai, remote, remote_cep) =
            (rt.fai, rt.inst.remote_addr, rt.inst.connection_id().dst_cep);
        let Some(f) = self.ipcps[x].fais.get(&fai) else {
            return;
        };
        let (user, port) = (f.user, f.rec.port_id);
        match user {
            FlowUser::App(app) => self.app_deliver(eng, app, port, sdu),
            FlowUser::Ipcp { upper, .. } => {
                if let Some(&sender) = self.difs[self.ipcps[x].dif].by_addr.get(&remote) {
                    self.carried.remove(&(sender, remote_cep, sdu_id));
                }
                match demux(&sdu) {
                    Ok(pdu) => self.rmt_in(eng, upper, pdu),
                    Err(e) => trace_ipcp!(
                        self,
                        eng.now(),
                        upper,
                        "rmt",
                        "RMT_DECODE_DROP",
                        "reason={}",
                        e.to_string().replace(' ', "_")
                    ),
                }
            }
        }
    }

    pub(crate) fn on_efcp_idle(
        &mut self,
        eng: &mut Engine<Event>,
        x: usize,
        cep: CepId,
        side: Side,
    ) {
        let now = eng.now();
        let rt = self.ipcps[x].efcp.get_mut(&cep).unwrap();
        rt.idle[side.index()] = None;
        let open = match side {
            Side::Sender => rt.inst.sv.sender.is_some(),
            Side::Receiver => rt.inst.sv.receiver.is_some(),
        };
        if !open {
            return;
        }
        let (fai, conn) = (rt.fai, rt.inst.connection_id());
        match rt.inst.check_state_discard(side, now) {
            StateDiscard::Discard => {
                let port = self.ipcps[x].fais.get(&fai).map_or(0, |f| f.rec.port_id.0);
                trace_ipcp!(
                    self,
                    now,
                    x,
                    "efcp",
                    "EFCP_STATE_DISCARD",
                    "conn={conn} seq=0 side={} port={port}",
                    side.as_str()
                );
            }
            StateDiscard::Keep { recheck_at } => {
                let epoch = rt.epoch;
                let h = eng
                    .schedule(
                        recheck_at.max(now),
                        Event::EfcpIdle {
                            ipcp: x,
                            cep,
                            epoch,
                            side,
                        },
                    )
                    .unwrap();
                rt.idle[side.index()] = Some(h);
            }
        }
    }

    pub(crate) fn efcp_policy(&self, x: usize, qos: QosId) -> EfcpPolicy {
        let spec = &self.difs[self.ipcps[x].dif].spec;
        let cube = self.cubes.iter().find(|c| c.id == qos);
        EfcpPolicy {
            reliable: cube.is_some_and(|c| c.reliable),
            ordered: cube.is_some_and(|c| c.ordered),
            rto: spec.rto(),
            max_pdu_payload: spec.max_pdu_payload_bytes,
            rate_bps: cube.and_then(|c| c.avg_bandwidth),
            delta: spec.delta(),
        }
    }

    pub(crate) fn spawn_efcp(
        &mut self,
        x: usize,
        cep: CepId,
        fai: crate::flow_alloc::FaiId,
        inst: crate::efcp::EfcpInstance,
    ) {
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        self.ipcps[x].efcp.insert(
            cep,
            EfcpRt {
                inst,
                fai,
                epoch,
                rto: Default::default(),
                idle: [None, None],
            },
        );
    }

    pub(crate) fn remove_efcp(&mut self, eng: &mut Engine<Event>, x: usize, cep: CepId) {
        let Some(rt) = self.ipcps[x].efcp.remove(&cep) else {
            return;
        };
        for h in rt.rto.into_values().chain(rt.idle.into_iter().flatten()) {
            eng.cancel(h);
        }
        self.retired_retx += rt.inst.stats.retransmissions;
        self.ipcps[x].ceps.release(cep);
        trace_ipcp!(
            self,
            eng.now(),
            x,
            "efcp",
            "EFCP_REMOVE",
            "conn={} seq=0",
            rt.inst.connection_id()
        );
    }
}
