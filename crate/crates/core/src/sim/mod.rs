//! The network simulator: builds node stacks from a scenario and drives
//! every component from one deterministic event queue.
//!
//! All IPCPs, links and applications live in flat arenas and refer to each
//! other by index. Intra-node bindings (application to IRM to FA, and an
//! IPCP to the one beneath it) are plain calls at the current timestamp.

/// Emits one trace line for an IPCP component, skipping all formatting
/// when tracing is off.
macro_rules! trace_ipcp {
    ($net:expr, $t:expr, $ipcp:expr, $part:expr, $ev:expr, $($arg:tt)*) => {
        if $net.tracer.enabled() {
            let ip = &$net.ipcps[$ipcp];
            let comp = format!("{}/{}", ip.name, $part);
            $net.tracer.emit($t, &$net.nodes[ip.node].name, &comp, $ev, format_args!($($arg)*));
        }
    };
}

macro_rules! trace_app {
    ($net:expr, $t:expr, $app:expr, $ev:expr, $($arg:tt)*) => {
        if $net.tracer.enabled() {
            let a = &$net.apps[$app];
            let comp = format!("{}/ae", a.apn);
            $net.tracer.emit($t, &$net.nodes[a.node].name, &comp, $ev, format_args!($($arg)*));
        }
    };
}

mod apps;
mod control;
mod data;

use std::collections::{BTreeMap, BTreeSet};

use crate::daf::{DaDirectory, IrmTable, PingConfig, PingInitiator, PingResponder, PingSample};
use crate::efcp::{EfcpInstance, Pdu, Side};
use crate::engine::{Engine, EventHandle, RngStreams, SimDuration, SimTime};
use crate::flow_alloc::{FaiId, FaiRecord, RaState};
use crate::identifiers::{Address, Apn, CepId, CepIdSpace, PortId, PortIdSpace, QosCube, QosId};
use crate::medium::{Link, LinkId, LinkParams};
use crate::mgmt::{EnrollmentFsm, RoutingState};
use crate::rmt::{ForwardingTable, RmtPort};
use crate::scenario::{AppRole, Scenario};
use crate::trace::Tracer;

/// Ports of an IPCP's RMT: a link end at rank 0, or an (N-1)-flow
/// provided by an IPCP underneath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum PortKey {
    Link(usize),
    Lower { ipcp: usize, port: PortId },
}

/// Work parked until an (N-1)-flow becomes usable.
#[derive(Debug, Clone)]
pub(crate) enum Cont {
    Forward(Pdu),
    Enroll(Address),
    /// Nothing to resume: the flow was set up ahead of traffic.
    Provision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Via {
    Link(usize),
    Lower { lower: usize, peer_ipcp: usize },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Neighbor {
    pub metric: u32,
    pub via: Via,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FlowUser {
    App(usize),
    /// An (N-1)-flow serving `upper`, whose RA knows it by (`peer`, `qos`).
    Ipcp {
        upper: usize,
        peer: Address,
        qos: QosId,
    },
}

#[derive(Debug)]
pub(crate) struct FaiRt {
    pub rec: FaiRecord,
    pub user: FlowUser,
    pub cep: Option<CepId>,
    pub dst_addr: Address,
    pub timeout: Option<EventHandle>,
}

#[derive(Debug)]
pub(crate) struct EfcpRt {
    pub inst: EfcpInstance,
    pub fai: FaiId,
    pub epoch: u64,
    pub rto: BTreeMap<u64, EventHandle>,
    pub idle: [Option<EventHandle>; 2],
}

#[derive(Debug)]
pub(crate) struct DifRt {
    pub name: String,
    pub rank: u8,
    pub spec: crate::scenario::DifSpec,
    pub members: Vec<usize>,
    /// APNs reachable in this DIF: member IPCPs' upper users and
    /// applications from the directory.
    pub apns: BTreeMap<Apn, Address>,
    pub by_addr: BTreeMap<Address, usize>,
}

#[derive(Debug)]
pub(crate) struct IpcpRt {
    pub name: String,
    pub apn: Apn,
    pub node: usize,
    pub dif: usize,
    pub rank: u8,
    pub addr: Address,
    pub auth: String,
    pub under: Vec<usize>,
    pub neighbors: BTreeMap<Address, Neighbor>,
    pub ports: BTreeMap<PortKey, RmtPort>,
    pub ra: RaState<PortKey, Cont>,
    pub fwd: ForwardingTable<Address>,
    pub routing: RoutingState,
    pub enroll: BTreeMap<Address, EnrollmentFsm>,
    pub enroll_timers: BTreeMap<Address, EventHandle>,
    pub adjacent: BTreeSet<Address>,
    pub joined: bool,
    pub ceps: CepIdSpace,
    pub efcp: BTreeMap<CepId, EfcpRt>,
    pub fais: BTreeMap<FaiId, FaiRt>,
    pub next_fai: u32,
    pub awaiting: Vec<FaiId>,
}

#[derive(Debug)]
pub(crate) struct NodeRt {
    pub name: String,
    pub ports: PortIdSpace,
    pub irm: IrmTable,
    pub ipcps: Vec<usize>,
}

#[derive(Debug)]
pub(crate) struct LinkRt {
    pub link: Link,
    pub ends: [usize; 2],
    pub in_transit: usize,
}

#[derive(Debug)]
pub(crate) enum AppKind {
    Initiator(PingInitiator),
    Responder(PingResponder),
}

#[derive(Debug)]
pub(crate) struct AppRt {
    pub apn: Apn,
    pub node: usize,
    pub accept: bool,
    pub start: SimTime,
    pub kind: AppKind,
}

/// Per-rank PDU accounting. At quiescence
/// `originated = delivered + medium_drops + queue_drops + no_route + lower_losses`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RankCounters {
    pub originated: u64,
    pub delivered: u64,
    pub medium_drops: u64,
    pub queue_drops: u64,
    pub no_route: u64,
    pub lower_losses: u64,
}

impl RankCounters {
    pub fn accounted(&self) -> u64 {
        self.delivered + self.medium_drops + self.queue_drops + self.no_route + self.lower_losses
    }

    pub fn reconciles(&self) -> bool {
        self.originated == self.accounted()
    }
}

/// Resources still held by application flows after a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LeakReport {
    pub app_efcp_instances: usize,
    pub app_fais: usize,
    pub irm_entries: usize,
    /// Port-ids allocated but not held by any live flow allocator instance.
    pub stray_port_ids: usize,
    /// CEP-ids allocated but not held by any EFCP instance.
    pub stray_cep_ids: usize,
    /// Infrastructure flows (management and (N-1) carriers), kept on purpose.
    pub infrastructure_flows: usize,
}

impl LeakReport {
    pub fn clean(&self) -> bool {
        self.app_efcp_instances == 0
            && self.app_fais == 0
            && self.irm_entries == 0
            && self.stray_port_ids == 0
            && self.stray_cep_ids == 0
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub end_time: SimTime,
    pub events: u64,
    pub pending_events: usize,
    pub flows_allocated: u64,
    pub flows_deallocated: u64,
    pub allocation_failures: u64,
    pub flow_errors: u64,
    pub links_in_transit: usize,
    pub per_rank: BTreeMap<u8, RankCounters>,
    pub leak: LeakReport,
}

impl RunSummary {
    pub fn counters_reconcile(&self) -> bool {
        self.per_rank.values().all(RankCounters::reconciles)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "scenario {} seed {} ended at {} ns after {} events\n\
             flows: {} allocated, {} deallocated, {} failed; flow errors: {}\n",
            self.scenario,
            self.seed,
            self.end_time.as_nanos(),
            self.events,
            self.flows_allocated,
            self.flows_deallocated,
            self.allocation_failures,
            self.flow_errors
        );
        for (rank, c) in &self.per_rank {
            s.push_str(&format!(
                "rank {rank}: sent {} delivered {} medium-drop {} queue-drop {} no-route {} lower-loss {} ({})\n",
                c.originated,
                c.delivered,
                c.medium_drops,
                c.queue_drops,
                c.no_route,
                c.lower_losses,
                if c.reconciles() { "reconciled" } else { "MISMATCH" }
            ));
        }
        let l = &self.leak;
        s.push_str(&format!(
            "leak check: {} (efcp {}, fai {}, irm {}, ports {}, ceps {}; {} infrastructure flows kept)\n",
            if l.clean() { "clean" } else { "LEAK" },
            l.app_efcp_instances,
            l.app_fais,
            l.irm_entries,
            l.stray_port_ids,
            l.stray_cep_ids,
            l.infrastructure_flows
        ));
        s
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Event {
    LinkArrival {
        link: usize,
        side: usize,
        pdu: Pdu,
        dropped: bool,
    },
    LinkTxDone {
        link: usize,
        side: usize,
    },
    EfcpEmit {
        ipcp: usize,
        cep: CepId,
        epoch: u64,
        pdu: Pdu,
    },
    EfcpRto {
        ipcp: usize,
        cep: CepId,
        epoch: u64,
        seq: u64,
    },
    EfcpAck {
        ipcp: usize,
        cep: CepId,
        epoch: u64,
    },
    EfcpIdle {
        ipcp: usize,
        cep: CepId,
        epoch: u64,
        side: Side,
    },
    AllocTimeout {
        ipcp: usize,
        fai: FaiId,
    },
    EnrollTimeout {
        ipcp: usize,
        peer: Address,
    },
    Join {
        ipcp: usize,
    },
    AppStart {
        app: usize,
    },
    AppTick {
        app: usize,
    },
    AppFinal {
        app: usize,
    },
}

pub(crate) struct Network {
    pub scenario_name: String,
    pub seed: u64,
    pub cubes: Vec<QosCube>,
    pub difs: Vec<DifRt>,
    pub nodes: Vec<NodeRt>,
    pub ipcps: Vec<IpcpRt>,
    pub links: Vec<LinkRt>,
    pub apps: Vec<AppRt>,
    pub directory: DaDirectory,
    pub tracer: Tracer,
    pub counters: BTreeMap<u8, RankCounters>,
    /// (N)-PDUs handed to an (N-1)-flow and not yet out the far end, keyed by
    /// (carrying IPCP, its CEP-id, SDU id) and valued by the (N) rank.
    pub carried: BTreeMap<(usize, CepId, u32), u8>,
    pub next_epoch: u64,
    pub flows_allocated: u64,
    pub flows_deallocated: u64,
    pub allocation_failures: u64,
    pub flow_errors: u64,
    /// Retransmissions of EFCP instances already removed.
    pub retired_retx: u64,
    /// Time of the last processed event.
    pub clock: SimTime,
    pub ipcp_by_name: BTreeMap<String, usize>,
}

/// A built network plus its event queue.
pub struct Simulation {
    engine: Engine<Event>,
    net: Network,
    stop: SimTime,
}

impl Simulation {
    /// Instantiates every node stack. The scenario must already be valid.
    pub fn build(scenario: &Scenario, trace: bool) -> Self {
        Self::build_with_seed(scenario, scenario.seed, trace)
    }

    pub fn build_with_seed(scenario: &Scenario, seed: u64, trace: bool) -> Self {
        let net = Network::build(scenario, seed, trace);
        let mut engine = Engine::new();
        for (i, ip) in net.ipcps.iter().enumerate() {
            if net.difs[ip.dif].spec.eager_enrollment {
                engine
                    .schedule(SimTime::ZERO, Event::Join { ipcp: i })
                    .unwrap();
            }
        }
        for (i, app) in net.apps.iter().enumerate() {
            if matches!(app.kind, AppKind::Initiator(_)) {
                engine
                    .schedule(app.start, Event::AppStart { app: i })
                    .unwrap();
            }
        }
        Simulation {
            engine,
            net,
            stop: SimTime::from_secs_f64(scenario.stop_time_s),
        }
    }

    pub fn set_stop(&mut self, stop: SimTime) {
        self.stop = stop;
    }

    pub fn now(&self) -> SimTime {
        self.engine.now()
    }

    /// Time of the last event processed so far.
    pub fn last_event_time(&self) -> SimTime {
        self.net.clock
    }

    /// Runs to the stop time (or until no events remain).
    pub fn run(&mut self) -> RunSummary {
        let stop = self.stop;
        self.run_until(stop);
        self.summary()
    }

    pub fn run_until(&mut self, t: SimTime) {
        let net = &mut self.net;
        self.engine.run_until(t, |eng, ev| net.handle(eng, ev));
    }

    pub fn trace(&self) -> &str {
        self.net.tracer.text()
    }

    pub fn into_trace(self) -> String {
        self.net.tracer.into_text()
    }

    /// Samples of every ping initiator, in app declaration order.
    pub fn samples(&self) -> Vec<PingSample> {
        self.net
            .apps
            .iter()
            .filter_map(|a| match &a.kind {
                AppKind::Initiator(p) => Some(p.samples.clone()),
                AppKind::Responder(_) => None,
            })
            .flatten()
            .collect()
    }

    /// Sequence numbers each responder saw, by APN.
    pub fn responder_log(&self) -> BTreeMap<String, Vec<u64>> {
        self.net
            .apps
            .iter()
            .filter_map(|a| match &a.kind {
                AppKind::Responder(r) => Some((a.apn.to_string(), r.received.clone())),
                AppKind::Initiator(_) => None,
            })
            .collect()
    }

    /// Installed next hops of one IPCP, by destination address.
    pub fn next_hops(&self, ipcp: &str) -> Option<BTreeMap<Address, Address>> {
        let i = *self.net.ipcp_by_name.get(ipcp)?;
        Some(
            self.net.ipcps[i]
                .routing
                .routes()
                .iter()
                .map(|(d, r)| (*d, r.next_hop))
                .collect(),
        )
    }

    /// Sum of retransmissions over every EFCP instance still alive plus
    /// those already removed.
    pub fn retransmissions(&self) -> u64 {
        self.net.retransmissions()
    }

    pub fn summary(&self) -> RunSummary {
        let net = &self.net;
        RunSummary {
            scenario: net.scenario_name.clone(),
            seed: net.seed,
            end_time: net.clock,
            events: self.engine.processed(),
            pending_events: self.engine.pending(),
            flows_allocated: net.flows_allocated,
            flows_deallocated: net.flows_deallocated,
            allocation_failures: net.allocation_failures,
            flow_errors: net.flow_errors,
            links_in_transit: net.links.iter().map(|l| l.in_transit).sum(),
            per_rank: net.rank_counters(),
            leak: net.leak_check(),
        }
    }
}

impl Network {
    fn build(sc: &Scenario, seed: u64, trace: bool) -> Self {
        let rng = RngStreams::new(seed);
        let mut difs: Vec<DifRt> = sc
            .difs
            .iter()
            .map(|d| DifRt {
                name: d.name.clone(),
                rank: d.rank,
                spec: d.clone(),
                members: Vec::new(),
                apns: BTreeMap::new(),
                by_addr: BTreeMap::new(),
            })
            .collect();
        let dif_idx: BTreeMap<&str, usize> = sc
            .difs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.name.as_str(), i))
            .collect();

        let mut nodes = Vec::new();
        let mut ipcps: Vec<IpcpRt> = Vec::new();
        let mut ipcp_by_name = BTreeMap::new();
        for (ni, n) in sc.nodes.iter().enumerate() {
            let mut list = Vec::new();
            for ip in &n.ipcps {
                let di = dif_idx[ip.dif.as_str()];
                let idx = ipcps.len();
                let addr = Address(ip.address);
                difs[di].members.push(idx);
                difs[di].by_addr.insert(addr, idx);
                ipcp_by_name.insert(ip.name.clone(), idx);
                list.push(idx);
                ipcps.push(IpcpRt {
                    name: ip.name.clone(),
                    apn: Apn::new(ip.name.clone()),
                    node: ni,
                    dif: di,
                    rank: difs[di].rank,
                    addr,
                    auth: ip
                        .auth
                        .clone()
                        .unwrap_or_else(|| difs[di].spec.auth.clone()),
                    under: Vec::new(),
                    neighbors: BTreeMap::new(),
                    ports: BTreeMap::new(),
                    ra: RaState::default(),
                    fwd: ForwardingTable::new(),
                    routing: RoutingState::new(addr),
                    enroll: BTreeMap::new(),
                    enroll_timers: BTreeMap::new(),
                    adjacent: BTreeSet::new(),
                    joined: false,
                    ceps: CepIdSpace::default(),
                    efcp: BTreeMap::new(),
                    fais: BTreeMap::new(),
                    next_fai: 1,
                    awaiting: Vec::new(),
                });
            }
            nodes.push(NodeRt {
                name: n.name.clone(),
                ports: PortIdSpace::new(u32::from(u16::MAX)),
                irm: IrmTable::default(),
                ipcps: list,
            });
        }
        for (n, ip) in sc.ipcps() {
            let idx = ipcp_by_name[&ip.name];
            let under: Vec<usize> = sc.under_of(n, ip).iter().map(|u| ipcp_by_name[u]).collect();
            for &l in &under {
                // The upper IPCP is reachable by name in each DIF it sits on.
                let (ldif, laddr) = (ipcps[l].dif, ipcps[l].addr);
                difs[ldif].apns.insert(ipcps[idx].apn.clone(), laddr);
            }
            ipcps[idx].under = under;
        }

        let mut links = Vec::new();
        for (li, l) in sc.links.iter().enumerate() {
            let (a, b) = (ipcp_by_name[&l.a], ipcp_by_name[&l.b]);
            let params = LinkParams {
                rate_bps: l.rate_bps,
                delay: SimDuration::from_millis_f64(l.delay_ms),
                ber: l.ber,
            };
            links.push(LinkRt {
                link: Link::new(LinkId(li), params, rng.stream(li as u64)),
                ends: [a, b],
                in_transit: 0,
            });
            for (x, y) in [(a, b), (b, a)] {
                let peer = ipcps[y].addr;
                ipcps[x].neighbors.entry(peer).or_insert(Neighbor {
                    metric: l.metric,
                    via: Via::Link(li),
                });
            }
        }
        // Upper neighbours: IPCPs of one DIF whose stacks share a lower DIF.
        for x in 0..ipcps.len() {
            if ipcps[x].rank == 0 {
                continue;
            }
            let members = difs[ipcps[x].dif].members.clone();
            for y in members {
                if y == x || ipcps[y].node == ipcps[x].node {
                    continue;
                }
                let shared = ipcps[x].under.iter().find_map(|&lx| {
                    ipcps[y]
                        .under
                        .iter()
                        .find(|&&ly| ipcps[ly].dif == ipcps[lx].dif)
                        .map(|&ly| (lx, ly))
                });
                if let Some((lx, ly)) = shared {
                    let peer = ipcps[y].addr;
                    ipcps[x].neighbors.insert(
                        peer,
                        Neighbor {
                            metric: 1,
                            via: Via::Lower {
                                lower: lx,
                                peer_ipcp: ly,
                            },
                        },
                    );
                }
            }
        }

        let mut directory = DaDirectory::default();
        for d in &sc.directory {
            let apn = Apn::parse(&d.apn).unwrap_or_else(|| Apn::new(d.apn.clone()));
            directory.register(
                apn.clone(),
                crate::identifiers::Dan(d.dif.clone()),
                d.node.clone(),
            );
            let di = dif_idx[d.dif.as_str()];
            let node = sc.nodes.iter().position(|n| n.name == d.node).unwrap();
            if let Some(&ip) = nodes[node].ipcps.iter().find(|&&i| ipcps[i].dif == di) {
                difs[di].apns.insert(apn, ipcps[ip].addr);
            }
        }

        let apps = sc
            .apps
            .iter()
            .map(|a| {
                let node = sc.nodes.iter().position(|n| n.name == a.node).unwrap();
                let kind = match a.role {
                    AppRole::PingInitiator => AppKind::Initiator(PingInitiator::new(PingConfig {
                        dst: Apn::parse(a.dst.as_deref().unwrap_or_default())
                            .unwrap_or_else(|| Apn::new("")),
                        count: a.count,
                        interval: SimDuration::from_millis_f64(a.interval_ms),
                        payload_bytes: a.payload_bytes,
                        qos: a.qos(),
                        final_timeout: SimDuration::from_millis_f64(a.timeout_ms),
                    })),
                    AppRole::PingResponder => AppKind::Responder(PingResponder::default()),
                };
                AppRt {
                    apn: a.apn(),
                    node,
                    accept: a.accept,
                    start: SimTime::ZERO + SimDuration::from_millis_f64(a.start_ms),
                    kind,
                }
            })
            .collect();

        let mut cubes = vec![QosCube::management()];
        cubes.extend(sc.cubes());
        Network {
            scenario_name: sc.name.clone(),
            seed,
            cubes,
            difs,
            nodes,
            ipcps,
            links,
            apps,
            directory,
            tracer: Tracer::new(trace),
            counters: BTreeMap::new(),
            carried: BTreeMap::new(),
            next_epoch: 1,
            flows_allocated: 0,
            flows_deallocated: 0,
            allocation_failures: 0,
            flow_errors: 0,
            retired_retx: 0,
            clock: SimTime::ZERO,
            ipcp_by_name,
        }
    }

    pub(crate) fn handle(&mut self, eng: &mut Engine<Event>, ev: Event) {
        self.clock = eng.now();
        match ev {
            Event::LinkArrival {
                link,
                side,
                pdu,
                dropped,
            } => self.on_link_arrival(eng, link, side, pdu, dropped),
            Event::LinkTxDone { link, side } => {
                let x = self.links[link].ends[side];
                self.drain_out(eng, x, PortKey::Link(link));
            }
            Event::EfcpEmit {
                ipcp,
                cep,
                epoch,
                pdu,
            } => {
                if self.efcp_alive(ipcp, cep, epoch) {
                    self.trace_efcp_tx(eng.now(), ipcp, cep, &pdu, false);
                    self.rmt_out(eng, ipcp, pdu, true);
                }
            }
            Event::EfcpRto {
                ipcp,
                cep,
                epoch,
                seq,
            } => {
                if self.efcp_alive(ipcp, cep, epoch) {
                    let now = eng.now();
                    let rt = self.ipcps[ipcp].efcp.get_mut(&cep).unwrap();
                    rt.rto.remove(&seq);
                    let outs = rt.inst.dtcp_on_rto(seq, now);
                    self.apply_efcp(eng, ipcp, cep, outs);
                }
            }
            Event::EfcpAck { ipcp, cep, epoch } => {
                if self.efcp_alive(ipcp, cep, epoch) {
                    let outs = self.ipcps[ipcp]
                        .efcp
                        .get_mut(&cep)
                        .unwrap()
                        .inst
                        .on_ack_timer();
                    self.apply_efcp(eng, ipcp, cep, outs);
                }
            }
            Event::EfcpIdle {
                ipcp,
                cep,
                epoch,
                side,
            } => {
                if self.efcp_alive(ipcp, cep, epoch) {
                    self.on_efcp_idle(eng, ipcp, cep, side);
                }
            }
            Event::AllocTimeout { ipcp, fai } => self.on_alloc_timeout(eng, ipcp, fai),
            Event::EnrollTimeout { ipcp, peer } => self.on_enroll_timeout(eng, ipcp, peer),
            Event::Join { ipcp } => self.join(eng, ipcp),
            Event::AppStart { app } => self.app_start(eng, app),
            Event::AppTick { app } => self.app_tick(eng, app),
            Event::AppFinal { app } => self.app_final(eng, app),
        }
    }

    fn efcp_alive(&self, ipcp: usize, cep: CepId, epoch: u64) -> bool {
        self.ipcps[ipcp]
            .efcp
            .get(&cep)
            .is_some_and(|rt| rt.epoch == epoch)
    }

    pub(crate) fn counter(&mut self, rank: u8) -> &mut RankCounters {
        self.counters.entry(rank).or_default()
    }

    fn rank_counters(&self) -> BTreeMap<u8, RankCounters> {
        let mut out = self.counters.clone();
        for rank in self.carried.values() {
            out.entry(*rank).or_default().lower_losses += 1;
        }
        out
    }

    fn retransmissions(&self) -> u64 {
        self.ipcps
            .iter()
            .flat_map(|ip| ip.efcp.values())
            .map(|rt| rt.inst.stats.retransmissions)
            .sum::<u64>()
            + self.retired_retx
    }

    fn leak_check(&self) -> LeakReport {
        let mut r = LeakReport::default();
        for ip in &self.ipcps {
            for f in ip.fais.values() {
                match f.user {
                    FlowUser::App(_) => r.app_fais += 1,
                    FlowUser::Ipcp { .. } => r.infrastructure_flows += 1,
                }
            }
            for rt in ip.efcp.values() {
                if ip
                    .fais
                    .get(&rt.fai)
                    .is_none_or(|f| matches!(f.user, FlowUser::App(_)))
                {
                    r.app_efcp_instances += 1;
                }
            }
            r.stray_cep_ids += ip
                .ceps
                .live()
                .iter()
                .filter(|c| !ip.efcp.contains_key(c))
                .count();
        }
        for n in &self.nodes {
            r.irm_entries += n.irm.len();
            let held: BTreeSet<PortId> = n
                .ipcps
                .iter()
                .flat_map(|&i| self.ipcps[i].fais.values())
                .map(|f| f.rec.port_id)
                .collect();
            r.stray_port_ids += n.ports.live().iter().filter(|p| !held.contains(p)).count();
        }
        r
    }
}
