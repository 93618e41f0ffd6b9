//! Application side of a node: the DIF allocator directory, the IPC
//! resource manager's flow table, and the ping application.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{SimDuration, SimTime};
use crate::flow_alloc::FaError;
use crate::identifiers::{Apn, Dan, PortId, QosRequirements};

/// APN placements: which DIFs (and on which node) an application is
/// reachable through. Static for a run.
#[derive(Debug, Clone, Default)]
pub struct DaDirectory {
    entries: BTreeMap<Apn, Vec<(Dan, String)>>,
}

impl DaDirectory {
    pub fn register(&mut self, apn: Apn, dif: Dan, node: impl Into<String>) {
        self.entries
            .entry(apn)
            .or_default()
            .push((dif, node.into()));
    }

    pub fn placements(&self, apn: &Apn) -> &[(Dan, String)] {
        self.entries.get(apn).map_or(&[], |v| v.as_slice())
    }

    pub fn contains(&self, apn: &Apn) -> bool {
        self.entries.contains_key(apn)
    }
}

/// DIFs hosting `dst`, in declaration order; empty when unknown.
pub fn da_lookup(dst: &Apn, directory: &DaDirectory) -> Vec<Dan> {
    directory
        .placements(dst)
        .iter()
        .map(|(d, _)| d.clone())
        .collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrmError {
    #[error("allocation failed: {0}")]
    AllocationFailed(FaError),
    #[error("no flow on port {0}")]
    NoSuchFlow(PortId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowStatus {
    Pending,
    Allocated,
    Releasing,
}

impl FlowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowStatus::Pending => "pending",
            FlowStatus::Allocated => "allocated",
            FlowStatus::Releasing => "releasing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrmEntry {
    /// Index of the application entity using the flow.
    pub app: usize,
    /// IPCP serving the flow.
    pub ipcp: usize,
    pub remote: Apn,
    pub status: FlowStatus,
}

/// Every application-visible flow on a node, keyed by its port-id.
#[derive(Debug, Clone, Default)]
pub struct IrmTable {
    entries: BTreeMap<PortId, IrmEntry>,
}

impl IrmTable {
    pub fn insert(&mut self, port: PortId, entry: IrmEntry) {
        let prev = self.entries.insert(port, entry);
        debug_assert!(prev.is_none(), "port {port} registered twice");
    }

    pub fn get(&self, port: PortId) -> Option<&IrmEntry> {
        self.entries.get(&port)
    }

    pub fn set_status(&mut self, port: PortId, status: FlowStatus) -> Result<(), IrmError> {
        self.entries
            .get_mut(&port)
            .map(|e| e.status = status)
            .ok_or(IrmError::NoSuchFlow(port))
    }

    pub fn remove(&mut self, port: PortId) -> Option<IrmEntry> {
        self.entries.remove(&port)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PortId, &IrmEntry)> {
        self.entries.iter()
    }
}

/// The generic operations an application message may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppOp {
    Read,
    Write,
    Start,
    Stop,
    Create,
    Delete,
}

impl AppOp {
    fn code(self) -> u8 {
        match self {
            AppOp::Read => 1,
            AppOp::Write => 2,
            AppOp::Start => 3,
            AppOp::Stop => 4,
            AppOp::Create => 5,
            AppOp::Delete => 6,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            1 => AppOp::Read,
            2 => AppOp::Write,
            3 => AppOp::Start,
            4 => AppOp::Stop,
            5 => AppOp::Create,
            6 => AppOp::Delete,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AppOp::Read => "read",
            AppOp::Write => "write",
            AppOp::Start => "start",
            AppOp::Stop => "stop",
            AppOp::Create => "create",
            AppOp::Delete => "delete",
        }
    }
}

pub const PING_HEADER_LEN: usize = 25;

/// Ping message: op, seq, the initiator's send time and (on the echo) the
/// responder's receive time, then padding up to the configured payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PingMessage {
    pub op: AppOp,
    pub seq: u64,
    pub sent_at: SimTime,
    pub responder_recv: SimTime,
    pub payload_len: usize,
}

impl PingMessage {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PING_HEADER_LEN + self.payload_len);
        out.push(self.op.code());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.sent_at.as_nanos().to_be_bytes());
        out.extend_from_slice(&self.responder_recv.as_nanos().to_be_bytes());
        out.resize(PING_HEADER_LEN + self.payload_len, 0);
        out
    }

    pub fn decode(buf: &[u8]) -> Option<Self> {
        if buf.len() < PING_HEADER_LEN {
            return None;
        }
        let u64_at = |i: usize| u64::from_be_bytes(buf[i..i + 8].try_into().unwrap());
        Some(PingMessage {
            op: AppOp::from_code(buf[0])?,
            seq: u64_at(1),
            sent_at: SimTime::from_nanos(u64_at(9)),
            responder_recv: SimTime::from_nanos(u64_at(17)),
            payload_len: buf.len() - PING_HEADER_LEN,
        })
    }

    /// The responder's echo: same size, its receive time filled in.
    pub fn echo(&self, now: SimTime) -> Self {
        PingMessage {
            responder_recv: now,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PingSample {
    pub seq: u64,
    pub send_time: SimTime,
    pub recv_time: Option<SimTime>,
    pub response_time: Option<SimTime>,
}

impl PingSample {
    pub fn one_way(&self) -> Option<SimDuration> {
        self.recv_time.map(|r| r - self.send_time)
    }

    pub fn rtt(&self) -> Option<SimDuration> {
        self.response_time.map(|r| r - self.send_time)
    }

    pub fn lost(&self) -> bool {
        self.response_time.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingConfig {
    pub dst: Apn,
    pub count: u64,
    pub interval: SimDuration,
    pub payload_bytes: usize,
    pub qos: QosRequirements,
    /// How long to wait for outstanding responses after the last request.
    pub final_timeout: SimDuration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PingPhase {
    Allocating,
    Running,
    Released,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppAction {
    Write(Vec<u8>),
    ScheduleTick(SimTime),
    ScheduleFinal(SimTime),
    /// Application-level release (a stop write) followed by deallocation.
    Release,
}

/// Initiator side of the ping exchange.
#[derive(Debug, Clone)]
pub struct PingInitiator {
    pub cfg: PingConfig,
    pub phase: PingPhase,
    pub port: Option<PortId>,
    pub samples: Vec<PingSample>,
    index: BTreeMap<u64, usize>,
}

impl PingInitiator {
    pub fn new(cfg: PingConfig) -> Self {
        PingInitiator {
            cfg,
            phase: PingPhase::Allocating,
            port: None,
            samples: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn on_allocated(&mut self, port: PortId, now: SimTime) -> Vec<AppAction> {
        self.port = Some(port);
        self.phase = PingPhase::Running;
        if self.cfg.count == 0 {
            return self.release();
        }
        self.on_tick(now)
    }

    pub fn on_failed(&mut self) {
        self.phase = PingPhase::Failed;
    }

    /// Sends the next request and schedules the one after, or the final
    /// timeout once all requests are out.
    pub fn on_tick(&mut self, now: SimTime) -> Vec<AppAction> {
        if self.phase != PingPhase::Running || self.samples.len() as u64 >= self.cfg.count {
            return Vec::new();
        }
        let seq = self.samples.len() as u64;
        self.index.insert(seq, self.samples.len());
        self.samples.push(PingSample {
            seq,
            send_time: now,
            recv_time: None,
            response_time: None,
        });
        let msg = PingMessage {
            op: AppOp::Write,
            seq,
            sent_at: now,
            responder_recv: SimTime::ZERO,
            payload_len: self.cfg.payload_bytes,
        };
        let next = if seq + 1 < self.cfg.count {
            AppAction::ScheduleTick(now + self.cfg.interval)
        } else {
            AppAction::ScheduleFinal(now + self.cfg.final_timeout)
        };
        vec![AppAction::Write(msg.encode()), next]
    }

    pub fn on_sdu(&mut self, sdu: &[u8], now: SimTime) -> Vec<AppAction> {
        let Some(msg) = PingMessage::decode(sdu) else {
            return Vec::new();
        };
        if msg.op != AppOp::Write || self.phase != PingPhase::Running {
            return Vec::new();
        }
        if let Some(&i) = self.index.get(&msg.seq) {
            let s = &mut self.samples[i];
            if s.response_time.is_none() {
                s.recv_time = Some(msg.responder_recv);
                s.response_time = Some(now);
            }
        }
        let all_sent = self.samples.len() as u64 == self.cfg.count;
        if all_sent && self.samples.iter().all(|s| !s.lost()) {
            return self.release();
        }
        Vec::new()
    }

    /// Final timeout: whatever is still missing is lost.
    pub fn on_final(&mut self) -> Vec<AppAction> {
        if self.phase == PingPhase::Running {
            self.release()
        } else {
            Vec::new()
        }
    }

    fn release(&mut self) -> Vec<AppAction> {
        self.phase = PingPhase::Released;
        vec![AppAction::Release]
    }

    pub fn stop_message(&self) -> Vec<u8> {
        PingMessage {
            op: AppOp::Stop,
            seq: self.samples.len() as u64,
            sent_at: SimTime::ZERO,
            responder_recv: SimTime::ZERO,
            payload_len: 0,
        }
        .encode()
    }
}

/// Responder side: echoes every write and remembers what it saw.
#[derive(Debug, Clone, Default)]
pub struct PingResponder {
    pub received: Vec<u64>,
    pub stopped: bool,
}

impl PingResponder {
    pub fn on_sdu(&mut self, sdu: &[u8], now: SimTime) -> Vec<AppAction> {
        let Some(msg) = PingMessage::decode(sdu) else {
            return Vec::new();
        };
        match msg.op {
            AppOp::Write => {
                self.received.push(msg.seq);
                vec![AppAction::Write(msg.echo(now).encode())]
            }
            AppOp::Stop => {
                self.stopped = true;
                Vec::new()
            }
            _ => Vec::new(),
        }
    }
}

pub const METRICS_HEADER: &str =
    "seq,send_time_ns,responder_recv_ns,response_recv_ns,one_way_ns,rtt_ns,lost";

/// One CSV row per sample; lost samples leave the time columns empty.
pub fn metrics_csv<'a>(samples: impl IntoIterator<Item = &'a PingSample>) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in samples {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.seq,
            s.send_time.as_nanos(),
            opt(s.recv_time.map(|t| t.as_nanos())),
            opt(s.response_time.map(|t| t.as_nanos())),
            opt(s.one_way().map(|d| d.as_nanos())),
            opt(s.rtt().map(|d| d.as_nanos())),
            s.lost() as u8,
        ));
    }
    out
}
