//! Relay and multiplexing task: per-port input/output buffers and the
//! forwarding lookup.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::{self, Display, Write as _};
use std::str::FromStr;

use crate::efcp::Pdu;
use crate::identifiers::{Address, QosId};

/// Maps `(destination, qos)` to an outgoing choice `P`. A `None` qos is the
/// any-qos entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardingTable<P> {
    entries: BTreeMap<(Address, Option<QosId>), P>,
    default: Option<P>,
}

impl<P> Default for ForwardingTable<P> {
    fn default() -> Self {
        ForwardingTable {
            entries: BTreeMap::new(),
            default: None,
        }
    }
}

impl<P: Clone> ForwardingTable<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dst: Address, qos: Option<QosId>, to: P) {
        self.entries.insert((dst, qos), to);
    }

    pub fn set_default(&mut self, to: Option<P>) {
        self.default = to;
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact `(dst, qos)`, then `(dst, *)`, then the default.
    pub fn lookup(&self, dst: Address, qos: QosId) -> Option<&P> {
        self.entries
            .get(&(dst, Some(qos)))
            .or_else(|| self.entries.get(&(dst, None)))
            .or(self.default.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Address, Option<QosId>), &P)> {
        self.entries.iter()
    }
}

impl<P: Display> ForwardingTable<P> {
    /// Compact, stable rendering for traces: `dst[/qos]>to,...`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for ((dst, qos), to) in &self.entries {
            if !s.is_empty() {
                s.push(',');
            }
            match qos {
                Some(q) => write!(s, "{dst}/{q}>{to}").unwrap(),
                None => write!(s, "{dst}>{to}").unwrap(),
            }
        }
        if s.is_empty() {
            s.push('-');
        }
        s
    }
}

/// Routing decision for one PDU; `None` means the PDU is dropped as
/// unroutable.
pub fn rmt_forward<P: Clone>(pdu: &Pdu, table: &ForwardingTable<P>) -> Option<P> {
    table.lookup(pdu.dst_addr, pdu.qos_id()).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulingPolicy {
    #[default]
    Fifo,
}

impl FromStr for SchedulingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fifo" => Ok(SchedulingPolicy::Fifo),
            other => Err(format!(
                "unknown scheduling policy `{other}` (available: fifo)"
            )),
        }
    }
}

impl fmt::Display for SchedulingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("fifo")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueued {
    Accepted { len: usize },
    Dropped { len: usize },
}

#[derive(Debug, Clone)]
pub struct BoundedQueue {
    items: VecDeque<Pdu>,
    capacity: usize,
}

impl BoundedQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        BoundedQueue {
            items: VecDeque::new(),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Tail drop once full.
    pub fn push(&mut self, pdu: Pdu) -> Enqueued {
        if self.items.len() >= self.capacity {
            Enqueued::Dropped {
                len: self.items.len(),
            }
        } else {
            self.items.push_back(pdu);
            Enqueued::Accepted {
                len: self.items.len(),
            }
        }
    }

    pub fn pop(&mut self) -> Option<Pdu> {
        self.items.pop_front()
    }
}

/// One (N-1)-port with its own input and output buffers.
#[derive(Debug, Clone)]
pub struct RmtPort {
    pub in_queue: BoundedQueue,
    pub out_queue: BoundedQueue,
    pub policy: SchedulingPolicy,
}

impl RmtPort {
    pub fn new(capacity: usize, policy: SchedulingPolicy) -> Self {
        RmtPort {
            in_queue: BoundedQueue::new(capacity),
            out_queue: BoundedQueue::new(capacity),
            policy,
        }
    }

    pub fn queue(&mut self, dir: Direction) -> &mut BoundedQueue {
        match dir {
            Direction::In => &mut self.in_queue,
            Direction::Out => &mut self.out_queue,
        }
    }

    pub fn rmt_enqueue(&mut self, pdu: Pdu, dir: Direction) -> Enqueued {
        self.queue(dir).push(pdu)
    }

    /// Next PDU to leave in `dir` under the port's scheduling policy.
    pub fn dequeue(&mut self, dir: Direction) -> Option<Pdu> {
        match self.policy {
            SchedulingPolicy::Fifo => self.queue(dir).pop(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::efcp::{demux, mux};

    fn pdu(dst: u32, qos: u8) -> Pdu {
        let mut p = Pdu::management(Address(1), Address(dst), vec![]);
        p.connection_id.qos_id = QosId(qos);
        p
    }

    #[test]
    fn exact_match() {
        let mut t = ForwardingTable::new();
        t.insert(Address(2), Some(QosId(1)), "p1");
        assert_eq!(rmt_forward(&pdu(2, 1), &t), Some("p1"));
    }

    #[test]
    fn any_qos_fallback_then_default() {
        let mut t = ForwardingTable::new();
        t.insert(Address(2), Some(QosId(1)), "p1");
        // (B,1) only: a qos-2 PDU misses exact, then any-qos, then default.
        assert_eq!(rmt_forward(&pdu(2, 2), &t), None);
        t.insert(Address(2), None, "p1");
        assert_eq!(rmt_forward(&pdu(2, 2), &t), Some("p1"));
        t.set_default(Some("d"));
        assert_eq!(rmt_forward(&pdu(9, 2), &t), Some("d"));
    }

    #[test]
    fn empty_table_drops() {
        let t: ForwardingTable<u32> = ForwardingTable::new();
        assert_eq!(rmt_forward(&pdu(2, 1), &t), None);
    }

    #[test]
    fn tail_drop_at_capacity() {
        let mut port = RmtPort::new(2, SchedulingPolicy::Fifo);
        assert_eq!(
            port.rmt_enqueue(pdu(1, 0), Direction::Out),
            Enqueued::Accepted { len: 1 }
        );
        assert_eq!(
            port.rmt_enqueue(pdu(2, 0), Direction::Out),
            Enqueued::Accepted { len: 2 }
        );
        assert_eq!(
            port.rmt_enqueue(pdu(3, 0), Direction::Out),
            Enqueued::Dropped { len: 2 }
        );
        assert_eq!(port.dequeue(Direction::Out).unwrap().dst_addr, Address(1));
        assert_eq!(
            port.rmt_enqueue(pdu(4, 0), Direction::Out),
            Enqueued::Accepted { len: 2 }
        );
        // Input buffers are separate.
        assert_eq!(
            port.rmt_enqueue(pdu(5, 0), Direction::In),
            Enqueued::Accepted { len: 1 }
        );
    }

    #[test]
    fn fifo_order() {
        let mut port = RmtPort::new(8, SchedulingPolicy::Fifo);
        for d in 1..=5 {
            port.rmt_enqueue(pdu(d, 1), Direction::Out);
        }
        let order: Vec<u32> = std::iter::from_fn(|| port.dequeue(Direction::Out))
            .map(|p| p.dst_addr.0)
            .collect();
        assert_eq!(order, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn two_flows_share_one_lower_port() {
        // Two (N)-flows toward the same next hop ride the same (N-1)-port.
        let mut port = RmtPort::new(8, SchedulingPolicy::Fifo);
        let mut a = pdu(7, 1);
        a.connection_id.src_cep = crate::identifiers::CepId(1);
        let mut b = pdu(7, 1);
        b.connection_id.src_cep = crate::identifiers::CepId(2);
        for p in [&a, &b] {
            let mut carrier = Pdu::management(Address(10), Address(11), mux(p));
            carrier.kind = crate::efcp::PduKind::Data;
            port.rmt_enqueue(carrier, Direction::Out);
        }
        let got: Vec<Pdu> = std::iter::from_fn(|| port.dequeue(Direction::Out))
            .map(|c| demux(&c.payload).unwrap())
            .collect();
        assert_eq!(got, vec![a, b]);
    }

    #[test]
    fn render_is_stable() {
        let mut t = ForwardingTable::new();
        t.insert(Address(3), None, 2u32);
        t.insert(Address(1), None, 1u32);
        t.insert(Address(3), Some(QosId(1)), 4u32);
        assert_eq!(t.render(), "1>1,3>2,3/1>4");
        assert_eq!(ForwardingTable::<u32>::new().render(), "-");
    }

    #[test]
    fn policy_parse() {
        assert_eq!(
            "fifo".parse::<SchedulingPolicy>(),
            Ok(SchedulingPolicy::Fifo)
        );
        assert!("wfq".parse::<SchedulingPolicy>().is_err());
    }
}
