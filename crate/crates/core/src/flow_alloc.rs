//! Flow allocator instance state machine and the resource allocator's
//! (N-1)-flow cache. The event-driven choreography that uses them lives in
//! the simulator.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::identifiers::{Address, Apn, ConnectionId, PortId, QosId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FaiState {
    Null,
    AllocPending,
    NotifyPending,
    Allocated,
    DeallocPending,
    Deallocated,
}

impl FaiState {
    pub const ALL: [FaiState; 6] = [
        FaiState::Null,
        FaiState::AllocPending,
        FaiState::NotifyPending,
        FaiState::Allocated,
        FaiState::DeallocPending,
        FaiState::Deallocated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaiState::Null => "NULL",
            FaiState::AllocPending => "ALLOC_PENDING",
            FaiState::NotifyPending => "NOTIFY_PENDING",
            FaiState::Allocated => "ALLOCATED",
            FaiState::DeallocPending => "DEALLOC_PENDING",
            FaiState::Deallocated => "DEALLOCATED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

impl fmt::Display for FaiState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The declared transition relation.
pub fn transition_allowed(from: FaiState, to: FaiState) -> bool {
    use FaiState::*;
    matches!(
        (from, to),
        (Null, AllocPending)
            | (Null, NotifyPending)
            | (NotifyPending, Allocated)
            | (NotifyPending, Deallocated)
            | (AllocPending, Allocated)
            | (AllocPending, Deallocated)
            | (Allocated, DeallocPending)
            | (Allocated, Deallocated)
            | (DeallocPending, Deallocated)
    )
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaError {
    #[error("no QoS cube satisfies the requested requirements")]
    NoQosCube,
    #[error("no route to {0}")]
    NoRoute(Apn),
    #[error("no flow on port {0}")]
    NoSuchFlow(PortId),
    #[error("unexpected {0}")]
    UnexpectedMessage(String),
    #[error("destination {0} is not hosted here")]
    UnknownDestinationApn(Apn),
    #[error("allocation failed: {0}")]
    AllocationFailed(String),
    #[error("illegal FAI transition {from} -> {to}")]
    IllegalTransition { from: FaiState, to: FaiState },
    #[error("a request for the same flow is already pending")]
    DuplicateRequest,
    #[error("identifier space exhausted")]
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FaiId(pub u32);

impl fmt::Display for FaiId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct FaiRecord {
    pub id: FaiId,
    pub local_apn: Apn,
    pub remote_apn: Apn,
    pub port_id: PortId,
    pub connection_id: ConnectionId,
    pub state: FaiState,
    pub qos_id: QosId,
    /// Name of the IPCP that owns this instance.
    pub owner: String,
    pub initiator: bool,
    pub remote_addr: Option<Address>,
}

impl FaiRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: FaiId,
        local_apn: Apn,
        remote_apn: Apn,
        port_id: PortId,
        connection_id: ConnectionId,
        qos_id: QosId,
        owner: impl Into<String>,
        initiator: bool,
    ) -> Self {
        FaiRecord {
            id,
            local_apn,
            remote_apn,
            port_id,
            connection_id,
            state: FaiState::Null,
            qos_id,
            owner: owner.into(),
            initiator,
            remote_addr: None,
        }
    }

    /// Moves to `to`, returning the previous state.
    pub fn transition(&mut self, to: FaiState) -> Result<FaiState, FaError> {
        let from = self.state;
        if !transition_allowed(from, to) {
            return Err(FaError::IllegalTransition { from, to });
        }
        self.state = to;
        Ok(from)
    }

    pub fn is_live(&self) -> bool {
        self.state != FaiState::Deallocated
    }
}

/// Outcome of asking the RA for an (N-1)-flow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RaLookup<P> {
    /// Cache hit.
    Ready(P),
    /// First request for this key: the caller must start an allocation.
    Started,
    /// An allocation is already under way; the continuation was queued.
    Waiting,
}

#[derive(Debug, Clone)]
enum N1Flow<P, C> {
    Ready(P),
    Pending(Vec<C>),
}

/// (N-1)-flows keyed by (peer address, qos cube). `P` is the port handle,
/// `C` whatever must resume once the flow is ready.
#[derive(Debug, Clone)]
pub struct RaState<P, C> {
    flows: BTreeMap<(Address, QosId), N1Flow<P, C>>,
}

impl<P, C> Default for RaState<P, C> {
    fn default() -> Self {
        RaState {
            flows: BTreeMap::new(),
        }
    }
}

impl<P: Clone, C> RaState<P, C> {
    pub fn ra_get_or_allocate_n1_flow(
        &mut self,
        peer: Address,
        qos: QosId,
        cont: C,
    ) -> RaLookup<P> {
        match self.flows.get_mut(&(peer, qos)) {
            Some(N1Flow::Ready(p)) => RaLookup::Ready(p.clone()),
            Some(N1Flow::Pending(waiting)) => {
                waiting.push(cont);
                RaLookup::Waiting
            }
            None => {
                self.flows.insert((peer, qos), N1Flow::Pending(vec![cont]));
                RaLookup::Started
            }
        }
    }

    /// Records a usable flow and hands back the continuations to resume.
    pub fn ready(&mut self, peer: Address, qos: QosId, port: P) -> Vec<C> {
        match self.flows.insert((peer, qos), N1Flow::Ready(port)) {
            Some(N1Flow::Pending(w)) => w,
            _ => Vec::new(),
        }
    }

    /// Drops a pending allocation; its continuations are returned so the
    /// caller can fail them.
    pub fn failed(&mut self, peer: Address, qos: QosId) -> Vec<C> {
        match self.flows.get(&(peer, qos)) {
            Some(N1Flow::Pending(_)) => match self.flows.remove(&(peer, qos)) {
                Some(N1Flow::Pending(w)) => w,
                _ => unreachable!(),
            },
            _ => Vec::new(),
        }
    }

    pub fn get(&self, peer: Address, qos: QosId) -> Option<&P> {
        match self.flows.get(&(peer, qos)) {
            Some(N1Flow::Ready(p)) => Some(p),
            _ => None,
        }
    }

    pub fn is_pending(&self, peer: Address, qos: QosId) -> bool {
        matches!(self.flows.get(&(peer, qos)), Some(N1Flow::Pending(_)))
    }

    pub fn ready_flows(&self) -> impl Iterator<Item = ((Address, QosId), &P)> {
        self.flows.iter().filter_map(|(k, f)| match f {
            N1Flow::Ready(p) => Some((*k, p)),
            N1Flow::Pending(_) => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiers::CepId;

    fn rec() -> FaiRecord {
        FaiRecord::new(
            FaiId(1),
            Apn::new("A"),
            Apn::new("B"),
            PortId(1),
            ConnectionId {
                src_cep: CepId(1),
                dst_cep: CepId(0),
                qos_id: QosId(1),
            },
            QosId(1),
            "H1.top",
            true,
        )
    }

    #[test]
    fn initiator_happy_path() {
        let mut r = rec();
        for to in [
            FaiState::AllocPending,
            FaiState::Allocated,
            FaiState::DeallocPending,
            FaiState::Deallocated,
        ] {
            r.transition(to).unwrap();
        }
        assert!(!r.is_live());
    }

    #[test]
    fn cannot_skip_allocated() {
        let mut r = rec();
        r.transition(FaiState::AllocPending).unwrap();
        assert_eq!(
            r.transition(FaiState::DeallocPending),
            Err(FaError::IllegalTransition {
                from: FaiState::AllocPending,
                to: FaiState::DeallocPending
            })
        );
        assert_eq!(r.state, FaiState::AllocPending);
    }

    #[test]
    fn relation_has_nine_edges_and_terminal_sink() {
        let n = FaiState::ALL
            .iter()
            .flat_map(|a| FaiState::ALL.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| transition_allowed(*a, *b))
            .count();
        assert_eq!(n, 9);
        assert!(FaiState::ALL
            .iter()
            .all(|s| !transition_allowed(FaiState::Deallocated, *s)));
        assert_eq!(
            FaiState::parse("NOTIFY_PENDING"),
            Some(FaiState::NotifyPending)
        );
    }

    #[test]
    fn ra_cache_hit_and_waiters() {
        let mut ra: RaState<u32, &str> = RaState::default();
        assert_eq!(
            ra.ra_get_or_allocate_n1_flow(Address(2), QosId(0), "a"),
            RaLookup::Started
        );
        assert_eq!(
            ra.ra_get_or_allocate_n1_flow(Address(2), QosId(0), "b"),
            RaLookup::Waiting
        );
        assert!(ra.is_pending(Address(2), QosId(0)));
        assert_eq!(ra.ready(Address(2), QosId(0), 7), vec!["a", "b"]);
        assert_eq!(
            ra.ra_get_or_allocate_n1_flow(Address(2), QosId(0), "c"),
            RaLookup::Ready(7)
        );
        // A different qos is a different flow.
        assert_eq!(
            ra.ra_get_or_allocate_n1_flow(Address(2), QosId(1), "d"),
            RaLookup::Started
        );
        assert_eq!(ra.failed(Address(2), QosId(1)), vec!["d"]);
        assert_eq!(ra.ready_flows().count(), 1);
    }
}
