//! Error and Flow Control Protocol.
//!
//! One [`EfcpInstance`] serves one flow endpoint. The data transfer half
//! (fragmentation, reassembly, sequencing) runs on every PDU; the control half
//! (cumulative acks, retransmission, rate limiting) only when the QoS cube
//! asks for reliability or a bandwidth cap. Both halves keep soft state that
//! is thrown away after a configurable number of Δt periods of silence.
//!
//! The instance never touches the event queue. Every call returns a list of
//! [`EfcpOutput`] actions that the owning IPCP turns into transmissions and
//! timers.

pub mod pdu;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{SimDuration, SimTime};
use crate::identifiers::{Address, ConnectionId};
pub use pdu::{demux, mux, DecodeError, Pdu, PduKind, HEADER_LEN};

/// Watson's three timer bounds plus the idle multiples after which state is
/// discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaTParams {
    /// Maximum packet lifetime.
    pub mpl: SimDuration,
    /// Maximum time before an acknowledgement is sent.
    pub a_timer: SimDuration,
    /// Maximum time a sender keeps retransmitting one PDU.
    pub r_timer: SimDuration,
    pub sender_discard_multiple: u8,
    pub receiver_discard_multiple: u8,
}

impl DeltaTParams {
    pub fn new(mpl: SimDuration, a_timer: SimDuration, r_timer: SimDuration) -> Self {
        DeltaTParams {
            mpl,
            a_timer,
            r_timer,
            sender_discard_multiple: 3,
            receiver_discard_multiple: 2,
        }
    }

    pub fn delta_t(&self) -> SimDuration {
        delta_t(self)
    }

    pub fn discard_after(&self, side: Side) -> SimDuration {
        let m = match side {
            Side::Sender => self.sender_discard_multiple,
            Side::Receiver => self.receiver_discard_multiple,
        };
        self.delta_t() * m as u64
    }
}

/// Δt = MPL + A + R.
pub fn delta_t(p: &DeltaTParams) -> SimDuration {
    p.mpl + p.a_timer + p.r_timer
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Sender,
    Receiver,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Sender => "sender",
            Side::Receiver => "receiver",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Sender => 0,
            Side::Receiver => 1,
        }
    }
}

/// Per-flow policy, fixed when the instance is spawned.
#[derive(Debug, Clone, PartialEq)]
pub struct EfcpPolicy {
    pub reliable: bool,
    pub ordered: bool,
    pub rto: SimDuration,
    pub max_pdu_payload: usize,
    /// Token-bucket rate in bits/s applied to payload bytes.
    pub rate_bps: Option<u64>,
    pub delta: DeltaTParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtxEntry {
    pub pdu: Pdu,
    pub first_sent_at: SimTime,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenderState {
    pub next_send_seq: u64,
    pub highest_acked: u64,
    pub retransmission_queue: BTreeMap<u64, RtxEntry>,
    pub last_activity: SimTime,
    /// Earliest time the rate limiter lets the next PDU out.
    pub next_emit_at: SimTime,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Reassembly {
    fragments: BTreeMap<u32, Vec<u8>>,
    total_len: Option<usize>,
}

impl Reassembly {
    fn complete(&self) -> Option<Vec<u8>> {
        let total = self.total_len?;
        let mut out = Vec::with_capacity(total);
        for (&off, bytes) in &self.fragments {
            if off as usize != out.len() {
                return None;
            }
            out.extend_from_slice(bytes);
        }
        (out.len() == total).then_some(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverState {
    pub next_expected_seq: u64,
    pub out_of_order: BTreeMap<u64, Pdu>,
    /// Sequence numbers received above `next_expected_seq` on unordered flows.
    seen_above: BTreeSet<u64>,
    reassembly: BTreeMap<u32, Reassembly>,
    pub last_activity: SimTime,
    pub ack_pending: bool,
}

impl ReceiverState {
    pub fn reassembly_pending(&self) -> usize {
        self.reassembly.len()
    }
}

/// The soft state shared by the two ends of a connection. `None` on a side
/// means the side is closed (never opened, or discarded).
#[derive(Debug, Clone, PartialEq)]
pub struct EfcpStateVector {
    pub connection_id: ConnectionId,
    pub sender: Option<SenderState>,
    pub receiver: Option<ReceiverState>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EfcpOutput {
    /// Hand a PDU to the RMT now.
    Transmit {
        pdu: Pdu,
        retransmission: bool,
    },
    /// Rate limiter deferred this PDU.
    TransmitAt {
        at: SimTime,
        pdu: Pdu,
    },
    /// A complete SDU for the flow's user.
    Deliver {
        sdu: Vec<u8>,
        sdu_id: u32,
    },
    ArmRto {
        seq: u64,
        at: SimTime,
    },
    CancelRto {
        seq: u64,
    },
    ArmAck {
        at: SimTime,
    },
    ArmIdle {
        side: Side,
        at: SimTime,
    },
    /// A side (re)opened a fresh state vector starting at `baseline`.
    Opened {
        side: Side,
        baseline: u64,
    },
    /// The R bound ran out for `seq`; reliability cannot be met.
    FlowError {
        seq: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateDiscard {
    Keep { recheck_at: SimTime },
    Discard,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EfcpError {
    #[error("flow is not allocated")]
    FlowNotAllocated,
    #[error("SDU must carry at least one byte")]
    EmptySdu,
    /// Any DATA PDU may reopen a discarded receiver, so this only arises for
    /// non-DATA PDUs handed to the receive path.
    #[error("PDU cannot open or advance a receiver state vector")]
    StaleState,
    #[error("PDU belongs to connection {got}, not {expected}")]
    WrongConnection {
        expected: ConnectionId,
        got: ConnectionId,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EfcpStats {
    pub pdus_sent: u64,
    pub retransmissions: u64,
    pub acks_sent: u64,
    pub sdus_delivered: u64,
    pub duplicates: u64,
    pub discards: u64,
}

#[derive(Debug, Clone)]
pub struct EfcpInstance {
    pub local_addr: Address,
    pub remote_addr: Address,
    pub policy: EfcpPolicy,
    pub sv: EfcpStateVector,
    /// SDU ids survive state discards so they stay unique for the flow.
    next_sdu_id: u32,
    bound: bool,
    pub failed: bool,
    pub stats: EfcpStats,
}

impl EfcpInstance {
    pub fn new(
        local_addr: Address,
        remote_addr: Address,
        connection_id: ConnectionId,
        policy: EfcpPolicy,
    ) -> Self {
        EfcpInstance {
            local_addr,
            remote_addr,
            policy,
            sv: EfcpStateVector {
                connection_id,
                sender: None,
                receiver: None,
            },
            next_sdu_id: 1,
            bound: false,
            failed: false,
            stats: EfcpStats::default(),
        }
    }

    pub fn connection_id(&self) -> ConnectionId {
        self.sv.connection_id
    }

    /// Completes the connection-id once the peer's CEP-id is known; data
    /// may flow from here on.
    pub fn bind(&mut self, remote_addr: Address, connection_id: ConnectionId) {
        self.remote_addr = remote_addr;
        self.sv.connection_id = connection_id;
        self.bound = true;
    }

    pub fn is_bound(&self) -> bool {
        self.bound
    }

    fn open_sender(&mut self, now: SimTime, out: &mut Vec<EfcpOutput>) {
        if self.sv.sender.is_none() {
            self.sv.sender = Some(SenderState {
                next_send_seq: 1,
                highest_acked: 0,
                retransmission_queue: BTreeMap::new(),
                last_activity: now,
                next_emit_at: now,
            });
            out.push(EfcpOutput::Opened {
                side: Side::Sender,
                baseline: 1,
            });
            out.push(EfcpOutput::ArmIdle {
                side: Side::Sender,
                at: now + self.policy.delta.discard_after(Side::Sender),
            });
        }
    }

    /// Fragments, sequences and (on reliable flows) queues one SDU for
    /// retransmission. Returns the SDU id and the resulting actions.
    pub fn dtp_send(
        &mut self,
        sdu: &[u8],
        now: SimTime,
    ) -> Result<(u32, Vec<EfcpOutput>), EfcpError> {
        if !self.bound {
            return Err(EfcpError::FlowNotAllocated);
        }
        if sdu.is_empty() {
            return Err(EfcpError::EmptySdu);
        }
        let mut out = Vec::new();
        self.open_sender(now, &mut out);
        let sdu_id = self.next_sdu_id;
        self.next_sdu_id = self.next_sdu_id.wrapping_add(1).max(1);
        let conn = self.sv.connection_id;
        let (local, remote) = (self.local_addr, self.remote_addr);
        let policy = self.policy.clone();
        let tx = self.sv.sender.as_mut().expect("sender opened above");
        let chunk = policy.max_pdu_payload.max(1);
        let n = sdu.len().div_ceil(chunk);
        for (i, frag) in sdu.chunks(chunk).enumerate() {
            let seq = tx.next_send_seq;
            tx.next_send_seq += 1;
            let pdu = Pdu {
                src_addr: local,
                dst_addr: remote,
                connection_id: conn,
                seq,
                kind: PduKind::Data,
                checksum: None,
                sdu_id,
                frag_offset: (i * chunk) as u32,
                last_fragment: i + 1 == n,
                drf: tx.highest_acked == 0,
                payload: frag.to_vec(),
            };
            let emit_at = match policy.rate_bps {
                Some(rate) => {
                    let at = now.max(tx.next_emit_at);
                    tx.next_emit_at = at + SimDuration::serialization(frag.len() as u64 * 8, rate);
                    at
                }
                None => now,
            };
            if policy.reliable {
                tx.retransmission_queue.insert(
                    seq,
                    RtxEntry {
                        pdu: pdu.clone(),
                        first_sent_at: emit_at,
                        retries: 0,
                    },
                );
                out.push(EfcpOutput::ArmRto {
                    seq,
                    at: emit_at + policy.rto,
                });
            }
            self.stats.pdus_sent += 1;
            if emit_at == now {
                out.push(EfcpOutput::Transmit {
                    pdu,
                    retransmission: false,
                });
            } else {
                out.push(EfcpOutput::TransmitAt { at: emit_at, pdu });
            }
        }
        tx.last_activity = now;
        Ok((sdu_id, out))
    }

    /// Accepts one DATA PDU and returns the SDUs it completes, in order.
    pub fn dtp_receive(&mut self, pdu: Pdu, now: SimTime) -> Result<Vec<EfcpOutput>, EfcpError> {
        if pdu.kind != PduKind::Data {
            return Err(EfcpError::StaleState);
        }
        if pdu.connection_id.dst_cep != self.sv.connection_id.src_cep {
            return Err(EfcpError::WrongConnection {
                expected: self.sv.connection_id.reversed(),
                got: pdu.connection_id,
            });
        }
        let mut out = Vec::new();
        let policy = self.policy.clone();
        if self.sv.receiver.is_none() {
            // Without the data-run flag the sender has had earlier PDUs
            // acked, so the arriving seq is the baseline.
            let baseline = if pdu.drf { 1 } else { pdu.seq };
            self.sv.receiver = Some(ReceiverState {
                next_expected_seq: baseline,
                out_of_order: BTreeMap::new(),
                seen_above: BTreeSet::new(),
                reassembly: BTreeMap::new(),
                last_activity: now,
                ack_pending: false,
            });
            out.push(EfcpOutput::Opened {
                side: Side::Receiver,
                baseline,
            });
            out.push(EfcpOutput::ArmIdle {
                side: Side::Receiver,
                at: now + policy.delta.discard_after(Side::Receiver),
            });
        }
        let rx = self.sv.receiver.as_mut().expect("receiver opened above");
        rx.last_activity = now;
        let seq = pdu.seq;
        let duplicate = seq < rx.next_expected_seq
            || rx.out_of_order.contains_key(&seq)
            || rx.seen_above.contains(&seq);
        if duplicate {
            self.stats.duplicates += 1;
        } else {
            let mut ready = Vec::new();
            match (policy.reliable, policy.ordered) {
                (true, true) => {
                    rx.out_of_order.insert(seq, pdu);
                    while let Some(p) = rx.out_of_order.remove(&rx.next_expected_seq) {
                        rx.next_expected_seq += 1;
                        ready.push(p);
                    }
                }
                (false, true) => {
                    // Gaps are losses on unreliable ordered flows: skip them.
                    rx.next_expected_seq = seq + 1;
                    ready.push(pdu);
                }
                (_, false) => {
                    rx.seen_above.insert(seq);
                    while rx.seen_above.remove(&rx.next_expected_seq) {
                        rx.next_expected_seq += 1;
                    }
                    ready.push(pdu);
                }
            }
            for p in ready {
                if let Some((sdu_id, sdu)) = reassemble(rx, p, !policy.reliable && policy.ordered) {
                    self.stats.sdus_delivered += 1;
                    out.push(EfcpOutput::Deliver { sdu, sdu_id });
                }
            }
        }
        if policy.reliable && !rx.ack_pending {
            rx.ack_pending = true;
            out.push(EfcpOutput::ArmAck {
                at: now + policy.delta.a_timer,
            });
        }
        Ok(out)
    }

    /// A-timer expiry: emit one cumulative ack covering every in-order arrival.
    pub fn on_ack_timer(&mut self) -> Vec<EfcpOutput> {
        let Some(rx) = self.sv.receiver.as_mut() else {
            return Vec::new();
        };
        rx.ack_pending = false;
        let ack = Pdu {
            src_addr: self.local_addr,
            dst_addr: self.remote_addr,
            connection_id: self.sv.connection_id,
            seq: rx.next_expected_seq - 1,
            kind: PduKind::Ack,
            checksum: None,
            sdu_id: 0,
            frag_offset: 0,
            last_fragment: true,
            drf: false,
            payload: Vec::new(),
        };
        self.stats.acks_sent += 1;
        vec![EfcpOutput::Transmit {
            pdu: ack,
            retransmission: false,
        }]
    }

    /// Releases every queued PDU with seq <= the cumulative ack value.
    pub fn dtcp_on_ack(&mut self, ack: &Pdu, now: SimTime) -> Vec<EfcpOutput> {
        let Some(tx) = self.sv.sender.as_mut() else {
            return Vec::new();
        };
        if ack.seq <= tx.highest_acked {
            return Vec::new();
        }
        tx.last_activity = now;
        tx.highest_acked = ack.seq.min(tx.next_send_seq - 1);
        let keep = tx.retransmission_queue.split_off(&(ack.seq + 1));
        let released = std::mem::replace(&mut tx.retransmission_queue, keep);
        released
            .into_keys()
            .map(|seq| EfcpOutput::CancelRto { seq })
            .collect()
    }

    /// Retransmission timer for `seq` fired.
    pub fn dtcp_on_rto(&mut self, seq: u64, now: SimTime) -> Vec<EfcpOutput> {
        let r_timer = self.policy.delta.r_timer;
        let rto = self.policy.rto;
        let Some(tx) = self.sv.sender.as_mut() else {
            return Vec::new();
        };
        let Some(entry) = tx.retransmission_queue.get_mut(&seq) else {
            return Vec::new();
        };
        if now.since(entry.first_sent_at) < r_timer {
            entry.retries += 1;
            let pdu = entry.pdu.clone();
            tx.last_activity = now;
            self.stats.retransmissions += 1;
            vec![
                EfcpOutput::Transmit {
                    pdu,
                    retransmission: true,
                },
                EfcpOutput::ArmRto { seq, at: now + rto },
            ]
        } else {
            let mut out = vec![EfcpOutput::FlowError { seq }];
            let queued = std::mem::take(&mut tx.retransmission_queue);
            out.extend(
                queued
                    .into_keys()
                    .filter(|&s| s != seq)
                    .map(|s| EfcpOutput::CancelRto { seq: s }),
            );
            self.failed = true;
            out
        }
    }

    /// Idle check for one side. Discarding resets sequencing for that side
    /// only; it has no effect on the flow or its port-ids.
    pub fn check_state_discard(&mut self, side: Side, now: SimTime) -> StateDiscard {
        let limit = self.policy.delta.discard_after(side);
        match side {
            Side::Sender => {
                let Some(tx) = &self.sv.sender else {
                    return StateDiscard::Discard;
                };
                let idle = now.since(tx.last_activity);
                if idle >= limit && tx.retransmission_queue.is_empty() {
                    self.sv.sender = None;
                    self.stats.discards += 1;
                    StateDiscard::Discard
                } else if idle >= limit {
                    StateDiscard::Keep {
                        recheck_at: now + limit,
                    }
                } else {
                    StateDiscard::Keep {
                        recheck_at: tx.last_activity + limit,
                    }
                }
            }
            Side::Receiver => {
                let Some(rx) = &self.sv.receiver else {
                    return StateDiscard::Discard;
                };
                if now.since(rx.last_activity) >= limit {
                    self.sv.receiver = None;
                    self.stats.discards += 1;
                    StateDiscard::Discard
                } else {
                    StateDiscard::Keep {
                        recheck_at: rx.last_activity + limit,
                    }
                }
            }
        }
    }

    pub fn unacked(&self) -> usize {
        self.sv
            .sender
            .as_ref()
            .map_or(0, |s| s.retransmission_queue.len())
    }
}

fn reassemble(rx: &mut ReceiverState, pdu: Pdu, drop_older: bool) -> Option<(u32, Vec<u8>)> {
    let sdu_id = pdu.sdu_id;
    let done = if pdu.frag_offset == 0 && pdu.last_fragment {
        Some(pdu.payload)
    } else {
        let entry = rx.reassembly.entry(sdu_id).or_default();
        if pdu.last_fragment {
            entry.total_len = Some(pdu.frag_offset as usize + pdu.payload.len());
        }
        entry.fragments.insert(pdu.frag_offset, pdu.payload);
        let done = entry.complete();
        if done.is_some() {
            rx.reassembly.remove(&sdu_id);
        }
        done
    };
    if done.is_some() && drop_older {
        rx.reassembly.retain(|&id, _| id > sdu_id);
    }
    done.map(|sdu| (sdu_id, sdu))
}
