//! The physical interconnection under the bottommost DIFs.
//!
//! A link is a full-duplex latency + rate pipe with a bit error rate.
//! Corrupted PDUs are dropped, never delivered damaged.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{SimDuration, SimTime};

/// Index of a link in the scenario's declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    pub rate_bps: u64,
    pub delay: SimDuration,
    pub ber: f64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MediumError {
    #[error("no link between {0} and {1}")]
    NoSuchLink(String, String),
}

/// Outcome of putting one PDU on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    /// When the sender's interface is free again.
    pub tx_done: SimTime,
    /// When the last bit reaches the far end.
    pub arrive_at: SimTime,
    pub dropped: bool,
}

/// Probability that at least one of `bits` bits is flipped.
pub fn corruption_probability(ber: f64, bits: u64) -> f64 {
    if ber <= 0.0 {
        0.0
    } else if ber >= 1.0 {
        if bits == 0 {
            0.0
        } else {
            1.0
        }
    } else {
        // 1 - (1-ber)^bits, evaluated without cancellation for small ber.
        -((bits as f64) * (-ber).ln_1p()).exp_m1()
    }
}

/// Bit error rate that yields the given per-PDU loss probability at `bits`.
pub fn ber_for_loss(loss: f64, bits: u64) -> f64 {
    -((1.0 - loss).ln() / bits as f64).exp_m1()
}

/// Runtime state of one link: its parameters, its corruption stream and the
/// time each direction's transmitter becomes idle.
#[derive(Debug, Clone)]
pub struct Link {
    pub id: LinkId,
    pub params: LinkParams,
    rng: ChaCha8Rng,
    busy_until: [SimTime; 2],
    pub transmitted: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl Link {
    pub fn new(id: LinkId, params: LinkParams, rng: ChaCha8Rng) -> Self {
        Link {
            id,
            params,
            rng,
            busy_until: [SimTime::ZERO; 2],
            transmitted: 0,
            delivered: 0,
            dropped: 0,
        }
    }

    /// Flow allocation on the medium is inherent: it always succeeds at once.
    pub fn medium_allocate(&self) -> bool {
        true
    }

    pub fn is_idle(&self, direction: usize, now: SimTime) -> bool {
        self.busy_until[direction] <= now
    }

    /// Clocks a PDU of `bits` onto the wire in `direction` (0 = a→b, 1 = b→a).
    /// The caller must only transmit when the direction is idle.
    pub fn transmit(
        &mut self,
        direction: usize,
        bits: u64,
        now: SimTime,
        corruptible: bool,
    ) -> Transmission {
        let start = now.max(self.busy_until[direction]);
        let ser = SimDuration::serialization(bits, self.params.rate_bps);
        let tx_done = start + ser;
        self.busy_until[direction] = tx_done;
        let arrive_at = tx_done + self.params.delay;
        let p = if corruptible {
            corruption_probability(self.params.ber, bits)
        } else {
            0.0
        };
        let dropped = if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.rng.random::<f64>() < p
        };
        self.transmitted += 1;
        if dropped {
            self.dropped += 1;
        }
        Transmission {
            tx_done,
            arrive_at,
            dropped,
        }
    }

    pub fn note_delivered(&mut self) {
        self.delivered += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStreams;

    fn link(ber: f64) -> Link {
        Link::new(
            LinkId(0),
            LinkParams {
                rate_bps: 1_000_000,
                delay: SimDuration::from_millis(1),
                ber,
            },
            RngStreams::new(7).stream(0),
        )
    }

    #[test]
    fn arrival_is_delay_plus_serialization() {
        let mut l = link(0.0);
        let tx = l.transmit(0, 8000, SimTime::ZERO, true);
        assert_eq!(tx.arrive_at, SimTime::ZERO + SimDuration::from_millis(9));
        assert_eq!(tx.tx_done, SimTime::ZERO + SimDuration::from_millis(8));
        assert!(!tx.dropped);
    }

    #[test]
    fn ber_extremes() {
        assert_eq!(corruption_probability(0.0, 8000), 0.0);
        assert_eq!(corruption_probability(1.0, 8000), 1.0);
        let mut l = link(1.0);
        assert!((0..10).all(|_| l.transmit(0, 100, SimTime::ZERO, true).dropped));
        let mut l = link(0.0);
        assert!((0..10).all(|_| !l.transmit(0, 100, SimTime::ZERO, true).dropped));
    }

    #[test]
    fn management_traffic_is_not_corrupted() {
        let mut l = link(1.0);
        assert!(!l.transmit(0, 100, SimTime::ZERO, false).dropped);
    }

    #[test]
    fn allocation_is_inherent_and_idempotent() {
        let l = link(0.0);
        assert!(l.medium_allocate());
        assert!(l.medium_allocate());
    }

    #[test]
    fn fifo_per_direction() {
        let mut l = link(0.0);
        let a = l.transmit(0, 8000, SimTime::ZERO, true);
        let b = l.transmit(0, 80, SimTime::ZERO, true);
        assert!(b.arrive_at > a.arrive_at);
        // The other direction is independent.
        let c = l.transmit(1, 80, SimTime::ZERO, true);
        assert!(c.arrive_at < a.arrive_at);
    }

    #[test]
    fn loss_formula_inverts() {
        let ber = ber_for_loss(0.1, 1512);
        assert!((corruption_probability(ber, 1512) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empirical_drop_rate_within_three_sigma() {
        let bits = 1000;
        let ber = ber_for_loss(0.2, bits);
        let p = corruption_probability(ber, bits);
        let mut l = link(ber);
        let n = 10_000;
        let mut now = SimTime::ZERO;
        let mut drops = 0;
        for _ in 0..n {
            let tx = l.transmit(0, bits, now, true);
            now = tx.tx_done;
            if tx.dropped {
                drops += 1;
            }
        }
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (drops as f64 - n as f64 * p).abs() <= 3.0 * sigma,
            "drops={drops}"
        );
        assert_eq!(l.transmitted, n);
        assert_eq!(l.dropped, drops);
    }
}
