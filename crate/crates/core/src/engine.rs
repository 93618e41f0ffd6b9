//! Deterministic discrete-event core.
//!
//! Events are ordered by `(fire_at, seq)` where `seq` is a monotone insertion
//! counter, so two events at the same instant fire in the order they were
//! scheduled. Components inside one node talk through same-timestamp events.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const NANOS_PER_MILLI: u64 = 1_000_000;
const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point on the simulated clock, in integer nanoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimTime(u64);

/// A span of simulated time, in integer nanoseconds.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct SimDuration(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn from_secs_f64(s: f64) -> Self {
        SimTime((s * NANOS_PER_SEC as f64).round() as u64)
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: SimTime) -> SimDuration {
        SimDuration(self.0.saturating_sub(earlier.0))
    }
}

impl SimDuration {
    pub const ZERO: SimDuration = SimDuration(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimDuration(ns)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimDuration(ms * NANOS_PER_MILLI)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimDuration(s * NANOS_PER_SEC)
    }

    /// Converts a configured millisecond value once, rounding to the nearest nanosecond.
    pub fn from_millis_f64(ms: f64) -> Self {
        SimDuration((ms * NANOS_PER_MILLI as f64).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Time to clock `bits` onto a wire running at `rate_bps`, rounded up to
    /// the next nanosecond.
    pub fn serialization(bits: u64, rate_bps: u64) -> Self {
        assert!(rate_bps > 0, "rate must be positive");
        let num = bits as u128 * NANOS_PER_SEC as u128;
        let ns = num.div_ceil(rate_bps as u128);
        SimDuration(ns as u64)
    }
}

impl Add<SimDuration> for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimDuration) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign<SimDuration> for SimTime {
    fn add_assign(&mut self, rhs: SimDuration) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimDuration;
    fn sub(self, rhs: SimTime) -> SimDuration {
        SimDuration(self.0 - rhs.0)
    }
}

impl Add for SimDuration {
    type Output = SimDuration;
    fn add(self, rhs: SimDuration) -> SimDuration {
        SimDuration(self.0 + rhs.0)
    }
}

impl Mul<u64> for SimDuration {
    type Output = SimDuration;
    fn mul(self, rhs: u64) -> SimDuration {
        SimDuration(self.0 * rhs)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for SimDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Handle returned by [`Engine::schedule`]; used for cancellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventHandle(u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("cannot schedule at {at} ns, clock is already at {now} ns")]
    SchedulingInPast { at: SimTime, now: SimTime },
}

/// Single-threaded event queue with a simulated clock.
#[derive(Debug)]
pub struct Engine<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<(SimTime, u64)>>,
    pending: BTreeMap<u64, E>,
    processed: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            pending: BTreeMap::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Total events handed to a handler over the engine's life.
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Number of events still waiting to fire.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn schedule(&mut self, fire_at: SimTime, event: E) -> Result<EventHandle, EngineError> {
        if fire_at < self.now {
            return Err(EngineError::SchedulingInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse((fire_at, seq)));
        self.pending.insert(seq, event);
        Ok(EventHandle(seq))
    }

    /// Schedules `delay` after the current clock; never fails.
    pub fn schedule_in(&mut self, delay: SimDuration, event: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, event)
            .expect("now + delay is never in the past")
    }

    /// Removes a pending event. Returns false if it already fired or was cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        // The heap entry stays behind and is skipped when popped.
        self.pending.remove(&handle.0).is_some()
    }

    fn pop_due(&mut self, until: SimTime) -> Option<(SimTime, E)> {
        while let Some(Reverse((at, seq))) = self.heap.peek().copied() {
            if at > until {
                return None;
            }
            self.heap.pop();
            if let Some(ev) = self.pending.remove(&seq) {
                return Some((at, ev));
            }
        }
        None
    }

    /// Processes every event with `fire_at <= t` in `(fire_at, seq)` order,
    /// including events scheduled by the handler itself, then advances the
    /// clock to `t`.
    pub fn run_until<F>(&mut self, t: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, E),
    {
        let mut count = 0;
        while let Some((at, ev)) = self.pop_due(t) {
            self.now = at;
            self.processed += 1;
            count += 1;
            handler(self, ev);
        }
        if t > self.now {
            self.now = t;
        }
        count
    }

    /// Fire time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Reverse((at, seq))) = self.heap.peek().copied() {
            if self.pending.contains_key(&seq) {
                return Some(at);
            }
            self.heap.pop();
        }
        None
    }
}

/// Seeded randomness with one independent stream per stochastic consumer.
///
/// Each stream is a ChaCha8 generator keyed by the global seed and selected by
/// the consumer index, so adding a consumer never perturbs the others.
#[derive(Debug, Clone, Copy)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn t(ns: u64) -> SimTime {
        SimTime::from_nanos(ns)
    }

    #[test]
    fn fires_at_scheduled_time() {
        let mut eng = Engine::new();
        eng.schedule(t(5), "a").unwrap();
        let mut seen = vec![];
        eng.run_until(t(4), |e, ev| seen.push((e.now(), ev)));
        assert!(seen.is_empty());
        eng.run_until(t(10), |e, ev| seen.push((e.now(), ev)));
        assert_eq!(seen, vec![(t(5), "a")]);
    }

    #[test]
    fn same_time_ties_break_by_insertion() {
        let mut eng = Engine::new();
        eng.schedule(t(5), 1).unwrap();
        eng.schedule(t(5), 2).unwrap();
        eng.schedule(t(3), 0).unwrap();
        let mut seen = vec![];
        eng.run_until(t(5), |_, ev| seen.push(ev));
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn schedule_now_fires_before_later() {
        let mut eng = Engine::new();
        eng.schedule(t(7), "later").unwrap();
        eng.schedule(SimTime::ZERO, "now").unwrap();
        let mut seen = vec![];
        eng.run_until(t(7), |_, ev| seen.push(ev));
        assert_eq!(seen, vec!["now", "later"]);
    }

    #[test]
    fn past_scheduling_rejected() {
        let mut eng: Engine<()> = Engine::new();
        eng.run_until(t(10), |_, _| {});
        assert_eq!(
            eng.schedule(t(9), ()),
            Err(EngineError::SchedulingInPast {
                at: t(9),
                now: t(10)
            })
        );
    }

    #[test]
    fn cancel_semantics() {
        let mut eng = Engine::new();
        let h = eng.schedule(t(1), "rto").unwrap();
        assert!(eng.cancel(h));
        assert!(!eng.cancel(h));
        let fired = eng.run_until(t(2), |_, _| panic!("cancelled event fired"));
        assert_eq!(fired, 0);

        let h2 = eng.schedule(t(3), "x").unwrap();
        eng.run_until(t(3), |_, _| {});
        assert!(!eng.cancel(h2));
    }

    #[test]
    fn run_until_counts_and_advances() {
        let mut eng: Engine<u8> = Engine::new();
        assert_eq!(eng.run_until(t(10), |_, _| {}), 0);
        assert_eq!(eng.now(), t(10));

        let mut eng = Engine::new();
        for i in 1..=3 {
            eng.schedule(t(i), i).unwrap();
        }
        assert_eq!(eng.run_until(t(2), |_, _| {}), 2);
        assert_eq!(eng.pending(), 1);
    }

    #[test]
    fn child_at_same_time_fires_in_same_call() {
        let mut eng = Engine::new();
        eng.schedule(t(1), "parent").unwrap();
        let mut seen = vec![];
        let n = eng.run_until(t(1), |e, ev| {
            seen.push(ev);
            if ev == "parent" {
                e.schedule(e.now(), "child").unwrap();
            }
        });
        assert_eq!(n, 2);
        assert_eq!(seen, vec!["parent", "child"]);
    }

    #[test]
    fn serialization_time_is_exact_for_whole_rates() {
        assert_eq!(
            SimDuration::serialization(8000, 1_000_000),
            SimDuration::from_millis(8)
        );
        assert_eq!(
            SimDuration::serialization(1, 3),
            SimDuration::from_nanos(333_333_334)
        );
    }

    #[test]
    fn rng_streams_are_independent_and_reproducible() {
        let s = RngStreams::new(42);
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(s.stream(0), |r, _| Some(r.random()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(s.stream(0), |r, _| Some(r.random()))
            .collect();
        let c: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(s.stream(1), |r, _| Some(r.random()))
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest::proptest! {
        #[test]
        fn clock_never_decreases(times in proptest::collection::vec(0u64..1000, 1..50)) {
            let mut eng = Engine::new();
            for (i, &at) in times.iter().enumerate() {
                eng.schedule(t(at), i).unwrap();
            }
            let mut seen = vec![];
            eng.run_until(t(1000), |e, i| seen.push((e.now(), i)));
            proptest::prop_assert_eq!(seen.len(), times.len());
            for w in seen.windows(2) {
                proptest::prop_assert!(w[1].0 >= w[0].0);
                if w[1].0 == w[0].0 {
                    proptest::prop_assert!(w[1].1 > w[0].1);
                }
            }
        }
    }
}
