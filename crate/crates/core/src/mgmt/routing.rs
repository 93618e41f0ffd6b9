//! Link-state routing: versioned advertisements flooded over management
//! flows, Dijkstra over the two-way-confirmed adjacency graph.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::identifiers::{Address, QosId};
use crate::rmt::ForwardingTable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lsa {
    pub origin: Address,
    pub version: u64,
    /// (neighbour, metric), sorted by neighbour.
    pub neighbors: Vec<(Address, u32)>,
}

#[derive(Debug, Clone, Default)]
pub struct LinkStateDb {
    entries: BTreeMap<Address, Lsa>,
}

impl LinkStateDb {
    /// Returns whether the advertisement was newer than what we held.
    pub fn merge(&mut self, lsa: Lsa) -> bool {
        match self.entries.get(&lsa.origin) {
            Some(have) if have.version >= lsa.version => false,
            _ => {
                self.entries.insert(lsa.origin, lsa);
                true
            }
        }
    }

    pub fn get(&self, origin: Address) -> Option<&Lsa> {
        self.entries.get(&origin)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lsa> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Edge u->v counts only if v also advertises u.
    fn edges(&self, u: Address) -> impl Iterator<Item = (Address, u32)> + '_ {
        self.entries.get(&u).into_iter().flat_map(move |lsa| {
            lsa.neighbors.iter().copied().filter(move |(v, _)| {
                self.entries
                    .get(v)
                    .is_some_and(|back| back.neighbors.iter().any(|(w, _)| *w == u))
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub next_hop: Address,
    pub cost: u64,
}

/// Shortest paths from `src`. Among equal-cost paths the one whose first
/// hop has the lowest address wins.
pub fn shortest_paths(db: &LinkStateDb, src: Address) -> BTreeMap<Address, Route> {
    let mut dist: BTreeMap<Address, u64> = BTreeMap::new();
    let mut first: BTreeMap<Address, Address> = BTreeMap::new();
    let mut done: BTreeMap<Address, ()> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(src, 0);
    heap.push(Reverse((0u64, src)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if done.insert(u, ()).is_some() || dist.get(&u) != Some(&d) {
            continue;
        }
        for (v, m) in db.edges(u) {
            // Zero metrics are rejected at configuration time; treat them as 1
            // so predecessors always settle first.
            let nd = d + u64::from(m.max(1));
            let hop = if u == src { v } else { first[&u] };
            let better = match dist.get(&v) {
                None => true,
                Some(&old) => nd < old || (nd == old && first.get(&v).is_some_and(|h| hop < *h)),
            };
            if better {
                dist.insert(v, nd);
                first.insert(v, hop);
                heap.push(Reverse((nd, v)));
            }
        }
    }
    first
        .into_iter()
        .map(|(dst, next_hop)| {
            (
                dst,
                Route {
                    next_hop,
                    cost: dist[&dst],
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingPolicy {
    #[default]
    LinkState,
}

impl FromStr for RoutingPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "link-state" => Ok(RoutingPolicy::LinkState),
            other => Err(format!(
                "unknown routing policy `{other}` (available: link-state)"
            )),
        }
    }
}

impl fmt::Display for RoutingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("link-state")
    }
}

/// What a routing step asks the caller to do.
#[derive(Debug, Clone, Default)]
pub struct RoutingStep {
    /// RoutingUpdates to send, one per neighbour.
    pub flood: Vec<(Address, Lsa)>,
    /// Whether the next-hop map changed and must be reinstalled.
    pub changed: bool,
}

#[derive(Debug, Clone)]
pub struct RoutingState {
    pub me: Address,
    pub db: LinkStateDb,
    version: u64,
    neighbors: BTreeMap<Address, u32>,
    routes: BTreeMap<Address, Route>,
}

impl RoutingState {
    pub fn new(me: Address) -> Self {
        RoutingState {
            me,
            db: LinkStateDb::default(),
            version: 0,
            neighbors: BTreeMap::new(),
            routes: BTreeMap::new(),
        }
    }

    pub fn neighbors(&self) -> impl Iterator<Item = Address> + '_ {
        self.neighbors.keys().copied()
    }

    pub fn routes(&self) -> &BTreeMap<Address, Route> {
        &self.routes
    }

    /// Adds an adjacency and re-originates. Returns `None` if already known.
    pub fn add_neighbor(&mut self, nb: Address, metric: u32) -> Option<RoutingStep> {
        if self.neighbors.insert(nb, metric) == Some(metric) {
            return None;
        }
        Some(self.originate())
    }

    /// Bumps our version, floods our advertisement to every neighbour and
    /// recomputes.
    pub fn originate(&mut self) -> RoutingStep {
        self.version += 1;
        let lsa = Lsa {
            origin: self.me,
            version: self.version,
            neighbors: self.neighbors.iter().map(|(a, m)| (*a, *m)).collect(),
        };
        self.db.merge(lsa.clone());
        RoutingStep {
            flood: self.neighbors.keys().map(|n| (*n, lsa.clone())).collect(),
            changed: self.recompute(),
        }
    }

    /// Handles one received advertisement. Stale versions change nothing and
    /// are not re-flooded; fresh ones go to every neighbour but the sender.
    pub fn routing_step(&mut self, lsa: Lsa, from: Address) -> RoutingStep {
        if lsa.origin == self.me || !self.db.merge(lsa.clone()) {
            return RoutingStep::default();
        }
        let flood = self
            .neighbors
            .keys()
            .filter(|n| **n != from)
            .map(|n| (*n, lsa.clone()))
            .collect();
        RoutingStep {
            flood,
            changed: self.recompute(),
        }
    }

    /// Full database, sent to a newly enrolled neighbour.
    pub fn db_sync(&self) -> Vec<Lsa> {
        self.db.iter().cloned().collect()
    }

    fn recompute(&mut self) -> bool {
        let routes = shortest_paths(&self.db, self.me);
        let changed = routes != self.routes;
        self.routes = routes;
        changed
    }

    /// Next hops mapped identically for every qos id in `qos_ids`.
    pub fn forwarding_table(&self, qos_ids: &[QosId]) -> ForwardingTable<Address> {
        let mut t = ForwardingTable::new();
        for (dst, r) in &self.routes {
            for q in qos_ids {
                t.insert(*dst, Some(*q), r.next_hop);
            }
        }
        t
    }

    /// `dst>next_hop` pairs, for trace comparison.
    pub fn digest(&self) -> String {
        let mut s = String::new();
        for (dst, r) in &self.routes {
            if !s.is_empty() {
                s.push(',');
            }
            write!(s, "{dst}>{}", r.next_hop).unwrap();
        }
        if s.is_empty() {
            s.push('-');
        }
        s
    }
}
