//! Scenario files: a TOML document describing DIFs, nodes with their IPCP
//! stacks, links, applications and the application directory.
//!
//! ```toml
//! name = "line"
//! seed = 1
//! stop_time_s = 5.0
//!
//! [[qos_cubes]]
//! id = 1
//! reliable = true
//! ordered = true
//!
//! [[difs]]
//! name = "Top"
//! rank = 1
//! mpl_ms = 10.0
//! a_timer_ms = 0.1
//! r_timer_ms = 100.0
//! rto_ms = 40.0
//!
//! [[nodes]]
//! name = "Host1"
//! kind = "host"
//! ipcps = [{ name = "H1.top", dif = "Top", address = 1 }, ...]
//!
//! [[links]]
//! a = "H1.l0"
//! b = "SW.l0"
//! rate_bps = 1000000
//! delay_ms = 1.0
//!
//! [[apps]]
//! node = "Host1"
//! apn = "A"
//! role = "ping-initiator"
//! dst = "B"
//!
//! [[directory]]
//! apn = "B"
//! dif = "Top"
//! node = "Host2"
//! ```

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::efcp::DeltaTParams;
use crate::engine::SimDuration;
use crate::identifiers::{Apn, QosCube, QosId, QosRequirements};
use crate::mgmt::RoutingPolicy;
use crate::rmt::SchedulingPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub stop_time_s: f64,
    #[serde(default)]
    pub qos_cubes: Vec<QosCubeSpec>,
    pub difs: Vec<DifSpec>,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub apps: Vec<AppSpec>,
    #[serde(default)]
    pub directory: Vec<DirectoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosCubeSpec {
    pub id: u8,
    #[serde(default)]
    pub reliable: bool,
    #[serde(default)]
    pub ordered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_bandwidth_bps: Option<u64>,
}

impl QosCubeSpec {
    pub fn cube(&self) -> QosCube {
        QosCube {
            id: QosId(self.id),
            reliable: self.reliable,
            ordered: self.ordered,
            max_delay: self.max_delay_ms.map(SimDuration::from_millis_f64),
            avg_bandwidth: self.avg_bandwidth_bps,
        }
    }
}

fn default_queue() -> usize {
    64
}
fn default_routing() -> String {
    "link-state".into()
}
fn default_scheduler() -> String {
    "fifo".into()
}
fn default_sender_multiple() -> u8 {
    3
}
fn default_receiver_multiple() -> u8 {
    2
}
fn default_max_payload() -> usize {
    1400
}
fn default_auth() -> String {
    String::new()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifSpec {
    pub name: String,
    pub rank: u8,
    pub mpl_ms: f64,
    pub a_timer_ms: f64,
    pub r_timer_ms: f64,
    /// Retransmission interval; a quarter of `r_timer_ms` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rto_ms: Option<f64>,
    #[serde(default = "default_queue")]
    pub queue_capacity: usize,
    #[serde(default = "default_routing")]
    pub routing: String,
    #[serde(default = "default_scheduler")]
    pub scheduler: String,
    /// Defaults to ten times delta-t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allocate_timeout_ms: Option<f64>,
    /// Defaults to ten times delta-t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enroll_timeout_ms: Option<f64>,
    #[serde(default = "default_sender_multiple")]
    pub sender_discard_multiple: u8,
    #[serde(default = "default_receiver_multiple")]
    pub receiver_discard_multiple: u8,
    #[serde(default = "default_auth")]
    pub auth: String,
    #[serde(default = "default_max_payload")]
    pub max_pdu_payload_bytes: usize,
    /// Enroll every member at time zero instead of on first demand.
    #[serde(default)]
    pub eager_enrollment: bool,
}

impl DifSpec {
    pub fn delta(&self) -> DeltaTParams {
        DeltaTParams {
            mpl: SimDuration::from_millis_f64(self.mpl_ms),
            a_timer: SimDuration::from_millis_f64(self.a_timer_ms),
            r_timer: SimDuration::from_millis_f64(self.r_timer_ms),
            sender_discard_multiple: self.sender_discard_multiple,
            receiver_discard_multiple: self.receiver_discard_multiple,
        }
    }

    pub fn rto(&self) -> SimDuration {
        SimDuration::from_millis_f64(self.rto_ms.unwrap_or(self.r_timer_ms / 4.0))
    }

    pub fn allocate_timeout(&self) -> SimDuration {
        self.allocate_timeout_ms
            .map_or(self.delta().delta_t() * 10, SimDuration::from_millis_f64)
    }

    pub fn enroll_timeout(&self) -> SimDuration {
        self.enroll_timeout_ms
            .map_or(self.delta().delta_t() * 10, SimDuration::from_millis_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Host,
    InteriorRouter,
    BorderRouter,
}

impl NodeKind {
    pub fn min_ranks(self) -> usize {
        match self {
            NodeKind::Host | NodeKind::InteriorRouter => 2,
            NodeKind::BorderRouter => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Host => "host",
            NodeKind::InteriorRouter => "interior-router",
            NodeKind::BorderRouter => "border-router",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    pub ipcps: Vec<IpcpSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IpcpSpec {
    pub name: String,
    pub dif: String,
    pub address: u32,
    /// Lower IPCPs on the same node this one sits on. Empty means every
    /// IPCP of the next lower rank on the node.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub under: Vec<String>,
    /// Overrides the DIF's shared secret (to script enrollment failures).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth: Option<String>,
}

fn default_metric() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub rate_bps: u64,
    pub delay_ms: f64,
    #[serde(default)]
    pub ber: f64,
    #[serde(default = "default_metric")]
    pub metric: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppRole {
    PingInitiator,
    PingResponder,
}

fn default_true() -> bool {
    true
}
fn default_count() -> u64 {
    10
}
fn default_interval() -> f64 {
    100.0
}
fn default_payload() -> usize {
    64
}
fn default_app_timeout() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppSpec {
    pub node: String,
    pub apn: String,
    pub role: AppRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<String>,
    #[serde(default = "default_count")]
    pub count: u64,
    #[serde(default = "default_interval")]
    pub interval_ms: f64,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default)]
    pub reliable: bool,
    #[serde(default)]
    pub ordered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_bandwidth_bps: Option<u64>,
    #[serde(default)]
    pub start_ms: f64,
    /// Wait for outstanding responses after the last request.
    #[serde(default = "default_app_timeout")]
    pub timeout_ms: f64,
    /// Responders only: whether incoming flows are accepted.
    #[serde(default = "default_true")]
    pub accept: bool,
}

impl AppSpec {
    pub fn qos(&self) -> QosRequirements {
        QosRequirements {
            reliable: self.reliable,
            ordered: self.ordered,
            max_delay: self.max_delay_ms.map(SimDuration::from_millis_f64),
            avg_bandwidth: self.avg_bandwidth_bps,
        }
    }

    pub fn apn(&self) -> Apn {
        Apn::parse(&self.apn).unwrap_or_else(|| Apn::new(self.apn.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectoryEntry {
    pub apn: String,
    pub dif: String,
    pub node: String,
}

/// One problem found in a scenario, located by a path such as
/// `nodes[1].ipcps[0].dif` (or a line/column for syntax errors).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(Diagnostic),
    #[error("{} validation error(s):\n{}", .0.len(), .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Diagnostic>),
}

impl ScenarioError {
    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        match self {
            ScenarioError::Parse(d) => vec![d.clone()],
            ScenarioError::Validation(ds) => ds.clone(),
        }
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let path = match e.span() {
            Some(span) => {
                let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                format!("line {line}")
            }
            None => "<input>".to_string(),
        };
        ScenarioError::Parse(Diagnostic {
            path,
            message: e.message().to_string(),
        })
    })?;
    let diags = scenario.validate();
    if diags.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Validation(diags))
    }
}

impl Scenario {
    /// Serializes back to TOML; `parse_scenario(emit())` yields an equal value.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("scenarios always serialize")
    }

    pub fn dif(&self, name: &str) -> Option<&DifSpec> {
        self.difs.iter().find(|d| d.name == name)
    }

    pub fn cubes(&self) -> Vec<QosCube> {
        self.qos_cubes.iter().map(QosCubeSpec::cube).collect()
    }

    /// Every IPCP with its node, in declaration order.
    pub fn ipcps(&self) -> impl Iterator<Item = (&NodeSpec, &IpcpSpec)> {
        self.nodes
            .iter()
            .flat_map(|n| n.ipcps.iter().map(move |i| (n, i)))
    }

    /// Resolved `under` list of an IPCP (explicit or the default).
    pub fn under_of(&self, node: &NodeSpec, ipcp: &IpcpSpec) -> Vec<String> {
        if !ipcp.under.is_empty() {
            return ipcp.under.clone();
        }
        let Some(rank) = self.dif(&ipcp.dif).map(|d| d.rank) else {
            return Vec::new();
        };
        if rank == 0 {
            return Vec::new();
        }
        node.ipcps
            .iter()
            .filter(|o| self.dif(&o.dif).map(|d| d.rank) == Some(rank - 1))
            .map(|o| o.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut err = |path: String, message: String| out.push(Diagnostic { path, message });

        if !(self.stop_time_s > 0.0 && self.stop_time_s.is_finite()) {
            err(
                "stop_time_s".into(),
                "must be a positive number of seconds".into(),
            );
        }

        let mut cube_ids = BTreeSet::new();
        for (i, c) in self.qos_cubes.iter().enumerate() {
            if c.id == QosId::MANAGEMENT.0 {
                err(
                    format!("qos_cubes[{i}].id"),
                    "qos id 0 is reserved for management flows".into(),
                );
            }
            if !cube_ids.insert(c.id) {
                err(
                    format!("qos_cubes[{i}].id"),
                    format!("duplicate qos id {}", c.id),
                );
            }
        }

        let mut dif_names = BTreeSet::new();
        for (i, d) in self.difs.iter().enumerate() {
            let p = |f: &str| format!("difs[{i}].{f}");
            if !dif_names.insert(d.name.as_str()) {
                err(p("name"), format!("duplicate DIF name `{}`", d.name));
            }
            for (f, v) in [
                ("mpl_ms", d.mpl_ms),
                ("a_timer_ms", d.a_timer_ms),
                ("r_timer_ms", d.r_timer_ms),
                ("rto_ms", d.rto_ms.unwrap_or(1.0)),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    err(p(f), "must be a non-negative number of milliseconds".into());
                }
            }
            if d.rto_ms.is_some_and(|r| r <= 0.0) || (d.rto_ms.is_none() && d.r_timer_ms <= 0.0) {
                err(p("rto_ms"), "must be positive".into());
            }
            if d.queue_capacity == 0 {
                err(p("queue_capacity"), "must be at least 1".into());
            }
            if d.max_pdu_payload_bytes == 0 {
                err(p("max_pdu_payload_bytes"), "must be at least 1".into());
            }
            if let Err(e) = d.routing.parse::<RoutingPolicy>() {
                err(p("routing"), e);
            }
            if let Err(e) = d.scheduler.parse::<SchedulingPolicy>() {
                err(p("scheduler"), e);
            }
            if d.receiver_discard_multiple == 0 {
                err(p("receiver_discard_multiple"), "must be at least 1".into());
            }
            if d.sender_discard_multiple < d.receiver_discard_multiple {
                err(
                    p("sender_discard_multiple"),
                    format!(
                        "sender multiple {} must not be below receiver multiple {}",
                        d.sender_discard_multiple, d.receiver_discard_multiple
                    ),
                );
            }
        }

        let mut node_names = BTreeSet::new();
        let mut ipcp_names: BTreeSet<&str> = BTreeSet::new();
        let mut addresses = BTreeSet::new();
        for (ni, n) in self.nodes.iter().enumerate() {
            if !node_names.insert(n.name.as_str()) {
                err(
                    format!("nodes[{ni}].name"),
                    format!("duplicate node name `{}`", n.name),
                );
            }
            let mut ranks = BTreeSet::new();
            for (ii, ip) in n.ipcps.iter().enumerate() {
                let p = |f: &str| format!("nodes[{ni}].ipcps[{ii}].{f}");
                match self.dif(&ip.dif) {
                    Some(d) => {
                        ranks.insert(d.rank);
                        if !ipcp_names.insert(ip.name.as_str()) {
                            err(p("name"), format!("duplicate IPCP name `{}`", ip.name));
                        }
                        if !addresses.insert((ip.dif.as_str(), ip.address)) {
                            err(
                                p("address"),
                                format!("address {} already used in DIF `{}`", ip.address, ip.dif),
                            );
                        }
                    }
                    None => err(p("dif"), format!("unknown DIF `{}`", ip.dif)),
                }
                if n.ipcps[..ii].iter().any(|o| o.dif == ip.dif) {
                    err(
                        p("dif"),
                        format!("node `{}` already has an IPCP in DIF `{}`", n.name, ip.dif),
                    );
                }
            }
            if ranks.len() < n.kind.min_ranks() {
                err(
                    format!("nodes[{ni}]"),
                    format!(
                        "a {} needs IPCPs in at least {} DIF ranks, found {}",
                        n.kind.as_str(),
                        n.kind.min_ranks(),
                        ranks.len()
                    ),
                );
            }
        }

        for (ni, n) in self.nodes.iter().enumerate() {
            for (ii, ip) in n.ipcps.iter().enumerate() {
                let Some(rank) = self.dif(&ip.dif).map(|d| d.rank) else {
                    continue;
                };
                let p = format!("nodes[{ni}].ipcps[{ii}].under");
                if rank == 0 {
                    if !ip.under.is_empty() {
                        err(
                            p,
                            "rank-0 IPCPs sit on the medium and take no `under`".into(),
                        );
                    }
                    continue;
                }
                let under = self.under_of(n, ip);
                if under.is_empty() {
                    err(
                        p.clone(),
                        format!(
                            "no IPCP of rank {} on node `{}` to sit on",
                            rank - 1,
                            n.name
                        ),
                    );
                }
                for u in &under {
                    match n.ipcps.iter().find(|o| &o.name == u) {
                        None => err(
                            p.clone(),
                            format!("`{u}` is not an IPCP of node `{}`", n.name),
                        ),
                        Some(o) if self.dif(&o.dif).map(|d| d.rank) != Some(rank - 1) => {
                            err(p.clone(), format!("`{u}` is not of rank {}", rank - 1))
                        }
                        Some(_) => {}
                    }
                }
            }
        }

        for (li, l) in self.links.iter().enumerate() {
            let p = |f: &str| format!("links[{li}].{f}");
            let mut ends = Vec::new();
            for (f, name) in [("a", &l.a), ("b", &l.b)] {
                match self.ipcps().find(|(_, i)| &i.name == name) {
                    None => err(p(f), format!("unknown IPCP `{name}`")),
                    Some((node, ip)) => {
                        if self.dif(&ip.dif).map(|d| d.rank) != Some(0) {
                            err(p(f), format!("`{name}` is not a rank-0 IPCP"));
                        }
                        ends.push((node.name.as_str(), ip.dif.as_str()));
                    }
                }
            }
            if let [(na, da), (nb, db)] = ends[..] {
                if na == nb {
                    err(p("b"), "a link must join two different nodes".into());
                }
                if da != db {
                    err(
                        p("b"),
                        format!(
                            "link joins DIFs `{da}` and `{db}`; both ends must be in the same DIF"
                        ),
                    );
                }
            }
            if l.rate_bps == 0 {
                err(p("rate_bps"), "must be positive".into());
            }
            if !(l.delay_ms >= 0.0 && l.delay_ms.is_finite()) {
                err(p("delay_ms"), "must be a non-negative number".into());
            }
            if !(0.0..=1.0).contains(&l.ber) {
                err(p("ber"), "must lie in [0, 1]".into());
            }
            if l.metric == 0 {
                err(p("metric"), "must be at least 1".into());
            }
        }

        let mut apns = BTreeSet::new();
        for (ai, a) in self.apps.iter().enumerate() {
            let p = |f: &str| format!("apps[{ai}].{f}");
            if Apn::parse(&a.apn).is_none() {
                err(p("apn"), format!("malformed APN `{}`", a.apn));
            }
            if !apns.insert(a.apn.as_str()) {
                err(p("apn"), format!("duplicate APN `{}`", a.apn));
            }
            if !node_names.contains(a.node.as_str()) {
                err(p("node"), format!("unknown node `{}`", a.node));
            }
            if !self.directory.iter().any(|d| d.apn == a.apn) {
                err(p("apn"), format!("`{}` has no directory entry", a.apn));
            }
            if a.interval_ms < 0.0 || a.start_ms < 0.0 || a.timeout_ms < 0.0 {
                err(p("interval_ms"), "times must be non-negative".into());
            }
            match (a.role, &a.dst) {
                (AppRole::PingInitiator, None) => {
                    err(p("dst"), "a ping initiator needs a destination".into())
                }
                (AppRole::PingInitiator, Some(dst)) => {
                    match self.directory.iter().find(|d| &d.apn == dst) {
                        None => err(
                            p("dst"),
                            format!("destination `{dst}` has no directory entry"),
                        ),
                        Some(entry) => {
                            let local = self.nodes.iter().find(|n| n.name == a.node);
                            if local.is_some_and(|n| !n.ipcps.iter().any(|i| i.dif == entry.dif)) {
                                err(
                                    p("dst"),
                                    format!(
                                        "node `{}` has no IPCP in DIF `{}` where `{dst}` lives",
                                        a.node, entry.dif
                                    ),
                                );
                            }
                        }
                    }
                }
                (AppRole::PingResponder, _) => {}
            }
            let cubes = self.cubes();
            if a.role == AppRole::PingInitiator
                && crate::identifiers::select_cube(&a.qos(), &cubes).is_none()
            {
                // Not fatal: the run reports NoQosCube for this app.
                log::debug!("app {} requests QoS no cube satisfies", a.apn);
            }
        }

        for (di, d) in self.directory.iter().enumerate() {
            let p = |f: &str| format!("directory[{di}].{f}");
            if self.dif(&d.dif).is_none() {
                err(p("dif"), format!("unknown DIF `{}`", d.dif));
            }
            match self.nodes.iter().find(|n| n.name == d.node) {
                None => err(p("node"), format!("unknown node `{}`", d.node)),
                Some(n) => {
                    if !n.ipcps.iter().any(|i| i.dif == d.dif) {
                        err(
                            p("node"),
                            format!("node `{}` has no IPCP in DIF `{}`", d.node, d.dif),
                        );
                    }
                }
            }
            if let Some(app) = self.apps.iter().find(|a| a.apn == d.apn) {
                if app.node != d.node {
                    err(
                        p("node"),
                        format!("`{}` runs on node `{}`, not `{}`", d.apn, app.node, d.node),
                    );
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PING: &str = r#"
name = "ping"
seed = 7
stop_time_s = 5.0

[[qos_cubes]]
id = 1
reliable = true
ordered = true

[[difs]]
name = "Top"
rank = 1
mpl_ms = 10.0
a_timer_ms = 0.1
r_timer_ms = 100.0
rto_ms = 40.0

[[difs]]
name = "L1"
rank = 0
mpl_ms = 5.0
a_timer_ms = 0.1
r_timer_ms = 50.0
rto_ms = 20.0

[[difs]]
name = "L2"
rank = 0
mpl_ms = 5.0
a_timer_ms = 0.1
r_timer_ms = 50.0
rto_ms = 20.0

[[nodes]]
name = "Host1"
kind = "host"
ipcps = [{ name = "H1.top", dif = "Top", address = 1 }, { name = "H1.l1", dif = "L1", address = 1 }]

[[nodes]]
name = "SW"
kind = "interior-router"
ipcps = [
  { name = "SW.top", dif = "Top", address = 2 },
  { name = "SW.l1", dif = "L1", address = 2 },
  { name = "SW.l2", dif = "L2", address = 2 },
]

[[nodes]]
name = "Host2"
kind = "host"
ipcps = [{ name = "H2.top", dif = "Top", address = 3 }, { name = "H2.l2", dif = "L2", address = 1 }]

[[links]]
a = "H1.l1"
b = "SW.l1"
rate_bps = 1000000
delay_ms = 1.0

[[links]]
a = "SW.l2"
b = "H2.l2"
rate_bps = 1000000
delay_ms = 1.0

[[apps]]
node = "Host1"
apn = "A"
role = "ping-initiator"
dst = "B"
count = 3
reliable = true
ordered = true

[[apps]]
node = "Host2"
apn = "B"
role = "ping-responder"

[[directory]]
apn = "A"
dif = "Top"
node = "Host1"

[[directory]]
apn = "B"
dif = "Top"
node = "Host2"
"#;

    fn paths(text: &str) -> Vec<String> {
        match parse_scenario(text) {
            Err(e) => e
                .diagnostics()
                .into_iter()
                .map(|d| format!("{d}"))
                .collect(),
            Ok(_) => vec![],
        }
    }

    #[test]
    fn rto_defaults_to_a_quarter_of_r() {
        let s = parse_scenario(&PING.replace("rto_ms = 40.0\n", "")).unwrap();
        let top = s.dif("Top").unwrap();
        assert_eq!(top.rto_ms, None);
        assert_eq!(top.rto(), SimDuration::from_millis(25));
        let bad = PING.replace("rto_ms = 40.0", "rto_ms = 0.0");
        assert!(parse_scenario(&bad).is_err());
    }

    #[test]
    fn ping_is_valid() {
        let s = parse_scenario(PING).unwrap();
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(
            s.under_of(&s.nodes[1], &s.nodes[1].ipcps[0]),
            vec!["SW.l1", "SW.l2"]
        );
        assert_eq!(
            s.dif("Top").unwrap().allocate_timeout(),
            s.dif("Top").unwrap().delta().delta_t() * 10
        );
    }

    #[test]
    fn border_router_needs_three_ranks() {
        let text = PING.replace("kind = \"interior-router\"", "kind = \"border-router\"");
        let errs = paths(&text);
        assert!(
            errs.iter()
                .any(|e| e
                    .starts_with("nodes[1]: a border-router needs IPCPs in at least 3 DIF ranks")),
            "{errs:?}"
        );
    }

    #[test]
    fn unknown_dif_is_located() {
        let text = PING.replace(
            "{ name = \"H2.top\", dif = \"Top\"",
            "{ name = \"H2.top\", dif = \"Tpo\"",
        );
        let errs = paths(&text);
        assert!(
            errs.iter()
                .any(|e| e.starts_with("nodes[2].ipcps[0].dif: unknown DIF `Tpo`")),
            "{errs:?}"
        );
    }

    #[test]
    fn syntax_error_has_line() {
        let errs = paths("name = \"x\"\nstop_time_s = \n");
        assert_eq!(errs.len(), 1);
        assert!(errs[0].starts_with("line 2"), "{errs:?}");
    }

    #[test]
    fn unknown_field_rejected() {
        let text = PING.replace("seed = 7", "seed = 7\nsede = 8");
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Parse(_))
        ));
    }

    #[test]
    fn sender_multiple_below_receiver_rejected() {
        let text = PING.replace(
            "rto_ms = 40.0",
            "rto_ms = 40.0\nsender_discard_multiple = 1",
        );
        assert!(paths(&text)
            .iter()
            .any(|e| e.starts_with("difs[0].sender_discard_multiple")));
    }

    #[test]
    fn link_must_join_rank0_same_dif() {
        let text = PING.replace("a = \"SW.l2\"", "a = \"SW.top\"");
        let errs = paths(&text);
        assert!(
            errs.iter()
                .any(|e| e.contains("links[1].a: `SW.top` is not a rank-0 IPCP")),
            "{errs:?}"
        );
        let text = PING.replace("b = \"H2.l2\"", "b = \"H1.l1\"");
        assert!(paths(&text).iter().any(|e| e.starts_with("links[1].b")));
    }

    #[test]
    fn reserved_qos_and_dangling_dst() {
        let text = PING
            .replace("id = 1", "id = 0")
            .replace("dst = \"B\"", "dst = \"Nobody\"");
        let errs = paths(&text);
        assert!(errs.iter().any(|e| e.starts_with("qos_cubes[0].id")));
        assert!(errs.iter().any(|e| e.starts_with("apps[0].dst")));
    }

    #[test]
    fn emit_roundtrips() {
        let s = parse_scenario(PING).unwrap();
        let back = parse_scenario(&s.emit()).unwrap();
        assert_eq!(back, s);
    }
}
