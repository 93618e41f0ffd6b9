//! Trace checkers. Each takes a parsed trace and reports every place the
//! run broke one of the protocol's ordering or state rules.

use std::collections::BTreeMap;
use std::fmt;

use crate::flow_alloc::{transition_allowed, FaiState};
use crate::trace::TraceRecord;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub line: usize,
    pub rule: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: [{}] {}", self.line, self.rule, self.message)
    }
}

fn v(line: usize, rule: &'static str, message: String) -> Violation {
    Violation {
        line,
        rule,
        message,
    }
}

fn is(r: &TraceRecord, ev: &str, pairs: &[(&str, &str)]) -> bool {
    r.ev == ev && pairs.iter().all(|(k, val)| r.get(k) == Some(val))
}

/// Index of the first record at or after `from` matching `pred`.
fn find_from(
    recs: &[TraceRecord],
    from: usize,
    pred: impl Fn(&TraceRecord) -> bool,
) -> Option<usize> {
    recs.iter().skip(from).position(pred).map(|i| i + from)
}

pub fn check_monotone(recs: &[TraceRecord]) -> Vec<Violation> {
    recs.windows(2)
        .filter(|w| w[1].t < w[0].t)
        .map(|w| {
            v(
                w[1].line,
                "monotone",
                format!("t={} after t={}", w[1].t, w[0].t),
            )
        })
        .collect()
}

/// Replays every FAI_STATE line: each must continue from the instance's
/// previous state along an allowed edge, for an instance introduced
/// earlier by FA_ALLOC_REQ or FA_FLOW_NOTIFY.
pub fn check_fai_transitions(recs: &[TraceRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut state: BTreeMap<(String, String), FaiState> = BTreeMap::new();
    for r in recs {
        let key = || {
            (
                r.owner().to_string(),
                r.get("fai").unwrap_or("").to_string(),
            )
        };
        match r.ev.as_str() {
            "FA_ALLOC_REQ" | "FA_FLOW_NOTIFY" => {
                state.insert(key(), FaiState::Null);
            }
            "FAI_STATE" => {
                let (Some(from), Some(to)) = (
                    r.get("from").and_then(FaiState::parse),
                    r.get("to").and_then(FaiState::parse),
                ) else {
                    out.push(v(r.line, "fai", "unparseable FAI_STATE".into()));
                    continue;
                };
                match state.get(&key()) {
                    None => out.push(v(
                        r.line,
                        "fai",
                        format!("FAI {} at {} was never introduced", key().1, key().0),
                    )),
                    Some(&cur) if cur != from => out.push(v(
                        r.line,
                        "fai",
                        format!(
                            "FAI {} leaves {} but was in {}",
                            key().1,
                            from.as_str(),
                            cur.as_str()
                        ),
                    )),
                    _ => {}
                }
                if !transition_allowed(from, to) {
                    out.push(v(
                        r.line,
                        "fai",
                        format!(
                            "transition {} -> {} is not allowed",
                            from.as_str(),
                            to.as_str()
                        ),
                    ));
                }
                state.insert(key(), to);
            }
            _ => {}
        }
    }
    out
}

/// A CreateFlowRequest may only leave toward a next hop this IPCP has
/// already enrolled with.
pub fn check_enrollment_guard(recs: &[TraceRecord]) -> Vec<Violation> {
    let mut enrolled: BTreeMap<(String, String), bool> = BTreeMap::new();
    let mut out = Vec::new();
    for r in recs {
        if r.ev == "ENROLL_STATE" {
            let peer = r.get("peer").unwrap_or("").to_string();
            enrolled.insert(
                (r.owner().to_string(), peer),
                r.get("state") == Some("ENROLLED"),
            );
        } else if is(r, "RIBD_SEND", &[("kind", "CreateFlowRequest")]) {
            let nh = r.get("next_hop").unwrap_or("-");
            if nh == r.get("dst").unwrap_or("") && nh == "-" {
                continue;
            }
            if !enrolled
                .get(&(r.owner().to_string(), nh.to_string()))
                .copied()
                .unwrap_or(false)
            {
                out.push(v(
                    r.line,
                    "enrollment",
                    format!(
                        "{} sent CreateFlowRequest via {nh} before enrolling with it",
                        r.owner()
                    ),
                ));
            }
        }
    }
    out
}

/// Every management message leaves only after the management (N-1)-flow to
/// its next hop is ready.
pub fn check_carrier_before_send(recs: &[TraceRecord]) -> Vec<Violation> {
    let mut ready: BTreeMap<(String, String), ()> = BTreeMap::new();
    let mut out = Vec::new();
    for r in recs {
        if is(r, "RA_N1_READY", &[("qos", "0")]) {
            ready.insert(
                (
                    r.owner().to_string(),
                    r.get("peer").unwrap_or("").to_string(),
                ),
                (),
            );
        } else if r.ev == "RIBD_SEND" {
            let nh = r.get("next_hop").unwrap_or("-");
            if nh != "-" && !ready.contains_key(&(r.owner().to_string(), nh.to_string())) {
                // A reply to a peer whose flow is being set up right now is
                // queued by the RA, so only flag kinds that start an exchange.
                if matches!(r.get("kind"), Some("MConnect" | "CreateFlowRequest")) {
                    out.push(v(
                        r.line,
                        "carrier",
                        format!(
                            "{} sent {} via {nh} with no management flow",
                            r.owner(),
                            r.ev
                        ),
                    ));
                }
            }
        }
    }
    out
}

/// The five allocation phases for every flow requested by application
/// `app`: management flow, enrollment, CreateFlowRequest,
/// CreateFlowResponse(+), first data write.
pub fn check_allocation_order(recs: &[TraceRecord], app: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut found = false;
    for (i, r) in recs.iter().enumerate() {
        if !is(r, "FA_ALLOC_REQ", &[("src", app)]) {
            continue;
        }
        found = true;
        let owner = r.owner().to_string();
        let Some(req) = find_from(recs, i, |x| {
            x.owner() == owner
                && is(
                    x,
                    "RIBD_SEND",
                    &[("kind", "CreateFlowRequest"), ("src_apn", app)],
                )
        }) else {
            out.push(v(
                r.line,
                "allocation",
                format!("{app}: no CreateFlowRequest was ever sent"),
            ));
            continue;
        };
        let nh = recs[req].get("next_hop").unwrap_or("-").to_string();
        let before = |pred: &dyn Fn(&TraceRecord) -> bool| recs[..req].iter().rposition(pred);
        let mgmt =
            before(&|x| x.owner() == owner && is(x, "RA_N1_READY", &[("qos", "0"), ("peer", &nh)]));
        let connecting = before(&|x| {
            x.owner() == owner && is(x, "ENROLL_STATE", &[("peer", &nh), ("state", "CONNECTING")])
        });
        let mconnect_in = before(&|x| {
            x.owner() == owner && is(x, "RIBD_RECV", &[("kind", "MConnect"), ("src", &nh)])
        });
        let enrolled = before(&|x| {
            x.owner() == owner && is(x, "ENROLL_STATE", &[("peer", &nh), ("state", "ENROLLED")])
        });
        match (mgmt, enrolled) {
            (None, _) => out.push(v(
                recs[req].line,
                "allocation",
                format!("{app}: no management flow to {nh} before the request"),
            )),
            (_, None) => out.push(v(
                recs[req].line,
                "allocation",
                format!("{app}: not enrolled with {nh} before the request"),
            )),
            (Some(m), Some(e)) => {
                // Enrollment starts either here (CONNECTING) or at the peer
                // (incoming MConnect); either way after the management flow.
                let start = connecting.or(mconnect_in).unwrap_or(e);
                if start < m {
                    out.push(v(
                        recs[start].line,
                        "allocation",
                        format!("{app}: enrollment with {nh} began before its management flow"),
                    ));
                }
                if e < start {
                    out.push(v(
                        recs[e].line,
                        "allocation",
                        format!("{app}: enrolled with {nh} before enrollment began"),
                    ));
                }
            }
        }
        let Some(resp) = find_from(recs, req, |x| {
            x.owner() == owner
                && is(
                    x,
                    "RIBD_RECV",
                    &[
                        ("kind", "CreateFlowResponse"),
                        ("src_apn", app),
                        ("result", "+"),
                    ],
                )
        }) else {
            out.push(v(
                recs[req].line,
                "allocation",
                format!("{app}: no positive CreateFlowResponse"),
            ));
            continue;
        };
        let ae = format!("{app}/ae");
        let first_write = recs
            .iter()
            .position(|x| x.comp == ae && is(x, "APP_WRITE", &[("op", "write")]));
        match first_write {
            Some(w) if w < resp => out.push(v(
                recs[w].line,
                "allocation",
                format!("{app}: data written before CreateFlowResponse(+)"),
            )),
            None => out.push(v(
                recs[resp].line,
                "allocation",
                format!("{app}: no data PDU after allocation"),
            )),
            _ => {}
        }
    }
    if !found {
        out.push(v(
            0,
            "allocation",
            format!("{app}: no allocation request in the trace"),
        ));
    }
    out
}

/// Deallocation: app release, then DeleteFlowRequest; the peer removes its
/// EFCP before answering; the initiator removes its EFCP only after the
/// answer.
pub fn check_deallocation_order(recs: &[TraceRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        if r.ev != "FA_DEALLOC" {
            continue;
        }
        let owner = r.owner().to_string();
        let (src, dst) = (
            r.get("src").unwrap_or("").to_string(),
            r.get("dst").unwrap_or("").to_string(),
        );
        let port = r.get("port").unwrap_or("");
        let ae = format!("{src}/ae");
        let released = recs[..i]
            .iter()
            .any(|x| x.comp == ae && is(x, "APP_RELEASE", &[("port", port)]));
        if !released {
            out.push(v(
                r.line,
                "deallocation",
                format!("{src}: DeleteFlowRequest without an application release"),
            ));
        }
        let flow = [("src_apn", src.as_str()), ("dst_apn", dst.as_str())];
        let kind = |k: &'static str| move |x: &TraceRecord| x.get("kind") == Some(k);
        let Some(req) = find_from(recs, i, |x| {
            x.owner() == owner
                && x.ev == "RIBD_SEND"
                && kind("DeleteFlowRequest")(x)
                && is(x, "RIBD_SEND", &flow)
        }) else {
            out.push(v(
                r.line,
                "deallocation",
                format!("{src}: no DeleteFlowRequest sent"),
            ));
            continue;
        };
        let Some(peer_in) = find_from(recs, req, |x| {
            is(x, "RIBD_RECV", &flow) && kind("DeleteFlowRequest")(x)
        }) else {
            out.push(v(
                recs[req].line,
                "deallocation",
                format!("{src}: DeleteFlowRequest never arrived"),
            ));
            continue;
        };
        let peer = recs[peer_in].owner().to_string();
        let Some(peer_resp) = find_from(recs, peer_in, |x| {
            x.owner() == peer && is(x, "RIBD_SEND", &flow) && kind("DeleteFlowResponse")(x)
        }) else {
            out.push(v(
                recs[peer_in].line,
                "deallocation",
                format!("{peer}: no DeleteFlowResponse"),
            ));
            continue;
        };
        let peer_removed = recs[peer_in..peer_resp]
            .iter()
            .any(|x| x.owner() == peer && x.ev == "EFCP_REMOVE");
        if !peer_removed {
            out.push(v(
                recs[peer_resp].line,
                "deallocation",
                format!("{peer}: answered before tearing down its EFCP"),
            ));
        }
        let Some(back) = find_from(recs, peer_resp, |x| {
            x.owner() == owner && is(x, "RIBD_RECV", &flow) && kind("DeleteFlowResponse")(x)
        }) else {
            out.push(v(
                recs[peer_resp].line,
                "deallocation",
                format!("{src}: DeleteFlowResponse never arrived"),
            ));
            continue;
        };
        let mine = format!("{}.", recs[req].get("scep").unwrap_or("?"));
        let is_mine = |x: &TraceRecord| {
            x.owner() == owner
                && x.ev == "EFCP_REMOVE"
                && x.get("conn").is_some_and(|c| c.starts_with(&mine))
        };
        if let Some(e) = recs[i..back].iter().find(|x| is_mine(x)) {
            out.push(v(
                e.line,
                "deallocation",
                format!("{owner}: EFCP removed before DeleteFlowResponse"),
            ));
        }
        if find_from(recs, back, is_mine).is_none() {
            out.push(v(
                recs[back].line,
                "deallocation",
                format!("{owner}: EFCP never removed after DeleteFlowResponse"),
            ));
        }
    }
    out
}

/// Longest chain of nested (N-1) allocations that ends at the medium,
/// counted in descents below the first requesting IPCP.
pub fn recursion_depth(recs: &[TraceRecord]) -> usize {
    let allocs: Vec<(usize, &str, &str)> = recs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.ev == "RA_N1_ALLOC")
        .map(|(i, r)| (i, r.owner(), r.get("target").unwrap_or("")))
        .collect();
    fn depth(allocs: &[(usize, &str, &str)], k: usize) -> Option<usize> {
        let (i, _, target) = allocs[k];
        if target == "medium" {
            return Some(0);
        }
        allocs
            .iter()
            .enumerate()
            .filter(|(_, (j, owner, _))| *j > i && *owner == target)
            .filter_map(|(m, _)| depth(allocs, m))
            .max()
            .map(|d| d + 1)
    }
    (0..allocs.len())
        .filter_map(|k| depth(&allocs, k))
        .max()
        .unwrap_or(0)
}

/// Every checker that applies to any run.
pub fn check_all(recs: &[TraceRecord]) -> Vec<Violation> {
    let mut out = check_monotone(recs);
    out.extend(check_fai_transitions(recs));
    out.extend(check_enrollment_guard(recs));
    out.extend(check_carrier_before_send(recs));
    out.extend(check_deallocation_order(recs));
    out.sort_by_key(|x| x.line);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse_trace;

    fn recs(text: &str) -> Vec<TraceRecord> {
        parse_trace(text).unwrap()
    }

    #[test]
    fn monotone_flags_backwards_time() {
        let r = recs("t=5 node=n comp=a/x ev=E\nt=4 node=n comp=a/x ev=E\n");
        assert_eq!(check_monotone(&r).len(), 1);
    }

    #[test]
    fn fai_replay_accepts_legal_and_rejects_skips() {
        let ok = "t=0 node=n comp=X/fa ev=FA_ALLOC_REQ fai=1\n\
                  t=0 node=n comp=X/fa ev=FAI_STATE fai=1 from=NULL to=ALLOC_PENDING\n\
                  t=1 node=n comp=X/fa ev=FAI_STATE fai=1 from=ALLOC_PENDING to=ALLOCATED\n";
        assert!(check_fai_transitions(&recs(ok)).is_empty());
        let skip = "t=0 node=n comp=X/fa ev=FA_ALLOC_REQ fai=1\n\
                    t=0 node=n comp=X/fa ev=FAI_STATE fai=1 from=NULL to=ALLOC_PENDING\n\
                    t=1 node=n comp=X/fa ev=FAI_STATE fai=1 from=ALLOC_PENDING to=DEALLOC_PENDING\n";
        assert_eq!(check_fai_transitions(&recs(skip)).len(), 1);
        let unknown = "t=0 node=n comp=X/fa ev=FAI_STATE fai=9 from=NULL to=ALLOC_PENDING\n";
        assert_eq!(check_fai_transitions(&recs(unknown)).len(), 1);
    }

    #[test]
    fn guard_flags_request_before_enrollment() {
        let bad = "t=0 node=n comp=X/ribd ev=RIBD_SEND kind=CreateFlowRequest dst=3 next_hop=2\n";
        assert_eq!(check_enrollment_guard(&recs(bad)).len(), 1);
        let good = "t=0 node=n comp=X/enroll ev=ENROLL_STATE peer=2 state=ENROLLED\n\
                    t=1 node=n comp=X/ribd ev=RIBD_SEND kind=CreateFlowRequest dst=3 next_hop=2\n";
        assert!(check_enrollment_guard(&recs(good)).is_empty());
    }

    #[test]
    fn depth_follows_targets_down_to_medium() {
        let t = "t=0 node=n comp=T/ra ev=RA_N1_ALLOC target=M\n\
                 t=0 node=n comp=M/ra ev=RA_N1_ALLOC target=L\n\
                 t=0 node=n comp=L/ra ev=RA_N1_ALLOC target=medium\n";
        assert_eq!(recursion_depth(&recs(t)), 2);
        // A chain that never reaches the medium does not count.
        let t = "t=0 node=n comp=T/ra ev=RA_N1_ALLOC target=M\n";
        assert_eq!(recursion_depth(&recs(t)), 0);
    }
}
