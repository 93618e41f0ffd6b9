//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rinasim_core::conformance::{
    check_all, check_allocation_order, check_deallocation_order, recursion_depth,
};
use rinasim_core::daf::PING_HEADER_LEN;
use rinasim_core::efcp::pdu::{demux, mux, Pdu, PduKind, HEADER_LEN};
use rinasim_core::medium::corruption_probability;
use rinasim_core::sim::Simulation;
use rinasim_core::trace::{parse_trace, TraceRecord};
use rinasim_core::{Address, CepId, ConnectionId, QosId, SimTime};

use common::{load, random_mesh, route_mismatches, run_all, shipped};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn records(sim: Simulation) -> Vec<TraceRecord> {
    parse_trace(&sim.into_trace()).expect("trace parses")
}

fn joined<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn allocation_order() -> Outcome {
    let (sim, _) = run_all(&load("ping"), 7);
    let recs = records(sim);
    let mut bad = check_allocation_order(&recs, "A");
    bad.extend(check_all(&recs));
    ensure(bad.is_empty(), || joined(&bad))?;
    Ok(format!("{} trace lines, 0 violations", recs.len()))
}

fn deallocation_and_leaks() -> Outcome {
    let (sim, s) = run_all(&load("ping"), 7);
    let recs = records(sim);
    let deallocs = recs.iter().filter(|r| r.ev == "FA_DEALLOC").count();
    ensure(deallocs == 1, || {
        format!("expected one FA_DEALLOC, saw {deallocs}")
    })?;
    let bad = check_deallocation_order(&recs);
    ensure(bad.is_empty(), || joined(&bad))?;
    let l = &s.leak;
    ensure(l.clean(), || format!("{l:?}"))?;
    Ok(format!(
        "efcp {} fai {} ports {} ceps {}",
        l.app_efcp_instances, l.app_fais, l.stray_port_ids, l.stray_cep_ids
    ))
}

fn analytic_rtt() -> Outcome {
    let mut notes = Vec::new();
    for payload in [64usize, 512, 1200] {
        let mut sc = load("ping");
        sc.apps[0].payload_bytes = payload;
        // Oracle: one data PDU per hop, wrapped once per rank, with no queueing.
        let ranks = sc.difs.iter().map(|d| d.rank).max().unwrap() as usize + 1;
        let bits = ((payload + PING_HEADER_LEN + ranks * HEADER_LEN) * 8) as u128;
        let one_way: u128 = sc
            .links
            .iter()
            .map(|l| (l.delay_ms * 1e6).round() as u128 + bits * 1_000_000_000 / l.rate_bps as u128)
            .sum();
        let expect = 2 * one_way as u64;
        let (sim, _) = run_all(&sc, sc.seed);
        let samples = sim.samples();
        ensure(samples.len() == sc.apps[0].count as usize, || {
            format!("payload {payload}: {} samples", samples.len())
        })?;
        for p in &samples {
            let got = p.rtt().map(|d| d.as_nanos());
            ensure(got == Some(expect), || {
                format!(
                    "payload {payload} seq {}: rtt {got:?} ns, expected {expect} ns",
                    p.seq
                )
            })?;
        }
        notes.push(format!("{payload}B={expect}ns"));
    }
    Ok(notes.join(" "))
}

fn lossy_delivery() -> Outcome {
    let sc = load("lossy");
    let ber = sc.links[0].ber;
    let data_bits = ((64 + PING_HEADER_LEN + 2 * HEADER_LEN) * 8) as u64;
    let p = corruption_probability(ber, data_bits);
    ensure((p - 0.10).abs() < 1e-3, || format!("per-PDU loss {p:.4}"))?;
    let started = Instant::now();
    let (sim, s) = run_all(&sc, sc.seed);
    let wall = started.elapsed();
    ensure(wall.as_secs_f64() < 5.0, || format!("runtime {wall:?}"))?;
    let count = sc.apps[0].count;
    let log = &sim.responder_log()["Echo"];
    ensure(*log == (0..count).collect::<Vec<_>>(), || {
        format!(
            "responder saw {} SDUs, first out-of-order at {:?}",
            log.len(),
            log.windows(2).position(|w| w[1] != w[0] + 1)
        )
    })?;
    let answered = sim.samples().iter().filter(|p| p.rtt().is_some()).count() as u64;
    ensure(answered == count, || {
        format!("{answered}/{count} echoes returned")
    })?;
    let retx = sim.retransmissions();
    ensure(retx > 0, || "no retransmissions".into())?;
    ensure(s.flow_errors == 0, || {
        format!("{} flow errors", s.flow_errors)
    })?;
    let drops = s.per_rank[&0].medium_drops;
    Ok(format!("{count}/{count} in order, {retx} retransmissions, {drops} medium drops, p={p:.3}, {wall:.2?}"))
}

fn delta_t_discard() -> Outcome {
    let sc = load("discard");
    let top = sc.dif("Top").unwrap();
    let dt_ns = ((top.mpl_ms + top.a_timer_ms + top.r_timer_ms) * 1e6).round() as u64;
    let idle = top.receiver_discard_multiple as u64 * dt_ns;
    let (sim, s) = run_all(&sc, sc.seed);
    let samples = sim.samples();
    let recs = records(sim);
    let owner = "H2.top";
    let discards: Vec<&TraceRecord> = recs
        .iter()
        .filter(|r| {
            r.owner() == owner && r.ev == "EFCP_STATE_DISCARD" && r.get("side") == Some("receiver")
        })
        .collect();
    ensure(!discards.is_empty(), || {
        "no receiver-side discard at the responder".into()
    })?;
    for d in &discards {
        let conn = d.get("conn");
        let last = recs
            .iter()
            .rev()
            .find(|r| {
                r.line < d.line
                    && r.owner() == owner
                    && r.ev == "EFCP_RECV"
                    && r.get("kind") == Some("DATA")
                    && r.get("conn") == conn
            })
            .ok_or("discard with no prior data receipt")?;
        ensure(d.t - last.t == idle, || {
            format!("discard after {} ns idle, expected {idle}", d.t - last.t)
        })?;
        let reopened = recs.iter().any(|r| {
            r.line > d.line && r.owner() == owner && r.ev == "EFCP_OPEN" && r.get("conn") == conn
        });
        let later_data = recs
            .iter()
            .any(|r| r.line > d.line && r.comp == "B/ae" && r.ev == "APP_READ");
        if later_data {
            ensure(reopened, || {
                format!(
                    "traffic after the discard at line {} did not reopen the state",
                    d.line
                )
            })?;
        }
    }
    let ports: std::collections::BTreeSet<_> = recs
        .iter()
        .filter(|r| r.comp == "B/ae" && r.ev == "APP_READ")
        .filter_map(|r| r.get("port"))
        .collect();
    ensure(ports.len() == 1, || {
        format!("responder port-ids changed: {ports:?}")
    })?;
    let done = samples.iter().all(|p| p.rtt().is_some());
    ensure(done && !samples.is_empty(), || {
        "a ping went unanswered".into()
    })?;
    ensure(s.leak.clean(), || format!("{:?}", s.leak))?;
    Ok(format!(
        "{} discards after {idle} ns idle, port {:?} kept, {} pings answered",
        discards.len(),
        ports,
        samples.len()
    ))
}

fn determinism() -> Outcome {
    let sc = load("lossy");
    let trace = |seed| {
        let mut sim = Simulation::build_with_seed(&sc, seed, true);
        sim.set_stop(SimTime::MAX);
        sim.run();
        sim.into_trace()
    };
    let (a, b, c) = (trace(11), trace(11), trace(12));
    ensure(a == b, || "same seed gave different traces".into())?;
    ensure(a != c, || "different seeds gave identical traces".into())?;
    Ok(format!("{} bytes identical; seed 12 differs", a.len()))
}

fn border_recursion() -> Outcome {
    let sc = load("border");
    let (sim, s) = run_all(&sc, sc.seed);
    let samples = sim.samples();
    ensure(
        !samples.is_empty() && samples.iter().all(|p| p.rtt().is_some()),
        || "ping did not complete".into(),
    )?;
    let ranks = sc
        .difs
        .iter()
        .map(|d| d.rank)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    ensure(ranks == 3, || format!("{ranks} ranks"))?;
    let recs = records(sim);
    let depth = recursion_depth(&recs);
    ensure(depth == 2, || {
        format!("nested (N-1) allocation depth {depth}")
    })?;
    let bad = check_all(&recs);
    ensure(bad.is_empty(), || joined(&bad))?;
    ensure(s.leak.clean(), || format!("{:?}", s.leak))?;
    Ok(format!("{} pings, depth {depth}", samples.len()))
}

fn routing_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 60;
    for i in 0..n {
        let routers = rng.random_range(2..=8);
        let mesh = random_mesh(1000 + i, routers);
        let (sim, s) = run_all(&mesh.scenario, mesh.scenario.seed);
        let bad = route_mismatches(&sim, &mesh);
        ensure(bad.is_empty(), || {
            format!("topology {i} ({routers} routers): {}", bad.join("; "))
        })?;
        ensure(s.counters_reconcile(), || {
            format!("topology {i}: counters do not reconcile")
        })?;
    }
    Ok(format!("{n} topologies match the all-pairs oracle"))
}

fn random_pdu(rng: &mut ChaCha8Rng) -> Pdu {
    let kind = [PduKind::Data, PduKind::Ack, PduKind::Mgmt][rng.random_range(0..3)];
    let len = rng.random_range(0..512);
    Pdu {
        src_addr: Address(rng.random()),
        dst_addr: Address(rng.random()),
        connection_id: ConnectionId {
            src_cep: CepId(rng.random()),
            dst_cep: CepId(rng.random()),
            qos_id: QosId(rng.random()),
        },
        seq: rng.random(),
        kind,
        checksum: rng.random::<bool>().then(|| rng.random()),
        sdu_id: rng.random(),
        frag_offset: rng.random(),
        last_fragment: rng.random(),
        drf: rng.random(),
        payload: (0..len).map(|_| rng.random()).collect(),
    }
}

fn mux_and_counters() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..10_000 {
        let pdu = random_pdu(&mut rng);
        let back = demux(&mux(&pdu)).map_err(|e| format!("pdu {i}: {e}"))?;
        ensure(back == pdu, || {
            format!("pdu {i} changed in transit: {pdu:?}")
        })?;
    }
    let all = shipped();
    for (name, sc) in &all {
        let (_, s) = run_all(sc, sc.seed);
        let off: Vec<_> = s
            .per_rank
            .iter()
            .filter(|(_, c)| !c.reconciles())
            .map(|(r, c)| format!("rank {r}: {c:?}"))
            .collect();
        ensure(off.is_empty(), || format!("{name}: {}", off.join("; ")))?;
    }
    let names: Vec<_> = all.iter().map(|(n, _)| n.as_str()).collect();
    Ok(format!(
        "10000 PDUs round-trip; counters reconcile on {}",
        names.join(", ")
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("allocation order", allocation_order),
        ("deallocation order and leak check", deallocation_and_leaks),
        ("analytic RTT", analytic_rtt),
        ("reliable delivery under loss", lossy_delivery),
        ("delta-t state discard", delta_t_discard),
        ("determinism", determinism),
        ("border router recursion", border_recursion),
        ("routing versus all-pairs oracle", routing_oracle),
        ("mux/demux and counter reconciliation", mux_and_counters),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
