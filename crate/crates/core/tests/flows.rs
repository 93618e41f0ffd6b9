mod common;

use common::{load, run_all};
use rinasim_core::conformance::check_all;
use rinasim_core::sim::Simulation;
use rinasim_core::trace::parse_trace;
use rinasim_core::SimTime;

#[test]
fn denied_flow_fails_cleanly() {
    let mut sc = load("ping");
    sc.apps[1].accept = false;
    let (sim, s) = run_all(&sc, 7);
    assert_eq!(s.allocation_failures, 1, "{}", s.render());
    assert!(s.leak.clean(), "{}", s.render());
    assert!(s.counters_reconcile());
    let trace = sim.into_trace();
    assert!(trace.contains("ev=APP_FLOW_DENY"));
    assert!(trace.contains("comp=A/ae ev=APP_ALLOC_FAIL"));
    assert!(!trace.contains("ev=APP_WRITE"));
    assert!(check_all(&parse_trace(&trace).unwrap()).is_empty());
}

#[test]
fn unknown_destination_never_leaves_the_host() {
    let mut sc = load("ping");
    sc.apps[0].dst = Some("Nobody".into());
    let (sim, s) = run_all(&sc, 7);
    assert!(s.leak.clean(), "{}", s.render());
    let trace = sim.into_trace();
    assert!(trace.contains("ev=APP_ALLOC_FAIL"));
    assert!(!trace.contains("kind=CreateFlowRequest"));
}

#[test]
fn stop_time_bounds_the_run() {
    let sc = load("ping");
    let mut sim = Simulation::build(&sc, false);
    sim.set_stop(SimTime::from_secs_f64(0.02));
    let s = sim.run();
    assert!(s.end_time <= SimTime::from_secs_f64(0.02));
    assert!(s.pending_events > 0);
    // Tracing off leaves the trace empty but the run identical.
    assert!(sim.trace().is_empty());
}

#[test]
fn ping_samples_line_up_with_the_responder() {
    let sc = load("ping");
    let (sim, _) = run_all(&sc, 7);
    let samples = sim.samples();
    let log = &sim.responder_log()["B"];
    assert_eq!(samples.iter().map(|p| p.seq).collect::<Vec<_>>(), *log);
    for p in &samples {
        let (one, rtt) = (p.one_way().unwrap(), p.rtt().unwrap());
        assert_eq!(rtt.as_nanos(), 2 * one.as_nanos());
    }
}
