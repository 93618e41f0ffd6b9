#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rinasim_core::scenario::{parse_scenario, Scenario};
use rinasim_core::sim::{RunSummary, Simulation};
use rinasim_core::SimTime;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load(name: &str) -> Scenario {
    let path = scenarios_dir().join(format!("{name}.toml"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_scenario(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Every scenario file that ships with the repository.
pub fn shipped() -> Vec<(String, Scenario)> {
    let mut names: Vec<_> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "toml")
                .then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

/// Runs to completion, ignoring the scenario's stop time.
pub fn run_all(sc: &Scenario, seed: u64) -> (Simulation, RunSummary) {
    let mut sim = Simulation::build_with_seed(sc, seed, true);
    sim.set_stop(SimTime::MAX);
    let s = sim.run();
    (sim, s)
}

/// A connected random mesh of `routers` nodes. Edges are returned as
/// (a, b, metric) over 0-based router indices; router i has address i+1.
pub struct Mesh {
    pub routers: usize,
    pub edges: Vec<(usize, usize, u32)>,
    pub scenario: Scenario,
}

pub fn random_mesh(seed: u64, routers: usize) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    let has = |a: usize, b: usize, edges: &Vec<(usize, usize, u32)>| {
        edges
            .iter()
            .any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a))
    };
    // Random spanning tree, then a few chords.
    for i in 1..routers {
        let j = rng.random_range(0..i);
        let m = rng.random_range(1..=10);
        edges.push((j, i, m));
    }
    let extra = rng.random_range(0..=routers);
    for _ in 0..extra {
        let a = rng.random_range(0..routers);
        let b = rng.random_range(0..routers);
        if a != b && !has(a, b, &edges) {
            let m = rng.random_range(1..=10);
            edges.push((a, b, m));
        }
    }

    let mut t = String::new();
    writeln!(
        t,
        "name = \"mesh-{seed}\"\nseed = {seed}\nstop_time_s = 5.0\n"
    )
    .unwrap();
    t.push_str(
        "[[difs]]\nname = \"Top\"\nrank = 1\nmpl_ms = 20.0\na_timer_ms = 0.1\nr_timer_ms = 200.0\nrto_ms = 60.0\n\n\
         [[difs]]\nname = \"Mesh\"\nrank = 0\nmpl_ms = 5.0\na_timer_ms = 0.1\nr_timer_ms = 50.0\nrto_ms = 20.0\neager_enrollment = true\n\n",
    );
    for i in 0..routers {
        writeln!(
            t,
            "[[nodes]]\nname = \"N{i}\"\nkind = \"interior-router\"\nipcps = [{{ name = \"R{i}.top\", dif = \"Top\", address = {a} }}, {{ name = \"R{i}.mesh\", dif = \"Mesh\", address = {a} }}]\n",
            a = i + 1
        )
        .unwrap();
    }
    for &(a, b, m) in &edges {
        writeln!(t, "[[links]]\na = \"R{a}.mesh\"\nb = \"R{b}.mesh\"\nrate_bps = 10000000\ndelay_ms = 0.5\nmetric = {m}\n").unwrap();
    }
    let scenario = parse_scenario(&t).unwrap_or_else(|e| panic!("{e}\n{t}"));
    Mesh {
        routers,
        edges,
        scenario,
    }
}

/// All-pairs shortest path costs, by brute force over every intermediate.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize, u32)]) -> Vec<Vec<u64>> {
    let inf = u64::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b, m) in edges {
        let m = m as u64;
        d[a][b] = d[a][b].min(m);
        d[b][a] = d[b][a].min(m);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Follows the installed next hops from every router to every other one and
/// lists each pair whose walked cost differs from the oracle.
#[allow(clippy::needless_range_loop)]
pub fn route_mismatches(sim: &Simulation, mesh: &Mesh) -> Vec<String> {
    let n = mesh.routers;
    let oracle = floyd_warshall(n, &mesh.edges);
    let metric = |a: usize, b: usize| {
        mesh.edges
            .iter()
            .filter(|&&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a))
            .map(|e| e.2 as u64)
            .min()
    };
    let tables: Vec<_> = (0..n)
        .map(|i| sim.next_hops(&format!("R{i}.mesh")).unwrap_or_default())
        .collect();
    let mut bad = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s == d {
                continue;
            }
            let (mut cur, mut cost, mut hops) = (s, 0u64, 0);
            while cur != d && hops <= n {
                let Some(nh) = tables[cur].get(&rinasim_core::Address(d as u32 + 1)) else {
                    break;
                };
                let next = nh.0 as usize - 1;
                let Some(m) = metric(cur, next) else { break };
                cost += m;
                cur = next;
                hops += 1;
            }
            if cur != d || cost != oracle[s][d] {
                bad.push(format!(
                    "R{s}->R{d}: walked {cost} (reached={}) oracle {}",
                    cur == d,
                    oracle[s][d]
                ));
            }
        }
    }
    bad
}
