mod common;

use common::{random_mesh, route_mismatches, run_all};

#[test]
fn oracle_on_a_known_graph() {
    // Square with one expensive side: 0-1 (1), 1-2 (1), 2-3 (1), 3-0 (10).
    let d = common::floyd_warshall(4, &[(0, 1, 1), (1, 2, 1), (2, 3, 1), (3, 0, 10)]);
    assert_eq!(d[0][3], 3);
    assert_eq!(d[3][0], 3);
    assert_eq!(d[0][2], 2);
}

#[test]
fn random_meshes_install_shortest_paths() {
    for seed in 0..10 {
        let mesh = random_mesh(seed, 3 + (seed as usize % 6));
        let (sim, s) = run_all(&mesh.scenario, seed);
        let bad = route_mismatches(&sim, &mesh);
        assert!(bad.is_empty(), "seed {seed}: {bad:?}\n{}", s.render());
        assert!(s.counters_reconcile());
    }
}
