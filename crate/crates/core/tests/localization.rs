use blockloc_core::geo::{dvhop_avg_hop_distance, rss_at_distance, trilaterate, PathLossParams, Position, RangeMethod};
use blockloc_core::netsim::{deploy, discover_references, hop_counts, run_simulation, Mode, RangingContext, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_topology(seed: u64) -> blockloc_core::netsim::Topology {
    let cfg = SimConfig { n_nodes: 20, area: (60.0, 60.0), range_r: 20.0, anchor_rate: 0.3, ..SimConfig::default() };
    deploy(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Floyd-Warshall over the unit-disk graph, built from positions alone.
fn all_pairs_hops(positions: &[Position], r: f64) -> Vec<Vec<Option<u32>>> {
    let n = positions.len();
    let mut d = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                d[i][j] = Some(0);
            } else if positions[i].distance_to(&positions[j]) <= r {
                d[i][j] = Some(1);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][k], d[k][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

#[test]
fn hop_counts_match_floyd_warshall() {
    for seed in 0..5 {
        let t = small_topology(seed);
        let pos: Vec<Position> = t.nodes().iter().map(|n| n.position).collect();
        let oracle = all_pairs_hops(&pos, t.range_r());
        for (s, row) in oracle.iter().enumerate() {
            assert_eq!(&hop_counts(&t, s), row, "seed {seed} source {s}");
        }
    }
}

#[test]
fn dvhop_hop_size_matches_brute_force() {
    for seed in 0..5 {
        let t = small_topology(seed);
        let pos: Vec<Position> = t.nodes().iter().map(|n| n.position).collect();
        let hops = all_pairs_hops(&pos, t.range_r());
        let anchors: Vec<usize> = (0..t.len()).filter(|&i| t.node(i).role.is_anchor()).collect();
        let (mut dist, mut h) = (0.0, 0u32);
        for (a, &i) in anchors.iter().enumerate() {
            for &j in &anchors[a + 1..] {
                if let Some(k) = hops[i][j] {
                    dist += pos[i].distance_to(&pos[j]);
                    h += k;
                }
            }
        }
        let anchor_pos: Vec<Position> = anchors.iter().map(|&i| pos[i]).collect();
        let got = dvhop_avg_hop_distance(&anchor_pos, |a, b| hops[anchors[a]][anchors[b]]);
        if h == 0 {
            assert!(got.is_err());
        } else {
            let expected = dist / h as f64;
            assert!((got.unwrap() - expected).abs() <= 1e-12 * expected, "seed {seed}");
        }
    }
}

#[test]
fn discovery_uses_rssi_for_one_hop_and_dvhop_beyond() {
    let cfg = SimConfig { n_nodes: 60, difficulty: 0, mode: Mode::Insecure, seed: 3, ..SimConfig::default() };
    let out = run_simulation(&cfg).unwrap();
    let t = &out.topology;
    let ctx = RangingContext::new(t, cfg.pathloss, 1, cfg.max_hopcount).with_anchor_hop_size(t, &out.ledger);
    let pos: Vec<Position> = t.nodes().iter().map(|n| n.position).collect();
    let hops = all_pairs_hops(&pos, t.range_r());
    let unknown = (0..t.len()).find(|&i| !t.node(i).role.is_anchor()).unwrap();
    let refs = discover_references(unknown, 2, t, &out.ledger, &ctx);
    let mut expected: Vec<usize> = (0..t.len())
        .filter(|&j| j != unknown && out.ledger.contains(&t.node(j).id))
        .filter(|&j| hops[unknown][j].is_some_and(|h| h <= 2))
        .collect();
    let mut got: Vec<usize> = refs.iter().map(|(id, _)| t.index_of(id).unwrap()).collect();
    expected.sort_unstable();
    got.sort_unstable();
    assert_eq!(got, expected);
    for (id, est) in &refs {
        let h = hops[unknown][t.index_of(id).unwrap()].unwrap();
        assert_eq!(est.hops, h);
        let want = if h == 1 { RangeMethod::Rssi } else { RangeMethod::DvHop };
        assert_eq!(est.method, want);
    }
}

#[test]
fn modes_share_topology_and_behaviors() {
    let base = SimConfig { malicious_rate: 0.3, difficulty: 0, seed: 77, ..SimConfig::default() };
    let s = run_simulation(&SimConfig { mode: Mode::Secure, ..base.clone() }).unwrap();
    let i = run_simulation(&SimConfig { mode: Mode::Insecure, ..base }).unwrap();
    for (a, b) in s.topology.nodes().iter().zip(i.topology.nodes()) {
        assert_eq!((a.id, a.position, a.role), (b.id, b.position, b.role));
    }
}

#[test]
fn noise_free_run_localizes_one_hop_nodes_exactly() {
    let cfg = SimConfig {
        anchor_rate: 0.5,
        pathloss: PathLossParams { sigma: 0.0, ..PathLossParams::default() },
        difficulty: 0,
        max_hopcount: 1,
        seed: 12,
        ..SimConfig::default()
    };
    let out = run_simulation(&cfg).unwrap();
    assert!(!out.estimates.is_empty());
    for (&i, est) in &out.estimates {
        assert!(est.distance_to(&out.topology.node(i).position) < 1e-6);
    }
}

proptest! {
    #[test]
    fn trilateration_exact_without_noise(
        tx in 0.0f64..100.0, ty in 0.0f64..100.0,
        refs in proptest::collection::vec((0.0f64..100.0, 0.0f64..100.0), 3..9),
    ) {
        let target = Position::new(tx, ty);
        let refs: Vec<(Position, f64)> = refs
            .into_iter()
            .map(|(x, y)| { let p = Position::new(x, y); (p, p.distance_to(&target)) })
            .collect();
        // Well-spread references only: the triangle of the first three has area.
        let (a, b, c) = (refs[0].0, refs[1].0, refs[2].0);
        let area = ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y)).abs() / 2.0;
        prop_assume!(area > 50.0);
        let est = trilaterate(&refs).unwrap();
        prop_assert!(est.distance_to(&target) < 1e-6, "est {:?} target {:?}", est, target);
    }

    #[test]
    fn rss_decreases_with_distance(d1 in 0.01f64..1000.0, d2 in 0.01f64..1000.0) {
        prop_assume!(d1 < d2);
        let p = PathLossParams::default();
        prop_assert!(rss_at_distance(d1, &p, 0.0).unwrap() > rss_at_distance(d2, &p, 0.0).unwrap());
    }
}
