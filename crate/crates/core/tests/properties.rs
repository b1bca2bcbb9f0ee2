use std::collections::{BTreeMap, BTreeSet};

use laneless::dynamics::{y_acceleration, y_acceleration_matrix, GainParams};
use laneless::equilibrium::{compute_c_from_template, compute_z_local, solve_y_equilibrium};
use laneless::formation::{
    build_formation_graphs, has_directed_spanning_tree, laplacian, redistribute_weights, BuildContext,
    InfluenceGraph,
};
use laneless::stability::{analyze_reduced, gamma_matrix, impulse_admissible};
use laneless::{Axis, CarId, CarRole, CarState, GeometryParams, Snapshot, SnapshotF32};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Levels of one to three cars below a leader, each car offset by a small
/// jitter from a regular grid.
fn formation() -> impl Strategy<Value = Snapshot> {
    prop::collection::vec(prop::collection::vec((-4.0..4.0f64, -2.0..2.0f64), 1..=3), 1..=3).prop_map(|levels| {
        let mut s = Snapshot::new().with(0, CarState::new(CarRole::PhantomLeader, -45.0, 0.0, 0.0, 10.0));
        let mut id = 1;
        for (l, cars) in levels.iter().enumerate() {
            for (r, (dx, dy)) in cars.iter().enumerate() {
                let x = -30.0 * (r + 1) as f64 + dx;
                let y = -50.0 * (l + 1) as f64 + dy;
                s.insert(CarId(id), CarState::new(CarRole::Regular, x, y, 0.0, 10.0));
                id += 1;
            }
        }
        s
    })
}

/// Random directed graph on nodes `0..n` rooted at 0, as an edge list.
fn edges(n: u32) -> impl Strategy<Value = Vec<(u32, u32, f64)>> {
    prop::collection::vec((0..n, 1..n, 0.1..2.0f64), 0..(3 * n as usize))
        .prop_map(|v| v.into_iter().filter(|(a, b, _)| a != b).collect())
}

fn graph_of(n: u32, edges: &[(u32, u32, f64)]) -> InfluenceGraph<f64> {
    let mut g = InfluenceGraph::new(Axis::Y, CarId(0));
    for i in 1..n {
        g.add_node(CarId(i));
    }
    for &(a, b, w) in edges {
        if g.weight(CarId(a), CarId(b)).is_none() {
            g.add_edge(CarId(a), CarId(b), w).unwrap();
        }
    }
    g
}

/// Reachability through repeated relaxation of the adjacency relation.
fn reachable_by_closure(n: u32, edges: &[(u32, u32, f64)]) -> BTreeSet<u32> {
    let mut reach: BTreeSet<u32> = [0].into();
    loop {
        let before = reach.len();
        for &(a, b, _) in edges {
            if reach.contains(&a) {
                reach.insert(b);
            }
        }
        if reach.len() == before {
            return reach.into_iter().filter(|v| *v < n).collect();
        }
    }
}

/// A level-structured longitudinal graph: each car follows a nonempty
/// subset of the level above, weights summing to one.
fn layered() -> impl Strategy<Value = InfluenceGraph<f64>> {
    prop::collection::vec(prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 1..=3), 1..=4).prop_map(
        |levels| {
            let mut g = InfluenceGraph::new(Axis::Y, CarId::LEADER);
            let mut above = vec![CarId::LEADER];
            let mut id = 1;
            for cars in levels {
                let mut here = Vec::new();
                for picks in cars {
                    let car = CarId(id);
                    id += 1;
                    g.add_node(car);
                    let mut chosen: Vec<CarId> = above.iter().zip(&picks).filter(|(_, p)| **p).map(|(a, _)| *a).collect();
                    if chosen.is_empty() {
                        chosen.push(above[0]);
                    }
                    let w = 1.0 / chosen.len() as f64;
                    for from in chosen {
                        g.add_edge(from, car, w).unwrap();
                    }
                    here.push(car);
                }
                above = here;
            }
            g
        },
    )
}

fn ordering(g: &InfluenceGraph<f64>) -> Vec<CarId> {
    g.nodes().iter().copied().collect()
}

proptest! {
    #[test]
    fn graphs_ignore_translation(s in formation(), tx in -500.0..500.0f64, ty in -1e4..1e4f64) {
        let geom = GeometryParams::default();
        let ctx = BuildContext::new(1.0);
        let mut moved = s.clone();
        for c in moved.cars.values_mut() {
            c.x += tx;
            c.y += ty;
        }
        let a = build_formation_graphs(&s, &geom, &ctx, None, None);
        let b = build_formation_graphs(&moved, &geom, &ctx, None, None);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(&a.levels, &b.levels);
            for (ga, gb) in [(&a.y, &b.y), (&a.x, &b.x)] {
                prop_assert_eq!(ga.edge_set(), gb.edge_set());
                for (from, to, w) in ga.edges() {
                    prop_assert!((w - gb.weight(from, to).unwrap()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn spanning_tree_matches_closure(n in 1u32..8, e in edges(8)) {
        let e: Vec<_> = e.into_iter().filter(|(a, b, _)| *a < n && *b < n).collect();
        let g = graph_of(n, &e);
        let reach = reachable_by_closure(n, &e);
        prop_assert_eq!(has_directed_spanning_tree(&g), reach.len() == n as usize);
    }

    #[test]
    fn redistributed_rows_sum_to_total(n in 2u32..8, e in edges(8), total in 0.1..5.0f64) {
        let e: Vec<_> = e.into_iter().filter(|(a, b, _)| *a < n && *b < n).collect();
        let g = graph_of(n, &e);
        match redistribute_weights(&g, total) {
            Ok(r) => {
                for node in r.nodes() {
                    if *node != CarId(0) {
                        prop_assert!((r.in_weight(*node) - total).abs() < 1e-12);
                    }
                }
            }
            Err(_) => prop_assert!(g.nodes().iter().any(|v| *v != CarId(0) && g.in_degree(*v) == 0)),
        }
    }

    #[test]
    fn per_car_law_matches_matrix_form(
        g in layered(),
        ys in prop::collection::vec(-300.0..0.0f64, 13),
        vs in prop::collection::vec(8.0..12.0f64, 13),
    ) {
        let gains = GainParams::default();
        let mut s = Snapshot::new();
        for (n, id) in g.nodes().iter().enumerate() {
            let role = if *id == CarId::LEADER { CarRole::PhantomLeader } else { CarRole::Regular };
            s.insert(*id, CarState::new(role, 0.0, ys[n], 0.0, vs[n]));
        }
        let bundle = laplacian(&g, &ordering(&g)).unwrap();
        let stacked = y_acceleration_matrix(&bundle, &s, &gains);
        for (a, id) in bundle.state_ids.iter().enumerate() {
            prop_assert!((stacked[a] - y_acceleration(*id, &s, &g, &gains)).abs() < 1e-12);
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point(g in layered(), leader_y in -1e3..1e3f64, g_y in 10.0..80.0f64) {
        let gains = GainParams { g_y, ..GainParams::default() };
        let bundle = laplacian(&g, &ordering(&g)).unwrap();
        let y = solve_y_equilibrium(&bundle, g_y, 1.0, leader_y, &BTreeMap::new()).unwrap();
        let mut s = Snapshot::new();
        for (id, yi) in bundle.ordering.iter().zip(&y) {
            let role = if *id == CarId::LEADER { CarRole::PhantomLeader } else { CarRole::Regular };
            s.insert(*id, CarState::new(role, 0.0, *yi, 0.0, 10.0));
        }
        for id in &bundle.state_ids {
            prop_assert!(y_acceleration(*id, &s, &g, &gains).abs() < 1e-10);
        }
    }

    #[test]
    fn single_precision_tracks_double(
        g in layered(),
        ys in prop::collection::vec(-300.0..0.0f64, 13),
        vs in prop::collection::vec(8.0..12.0f64, 13),
    ) {
        let gains = GainParams::default();
        let gains32 = GainParams::<f32> {
            b: 0.4, k: 0.001, b_x: gains.b_x as f32, k_x: gains.k_x as f32,
            g_y: 50.0, g_x: gains.g_x as f32, weight_sum: 1.0,
        };
        let mut g32 = InfluenceGraph::<f32>::new(Axis::Y, CarId::LEADER);
        for id in g.nodes() {
            g32.add_node(*id);
        }
        for (from, to, w) in g.edges() {
            g32.add_edge(from, to, w as f32).unwrap();
        }
        let mut s = Snapshot::new();
        let mut s32 = SnapshotF32::new();
        for (n, id) in g.nodes().iter().enumerate() {
            let role = if *id == CarId::LEADER { CarRole::PhantomLeader } else { CarRole::Regular };
            s.insert(*id, CarState::new(role, 0.0, ys[n], 0.0, vs[n]));
            s32.insert(*id, CarState::new(role, 0.0, ys[n] as f32, 0.0, vs[n] as f32));
        }
        for id in g.nodes().iter().filter(|id| **id != CarId::LEADER) {
            let a = y_acceleration(*id, &s, &g, &gains);
            let b = y_acceleration(*id, &s32, &g32, &gains32) as f64;
            prop_assert!((a - b).abs() < 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn local_offsets_match_global_product(g in layered(), xf in prop::collection::vec(-3.0..3.0f64, 13), g_x in 5.0..50.0f64) {
        let bundle = laplacian(&g, &ordering(&g)).unwrap();
        let x_f = DVector::from_iterator(bundle.dim(), xf.iter().copied().take(bundle.dim()));
        let c = compute_c_from_template(&bundle, &x_f).unwrap();
        for id in &bundle.state_ids {
            let i = bundle.index_of(*id).unwrap();
            let neighbours: Vec<(f64, f64)> = g
                .in_edges(*id)
                .map(|(j, w)| (w, g_x * x_f[bundle.index_of(j).unwrap()]))
                .collect();
            let z = compute_z_local(g_x * x_f[i], &neighbours, g_x).unwrap();
            prop_assert!((z - c[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn hurwitz_iff_flow_contracts(
        diag in prop::collection::vec(prop_oneof![Just(0.0), 0.2..2.0f64], 1..=5),
        below in prop::collection::vec(-1.0..0.0f64, 10),
        k in 0.1..1.0f64,
        b in 0.5..2.0f64,
    ) {
        let m = diag.len();
        let mut l = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
        let mut n = 0;
        for i in 0..m {
            for j in 0..i {
                l[(i, j)] = below[n];
                n += 1;
            }
        }
        let report = analyze_reduced(&l, k, b);
        let t = if report.hurwitz { 60.0 / report.spectral_margin } else { 50.0 };
        let flow = (gamma_matrix(&l, k, b) * t).exp();
        let spectral_norm = flow.singular_values().max();
        if report.hurwitz {
            prop_assert!(spectral_norm < 1e-3, "norm {}", spectral_norm);
        } else {
            prop_assert!(diag.contains(&0.0));
            prop_assert!(spectral_norm > 0.99, "norm {}", spectral_norm);
        }
    }

    #[test]
    fn impulse_test_is_scale_free(
        e in prop::collection::vec(-5.0..5.0f64, 1..8),
        d in prop::collection::vec(-5.0..5.0f64, 8),
        c in 1e-3..1e3f64,
    ) {
        let e = DVector::from_vec(e);
        let d = DVector::from_iterator(e.len(), d.into_iter().take(e.len()));
        let plain = impulse_admissible(&e, &d);
        let margin = (&e + &d).norm_squared() - e.norm_squared();
        prop_assume!(margin.abs() > 1e-9 * e.norm_squared().max(1.0));
        prop_assert_eq!(plain, impulse_admissible(&(&e * c), &(&d * c)));
    }
}
