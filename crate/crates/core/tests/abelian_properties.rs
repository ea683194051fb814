mod common;

use common::{random_graph, rng};
use graph_vortex::abelian::monotone_solve_from;
use graph_vortex::{critical_lambda, monotone_solve, AbelianOptions, AbelianProblem, VertexField, WeightedGraph};
use rand::Rng;

fn opts() -> AbelianOptions {
    AbelianOptions::default()
}

fn chain_checks(g: &WeightedGraph, points: &[usize], label: &str, limit: Option<f64>) {
    let bracket = critical_lambda(g, points, 1e-2, &opts()).unwrap();
    assert!(bracket.lo >= bracket.lower_bound - 1e-12, "{label}");
    let base = AbelianProblem::new(g, points, bracket.hi).unwrap();
    // solved from the top down: each maximal solution warm-starts the next
    // coupling, which keeps solves near the critical value affordable
    let mut chain = Vec::new();
    let mut start: Option<VertexField> = None;
    for k in (0..=6).rev() {
        let lambda = bracket.hi * 2f64.powi(k);
        let p = base.at_lambda(lambda).unwrap();
        let sol =
            monotone_solve_from(&p, start.as_ref(), &opts()).unwrap_or_else(|e| panic!("{label} at {lambda}: {e}"));
        assert!(
            sol.max_increase <= 1e-12,
            "{label}: iterates rose by {}",
            sol.max_increase
        );
        assert!(sol.u.values().iter().all(|&u| u <= 1e-10), "{label}");
        assert!(sol.residual_inf <= 1e-10, "{label}");
        assert!(sol.integral_check <= 1e-8, "{label}: {}", sol.integral_check);
        start = Some(sol.u.clone());
        chain.push(sol.u);
    }
    chain.reverse();
    for pair in chain.windows(2) {
        for (hi, lo) in pair[1].values().iter().zip(pair[0].values()) {
            assert!(*hi >= lo - 1e-10, "{label}: not monotone in lambda");
        }
        assert!(
            pair[1].sup_norm() < pair[0].sup_norm(),
            "{label}: sup norm did not decrease"
        );
    }
    if let Some(limit) = limit {
        let top = chain.last().unwrap().sup_norm();
        assert!(top <= limit, "{label}: {top}");
    }
}

#[test]
fn chains_on_named_graphs() {
    for (name, g) in [
        ("K2", WeightedGraph::complete(2).unwrap()),
        ("C3", WeightedGraph::cycle(3).unwrap()),
        ("P4", WeightedGraph::path(4).unwrap()),
    ] {
        chain_checks(&g, &[0], name, Some(0.01));
    }
}

#[test]
fn chains_on_random_graphs() {
    for seed in 0..12 {
        let mut r = rng(500 + seed);
        let g = random_graph(&mut r, 8);
        let m = r.gen_range(1..=2);
        let points: Vec<usize> = (0..m).map(|_| r.gen_range(0..g.vertex_count())).collect();
        chain_checks(&g, &points, &format!("seed {seed}"), None);
    }
}

#[test]
fn no_solution_at_lower_bound() {
    let g = WeightedGraph::cycle(4).unwrap();
    let p = AbelianProblem::new(&g, &[1], 1.0).unwrap();
    let at = p.at_lambda(p.lower_bound()).unwrap();
    assert!(monotone_solve(&at, &opts()).is_err());
}
