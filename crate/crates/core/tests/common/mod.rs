#![allow(dead_code)]

use graph_vortex::{GraphBuilder, MultiField, VertexField, WeightedGraph};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected graph on `2..=max_n` vertices: a random spanning tree plus a few
/// extra edges, with random weights and measure.
pub fn random_graph(rng: &mut ChaCha8Rng, max_n: usize) -> WeightedGraph {
    let n = rng.gen_range(2..=max_n);
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b.add_vertex(format!("x{i}"), rng.gen_range(0.2..3.0)).unwrap();
    }
    let mut seen = std::collections::HashSet::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        seen.insert((j, i));
        b.add_edge(&format!("x{j}"), &format!("x{i}"), rng.gen_range(0.1..5.0))
            .unwrap();
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let key = (i.min(j), i.max(j));
        if i != j && seen.insert(key) {
            b.add_edge(&format!("x{}", key.0), &format!("x{}", key.1), rng.gen_range(0.1..5.0))
                .unwrap();
        }
    }
    b.build().unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> VertexField {
    VertexField::new((0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

pub fn random_zero_mean(g: &WeightedGraph, rng: &mut ChaCha8Rng, scale: f64) -> VertexField {
    g.project_zero_mean(&random_field(rng, g.vertex_count(), scale))
        .unwrap()
}

pub fn random_zero_mean_multi(g: &WeightedGraph, rng: &mut ChaCha8Rng, rank: usize, scale: f64) -> MultiField {
    MultiField::new((0..rank).map(|_| random_zero_mean(g, rng, scale)).collect()).unwrap()
}

/// Random vertex ids, repeats allowed.
pub fn random_points(g: &WeightedGraph, rng: &mut ChaCha8Rng, count: usize) -> Vec<String> {
    (0..count)
        .map(|_| g.ids()[rng.gen_range(0..g.vertex_count())].clone())
        .collect()
}
