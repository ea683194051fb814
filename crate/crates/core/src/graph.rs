//! Weighted finite graphs with a vertex measure, and the discrete calculus
//! built on them.
//!
//! For a graph `G = (V, E)` with symmetric edge weights `w_xy > 0` and a
//! positive measure `μ`, the operators are
//!
//! ```text
//! Δu(x)      = (1/μ(x)) Σ_{y~x} w_xy (u(y) - u(x))
//! Γ(u,v)(x)  = (1/2μ(x)) Σ_{y~x} w_xy (u(y) - u(x)) (v(y) - v(x))
//! ∫ u dμ     = Σ_x μ(x) u(x)
//! ```
//!
//! so that `∫ v Δu dμ = -∫ Γ(u,v) dμ` (Green's identity) and `|∇u|² = Γ(u,u)`.
//!
//! Graphs are immutable once built. Fields are dense vectors indexed by the
//! insertion order of the vertices.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poisson::PoissonFactor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph has no vertices")]
    Empty,
    #[error("duplicate vertex id `{0}`")]
    DuplicateVertex(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("self-loop at vertex `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge `{0}`-`{1}`")]
    DuplicateEdge(String, String),
    #[error("edge `{0}`-`{1}` has non-positive or non-finite weight {2}")]
    BadWeight(String, String, f64),
    #[error("vertex `{0}` has non-positive or non-finite measure {1}")]
    BadMeasure(String, f64),
    #[error("graph is disconnected ({0} components)")]
    Disconnected(usize),
    #[error("field has {found} values but the graph has {expected} vertices")]
    FieldMismatch { expected: usize, found: usize },
    #[error("multi-field components disagree in length or the field is empty")]
    RaggedMultiField,
    #[error("L^p norm requires p > 0, got {0}")]
    BadExponent(f64),
    #[error("symmetric eigen-decomposition failed")]
    Eigen,
}

/// A real function on the vertices of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexField(Vec<f64>);

impl VertexField {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn constant(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Pointwise `self + other`.
    pub fn add(&self, other: &VertexField) -> VertexField {
        VertexField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Pointwise `self + c`.
    pub fn shift(&self, c: f64) -> VertexField {
        VertexField(self.0.iter().map(|a| a + c).collect())
    }

    pub fn scale(&self, s: f64) -> VertexField {
        VertexField(self.0.iter().map(|a| a * s).collect())
    }
}

impl From<Vec<f64>> for VertexField {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for VertexField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// An `n`-component stack of vertex fields on a common graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiField(Vec<VertexField>);

impl MultiField {
    pub fn new(components: Vec<VertexField>) -> Result<Self, GraphError> {
        let Some(first) = components.first() else {
            return Err(GraphError::RaggedMultiField);
        };
        if components.iter().any(|c| c.len() != first.len()) {
            return Err(GraphError::RaggedMultiField);
        }
        Ok(Self(components))
    }

    pub fn zeros(rank: usize, len: usize) -> Self {
        Self(vec![VertexField::zeros(len); rank])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.0[0].len()
    }

    pub fn components(&self) -> &[VertexField] {
        &self.0
    }

    pub fn component(&self, i: usize) -> &VertexField {
        &self.0[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut VertexField {
        &mut self.0[i]
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.sup_norm()))
    }

    pub fn add(&self, other: &MultiField) -> MultiField {
        MultiField(self.0.iter().zip(&other.0).map(|(a, b)| a.add(b)).collect())
    }

    /// Adds the constant `shifts[i]` to component `i`.
    pub fn shift(&self, shifts: &[f64]) -> MultiField {
        MultiField(self.0.iter().zip(shifts).map(|(a, &c)| a.shift(c)).collect())
    }

    pub fn scale(&self, s: f64) -> MultiField {
        MultiField(self.0.iter().map(|a| a.scale(s)).collect())
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.0.iter().map(|c| c.values().to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Incremental construction of a [`WeightedGraph`].
#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    measure: Vec<f64>,
    edges: Vec<Edge>,
    seen: HashSet<(usize, usize)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vertex(mut self, id: impl Into<String>, mu: f64) -> Result<Self, GraphError> {
        self.add_vertex(id, mu)?;
        Ok(self)
    }

    pub fn edge(mut self, a: &str, b: &str, weight: f64) -> Result<Self, GraphError> {
        self.add_edge(a, b, weight)?;
        Ok(self)
    }

    pub fn add_vertex(&mut self, id: impl Into<String>, mu: f64) -> Result<usize, GraphError> {
        let id = id.into();
        if self.index.contains_key(&id) {
            return Err(GraphError::DuplicateVertex(id));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(GraphError::BadMeasure(id, mu));
        }
        let idx = self.ids.len();
        self.index.insert(id.clone(), idx);
        self.ids.push(id);
        self.measure.push(mu);
        Ok(idx)
    }

    pub fn add_edge(&mut self, a: &str, b: &str, weight: f64) -> Result<(), GraphError> {
        let ia = *self
            .index
            .get(a)
            .ok_or_else(|| GraphError::UnknownVertex(a.to_string()))?;
        let ib = *self
            .index
            .get(b)
            .ok_or_else(|| GraphError::UnknownVertex(b.to_string()))?;
        if ia == ib {
            return Err(GraphError::SelfLoop(a.to_string()));
        }
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GraphError::BadWeight(a.to_string(), b.to_string(), weight));
        }
        if !self.seen.insert((ia.min(ib), ia.max(ib))) {
            return Err(GraphError::DuplicateEdge(a.to_string(), b.to_string()));
        }
        self.edges.push(Edge { a: ia, b: ib, weight });
        Ok(())
    }

    pub fn build(self) -> Result<WeightedGraph, GraphError> {
        if self.ids.is_empty() {
            return Err(GraphError::Empty);
        }
        let n = self.ids.len();
        let mut neighbors = vec![Vec::new(); n];
        for e in &self.edges {
            neighbors[e.a].push((e.b, e.weight));
            neighbors[e.b].push((e.a, e.weight));
        }
        let components = count_components(&neighbors);
        if components != 1 {
            return Err(GraphError::Disconnected(components));
        }
        let volume = self.measure.iter().sum();
        Ok(WeightedGraph {
            ids: self.ids,
            index: self.index,
            measure: self.measure,
            edges: self.edges,
            neighbors,
            volume,
            poisson: OnceLock::new(),
        })
    }
}

fn count_components(neighbors: &[Vec<(usize, f64)>]) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut components = 0;
    for start in 0..neighbors.len() {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &neighbors[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
    }
    components
}

/// A connected finite graph with positive symmetric edge weights and a
/// positive vertex measure.
#[derive(Debug)]
pub struct WeightedGraph {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    measure: Vec<f64>,
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(usize, f64)>>,
    volume: f64,
    poisson: OnceLock<PoissonFactor>,
}

impl Clone for WeightedGraph {
    fn clone(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            index: self.index.clone(),
            measure: self.measure.clone(),
            edges: self.edges.clone(),
            neighbors: self.neighbors.clone(),
            volume: self.volume,
            poisson: OnceLock::new(),
        }
    }
}

impl WeightedGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    /// Unit-weight, unit-measure graph on vertices `v0..v{n-1}` with the given
    /// index pairs as edges.
    pub fn unit(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut b = GraphBuilder::new();
        for i in 0..n {
            b.add_vertex(format!("v{i}"), 1.0)?;
        }
        for &(x, y) in edges {
            b.add_edge(&format!("v{x}"), &format!("v{y}"), 1.0)?;
        }
        b.build()
    }

    /// Complete graph `K_n` with unit weights and measure.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::unit(n, &edges)
    }

    /// Cycle graph `C_n` (`n >= 3`) with unit weights and measure.
    pub fn cycle(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Self::unit(n, &edges)
    }

    /// Path graph `P_n` with unit weights and measure.
    pub fn path(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::unit(n, &edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(id.to_string()))
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.neighbors[x]
    }

    /// `|V| = Σ μ(x)`.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Same topology and measure, all weights multiplied by `s`.
    pub fn scale_weights(&self, s: f64) -> Result<Self, GraphError> {
        self.rebuild(|w| w * s, |m| m)
    }

    /// Same topology and weights, all measures multiplied by `s`.
    pub fn scale_measure(&self, s: f64) -> Result<Self, GraphError> {
        self.rebuild(|w| w, |m| m * s)
    }

    fn rebuild(&self, weight: impl Fn(f64) -> f64, mu: impl Fn(f64) -> f64) -> Result<Self, GraphError> {
        let mut b = GraphBuilder::new();
        for (id, &m) in self.ids.iter().zip(&self.measure) {
            b.add_vertex(id.clone(), mu(m))?;
        }
        for e in &self.edges {
            b.add_edge(&self.ids[e.a], &self.ids[e.b], weight(e.weight))?;
        }
        b.build()
    }

    pub(crate) fn poisson_factor(&self) -> &PoissonFactor {
        self.poisson.get_or_init(|| PoissonFactor::new(self))
    }

    pub fn check_field(&self, u: &VertexField) -> Result<(), GraphError> {
        if u.len() != self.vertex_count() {
            return Err(GraphError::FieldMismatch {
                expected: self.vertex_count(),
                found: u.len(),
            });
        }
        Ok(())
    }

    pub fn check_multi(&self, u: &MultiField) -> Result<(), GraphError> {
        u.components().iter().try_for_each(|c| self.check_field(c))
    }

    /// `Δu`, the measure-normalised graph Laplacian.
    pub fn laplacian(&self, u: &VertexField) -> Result<VertexField, GraphError> {
        self.check_field(u)?;
        let mut out = vec![0.0; u.len()];
        self.laplacian_into(u.values(), &mut out);
        Ok(VertexField(out))
    }

    pub(crate) fn laplacian_into(&self, u: &[f64], out: &mut [f64]) {
        for (x, slot) in out.iter_mut().enumerate() {
            let ux = u[x];
            let s: f64 = self.neighbors[x].iter().map(|&(y, w)| w * (u[y] - ux)).sum();
            *slot = s / self.measure[x];
        }
    }

    /// Pointwise gradient form `Γ(u, v)`.
    pub fn gradient_form(&self, u: &VertexField, v: &VertexField) -> Result<VertexField, GraphError> {
        self.check_field(u)?;
        self.check_field(v)?;
        let (u, v) = (u.values(), v.values());
        let out = (0..u.len())
            .map(|x| {
                let s: f64 = self.neighbors[x]
                    .iter()
                    .map(|&(y, w)| w * ((u[y] - u[x]) * (v[y] - v[x])))
                    .sum();
                s / (2.0 * self.measure[x])
            })
            .collect();
        Ok(VertexField(out))
    }

    /// `∫ Γ(u, v) dμ`, summed edge by edge.
    pub fn dirichlet_form(&self, u: &VertexField, v: &VertexField) -> Result<f64, GraphError> {
        self.check_field(u)?;
        self.check_field(v)?;
        Ok(self.dirichlet_form_slices(u.values(), v.values()))
    }

    pub(crate) fn dirichlet_form_slices(&self, u: &[f64], v: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| e.weight * (u[e.b] - u[e.a]) * (v[e.b] - v[e.a]))
            .sum()
    }

    /// `∫ u dμ`.
    pub fn integrate(&self, u: &VertexField) -> Result<f64, GraphError> {
        self.check_field(u)?;
        Ok(self.integrate_slice(u.values()))
    }

    pub(crate) fn integrate_slice(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.measure).map(|(a, m)| a * m).sum()
    }

    /// `(∫ |u|^p dμ)^{1/p}` for `p > 0`.
    pub fn lp_norm(&self, u: &VertexField, p: f64) -> Result<f64, GraphError> {
        self.check_field(u)?;
        if !(p > 0.0) {
            return Err(GraphError::BadExponent(p));
        }
        let s: f64 = u
            .values()
            .iter()
            .zip(&self.measure)
            .map(|(a, m)| m * a.abs().powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    pub fn mean(&self, u: &VertexField) -> Result<f64, GraphError> {
        Ok(self.integrate(u)? / self.volume)
    }

    /// `u - (∫u dμ)/|V|`.
    pub fn project_zero_mean(&self, u: &VertexField) -> Result<VertexField, GraphError> {
        self.check_field(u)?;
        let mut out = u.values().to_vec();
        self.project_zero_mean_in_place(&mut out);
        Ok(VertexField(out))
    }

    pub(crate) fn project_zero_mean_in_place(&self, u: &mut [f64]) {
        let mean = self.integrate_slice(u) / self.volume;
        u.iter_mut().for_each(|x| *x -= mean);
    }

    /// The weight Laplacian matrix `L = D - W`, so that `Δ = -M⁻¹ L` with
    /// `M = diag μ`.
    pub fn weight_laplacian_matrix(&self) -> DMatrix<f64> {
        let n = self.vertex_count();
        let mut l = DMatrix::zeros(n, n);
        for e in &self.edges {
            l[(e.a, e.a)] += e.weight;
            l[(e.b, e.b)] += e.weight;
            l[(e.a, e.b)] -= e.weight;
            l[(e.b, e.a)] -= e.weight;
        }
        l
    }

    /// Eigenvalues of `-Δ`, ascending. Computed on the symmetric similarity
    /// transform `M^{-1/2} L M^{-1/2}`.
    pub fn laplacian_spectrum(&self) -> Result<Vec<f64>, GraphError> {
        let mut l = self.weight_laplacian_matrix();
        let n = self.vertex_count();
        for i in 0..n {
            for j in 0..n {
                l[(i, j)] /= (self.measure[i] * self.measure[j]).sqrt();
            }
        }
        let eig = SymmetricEigen::try_new(l, f64::EPSILON, 0).ok_or(GraphError::Eigen)?;
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        Ok(values)
    }

    /// Smallest nonzero eigenvalue `λ₂` of `-Δ`. The Poincaré inequality
    /// `∫u² dμ ≤ (1/λ₂) ∫|∇u|² dμ` holds for every zero-mean `u`.
    pub fn spectral_gap(&self) -> Result<f64, GraphError> {
        if self.vertex_count() == 1 {
            // no zero-mean fields other than 0; the inequality holds for any constant
            return Ok(f64::INFINITY);
        }
        let spectrum = self.laplacian_spectrum()?;
        Ok(spectrum[1])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphFile {
    pub vertices: Vec<VertexEntry>,
    pub edges: Vec<EdgeEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexEntry {
    pub id: String,
    #[serde(default = "unit_measure")]
    pub mu: f64,
}

fn unit_measure() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub u: String,
    pub v: String,
    pub w: f64,
}

impl GraphFile {
    pub fn into_graph(self) -> Result<WeightedGraph, GraphError> {
        let mut b = GraphBuilder::new();
        for v in self.vertices {
            b.add_vertex(v.id, v.mu)?;
        }
        for e in &self.edges {
            b.add_edge(&e.u, &e.v, e.w)?;
        }
        b.build()
    }

    pub fn from_graph(g: &WeightedGraph) -> Self {
        Self {
            vertices: g
                .ids()
                .iter()
                .zip(g.measure())
                .map(|(id, &mu)| VertexEntry { id: id.clone(), mu })
                .collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeEntry {
                    u: g.ids()[e.a].clone(),
                    v: g.ids()[e.b].clone(),
                    w: e.weight,
                })
                .collect(),
        }
    }
}
