//! Zero-mean Poisson solves `Δu = f`, discrete Dirac masses and the vortex
//! background fields `u_i⁰`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use thiserror::Error;

use crate::cartan::VortexData;
use crate::graph::{GraphError, MultiField, VertexField, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoissonError {
    #[error("right-hand side has nonzero integral {0:e}; Δu = f is only solvable for ∫f dμ = 0")]
    NonzeroMean(f64),
    #[error("bordered Laplacian system is singular")]
    Singular,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// LU factorisation of the Laplacian bordered by the mean-zero constraint:
///
/// ```text
/// [ L   μ ] [u]   [-M f]
/// [ μᵀ  0 ] [s] = [  0 ]
/// ```
///
/// For compatible `f` the multiplier `s` vanishes and `u` is the unique
/// zero-mean solution of `Δu = f`.
#[derive(Debug)]
pub(crate) struct PoissonFactor {
    bordered: DMatrix<f64>,
    lu: Option<LU<f64, Dyn, Dyn>>,
}

impl PoissonFactor {
    pub(crate) fn new(g: &WeightedGraph) -> Self {
        let n = g.vertex_count();
        let mut b = DMatrix::zeros(n + 1, n + 1);
        b.view_mut((0, 0), (n, n)).copy_from(&g.weight_laplacian_matrix());
        for (i, &m) in g.measure().iter().enumerate() {
            b[(i, n)] = m;
            b[(n, i)] = m;
        }
        let lu = b.clone().lu();
        let lu = lu.is_invertible().then_some(lu);
        Self { bordered: b, lu }
    }

    fn solve(&self, g: &WeightedGraph, f: &[f64]) -> Result<Vec<f64>, PoissonError> {
        let lu = self.lu.as_ref().ok_or(PoissonError::Singular)?;
        let n = f.len();
        let rhs = DVector::from_iterator(n + 1, f.iter().zip(g.measure()).map(|(x, m)| -x * m).chain([0.0]));
        let mut x = lu.solve(&rhs).ok_or(PoissonError::Singular)?;
        // one step of iterative refinement
        let r = &rhs - &self.bordered * &x;
        if let Some(dx) = lu.solve(&r) {
            x += dx;
        }
        let mut u: Vec<f64> = x.iter().take(n).copied().collect();
        g.project_zero_mean_in_place(&mut u);
        Ok(u)
    }
}

/// Unit-mass Dirac field at `p`: `1/μ(p)` at `p`, zero elsewhere.
pub fn dirac(g: &WeightedGraph, p: &str) -> Result<VertexField, GraphError> {
    let i = g.index_of(p)?;
    Ok(dirac_at(g, i))
}

pub(crate) fn dirac_at(g: &WeightedGraph, i: usize) -> VertexField {
    let mut v = VertexField::zeros(g.vertex_count());
    v.values_mut()[i] = 1.0 / g.measure()[i];
    v
}

/// The unique `u` with `Δu = f` and `∫u dμ = 0`.
pub fn solve_zero_mean(g: &WeightedGraph, f: &VertexField) -> Result<VertexField, PoissonError> {
    g.check_field(f)?;
    let total = g.integrate(f)?;
    if total.abs() > 1e-10 * f.sup_norm() * g.volume() {
        return Err(PoissonError::NonzeroMean(total));
    }
    Ok(VertexField::new(g.poisson_factor().solve(g, f.values())?))
}

/// Background fields `u_i⁰` absorbing the vortex sources:
/// `Δu_i⁰ = 4π Σ_s δ_{p_is} - 4πN_i/|V|`, `∫u_i⁰ dμ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundField {
    u0: MultiField,
    grad_energy: Vec<f64>,
}

impl BackgroundField {
    pub fn u0(&self) -> &MultiField {
        &self.u0
    }

    /// `∫Γ(u_i⁰, u_i⁰) dμ` per component.
    pub fn grad_energy(&self) -> &[f64] {
        &self.grad_energy
    }
}

/// Right-hand side `4π Σ δ_{p_s} - 4πN/|V|` for one multiset of vortex points.
pub fn vortex_source(g: &WeightedGraph, points: &[usize]) -> VertexField {
    let mut rhs = VertexField::constant(g.vertex_count(), -4.0 * PI * points.len() as f64 / g.volume());
    for &p in points {
        rhs.values_mut()[p] += 4.0 * PI / g.measure()[p];
    }
    rhs
}

/// Zero-mean solution of `Δu = 4π Σ δ_{p_s} - 4πM/|V|`.
pub fn source_potential(g: &WeightedGraph, points: &[usize]) -> Result<VertexField, PoissonError> {
    if points.is_empty() {
        return Ok(VertexField::zeros(g.vertex_count()));
    }
    solve_zero_mean(g, &vortex_source(g, points))
}

pub fn background(g: &WeightedGraph, vort: &VortexData) -> Result<BackgroundField, PoissonError> {
    let mut comps = Vec::with_capacity(vort.points().len());
    let mut grad_energy = Vec::with_capacity(vort.points().len());
    for points in vort.points() {
        let u = source_potential(g, points)?;
        grad_energy.push(g.dirichlet_form(&u, &u)?);
        comps.push(u);
    }
    Ok(BackgroundField {
        u0: MultiField::new(comps)?,
        grad_energy,
    })
}
