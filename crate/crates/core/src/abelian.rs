//! The scalar vortex equation
//!
//! ```text
//! Δu = λ e^u (e^u - 1) + 4π Σ_j δ_{p_j}
//! ```
//!
//! solved for its maximal solution by monotone iteration, plus bisection for
//! the critical coupling `λ_c` below which no solution exists.
//!
//! Writing `u = u⁰ + v` with the zero-mean background `u⁰` removes the Dirac
//! sources, and the iteration
//!
//! ```text
//! (Δ - κ) v_{k+1} = λ e^{u_k}(e^{u_k} - 1) - κ v_k + 4πM/|V|,   u_0 = 0
//! ```
//!
//! decreases pointwise from the supersolution `u = 0` to the maximal solution
//! as long as `κ` dominates the derivative of the nonlinearity on `u ≤ 0`,
//! which is at most `λ`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use thiserror::Error;

use crate::graph::{GraphError, VertexField, WeightedGraph};
use crate::poisson::{source_potential, PoissonError};

/// Upper end of the coupling search in [`critical_lambda`].
pub const LAMBDA_CAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AbelianError {
    #[error("coupling must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("monotone iteration did not converge after {iterations} iterations{}", if *certified { " (iterate fell below every possible solution: no solution at this coupling)" } else { "" })]
    NoConvergence { iterations: usize, certified: bool },
    #[error("monotone iterates increased by {0:e}; iteration shift is too small")]
    NotMonotone(f64),
    #[error("critical coupling search needs at least one vortex point")]
    NoVortices,
    #[error("no solution found for any coupling up to {0:e}")]
    NoSuccessBelowCap(f64),
    #[error("monotone solver converged at the lower bound 16πM/|V| = {0}, which is impossible for a genuine solution")]
    BelowLowerBound(f64),
    #[error("shifted Laplacian is not positive definite")]
    Factorization,
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbelianOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AbelianOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

/// One instance of the scalar equation on a fixed graph.
#[derive(Debug, Clone)]
pub struct AbelianProblem<'g> {
    graph: &'g WeightedGraph,
    points: Vec<usize>,
    lambda: f64,
    u0: VertexField,
}

impl<'g> AbelianProblem<'g> {
    pub fn new(graph: &'g WeightedGraph, points: &[usize], lambda: f64) -> Result<Self, AbelianError> {
        let u0 = source_potential(graph, points)?;
        Self::with_background(graph, points, u0, lambda)
    }

    pub fn from_ids<S: AsRef<str>>(graph: &'g WeightedGraph, ids: &[S], lambda: f64) -> Result<Self, AbelianError> {
        let points = ids
            .iter()
            .map(|id| graph.index_of(id.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(graph, &points, lambda)
    }

    /// Reuses an already computed background `u0` for these points.
    pub fn with_background(
        graph: &'g WeightedGraph,
        points: &[usize],
        u0: VertexField,
        lambda: f64,
    ) -> Result<Self, AbelianError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(AbelianError::BadLambda(lambda));
        }
        graph.check_field(&u0)?;
        Ok(Self {
            graph,
            points: points.to_vec(),
            lambda,
            u0,
        })
    }

    pub fn at_lambda(&self, lambda: f64) -> Result<Self, AbelianError> {
        Self::with_background(self.graph, &self.points, self.u0.clone(), lambda)
    }

    pub fn graph(&self) -> &'g WeightedGraph {
        self.graph
    }

    pub fn vortex_count(&self) -> usize {
        self.points.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn u0(&self) -> &VertexField {
        &self.u0
    }

    /// `16πM/|V|`; no solution exists at or below this coupling.
    pub fn lower_bound(&self) -> f64 {
        16.0 * PI * self.points.len() as f64 / self.graph.volume()
    }

    /// `‖Δv - λe^u(e^u - 1) - 4πM/|V|‖_∞` with `u = u0 + v`.
    pub fn residual(&self, v: &VertexField) -> f64 {
        let g = self.graph;
        let mut lap = vec![0.0; v.len()];
        g.laplacian_into(v.values(), &mut lap);
        let src = self.source();
        lap.iter()
            .zip(v.values())
            .zip(self.u0.values())
            .map(|((l, vi), u0)| {
                let u = u0 + vi;
                (l - self.lambda * u.exp() * u.exp_m1() - src).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `|∫e^u(1 - e^u) dμ - 4πM/λ|`, zero at every exact solution.
    pub fn integral_check(&self, u: &VertexField) -> f64 {
        let integral: f64 = u
            .values()
            .iter()
            .zip(self.graph.measure())
            .map(|(x, m)| -m * x.exp() * x.exp_m1())
            .sum();
        (integral - 4.0 * PI * self.points.len() as f64 / self.lambda).abs()
    }

    fn source(&self) -> f64 {
        4.0 * PI * self.points.len() as f64 / self.graph.volume()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbelianSolution {
    /// `u - u0`.
    pub v: VertexField,
    pub u: VertexField,
    pub iterations: usize,
    pub residual_inf: f64,
    pub integral_check: f64,
    /// Largest pointwise increase between consecutive iterates (≤ 0 up to rounding).
    pub max_increase: f64,
    pub kappa: f64,
}

/// Maximal solution by monotone iteration from `u = 0`.
pub fn monotone_solve(p: &AbelianProblem<'_>, opts: &AbelianOptions) -> Result<AbelianSolution, AbelianError> {
    monotone_solve_from(p, None, opts)
}

/// Monotone iteration started from `start` instead of `u = 0`. `start` must be
/// a supersolution that dominates every solution, for example the maximal
/// solution at a larger coupling.
pub fn monotone_solve_from(
    p: &AbelianProblem<'_>,
    start: Option<&VertexField>,
    opts: &AbelianOptions,
) -> Result<AbelianSolution, AbelianError> {
    if !(opts.tol > 0.0) {
        return Err(AbelianError::BadTolerance(opts.tol));
    }
    let g = p.graph;
    let n = g.vertex_count();
    let lambda = p.lambda;
    let kappa = 2.0 * lambda;
    let u0 = p.u0.values();
    let m_count = p.points.len();
    if m_count == 0 {
        return Ok(AbelianSolution {
            v: VertexField::zeros(n),
            u: VertexField::zeros(n),
            iterations: 0,
            residual_inf: p.residual(&VertexField::zeros(n)),
            integral_check: 0.0,
            max_increase: 0.0,
            kappa,
        });
    }

    let mut shifted: DMatrix<f64> = g.weight_laplacian_matrix();
    for (i, &m) in g.measure().iter().enumerate() {
        shifted[(i, i)] += kappa * m;
    }
    let chol: Cholesky<f64, Dyn> = shifted.cholesky().ok_or(AbelianError::Factorization)?;

    let src = p.source();
    // any solution has ∫e^u dμ ≥ 4πM/λ, and every solution lies below each iterate
    let mass_floor = 4.0 * PI * m_count as f64 / lambda;
    let mut v: Vec<f64> = match start {
        Some(s) => {
            g.check_field(s)?;
            s.values().iter().zip(u0).map(|(s, u)| s - u).collect()
        }
        None => u0.iter().map(|x| -x).collect(),
    };
    let mut rhs = DVector::zeros(n);
    let mut max_increase = f64::NEG_INFINITY;
    for iter in 1..=opts.max_iter {
        for x in 0..n {
            let u = u0[x] + v[x];
            let gx = lambda * u.exp() * u.exp_m1() - kappa * v[x] + src;
            rhs[x] = -g.measure()[x] * gx;
        }
        let next = chol.solve(&rhs);
        let mut step = 0.0_f64;
        for x in 0..n {
            let d = next[x] - v[x];
            step = step.max(d.abs());
            max_increase = max_increase.max(d);
            v[x] = next[x];
        }
        if max_increase > 1e-9 * (1.0 + lambda) {
            return Err(AbelianError::NotMonotone(max_increase));
        }
        let mass: f64 = (0..n).map(|x| g.measure()[x] * (u0[x] + v[x]).exp()).sum();
        if mass < mass_floor {
            return Err(AbelianError::NoConvergence {
                iterations: iter,
                certified: true,
            });
        }
        // at large couplings tol/κ drops below the spacing of doubles near v,
        // so a step at that spacing counts as stationary and the residual decides
        let floor = 8.0 * f64::EPSILON * (1.0 + v.iter().fold(0.0_f64, |a, x| a.max(x.abs())));
        if step <= (opts.tol / kappa).max(floor) {
            let vf = VertexField::new(v.clone());
            let residual = p.residual(&vf);
            if residual <= opts.tol {
                let u = vf.add(&p.u0);
                let integral_check = p.integral_check(&u);
                return Ok(AbelianSolution {
                    v: vf,
                    u,
                    iterations: iter,
                    residual_inf: residual,
                    integral_check,
                    max_increase,
                    kappa,
                });
            }
        }
    }
    Err(AbelianError::NoConvergence {
        iterations: opts.max_iter,
        certified: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalBracket {
    /// Coupling at which the solver failed.
    pub lo: f64,
    /// Coupling at which the solver converged.
    pub hi: f64,
    /// `16πM/|V|`.
    pub lower_bound: f64,
}

/// Brackets the critical coupling by bisection on solver success. Failure is
/// read as "below `λ_c`"; the threshold is sharp, so the bracket is
/// well-posed up to the iteration budget in `opts`.
pub fn critical_lambda(
    graph: &WeightedGraph,
    points: &[usize],
    tol_bracket: f64,
    opts: &AbelianOptions,
) -> Result<CriticalBracket, AbelianError> {
    if points.is_empty() {
        return Err(AbelianError::NoVortices);
    }
    if !(tol_bracket > 0.0) {
        return Err(AbelianError::BadTolerance(tol_bracket));
    }
    let base = AbelianProblem::new(graph, points, 1.0)?;
    let lower_bound = base.lower_bound();
    let attempt = |lambda: f64, start: Option<&VertexField>| -> Result<Option<VertexField>, AbelianError> {
        match monotone_solve_from(&base.at_lambda(lambda)?, start, opts) {
            Ok(sol) => Ok(Some(sol.u)),
            Err(AbelianError::NoConvergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    };

    let mut lo = lower_bound;
    if attempt(lo, None)?.is_some() {
        return Err(AbelianError::BelowLowerBound(lower_bound));
    }
    let mut hi = 2.0 * lo;
    let mut hi_solution = loop {
        if let Some(u) = attempt(hi, None)? {
            break u;
        }
        lo = hi;
        hi *= 2.0;
        if hi > LAMBDA_CAP {
            return Err(AbelianError::NoSuccessBelowCap(LAMBDA_CAP));
        }
    };
    while hi - lo > tol_bracket {
        let mid = 0.5 * (lo + hi);
        // the maximal solution at `hi` is a supersolution at `mid`
        match attempt(mid, Some(&hi_solution))? {
            Some(u) => {
                hi = mid;
                hi_solution = u;
            }
            None => lo = mid,
        }
    }
    Ok(CriticalBracket { lo, hi, lower_bound })
}
