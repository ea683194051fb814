//! Constant-shift constraint for the reduced functional.
//!
//! Splitting `v = w + c` with `w` zero-mean and `c` constant per component,
//! the integral constraint `∫ UQ(U - 1) dμ + b/λ = 0` becomes, for
//! `t_i = e^{c_i}`, the coupled quadratics
//!
//! ```text
//! R_i² α_ii a_ii t_i² - t_i B_i(t) + b_i/λ = 0
//! B_i(t) = R_i a_i / P_i + Σ_{j≠i} t_j R_i R_j α_ij a_ij
//! ```
//!
//! with moments `a_i = ∫e^{u_i⁰+w_i} dμ` and `a_ij = ∫e^{u_i⁰+u_j⁰+w_i+w_j} dμ`.
//! Taking the larger root of each quadratic gives the map `t ↦ f(t)`; it is
//! entrywise nondecreasing, so Picard iteration from `t = 0` climbs to the
//! minimal fixed point.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::cartan::{CartanSystem, VortexData};
use crate::graph::{GraphError, MultiField, WeightedGraph};
use crate::poisson::BackgroundField;

/// Largest exponent accepted before `exp` is considered out of range.
pub const EXPONENT_LIMIT: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("component {component} of w has mean {mean:e}; the reduced variable must be zero-mean")]
    NotZeroMean { component: usize, mean: f64 },
    #[error("component {component} reaches u⁰ + w = {value:e}, outside the exponential range")]
    NumericRange { component: usize, value: f64 },
    #[error("moment matrix Q̃ is not positive definite")]
    NotPositiveDefinite,
    #[error("state is not admissible: margins a_i²/a_ii - 4α_ii P_i² b_i/λ = {margins:?}")]
    NotAdmissible { margins: Vec<f64> },
    #[error("negative discriminant {value:e} in component {component}")]
    NegativeDiscriminant { component: usize, value: f64 },
    #[error("fixed-point iterates exceeded the bound {bound:e} after {iterations} steps")]
    Diverged { iterations: usize, bound: f64 },
    #[error("fixed-point solve did not reach tolerance after {0} iterations")]
    MaxIter(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Exponential moments of the shifted fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    /// `a_i = ∫ e^{u_i⁰ + w_i} dμ`.
    pub a: Vec<f64>,
    /// `a_ij = ∫ e^{u_i⁰ + u_j⁰ + w_i + w_j} dμ`.
    pub aij: DMatrix<f64>,
    /// `|V|` of the graph the moments were taken on.
    pub volume: f64,
}

impl Moments {
    /// Moments from precomputed pointwise exponentials `e_i(x) = e^{u_i⁰+w_i}`.
    pub(crate) fn from_exponentials(g: &WeightedGraph, e: &[Vec<f64>]) -> Self {
        let n = e.len();
        let mu = g.measure();
        let a = e.iter().map(|ei| ei.iter().zip(mu).map(|(x, m)| x * m).sum()).collect();
        let mut aij = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let s: f64 = (0..mu.len()).map(|x| mu[x] * e[i][x] * e[j][x]).sum();
                aij[(i, j)] = s;
                aij[(j, i)] = s;
            }
        }
        Self {
            a,
            aij,
            volume: g.volume(),
        }
    }
}

/// `e^{u_i⁰ + w_i}` per component, with the range guard applied.
pub(crate) fn exponentials(bg: &BackgroundField, w: &MultiField) -> Result<Vec<Vec<f64>>, ConstraintError> {
    bg.u0()
        .components()
        .iter()
        .zip(w.components())
        .enumerate()
        .map(|(i, (u0, wi))| {
            u0.values()
                .iter()
                .zip(wi.values())
                .map(|(a, b)| {
                    let s = a + b;
                    if s.abs() > EXPONENT_LIMIT || !s.is_finite() {
                        Err(ConstraintError::NumericRange { component: i, value: s })
                    } else {
                        Ok(s.exp())
                    }
                })
                .collect()
        })
        .collect()
}

pub(crate) fn check_zero_mean(g: &WeightedGraph, w: &MultiField) -> Result<(), ConstraintError> {
    g.check_multi(w)?;
    for (i, wi) in w.components().iter().enumerate() {
        let mean = g.mean(wi)?;
        if mean.abs() > 1e-9 * (1.0 + wi.sup_norm()) {
            return Err(ConstraintError::NotZeroMean { component: i, mean });
        }
    }
    Ok(())
}

/// Moments of `w` against the background `u⁰`. `w` must be zero-mean.
pub fn moments(g: &WeightedGraph, bg: &BackgroundField, w: &MultiField) -> Result<Moments, ConstraintError> {
    check_zero_mean(g, w)?;
    if w.rank() != bg.u0().rank() {
        return Err(GraphError::RaggedMultiField.into());
    }
    Ok(Moments::from_exponentials(g, &exponentials(bg, w)?))
}

/// `Q̃ = R S̃ R` with `S̃_ii = α_ii a_ii` and `S̃_ij = -α_ij a_ij`.
pub fn qtilde(sys: &CartanSystem, m: &Moments) -> Result<DMatrix<f64>, ConstraintError> {
    let n = sys.rank();
    let r = sys.r();
    let q = DMatrix::from_fn(n, n, |i, j| r[i] * sys.s()[(i, j)] * m.aij[(i, j)] * r[j]);
    if q.clone().cholesky().is_none() {
        return Err(ConstraintError::NotPositiveDefinite);
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    /// `a_i²/a_ii - 4 α_ii P_i² b_i / λ` per component.
    pub margins: Vec<f64>,
}

impl Admissibility {
    pub fn is_admissible(&self) -> bool {
        self.margins.iter().all(|&m| m >= 0.0)
    }

    pub fn is_strict(&self) -> bool {
        self.margins.iter().all(|&m| m > 0.0)
    }
}

pub fn admissibility(sys: &CartanSystem, vort: &VortexData, m: &Moments, lambda: f64) -> Admissibility {
    let margins = (0..sys.rank())
        .map(|i| {
            let p = sys.p()[i];
            m.a[i] * m.a[i] / m.aij[(i, i)] - 4.0 * sys.alpha(i, i) * p * p * vort.b()[i] / lambda
        })
        .collect();
    Admissibility { margins }
}

/// Smallest coupling at which the admissible set is nonempty:
/// `max_i 4 α_ii P_i² b_i / |V|`. Since `a_i² ≤ |V| a_ii`, no zero-mean field
/// is admissible below it, and `w = -u⁰` is admissible at and above it.
pub fn admissibility_threshold(sys: &CartanSystem, vort: &VortexData, volume: f64) -> f64 {
    (0..sys.rank())
        .map(|i| 4.0 * sys.alpha(i, i) * sys.p()[i].powi(2) * vort.b()[i] / volume)
        .fold(0.0, f64::max)
}

/// The plus-root map `t ↦ f(ε, t)` for fixed moments. `ε ∈ [0, 1]` scales the
/// vortex term; `ε = 1` is the constraint itself and `ε = 0` its linear
/// counterpart `Q̃ t = P⁻¹ R a`.
#[derive(Debug, Clone)]
pub struct PlusRootMap {
    diag: Vec<f64>,
    lin: Vec<f64>,
    off: DMatrix<f64>,
    constant: Vec<f64>,
}

impl PlusRootMap {
    pub fn new(sys: &CartanSystem, vort: &VortexData, m: &Moments, lambda: f64, epsilon: f64) -> Self {
        let n = sys.rank();
        let r = sys.r();
        let diag = (0..n).map(|i| r[i] * r[i] * sys.alpha(i, i) * m.aij[(i, i)]).collect();
        let lin = (0..n).map(|i| r[i] * m.a[i] / sys.p()[i]).collect();
        let off = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.0
            } else {
                r[i] * r[j] * sys.alpha(i, j) * m.aij[(i, j)]
            }
        });
        let constant = (0..n).map(|i| epsilon * vort.b()[i] / lambda).collect();
        Self {
            diag,
            lin,
            off,
            constant,
        }
    }

    pub fn rank(&self) -> usize {
        self.diag.len()
    }

    /// `B_i(t)`.
    pub fn linear_coefficient(&self, t: &[f64]) -> Vec<f64> {
        (0..self.rank())
            .map(|i| self.lin[i] + (0..self.rank()).map(|j| self.off[(i, j)] * t[j]).sum::<f64>())
            .collect()
    }

    /// `B_i(t)² - 4 R_i² α_ii a_ii ε b_i/λ`.
    pub fn discriminant(&self, t: &[f64]) -> Vec<f64> {
        self.linear_coefficient(t)
            .iter()
            .enumerate()
            .map(|(i, b)| b * b - 4.0 * self.diag[i] * self.constant[i])
            .collect()
    }

    /// `f(t)`; fails when a discriminant is negative beyond rounding.
    pub fn eval(&self, t: &[f64]) -> Result<Vec<f64>, ConstraintError> {
        let bs = self.linear_coefficient(t);
        bs.iter()
            .enumerate()
            .map(|(i, &b)| {
                let disc = b * b - 4.0 * self.diag[i] * self.constant[i];
                let root = if disc >= 0.0 {
                    disc.sqrt()
                } else if disc >= -1e-12 * b * b {
                    0.0
                } else {
                    return Err(ConstraintError::NegativeDiscriminant {
                        component: i,
                        value: disc,
                    });
                };
                Ok((b + root) / (2.0 * self.diag[i]))
            })
            .collect()
    }

    /// Residuals of the quadratics, `R_i²α_ii a_ii t_i² - t_i B_i(t) + ε b_i/λ`.
    pub fn quadratic_residual(&self, t: &[f64]) -> Vec<f64> {
        self.linear_coefficient(t)
            .iter()
            .enumerate()
            .map(|(i, b)| self.diag[i] * t[i] * t[i] - t[i] * b + self.constant[i])
            .collect()
    }

    /// Quadratic residuals divided by the magnitude of their terms.
    pub fn relative_residual(&self, t: &[f64]) -> f64 {
        let bs = self.linear_coefficient(t);
        self.quadratic_residual(t)
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let scale = self.diag[i] * t[i] * t[i] + (t[i] * bs[i]).abs() + self.constant[i];
                r.abs() / scale.max(f64::MIN_POSITIVE)
            })
            .fold(0.0, f64::max)
    }

    /// The first `steps` Picard iterates `f(0), f(f(0)), …`.
    pub fn picard_iterates(&self, steps: usize) -> Result<Vec<Vec<f64>>, ConstraintError> {
        let mut t = vec![0.0; self.rank()];
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            t = self.eval(&t)?;
            out.push(t.clone());
        }
        Ok(out)
    }

    /// Jacobian of `t - f(t)`, or `None` where a square root is degenerate.
    fn newton_jacobian(&self, t: &[f64]) -> Option<DMatrix<f64>> {
        let n = self.rank();
        let bs = self.linear_coefficient(t);
        let mut jac = DMatrix::identity(n, n);
        for i in 0..n {
            let disc = bs[i] * bs[i] - 4.0 * self.diag[i] * self.constant[i];
            if !(disc > 1e-16 * bs[i] * bs[i]) {
                return None;
            }
            let dfdb = (1.0 + bs[i] / disc.sqrt()) / (2.0 * self.diag[i]);
            for j in 0..n {
                if j != i {
                    jac[(i, j)] -= dfdb * self.off[(i, j)];
                }
            }
        }
        Some(jac)
    }

    fn fixed_point_gap(&self, t: &[f64]) -> Option<f64> {
        let ft = self.eval(t).ok()?;
        Some(t.iter().zip(&ft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// One damped Newton step on `t - f(t) = 0`; returns `false` if no step
    /// reduced the gap.
    fn newton_step(&self, t: &mut Vec<f64>) -> bool {
        let Some(gap) = self.fixed_point_gap(t) else {
            return false;
        };
        let Some(jac) = self.newton_jacobian(t) else {
            return false;
        };
        let Ok(ft) = self.eval(t) else { return false };
        let residual = DVector::from_iterator(t.len(), t.iter().zip(&ft).map(|(a, b)| a - b));
        let Some(delta) = jac.lu().solve(&residual) else {
            return false;
        };
        let mut damping = 1.0;
        for _ in 0..30 {
            let trial: Vec<f64> = t.iter().zip(delta.iter()).map(|(a, d)| a - damping * d).collect();
            if trial.iter().all(|&x| x > 0.0) {
                if let Some(g) = self.fixed_point_gap(&trial) {
                    if g < gap {
                        *t = trial;
                        return true;
                    }
                }
            }
            damping *= 0.5;
        }
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Homotopy parameter; `1.0` is the actual constraint.
    pub epsilon: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
            epsilon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintSolution {
    /// `t_i = e^{c_i}`.
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    /// Largest relative residual of the quadratics.
    pub quad_residual: f64,
    pub iterations: usize,
    pub newton_steps: usize,
}

/// Minimal fixed point of the plus-root map: Picard iteration from `t = 0`,
/// then Newton polishing (or Newton fallback if Picard stalls).
pub fn solve_t(
    sys: &CartanSystem,
    vort: &VortexData,
    m: &Moments,
    lambda: f64,
    opts: &ConstraintOptions,
) -> Result<ConstraintSolution, ConstraintError> {
    let adm = admissibility(sys, vort, m, lambda);
    let admissible = adm
        .margins
        .iter()
        .enumerate()
        .all(|(i, &mi)| mi >= -1e-12 * m.a[i] * m.a[i] / m.aij[(i, i)]);
    if !admissible {
        return Err(ConstraintError::NotAdmissible { margins: adm.margins });
    }
    let map = PlusRootMap::new(sys, vort, m, lambda, opts.epsilon);
    let n = sys.rank();
    // every fixed point satisfies a_i t_i ≤ |V|
    let min_a = m.a.iter().copied().fold(f64::INFINITY, f64::min);
    let bound = 10.0 * m.volume / min_a;

    let mut t = vec![0.0; n];
    let mut iterations = 0;
    let mut stalled = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let next = map.eval(&t)?;
        iterations += 1;
        let step = t.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let size = next.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
        t = next;
        if t.iter().any(|&x| x > bound) {
            return Err(ConstraintError::Diverged { iterations, bound });
        }
        if step <= opts.tol {
            converged = true;
            break;
        }
        if step <= 1e-15 * size {
            stalled += 1;
            if stalled >= 50 {
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let mut newton_steps = 0;
    let polish_limit = if converged { 3 } else { 50 };
    while newton_steps < polish_limit && map.newton_step(&mut t) {
        newton_steps += 1;
        if map
            .fixed_point_gap(&t)
            .is_some_and(|g| g <= 1e-15 * (1.0 + t.iter().fold(0.0, |s: f64, x| s.max(*x))))
        {
            break;
        }
    }
    if !converged {
        match map.fixed_point_gap(&t) {
            Some(g) if g <= opts.tol => {}
            _ => return Err(ConstraintError::MaxIter(iterations)),
        }
    }
    let quad_residual = map.relative_residual(&t);
    let c = t.iter().map(|x| x.ln()).collect();
    Ok(ConstraintSolution {
        t,
        c,
        quad_residual,
        iterations,
        newton_steps,
    })
}
