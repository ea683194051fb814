//! Constrained variational solver for the non-Abelian system.
//!
//! After the translation `u_i ↦ u_i + ln R_i` and the split `u = u⁰ + v`, the
//! system reads
//!
//! ```text
//! Δv = λ K̃ U K̃ (U - 1) + 4πN/|V|,      U_i = e^{u_i⁰ + v_i},
//! ```
//!
//! equivalently `Δ(Av) = λ UQ(U - 1) + b/|V|`, whose solutions are the critical
//! points of
//!
//! ```text
//! I(v) = ½ Σ_jk A_kj ∫Γ(v_k, v_j) dμ + (λ/2) ∫(U - 1)ᵀQ(U - 1) dμ + ∫ bᵀv/|V| dμ.
//! ```
//!
//! With `v = w + c(w)`, where `c(w)` solves the constant-shift constraint, the
//! reduced functional `J(w) = I(w + c(w))` is minimised over zero-mean `w` in
//! the admissible set. The constraint is exactly stationarity of `I` in the
//! constant directions, so the gradient of `J` is the zero-mean part of the
//! gradient of `I`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abelian::{monotone_solve, AbelianError, AbelianOptions, AbelianProblem};
use crate::cartan::{CartanError, CartanSystem, VortexData};
use crate::constraint::{
    admissibility, admissibility_threshold, check_zero_mean, exponentials, solve_t, ConstraintError, ConstraintOptions,
    ConstraintSolution, Moments, EXPONENT_LIMIT,
};
use crate::graph::{GraphError, MultiField, VertexField, WeightedGraph};
use crate::poisson::{background, BackgroundField, PoissonError};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("coupling must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("λ = {lambda} does not exceed the necessary threshold λ₀ = {lambda0}; no solution exists")]
    LambdaBelowThreshold { lambda: f64, lambda0: f64 },
    #[error("seed is not admissible (margins {margins:?}); the admissible set is empty below λ = {required_lambda}")]
    SeedNotAdmissible { required_lambda: f64, margins: Vec<f64> },
    #[error("gradient descent hit the iteration limit ({} iterations, |grad J| = {:e})", .0.iterations, .0.grad_norm)]
    MaxIter(Box<SolveReport>),
    #[error("line search failed after {} iterations (|grad J| = {:e}{})", .0.iterations, .0.grad_norm, if .0.boundary_rejections > 0 { ", steps rejected at the admissible boundary; λ is likely too small" } else { "" })]
    LineSearchFail(Box<SolveReport>),
    #[error("seed construction failed: {0}")]
    Seed(#[source] AbelianError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Cartan(#[from] CartanError),
    #[error(transparent)]
    Poisson(#[from] PoissonError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl SolveError {
    /// The partial report carried by non-convergence errors.
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            Self::MaxIter(r) | Self::LineSearchFail(r) => Some(r),
            _ => None,
        }
    }
}

/// Graph, Cartan data, vortices and background: everything but the coupling.
#[derive(Debug, Clone)]
pub struct VortexProblem {
    graph: WeightedGraph,
    sys: CartanSystem,
    vort: VortexData,
    bg: BackgroundField,
}

impl VortexProblem {
    pub fn new(graph: WeightedGraph, sys: CartanSystem, vort: VortexData) -> Result<Self, SolveError> {
        let bg = background(&graph, &vort)?;
        Ok(Self { graph, sys, vort, bg })
    }

    pub fn from_points<S: AsRef<str>>(
        graph: WeightedGraph,
        sys: CartanSystem,
        points: &[Vec<S>],
    ) -> Result<Self, SolveError> {
        let vort = VortexData::from_points(&sys, &graph, points)?;
        Self::new(graph, sys, vort)
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn system(&self) -> &CartanSystem {
        &self.sys
    }

    pub fn vortices(&self) -> &VortexData {
        &self.vort
    }

    pub fn background(&self) -> &BackgroundField {
        &self.bg
    }

    pub fn rank(&self) -> usize {
        self.sys.rank()
    }

    pub fn lambda0(&self) -> f64 {
        self.sys.lambda0(self.vort.counts(), self.graph.volume())
    }

    /// Coupling from which `w = -u⁰` is admissible (and below which nothing is).
    pub fn admissibility_threshold(&self) -> f64 {
        admissibility_threshold(&self.sys, &self.vort, self.graph.volume())
    }

    pub fn at(&self, lambda: f64) -> Result<ProblemInstance<'_>, SolveError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(SolveError::BadLambda(lambda));
        }
        Ok(ProblemInstance { problem: self, lambda })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SeedStrategy {
    /// `w = -u⁰`.
    NegU0,
    /// Zero-mean part of the scalar maximal solution at coupling `r`
    /// (default `10λ`).
    Abelian {
        r: Option<f64>,
    },
    Zero,
}

impl SeedStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NegU0 => "neg-u0",
            Self::Abelian { .. } => "abelian",
            Self::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Stop when `‖grad J‖_∞ ≤ tol` and the system residual is at most `10·tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: SeedStrategy,
    /// Refuse couplings `λ ≤ λ₀`.
    pub enforce_threshold: bool,
    pub constraint: ConstraintOptions,
    /// Armijo constant.
    pub c1: f64,
    /// Steepest-descent restart period for the conjugate directions; `None`
    /// uses `10 · n · |V|`, `Some(1)` is plain steepest descent.
    pub restart: Option<usize>,
    /// Scale search directions by the pointwise block-diagonal part of the
    /// Hessian.
    pub precondition: bool,
    /// Largest sup-norm change of `w` tried in one line search.
    pub max_step: f64,
    /// Give up after this many iterations without a decrease of `J` above
    /// its rounding floor.
    pub stall_limit: usize,
    pub record_trace: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 20_000,
            seed: SeedStrategy::NegU0,
            enforce_threshold: true,
            constraint: ConstraintOptions::default(),
            c1: 1e-4,
            restart: None,
            precondition: true,
            max_step: 0.25,
            stall_limit: 200,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub termination: Termination,
    pub lambda: f64,
    pub lambda0: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub seed: String,
    #[serde(rename = "J")]
    pub j_value: f64,
    pub grad_norm: f64,
    /// `‖Δv - λK̃UK̃(U - 1) - 4πN/|V|‖_∞`.
    pub residual_inf: f64,
    /// Residual of the untranslated system at `u_orig`, Dirac masses included.
    pub residual_original_inf: f64,
    pub identity_310_err: f64,
    pub identity_313_err: f64,
    pub t: Vec<f64>,
    pub c: Vec<f64>,
    pub admissible_margins: Vec<f64>,
    pub boundary_rejections: usize,
    pub w: MultiField,
    pub v: MultiField,
    pub u_hat: MultiField,
    pub u_orig: MultiField,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub j_trace: Vec<f64>,
}

/// Everything computed from one zero-mean `w`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub w: MultiField,
    pub moments: Moments,
    pub constraint: ConstraintSolution,
    pub margins: Vec<f64>,
    /// `v = w + c(w)`.
    pub v: MultiField,
    /// `U_i = e^{u_i⁰ + v_i}`.
    pub u_exp: Vec<Vec<f64>>,
    /// `J(w)` from the reduced closed form.
    pub j: f64,
    /// Zero-mean gradient of `J` in the `μ`-weighted inner product.
    pub grad: MultiField,
    /// Means of the raw gradient of `I` before projection; zero up to the
    /// constraint tolerance.
    pub grad_raw_mean: Vec<f64>,
}

/// A [`VortexProblem`] at a fixed coupling `λ`.
#[derive(Debug, Clone, Copy)]
pub struct ProblemInstance<'p> {
    problem: &'p VortexProblem,
    lambda: f64,
}

/// `Σ_i ∫ a_i b_i dμ`.
pub fn inner(g: &WeightedGraph, a: &MultiField, b: &MultiField) -> f64 {
    a.components()
        .iter()
        .zip(b.components())
        .map(|(x, y)| {
            x.values()
                .iter()
                .zip(y.values())
                .zip(g.measure())
                .map(|((p, q), m)| p * q * m)
                .sum::<f64>()
        })
        .sum()
}

fn axpy(a: &MultiField, s: f64, d: &MultiField) -> MultiField {
    a.add(&d.scale(s))
}

impl<'p> ProblemInstance<'p> {
    pub fn problem(&self) -> &'p VortexProblem {
        self.problem
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn graph(&self) -> &'p WeightedGraph {
        &self.problem.graph
    }

    fn sys(&self) -> &'p CartanSystem {
        &self.problem.sys
    }

    fn u0(&self) -> &'p MultiField {
        self.problem.bg.u0()
    }

    fn exp_of(&self, v: &MultiField) -> Result<Vec<Vec<f64>>, SolveError> {
        self.graph().check_multi(v)?;
        if v.rank() != self.problem.rank() {
            return Err(GraphError::RaggedMultiField.into());
        }
        Ok(exponentials(&self.problem.bg, v)?)
    }

    fn gradient_energy(&self, v: &MultiField) -> f64 {
        let g = self.graph();
        let a = self.sys().a();
        let n = v.rank();
        let mut total = 0.0;
        for j in 0..n {
            for k in 0..n {
                total += a[(k, j)] * g.dirichlet_form_slices(v.component(k).values(), v.component(j).values());
            }
        }
        0.5 * total
    }

    /// The energy `I(v)` for an arbitrary (not necessarily constrained) `v`.
    pub fn energy_i(&self, v: &MultiField) -> Result<f64, SolveError> {
        let u = self.exp_of(v)?;
        let g = self.graph();
        let q = self.sys().q();
        let n = v.rank();
        let mut potential = 0.0;
        for x in 0..g.vertex_count() {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += (u[i][x] - 1.0) * q[(i, j)] * (u[j][x] - 1.0);
                }
            }
            potential += g.measure()[x] * s;
        }
        let b = self.problem.vort.b();
        let source: f64 = (0..n)
            .map(|i| b[i] * g.integrate_slice(v.component(i).values()) / g.volume())
            .sum();
        Ok(self.gradient_energy(v) + 0.5 * self.lambda * potential + source)
    }

    /// Computes `c(w)`, `J(w)` and the gradient at a zero-mean `w`.
    pub fn evaluate(&self, w: &MultiField) -> Result<Evaluation, SolveError> {
        self.evaluate_with(w, &ConstraintOptions::default())
    }

    pub fn evaluate_with(&self, w: &MultiField, copts: &ConstraintOptions) -> Result<Evaluation, SolveError> {
        let g = self.graph();
        let sys = self.sys();
        let vort = &self.problem.vort;
        check_zero_mean(g, w)?;
        let e = self.exp_of(w)?;
        let moments = Moments::from_exponentials(g, &e);
        let margins = admissibility(sys, vort, &moments, self.lambda).margins;
        let constraint = solve_t(sys, vort, &moments, self.lambda, copts)?;
        let n = sys.rank();
        let nv = g.vertex_count();
        let t = &constraint.t;
        let c = &constraint.c;
        let v = w.shift(c);
        let mut u_exp = e;
        for i in 0..n {
            for x in 0..nv {
                u_exp[i][x] *= t[i];
            }
        }
        if u_exp
            .iter()
            .flatten()
            .any(|x| !x.is_finite() || x.ln().abs() > EXPONENT_LIMIT)
        {
            return Err(ConstraintError::NumericRange {
                component: 0,
                value: f64::INFINITY,
            }
            .into());
        }

        let b = vort.b();
        let r = sys.r();
        let p = sys.p();
        let reduced: f64 = (0..n).map(|i| r[i] / p[i] * (g.volume() - t[i] * moments.a[i])).sum();
        let j = self.gradient_energy(w) + 0.5 * self.lambda * reduced + (0..n).map(|i| b[i] * c[i]).sum::<f64>()
            - 0.5 * b.iter().sum::<f64>();

        let (grad, grad_raw_mean) = self.gradient_at(w, &u_exp);
        Ok(Evaluation {
            w: w.clone(),
            moments,
            constraint,
            margins,
            v,
            u_exp,
            j,
            grad,
            grad_raw_mean,
        })
    }

    /// `G_i = -(AΔv)_i + λ(UQ(U - 1))_i + b_i/|V|`, projected to zero mean.
    fn gradient_at(&self, v: &MultiField, u: &[Vec<f64>]) -> (MultiField, Vec<f64>) {
        let g = self.graph();
        let sys = self.sys();
        let (a, q) = (sys.a(), sys.q());
        let b = self.problem.vort.b();
        let n = v.rank();
        let nv = g.vertex_count();
        let laps: Vec<Vec<f64>> = v
            .components()
            .iter()
            .map(|vi| {
                let mut out = vec![0.0; nv];
                g.laplacian_into(vi.values(), &mut out);
                out
            })
            .collect();
        let mut comps = Vec::with_capacity(n);
        let mut means = Vec::with_capacity(n);
        for i in 0..n {
            let mut gi: Vec<f64> = (0..nv)
                .map(|x| {
                    let alap: f64 = (0..n).map(|k| a[(i, k)] * laps[k][x]).sum();
                    let quq: f64 = (0..n).map(|k| q[(i, k)] * (u[k][x] - 1.0)).sum();
                    -alap + self.lambda * u[i][x] * quq + b[i] / g.volume()
                })
                .collect();
            means.push(g.integrate_slice(&gi) / g.volume());
            g.project_zero_mean_in_place(&mut gi);
            comps.push(VertexField::new(gi));
        }
        (MultiField::new(comps).expect("rank ≥ 1"), means)
    }

    /// Solves `H(x) z(x) = G(x)` vertex by vertex with the block
    /// `H = A·deg(x)/μ(x) + λ(UQU + diag(UQ(U - 1))⁺)` and returns the zero-mean
    /// part of `z`. `H` is positive definite, so `-z` is a descent direction.
    pub fn preconditioned(&self, eval: &Evaluation) -> MultiField {
        let g = self.graph();
        let sys = self.sys();
        let (a, q) = (sys.a(), sys.q());
        let n = sys.rank();
        let nv = g.vertex_count();
        let u = &eval.u_exp;
        let mut out = vec![vec![0.0; nv]; n];
        for x in 0..nv {
            let degree: f64 = g.neighbors(x).iter().map(|&(_, w)| w).sum::<f64>() / g.measure()[x];
            let mut h = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                a[(i, j)] * degree + self.lambda * u[i][x] * q[(i, j)] * u[j][x]
            });
            for i in 0..n {
                let curv: f64 = (0..n).map(|k| q[(i, k)] * (u[k][x] - 1.0)).sum::<f64>() * u[i][x];
                h[(i, i)] += self.lambda * curv.max(0.0);
            }
            let rhs = nalgebra::DVector::from_iterator(n, (0..n).map(|i| eval.grad.component(i)[x]));
            let z = match h.clone().cholesky() {
                Some(c) => c.solve(&rhs),
                None => rhs,
            };
            for i in 0..n {
                out[i][x] = z[i];
            }
        }
        for zi in &mut out {
            g.project_zero_mean_in_place(zi);
        }
        MultiField::new(out.into_iter().map(VertexField::new).collect()).expect("rank ≥ 1")
    }

    /// `J(w) = I(w + c(w))` in its reduced closed form.
    pub fn functional_j(&self, w: &MultiField) -> Result<f64, SolveError> {
        Ok(self.evaluate(w)?.j)
    }

    pub fn grad_j(&self, w: &MultiField) -> Result<MultiField, SolveError> {
        Ok(self.evaluate(w)?.grad)
    }

    /// Pointwise residual of `Δv = λK̃UK̃(U - 1) + 4πN/|V|`.
    pub fn system_residual(&self, v: &MultiField) -> Result<MultiField, SolveError> {
        let u = self.exp_of(v)?;
        let g = self.graph();
        let kt = self.sys().k_tilde();
        let counts = self.problem.vort.counts();
        let n = v.rank();
        let nv = g.vertex_count();
        let mut comps = Vec::with_capacity(n);
        for i in 0..n {
            let lap = g.laplacian(v.component(i))?;
            let res = (0..nv)
                .map(|x| {
                    let mut quad = 0.0;
                    let mut lin = 0.0;
                    for j in 0..n {
                        lin += kt[(i, j)] * u[j][x];
                        for k in 0..n {
                            quad += kt[(j, k)] * kt[(i, j)] * u[j][x] * u[k][x];
                        }
                    }
                    lap[x] - self.lambda * (quad - lin) - 4.0 * PI * counts[i] as f64 / g.volume()
                })
                .collect();
            comps.push(VertexField::new(res));
        }
        Ok(MultiField::new(comps)?)
    }

    /// Residual of the untranslated system
    /// `Δu_i = λ(Σ_jk K_kj K_ji e^{u_j} e^{u_k} - Σ_j K_ji e^{u_j}) + 4π Σ_s δ_{p_is}`.
    pub fn original_residual(&self, u_orig: &MultiField) -> Result<f64, SolveError> {
        let g = self.graph();
        g.check_multi(u_orig)?;
        let k = self.sys().k();
        let n = u_orig.rank();
        let nv = g.vertex_count();
        let e: Vec<Vec<f64>> = u_orig
            .components()
            .iter()
            .map(|c| c.values().iter().map(|x| x.exp()).collect())
            .collect();
        let mut worst = 0.0_f64;
        for i in 0..n {
            let mut rhs = vec![0.0; nv];
            for &p in &self.problem.vort.points()[i] {
                rhs[p] += 4.0 * PI / g.measure()[p];
            }
            let lap = g.laplacian(u_orig.component(i))?;
            for x in 0..nv {
                let mut quad = 0.0;
                let mut lin = 0.0;
                for j in 0..n {
                    lin += k[(j, i)] * e[j][x];
                    for kk in 0..n {
                        quad += k[(kk, j)] * k[(j, i)] * e[j][x] * e[kk][x];
                    }
                }
                let r = lap[x] - self.lambda * (quad - lin) - rhs[x];
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    /// Errors in the integral identities
    /// `∫UQ(U - 1) dμ + b/λ = 0` (sup over components) and
    /// `∫(U - ½)ᵀQ(U - ½) dμ = (|V|/4)·1ᵀP⁻¹(Kᵀ)⁻¹1 - 4π·1ᵀP⁻¹(Kᵀ)⁻¹N/λ`.
    pub fn check_identities(&self, v: &MultiField) -> Result<(f64, f64), SolveError> {
        let u = self.exp_of(v)?;
        let g = self.graph();
        let sys = self.sys();
        let q = sys.q();
        let b = self.problem.vort.b();
        let n = v.rank();
        let mut constraint = vec![0.0; n];
        let mut quadratic = 0.0;
        for x in 0..g.vertex_count() {
            let m = g.measure()[x];
            for i in 0..n {
                let mut qu = 0.0;
                let mut qh = 0.0;
                for j in 0..n {
                    qu += q[(i, j)] * (u[j][x] - 1.0);
                    qh += q[(i, j)] * (u[j][x] - 0.5);
                }
                constraint[i] += m * u[i][x] * qu;
                quadratic += m * (u[i][x] - 0.5) * qh;
            }
        }
        let err_310 = (0..n)
            .map(|i| (constraint[i] + b[i] / self.lambda).abs())
            .fold(0.0, f64::max);
        let err_313 = (quadratic - self.identity_313_rhs()).abs();
        Ok((err_310, err_313))
    }

    /// Magnitude of the terms making up `J`, `1 + λ|V| Σ R_i/P_i`; rounding in
    /// `J` is relative to this.
    pub fn term_scale(&self) -> f64 {
        let sys = self.sys();
        1.0 + self.lambda * self.graph().volume() * (0..sys.rank()).map(|i| sys.r()[i] / sys.p()[i]).sum::<f64>()
    }

    /// `(|V|/4)·1ᵀP⁻¹(Kᵀ)⁻¹1 - 4π·1ᵀP⁻¹(Kᵀ)⁻¹N/λ`; positive iff `λ > λ₀`.
    pub fn identity_313_rhs(&self) -> f64 {
        let sys = self.sys();
        let ones = vec![1.0; sys.rank()];
        let counts: Vec<f64> = self.problem.vort.counts().iter().map(|&c| c as f64).collect();
        self.graph().volume() / 4.0 * sys.weighted_total(&ones) - 4.0 * PI * sys.weighted_total(&counts) / self.lambda
    }

    pub fn seed(&self, strategy: SeedStrategy) -> Result<MultiField, SolveError> {
        let g = self.graph();
        let u0 = self.u0();
        match strategy {
            SeedStrategy::NegU0 => Ok(u0.scale(-1.0)),
            SeedStrategy::Zero => Ok(MultiField::zeros(u0.rank(), g.vertex_count())),
            SeedStrategy::Abelian { r } => {
                let r = r.unwrap_or(10.0 * self.lambda);
                let mut comps = Vec::with_capacity(u0.rank());
                for (i, points) in self.problem.vort.points().iter().enumerate() {
                    if points.is_empty() {
                        comps.push(VertexField::zeros(g.vertex_count()));
                        continue;
                    }
                    let p = AbelianProblem::with_background(g, points, u0.component(i).clone(), r)
                        .map_err(SolveError::Seed)?;
                    let sol = monotone_solve(&p, &AbelianOptions::default()).map_err(SolveError::Seed)?;
                    comps.push(g.project_zero_mean(&sol.v)?);
                }
                Ok(MultiField::new(comps)?)
            }
        }
    }

    fn initial_evaluation(&self, opts: &MinimizeOptions) -> Result<(Evaluation, SeedStrategy), SolveError> {
        let mut strategies = vec![opts.seed];
        if opts.seed == SeedStrategy::NegU0 {
            strategies.push(SeedStrategy::Abelian { r: None });
        }
        let mut last_margins = Vec::new();
        for strategy in strategies {
            let w = match self.seed(strategy) {
                Ok(w) => w,
                Err(SolveError::Seed(_)) => continue,
                Err(e) => return Err(e),
            };
            match self.evaluate_with(&w, &opts.constraint) {
                Ok(e) => return Ok((e, strategy)),
                Err(SolveError::Constraint(ConstraintError::NotAdmissible { margins })) => {
                    last_margins = margins;
                }
                Err(e) => return Err(e),
            }
        }
        Err(SolveError::SeedNotAdmissible {
            required_lambda: self.problem.admissibility_threshold(),
            margins: last_margins,
        })
    }

    /// Minimises `J` over zero-mean fields inside the admissible set by
    /// conjugate gradients (Polak-Ribière+, periodic steepest-descent
    /// restarts) with Armijo backtracking. Steps leaving the admissible set
    /// are halved.
    pub fn minimize(&self, opts: &MinimizeOptions) -> Result<SolveReport, SolveError> {
        let lambda0 = self.problem.lambda0();
        if opts.enforce_threshold && !(self.lambda > lambda0) {
            return Err(SolveError::LambdaBelowThreshold {
                lambda: self.lambda,
                lambda0,
            });
        }
        let g = self.graph();
        let sys = self.sys();
        let (mut eval, seed) = self.initial_evaluation(opts)?;
        let restart = opts.restart.unwrap_or(10 * sys.rank() * g.vertex_count()).max(1);
        let scale = self.term_scale();

        let mut trace = Vec::new();
        if opts.record_trace {
            trace.push(eval.j);
        }
        let mut evaluations = 1;
        let mut boundary_rejections = 0;
        let mut direction: Option<MultiField> = None;
        let mut prev: Option<(MultiField, MultiField)> = None;
        let mut prev_slope = 0.0;
        let mut step = 0.0;
        let mut iterations = 0;
        let mut best = eval.j;
        let mut stalled = 0;
        let termination = loop {
            let grad_norm = eval.grad.sup_norm();
            if grad_norm <= opts.tol {
                let res = self.system_residual(&eval.v)?.sup_norm();
                if res <= 10.0 * opts.tol {
                    break Termination::Converged;
                }
            }
            if iterations >= opts.max_iter {
                break Termination::MaxIter;
            }
            iterations += 1;

            let z = if opts.precondition {
                self.preconditioned(&eval)
            } else {
                eval.grad.clone()
            };
            let steepest = z.scale(-1.0);
            let mut d = match (&direction, &prev) {
                (Some(d_prev), Some((g_prev, z_prev))) if (iterations - 1) % restart != 0 => {
                    let y = z.add(&z_prev.scale(-1.0));
                    let beta = (inner(g, &eval.grad, &y) / inner(g, g_prev, z_prev)).max(0.0);
                    axpy(&steepest, beta, d_prev)
                }
                _ => steepest.clone(),
            };
            let mut slope = inner(g, &eval.grad, &d);
            if !(slope < 0.0) {
                d = steepest;
                slope = inner(g, &eval.grad, &d);
            }
            if slope == 0.0 {
                break Termination::LineSearchFail;
            }

            let mut alpha = if step > 0.0 {
                (step * prev_slope / slope).clamp(step * 0.1, step * 10.0)
            } else if opts.precondition {
                1.0
            } else {
                1.0 / (1.0 + d.sup_norm())
            };
            // rounding floor of J, set by the magnitude of its terms
            let noise = 4e-15 * (eval.j.abs() + scale);
            alpha = alpha.min(opts.max_step / d.sup_norm());
            let mut accepted = None;
            for _ in 0..80 {
                let mut trial = axpy(&eval.w, alpha, &d);
                for i in 0..trial.rank() {
                    g.project_zero_mean_in_place(trial.component_mut(i).values_mut());
                }
                evaluations += 1;
                match self.evaluate_with(&trial, &opts.constraint) {
                    Ok(next) => {
                        // below the rounding floor J differences carry no information, so
                        // the derivative form of the Armijo test (exact for quadratics) takes over
                        let armijo = next.j <= eval.j + opts.c1 * alpha * slope && -alpha * slope > noise;
                        let approx =
                            next.j <= eval.j + noise && inner(g, &next.grad, &d) <= (2.0 * opts.c1 - 1.0) * slope;
                        if armijo || approx {
                            accepted = Some(next);
                            break;
                        }
                    }
                    Err(SolveError::Constraint(
                        ConstraintError::NotAdmissible { .. }
                        | ConstraintError::NumericRange { .. }
                        | ConstraintError::NegativeDiscriminant { .. }
                        | ConstraintError::Diverged { .. }
                        | ConstraintError::NotPositiveDefinite,
                    )) => boundary_rejections += 1,
                    Err(e) => return Err(e),
                }
                alpha *= 0.5;
            }
            let Some(next) = accepted else {
                break Termination::LineSearchFail;
            };
            if stalled >= opts.stall_limit || boundary_rejections >= 100 {
                break Termination::LineSearchFail;
            }
            if opts.record_trace {
                trace.push(next.j);
            }
            if next.j < best - noise {
                best = next.j;
                stalled = 0;
            } else {
                stalled += 1;
            }
            step = alpha;
            prev_slope = slope;
            prev = Some((std::mem::replace(&mut eval, next).grad, z));
            direction = Some(d);
        };

        let report = self.assemble(
            &eval,
            termination,
            iterations,
            evaluations,
            boundary_rejections,
            seed,
            lambda0,
            trace,
        )?;
        match termination {
            Termination::Converged => Ok(report),
            Termination::MaxIter => Err(SolveError::MaxIter(Box::new(report))),
            Termination::LineSearchFail => Err(SolveError::LineSearchFail(Box::new(report))),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        eval: &Evaluation,
        termination: Termination,
        iterations: usize,
        evaluations: usize,
        boundary_rejections: usize,
        seed: SeedStrategy,
        lambda0: f64,
        j_trace: Vec<f64>,
    ) -> Result<SolveReport, SolveError> {
        let residual_inf = self.system_residual(&eval.v)?.sup_norm();
        let (identity_310_err, identity_313_err) = self.check_identities(&eval.v)?;
        let u_hat = self.u0().add(&eval.v);
        let ln_r: Vec<f64> = self.sys().r().iter().map(|x| x.ln()).collect();
        let u_orig = u_hat.shift(&ln_r);
        let residual_original_inf = self.original_residual(&u_orig)?;
        Ok(SolveReport {
            converged: termination == Termination::Converged,
            termination,
            lambda: self.lambda,
            lambda0,
            iterations,
            evaluations,
            seed: seed.name().to_string(),
            j_value: eval.j,
            grad_norm: eval.grad.sup_norm(),
            residual_inf,
            residual_original_inf,
            identity_310_err,
            identity_313_err,
            t: eval.constraint.t.clone(),
            c: eval.constraint.c.clone(),
            admissible_margins: eval.margins.clone(),
            boundary_rejections,
            w: eval.w.clone(),
            v: eval.v.clone(),
            u_hat,
            u_orig,
            j_trace,
        })
    }
}
