//! Cartan-matrix data for the non-Abelian system.
//!
//! A matrix `K` is accepted when it factors as `Kᵀ = P S` with `P` a positive
//! diagonal and `S` symmetric positive definite with nonpositive off-diagonal
//! entries and an entrywise positive inverse. From the factorisation we derive
//!
//! ```text
//! R = diag((Kᵀ)⁻¹ 1)        K̃ = Kᵀ R
//! A = P⁻¹ S⁻¹ P⁻¹          Q = R S R
//! b = 4π A N
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CartanError {
    #[error("matrix must be square and non-empty, got {0}x{1}")]
    Shape(usize, usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("P must have {expected} strictly positive entries")]
    BadP { expected: usize },
    #[error(
        "no positive diagonal P symmetrises K: entries ({0},{1}) and ({1},{0}) have incompatible signs or zero pattern"
    )]
    InconsistentPattern(usize, usize),
    #[error("no positive diagonal P symmetrises K: the ratio constraints around a cycle through index {0} disagree")]
    InconsistentCycle(usize),
    #[error("K is reducible (off-diagonal pattern has {0} components); supply P explicitly")]
    Reducible(usize),
    #[error("S = P⁻¹Kᵀ is not symmetric (|S_{0}{1} - S_{1}{0}| = {2:e}); Kᵀ = PS has no solution with this P")]
    NotSymmetric(usize, usize, f64),
    #[error("S must have positive diagonal and nonpositive off-diagonal entries; entry ({0},{1}) = {2}")]
    SignPattern(usize, usize, f64),
    #[error("S is not positive definite (pivot {0} = {1:e})")]
    NotPositiveDefinite(usize, f64),
    #[error("{which}⁻¹ has a non-positive entry ({i},{j}) = {value:e}")]
    InverseNotPositive {
        which: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },
    #[error("R_{0} = {1:e} is not positive")]
    NonpositiveR(usize, f64),
    #[error("unknown Cartan preset `{0}` (expected A1, A2, B2 or G2)")]
    UnknownPreset(String),
    #[error("vortex data lists {found} components, the system has rank {expected}")]
    RankMismatch { expected: usize, found: usize },
    #[error("component {component}: expected {expected} vortex points, found {found}")]
    CountMismatch {
        component: usize,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Built-in Cartan matrices with their standard symmetrisers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CartanPreset {
    A1,
    A2,
    B2,
    G2,
}

impl CartanPreset {
    pub const ALL: [CartanPreset; 4] = [Self::A1, Self::A2, Self::B2, Self::G2];

    pub fn name(self) -> &'static str {
        match self {
            Self::A1 => "A1",
            Self::A2 => "A2",
            Self::B2 => "B2",
            Self::G2 => "G2",
        }
    }

    pub fn parse(name: &str) -> Result<Self, CartanError> {
        Self::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| CartanError::UnknownPreset(name.to_string()))
    }

    pub fn k(self) -> DMatrix<f64> {
        match self {
            Self::A1 => DMatrix::from_row_slice(1, 1, &[2.0]),
            Self::A2 => DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            Self::B2 => DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -1.0, 2.0]),
            Self::G2 => DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -3.0, 2.0]),
        }
    }

    /// A1 uses `P = (2)` so that `S = (1)`; the others use the normalised
    /// symmetriser from [`symmetrize_p`].
    pub fn p(self) -> DVector<f64> {
        match self {
            Self::A1 => DVector::from_element(1, 2.0),
            Self::A2 => DVector::from_vec(vec![1.0, 1.0]),
            Self::B2 => DVector::from_vec(vec![1.0, 2.0]),
            Self::G2 => DVector::from_vec(vec![3.0, 1.0]),
        }
    }

    pub fn system(self) -> CartanSystem {
        CartanSystem::validate(&self.k(), Some(&self.p())).expect("presets are valid")
    }
}

/// Positive diagonal `P` (normalised to `min P_i = 1`) with `P⁻¹Kᵀ` symmetric.
///
/// Symmetry of `S_ij = K_ji / P_i` forces `P_j / P_i = K_ij / K_ji` on every
/// nonzero off-diagonal pair, so `P` is propagated along a spanning tree of
/// the off-diagonal pattern and checked on the remaining pairs.
pub fn symmetrize_p(k: &DMatrix<f64>) -> Result<DVector<f64>, CartanError> {
    check_square(k)?;
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (kij, kji) = (k[(i, j)], k[(j, i)]);
            if (kij == 0.0) != (kji == 0.0) || kij * kji < 0.0 {
                return Err(CartanError::InconsistentPattern(i, j));
            }
        }
    }
    let mut p = vec![0.0; n];
    let mut components = 0;
    for root in 0..n {
        if p[root] != 0.0 {
            continue;
        }
        components += 1;
        p[root] = 1.0;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if j == i || k[(i, j)] == 0.0 {
                    continue;
                }
                let pj = p[i] * k[(i, j)] / k[(j, i)];
                if p[j] == 0.0 {
                    p[j] = pj;
                    stack.push(j);
                } else if ((p[j] - pj) / pj).abs() > 1e-12 {
                    return Err(CartanError::InconsistentCycle(i));
                }
            }
        }
    }
    if components > 1 {
        return Err(CartanError::Reducible(components));
    }
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DVector::from_iterator(n, p.into_iter().map(|x| x / min)))
}

fn check_square(k: &DMatrix<f64>) -> Result<(), CartanError> {
    if k.nrows() == 0 || k.nrows() != k.ncols() {
        return Err(CartanError::Shape(k.nrows(), k.ncols()));
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(CartanError::NonFinite);
    }
    Ok(())
}

/// Cholesky factorisation that rejects pivots below `tol`. Returns the lower
/// factor, or the index and value of the first failing pivot.
fn cholesky_with_tolerance(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, (usize, f64)> {
    let n = m.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return Err((j, d));
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

fn inverse_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .unwrap_or_else(|| m.clone().try_inverse().expect("validated matrix is invertible"))
}

fn check_positive_entries(m: &DMatrix<f64>, which: &'static str) -> Result<(), CartanError> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let value = m[(i, j)];
            if !(value > 1e-14) {
                return Err(CartanError::InverseNotPositive { which, i, j, value });
            }
        }
    }
    Ok(())
}

/// A validated factorisation `Kᵀ = P S` together with the derived matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CartanSystem {
    k: DMatrix<f64>,
    p: DVector<f64>,
    s: DMatrix<f64>,
    s_inv: DMatrix<f64>,
    r: DVector<f64>,
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_inv: DMatrix<f64>,
    k_tilde: DMatrix<f64>,
}

impl CartanSystem {
    /// Builds `S = P⁻¹Kᵀ` and checks every structure condition. When `p` is
    /// `None` it is derived with [`symmetrize_p`].
    pub fn validate(k: &DMatrix<f64>, p: Option<&DVector<f64>>) -> Result<Self, CartanError> {
        check_square(k)?;
        let n = k.nrows();
        let p = match p {
            Some(p) => {
                if p.len() != n || p.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                    return Err(CartanError::BadP { expected: n });
                }
                p.clone()
            }
            None => symmetrize_p(k)?,
        };
        let kt = k.transpose();
        let mut s = kt.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] /= p[i];
            }
        }
        let s_scale = s.amax();
        for i in 0..n {
            for j in (i + 1)..n {
                let gap = (s[(i, j)] - s[(j, i)]).abs();
                if gap > 1e-12 * s_scale {
                    return Err(CartanError::NotSymmetric(i, j, gap));
                }
            }
        }
        let s = (&s + s.transpose()) * 0.5;
        for i in 0..n {
            for j in 0..n {
                let x = s[(i, j)];
                if (i == j && !(x > 0.0)) || (i != j && x > 0.0) {
                    return Err(CartanError::SignPattern(i, j, x));
                }
            }
        }
        let ps = DMatrix::from_diagonal(&p) * &s;
        let kt_gap = (&kt - ps).amax();
        if kt_gap > 1e-12 * k.amax() {
            return Err(CartanError::NotSymmetric(0, 0, kt_gap));
        }
        let tol = 1e-12 * s.trace() / n as f64;
        cholesky_with_tolerance(&s, tol).map_err(|(i, d)| CartanError::NotPositiveDefinite(i, d))?;
        let s_inv = inverse_spd(&s);
        check_positive_entries(&s_inv, "S")?;

        let kt_inv = kt
            .clone()
            .try_inverse()
            .ok_or(CartanError::NotPositiveDefinite(0, 0.0))?;
        let r = kt_inv.column_sum();
        if let Some((i, &ri)) = r.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
            return Err(CartanError::NonpositiveR(i, ri));
        }
        let p_inv = DMatrix::from_diagonal(&p.map(|x| 1.0 / x));
        let r_diag = DMatrix::from_diagonal(&r);
        let a = &p_inv * &s_inv * &p_inv;
        let a = (&a + a.transpose()) * 0.5;
        let q = &r_diag * &s * &r_diag;
        let q = (&q + q.transpose()) * 0.5;
        let q_inv = inverse_spd(&q);
        check_positive_entries(&q_inv, "Q")?;
        let k_tilde = &kt * &r_diag;
        Ok(Self {
            k: k.clone(),
            p,
            s,
            s_inv,
            r,
            a,
            q,
            q_inv,
            k_tilde,
        })
    }

    pub fn rank(&self) -> usize {
        self.k.nrows()
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn s_inv(&self) -> &DMatrix<f64> {
        &self.s_inv
    }

    /// `R_i = Σ_j ((Kᵀ)⁻¹)_ij`.
    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn q_inv(&self) -> &DMatrix<f64> {
        &self.q_inv
    }

    /// `K̃ = Kᵀ R`.
    pub fn k_tilde(&self) -> &DMatrix<f64> {
        &self.k_tilde
    }

    /// `α_ij`: `α_ii = S_ii`, `α_ij = -S_ij` off the diagonal.
    pub fn alpha(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.s[(i, i)]
        } else {
            -self.s[(i, j)]
        }
    }

    /// `1ᵀ P⁻¹ (Kᵀ)⁻¹ x`.
    pub fn weighted_total(&self, x: &[f64]) -> f64 {
        let kt_inv_x = &self.s_inv * DVector::from_iterator(self.rank(), (0..self.rank()).map(|i| x[i] / self.p[i]));
        (0..self.rank()).map(|i| kt_inv_x[i] / self.p[i]).sum()
    }

    /// Necessary threshold: any solution requires `λ > λ₀` with
    /// `λ₀ = (16π/|V|) · 1ᵀP⁻¹(Kᵀ)⁻¹N / 1ᵀP⁻¹(Kᵀ)⁻¹1`.
    pub fn lambda0(&self, counts: &[usize], volume: f64) -> f64 {
        let n: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
        let ones = vec![1.0; self.rank()];
        16.0 * PI / volume * self.weighted_total(&n) / self.weighted_total(&ones)
    }

    /// `‖Kᵀ - PS‖_∞`.
    pub fn factorization_gap(&self) -> f64 {
        (self.k.transpose() - DMatrix::from_diagonal(&self.p) * &self.s).amax()
    }
}

/// Vortex multiplicities and locations, one multiset of vertices per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VortexData {
    counts: Vec<usize>,
    points: Vec<Vec<usize>>,
    b: Vec<f64>,
}

impl VortexData {
    /// `N_i` is the length of `points[i]`; repeated vertices add multiplicity.
    pub fn from_points<S: AsRef<str>>(
        sys: &CartanSystem,
        graph: &WeightedGraph,
        points: &[Vec<S>],
    ) -> Result<Self, CartanError> {
        let counts: Vec<usize> = points.iter().map(Vec::len).collect();
        Self::new(sys, graph, &counts, points)
    }

    pub fn new<S: AsRef<str>>(
        sys: &CartanSystem,
        graph: &WeightedGraph,
        counts: &[usize],
        points: &[Vec<S>],
    ) -> Result<Self, CartanError> {
        let n = sys.rank();
        if counts.len() != n || points.len() != n {
            return Err(CartanError::RankMismatch {
                expected: n,
                found: points.len().max(counts.len()),
            });
        }
        let mut resolved = Vec::with_capacity(n);
        for (i, (ps, &count)) in points.iter().zip(counts).enumerate() {
            if ps.len() != count {
                return Err(CartanError::CountMismatch {
                    component: i,
                    expected: count,
                    found: ps.len(),
                });
            }
            resolved.push(
                ps.iter()
                    .map(|p| graph.index_of(p.as_ref()))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Ok(Self::from_indices(sys, resolved))
    }

    pub(crate) fn from_indices(sys: &CartanSystem, points: Vec<Vec<usize>>) -> Self {
        let counts: Vec<usize> = points.iter().map(Vec::len).collect();
        let nvec = DVector::from_iterator(counts.len(), counts.iter().map(|&c| c as f64));
        let b = (sys.a() * nvec * (4.0 * PI)).iter().copied().collect();
        Self { counts, points, b }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Vertex indices of the vortex points of each component.
    pub fn points(&self) -> &[Vec<usize>] {
        &self.points
    }

    /// `b = 4π A N`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mat(n: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(n, n, v)
    }

    #[test]
    fn symmetrizer_examples() {
        let p = symmetrize_p(&CartanPreset::A2.k()).unwrap();
        assert_eq!(p.as_slice(), &[1.0, 1.0]);
        let p = symmetrize_p(&CartanPreset::G2.k()).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 1.0]);
        let sys = CartanSystem::validate(&CartanPreset::G2.k(), None).unwrap();
        assert_abs_diff_eq!(sys.s(), &mat(2, &[2.0 / 3.0, -1.0, -1.0, 2.0]), epsilon = 1e-15);
        let sys = CartanSystem::validate(&mat(1, &[2.0]), Some(&DVector::from_element(1, 2.0))).unwrap();
        assert_eq!(sys.s()[(0, 0)], 1.0);
    }

    #[test]
    fn symmetrizer_rejects_bad_patterns() {
        assert_eq!(
            symmetrize_p(&mat(2, &[2.0, -1.0, 0.0, 2.0])),
            Err(CartanError::InconsistentPattern(0, 1))
        );
        assert_eq!(
            symmetrize_p(&mat(2, &[2.0, 0.0, 0.0, 2.0])),
            Err(CartanError::Reducible(2))
        );
        // ratios 2, 1, 1 around the triangle are not multiplicatively consistent
        let k = mat(3, &[2.0, -2.0, -1.0, -1.0, 2.0, -1.0, -1.0, -1.0, 2.0]);
        assert!(matches!(symmetrize_p(&k), Err(CartanError::InconsistentCycle(_))));
    }

    #[test]
    fn validate_examples() {
        let a2 = CartanPreset::A2.system();
        assert_abs_diff_eq!(a2.r().as_slice(), &[1.0, 1.0][..], epsilon = 1e-14);
        let g2 = CartanPreset::G2.system();
        assert_abs_diff_eq!(g2.r().as_slice(), &[5.0, 3.0][..], epsilon = 1e-13);
        assert!(matches!(
            CartanSystem::validate(&mat(2, &[2.0, -2.0, -2.0, 2.0]), None),
            Err(CartanError::NotPositiveDefinite(1, _))
        ));
    }

    #[test]
    fn validate_reports_each_condition() {
        assert!(matches!(
            CartanSystem::validate(&CartanPreset::G2.k(), Some(&DVector::from_vec(vec![1.0, 1.0]))),
            Err(CartanError::NotSymmetric(..))
        ));
        assert!(matches!(
            CartanSystem::validate(&mat(2, &[2.0, 1.0, 1.0, 2.0]), None),
            Err(CartanError::SignPattern(0, 1, _))
        ));
        assert!(matches!(
            CartanSystem::validate(&mat(1, &[2.0]), Some(&DVector::from_element(1, -1.0))),
            Err(CartanError::BadP { .. })
        ));
        // positive definite, M-matrix pattern, but reducible: S⁻¹ has zero entries
        assert!(matches!(
            CartanSystem::validate(&mat(2, &[2.0, 0.0, 0.0, 2.0]), Some(&DVector::from_vec(vec![1.0, 1.0]))),
            Err(CartanError::InverseNotPositive { which: "S", .. })
        ));
    }

    #[test]
    fn presets_satisfy_structure_identities() {
        for preset in CartanPreset::ALL {
            let sys = preset.system();
            let n = sys.rank();
            assert!(sys.factorization_gap() <= 1e-12 * sys.k().amax());
            let kt_inv = sys.k().transpose().try_inverse().unwrap();
            let lhs = kt_inv * DVector::from_element(n, 1.0);
            assert_abs_diff_eq!(lhs, sys.r().clone(), epsilon = 1e-12);
            assert!(sys.a().clone().cholesky().is_some(), "{preset:?}");
            assert!(sys.q().clone().cholesky().is_some(), "{preset:?}");
            assert!(sys.q_inv().iter().all(|&x| x > 0.0));
            // A K̃ U K̃ = U Q for diagonal U, i.e. A K̃ = P⁻¹R entrywise
            let ak = sys.a() * sys.k_tilde();
            for i in 0..n {
                for j in 0..n {
                    let expected = if i == j { sys.r()[i] / sys.p()[i] } else { 0.0 };
                    assert_abs_diff_eq!(ak[(i, j)], expected, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn lambda0_examples() {
        let a1 = CartanPreset::A1.system();
        assert_abs_diff_eq!(a1.lambda0(&[1], 2.0), 8.0 * PI, epsilon = 1e-12);
        assert_eq!(a1.lambda0(&[0], 2.0), 0.0);
        let a2 = CartanPreset::A2.system();
        assert_abs_diff_eq!(a2.lambda0(&[2, 3], 10.0), 8.0 * PI * 5.0 / 10.0, epsilon = 1e-12);
    }

    #[test]
    fn vortex_b_vector() {
        let g = WeightedGraph::complete(2).unwrap();
        let a1 = CartanPreset::A1.system();
        let v = VortexData::from_points(&a1, &g, &[vec!["v0"]]).unwrap();
        assert_abs_diff_eq!(v.b()[0], PI, epsilon = 1e-14);
        let v = VortexData::from_points(&a1, &g, &[Vec::<&str>::new()]).unwrap();
        assert_eq!(v.b(), &[0.0]);
        let a2 = CartanPreset::A2.system();
        let v = VortexData::from_points(&a2, &g, &[vec!["v0"], vec![]]).unwrap();
        assert_abs_diff_eq!(v.b()[0], 8.0 * PI / 3.0, epsilon = 1e-13);
        assert_abs_diff_eq!(v.b()[1], 4.0 * PI / 3.0, epsilon = 1e-13);

        assert!(matches!(
            VortexData::new(&a1, &g, &[2], &[vec!["v0"]]),
            Err(CartanError::CountMismatch { .. })
        ));
        assert!(matches!(
            VortexData::from_points(&a1, &g, &[vec!["zz"]]),
            Err(CartanError::Graph(GraphError::UnknownVertex(_)))
        ));
    }
}
