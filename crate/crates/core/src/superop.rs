//! Dense superoperators on column-stacked `d x d` operators, the map
//! `R(A) = i A H_eff - i H_eff^dagger A`, resolvent solves, exponentials and
//! dominant eigenpairs.

use faer::{c64, Col, Mat};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, cr, dagger, kron, stack, transpose, unstack, Operator, I};
use crate::model::LindbladModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Picture {
    Heisenberg,
    Schrodinger,
}

impl Picture {
    pub fn flip(self) -> Picture {
        match self {
            Picture::Heisenberg => Picture::Schrodinger,
            Picture::Schrodinger => Picture::Heisenberg,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    matrix: Mat<c64>,
    picture: Picture,
    dim: usize,
}

impl SuperOperator {
    pub fn new(matrix: Mat<c64>, picture: Picture) -> Self {
        let n = matrix.nrows();
        assert_eq!(n, matrix.ncols(), "superoperator matrix must be square");
        let dim = (n as f64).sqrt().round() as usize;
        assert_eq!(dim * dim, n, "superoperator size must be a square");
        SuperOperator {
            matrix,
            picture,
            dim,
        }
    }

    pub fn zero(dim: usize, picture: Picture) -> Self {
        Self::new(Mat::zeros(dim * dim, dim * dim), picture)
    }

    pub fn identity(dim: usize, picture: Picture) -> Self {
        Self::new(Mat::identity(dim * dim, dim * dim), picture)
    }

    /// The map `X -> A X B`.
    pub fn sandwich(a: &Operator, b: &Operator, picture: Picture) -> Self {
        Self::new(kron(&transpose(b), a), picture)
    }

    pub fn matrix(&self) -> &Mat<c64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }

    pub fn picture(&self) -> Picture {
        self.picture
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, a: &Operator) -> Operator {
        unstack(&(&self.matrix * &stack(a)), self.dim)
    }

    pub fn apply_vec(&self, v: &Col<c64>) -> Col<c64> {
        &self.matrix * v
    }

    /// Adjoint with respect to the Hilbert-Schmidt inner product.
    pub fn adjoint(&self) -> Self {
        SuperOperator {
            matrix: self.matrix.adjoint().to_owned(),
            picture: self.picture.flip(),
            dim: self.dim,
        }
    }

    /// `self ∘ other`
    pub fn compose(&self, other: &SuperOperator) -> Self {
        SuperOperator {
            matrix: &self.matrix * &other.matrix,
            picture: self.picture,
            dim: self.dim,
        }
    }

    pub fn scaled(&self, s: c64) -> Self {
        SuperOperator {
            matrix: linalg::scale(&self.matrix, s),
            picture: self.picture,
            dim: self.dim,
        }
    }

    pub fn plus(&self, other: &SuperOperator) -> Self {
        SuperOperator {
            matrix: &self.matrix + &other.matrix,
            picture: self.picture,
            dim: self.dim,
        }
    }

    pub fn minus(&self, other: &SuperOperator) -> Self {
        SuperOperator {
            matrix: &self.matrix - &other.matrix,
            picture: self.picture,
            dim: self.dim,
        }
    }

    /// `self + s Id`
    pub fn shifted(&self, s: c64) -> Self {
        let mut m = self.matrix.clone();
        for k in 0..m.nrows() {
            m[(k, k)] += s;
        }
        SuperOperator {
            matrix: m,
            picture: self.picture,
            dim: self.dim,
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.matrix.norm_l2()
    }

    /// Choi matrix `sum_ij |i><j| ⊗ G(|i><j|)`.
    pub fn choi(&self) -> Mat<c64> {
        let d = self.dim;
        let mut out = Mat::<c64>::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                let mut e = Mat::<c64>::zeros(d, d);
                e[(i, j)] = cr(1.0);
                let g = self.apply(&e);
                for a in 0..d {
                    for b in 0..d {
                        out[(i * d + a, j * d + b)] = g[(a, b)];
                    }
                }
            }
        }
        out
    }

    /// `exp(t G)` as a matrix.
    pub fn exp(&self, t: f64) -> Mat<c64> {
        if t == 0.0 {
            return Mat::identity(self.matrix.nrows(), self.matrix.nrows());
        }
        linalg::expm(&linalg::scale(&self.matrix, cr(t)))
    }
}

/// `exp(t G)(A)`
pub fn matrix_exp_apply(g: &SuperOperator, t: f64, a: &Operator) -> Operator {
    assert!(t >= 0.0, "propagation time must be nonnegative");
    if t == 0.0 {
        return a.clone();
    }
    unstack(&(&g.exp(t) * &stack(a)), g.dim())
}

/// The map `R` together with the stability bound of its model.
#[derive(Clone, Debug)]
pub struct RMap {
    pub map: SuperOperator,
    pub x_min: f64,
}

/// Margin kept above `x_min` for resolvent solves.
pub const X_MIN_MARGIN: f64 = 1e-8;
/// Largest accepted one-norm condition estimate of `x Id + R`.
pub const MAX_CONDITION: f64 = 1e14;

pub fn build_r(model: &LindbladModel) -> Result<RMap> {
    let heff = model.h_eff();
    let d = model.dim();
    let id = linalg::identity(d);
    let m = &kron(&transpose(&heff), &id) - &kron(&id, &dagger(&heff));
    let x_min = model.x_min()?;
    Ok(RMap {
        map: SuperOperator::new(linalg::scale(&m, I), Picture::Heisenberg),
        x_min,
    })
}

/// Heisenberg jump map `A -> sum_i w_i L_i^dagger A L_i`.
pub fn jump_map(model: &LindbladModel, weights: &[f64]) -> SuperOperator {
    let d = model.dim();
    let mut m = Mat::<c64>::zeros(d * d, d * d);
    for (j, w) in model.jumps().iter().zip(weights) {
        m += linalg::scale(&kron(&transpose(&j.op), &dagger(&j.op)), cr(*w));
    }
    SuperOperator::new(m, Picture::Heisenberg)
}

/// Factorized `(x Id + R)^{-1}` for a fixed, possibly complex, `x`.
#[derive(Clone, Debug)]
pub struct Resolvent {
    pub x: c64,
    inverse: Mat<c64>,
    pub condition: f64,
    dim: usize,
}

impl Resolvent {
    pub fn new(r: &RMap, x: f64) -> Result<Self> {
        Self::new_complex(r, cr(x))
    }

    /// Only the real part of `x` is constrained by the stability bound.
    pub fn new_complex(r: &RMap, x: c64) -> Result<Self> {
        check_x(x.re, r.x_min)?;
        let shifted = r.map.shifted(x);
        let inverse = linalg::inverse(shifted.matrix());
        let condition = linalg::condition_one_norm(shifted.matrix(), &inverse);
        if !condition.is_finite() || condition > MAX_CONDITION {
            return Err(Error::SingularSolve { cond: condition });
        }
        Ok(Resolvent {
            x,
            inverse,
            condition,
            dim: r.map.dim(),
        })
    }

    pub fn apply(&self, a: &Operator) -> Operator {
        unstack(&(&self.inverse * &stack(a)), self.dim)
    }

    pub fn as_superop(&self) -> SuperOperator {
        SuperOperator::new(self.inverse.clone(), Picture::Heisenberg)
    }

    /// `(x Id + R)^{-1} ∘ G`
    pub fn compose(&self, g: &SuperOperator) -> SuperOperator {
        SuperOperator::new(&self.inverse * g.matrix(), Picture::Heisenberg)
    }
}

pub fn check_x(x: f64, x_min: f64) -> Result<()> {
    if !x.is_finite() || x <= x_min + X_MIN_MARGIN {
        return Err(Error::Domain(format!(
            "x = {x} must exceed x_min = {x_min} by more than {X_MIN_MARGIN:e}"
        )));
    }
    Ok(())
}

/// Solve `(x Id + R)(B) = A`.
pub fn resolvent_solve(r: &RMap, x: f64, a: &Operator) -> Result<Operator> {
    Ok(Resolvent::new(r, x)?.apply(a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Ranking {
    SpectralRadius,
    MaxRealPart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Positivity {
    Required,
    Waived,
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: c64,
    pub right: Operator,
    pub left: Operator,
    pub gap: f64,
}

pub const MIN_GAP: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;

fn score(z: c64, ranking: Ranking) -> f64 {
    match ranking {
        Ranking::SpectralRadius => z.norm(),
        Ranking::MaxRealPart => z.re,
    }
}

/// Rotate `a` so that its trace (or, failing that, its largest diagonal
/// entry) is real and positive.
fn fix_phase(a: &Operator) -> Operator {
    let tr = linalg::trace(a);
    let scale_ref = a.norm_l2();
    let anchor = if tr.norm() > 1e-12 * scale_ref {
        tr
    } else {
        let mut best = c64::new(0.0, 0.0);
        for k in 0..a.nrows() {
            if a[(k, k)].norm() > best.norm() {
                best = a[(k, k)];
            }
        }
        if best.norm() == 0.0 {
            return a.clone();
        }
        best
    };
    linalg::scale(a, anchor.conj() / anchor.norm())
}

/// Dominant eigenvalue with right and left eigenvectors.
///
/// The left eigenvector is returned as the operator `σ` with
/// `tr[σ G(A)] = λ tr[σ A]` for all `A`. Heisenberg pairs satisfy
/// `tr σ = 1` and `tr[F σ] = 1`; Schrödinger pairs have `tr ρ = 1` for the
/// right vector and `tr[E ρ] = 1`.
pub fn dominant_eigenpair(
    g: &SuperOperator,
    ranking: Ranking,
    positivity: Positivity,
) -> Result<EigenPair> {
    let n = g.matrix().nrows();
    let d = g.dim();
    let evd = g
        .matrix()
        .eigen()
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
    let vals: Vec<c64> = (0..n).map(|k| evd.S().column_vector()[k]).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| score(vals[b], ranking).total_cmp(&score(vals[a], ranking)));
    let k0 = order[0];
    let value = vals[k0];
    let gap = if n > 1 {
        score(value, ranking) - score(vals[order[1]], ranking)
    } else {
        f64::INFINITY
    };
    if gap < MIN_GAP {
        return Err(Error::DegenerateDominant { gap });
    }
    let right_vec = Col::from_fn(n, |i| evd.U()[(i, k0)]);

    let adj = g.matrix().adjoint().to_owned();
    let evd_l = adj
        .eigen()
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
    let target = value.conj();
    let kl = (0..n)
        .min_by(|&a, &b| {
            (evd_l.S().column_vector()[a] - target)
                .norm()
                .total_cmp(&(evd_l.S().column_vector()[b] - target).norm())
        })
        .expect("non-empty spectrum");
    let left_vec = Col::from_fn(n, |i| evd_l.U()[(i, kl)]);

    let right = fix_phase(&unstack(&right_vec, d));
    let left = dagger(&unstack(&left_vec, d));
    let (right, left) = match g.picture() {
        Picture::Heisenberg => {
            let tr_left = linalg::trace(&left);
            if tr_left.norm() < 1e-300 {
                return Err(Error::EigensolverFailure(
                    "left eigenvector has vanishing trace".into(),
                ));
            }
            let left = linalg::scale(&left, tr_left.inv());
            let overlap = linalg::trace_product(&right, &left);
            (linalg::scale(&right, overlap.inv()), left)
        }
        Picture::Schrodinger => {
            let tr_right = linalg::trace(&right);
            let right = if tr_right.norm() > 1e-300 {
                linalg::scale(&right, tr_right.inv())
            } else {
                right
            };
            let overlap = linalg::trace_product(&right, &left);
            (right, linalg::scale(&left, overlap.inv()))
        }
    };
    if positivity == Positivity::Required {
        check_psd(&right)?;
    }
    Ok(EigenPair {
        value,
        right,
        left,
        gap,
    })
}

fn check_psd(a: &Operator) -> Result<()> {
    let scale_ref = linalg::max_abs(a).max(f64::MIN_POSITIVE);
    let herm = linalg::hermiticity_error(a) / scale_ref;
    let eigs = linalg::hermitian_eigenvalues(a)?;
    let top = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let min_eig = eigs.first().copied().unwrap_or(0.0) / top;
    if herm > PSD_TOL {
        return Err(Error::NonPositiveEigenvector { min_eig: -herm });
    }
    if min_eig < -PSD_TOL {
        return Err(Error::NonPositiveEigenvector { min_eig });
    }
    Ok(())
}
