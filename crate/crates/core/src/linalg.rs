//! Small dense linear-algebra helpers shared by the superoperator kernel.
//!
//! Operators are `d x d` complex matrices; superoperators act on their
//! column-stacked form, `vec(A)[i + j*d] = A[(i, j)]`, so that
//! `vec(A X B) = (B^T ⊗ A) vec(X)`.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{c64, Col, Mat, Side};

use crate::error::{Error, Result};

/// A `d x d` system operator.
pub type Operator = Mat<c64>;

/// A system state vector.
pub type Ket = Col<c64>;

pub const I: c64 = c64 { re: 0.0, im: 1.0 };

#[inline]
pub fn cr(re: f64) -> c64 {
    c64::new(re, 0.0)
}

pub fn stack(a: &Operator) -> Col<c64> {
    let d = a.nrows();
    Col::from_fn(d * a.ncols(), |k| a[(k % d, k / d)])
}

pub fn unstack(v: &Col<c64>, d: usize) -> Operator {
    assert_eq!(v.nrows(), d * d, "vector length must be d^2");
    Mat::from_fn(d, d, |i, j| v[i + j * d])
}

pub fn kron(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn dagger(a: &Mat<c64>) -> Mat<c64> {
    a.adjoint().to_owned()
}

pub fn transpose(a: &Mat<c64>) -> Mat<c64> {
    a.transpose().to_owned()
}

pub fn conj(a: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].conj())
}

pub fn trace(a: &Mat<c64>) -> c64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

pub fn identity(d: usize) -> Operator {
    Mat::identity(d, d)
}

pub fn scale(a: &Mat<c64>, s: c64) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s)
}

pub fn max_abs(a: &Mat<c64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].norm());
        }
    }
    m
}

pub fn frobenius(a: &Mat<c64>) -> f64 {
    a.norm_l2()
}

/// Maximum absolute column sum.
pub fn one_norm(a: &Mat<c64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn hermitian_part(a: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5)
}

/// Largest entry of `A - A^dagger`.
pub fn hermiticity_error(a: &Mat<c64>) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    m
}

/// Eigenvalues (ascending) of the Hermitian part of `a`.
pub fn hermitian_eigenvalues(a: &Mat<c64>) -> Result<Vec<f64>> {
    hermitian_part(a)
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))
}

pub fn min_hermitian_eigenvalue(a: &Mat<c64>) -> Result<f64> {
    Ok(hermitian_eigenvalues(a)?.first().copied().unwrap_or(0.0))
}

/// Trace norm of the Hermitian part of `a`.
pub fn trace_norm_hermitian(a: &Mat<c64>) -> Result<f64> {
    Ok(hermitian_eigenvalues(a)?.iter().map(|x| x.abs()).sum())
}

/// Half the trace norm of `a - b`, for Hermitian `a`, `b`.
pub fn trace_distance(a: &Mat<c64>, b: &Mat<c64>) -> Result<f64> {
    Ok(0.5 * trace_norm_hermitian(&(a - b))?)
}

pub fn inner(u: &Col<c64>, v: &Col<c64>) -> c64 {
    (0..u.nrows()).map(|i| u[i].conj() * v[i]).sum()
}

/// Hilbert-Schmidt inner product `tr[A^dagger B]`.
pub fn hs_inner(a: &Mat<c64>, b: &Mat<c64>) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)].conj() * b[(i, j)];
        }
    }
    acc
}

/// `tr[A B]` without forming the product.
pub fn trace_product(a: &Mat<c64>, b: &Mat<c64>) -> c64 {
    let mut acc = c64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn ket_bra(u: &Col<c64>, v: &Col<c64>) -> Operator {
    Mat::from_fn(u.nrows(), v.nrows(), |i, j| u[i] * v[j].conj())
}

pub fn basis_ket(d: usize, k: usize) -> Ket {
    Col::from_fn(d, |i| if i == k { cr(1.0) } else { cr(0.0) })
}

/// `<u| A |v>`
pub fn sandwich(u: &Col<c64>, a: &Mat<c64>, v: &Col<c64>) -> c64 {
    let av = a * v;
    inner(u, &av)
}

/// Sine of the principal angle between two matrices viewed as flat vectors.
///
/// Computed from the residual of the orthogonal projection, which stays
/// accurate when the angle is tiny.
pub fn principal_angle_sine(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    let na = a.norm_l2();
    let nb = b.norm_l2();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let proj = hs_inner(a, b) / (na * na);
    let mut res = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            res += (b[(i, j)] - a[(i, j)] * proj).norm_sqr();
        }
    }
    (res.sqrt() / nb).min(1.0)
}

/// Condition number estimate `||A||_1 ||A^-1||_1` from an explicit inverse.
pub fn condition_one_norm(a: &Mat<c64>, inverse: &Mat<c64>) -> f64 {
    one_norm(a) * one_norm(inverse)
}

pub fn inverse(a: &Mat<c64>) -> Mat<c64> {
    a.partial_piv_lu().inverse()
}

pub fn solve(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    a.partial_piv_lu().solve(b)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn add_scaled(acc: &mut Mat<c64>, a: &Mat<c64>, s: f64) {
    for j in 0..acc.ncols() {
        for i in 0..acc.nrows() {
            acc[(i, j)] += a[(i, j)] * s;
        }
    }
}

fn pade_low(a: &Mat<c64>, coeffs: &[f64]) -> (Mat<c64>, Mat<c64>) {
    // u = A * sum_{odd k} b_k A^{k-1},  v = sum_{even k} b_k A^k
    let n = a.nrows();
    let a2 = a * a;
    let mut powers = vec![Mat::<c64>::identity(n, n), a2.clone()];
    let m = coeffs.len() - 1;
    while 2 * (powers.len() - 1) < m {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = Mat::<c64>::zeros(n, n);
    let mut v = Mat::<c64>::zeros(n, n);
    for (k, &b) in coeffs.iter().enumerate() {
        if k % 2 == 1 {
            add_scaled(&mut u_inner, &powers[(k - 1) / 2], b);
        } else {
            add_scaled(&mut v, &powers[k / 2], b);
        }
    }
    (a * &u_inner, v)
}

fn pade13(a: &Mat<c64>) -> (Mat<c64>, Mat<c64>) {
    let n = a.nrows();
    let b = &PADE13;
    let id = Mat::<c64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let mut u1 = Mat::<c64>::zeros(n, n);
    add_scaled(&mut u1, &a6, b[13]);
    add_scaled(&mut u1, &a4, b[11]);
    add_scaled(&mut u1, &a2, b[9]);
    let mut u2 = &a6 * &u1;
    add_scaled(&mut u2, &a6, b[7]);
    add_scaled(&mut u2, &a4, b[5]);
    add_scaled(&mut u2, &a2, b[3]);
    add_scaled(&mut u2, &id, b[1]);
    let u = a * &u2;
    let mut v1 = Mat::<c64>::zeros(n, n);
    add_scaled(&mut v1, &a6, b[12]);
    add_scaled(&mut v1, &a4, b[10]);
    add_scaled(&mut v1, &a2, b[8]);
    let mut v = &a6 * &v1;
    add_scaled(&mut v, &a6, b[6]);
    add_scaled(&mut v, &a4, b[4]);
    add_scaled(&mut v, &a2, b[2]);
    add_scaled(&mut v, &id, b[0]);
    (u, v)
}

/// Matrix exponential by scaling and squaring with Padé approximants
/// of degree 3 to 13, selected from the one-norm.
pub fn expm(a: &Mat<c64>) -> Mat<c64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let norm = one_norm(a);
    if norm == 0.0 {
        return Mat::identity(n, n);
    }
    let (u, v, squarings) = if norm <= THETA[0] {
        let (u, v) = pade_low(a, &PADE3);
        (u, v, 0)
    } else if norm <= THETA[1] {
        let (u, v) = pade_low(a, &PADE5);
        (u, v, 0)
    } else if norm <= THETA[2] {
        let (u, v) = pade_low(a, &PADE7);
        (u, v, 0)
    } else if norm <= THETA[3] {
        let (u, v) = pade_low(a, &PADE9);
        (u, v, 0)
    } else {
        let s = ((norm / THETA[4]).log2().ceil()).max(0.0) as i32;
        let scaled = scale(a, cr(0.5f64.powi(s)));
        let (u, v) = pade13(&scaled);
        (u, v, s)
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = solve(&q, &p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|t| mid + half * t).collect(),
        w.iter().map(|t| half * t).collect(),
    )
}
