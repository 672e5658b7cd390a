//! Count-resolved propagation `dρ_k/dt = L0 ρ_k + J_c ρ_{k-1}`, exact
//! count distributions, jump-time densities and concentration exponents.
//!
//! The block system is lower bidiagonal and block Toeplitz, so its
//! exponential is again block lower-triangular Toeplitz and only the first
//! column of blocks `Φ_0 .. Φ_K` has to be stored.

use std::collections::HashMap;

use faer::{c64, Col, Mat};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::{Kernel, TiltPoint};
use crate::linalg::{self, cr, stack, unstack, Operator};
use crate::superop::{Positivity, SuperOperator};
use crate::thermo;

/// Largest accepted truncation error `1 - sum_k tr ρ_k`.
pub const TAIL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct CountResolvedState {
    pub time: f64,
    pub blocks: Vec<Operator>,
    pub k_max: usize,
    pub tail_mass: f64,
}

impl CountResolvedState {
    /// `tr ρ_k` for every block.
    pub fn probabilities(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| linalg::trace(b).re).collect()
    }
}

/// First block column of a block lower-triangular Toeplitz matrix.
#[derive(Clone, Debug)]
struct Toeplitz(Vec<Mat<c64>>);

impl Toeplitz {
    fn mul(&self, other: &Toeplitz) -> Toeplitz {
        let k = self.0.len();
        let n = self.0[0].nrows();
        let mut out = Vec::with_capacity(k);
        for i in 0..k {
            let mut acc = Mat::<c64>::zeros(n, n);
            for j in 0..=i {
                acc += &self.0[i - j] * &other.0[j];
            }
            out.push(acc);
        }
        Toeplitz(out)
    }

    /// Apply to a stacked column of blocks.
    fn apply(&self, v: &[Col<c64>]) -> Vec<Col<c64>> {
        (0..v.len())
            .map(|i| {
                let mut acc = Col::<c64>::zeros(v[0].nrows());
                for j in 0..=i {
                    acc += &self.0[i - j] * &v[j];
                }
                acc
            })
            .collect()
    }
}

/// Blocks of `exp(t B)` where `B` has diagonal block `a` and subdiagonal
/// block `b`, truncated after `k_max`. Truncation does not affect the kept
/// blocks.
fn toeplitz_exp(a: &Mat<c64>, b: &Mat<c64>, t: f64, k_max: usize) -> Toeplitz {
    let n = a.nrows();
    let blocks = k_max + 1;
    if t == 0.0 {
        let mut v = vec![Mat::<c64>::zeros(n, n); blocks];
        v[0] = Mat::identity(n, n);
        return Toeplitz(v);
    }
    let norm = t * (linalg::one_norm(a) + linalg::one_norm(b));
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let h = t / 2f64.powi(squarings as i32);
    let ha = linalg::scale(a, cr(h));
    let hb = linalg::scale(b, cr(h));
    let mut sum = vec![Mat::<c64>::zeros(n, n); blocks];
    sum[0] = Mat::identity(n, n);
    let mut term = sum.clone();
    for j in 1..=60 {
        let inv = cr(1.0 / j as f64);
        let next: Vec<Mat<c64>> = (0..blocks)
            .map(|k| {
                let mut acc = &term[k] * &ha;
                if k > 0 {
                    acc += &term[k - 1] * &hb;
                }
                linalg::scale(&acc, inv)
            })
            .collect();
        let size = next.iter().map(linalg::max_abs).fold(0.0, f64::max);
        for (s, x) in sum.iter_mut().zip(&next) {
            *s += x;
        }
        term = next;
        if size < 1e-18 {
            break;
        }
    }
    let mut out = Toeplitz(sum);
    for _ in 0..squarings {
        out = out.mul(&out);
    }
    out
}

/// Schrödinger-picture pieces `L0` and `J_c` as matrices on stacked operators.
fn schrodinger_parts(kernel: &Kernel, c: &[f64]) -> Result<(Mat<c64>, Mat<c64>)> {
    let l0 = kernel.r.map.scaled(cr(-1.0)).adjoint().into_matrix();
    let j = kernel.jump(c)?.adjoint().into_matrix();
    Ok((l0, j))
}

/// Count-resolved blocks `ρ_0 .. ρ_{k_max}` at time `t`, without any tail
/// control.
fn blocks_at(kernel: &Kernel, c: &[f64], t: f64, k_max: usize) -> Result<Vec<Operator>> {
    let (l0, j) = schrodinger_parts(kernel, c)?;
    let phi = toeplitz_exp(&l0, &j, t, k_max);
    let rho0 = stack(&kernel.model.initial_density());
    let d = kernel.dim();
    Ok(phi.0.iter().map(|p| unstack(&(p * &rho0), d)).collect())
}

fn is_untilted(c: &[f64]) -> bool {
    c.iter().all(|v| *v == 0.0)
}

/// Stationary jump rate `k(0,0)`, or the largest instantaneous rate when the
/// stationary state is not unique.
fn reference_rate(kernel: &Kernel) -> f64 {
    let zeros = vec![0.0; kernel.model.spin_dim()];
    thermo::potential(kernel, &TiltPoint::s(0.0, &zeros), Positivity::Waived)
        .ok()
        .and_then(|r| r.intensive.k)
        .filter(|k| k.is_finite() && *k >= 0.0)
        .unwrap_or_else(|| {
            linalg::hermitian_eigenvalues(&kernel.model.dissipator())
                .map(|e| e.last().copied().unwrap_or(1.0))
                .unwrap_or(1.0)
        })
}

pub fn default_k_max(kernel: &Kernel, tau: f64) -> usize {
    let kt = reference_rate(kernel) * tau;
    (3.0 + 2.0 * kt + 6.0 * kt.sqrt()).ceil() as usize
}

fn tail_of(blocks: &[Operator]) -> f64 {
    let total: f64 = blocks.iter().map(|b| linalg::trace(b).re).sum();
    (1.0 - total).max(0.0)
}

/// Count-resolved state at time `tau`.
///
/// With `k_max = None` the truncation starts from a rate-based guess and is
/// doubled until the untilted tail mass drops below `TAIL_TOL`. An explicit
/// `k_max` that is too small raises `TailMassExceeded`.
pub fn count_resolved_propagate(
    kernel: &Kernel,
    tau: f64,
    k_max: Option<usize>,
    c: &[f64],
) -> Result<CountResolvedState> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("tau = {tau} must be nonnegative")));
    }
    let zeros = vec![0.0; c.len()];
    let mut kk = k_max.unwrap_or_else(|| default_k_max(kernel, tau));
    loop {
        let blocks = blocks_at(kernel, c, tau, kk)?;
        let tail = if is_untilted(c) {
            tail_of(&blocks)
        } else {
            tail_of(&blocks_at(kernel, &zeros, tau, kk)?)
        };
        if tail <= TAIL_TOL {
            return Ok(CountResolvedState {
                time: tau,
                blocks,
                k_max: kk,
                tail_mass: tail,
            });
        }
        if k_max.is_some() || kk > 1_000_000 {
            return Err(Error::TailMassExceeded {
                tail_mass: tail,
                k_max: kk,
                suggested: 2 * kk,
            });
        }
        kk *= 2;
    }
}

/// `P_τ(K)` for `K = 0..=k_max` (tilted by `c`), exact in the kept range.
pub fn count_distribution(kernel: &Kernel, tau: f64, k_max: usize, c: &[f64]) -> Result<Vec<f64>> {
    Ok(blocks_at(kernel, c, tau, k_max)?
        .iter()
        .map(|b| linalg::trace(b).re)
        .collect())
}

/// `|sum_K e^{-sK} tr ρ_K(τ) - Z_τ(s,c)|`
pub fn generating_function_check(kernel: &Kernel, s: f64, c: &[f64], tau: f64) -> Result<f64> {
    let state = count_resolved_propagate(kernel, tau, None, c)?;
    let mut kk = state.k_max;
    let mut probs = state.probabilities();
    if s < 0.0 {
        // extend until the last weighted term is negligible
        loop {
            let last = probs.last().copied().unwrap_or(0.0) * (-s * kk as f64).exp();
            let total: f64 = probs.iter().enumerate().map(|(k, p)| p * (-s * k as f64).exp()).sum();
            if last.abs() <= 1e-16 * total.abs() || kk > 100_000 {
                break;
            }
            kk *= 2;
            probs = count_distribution(kernel, tau, kk, c)?;
        }
    }
    let sum: f64 = probs
        .iter()
        .enumerate()
        .map(|(k, p)| p * (-s * k as f64).exp())
        .sum();
    Ok((sum - kernel.partition_tau(s, c, tau)?).abs())
}

/// `tr[ρ e^{τ W_{s,c}}(I)]` for complex `s`.
pub fn partition_tau_complex(kernel: &Kernel, s: c64, c: &[f64], tau: f64) -> Result<c64> {
    let w = kernel.w_complex(s, c)?;
    let out = unstack(&(&w.exp(tau) * &stack(&linalg::identity(kernel.dim()))), kernel.dim());
    Ok(linalg::trace_product(&kernel.model.initial_density(), &out))
}

/// `P_τ(K)` recovered from `Z_τ(-iφ)` on `n_phases` equally spaced phases.
/// Counts at or beyond `n_phases` alias back into the range.
pub fn count_distribution_fft(kernel: &Kernel, tau: f64, c: &[f64], n_phases: usize) -> Result<Vec<f64>> {
    let z: Vec<c64> = (0..n_phases)
        .map(|n| {
            let phi = 2.0 * std::f64::consts::PI * n as f64 / n_phases as f64;
            partition_tau_complex(kernel, c64::new(0.0, -phi), c, tau)
        })
        .collect::<Result<_>>()?;
    Ok((0..n_phases)
        .map(|k| {
            let acc: c64 = z
                .iter()
                .enumerate()
                .map(|(n, zn)| {
                    let phi = 2.0 * std::f64::consts::PI * n as f64 / n_phases as f64;
                    zn * c64::cis(-phi * k as f64)
                })
                .sum();
            acc.re / n_phases as f64
        })
        .collect())
}

/// Propagates the first `k` blocks along an increasing time grid, caching the
/// block propagator for each distinct step.
struct GridPropagator {
    l0: Mat<c64>,
    j: Mat<c64>,
    k_max: usize,
    cache: HashMap<u64, Toeplitz>,
}

impl GridPropagator {
    fn new(kernel: &Kernel, c: &[f64], k_max: usize) -> Result<Self> {
        let (l0, j) = schrodinger_parts(kernel, c)?;
        Ok(GridPropagator {
            l0,
            j,
            k_max,
            cache: HashMap::new(),
        })
    }

    fn step(&mut self, v: &[Col<c64>], dt: f64) -> Vec<Col<c64>> {
        if dt == 0.0 {
            return v.to_vec();
        }
        let key = dt.to_bits();
        if !self.cache.contains_key(&key) {
            let phi = toeplitz_exp(&self.l0, &self.j, dt, self.k_max);
            self.cache.insert(key, phi);
        }
        self.cache[&key].apply(v)
    }
}

fn initial_blocks(kernel: &Kernel, k_max: usize) -> Vec<Col<c64>> {
    let n = kernel.dim() * kernel.dim();
    let mut v = vec![Col::<c64>::zeros(n); k_max + 1];
    v[0] = stack(&kernel.model.initial_density());
    v
}

/// Density of the `K`-th jump time, `p_K(T) = tr[J_c ρ_{K-1}(T)]`.
pub fn jump_time_density(kernel: &Kernel, k: usize, t_grid: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Domain("jump index K must be at least 1".into()));
    }
    if t_grid.iter().any(|t| *t < 0.0) || t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("time grid must be nonnegative and increasing".into()));
    }
    let jump = kernel.jump(c)?;
    let d = kernel.dim();
    let mut prop = GridPropagator::new(kernel, c, k - 1)?;
    let mut v = initial_blocks(kernel, k - 1);
    let mut now = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        v = prop.step(&v, t - now);
        now = t;
        out.push(density_from(&jump, &unstack(&v[k - 1], d)));
    }
    Ok(out)
}

fn density_from(jump: &SuperOperator, rho: &Operator) -> f64 {
    // tr[J_*(ρ)] = tr[J(I) ρ]
    let d = rho.nrows();
    linalg::trace_product(&jump.apply(&linalg::identity(d)), rho).re
}

#[derive(Clone, Debug, Serialize)]
pub struct LaplaceCheck {
    pub quadrature: f64,
    pub partition: f64,
    pub t_end: f64,
}

/// `∫ e^{-xT} p_K(T) dT` by panel Gauss-Legendre quadrature, compared with
/// `Z_K(x,c)`.
pub fn laplace_check(kernel: &Kernel, k: usize, x: f64, c: &[f64]) -> Result<LaplaceCheck> {
    let partition = kernel.partition_k(x, c, k)?;
    if k == 0 {
        return Err(Error::Domain("jump index K must be at least 1".into()));
    }
    let jump = kernel.jump(c)?;
    let d = kernel.dim();
    let width = 0.5;
    let (nodes, weights) = linalg::gauss_legendre_on(8, 0.0, width);
    let mut prop = GridPropagator::new(kernel, c, k - 1)?;
    let mut base = initial_blocks(kernel, k - 1);
    let mut t0 = 0.0;
    let mut acc = 0.0;
    let mut compensation = 0.0;
    loop {
        for (tn, w) in nodes.iter().zip(&weights) {
            let v = prop.step(&base, *tn);
            let p = density_from(&jump, &unstack(&v[k - 1], d));
            // Kahan summation
            let y = w * (-x * (t0 + tn)).exp() * p - compensation;
            let s = acc + y;
            compensation = (s - acc) - y;
            acc = s;
        }
        base = prop.step(&base, width);
        t0 += width;
        let remaining: f64 = base.iter().map(|b| linalg::trace(&unstack(b, d)).re).sum();
        if (-x * t0).exp() * remaining.abs() < 1e-12 * acc.abs().max(1e-300) || t0 > 1e5 {
            break;
        }
    }
    Ok(LaplaceCheck {
        quadrature: acc,
        partition,
        t_end: t0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationReport {
    pub s: f64,
    pub x: f64,
    pub c: Vec<f64>,
    pub t_intensive: f64,
    pub k_intensive: f64,
    pub k_list: Vec<usize>,
    pub tau_list: Vec<f64>,
    /// `-sK - xτ_K + 2 log p_K(τ_K) - log Z_K(x,c) - log Z_{τ_K}(s,c)`,
    /// the log squared overlap of the two canonical states on the common shell.
    pub log_ratio: Vec<f64>,
    /// The same combination with a single power of `p_K(τ_K)`.
    pub log_ratio_as_printed: Vec<f64>,
    /// `-xτ_K + log p_K(τ_K) - log Z_K(x,c)`
    pub x_canonical_exponent: Vec<f64>,
    /// `-sK + log P_{τ_K}(K) - log Z_{τ_K}(s,c)`
    pub s_canonical_exponent: Vec<f64>,
    /// `log_ratio / K` at the largest `K`.
    pub slope_estimate: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConcentrationTerms {
    pub log_density: f64,
    pub log_z_k: f64,
    pub log_z_tau: f64,
    pub log_count_probability: f64,
}

/// The ingredients of the concentration exponents at arbitrary `(x, s, K, τ)`.
pub fn concentration_terms(kernel: &Kernel, x: f64, s: f64, c: &[f64], k: usize, tau: f64) -> Result<ConcentrationTerms> {
    let density = jump_time_density(kernel, k, &[tau], c)?[0];
    let count = count_distribution(kernel, tau, k, c)?[k];
    Ok(ConcentrationTerms {
        log_density: density.ln(),
        log_z_k: kernel.log_partition_k(x, c, k)?,
        log_z_tau: kernel.log_partition_tau(s, c, tau)?,
        log_count_probability: count.ln(),
    })
}

impl ConcentrationTerms {
    pub fn squared_exponent(&self, x: f64, s: f64, k: usize, tau: f64) -> f64 {
        -s * k as f64 - x * tau + 2.0 * self.log_density - self.log_z_k - self.log_z_tau
    }

    pub fn printed_exponent(&self, x: f64, s: f64, k: usize, tau: f64) -> f64 {
        -s * k as f64 - x * tau + self.log_density - self.log_z_k - self.log_z_tau
    }
}

pub fn concentration_report(kernel: &Kernel, s: f64, c: &[f64], k_list: &[usize]) -> Result<ConcentrationReport> {
    let sr = thermo::potential(kernel, &TiltPoint::s(s, c), Positivity::Waived)?;
    let x = sr.potential;
    crate::superop::check_x(x, kernel.x_min())?;
    let kk = sr.intensive.k.expect("s-ensemble report carries k");
    let xr = thermo::potential(kernel, &TiltPoint::x(x, c), Positivity::Waived)?;
    let t = xr.intensive.t.expect("x-ensemble report carries t");
    let mut tau_list = Vec::new();
    let mut log_ratio = Vec::new();
    let mut printed = Vec::new();
    let mut xc = Vec::new();
    let mut sc = Vec::new();
    for &k in k_list {
        let tau = k as f64 * t;
        let terms = concentration_terms(kernel, x, s, c, k, tau)?;
        tau_list.push(tau);
        log_ratio.push(terms.squared_exponent(x, s, k, tau));
        printed.push(terms.printed_exponent(x, s, k, tau));
        xc.push(-x * tau + terms.log_density - terms.log_z_k);
        sc.push(-s * k as f64 + terms.log_count_probability - terms.log_z_tau);
    }
    let slope_estimate = match (log_ratio.last(), k_list.last()) {
        (Some(v), Some(&k)) if k > 0 => v / k as f64,
        _ => f64::NAN,
    };
    Ok(ConcentrationReport {
        s,
        x,
        c: c.to_vec(),
        t_intensive: t,
        k_intensive: kk,
        k_list: k_list.to_vec(),
        tau_list,
        log_ratio,
        log_ratio_as_printed: printed,
        x_canonical_exponent: xc,
        s_canonical_exponent: sc,
        slope_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{driven_dephased_qubit, three_level_renewal, two_level_decay};

    fn renewal() -> Kernel {
        Kernel::new(&three_level_renewal(1.0, 0.2, 1.0)).unwrap()
    }

    #[test]
    fn no_jump_block_is_survival() {
        let k = renewal();
        let tau = 2.3;
        let st = count_resolved_propagate(&k, tau, None, &[]).unwrap();
        let u = linalg::expm(&linalg::scale(&k.model.h_eff(), c64::new(0.0, -tau)));
        let phi = &u * k.model.initial_state();
        let surv = phi.norm_l2().powi(2);
        assert!((st.probabilities()[0] - surv).abs() < 1e-12);
    }

    #[test]
    fn decay_counts() {
        let k = Kernel::new(&two_level_decay(1.0)).unwrap();
        let tau = 1.7;
        let p = count_resolved_propagate(&k, tau, Some(5), &[]).unwrap().probabilities();
        assert!((p[0] - (-tau).exp()).abs() < 1e-13);
        assert!((p[1] - (1.0 - (-tau).exp())).abs() < 1e-13);
        assert!(p[2..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn normalization_and_tail_error() {
        let k = renewal();
        let st = count_resolved_propagate(&k, 20.0, None, &[]).unwrap();
        let total: f64 = st.probabilities().iter().sum();
        assert!((total - 1.0).abs() < 1e-10);
        for b in &st.blocks {
            assert!(linalg::min_hermitian_eigenvalue(b).unwrap() > -1e-10);
        }
        assert!(matches!(
            count_resolved_propagate(&k, 20.0, Some(2), &[]),
            Err(Error::TailMassExceeded { suggested: 4, .. })
        ));
    }

    #[test]
    fn generating_function_matches_tilted_exponential() {
        let k = renewal();
        assert!(generating_function_check(&k, 0.0, &[], 3.0).unwrap() < 1e-10);
        assert!(generating_function_check(&k, 0.5, &[], 10.0).unwrap() < 1e-8);
        assert!(generating_function_check(&k, -0.3, &[], 5.0).unwrap() < 1e-8);
        let q = Kernel::new(&driven_dephased_qubit(1.0, 1.0, 0.3)).unwrap();
        assert!(generating_function_check(&q, 0.4, &[0.3], 4.0).unwrap() < 1e-8);
    }

    #[test]
    fn fft_route_agrees() {
        let k = renewal();
        let direct = count_distribution(&k, 3.0, 31, &[]).unwrap();
        let fft = count_distribution_fft(&k, 3.0, &[], 32).unwrap();
        for (a, b) in direct.iter().zip(&fft) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn first_jump_density_of_decay() {
        let k = Kernel::new(&two_level_decay(1.0)).unwrap();
        let grid: Vec<f64> = (0..40).map(|i| 0.1 * i as f64).collect();
        let p = jump_time_density(&k, 1, &grid, &[]).unwrap();
        for (t, v) in grid.iter().zip(&p) {
            assert!((v - (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn laplace_transform_of_density() {
        let k = renewal();
        let chk = laplace_check(&k, 3, 0.3, &[]).unwrap();
        assert!((chk.quadrature - chk.partition).abs() < 1e-6);
        let unit = laplace_check(&k, 4, 0.0, &[]).unwrap();
        assert!((unit.quadrature - 1.0).abs() < 1e-6);
        let grid: Vec<f64> = (0..200).map(|i| 0.25 * i as f64).collect();
        assert!(jump_time_density(&k, 3, &grid, &[]).unwrap().iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn decay_concentration_closed_form() {
        let k = Kernel::new(&two_level_decay(1.0)).unwrap();
        let (x, s, tau) = (0.5, 0.3, 1.2);
        let terms = concentration_terms(&k, x, s, &[], 1, tau).unwrap();
        let z_tau = (-tau).exp() + (-s).exp() * (1.0 - (-tau).exp());
        let expected = -s - x * tau + 2.0 * (-tau) - (1.0 / 1.5f64).ln() - z_tau.ln();
        assert!((terms.squared_exponent(x, s, 1, tau) - expected).abs() < 1e-8);
    }

    #[test]
    fn untilted_concentration_reduces_to_density() {
        let k = renewal();
        let rep = concentration_report(&k, 0.0, &[], &[4]).unwrap();
        assert!(rep.x.abs() < 1e-10);
        let dens = jump_time_density(&k, 4, &[rep.tau_list[0]], &[]).unwrap()[0];
        assert!((rep.log_ratio_as_printed[0] - dens.ln()).abs() < 1e-8);
        assert!((rep.log_ratio[0] - 2.0 * dens.ln()).abs() < 1e-8);
    }
}
