//! Renewal models: every jump resets the system to one fixed state `|0>`,
//! so `L_i = |0><φ_i|` and the deformed generators collapse to rank one.

use faer::{c64, Col, Mat, Side};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::Kernel;
use crate::linalg::{self, cr, Ket, Operator};
use crate::model::LindbladModel;
use crate::superop::{dominant_eigenpair, Positivity, Ranking};
use crate::trajectories;

pub const RENEWAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct RenewalStructure {
    pub model: LindbladModel,
    pub reset_state: Ket,
    /// `L_i = |0><φ_i|`
    pub phi_vectors: Vec<Ket>,
    /// `sum_i |φ_i><φ_i|`
    pub d: Operator,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NotRenewal {
    pub reason: String,
}

fn leading_left_vector(l: &Operator) -> Result<(Ket, f64)> {
    let llt = linalg::hermitian_part(&(l * l.adjoint()));
    let evd = llt
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
    let n = llt.nrows();
    let s: Vec<f64> = (0..n).map(|k| evd.S().column_vector()[k].re.max(0.0)).collect();
    let top = s[n - 1];
    let second = if n > 1 { s[n - 2] } else { 0.0 };
    let u = evd.U();
    let mut v = Col::from_fn(n, |i| u[(i, n - 1)]);
    let pivot = (0..n)
        .max_by(|&a, &b| v[a].norm().total_cmp(&v[b].norm()))
        .unwrap_or(0);
    let phase = v[pivot].conj() / v[pivot].norm();
    v = Col::from_fn(n, |i| v[i] * phase);
    let ratio = if top > 0.0 { (second / top).sqrt() } else { f64::INFINITY };
    Ok((v, ratio))
}

/// Rank-one test on each `L_i` plus a common left singular vector up to phase.
pub fn detect_renewal(model: &LindbladModel) -> Result<std::result::Result<RenewalStructure, NotRenewal>> {
    let ops: Vec<Operator> = model.jumps().iter().map(|j| j.operator()).collect();
    if ops.is_empty() {
        return Ok(Err(NotRenewal {
            reason: "model has no jump operators".into(),
        }));
    }
    let mut reset: Option<Ket> = None;
    for (i, l) in ops.iter().enumerate() {
        let (v, ratio) = leading_left_vector(l)?;
        if ratio >= RENEWAL_TOL {
            return Ok(Err(NotRenewal {
                reason: format!("L_{} has singular value ratio {ratio:.3e}", i + 1),
            }));
        }
        match &reset {
            None => reset = Some(v),
            Some(r) => {
                let overlap = linalg::inner(r, &v).norm();
                if (1.0 - overlap).abs() >= RENEWAL_TOL {
                    return Ok(Err(NotRenewal {
                        reason: format!("L_{} resets to a different state (overlap {overlap:.6})", i + 1),
                    }));
                }
            }
        }
    }
    let reset = reset.expect("at least one jump operator");
    let phi_vectors: Vec<Ket> = ops.iter().map(|l| l.adjoint() * &reset).collect();
    for (i, (l, phi)) in ops.iter().zip(&phi_vectors).enumerate() {
        let rebuilt = linalg::ket_bra(&reset, phi);
        if linalg::max_abs(&(l - &rebuilt)) >= RENEWAL_TOL * linalg::max_abs(l).max(1.0) {
            return Ok(Err(NotRenewal {
                reason: format!("L_{} is not |0><φ| for the common reset state", i + 1),
            }));
        }
    }
    let d = phi_vectors
        .iter()
        .fold(Mat::<c64>::zeros(model.dim(), model.dim()), |acc, p| acc + linalg::ket_bra(p, p));
    Ok(Ok(RenewalStructure {
        model: model.clone(),
        reset_state: reset,
        phi_vectors,
        d,
    }))
}

impl RenewalStructure {
    /// `sum_i w_i |φ_i><φ_i|`
    pub fn tilted_d(&self, c: &[f64]) -> Result<Operator> {
        let w = self.model.weights(c)?;
        let dim = self.model.dim();
        Ok(self
            .phi_vectors
            .iter()
            .zip(&w)
            .fold(Mat::<c64>::zeros(dim, dim), |acc, (p, wi)| {
                acc + linalg::scale(&linalg::ket_bra(p, p), cr(*wi))
            }))
    }

    /// `D - i(H_eff - H_eff^dagger)`
    pub fn d_residual(&self) -> f64 {
        let h = self.model.h_eff();
        let diff = &h - h.adjoint();
        let want = linalg::scale(&diff, c64::new(0.0, 1.0));
        linalg::max_abs(&(&self.d - &want))
    }
}

#[derive(Clone, Debug)]
pub struct AnalyticPotential {
    pub x: f64,
    pub g: f64,
    /// `(x + R)^{-1}(D) e^{-g}`
    pub f: Operator,
    /// `|0><0|`
    pub rho: Operator,
}

/// `e^{g(x,c)} = <0|(x + R)^{-1}(D_c)|0>`.
pub fn analytic_potential(structure: &RenewalStructure, x: f64, c: &[f64]) -> Result<AnalyticPotential> {
    let kernel = Kernel::new(&structure.model)?;
    let res = kernel.resolvent(x)?;
    let b = res.apply(&structure.tilted_d(c)?);
    let z = structure.reset_state.clone();
    let eg = linalg::sandwich(&z, &b, &z).re;
    if !(eg > 0.0) {
        return Err(Error::Domain(format!("<0|(x+R)^-1(D)|0> = {eg} is not positive at x = {x}")));
    }
    Ok(AnalyticPotential {
        x,
        g: eg.ln(),
        f: linalg::scale(&b, cr(1.0 / eg)),
        rho: linalg::ket_bra(&z, &z),
    })
}

/// `ρ_s = (x + R_*)^{-1}(|0><0|)` normalized to unit trace, with `x = θ(s)`.
pub fn analytic_schrodinger_state(structure: &RenewalStructure, x: f64) -> Result<Operator> {
    let kernel = Kernel::new(&structure.model)?;
    let res = kernel.resolvent(x)?.as_superop().adjoint();
    let z = &structure.reset_state;
    let out = res.apply(&linalg::ket_bra(z, z));
    let tr = linalg::trace(&out);
    Ok(linalg::scale(&out, cr(1.0) / tr))
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductCheckReport {
    pub x: f64,
    pub k: usize,
    /// `||T_x^2 - e^g T_x|| / ||T_x||`
    pub collapse_residual: f64,
    /// `|Z_K(x) e^{-Kg} - 1|` for `ψ = |0>`
    pub partition_rel_error: f64,
    /// Lag-1 Pearson correlation of consecutive waiting times.
    pub lag1_correlation: f64,
    pub lag1_bound: f64,
    pub samples: usize,
    /// `||T(A) - I <0|A|0>||` on a basis, untilted at `x = 0`.
    pub trivial_transition_residual: Option<f64>,
    /// Unique nonzero eigenvalue: gap equals `e^g`.
    pub gap_residual: f64,
}

pub fn renewal_product_checks(
    structure: &RenewalStructure,
    k: usize,
    x: f64,
    samples: usize,
    seed: u64,
) -> Result<ProductCheckReport> {
    if k < 2 {
        return Err(Error::Domain(format!("K = {k} must be at least 2")));
    }
    let model = structure.model.with_initial_state(structure.reset_state.clone())?;
    let kernel = Kernel::new(&model)?;
    let ap = analytic_potential(structure, x, &[])?;
    let t = kernel.t(x, &[])?;
    let t2 = t.compose(&t);
    let collapse_residual = t2.minus(&t.scaled(cr(ap.g.exp()))).frobenius() / t.frobenius();
    let zk = kernel.log_partition_k(x, &[], k)?;
    let partition_rel_error = ((zk - k as f64 * ap.g).exp() - 1.0).abs();
    let pair = dominant_eigenpair(&t, Ranking::SpectralRadius, Positivity::Waived)?;
    let gap_residual = (pair.gap - ap.g.exp()).abs();

    let trivial_transition_residual = if kernel.x_min() < 0.0 {
        let t0 = kernel.t(0.0, &[])?;
        let d = model.dim();
        let z = &structure.reset_state;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let a = linalg::ket_bra(&linalg::basis_ket(d, i), &linalg::basis_ket(d, j));
                let want = linalg::scale(&linalg::identity(d), linalg::sandwich(z, &a, z));
                worst = worst.max(linalg::max_abs(&(t0.apply(&a) - want)));
            }
        }
        Some(worst)
    } else {
        None
    };

    let batch = trajectories::sample_fixed_count(&model, 2, samples, seed)?;
    let pairs: Vec<(f64, f64)> = batch
        .trajectories
        .iter()
        .map(|tr| {
            let w = tr.waiting_times();
            (w[0], w[1])
        })
        .collect();
    let n = pairs.len() as f64;
    let (ma, mb) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    Ok(ProductCheckReport {
        x,
        k,
        collapse_residual,
        partition_rel_error,
        lag1_correlation: sab / (saa * sbb).sqrt(),
        lag1_bound: 3.0 / n.sqrt(),
        samples,
        trivial_transition_residual,
        gap_residual,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyticComparison {
    pub x: f64,
    pub analytic: f64,
    pub numerical: f64,
    pub eigenvector_angle: f64,
}

/// Dominant eigenvalue of `T_x` against `<0|(x+R)^{-1}(D)|0>`.
pub fn compare_with_eigensolver(structure: &RenewalStructure, x: f64) -> Result<AnalyticComparison> {
    let kernel = Kernel::new(&structure.model)?;
    let ap = analytic_potential(structure, x, &[])?;
    let pair = dominant_eigenpair(&kernel.t(x, &[])?, Ranking::SpectralRadius, Positivity::Waived)?;
    Ok(AnalyticComparison {
        x,
        analytic: ap.g.exp(),
        numerical: pair.value.re,
        eigenvector_angle: linalg::principal_angle_sine(&ap.f, &pair.right),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{random_model, three_level_renewal, two_level_decay};
    use crate::generators::TiltPoint;
    use crate::thermo;

    fn demo() -> RenewalStructure {
        detect_renewal(&three_level_renewal(1.0, 0.2, 1.0)).unwrap().unwrap()
    }

    #[test]
    fn detection() {
        let s = demo();
        assert!((s.reset_state[0] - cr(1.0)).norm() < 1e-12);
        assert!((s.phi_vectors[0][1] - cr(1.0)).norm() < 1e-12);
        assert!(s.d_residual() < 1e-12);
        let decay = detect_renewal(&two_level_decay(1.0)).unwrap().unwrap();
        assert!((decay.reset_state[0].norm() - 1.0).abs() < 1e-12);
        assert!(detect_renewal(&random_model(3, 2, 0, 9)).unwrap().is_err());
    }

    #[test]
    fn analytic_matches_eigensolver() {
        let s = demo();
        for i in 1..=10 {
            let x = 0.1 * i as f64;
            let cmp = compare_with_eigensolver(&s, x).unwrap();
            assert!((cmp.analytic - cmp.numerical).abs() < 1e-10);
            assert!(cmp.eigenvector_angle < 1e-8);
        }
        let zero = analytic_potential(&s, 0.0, &[]).unwrap();
        assert!(zero.g.abs() < 1e-10);
        let ap = analytic_potential(&s, 0.3, &[]).unwrap();
        assert!((linalg::sandwich(&s.reset_state, &ap.f, &s.reset_state).re - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schrodinger_state_matches() {
        let s = demo();
        let kernel = Kernel::new(&s.model).unwrap();
        let sv = 0.4;
        let x = thermo::potential_value(&kernel, &TiltPoint::s(sv, &[])).unwrap();
        let rep = thermo::potential(&kernel, &TiltPoint::s(sv, &[]), Positivity::Waived).unwrap();
        let rho = analytic_schrodinger_state(&s, x).unwrap();
        assert!(linalg::trace_distance(&rho, &rep.left_eig_schr).unwrap() < 1e-9);
    }

    #[test]
    fn product_checks() {
        let s = demo();
        let r = renewal_product_checks(&s, 10, 0.5, 20_000, 11).unwrap();
        assert!(r.collapse_residual < 1e-10);
        assert!(r.partition_rel_error < 1e-9);
        assert!(r.lag1_correlation.abs() < 3.0 / (20_000f64).sqrt());
        assert!(r.trivial_transition_residual.unwrap() < 1e-12);
        assert!(r.gap_residual < 1e-10);
        let r = renewal_product_checks(&s, 5, 0.3, 10, 1).unwrap();
        assert!(r.collapse_residual < 1e-10);
        assert!(matches!(renewal_product_checks(&s, 1, 0.3, 10, 1), Err(Error::Domain(_))));
    }
}
