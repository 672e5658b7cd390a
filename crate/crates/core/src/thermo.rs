//! Thermodynamic potentials `g(x,c)` and `θ(s,c)`, their eigenvectors,
//! the duality between the two ensembles, intensive quantities and
//! Legendre-Fenchel rate functions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::{EnsembleKind, Kernel, TiltPoint};
use crate::linalg::{self, cr, Operator};
use crate::superop::{dominant_eigenpair, Positivity, Ranking, X_MIN_MARGIN};

#[derive(Clone, Debug, Default, Serialize)]
pub struct Intensive {
    /// `-∂g/∂x`
    pub t: Option<f64>,
    /// `-∂g/∂c`
    pub m: Option<Vec<f64>>,
    /// `-∂θ/∂s`
    pub k: Option<f64>,
    /// `-∂θ/∂c`
    pub m_tilde: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PotentialReport {
    pub tilt: TiltPoint,
    /// `g(x,c)` or `θ(s,c)`.
    pub potential: f64,
    /// `F_{x,c}` or `E_{s,c}`.
    pub right_eig: Operator,
    /// `σ`, normalized `tr σ = tr[F σ] = 1`.
    pub left_eig_heis: Operator,
    /// Trace-one dominant state of the Schrödinger-picture map.
    pub left_eig_schr: Operator,
    pub gap: f64,
    pub intensive: Intensive,
}

pub fn potential(kernel: &Kernel, tilt: &TiltPoint, positivity: Positivity) -> Result<PotentialReport> {
    let c = &tilt.c;
    let p = kernel.model.spin_dim();
    match tilt.kind {
        EnsembleKind::XEnsemble => {
            let x = tilt.field;
            let res = kernel.resolvent(x)?;
            let t = res.compose(&kernel.jump(c)?);
            let pair = dominant_eigenpair(&t, Ranking::SpectralRadius, positivity)?;
            let schr = dominant_eigenpair(&t.adjoint(), Ranking::SpectralRadius, Positivity::Waived)?;
            let g = pair.value.norm().ln();
            let sigma = &pair.left;
            let f = &pair.right;
            let tq = linalg::trace_product(sigma, &res.apply(f)).re;
            let mut m = Vec::with_capacity(p);
            for j in 0..p {
                let spun = kernel.jump_spin_weighted(c, j)?.apply(f);
                m.push((-g).exp() * linalg::trace_product(sigma, &res.apply(&spun)).re);
            }
            Ok(PotentialReport {
                tilt: tilt.clone(),
                potential: g,
                right_eig: pair.right.clone(),
                left_eig_heis: pair.left.clone(),
                left_eig_schr: schr.right,
                gap: pair.gap,
                intensive: Intensive {
                    t: Some(tq),
                    m: Some(m),
                    ..Default::default()
                },
            })
        }
        EnsembleKind::SEnsemble => {
            let s = tilt.field;
            let jump = kernel.jump(c)?;
            let w = jump.scaled(cr((-s).exp())).minus(&kernel.r.map);
            let pair = dominant_eigenpair(&w, Ranking::MaxRealPart, positivity)?;
            let schr = dominant_eigenpair(&w.adjoint(), Ranking::MaxRealPart, Positivity::Waived)?;
            let sigma = &pair.left;
            let e = &pair.right;
            let k = (-s).exp() * linalg::trace_product(sigma, &jump.apply(e)).re;
            let mut mt = Vec::with_capacity(p);
            for j in 0..p {
                let spun = kernel.jump_spin_weighted(c, j)?.apply(e);
                mt.push((-s).exp() * linalg::trace_product(sigma, &spun).re);
            }
            Ok(PotentialReport {
                tilt: tilt.clone(),
                potential: pair.value.re,
                right_eig: pair.right.clone(),
                left_eig_heis: pair.left.clone(),
                left_eig_schr: schr.right,
                gap: pair.gap,
                intensive: Intensive {
                    k: Some(k),
                    m_tilde: Some(mt),
                    ..Default::default()
                },
            })
        }
    }
}

/// Only the potential value.
pub fn potential_value(kernel: &Kernel, tilt: &TiltPoint) -> Result<f64> {
    let c = &tilt.c;
    match tilt.kind {
        EnsembleKind::XEnsemble => {
            let t = kernel.t(tilt.field, c)?;
            let pair = dominant_eigenpair(&t, Ranking::SpectralRadius, Positivity::Waived)?;
            Ok(pair.value.norm().ln())
        }
        EnsembleKind::SEnsemble => {
            let w = kernel.w(tilt.field, c)?;
            Ok(dominant_eigenpair(&w, Ranking::MaxRealPart, Positivity::Waived)?.value.re)
        }
    }
}

/// `(s,c) -> (θ(s,c), c)` or `(x,c) -> (g(x,c), c)`.
pub fn dual_map(kernel: &Kernel, tilt: &TiltPoint) -> Result<TiltPoint> {
    let v = potential_value(kernel, tilt)?;
    match tilt.kind {
        EnsembleKind::SEnsemble => {
            if v <= kernel.x_min() + X_MIN_MARGIN {
                return Err(Error::Domain(format!(
                    "θ(s={}) = {v} leaves the admissible window x > {}",
                    tilt.field,
                    kernel.x_min()
                )));
            }
            Ok(TiltPoint::x(v, &tilt.c))
        }
        EnsembleKind::XEnsemble => Ok(TiltPoint::s(v, &tilt.c)),
    }
}

/// Intensive quantities by five-point central differences of the potential.
///
/// In the x-ensemble the step is capped at 0.5% of the distance to `x_min`.
pub fn intensive_finite_difference(kernel: &Kernel, tilt: &TiltPoint, h: f64) -> Result<Intensive> {
    let p = kernel.model.spin_dim();
    let h_field = match tilt.kind {
        EnsembleKind::XEnsemble => h.min(0.005 * (tilt.field - kernel.x_min())),
        EnsembleKind::SEnsemble => h,
    };
    let shifted = |df: f64, dc: Option<(usize, f64)>| -> Result<f64> {
        let mut t = tilt.clone();
        t.field += df;
        if let Some((j, v)) = dc {
            if t.c.is_empty() {
                t.c = vec![0.0; p];
            }
            t.c[j] += v;
        }
        potential_value(kernel, &t)
    };
    let stencil = |f: &dyn Fn(f64) -> Result<f64>, h: f64| -> Result<f64> {
        Ok(-(8.0 * (f(h)? - f(-h)?) - (f(2.0 * h)? - f(-2.0 * h)?)) / (12.0 * h))
    };
    let d_field = stencil(&|d| shifted(d, None), h_field)?;
    let mut d_c = Vec::with_capacity(p);
    for j in 0..p {
        d_c.push(stencil(&|d| shifted(0.0, Some((j, d))), h)?);
    }
    Ok(match tilt.kind {
        EnsembleKind::XEnsemble => Intensive {
            t: Some(d_field),
            m: Some(d_c),
            ..Default::default()
        },
        EnsembleKind::SEnsemble => Intensive {
            k: Some(d_field),
            m_tilde: Some(d_c),
            ..Default::default()
        },
    })
}

/// `α_{s,c} = tr[F_{x,c} σ_{s,c}]` at the dual point `x = θ(s,c)`.
pub fn alpha(kernel: &Kernel, s: f64, c: &[f64], positivity: Positivity) -> Result<f64> {
    let sr = potential(kernel, &TiltPoint::s(s, c), positivity)?;
    let xr = potential(kernel, &TiltPoint::x(sr.potential, c), positivity)?;
    Ok(linalg::trace_product(&xr.right_eig, &sr.left_eig_heis).re)
}

/// Trace distance between `ρ_{s,c}` and `(x Id + R_*)^{-1}(ρ_{x,c})`
/// normalized to unit trace, at `x = θ(s,c)`.
pub fn schrodinger_eigvec_relation_residual(
    kernel: &Kernel,
    s: f64,
    c: &[f64],
    positivity: Positivity,
) -> Result<f64> {
    let sr = potential(kernel, &TiltPoint::s(s, c), positivity)?;
    let x = sr.potential;
    let xr = potential(kernel, &TiltPoint::x(x, c), positivity)?;
    let res_schr = kernel.resolvent(x)?.as_superop().adjoint();
    let mapped = res_schr.apply(&xr.left_eig_schr);
    let mapped = linalg::scale(&mapped, linalg::trace(&mapped).inv());
    linalg::trace_distance(&sr.left_eig_schr, &mapped)
}

#[derive(Clone, Debug, Serialize)]
pub struct RateFunction {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmin: f64,
}

/// Convex conjugate `I -> max_j (-f_j I - V_j)` of a potential `V` sampled
/// at fields `f_j`, evaluated on the intensive values `I_j = -V'(f_j)`.
pub fn legendre_rate(fields: &[f64], values: &[f64]) -> Result<RateFunction> {
    let n = fields.len();
    if n < 3 || values.len() != n {
        return Err(Error::Validation(
            "need at least three matching field and potential samples".into(),
        ));
    }
    if fields.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Validation("field grid must be strictly increasing".into()));
    }
    let mut bad = Vec::new();
    for j in 1..n - 1 {
        let left = (values[j] - values[j - 1]) / (fields[j] - fields[j - 1]);
        let right = (values[j + 1] - values[j]) / (fields[j + 1] - fields[j]);
        let h = 0.5 * (fields[j + 1] - fields[j - 1]);
        if (right - left) * h < -1e-8 {
            bad.push(j);
        }
    }
    if !bad.is_empty() {
        return Err(Error::NonConvexInput { indices: bad });
    }
    let slope = |j: usize| -> f64 {
        let (a, b) = if j == 0 {
            (0, 1)
        } else if j == n - 1 {
            (n - 2, n - 1)
        } else {
            (j - 1, j + 1)
        };
        (values[b] - values[a]) / (fields[b] - fields[a])
    };
    let grid: Vec<f64> = (0..n).map(|j| -slope(j)).collect();
    let rate = |i: f64| -> f64 {
        fields
            .iter()
            .zip(values)
            .map(|(f, v)| -f * i - v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let vals: Vec<f64> = grid.iter().map(|&i| rate(i)).collect();
    let (best, _) = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    Ok(RateFunction {
        argmin: grid[best],
        grid,
        values: vals,
    })
}

impl RateFunction {
    /// Conjugate value at an arbitrary intensive point, from the stored
    /// potential samples.
    pub fn evaluate(fields: &[f64], values: &[f64], intensive: f64) -> f64 {
        fields
            .iter()
            .zip(values)
            .map(|(f, v)| -f * intensive - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
