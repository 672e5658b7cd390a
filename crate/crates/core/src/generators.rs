//! Deformed transfer maps `T_{x,c}`, deformed generators `W_{s,c}`,
//! partition functions and the connection identity between them.

use faer::{c64, Col};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cr, stack, unstack, Operator};
use crate::model::LindbladModel;
use crate::superop::{self, build_r, jump_map, RMap, Resolvent, SuperOperator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    XEnsemble,
    SEnsemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiltPoint {
    pub kind: EnsembleKind,
    pub field: f64,
    pub c: Vec<f64>,
}

impl TiltPoint {
    pub fn x(x: f64, c: &[f64]) -> Self {
        TiltPoint {
            kind: EnsembleKind::XEnsemble,
            field: x,
            c: c.to_vec(),
        }
    }

    pub fn s(s: f64, c: &[f64]) -> Self {
        TiltPoint {
            kind: EnsembleKind::SEnsemble,
            field: s,
            c: c.to_vec(),
        }
    }
}

/// A model together with its map `R`, the common ingredient of every
/// deformed generator.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub model: LindbladModel,
    pub r: RMap,
}

impl Kernel {
    pub fn new(model: &LindbladModel) -> Result<Self> {
        Ok(Kernel {
            model: model.clone(),
            r: build_r(model)?,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.r.x_min
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `A -> sum_i e^{-c.M(i)} L_i^dagger A L_i`
    pub fn jump(&self, c: &[f64]) -> Result<SuperOperator> {
        Ok(jump_map(&self.model, &self.model.weights(c)?))
    }

    /// `A -> sum_i e^{-c.M(i)} M_j(i) L_i^dagger A L_i`
    pub fn jump_spin_weighted(&self, c: &[f64], component: usize) -> Result<SuperOperator> {
        let w = self.model.weights(c)?;
        let weighted: Vec<f64> = self
            .model
            .jumps()
            .iter()
            .zip(&w)
            .map(|(j, w)| w * j.spin[component])
            .collect();
        Ok(jump_map(&self.model, &weighted))
    }

    pub fn resolvent(&self, x: f64) -> Result<Resolvent> {
        Resolvent::new(&self.r, x)
    }

    pub fn t(&self, x: f64, c: &[f64]) -> Result<SuperOperator> {
        self.t_complex(cr(x), c)
    }

    pub fn t_complex(&self, x: c64, c: &[f64]) -> Result<SuperOperator> {
        let res = Resolvent::new_complex(&self.r, x)?;
        Ok(res.compose(&self.jump(c)?))
    }

    pub fn w(&self, s: f64, c: &[f64]) -> Result<SuperOperator> {
        self.w_complex(cr(s), c)
    }

    pub fn w_complex(&self, s: c64, c: &[f64]) -> Result<SuperOperator> {
        Ok(self.jump(c)?.scaled((-s).exp()).minus(&self.r.map))
    }

    /// `log Z_K(x, c)`, accumulated with rescaling so that large `K` neither
    /// overflows nor underflows.
    pub fn log_partition_k(&self, x: f64, c: &[f64], k: usize) -> Result<f64> {
        let t = self.t(x, c)?;
        let rho = self.model.initial_density();
        log_trace_power(&t, &rho, k)
    }

    pub fn partition_k(&self, x: f64, c: &[f64], k: usize) -> Result<f64> {
        Ok(self.log_partition_k(x, c, k)?.exp())
    }

    pub fn partition_tau(&self, s: f64, c: &[f64], tau: f64) -> Result<f64> {
        if tau < 0.0 {
            return Err(Error::Domain(format!("tau = {tau} must be nonnegative")));
        }
        if tau == 0.0 {
            return Ok(1.0);
        }
        let w = self.w(s, c)?;
        let out = superop::matrix_exp_apply(&w, tau, &linalg::identity(self.dim()));
        Ok(linalg::trace_product(&self.model.initial_density(), &out).re)
    }

    pub fn log_partition_tau(&self, s: f64, c: &[f64], tau: f64) -> Result<f64> {
        Ok(self.partition_tau(s, c, tau)?.ln())
    }
}

/// `log tr[rho G^k(I)]` with per-step rescaling.
pub fn log_trace_power(g: &SuperOperator, rho: &Operator, k: usize) -> Result<f64> {
    let d = g.dim();
    let mut v = stack(&linalg::identity(d));
    let mut log_scale = 0.0;
    for _ in 0..k {
        v = g.apply_vec(&v);
        let m = v.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        if m == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        v = Col::from_fn(v.nrows(), |i| v[i] / m);
        log_scale += m.ln();
    }
    let tr = linalg::trace_product(rho, &unstack(&v, d)).re;
    if tr <= 0.0 {
        return Err(Error::Domain(format!("partition function is not positive ({tr:e})")));
    }
    Ok(log_scale + tr.ln())
}

pub fn build_t(model: &LindbladModel, tilt: &TiltPoint) -> Result<SuperOperator> {
    expect_kind(tilt, EnsembleKind::XEnsemble)?;
    Kernel::new(model)?.t(tilt.field, &tilt.c)
}

pub fn build_w(model: &LindbladModel, tilt: &TiltPoint) -> Result<SuperOperator> {
    expect_kind(tilt, EnsembleKind::SEnsemble)?;
    Kernel::new(model)?.w(tilt.field, &tilt.c)
}

pub fn partition_k(model: &LindbladModel, tilt: &TiltPoint, k: usize) -> Result<f64> {
    expect_kind(tilt, EnsembleKind::XEnsemble)?;
    Kernel::new(model)?.partition_k(tilt.field, &tilt.c, k)
}

pub fn partition_tau(model: &LindbladModel, tilt: &TiltPoint, tau: f64) -> Result<f64> {
    expect_kind(tilt, EnsembleKind::SEnsemble)?;
    Kernel::new(model)?.partition_tau(tilt.field, &tilt.c, tau)
}

/// Relative Frobenius residual of
/// `T_{x,c} - e^s Id = e^s (x Id + R)^{-1} ∘ (W_{s,c} - x Id)`.
pub fn connection_residual(kernel: &Kernel, x: f64, s: f64, c: &[f64]) -> Result<f64> {
    let t = kernel.t(x, c)?;
    let es = cr(s.exp());
    let lhs = t.shifted(-es);
    let w_minus_x = kernel.w(s, c)?.shifted(cr(-x));
    let rhs = kernel.resolvent(x)?.compose(&w_minus_x).scaled(es);
    Ok(lhs.minus(&rhs).frobenius() / t.frobenius())
}

fn expect_kind(tilt: &TiltPoint, kind: EnsembleKind) -> Result<()> {
    if tilt.kind != kind {
        return Err(Error::Validation(format!(
            "expected a {kind:?} tilt, got {:?}",
            tilt.kind
        )));
    }
    Ok(())
}
