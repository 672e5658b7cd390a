//! Quantum-jump Monte Carlo under fixed-count and fixed-time truncation,
//! trajectory densities and reweighting estimators.

use faer::{c64, Col, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::counting;
use crate::error::{Error, Result};
use crate::generators::{Kernel, TiltPoint};
use crate::linalg::{self, Ket, Operator};
use crate::model::LindbladModel;
use crate::superop::Positivity;
use crate::thermo;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FixedCount { k: usize },
    FixedTime { tau: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    /// `(time, channel)` with 0-based channels.
    pub jumps: Vec<(f64, usize)>,
    pub scheme: Scheme,
    pub m: Vec<f64>,
}

impl Trajectory {
    pub fn new(jumps: Vec<(f64, usize)>, scheme: Scheme, model: &LindbladModel) -> Self {
        let mut m = vec![0.0; model.spin_dim()];
        for &(_, ch) in &jumps {
            for (acc, v) in m.iter_mut().zip(&model.jumps()[ch].spin) {
                *acc += v;
            }
        }
        Trajectory { jumps, scheme, m }
    }

    /// `T[X]`, the last jump time.
    pub fn last_time(&self) -> f64 {
        self.jumps.last().map(|j| j.0).unwrap_or(0.0)
    }

    /// `K[X]`
    pub fn count(&self) -> usize {
        self.jumps.len()
    }

    pub fn waiting_times(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.jumps
            .iter()
            .map(|&(t, _)| {
                let w = t - prev;
                prev = t;
                w
            })
            .collect()
    }
}

/// Evolution `e^{-itH_eff}` between jumps, its survival function and
/// waiting-time density.
#[derive(Clone, Debug)]
pub struct NoJumpPropagator {
    heff: Operator,
    dissipator: Operator,
    eig: Option<EigenForm>,
}

#[derive(Clone, Debug)]
struct EigenForm {
    values: Vec<c64>,
    vectors: Mat<c64>,
    inverse: Mat<c64>,
    gram: Mat<c64>,
}

/// Survival `S(t) = ||e^{-itH_eff} ψ||^2` for one starting vector.
#[derive(Clone, Debug)]
pub struct Survival<'a> {
    prop: &'a NoJumpPropagator,
    psi: Ket,
    /// `S(t) = Re sum_jk coeff_jk e^{rate_jk t}`
    terms: Vec<(c64, c64)>,
    pub floor: f64,
}

const DARK_TOL: f64 = 1e-12;

impl NoJumpPropagator {
    pub fn new(model: &LindbladModel) -> Result<Self> {
        let heff = model.h_eff();
        let dissipator = model.dissipator();
        let evd = heff
            .eigen()
            .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
        let d = heff.nrows();
        let vectors = evd.U().to_owned();
        let values: Vec<c64> = (0..d).map(|k| evd.S().column_vector()[k]).collect();
        let inverse = linalg::inverse(&vectors);
        let cond = linalg::condition_one_norm(&vectors, &inverse);
        let eig = if cond.is_finite() && cond < 1e8 {
            let gram = vectors.adjoint() * &vectors;
            Some(EigenForm {
                values,
                vectors,
                inverse,
                gram,
            })
        } else {
            None
        };
        Ok(NoJumpPropagator {
            heff,
            dissipator,
            eig,
        })
    }

    /// `e^{-itH_eff} ψ`
    pub fn evolve(&self, psi: &Ket, t: f64) -> Ket {
        if t == 0.0 {
            return psi.clone();
        }
        match &self.eig {
            Some(e) => {
                let a = &e.inverse * psi;
                let scaled = Col::from_fn(a.nrows(), |k| a[k] * (c64::new(0.0, -t) * e.values[k]).exp());
                &e.vectors * &scaled
            }
            None => &linalg::expm(&linalg::scale(&self.heff, c64::new(0.0, -t))) * psi,
        }
    }

    /// Waiting-time density `p(t) = φ^dagger D φ` with `φ = e^{-itH_eff} ψ`.
    pub fn density(&self, psi: &Ket, t: f64) -> f64 {
        let phi = self.evolve(psi, t);
        linalg::sandwich(&phi, &self.dissipator, &phi).re
    }

    pub fn survival<'a>(&'a self, psi: &Ket) -> Survival<'a> {
        match &self.eig {
            Some(e) => {
                let a = &e.inverse * psi;
                let d = a.nrows();
                let mut terms = Vec::with_capacity(d * d);
                let mut floor = 0.0;
                for j in 0..d {
                    for k in 0..d {
                        let coeff = a[j].conj() * a[k] * e.gram[(j, k)];
                        let rate = c64::new(0.0, 1.0) * (e.values[j].conj() - e.values[k]);
                        if rate.norm() < DARK_TOL {
                            floor += coeff.re;
                        }
                        terms.push((coeff, rate));
                    }
                }
                Survival {
                    prop: self,
                    psi: psi.clone(),
                    terms,
                    floor: floor.max(0.0),
                }
            }
            None => {
                let far = self.evolve(psi, 1e4);
                Survival {
                    prop: self,
                    psi: psi.clone(),
                    terms: Vec::new(),
                    floor: far.norm_l2().powi(2),
                }
            }
        }
    }
}

impl Survival<'_> {
    pub fn value(&self, t: f64) -> f64 {
        if self.terms.is_empty() {
            return self.prop.evolve(&self.psi, t).norm_l2().powi(2);
        }
        self.terms
            .iter()
            .map(|(c, r)| (c * (r * t).exp()).re)
            .sum()
    }

    /// `-dS/dt`
    pub fn density(&self, t: f64) -> f64 {
        if self.terms.is_empty() {
            return self.prop.density(&self.psi, t);
        }
        -self
            .terms
            .iter()
            .map(|(c, r)| (c * r * (r * t).exp()).re)
            .sum::<f64>()
    }

    /// Solve `S(t) = u` for `u` in `(floor, 1)`.
    pub fn invert(&self, u: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.value(hi) > u {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return hi;
            }
        }
        let mut t = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.value(t) - u;
            if f > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            if f.abs() < 1e-15 || hi - lo < 1e-10 * hi.max(1.0) * 1e-2 {
                break;
            }
            let slope = -self.density(t);
            let newton = if slope < 0.0 { t - f / slope } else { f64::NAN };
            t = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        t
    }
}

#[derive(Clone, Debug)]
pub struct WaitingDraw {
    pub wait: f64,
    pub channel: usize,
    pub post_state: Ket,
}

/// Draw the next waiting time and channel from a normalized state.
pub fn sample_waiting_time<R: Rng>(
    model: &LindbladModel,
    prop: &NoJumpPropagator,
    psi: &Ket,
    rng: &mut R,
) -> Result<WaitingDraw> {
    let surv = prop.survival(psi);
    let u: f64 = 1.0 - rng.random::<f64>();
    if u <= surv.floor {
        return Err(Error::DarkState {
            survival_floor: surv.floor,
        });
    }
    let wait = surv.invert(u);
    let phi = prop.evolve(psi, wait);
    let jumped: Vec<Ket> = model.jumps().iter().map(|j| &j.operator() * &phi).collect();
    let weights: Vec<f64> = jumped.iter().map(|v| v.norm_l2().powi(2)).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut channel = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if pick < *w {
            channel = i;
            break;
        }
        pick -= w;
    }
    let v = &jumped[channel];
    let n = v.norm_l2();
    Ok(WaitingDraw {
        wait,
        channel,
        post_state: Col::from_fn(v.nrows(), |i| v[i] / n),
    })
}

/// Independent generator for trajectory `index` of a batch.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Pure states and probabilities the first state of each trajectory is drawn from.
#[derive(Clone, Debug)]
pub struct InitialEnsemble {
    pub states: Vec<Ket>,
    pub probabilities: Vec<f64>,
}

impl InitialEnsemble {
    pub fn pure(psi: &Ket) -> Self {
        InitialEnsemble {
            states: vec![psi.clone()],
            probabilities: vec![1.0],
        }
    }

    /// Eigen-ensemble of the stationary state `ρ_ss` of the untilted dynamics.
    pub fn stationary(kernel: &Kernel) -> Result<Self> {
        let zeros = vec![0.0; kernel.model.spin_dim()];
        let rep = thermo::potential(kernel, &TiltPoint::s(0.0, &zeros), Positivity::Waived)?;
        let rho = linalg::hermitian_part(&rep.left_eig_schr);
        let evd = rho
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
        let d = rho.nrows();
        let mut states = Vec::new();
        let mut probabilities = Vec::new();
        for k in 0..d {
            let p = evd.S().column_vector()[k].re;
            if p > 1e-14 {
                states.push(Col::from_fn(d, |i| evd.U()[(i, k)]));
                probabilities.push(p);
            }
        }
        let total: f64 = probabilities.iter().sum();
        probabilities.iter_mut().for_each(|p| *p /= total);
        Ok(InitialEnsemble { states, probabilities })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> Ket {
        if self.states.len() == 1 {
            return self.states[0].clone();
        }
        let mut u = rng.random::<f64>();
        for (s, p) in self.states.iter().zip(&self.probabilities) {
            if u < *p {
                return s.clone();
            }
            u -= p;
        }
        self.states[self.states.len() - 1].clone()
    }
}

pub fn sample_one(
    model: &LindbladModel,
    prop: &NoJumpPropagator,
    start: &InitialEnsemble,
    scheme: Scheme,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut psi = start.draw(rng);
    let mut t = 0.0;
    let mut jumps = Vec::new();
    match scheme {
        Scheme::FixedCount { k } => {
            for _ in 0..k {
                let draw = sample_waiting_time(model, prop, &psi, rng)?;
                t += draw.wait;
                jumps.push((t, draw.channel));
                psi = draw.post_state;
            }
        }
        Scheme::FixedTime { tau } => loop {
            match sample_waiting_time(model, prop, &psi, rng) {
                Ok(draw) if t + draw.wait <= tau => {
                    t += draw.wait;
                    jumps.push((t, draw.channel));
                    psi = draw.post_state;
                }
                Ok(_) | Err(Error::DarkState { .. }) => break,
                Err(e) => return Err(e),
            }
        },
    }
    Ok(Trajectory::new(jumps, scheme, model))
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

impl Estimate {
    pub fn of(values: impl Iterator<Item = f64>) -> Estimate {
        let v: Vec<f64> = values.collect();
        let n = v.len() as f64;
        if v.is_empty() {
            return Estimate { mean: f64::NAN, se: f64::NAN };
        }
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleBatch {
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub model_hash: String,
    pub mean_count: Estimate,
    pub mean_last_time: Estimate,
}

/// Batch of `n` trajectories; trajectory `i` uses the stream `(seed, i)`.
pub fn sample_batch(model: &LindbladModel, start: &InitialEnsemble, scheme: Scheme, n: usize, seed: u64) -> Result<SampleBatch> {
    if let Scheme::FixedTime { tau } = scheme {
        if !(tau >= 0.0) {
            return Err(Error::Domain(format!("tau = {tau} must be nonnegative")));
        }
    }
    let prop = NoJumpPropagator::new(model)?;
    let trajectories: Vec<Trajectory> = (0..n as u64)
        .into_par_iter()
        .map(|i| sample_one(model, &prop, start, scheme, &mut stream_rng(seed, i)))
        .collect::<Result<_>>()?;
    let mean_count = Estimate::of(trajectories.iter().map(|t| t.count() as f64));
    let mean_last_time = Estimate::of(trajectories.iter().map(|t| t.last_time()));
    Ok(SampleBatch {
        trajectories,
        seed,
        model_hash: model.hash(),
        mean_count,
        mean_last_time,
    })
}

pub fn sample_fixed_count(model: &LindbladModel, k: usize, n: usize, seed: u64) -> Result<SampleBatch> {
    sample_batch(model, &InitialEnsemble::pure(model.initial_state()), Scheme::FixedCount { k }, n, seed)
}

pub fn sample_fixed_time(model: &LindbladModel, tau: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    sample_batch(model, &InitialEnsemble::pure(model.initial_state()), Scheme::FixedTime { tau }, n, seed)
}

/// `log ||J[X] ψ||^2` (fixed count) or `log ||V^τ[X] ψ||^2` (fixed time).
pub fn trajectory_log_density(model: &LindbladModel, prop: &NoJumpPropagator, x: &Trajectory) -> f64 {
    let mut psi = model.initial_state().clone();
    let mut prev = 0.0;
    let mut acc = 0.0;
    for &(t, ch) in &x.jumps {
        let phi = &model.jumps()[ch].operator() * &prop.evolve(&psi, t - prev);
        let n2 = phi.norm_l2().powi(2);
        if n2 == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += n2.ln();
        let n = n2.sqrt();
        psi = Col::from_fn(phi.nrows(), |i| phi[i] / n);
        prev = t;
    }
    if let Scheme::FixedTime { tau } = x.scheme {
        if tau > prev {
            let n2 = prop.evolve(&psi, tau - prev).norm_l2().powi(2);
            if n2 == 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += n2.ln();
        }
    }
    acc
}

/// Self-normalized importance weights summary.
#[derive(Clone, Debug, Serialize)]
pub struct Reweighted {
    pub estimate: Estimate,
    pub effective_sample_size: f64,
}

/// `E[e^{-sK - c.M}]` over a fixed-time batch, or `E[e^{-xT - c.M}]` over a
/// fixed-count batch.
pub fn importance_partition(batch: &SampleBatch, field: f64, c: &[f64]) -> Reweighted {
    let weights: Vec<f64> = batch
        .trajectories
        .iter()
        .map(|tr| {
            let ext = match tr.scheme {
                Scheme::FixedTime { .. } => tr.count() as f64,
                Scheme::FixedCount { .. } => tr.last_time(),
            };
            let cm: f64 = tr.m.iter().zip(c).map(|(m, c)| m * c).sum();
            (-field * ext - cm).exp()
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    let sum2: f64 = weights.iter().map(|w| w * w).sum();
    let ess = if sum2 > 0.0 { sum * sum / sum2 } else { 0.0 };
    let n = weights.len();
    if (ess as usize) < n / 100 {
        log::warn!("effective sample size {ess:.1} is below 1% of {n} samples");
    }
    Reweighted {
        estimate: Estimate::of(weights.into_iter()),
        effective_sample_size: ess,
    }
}

/// `K_τ = τ k`, rounded half to even.
pub fn shell_count(tau: f64, k: f64) -> usize {
    let v = tau * k;
    let r = v.round_ties_even();
    r.max(0.0) as usize
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalencePoint {
    pub tau: f64,
    pub shell_count: usize,
    /// `(1/τ)[-sK_τ + log P_τ(K_τ) - log Z_τ(s)]` from exact counting.
    pub exponent: f64,
    /// Same with `Z_τ(s)` taken from the count distribution.
    pub exponent_from_counts: f64,
    pub mc_exponent: f64,
    pub mc_se: f64,
    pub acceptance: f64,
    pub effective_sample_size: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub s: f64,
    pub k: f64,
    pub points: Vec<EquivalencePoint>,
    pub shrinking: bool,
}

pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// Canonical over microcanonical path probability on the shell `K = K_τ`,
/// as a rate in `τ`, from exact counting and from unbiased samples.
pub fn classical_equivalence_check(
    kernel: &Kernel,
    s: f64,
    tau_list: &[f64],
    n: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let model = &kernel.model;
    let zeros = vec![0.0; model.spin_dim()];
    let sr = thermo::potential(kernel, &TiltPoint::s(s, &zeros), Positivity::Waived)?;
    let k = sr.intensive.k.expect("s-ensemble report carries k");
    let mut points = Vec::new();
    for (i, &tau) in tau_list.iter().enumerate() {
        let kt = shell_count(tau, k);
        let state = counting::count_resolved_propagate(kernel, tau, None, &zeros)?;
        let probs = state.probabilities();
        let p_shell = if kt < probs.len() {
            probs[kt]
        } else {
            counting::count_distribution(kernel, tau, kt, &zeros)?[kt]
        };
        let log_z = kernel.log_partition_tau(s, &zeros, tau)?;
        let z_counts: f64 = probs
            .iter()
            .enumerate()
            .map(|(kk, p)| p * (-s * kk as f64).exp())
            .sum();
        let exponent = (-s * kt as f64 + p_shell.ln() - log_z) / tau;
        let exponent_from_counts = (-s * kt as f64 + p_shell.ln() - z_counts.ln()) / tau;

        let batch = sample_fixed_time(model, tau, n, seed.wrapping_add(i as u64))?;
        let hits = batch.trajectories.iter().filter(|t| t.count() == kt).count();
        let acceptance = hits as f64 / n as f64;
        if acceptance < MIN_ACCEPTANCE {
            return Err(Error::InsufficientAcceptance {
                rate: acceptance,
                threshold: MIN_ACCEPTANCE,
            });
        }
        let rw = importance_partition(&batch, s, &zeros);
        let z_hat = rw.estimate.mean;
        let nf = n as f64;
        let w_shell = (-s * kt as f64).exp();
        let var_w = rw.estimate.se.powi(2) * nf;
        let var = (1.0 - acceptance) / (nf * acceptance) + var_w / (nf * z_hat * z_hat)
            - 2.0 * (w_shell - z_hat) / (nf * z_hat);
        let mc_exponent = (-s * kt as f64 + acceptance.ln() - z_hat.ln()) / tau;
        points.push(EquivalencePoint {
            tau,
            shell_count: kt,
            exponent,
            exponent_from_counts,
            mc_exponent,
            mc_se: var.max(0.0).sqrt() / tau,
            acceptance,
            effective_sample_size: rw.effective_sample_size,
        });
    }
    let shrinking = points.windows(2).all(|w| w[1].exponent.abs() < w[0].exponent.abs());
    Ok(EquivalenceReport {
        s,
        k,
        points,
        shrinking,
    })
}
