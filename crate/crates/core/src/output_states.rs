//! Output states: Gram matrix of the waiting-time representation, overlaps
//! of canonical states, reduced states on `[0, τ0]` split into Fock layers,
//! the limit state and the phase (in)equivalence checks.

use faer::{c64, Col, Mat, Side};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::{Kernel, TiltPoint};
use crate::linalg::{self, cr, Ket, Operator};
use crate::model::{LindbladModel, PhaseKind};
use crate::superop::{self, Positivity};
use crate::thermo;
use crate::trajectories::{self, NoJumpPropagator, Trajectory};

#[derive(Clone, Debug)]
pub struct GramMatrix {
    /// Rows and columns indexed by `m + d m'`.
    pub entries: Mat<c64>,
    pub eigenvalues: Vec<f64>,
    /// Columns span the nonzero part of the spectrum.
    pub bond_basis: Mat<c64>,
    pub rank: usize,
}

/// `G_{(m,m'),(n,n')} = <m'| R^{-1}(sum_i L_i^dagger |m><n| L_i) |n'>`.
pub fn gram_matrix(model: &LindbladModel) -> Result<GramMatrix> {
    let kernel = Kernel::new(model)?;
    let x_min = model.effective_hamiltonian()?.x_min;
    if x_min >= 0.0 {
        return Err(Error::Domain(format!(
            "the waiting-time representation needs a strictly stable H_eff (x_min = {x_min})"
        )));
    }
    let res = kernel.resolvent(0.0)?;
    let d = model.dim();
    let ops: Vec<Operator> = model.jumps().iter().map(|j| j.operator()).collect();
    let mut g = Mat::<c64>::zeros(d * d, d * d);
    for m in 0..d {
        for n in 0..d {
            let mut b = Mat::<c64>::zeros(d, d);
            for l in &ops {
                let left = l.adjoint() * linalg::basis_ket(d, m);
                let right = linalg::basis_ket(d, n).adjoint() * l;
                b += &left * &right;
            }
            let x = res.apply(&b);
            for mp in 0..d {
                for np in 0..d {
                    g[(m + d * mp, n + d * np)] = x[(mp, np)];
                }
            }
        }
    }
    let g = linalg::hermitian_part(&g);
    let evd = g
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
    let eigenvalues: Vec<f64> = (0..d * d).map(|k| evd.S().column_vector()[k].re).collect();
    let top = eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let keep: Vec<usize> = (0..d * d).filter(|&k| eigenvalues[k] > 1e-12 * top).collect();
    let u = evd.U();
    let bond_basis = Mat::from_fn(d * d, keep.len(), |i, j| u[(i, keep[j])]);
    Ok(GramMatrix {
        entries: g,
        eigenvalues,
        rank: keep.len(),
        bond_basis,
    })
}

/// `<MPS_K(x,c)|MPS_K(x',c')>`, real for real tilts.
pub fn canonical_overlap(kernel: &Kernel, k: usize, a: (f64, &[f64]), b: (f64, &[f64])) -> Result<f64> {
    let mid_c: Vec<f64> = a.1.iter().zip(b.1).map(|(u, v)| 0.5 * (u + v)).collect();
    let mid = kernel.log_partition_k(0.5 * (a.0 + b.0), &mid_c, k)?;
    let za = kernel.log_partition_k(a.0, a.1, k)?;
    let zb = kernel.log_partition_k(b.0, b.1, k)?;
    Ok((mid - 0.5 * (za + zb)).exp())
}

/// `<MPS_K|(A ⊗ I)|MPS_K> = tr[ρ T^K(A)]`.
pub fn mps_expectation(kernel: &Kernel, k: usize, a: &Operator) -> Result<c64> {
    let t = kernel.t(0.0, &[])?;
    let mut out = a.clone();
    for _ in 0..k {
        out = t.apply(&out);
    }
    Ok(linalg::trace_product(&kernel.model.initial_density(), &out))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GridSpec {
    pub nodes: usize,
    pub n_max: usize,
    pub cap: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            nodes: 16,
            n_max: 2,
            cap: 10_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridPoint {
    pub times: Vec<f64>,
    pub channels: Vec<usize>,
    pub weight: f64,
}

/// Ordered jump-time tuples in `[0, τ0]` with channels, on nested
/// Gauss-Legendre rules.
#[derive(Clone, Debug, Serialize)]
pub struct LayerGrid {
    pub n: usize,
    pub points: Vec<GridPoint>,
}

pub fn layer_grid(num_channels: usize, tau0: f64, n: usize, spec: &GridSpec) -> Result<LayerGrid> {
    let size = (spec.nodes * num_channels)
        .checked_pow(n as u32)
        .unwrap_or(usize::MAX);
    if size > spec.cap {
        return Err(Error::QuadratureOverflow {
            nodes: size,
            cap: spec.cap,
        });
    }
    let mut points = vec![GridPoint {
        times: Vec::new(),
        channels: Vec::new(),
        weight: 1.0,
    }];
    for _ in 0..n {
        let mut next = Vec::with_capacity(points.len() * spec.nodes * num_channels);
        for p in &points {
            let lo = p.times.last().copied().unwrap_or(0.0);
            let (ts, ws) = linalg::gauss_legendre_on(spec.nodes, lo, tau0);
            for (t, w) in ts.iter().zip(&ws) {
                for ch in 0..num_channels {
                    let mut times = p.times.clone();
                    times.push(*t);
                    let mut channels = p.channels.clone();
                    channels.push(ch);
                    next.push(GridPoint {
                        times,
                        channels,
                        weight: p.weight * w,
                    });
                }
            }
        }
        points = next;
    }
    Ok(LayerGrid { n, points })
}

#[derive(Clone, Debug)]
struct LayerAmplitudes {
    grid: LayerGrid,
    /// `V^{τ0}_c[X0] ψ`, including the final no-jump segment.
    open: Vec<Ket>,
    /// `J_c[X0] ψ`, ending at the last jump.
    closed: Vec<Ket>,
}

/// Block `(N, N')` of a reduced output state on the common quadrature grid.
/// Entries are weight-embedded, so traces are quadrature sums.
#[derive(Clone, Debug)]
pub struct LayerBlock {
    pub n: usize,
    pub n_prime: usize,
    pub block: Mat<c64>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "ensemble")]
pub enum ReducedScheme {
    SEnsemble { tau: f64, s: f64 },
    XEnsemble { k: usize, x: f64 },
}

/// Shared quadrature grids and propagated amplitudes for one model, `c` and `τ0`.
#[derive(Clone, Debug)]
pub struct OutputContext {
    pub kernel: Kernel,
    pub tau0: f64,
    pub c: Vec<f64>,
    pub spec: GridSpec,
    layers: Vec<LayerAmplitudes>,
}

impl OutputContext {
    pub fn new(model: &LindbladModel, tau0: f64, c: &[f64], spec: GridSpec) -> Result<Self> {
        if !(tau0 > 0.0) {
            return Err(Error::Domain(format!("tau0 = {tau0} must be positive")));
        }
        let kernel = Kernel::new(model)?;
        let weights = model.weights(c)?;
        let prop = NoJumpPropagator::new(model)?;
        let ops: Vec<Operator> = model.jumps().iter().map(|j| j.operator()).collect();
        let mut layers = Vec::with_capacity(spec.n_max + 1);
        for n in 0..=spec.n_max {
            let grid = layer_grid(ops.len(), tau0, n, &spec)?;
            let mut open = Vec::with_capacity(grid.points.len());
            let mut closed = Vec::with_capacity(grid.points.len());
            for p in &grid.points {
                let mut psi = model.initial_state().clone();
                let mut prev = 0.0;
                for (t, ch) in p.times.iter().zip(&p.channels) {
                    let kicked = &ops[*ch] * &prop.evolve(&psi, t - prev);
                    let scale = cr(weights[*ch].sqrt());
                    psi = Col::from_fn(kicked.nrows(), |i| scale * kicked[i]);
                    prev = *t;
                }
                open.push(prop.evolve(&psi, tau0 - prev));
                closed.push(psi);
            }
            layers.push(LayerAmplitudes { grid, open, closed });
        }
        Ok(OutputContext {
            kernel,
            tau0,
            c: c.to_vec(),
            spec,
            layers,
        })
    }

    pub fn n_max(&self) -> usize {
        self.spec.n_max
    }

    pub fn grid(&self, n: usize) -> &LayerGrid {
        &self.layers[n].grid
    }

    fn layer(&self, n: usize) -> Result<&LayerAmplitudes> {
        self.layers.get(n).ok_or_else(|| {
            Error::Domain(format!("layer {n} exceeds N_max = {}", self.spec.n_max))
        })
    }

    /// `B[a,b] = f_a conj(f_b) sqrt(w_a w_b) <v_b| A |v_a>`.
    fn sandwich_block(&self, n: usize, np: usize, a: &Operator, ket: c64, bra: c64, closed: bool) -> Result<Mat<c64>> {
        let la = self.layer(n)?;
        let lb = self.layer(np)?;
        let (va, vb) = if closed {
            (&la.closed, &lb.closed)
        } else {
            (&la.open, &lb.open)
        };
        let av: Vec<Ket> = va.iter().map(|v| a * v).collect();
        let factor = ket * bra.conj();
        Ok(Mat::from_fn(va.len(), vb.len(), |i, j| {
            let w = (la.grid.points[i].weight * lb.grid.points[j].weight).sqrt();
            factor * cr(w) * linalg::inner(&vb[j], &av[i])
        }))
    }

    /// Finite-τ s-ensemble block. A complex `s` tilts the ket amplitude by
    /// `e^{-sN/2}` and the bra by its conjugate; the future and the
    /// normalization use `Re s`.
    pub fn s_block(&self, tau: f64, s: c64, n: usize, np: usize) -> Result<Mat<c64>> {
        if !(tau > self.tau0) {
            return Err(Error::Domain(format!("tau = {tau} must exceed tau0 = {}", self.tau0)));
        }
        let w = self.kernel.w(s.re, &self.c)?;
        let future = superop::matrix_exp_apply(&w, tau - self.tau0, &linalg::identity(self.kernel.dim()));
        let z = self.kernel.partition_tau(s.re, &self.c, tau)?;
        let a = linalg::scale(&future, cr(1.0 / z));
        self.sandwich_block(n, np, &a, (-s * (n as f64) * 0.5).exp(), (-s * (np as f64) * 0.5).exp(), false)
    }

    /// Finite-K x-ensemble block; zero off the layer diagonal.
    pub fn x_block(&self, k: usize, x: f64, n: usize, np: usize) -> Result<Mat<c64>> {
        let rows = self.layer(n)?.grid.points.len();
        let cols = self.layer(np)?.grid.points.len();
        if n != np || n > k {
            return Ok(Mat::zeros(rows, cols));
        }
        let z = self.kernel.partition_k(x, &self.c, k)?;
        if n == k {
            let la = self.layer(n)?;
            let ends: Vec<f64> = la.grid.points.iter().map(|p| p.times.last().copied().unwrap_or(0.0)).collect();
            let base = self.sandwich_block(n, n, &linalg::identity(self.kernel.dim()), cr(1.0), cr(1.0), true)?;
            return Ok(Mat::from_fn(rows, cols, |i, j| {
                base[(i, j)] * cr((-0.5 * x * (ends[i] + ends[j])).exp() / z)
            }));
        }
        let t = self.kernel.t(x, &self.c)?;
        let mut future = linalg::identity(self.kernel.dim());
        for _ in 0..k - n {
            future = t.apply(&future);
        }
        let a = linalg::scale(&future, cr((-x * self.tau0).exp() / z));
        self.sandwich_block(n, n, &a, cr(1.0), cr(1.0), false)
    }

    pub fn finite_block(&self, scheme: &ReducedScheme, n: usize, np: usize) -> Result<LayerBlock> {
        let block = match *scheme {
            ReducedScheme::SEnsemble { tau, s } => self.s_block(tau, cr(s), n, np)?,
            ReducedScheme::XEnsemble { k, x } => self.x_block(k, x, n, np)?,
        };
        Ok(LayerBlock { n, n_prime: np, block })
    }

    /// Blocks of `ρ^∞_{s,c} = e^{-τ0 θ} S^dagger E S / tr[ρE]`.
    pub fn s_limit(&self, s: f64) -> Result<LimitState> {
        let rep = thermo::potential(&self.kernel, &TiltPoint::s(s, &self.c), Positivity::Waived)?;
        let e = &rep.right_eig;
        let norm = linalg::trace_product(&self.kernel.model.initial_density(), e);
        let a = linalg::scale(e, c64::new((-self.tau0 * rep.potential).exp(), 0.0) / norm);
        let mut blocks = Vec::new();
        for n in 0..=self.n_max() {
            let mut row = Vec::new();
            for np in 0..=self.n_max() {
                let f = cr((-0.5 * s * n as f64).exp());
                let fp = cr((-0.5 * s * np as f64).exp());
                row.push(self.sandwich_block(n, np, &a, f, fp, false)?);
            }
            blocks.push(row);
        }
        Ok(LimitState {
            field: s,
            theta: rep.potential,
            tau0: self.tau0,
            c: self.c.clone(),
            block_diagonal: false,
            blocks,
        })
    }

    /// Layer-diagonal x-ensemble limit `e^{-xτ0 - N g} S^dagger F S / tr[ρF]`.
    pub fn x_limit(&self, x: f64) -> Result<LimitState> {
        let rep = thermo::potential(&self.kernel, &TiltPoint::x(x, &self.c), Positivity::Waived)?;
        let f = &rep.right_eig;
        let norm = linalg::trace_product(&self.kernel.model.initial_density(), f);
        let mut blocks = Vec::new();
        for n in 0..=self.n_max() {
            let mut row = Vec::new();
            for np in 0..=self.n_max() {
                if n == np {
                    let pref = (-x * self.tau0 - n as f64 * rep.potential).exp();
                    let a = linalg::scale(f, cr(pref) / norm);
                    row.push(self.sandwich_block(n, n, &a, cr(1.0), cr(1.0), false)?);
                } else {
                    let r = self.layer(n)?.grid.points.len();
                    let cc = self.layer(np)?.grid.points.len();
                    row.push(Mat::zeros(r, cc));
                }
            }
            blocks.push(row);
        }
        Ok(LimitState {
            field: x,
            theta: x,
            tau0: self.tau0,
            c: self.c.clone(),
            block_diagonal: true,
            blocks,
        })
    }

    /// All blocks with `N, N' <= N_max` assembled into one matrix.
    pub fn assemble(&self, mut block: impl FnMut(usize, usize) -> Result<Mat<c64>>) -> Result<Mat<c64>> {
        let sizes: Vec<usize> = self.layers.iter().map(|l| l.grid.points.len()).collect();
        let offsets: Vec<usize> = sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let mut out = Mat::<c64>::zeros(total, total);
        for n in 0..sizes.len() {
            for np in 0..sizes.len() {
                let b = block(n, np)?;
                for i in 0..sizes[n] {
                    for j in 0..sizes[np] {
                        out[(offsets[n] + i, offsets[np] + j)] = b[(i, j)];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn layer_trace(block: &Mat<c64>) -> f64 {
        linalg::trace(block).re
    }
}

#[derive(Clone, Debug)]
pub struct LimitState {
    /// `s` for the s-ensemble limit, `x` for the x-ensemble limit.
    pub field: f64,
    /// `θ(s,c)` for the s-ensemble limit.
    pub theta: f64,
    pub tau0: f64,
    pub c: Vec<f64>,
    pub block_diagonal: bool,
    pub blocks: Vec<Vec<Mat<c64>>>,
}

impl LimitState {
    pub fn block(&self, n: usize, np: usize) -> &Mat<c64> {
        &self.blocks[n][np]
    }
}

pub fn reduced_block_finite(
    model: &LindbladModel,
    scheme: &ReducedScheme,
    c: &[f64],
    tau0: f64,
    n: usize,
    np: usize,
    spec: GridSpec,
) -> Result<LayerBlock> {
    let spec = GridSpec {
        n_max: spec.n_max.max(n).max(np),
        ..spec
    };
    OutputContext::new(model, tau0, c, spec)?.finite_block(scheme, n, np)
}

pub fn limit_state(model: &LindbladModel, s: f64, c: &[f64], tau0: f64, spec: GridSpec) -> Result<LimitState> {
    OutputContext::new(model, tau0, c, spec)?.s_limit(s)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub parameters: Vec<f64>,
    pub distances: Vec<f64>,
    pub layer_traces: Vec<Vec<f64>>,
    pub decreasing: bool,
}

fn decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

/// Discretized trace distance between finite-τ s-ensemble states and the limit.
pub fn s_convergence(ctx: &OutputContext, s: f64, taus: &[f64]) -> Result<ConvergenceReport> {
    let lim = ctx.s_limit(s)?;
    let target = ctx.assemble(|n, np| Ok(lim.block(n, np).clone()))?;
    let mut distances = Vec::new();
    let mut layer_traces = Vec::new();
    for &tau in taus {
        let m = ctx.assemble(|n, np| ctx.s_block(tau, cr(s), n, np))?;
        distances.push(linalg::trace_distance(&m, &target)?);
        layer_traces.push(
            (0..=ctx.n_max())
                .map(|n| ctx.s_block(tau, cr(s), n, n).map(|b| OutputContext::layer_trace(&b)))
                .collect::<Result<_>>()?,
        );
    }
    Ok(ConvergenceReport {
        parameters: taus.to_vec(),
        decreasing: decreasing(&distances),
        distances,
        layer_traces,
    })
}

/// Same against the layer-diagonal x-ensemble limit, over `K`.
pub fn x_convergence(ctx: &OutputContext, x: f64, ks: &[usize]) -> Result<ConvergenceReport> {
    let lim = ctx.x_limit(x)?;
    let target = ctx.assemble(|n, np| Ok(lim.block(n, np).clone()))?;
    let mut distances = Vec::new();
    let mut layer_traces = Vec::new();
    for &k in ks {
        let m = ctx.assemble(|n, np| ctx.x_block(k, x, n, np))?;
        distances.push(linalg::trace_distance(&m, &target)?);
        layer_traces.push(
            (0..=ctx.n_max())
                .map(|n| ctx.x_block(k, x, n, n).map(|b| OutputContext::layer_trace(&b)))
                .collect::<Result<_>>()?,
        );
    }
    Ok(ConvergenceReport {
        parameters: ks.iter().map(|&k| k as f64).collect(),
        decreasing: decreasing(&distances),
        distances,
        layer_traces,
    })
}

/// Largest deviation between diagonal blocks of the s- and x-ensemble limits
/// at the dual pair `x = θ(s,c)`.
pub fn limit_diagonal_mismatch(ctx: &OutputContext, s: f64) -> Result<f64> {
    let sl = ctx.s_limit(s)?;
    let xl = ctx.x_limit(sl.theta)?;
    let mut worst = 0.0f64;
    for n in 0..=ctx.n_max() {
        worst = worst.max(linalg::max_abs(&(sl.block(n, n) - xl.block(n, n))));
    }
    Ok(worst)
}

/// `e^{-xT/2 - c.M/2} J[X] ψ` for a possibly complex `x`.
pub fn trajectory_amplitude(model: &LindbladModel, prop: &NoJumpPropagator, x: c64, c: &[f64], traj: &Trajectory) -> Result<Ket> {
    let weights = model.weights(c)?;
    let mut psi = model.initial_state().clone();
    let mut prev = 0.0;
    let mut scale = (-x * traj.last_time() * 0.5).exp();
    for &(t, ch) in &traj.jumps {
        psi = &model.jumps()[ch].operator() * &prop.evolve(&psi, t - prev);
        scale *= weights[ch].sqrt();
        prev = t;
    }
    Ok(Col::from_fn(psi.nrows(), |i| scale * psi[i]))
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseContext {
    pub tau0: f64,
    pub tau: f64,
    pub s: f64,
    pub k: usize,
    pub x: f64,
    pub c: Vec<f64>,
    pub pairs: usize,
    pub seed: u64,
    pub spec: GridSpec,
}

impl PhaseContext {
    pub fn new(tau0: f64, tau: f64, s: f64, k: usize, x: f64) -> Self {
        PhaseContext {
            tau0,
            tau,
            s,
            k,
            x,
            c: Vec::new(),
            pairs: 100,
            seed: 0,
            spec: GridSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseCheckReport {
    pub kind: String,
    pub phi: f64,
    /// Largest `|B' - e^{iφ(N-N')} B|` over s-ensemble blocks (P1) or
    /// `|B' - B|` (P2), finite τ and limit.
    pub s_deviation: f64,
    /// Largest `|B' - B|` over x-ensemble layer blocks, finite K and limit.
    pub x_deviation: f64,
    /// Trajectory-pair elements: deviation from the predicted phase law.
    pub pair_deviation: f64,
    /// Transformed outputs against the untransformed ones at the shifted
    /// complex tilt (`s - 2iφ` for P1, `x + 2iφ` for P2).
    pub reinterpretation_error: f64,
    pub pairs_checked: usize,
    /// Largest observed `|e^{iφ(N-N')} - 1|` on s blocks, nonzero when the
    /// transform is visible.
    pub s_phase_visible: f64,
}

impl PhaseCheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.s_deviation < tol && self.x_deviation < tol && self.pair_deviation < tol && self.reinterpretation_error < tol
    }
}

fn rel_dev(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    let scale = linalg::max_abs(b).max(1e-300);
    linalg::max_abs(&(a - b)) / scale.max(1.0)
}

/// Apply a P1 or P2 transform and compare every output against the law
/// `e^{iφ(K[X]-K[X'])}` (P1, s-ensemble) or `e^{-iφ(T[X]-T[X'])}` (P2,
/// x-ensemble), with the other ensemble left invariant.
pub fn phase_covariance_check(model: &LindbladModel, kind: PhaseKind, phi: f64, ctx: &PhaseContext) -> Result<PhaseCheckReport> {
    let moved = model.apply_phase_transform(kind, phi);
    let a = OutputContext::new(model, ctx.tau0, &ctx.c, ctx.spec)?;
    let b = OutputContext::new(&moved, ctx.tau0, &ctx.c, ctx.spec)?;
    let nm = ctx.spec.n_max;

    let mut s_dev = 0.0f64;
    let mut s_visible = 0.0f64;
    let mut reinterp = 0.0f64;
    let sl_a = a.s_limit(ctx.s)?;
    let sl_b = b.s_limit(ctx.s)?;
    for n in 0..=nm {
        for np in 0..=nm {
            let fa = a.s_block(ctx.tau, cr(ctx.s), n, np)?;
            let fb = b.s_block(ctx.tau, cr(ctx.s), n, np)?;
            let law = match kind {
                PhaseKind::P1 => c64::new(0.0, phi * (n as f64 - np as f64)).exp(),
                PhaseKind::P2 => cr(1.0),
            };
            s_visible = s_visible.max((law - cr(1.0)).norm());
            s_dev = s_dev.max(rel_dev(&fb, &linalg::scale(&fa, law)));
            s_dev = s_dev.max(rel_dev(sl_b.block(n, np), &linalg::scale(sl_a.block(n, np), law)));
            if kind == PhaseKind::P1 {
                let shifted = a.s_block(ctx.tau, c64::new(ctx.s, -2.0 * phi), n, np)?;
                reinterp = reinterp.max(rel_dev(&fb, &shifted));
            }
        }
    }

    let mut x_dev = 0.0f64;
    let xl_a = a.x_limit(ctx.x)?;
    let xl_b = b.x_limit(ctx.x)?;
    for n in 0..=nm {
        for np in 0..=nm {
            x_dev = x_dev.max(rel_dev(&b.x_block(ctx.k, ctx.x, n, np)?, &a.x_block(ctx.k, ctx.x, n, np)?));
            x_dev = x_dev.max(rel_dev(xl_b.block(n, np), xl_a.block(n, np)));
        }
    }

    let prop_a = NoJumpPropagator::new(model)?;
    let prop_b = NoJumpPropagator::new(&moved)?;
    let batch = trajectories::sample_fixed_count(model, ctx.k, 2 * ctx.pairs, ctx.seed)?;
    let mut pair_dev = 0.0f64;
    for pair in batch.trajectories.chunks(2).take(ctx.pairs) {
        let (x1, x2) = (&pair[0], &pair[1]);
        let elem = |m: &LindbladModel, p: &NoJumpPropagator, xt: c64| -> Result<c64> {
            let u = trajectory_amplitude(m, p, xt, &ctx.c, x1)?;
            let v = trajectory_amplitude(m, p, xt, &ctx.c, x2)?;
            Ok(linalg::inner(&v, &u))
        };
        let before = elem(model, &prop_a, cr(ctx.x))?;
        let after = elem(&moved, &prop_b, cr(ctx.x))?;
        let law = match kind {
            PhaseKind::P1 => cr(1.0),
            PhaseKind::P2 => c64::new(0.0, -phi * (x1.last_time() - x2.last_time())).exp(),
        };
        let scale = before.norm().max(1e-300);
        pair_dev = pair_dev.max((after - law * before).norm() / scale);
        if kind == PhaseKind::P2 {
            let shifted = elem(model, &prop_a, c64::new(ctx.x, 2.0 * phi))?;
            reinterp = reinterp.max((after - shifted).norm() / scale);
        }
    }

    Ok(PhaseCheckReport {
        kind: format!("{kind:?}"),
        phi,
        s_deviation: s_dev,
        x_deviation: x_dev,
        pair_deviation: pair_dev,
        reinterpretation_error: reinterp,
        pairs_checked: ctx.pairs.min(batch.trajectories.len() / 2),
        s_phase_visible: s_visible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counting;
    use crate::model::{driven_dephased_qubit, random_model, three_level_renewal, two_level_decay};

    #[test]
    fn gram_of_renewal_has_rank_three() {
        let g = gram_matrix(&three_level_renewal(1.0, 0.2, 1.0)).unwrap();
        assert_eq!(g.rank, 3);
        assert!(g.eigenvalues[0] > -1e-10);
        assert!(matches!(gram_matrix(&two_level_decay(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn gram_matches_time_quadrature() {
        let m = random_model(2, 2, 0, 5);
        let g = gram_matrix(&m).unwrap();
        assert!(g.eigenvalues[0] > -1e-10);
        let prop = NoJumpPropagator::new(&m).unwrap();
        let d = 2;
        let (m0, m1, n0, n1) = (1, 0, 0, 1);
        let mut acc = c64::new(0.0, 0.0);
        let mut a = 0.0;
        while a < 80.0 {
            let (ts, ws) = linalg::gauss_legendre_on(20, a, a + 1.0);
            for (t, w) in ts.iter().zip(&ws) {
                for j in m.jumps() {
                    let l = j.operator();
                    let u = &l * &prop.evolve(&linalg::basis_ket(d, m1), *t);
                    let v = &l * &prop.evolve(&linalg::basis_ket(d, n1), *t);
                    acc += cr(*w) * u[m0].conj() * v[n0];
                }
            }
            a += 1.0;
        }
        assert!((g.entries[(m0 + d * m1, n0 + d * n1)] - acc).norm() < 1e-7);
    }

    #[test]
    fn overlaps() {
        let k = Kernel::new(&three_level_renewal(1.0, 0.2, 1.0)).unwrap();
        assert!((canonical_overlap(&k, 5, (0.3, &[]), (0.3, &[])).unwrap() - 1.0).abs() < 1e-12);
        assert!((canonical_overlap(&k, 0, (0.1, &[]), (0.7, &[])).unwrap() - 1.0).abs() < 1e-12);
        let g = |x: f64| thermo::potential_value(&k, &TiltPoint::x(x, &[])).unwrap();
        let want = (6.0 * g(0.3) - 3.0 * g(0.2) - 3.0 * g(0.4)).exp();
        assert!((canonical_overlap(&k, 6, (0.2, &[]), (0.4, &[])).unwrap() - want).abs() < 1e-9);
        assert!((mps_expectation(&k, 4, &linalg::identity(3)).unwrap().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn observable_consistency() {
        let m = driven_dephased_qubit(1.0, 1.0, 0.3);
        let k = Kernel::new(&m).unwrap();
        let a = Mat::from_fn(2, 2, |i, j| c64::new((i + 2 * j) as f64, i as f64 - j as f64));
        let heis = mps_expectation(&k, 3, &a).unwrap();
        let t_star = k.t(0.0, &[]).unwrap().adjoint();
        let mut rho = m.initial_density();
        for _ in 0..3 {
            rho = t_star.apply(&rho);
        }
        assert!((heis - linalg::trace_product(&rho, &a)).norm() < 1e-10);
    }

    #[test]
    fn grid_cap() {
        let spec = GridSpec::default();
        assert!(layer_grid(1, 1.0, 3, &spec).is_ok());
        assert!(matches!(layer_grid(1, 1.0, 4, &spec), Err(Error::QuadratureOverflow { .. })));
        let g = layer_grid(2, 1.0, 1, &spec).unwrap();
        let total: f64 = g.points.iter().map(|p| p.weight).sum();
        assert!((total - 2.0).abs() < 1e-12);
    }

    #[test]
    fn untilted_layers_match_counting() {
        let m = three_level_renewal(1.0, 0.2, 1.0);
        let ctx = OutputContext::new(&m, 1.0, &[], GridSpec::default()).unwrap();
        let probs = counting::count_distribution(&ctx.kernel, 1.0, 2, &[]).unwrap();
        for n in 0..=2 {
            let t5 = OutputContext::layer_trace(&ctx.s_block(5.0, cr(0.0), n, n).unwrap());
            let t9 = OutputContext::layer_trace(&ctx.s_block(9.0, cr(0.0), n, n).unwrap());
            assert!((t5 - t9).abs() < 1e-10);
            assert!((t5 - probs[n]).abs() < 1e-6, "{t5} vs {}", probs[n]);
        }
        let lim = ctx.s_limit(0.0).unwrap();
        for n in 0..=2 {
            assert!((OutputContext::layer_trace(lim.block(n, n)) - probs[n]).abs() < 1e-6);
        }
    }

    #[test]
    fn biased_layers_depend_on_tau() {
        let m = three_level_renewal(1.0, 0.2, 1.0);
        let ctx = OutputContext::new(&m, 1.0, &[], GridSpec::default()).unwrap();
        let a = OutputContext::layer_trace(&ctx.s_block(10.0, cr(0.5), 1, 1).unwrap());
        let b = OutputContext::layer_trace(&ctx.s_block(20.0, cr(0.5), 1, 1).unwrap());
        assert!((a - b).abs() > 1e-6);
    }

    #[test]
    fn blocks_are_hermitian_and_x_is_block_diagonal() {
        let m = driven_dephased_qubit(1.0, 1.0, 0.3);
        let ctx = OutputContext::new(&m, 1.0, &[0.2], GridSpec { nodes: 6, ..GridSpec::default() }).unwrap();
        let full = ctx.assemble(|n, np| ctx.s_block(4.0, cr(0.3), n, np)).unwrap();
        assert!(linalg::hermiticity_error(&full) < 1e-10);
        let off = ctx.x_block(5, 0.4, 1, 0).unwrap();
        assert!(off.nrows() > 0 && linalg::max_abs(&off) == 0.0);
        let lim = ctx.s_limit(0.3).unwrap();
        for n in 0..=2 {
            assert!(linalg::min_hermitian_eigenvalue(lim.block(n, n)).unwrap() > -1e-8);
            let ev = linalg::hermitian_eigenvalues(lim.block(n, n)).unwrap();
            let top = ev.last().unwrap().abs();
            assert!(ev.iter().filter(|v| v.abs() > 1e-10 * top).count() <= 2);
        }
    }

    #[test]
    fn convergence_and_dual_limits() {
        let m = three_level_renewal(1.0, 0.2, 1.0);
        let ctx = OutputContext::new(&m, 1.0, &[], GridSpec::default()).unwrap();
        let r = s_convergence(&ctx, 0.3, &[3.0, 6.0, 11.0]).unwrap();
        assert!(r.decreasing, "{:?}", r.distances);
        assert!(limit_diagonal_mismatch(&ctx, 0.3).unwrap() < 1e-8);
        let q = driven_dephased_qubit(1.0, 1.0, 0.3);
        let qc = OutputContext::new(&q, 1.0, &[], GridSpec::default()).unwrap();
        let x = thermo::potential_value(&qc.kernel, &TiltPoint::s(0.3, &[])).unwrap();
        let r = x_convergence(&qc, x, &[4, 8, 16]).unwrap();
        assert!(r.decreasing, "{:?}", r.distances);
    }

    #[test]
    fn phase_checks() {
        let m = three_level_renewal(1.0, 0.2, 1.0);
        let mut ctx = PhaseContext::new(1.0, 5.0, 0.3, 4, 0.3);
        ctx.spec.nodes = 8;
        ctx.pairs = 20;
        let p1 = phase_covariance_check(&m, PhaseKind::P1, std::f64::consts::FRAC_PI_2, &ctx).unwrap();
        assert!(p1.passed(1e-10), "{p1:?}");
        assert!(p1.s_phase_visible > 0.5);
        let p2 = phase_covariance_check(&m, PhaseKind::P2, 0.7, &ctx).unwrap();
        assert!(p2.passed(1e-10), "{p2:?}");
        let zero = phase_covariance_check(&m, PhaseKind::P1, 0.0, &ctx).unwrap();
        assert!(zero.passed(1e-12));
    }
}
