use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};
use trajstat_core::counting;
use trajstat_core::error::{Error, Result};
use trajstat_core::generators::{connection_residual, Kernel, TiltPoint};
use trajstat_core::linalg;
use trajstat_core::model::{three_level_renewal, LindbladModel, PhaseKind, Tolerances};
use trajstat_core::output_states::{
    limit_diagonal_mismatch, phase_covariance_check, s_convergence, x_convergence, GridSpec, OutputContext,
    PhaseContext,
};
use trajstat_core::renewal::{self, detect_renewal};
use trajstat_core::superop::Positivity;
use trajstat_core::thermo;
use trajstat_core::trajectories::{self, InitialEnsemble, Scheme};

use crate::args::*;
use crate::output::{self, Meta};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Validate(a) => validate(cli, a),
        Command::Potentials(a) => potentials(cli, a),
        Command::Duality(a) => duality(cli, a),
        Command::Counting(a) => counting_cmd(cli, a),
        Command::Concentration(a) => concentration(cli, a),
        Command::Sample(a) => sample(cli, a),
        Command::Reduced(a) => reduced(cli, a),
        Command::PhaseCheck(a) => phase_check(cli, a),
        Command::RenewalDemo(a) => renewal_demo(cli, a),
        Command::EquivalenceReport(a) => equivalence_report(cli, a),
    }
}

fn tolerances(cli: &Cli) -> Tolerances {
    Tolerances {
        hermiticity: cli.hermiticity_tol,
        normalization: cli.normalization_tol,
    }
}

fn load(cli: &Cli, path: &Path) -> Result<LindbladModel> {
    LindbladModel::load(path, &tolerances(cli))
}

/// Renewal models have non-primitive transfer maps and need the waiver.
fn positivity(model: &LindbladModel) -> Result<Positivity> {
    Ok(match detect_renewal(model)? {
        Ok(_) => Positivity::Waived,
        Err(_) => Positivity::Required,
    })
}

fn field(c: &str, model: &LindbladModel) -> Result<Vec<f64>> {
    let c = parse_list::<f64>(c)?;
    if c.is_empty() {
        return Ok(vec![0.0; model.spin_dim()]);
    }
    model.weights(&c)?;
    Ok(c)
}

fn validate(cli: &Cli, a: &ValidateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.model)?;
    let meta = Meta::new(cli, None);
    let (report, outcome) = match LindbladModel::from_json_str(&text, &tolerances(cli)) {
        Ok(m) => {
            let heff = m.effective_hamiltonian()?;
            let renewal = detect_renewal(&m)?;
            let report = json!({
                "valid": true,
                "name": m.name,
                "dim": m.dim(),
                "num_jumps": m.num_jumps(),
                "spin_dim": m.spin_dim(),
                "model_hash": m.hash(),
                "hamiltonian_hermiticity_error": linalg::hermiticity_error(m.hamiltonian()),
                "initial_state_norm": m.initial_state().norm_l2(),
                "h_eff_eigenvalues": heff.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
                "x_min": heff.x_min,
                "renewal": renewal.is_ok(),
            });
            (report, Ok(()))
        }
        Err(e) => (json!({ "valid": false, "error": e.to_string() }), Err(e)),
    };
    let doc = json!({ "meta": meta, "payload": report });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?);
    if let Some(out) = &a.out {
        output::write_json(out, &meta, &report)?;
    }
    outcome
}

fn potentials(cli: &Cli, a: &PotentialsArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let kernel = Kernel::new(&model)?;
    let c = field(&a.c, &model)?;
    let pos = positivity(&model)?;
    let grid = parse_grid(&a.grid)?;
    let rows: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&f| {
            let tilt = match a.kind {
                Kind::X => TiltPoint::x(f, &c),
                Kind::S => TiltPoint::s(f, &c),
            };
            let rep = thermo::potential(&kernel, &tilt, pos)?;
            let intensive = match a.kind {
                Kind::X => rep.intensive.t,
                Kind::S => rep.intensive.k,
            };
            let mut row = vec![f];
            row.extend(&c);
            row.extend([rep.potential, rep.gap, intensive.unwrap_or(f64::NAN)]);
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let mut header = vec!["field".to_string()];
    header.extend((1..=c.len()).map(|i| format!("c{i}")));
    header.extend(
        ["log_partition_rate", "gap", if a.kind == Kind::X { "t" } else { "k" }]
            .iter()
            .map(|s| s.to_string()),
    );
    output::write_csv(&a.out, &Meta::new(cli, Some(model.hash())), &header, &rows)
}

#[derive(Clone, Debug, serde::Serialize)]
struct DualityRow {
    s: f64,
    x: f64,
    g_x: f64,
    round_trip_error: f64,
    k: f64,
    t: f64,
    t_times_k: f64,
    eig_angle: f64,
    connection_residual: f64,
    schrodinger_residual: f64,
}

impl DualityRow {
    const HEADER: [&'static str; 10] = [
        "s",
        "x",
        "g_x",
        "round_trip_error",
        "k",
        "t",
        "t_times_k",
        "eig_angle",
        "connection_residual",
        "schrodinger_residual",
    ];

    fn values(&self) -> Vec<f64> {
        vec![
            self.s,
            self.x,
            self.g_x,
            self.round_trip_error,
            self.k,
            self.t,
            self.t_times_k,
            self.eig_angle,
            self.connection_residual,
            self.schrodinger_residual,
        ]
    }
}

fn duality_row(kernel: &Kernel, s: f64, c: &[f64], pos: Positivity) -> Result<DualityRow> {
    let sr = thermo::potential(kernel, &TiltPoint::s(s, c), pos)?;
    let x = thermo::dual_map(kernel, &TiltPoint::s(s, c))?.field;
    let xr = thermo::potential(kernel, &TiltPoint::x(x, c), pos)?;
    let k = sr.intensive.k.unwrap_or(f64::NAN);
    let t = xr.intensive.t.unwrap_or(f64::NAN);
    Ok(DualityRow {
        s,
        x,
        g_x: xr.potential,
        round_trip_error: (xr.potential - s).abs(),
        k,
        t,
        t_times_k: t * k,
        eig_angle: linalg::principal_angle_sine(&xr.right_eig, &sr.right_eig),
        connection_residual: connection_residual(kernel, x, s, c)?,
        schrodinger_residual: thermo::schrodinger_eigvec_relation_residual(kernel, s, c, pos)?,
    })
}

fn duality(cli: &Cli, a: &DualityArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let kernel = Kernel::new(&model)?;
    let c = field(&a.c, &model)?;
    let pos = positivity(&model)?;
    let rows: Vec<Vec<f64>> = parse_grid(&a.s_grid)?
        .par_iter()
        .map(|&s| duality_row(&kernel, s, &c, pos).map(|r| r.values()))
        .collect::<Result<_>>()?;
    let header: Vec<String> = DualityRow::HEADER.iter().map(|s| s.to_string()).collect();
    output::write_csv(&a.out, &Meta::new(cli, Some(model.hash())), &header, &rows)
}

fn count_rows(kernel: &Kernel, tau: f64, kmax: &str, c: &[f64]) -> Result<(Vec<Vec<f64>>, f64)> {
    let explicit = match kmax {
        "auto" => None,
        v => Some(v.parse::<usize>().map_err(|_| Error::Parse(format!("--kmax `{v}`")))?),
    };
    let state = counting::count_resolved_propagate(kernel, tau, explicit, c)?;
    let rows = state
        .probabilities()
        .iter()
        .enumerate()
        .map(|(k, p)| vec![k as f64, *p])
        .collect();
    Ok((rows, state.tail_mass))
}

fn counting_cmd(cli: &Cli, a: &CountingArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let kernel = Kernel::new(&model)?;
    let c = field(&a.c, &model)?;
    let (rows, tail) = count_rows(&kernel, a.tau, &a.kmax, &c)?;
    output::diagnostic("info", "counting", json!({ "tau": a.tau, "k_max": rows.len() - 1, "tail_mass": tail }));
    let header = vec!["K".to_string(), "P_tau_K".to_string()];
    output::write_csv(&a.out, &Meta::new(cli, Some(model.hash())), &header, &rows)
}

fn concentration_payload(kernel: &Kernel, s: f64, c: &[f64], ks: &[usize]) -> Result<Value> {
    let rep = counting::concentration_report(kernel, s, c, ks)?;
    let per_k: Vec<f64> = rep
        .log_ratio
        .iter()
        .zip(&rep.k_list)
        .map(|(r, k)| r.abs() / *k as f64)
        .collect();
    let decreasing = per_k.windows(2).all(|w| w[1] < w[0]);
    Ok(json!({ "report": rep, "abs_log_ratio_per_k": per_k, "strictly_decreasing": decreasing }))
}

fn concentration(cli: &Cli, a: &ConcentrationArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let kernel = Kernel::new(&model)?;
    let c = field(&a.c, &model)?;
    let ks = parse_list::<usize>(&a.k)?;
    let payload = concentration_payload(&kernel, a.s, &c, &ks)?;
    output::write_json(&a.out, &Meta::new(cli, Some(model.hash())), &payload)
}

fn sample(cli: &Cli, a: &SampleArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let scheme = match (a.scheme, a.k, a.tau) {
        (SchemeArg::FixedCount, Some(k), _) => Scheme::FixedCount { k },
        (SchemeArg::FixedTime, _, Some(tau)) => Scheme::FixedTime { tau },
        (SchemeArg::FixedCount, None, _) => return Err(Error::Validation("fixed-count needs --K".into())),
        (SchemeArg::FixedTime, _, None) => return Err(Error::Validation("fixed-time needs --tau".into())),
    };
    let start = match a.start {
        StartArg::Psi => InitialEnsemble::pure(model.initial_state()),
        StartArg::Stationary => InitialEnsemble::stationary(&Kernel::new(&model)?)?,
    };
    let batch = trajectories::sample_batch(&model, &start, scheme, a.n, a.seed)?;
    output::diagnostic(
        "info",
        "sample",
        json!({
            "n": a.n,
            "seed": batch.seed,
            "model_hash": batch.model_hash,
            "mean_count": batch.mean_count,
            "mean_last_time": batch.mean_last_time,
        }),
    );
    let lines = batch.trajectories.iter().map(|t| {
        json!({
            "jumps": t.jumps.iter().map(|(time, ch)| json!([time, ch + 1])).collect::<Vec<_>>(),
            "T": t.last_time(),
            "K": t.count(),
            "M": t.m,
        })
    });
    output::write_jsonl(&a.out, &Meta::new(cli, Some(model.hash())), lines)
}

fn block_norms(ctx: &OutputContext, mut block: impl FnMut(usize, usize) -> Result<faer::Mat<faer::c64>>) -> Result<Vec<Vec<f64>>> {
    (0..=ctx.n_max())
        .map(|n| (0..=ctx.n_max()).map(|np| Ok(block(n, np)?.norm_l2())).collect())
        .collect()
}

fn reduced(cli: &Cli, a: &ReducedArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let c = field(&a.c, &model)?;
    let spec = GridSpec {
        nodes: a.nodes,
        n_max: a.nmax,
        ..GridSpec::default()
    };
    let ctx = OutputContext::new(&model, a.tau0, &c, spec)?;
    let payload = match (&a.tau, &a.k) {
        (Some(taus), None) => {
            let taus = parse_list::<f64>(taus)?;
            let conv = s_convergence(&ctx, a.s, &taus)?;
            let norms: Vec<Vec<Vec<f64>>> = taus
                .iter()
                .map(|&tau| block_norms(&ctx, |n, np| ctx.s_block(tau, linalg::cr(a.s), n, np)))
                .collect::<Result<_>>()?;
            let lim = ctx.s_limit(a.s)?;
            json!({
                "ensemble": "s",
                "s": a.s,
                "theta": lim.theta,
                "tau0": a.tau0,
                "tau": conv.parameters,
                "layer_traces": conv.layer_traces,
                "block_norms": norms,
                "limit_layer_traces": (0..=a.nmax).map(|n| OutputContext::layer_trace(lim.block(n, n))).collect::<Vec<_>>(),
                "trace_distance_to_limit": conv.distances,
                "decreasing": conv.decreasing,
            })
        }
        (None, Some(ks)) => {
            let ks = parse_list::<usize>(ks)?;
            let x = thermo::dual_map(&ctx.kernel, &TiltPoint::s(a.s, &c))?.field;
            let conv = x_convergence(&ctx, x, &ks)?;
            let norms: Vec<Vec<Vec<f64>>> = ks
                .iter()
                .map(|&k| block_norms(&ctx, |n, np| ctx.x_block(k, x, n, np)))
                .collect::<Result<_>>()?;
            let lim = ctx.x_limit(x)?;
            json!({
                "ensemble": "x",
                "s": a.s,
                "x": x,
                "tau0": a.tau0,
                "K": ks,
                "layer_traces": conv.layer_traces,
                "block_norms": norms,
                "limit_layer_traces": (0..=a.nmax).map(|n| OutputContext::layer_trace(lim.block(n, n))).collect::<Vec<_>>(),
                "trace_distance_to_limit": conv.distances,
                "decreasing": conv.decreasing,
                "limit_diagonal_mismatch": limit_diagonal_mismatch(&ctx, a.s)?,
            })
        }
        _ => return Err(Error::Validation("pass exactly one of --tau or --K".into())),
    };
    output::write_json(&a.out, &Meta::new(cli, Some(model.hash())), &payload)
}

fn phase_check(cli: &Cli, a: &PhaseCheckArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let kind = match a.kind {
        PhaseArg::P1 => PhaseKind::P1,
        PhaseArg::P2 => PhaseKind::P2,
    };
    let mut ctx = PhaseContext::new(a.tau0, a.tau, a.s, a.k, a.x);
    ctx.c = vec![0.0; model.spin_dim()];
    ctx.pairs = a.pairs;
    ctx.seed = a.seed;
    ctx.spec.nodes = a.nodes;
    let report = phase_covariance_check(&model, kind, a.phi, &ctx)?;
    let payload = json!({ "context": ctx, "report": report, "passed_1e-10": report.passed(1e-10) });
    output::write_json(&a.out, &Meta::new(cli, Some(model.hash())), &payload)
}

/// Every equivalence diagnostic at one tilt `(s, c)`.
fn equivalence_bundle(model: &LindbladModel, s: f64, c: &[f64], tau0: f64, seed: u64, nodes: usize) -> Result<Value> {
    let kernel = Kernel::new(model)?;
    let pos = positivity(model)?;
    let row = duality_row(&kernel, s, c, pos)?;
    let concentration = concentration_payload(&kernel, s, c, &[4, 8, 16, 32])?;
    let spec = GridSpec {
        nodes,
        ..GridSpec::default()
    };
    let ctx = OutputContext::new(model, tau0, c, spec)?;
    let s_conv = s_convergence(&ctx, s, &[tau0 + 2.0, tau0 + 5.0, tau0 + 10.0])?;
    let x_conv = x_convergence(&ctx, row.x, &[4, 8, 16])?;
    let mismatch = limit_diagonal_mismatch(&ctx, s)?;
    let mut pctx = PhaseContext::new(tau0, tau0 + 4.0, s, 4, row.x);
    pctx.c = c.to_vec();
    pctx.seed = seed;
    pctx.spec = spec;
    let p1 = phase_covariance_check(model, PhaseKind::P1, std::f64::consts::FRAC_PI_2, &pctx)?;
    let p2 = phase_covariance_check(model, PhaseKind::P2, 0.7, &pctx)?;
    Ok(json!({
        "s": s,
        "c": c,
        "tau0": tau0,
        "x": row.x,
        "connection_residual": row.connection_residual,
        "duality_round_trip_error": row.round_trip_error,
        "t": row.t,
        "k": row.k,
        "t_times_k_minus_one": row.t_times_k - 1.0,
        "eigenvector_angle": row.eig_angle,
        "schrodinger_residual": row.schrodinger_residual,
        "concentration": concentration,
        "reduced_state": {
            "s_ensemble": s_conv,
            "x_ensemble": x_conv,
            "limit_diagonal_mismatch": mismatch,
        },
        "phase_check": {
            "P1": { "report": p1, "passed_1e-10": p1.passed(1e-10) },
            "P2": { "report": p2, "passed_1e-10": p2.passed(1e-10) },
        },
    }))
}

fn equivalence_report(cli: &Cli, a: &EquivalenceArgs) -> Result<()> {
    let model = load(cli, &a.model)?;
    let c = field(&a.c, &model)?;
    let payload = equivalence_bundle(&model, a.s, &c, a.tau0, a.seed, a.nodes)?;
    output::write_json(&a.out, &Meta::new(cli, Some(model.hash())), &payload)
}

fn renewal_demo(cli: &Cli, a: &RenewalDemoArgs) -> Result<()> {
    let mut model = three_level_renewal(a.omega1, a.omega2, a.kappa);
    model.name = Some("three_level_renewal".into());
    let x_min = model.effective_hamiltonian()?.x_min;
    if x_min >= -1e-10 {
        return Err(Error::Domain(format!(
            "H_eff is not strictly stable (x_min = {x_min}); the renewal potential needs every Im λ(H_eff) < 0"
        )));
    }
    let structure = detect_renewal(&model)?
        .map_err(|n| Error::Validation(format!("model is not a renewal process: {}", n.reason)))?;
    let kernel = Kernel::new(&model)?;
    let meta = Meta::new(cli, Some(model.hash()));
    let dir = &a.out;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("model.json"), model.to_json() + "\n")?;

    let xs: Vec<f64> = (1..=10).map(|i| 0.1 * i as f64).collect();
    let x_rows: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|&x| {
            let cmp = renewal::compare_with_eigensolver(&structure, x)?;
            let rep = thermo::potential(&kernel, &TiltPoint::x(x, &[]), Positivity::Waived)?;
            Ok(vec![
                x,
                rep.potential,
                cmp.analytic.ln(),
                (cmp.analytic - cmp.numerical).abs(),
                cmp.eigenvector_angle,
                rep.intensive.t.unwrap_or(f64::NAN),
            ])
        })
        .collect::<Result<_>>()?;
    let header: Vec<String> = ["x", "g_numerical", "g_analytic", "exp_g_abs_error", "eig_angle", "t"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    output::write_csv(&dir.join("potentials_x.csv"), &meta, &header, &x_rows)?;

    let s_grid = parse_grid("-0.5:0.5:21")?;
    let s_rows: Vec<Vec<f64>> = s_grid
        .par_iter()
        .map(|&s| {
            let rep = thermo::potential(&kernel, &TiltPoint::s(s, &[]), Positivity::Waived)?;
            Ok(vec![s, rep.potential, rep.gap, rep.intensive.k.unwrap_or(f64::NAN)])
        })
        .collect::<Result<_>>()?;
    let header: Vec<String> = ["s", "theta", "gap", "k"].iter().map(|s| s.to_string()).collect();
    output::write_csv(&dir.join("potentials_s.csv"), &meta, &header, &s_rows)?;

    let d_rows: Vec<Vec<f64>> = s_grid
        .par_iter()
        .map(|&s| duality_row(&kernel, s, &[], Positivity::Waived).map(|r| r.values()))
        .collect::<Result<_>>()?;
    let header: Vec<String> = DualityRow::HEADER.iter().map(|s| s.to_string()).collect();
    output::write_csv(&dir.join("duality.csv"), &meta, &header, &d_rows)?;

    for tau in [5.0, 20.0] {
        let (rows, _) = count_rows(&kernel, tau, "auto", &[])?;
        let header = vec!["K".to_string(), "P_tau_K".to_string()];
        output::write_csv(&dir.join(format!("counting_tau{tau}.csv")), &meta, &header, &rows)?;
    }

    let partition: Vec<Value> = (2..=20)
        .map(|k| {
            let ap = renewal::analytic_potential(&structure, 0.5, &[])?;
            let z = kernel.partition_k(0.5, &[], k)?;
            Ok(json!({ "K": k, "rel_error": (z / (k as f64 * ap.g).exp() - 1.0).abs() }))
        })
        .collect::<Result<_>>()?;
    let checks = renewal::renewal_product_checks(&structure, 10, 0.5, a.samples, a.seed)?;
    let schr_x = thermo::dual_map(&kernel, &TiltPoint::s(0.4, &[]))?.field;
    let schr = renewal::analytic_schrodinger_state(&structure, schr_x)?;
    let sr = thermo::potential(&kernel, &TiltPoint::s(0.4, &[]), Positivity::Waived)?;
    let renewal_payload = json!({
        "reset_state": (0..model.dim()).map(|i| [structure.reset_state[i].re, structure.reset_state[i].im]).collect::<Vec<_>>(),
        "d_residual": structure.d_residual(),
        "product_checks": checks,
        "partition_exactness_x0.5": partition,
        "analytic_schrodinger_state_distance_s0.4": linalg::trace_distance(&schr, &sr.left_eig_schr)?,
    });
    output::write_json(&dir.join("renewal_checks.json"), &meta, &renewal_payload)?;

    let concentration = concentration_payload(&kernel, 0.3, &[], &[4, 8, 16, 32])?;
    output::write_json(&dir.join("concentration.json"), &meta, &concentration)?;

    let classical = trajectories::classical_equivalence_check(&kernel, 0.2, &[10.0, 20.0, 40.0], a.samples, a.seed)?;
    output::write_json(&dir.join("classical_equivalence.json"), &meta, &classical)?;

    let bundle = equivalence_bundle(&model, 0.3, &[], 1.0, a.seed, 16)?;
    output::write_json(&dir.join("equivalence_report.json"), &meta, &bundle)
}
