//! Open-system model: Hamiltonian, jump operators with spin labels, and the
//! initial state. Loading, validation and the two phase transformations.

use std::path::Path;

use faer::{c64, Col, Mat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, cr, dagger, Ket, Operator};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub hermiticity: f64,
    pub normalization: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            hermiticity: 1e-12,
            normalization: 1e-12,
        }
    }
}

/// A jump operator `e^{i phase} op` with its spin label.
///
/// The phase is kept apart from `op` so that bilinear objects such as
/// `L^dagger L` and `L^dagger (.) L` do not see it at all.
#[derive(Clone, Debug)]
pub struct Jump {
    pub op: Operator,
    pub spin: Vec<f64>,
    pub phase: f64,
}

impl Jump {
    pub fn new(op: Operator, spin: Vec<f64>) -> Self {
        Jump { op, spin, phase: 0.0 }
    }

    /// The full operator including its phase.
    pub fn operator(&self) -> Operator {
        if self.phase == 0.0 {
            self.op.clone()
        } else {
            linalg::scale(&self.op, c64::cis(self.phase))
        }
    }
}

#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub name: Option<String>,
    dim: usize,
    hamiltonian: Operator,
    jumps: Vec<Jump>,
    initial_state: Ket,
}

#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub matrix: Operator,
    pub eigenvalues: Vec<c64>,
    pub x_min: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    P1,
    P2,
}

impl std::str::FromStr for PhaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P1" | "p1" => Ok(PhaseKind::P1),
            "P2" | "p2" => Ok(PhaseKind::P2),
            other => Err(Error::Parse(format!("unknown transform kind {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SplitMatrix {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SplitVector {
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JumpFile {
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
    #[serde(default)]
    spin: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dim: usize,
    hamiltonian: SplitMatrix,
    jumps: Vec<JumpFile>,
    initial_state: SplitVector,
}

fn matrix_from_split(re: &[Vec<f64>], im: &[Vec<f64>], d: usize, what: &str) -> Result<Operator> {
    let bad = |msg: String| Error::Validation(format!("{what}: {msg}"));
    if re.len() != d || im.len() != d {
        return Err(bad(format!("expected {d} rows")));
    }
    for (r, i) in re.iter().zip(im) {
        if r.len() != d || i.len() != d {
            return Err(bad(format!("expected {d} columns")));
        }
    }
    let m = Mat::from_fn(d, d, |i, j| c64::new(re[i][j], im[i][j]));
    if m.has_nan() || !m.is_all_finite() {
        return Err(bad("non-finite entry".into()));
    }
    Ok(m)
}

fn matrix_to_split(m: &Operator) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = m.nrows();
    let re = (0..d).map(|i| (0..d).map(|j| m[(i, j)].re).collect()).collect();
    let im = (0..d).map(|i| (0..d).map(|j| m[(i, j)].im).collect()).collect();
    (re, im)
}

impl LindbladModel {
    pub fn new(hamiltonian: Operator, jumps: Vec<Jump>, initial_state: Ket) -> Result<Self> {
        Self::with_tolerances(hamiltonian, jumps, initial_state, &Tolerances::default())
    }

    pub fn with_tolerances(
        hamiltonian: Operator,
        jumps: Vec<Jump>,
        initial_state: Ket,
        tol: &Tolerances,
    ) -> Result<Self> {
        let d = hamiltonian.nrows();
        if d == 0 || hamiltonian.ncols() != d {
            return Err(Error::Validation("hamiltonian must be square and non-empty".into()));
        }
        let herm = linalg::hermiticity_error(&hamiltonian);
        if herm > tol.hermiticity {
            return Err(Error::Validation(format!(
                "hamiltonian is not Hermitian (max |H - H^dagger| = {herm:.3e})"
            )));
        }
        if jumps.is_empty() {
            return Err(Error::Validation("at least one jump operator is required".into()));
        }
        let p = jumps[0].spin.len();
        for (k, j) in jumps.iter().enumerate() {
            if j.op.nrows() != d || j.op.ncols() != d {
                return Err(Error::Validation(format!("jump {} has wrong shape", k + 1)));
            }
            if j.spin.len() != p {
                return Err(Error::Validation(format!(
                    "jump {} spin label has length {}, expected {p}",
                    k + 1,
                    j.spin.len()
                )));
            }
            if j.spin.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("jump {} spin label is not finite", k + 1)));
            }
        }
        if initial_state.nrows() != d {
            return Err(Error::Validation(format!(
                "initial state has length {}, expected {d}",
                initial_state.nrows()
            )));
        }
        let norm = initial_state.norm_l2();
        if (norm - 1.0).abs() > tol.normalization {
            return Err(Error::Validation(format!(
                "initial state is not normalized (norm = {norm:.15})"
            )));
        }
        Ok(LindbladModel {
            name: None,
            dim: d,
            hamiltonian,
            jumps,
            initial_state,
        })
    }

    pub fn from_json_str(text: &str, tol: &Tolerances) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let d = file.dim;
        if d == 0 {
            return Err(Error::Validation("dim must be positive".into()));
        }
        let h = matrix_from_split(&file.hamiltonian.re, &file.hamiltonian.im, d, "hamiltonian")?;
        let jumps = file
            .jumps
            .iter()
            .enumerate()
            .map(|(k, j)| {
                Ok(Jump::new(
                    matrix_from_split(&j.re, &j.im, d, &format!("jump {}", k + 1))?,
                    j.spin.clone(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let s = &file.initial_state;
        if s.re.len() != d || s.im.len() != d {
            return Err(Error::Validation(format!("initial state must have length {d}")));
        }
        let psi = Col::from_fn(d, |i| c64::new(s.re[i], s.im[i]));
        let mut model = Self::with_tolerances(h, jumps, psi, tol)?;
        model.name = file.name;
        Ok(model)
    }

    pub fn load(path: &Path, tol: &Tolerances) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text, tol)
    }

    pub fn to_json(&self) -> String {
        let (hre, him) = matrix_to_split(&self.hamiltonian);
        let file = ModelFile {
            name: self.name.clone(),
            dim: self.dim,
            hamiltonian: SplitMatrix { re: hre, im: him },
            jumps: self
                .jumps
                .iter()
                .map(|j| {
                    let (re, im) = matrix_to_split(&j.operator());
                    JumpFile {
                        re,
                        im,
                        spin: j.spin.clone(),
                    }
                })
                .collect(),
            initial_state: SplitVector {
                re: self.initial_state.iter().map(|z| z.re).collect(),
                im: self.initial_state.iter().map(|z| z.im).collect(),
            },
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    /// SHA-256 of the canonical serialization (the name is excluded).
    pub fn hash(&self) -> String {
        let mut unnamed = self.clone();
        unnamed.name = None;
        let digest = Sha256::digest(unnamed.to_json().as_bytes());
        hex::encode(digest)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.hamiltonian
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn num_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn initial_state(&self) -> &Ket {
        &self.initial_state
    }

    pub fn initial_density(&self) -> Operator {
        linalg::ket_bra(&self.initial_state, &self.initial_state)
    }

    /// Length `p` of the spin labels.
    pub fn spin_dim(&self) -> usize {
        self.jumps[0].spin.len()
    }

    pub fn with_initial_state(&self, psi: Ket) -> Result<Self> {
        let mut m = Self::new(self.hamiltonian.clone(), self.jumps.clone(), psi)?;
        m.name = self.name.clone();
        Ok(m)
    }

    /// `D = sum_i L_i^dagger L_i`
    pub fn dissipator(&self) -> Operator {
        let d = self.dim;
        let mut acc = Mat::<c64>::zeros(d, d);
        for j in &self.jumps {
            acc += dagger(&j.op) * &j.op;
        }
        acc
    }

    pub fn h_eff(&self) -> Operator {
        let d = self.dissipator();
        &self.hamiltonian - linalg::scale(&d, c64::new(0.0, 0.5))
    }

    pub fn effective_hamiltonian(&self) -> Result<EffectiveHamiltonian> {
        let matrix = self.h_eff();
        let eigenvalues = matrix
            .eigenvalues()
            .map_err(|e| Error::EigensolverFailure(format!("{e:?}")))?;
        let x_min = 2.0
            * eigenvalues
                .iter()
                .map(|l| l.im)
                .fold(f64::NEG_INFINITY, f64::max);
        Ok(EffectiveHamiltonian {
            matrix,
            eigenvalues,
            x_min,
        })
    }

    /// Stability bound `2 max Im lambda(H_eff)`, clamped at zero from above.
    pub fn x_min(&self) -> Result<f64> {
        Ok(self.effective_hamiltonian()?.x_min.min(0.0))
    }

    /// Tilt weights `exp(-c . M(i))`. An empty `c` is the zero field.
    pub fn weights(&self, c: &[f64]) -> Result<Vec<f64>> {
        let p = self.spin_dim();
        if c.is_empty() {
            return Ok(vec![1.0; self.jumps.len()]);
        }
        if c.len() != p {
            return Err(Error::Validation(format!(
                "counting field has length {}, spin labels have length {p}",
                c.len()
            )));
        }
        Ok(self
            .jumps
            .iter()
            .map(|j| (-j.spin.iter().zip(c).map(|(m, c)| m * c).sum::<f64>()).exp())
            .collect())
    }

    pub fn apply_phase_transform(&self, kind: PhaseKind, phi: f64) -> LindbladModel {
        let mut out = self.clone();
        match kind {
            PhaseKind::P1 => {
                for j in &mut out.jumps {
                    j.phase += phi;
                }
            }
            PhaseKind::P2 => {
                for k in 0..self.dim {
                    out.hamiltonian[(k, k)] += cr(phi);
                }
            }
        }
        out
    }
}

/// Pure decay `L = sqrt(kappa)|0><1|` from the excited state.
pub fn two_level_decay(kappa: f64) -> LindbladModel {
    let h = Mat::<c64>::zeros(2, 2);
    let mut l = Mat::<c64>::zeros(2, 2);
    l[(0, 1)] = cr(kappa.sqrt());
    let mut m = LindbladModel::new(
        h,
        vec![Jump::new(l, vec![])],
        linalg::basis_ket(2, 1),
    )
    .expect("valid model");
    m.name = Some("two_level_decay".into());
    m
}

/// Three-level system with `|0>` coupled to `|1>` and `|2>`, decay `|1> -> |0>`.
pub fn three_level_renewal(omega1: f64, omega2: f64, kappa: f64) -> LindbladModel {
    let mut h = Mat::<c64>::zeros(3, 3);
    h[(0, 1)] = cr(omega1);
    h[(1, 0)] = cr(omega1);
    h[(0, 2)] = cr(omega2);
    h[(2, 0)] = cr(omega2);
    let mut l = Mat::<c64>::zeros(3, 3);
    l[(0, 1)] = cr(kappa.sqrt());
    let mut m = LindbladModel::new(
        h,
        vec![Jump::new(l, vec![])],
        linalg::basis_ket(3, 0),
    )
    .expect("valid model");
    m.name = Some("three_level_renewal".into());
    m
}

/// Rabi-driven qubit with decay (spin 1) and dephasing (spin 0).
pub fn driven_dephased_qubit(omega: f64, kappa: f64, gamma: f64) -> LindbladModel {
    let mut h = Mat::<c64>::zeros(2, 2);
    h[(0, 1)] = cr(omega / 2.0);
    h[(1, 0)] = cr(omega / 2.0);
    let mut lower = Mat::<c64>::zeros(2, 2);
    lower[(0, 1)] = cr(kappa.sqrt());
    let mut z = Mat::<c64>::zeros(2, 2);
    z[(0, 0)] = cr(-gamma.sqrt());
    z[(1, 1)] = cr(gamma.sqrt());
    let mut m = LindbladModel::new(
        h,
        vec![
            Jump::new(lower, vec![1.0]),
            Jump::new(z, vec![0.0]),
        ],
        linalg::basis_ket(2, 0),
    )
    .expect("valid model");
    m.name = Some("driven_dephased_qubit".into());
    m
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
}

fn ginibre(d: usize, rng: &mut ChaCha8Rng) -> Operator {
    Mat::from_fn(d, d, |_, _| c64::new(gaussian(rng), gaussian(rng)) * (0.5f64).sqrt())
}

/// Random model: GUE Hamiltonian, Ginibre jumps with unit-scale rates,
/// random spin labels in `[-1, 1]` and a random unit initial state.
pub fn random_model(d: usize, num_jumps: usize, spin_dim: usize, seed: u64) -> LindbladModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ginibre(d, &mut rng);
    let h = linalg::scale(&(&g + &dagger(&g)), cr(0.5 / (d as f64).sqrt()));
    let jumps = (0..num_jumps)
        .map(|_| {
            Jump::new(
                linalg::scale(&ginibre(d, &mut rng), cr(1.0 / (d as f64 * num_jumps as f64).sqrt())),
                (0..spin_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let psi = random_ket(d, &mut rng);
    let mut m = LindbladModel::new(linalg::hermitian_part(&h), jumps, psi).expect("valid random model");
    m.name = Some(format!("random_d{d}_n{num_jumps}_p{spin_dim}_seed{seed}"));
    m
}

/// Random normalized state of dimension `d`.
pub fn random_ket(d: usize, rng: &mut ChaCha8Rng) -> Ket {
    let raw = Col::from_fn(d, |_| c64::new(gaussian(rng), gaussian(rng)));
    let n = raw.norm_l2();
    Col::from_fn(d, |i| raw[i] / n)
}
