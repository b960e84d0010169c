//! Dense-matrix verification engine.
//!
//! Qubit 0 is the most significant bit of a basis index. Choi operators use
//! `S = (1/d) sum_ij |i><j| (x) L(|i><j|)` with the input factor first, so
//! `Tr S = 1` for trace-preserving maps and `Tr(S_a S_b)` is the process
//! fidelity. PTM entries are `R_ij = Tr(P_i L(P_j)) / d`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate_compiler::{Circuit, Gate, SingleQubitKind};
use crate::pulse_model::{Channel, EnvelopeKind, Schedule};
use crate::pulse_parallelizer::{place_circuit, prepare_circuit, CompileOptions, DeviceConfig, Mode};
use crate::C64;

pub const MAX_QUBITS: usize = 6;

pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

const UNITARY_TOL: f64 = 1e-8;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn check_width(n: usize) -> Result<()> {
    if n > MAX_QUBITS {
        return Err(Error::TooManyQubits(n));
    }
    Ok(())
}

/// Unitary on `num_qubits` qubits, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix {
    num_qubits: usize,
    m: CMatrix,
}

impl UnitaryMatrix {
    pub fn new(num_qubits: usize, m: CMatrix) -> Result<Self> {
        check_width(num_qubits)?;
        let d = 1usize << num_qubits;
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::InvalidCircuit(format!(
                "matrix is {}x{}, expected {d}x{d}",
                m.nrows(),
                m.ncols()
            )));
        }
        let dev = (m.adjoint() * &m - CMatrix::identity(d, d)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if dev > UNITARY_TOL {
            return Err(Error::InvalidCircuit(format!("matrix is not unitary (deviation {dev:e})")));
        }
        Ok(Self { num_qubits, m })
    }

    pub fn identity(num_qubits: usize) -> Result<Self> {
        check_width(num_qubits)?;
        let d = 1usize << num_qubits;
        Ok(Self { num_qubits, m: CMatrix::identity(d, d) })
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn adjoint(&self) -> Self {
        Self { num_qubits: self.num_qubits, m: self.m.adjoint() }
    }

    /// `next` applied after `self`, i.e. the product `next * self`.
    pub fn then(&self, next: &UnitaryMatrix) -> Result<Self> {
        if next.num_qubits != self.num_qubits {
            return Err(Error::InvalidCircuit("composing unitaries of different widths".into()));
        }
        Ok(Self { num_qubits: self.num_qubits, m: &next.m * &self.m })
    }
}

/// `|Tr(A^dagger B)|^2 / d^2`, insensitive to global phase.
pub fn phase_invariant_fidelity(a: &UnitaryMatrix, b: &UnitaryMatrix) -> f64 {
    let d = a.dim() as f64;
    (a.m.adjoint() * &b.m).trace().norm_sqr() / (d * d)
}

pub fn pauli_2x2(p: char) -> CMatrix {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match p {
        'I' => CMatrix::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => CMatrix::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => CMatrix::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => CMatrix::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("not a Pauli label: {p}"),
    }
}

pub fn single_qubit_matrix(kind: SingleQubitKind) -> CMatrix {
    use SingleQubitKind::*;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let z = c(0.0, 0.0);
    match kind {
        X => pauli_2x2('X'),
        Z => pauli_2x2('Z'),
        H => CMatrix::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)]),
        S => CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), z, z, c(0.0, 1.0)]),
        Sdg => CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), z, z, c(0.0, -1.0)]),
        SqrtX => CMatrix::from_row_slice(2, 2, &[c(0.5, 0.5), c(0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5)]),
        X32 => CMatrix::from_row_slice(2, 2, &[c(0.5, -0.5), c(0.5, 0.5), c(0.5, 0.5), c(0.5, -0.5)]),
        Rz(l) => CMatrix::from_row_slice(
            2,
            2,
            &[C64::from_polar(1.0, -l / 2.0), z, z, C64::from_polar(1.0, l / 2.0)],
        ),
    }
}

/// `exp(-i sum_k theta_k/2 Z_{c_k} X_t)` on the local register `(c_1..c_m, t)`.
fn przx_local(thetas: &[f64]) -> CMatrix {
    let m = thetas.len();
    let d = 1usize << (m + 1);
    let mut u = CMatrix::zeros(d, d);
    for ctrl in 0..(1usize << m) {
        let s: f64 = thetas
            .iter()
            .enumerate()
            .map(|(k, th)| if (ctrl >> (m - 1 - k)) & 1 == 0 { *th } else { -*th })
            .sum();
        let (cs, sn) = ((s / 2.0).cos(), (s / 2.0).sin());
        let base = ctrl << 1;
        for b in 0..2 {
            u[(base | b, base | b)] = c(cs, 0.0);
            u[(base | (1 - b), base | b)] = c(0.0, -sn);
        }
    }
    u
}

/// Local matrix of `g` on the register `g.qubits()` (in that order).
pub fn local_gate_matrix(g: &Gate) -> CMatrix {
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    match g {
        Gate::Rzx { theta, .. } => przx_local(&[*theta]),
        Gate::Przx { thetas, .. } => przx_local(thetas),
        Gate::Cnot { .. } => CMatrix::from_row_slice(
            4,
            4,
            &[o, z, z, z, z, o, z, z, z, z, z, o, z, z, o, z],
        ),
        Gate::Cz { .. } => CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![o, o, o, -o])),
        Gate::Single { kind, .. } => single_qubit_matrix(*kind),
    }
}

fn bit_pos(q: usize, n: usize) -> usize {
    n - 1 - q
}

/// Full-register indices obtained by writing every local index into `base`.
fn local_indices(base: usize, qubits: &[usize], n: usize) -> Vec<usize> {
    let k = qubits.len();
    (0..(1usize << k))
        .map(|l| {
            let mut idx = base;
            for (j, &q) in qubits.iter().enumerate() {
                if (l >> (k - 1 - j)) & 1 == 1 {
                    idx |= 1 << bit_pos(q, n);
                }
            }
            idx
        })
        .collect()
}

fn bases(qubits: &[usize], n: usize) -> impl Iterator<Item = usize> {
    let mask: usize = qubits.iter().map(|&q| 1usize << bit_pos(q, n)).sum();
    (0..(1usize << n)).filter(move |i| i & mask == 0)
}

/// `op` acting on `qubits` (first listed = most significant), identity elsewhere.
pub fn embed(op: &CMatrix, qubits: &[usize], n: usize) -> CMatrix {
    let d = 1usize << n;
    let mut out = CMatrix::zeros(d, d);
    for base in bases(qubits, n) {
        let idx = local_indices(base, qubits, n);
        for (r, &ir) in idx.iter().enumerate() {
            for (col, &ic) in idx.iter().enumerate() {
                out[(ir, ic)] = op[(r, col)];
            }
        }
    }
    out
}

/// Left-multiply `u` in place by `op` embedded on `qubits`.
fn apply_left(u: &mut CMatrix, op: &CMatrix, qubits: &[usize], n: usize) {
    let cols = u.ncols();
    let k = 1usize << qubits.len();
    let mut buf = vec![c(0.0, 0.0); k];
    for base in bases(qubits, n) {
        let idx = local_indices(base, qubits, n);
        for col in 0..cols {
            for (r, slot) in buf.iter_mut().enumerate() {
                *slot = (0..k).map(|j| op[(r, j)] * u[(idx[j], col)]).sum();
            }
            for (r, &ir) in idx.iter().enumerate() {
                u[(ir, col)] = buf[r];
            }
        }
    }
}

/// Unitary of a single gate embedded on `num_qubits` qubits.
pub fn unitary_of_gate(g: &Gate, num_qubits: usize) -> Result<UnitaryMatrix> {
    check_width(num_qubits)?;
    let qs = g.qubits();
    if qs.iter().any(|&q| q >= num_qubits) {
        return Err(Error::InvalidCircuit(format!("gate {g} does not fit on {num_qubits} qubits")));
    }
    Ok(UnitaryMatrix { num_qubits, m: embed(&local_gate_matrix(g), &qs, num_qubits) })
}

pub fn unitary_of_circuit(c: &Circuit) -> Result<UnitaryMatrix> {
    let n = c.num_qubits();
    check_width(n)?;
    let d = 1usize << n;
    let mut u = CMatrix::identity(d, d);
    for g in c.gates() {
        apply_left(&mut u, &local_gate_matrix(g), &g.qubits(), n);
    }
    Ok(UnitaryMatrix { num_qubits: n, m: u })
}

/// `exp(-i h t)` for Hermitian `h`, by eigendecomposition.
pub fn expm_hermitian(h: &CMatrix, t: f64) -> CMatrix {
    let eig = SymmetricEigen::new(h.clone());
    let phases = eig.eigenvalues.map(|l| C64::from_polar(1.0, -l * t));
    let v = &eig.eigenvectors;
    v * CMatrix::from_diagonal(&phases) * v.adjoint()
}

/// Tensor product of single-qubit Paulis, e.g. `"ZXI"`.
pub fn pauli_string_matrix(label: &str) -> CMatrix {
    label
        .chars()
        .map(pauli_2x2)
        .reduce(|acc, p| acc.kronecker(&p))
        .unwrap_or_else(|| CMatrix::identity(1, 1))
}

/// Pauli label of lexicographic index `idx` over `{I,X,Y,Z}^n`, qubit 0 first.
pub fn pauli_label(idx: usize, n: usize) -> String {
    (0..n).map(|j| ['I', 'X', 'Y', 'Z'][(idx >> (2 * (n - 1 - j))) & 3]).collect()
}

/// Terms of the driven two-transmon Hamiltonian, control factor first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrTerm {
    ZI,
    ZX,
    ZY,
    ZZ,
    IX,
    IY,
    IZ,
}

impl CrTerm {
    pub const ALL: [CrTerm; 7] =
        [CrTerm::ZI, CrTerm::ZX, CrTerm::ZY, CrTerm::ZZ, CrTerm::IX, CrTerm::IY, CrTerm::IZ];

    pub fn label(self) -> &'static str {
        match self {
            CrTerm::ZI => "ZI",
            CrTerm::ZX => "ZX",
            CrTerm::ZY => "ZY",
            CrTerm::ZZ => "ZZ",
            CrTerm::IX => "IX",
            CrTerm::IY => "IY",
            CrTerm::IZ => "IZ",
        }
    }
}

impl fmt::Display for CrTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CrTerm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CrTerm::ALL
            .into_iter()
            .find(|t| t.label() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown Hamiltonian term '{s}'")))
    }
}

/// Coupling strengths `omega` in rad/s; absent terms are zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, f64>", into = "BTreeMap<String, f64>")]
pub struct CrHamiltonianParams {
    omega: BTreeMap<CrTerm, f64>,
}

impl CrHamiltonianParams {
    pub fn new(terms: impl IntoIterator<Item = (CrTerm, f64)>) -> Result<Self> {
        let mut omega = BTreeMap::new();
        for (t, w) in terms {
            if !w.is_finite() {
                return Err(Error::InvalidConfig(format!("omega_{t} must be finite")));
            }
            omega.insert(t, w);
        }
        Ok(Self { omega })
    }

    pub fn get(&self, t: CrTerm) -> f64 {
        self.omega.get(&t).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, t: CrTerm, w: f64) {
        self.omega.insert(t, w);
    }

    pub fn add(&mut self, t: CrTerm, w: f64) {
        *self.omega.entry(t).or_insert(0.0) += w;
    }
}

impl TryFrom<BTreeMap<String, f64>> for CrHamiltonianParams {
    type Error = Error;
    fn try_from(m: BTreeMap<String, f64>) -> Result<Self> {
        let terms = m.into_iter().map(|(k, v)| Ok((k.parse()?, v))).collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }
}

impl From<CrHamiltonianParams> for BTreeMap<String, f64> {
    fn from(p: CrHamiltonianParams) -> Self {
        p.omega.into_iter().map(|(k, v)| (k.label().to_string(), v)).collect()
    }
}

/// Two-qubit CR Hamiltonian (rad/s) at normalized drive `u` and drive phase `phi`.
///
/// The drive-linear pairs (ZX, ZY) and (IX, IY) rotate with `phi` and scale
/// with the signed `u`; the static terms ZI, ZZ, IZ scale with `|u|`.
pub fn cr_hamiltonian(params: &CrHamiltonianParams, u: f64, phi: f64) -> CMatrix {
    let (cs, sn) = (phi.cos(), phi.sin());
    let zx = params.get(CrTerm::ZX) * cs - params.get(CrTerm::ZY) * sn;
    let zy = params.get(CrTerm::ZX) * sn + params.get(CrTerm::ZY) * cs;
    let ix = params.get(CrTerm::IX) * cs - params.get(CrTerm::IY) * sn;
    let iy = params.get(CrTerm::IX) * sn + params.get(CrTerm::IY) * cs;
    let a = u.abs();
    let terms = [
        ("ZI", params.get(CrTerm::ZI) * a),
        ("ZZ", params.get(CrTerm::ZZ) * a),
        ("IZ", params.get(CrTerm::IZ) * a),
        ("ZX", zx * u),
        ("ZY", zy * u),
        ("IX", ix * u),
        ("IY", iy * u),
    ];
    let mut h = CMatrix::zeros(4, 4);
    for (label, w) in terms {
        if w != 0.0 {
            h += pauli_string_matrix(label) * c(w / 2.0, 0.0);
        }
    }
    h
}

/// Single-qubit drive `omega * env * (cos phi X + sin phi Y) / 2`.
pub fn drive_hamiltonian(omega: f64, env: f64, phi: f64) -> CMatrix {
    let w = omega * env / 2.0;
    pauli_2x2('X') * c(w * phi.cos(), 0.0) + pauli_2x2('Y') * c(w * phi.sin(), 0.0)
}

/// Per-edge CR model: Hamiltonian and the amplitude that maps to `u = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeModel {
    pub params: CrHamiltonianParams,
    pub reference_amplitude: f64,
}

/// Everything needed to turn a schedule into a unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationModel {
    pub num_qubits: usize,
    pub dt: f64,
    pub edges: BTreeMap<(usize, usize), EdgeModel>,
    /// Drive strength per qubit, rad/s per unit amplitude.
    pub drive_omega: BTreeMap<usize, f64>,
}

impl SimulationModel {
    /// Pure-ZX model consistent with the device calibration: every reference
    /// CR pulse implements `RZX(pi/2)` and its compensation tone cancels the
    /// single-qubit drive term exactly.
    pub fn ideal(cfg: &DeviceConfig) -> Result<Self> {
        let dt = cfg.dt;
        let drive_omega: BTreeMap<usize, f64> = (0..cfg.num_qubits())
            .map(|q| (q, std::f64::consts::PI / (cfg.x_amplitude() * cfg.sq_gate_duration as f64 * dt)))
            .collect();
        let mut edges = BTreeMap::new();
        for e in &cfg.edges {
            let cal = cfg.calibration(e.control, e.target)?;
            let a_ref = e.cr.amplitude();
            let w_t = drive_omega[&e.target];
            let rel = e.compensation.phase() - e.cr.phase();
            let a_c = e.compensation.amplitude();
            let params = CrHamiltonianParams::new([
                (CrTerm::ZX, cal.k() * a_ref / dt),
                (CrTerm::IX, -w_t * a_c * rel.cos()),
                (CrTerm::IY, -w_t * a_c * rel.sin()),
            ])?;
            edges.insert((e.control, e.target), EdgeModel { params, reference_amplitude: a_ref });
        }
        Ok(Self { num_qubits: cfg.num_qubits(), dt, edges, drive_omega })
    }

    /// Like [`SimulationModel::ideal`], with per-edge overrides from the config.
    pub fn from_config(cfg: &DeviceConfig) -> Result<Self> {
        let mut m = Self::ideal(cfg)?;
        for e in &cfg.edges {
            if let Some(p) = &e.omega {
                if let Some(em) = m.edges.get_mut(&(e.control, e.target)) {
                    em.params = p.clone();
                }
            }
        }
        Ok(m)
    }

    pub fn edge_mut(&mut self, control: usize, target: usize) -> Option<&mut EdgeModel> {
        self.edges.get_mut(&(control, target))
    }

    fn term_at(&self, ins: &crate::pulse_model::Instruction, t: usize, n: usize) -> Result<CMatrix> {
        let env = ins.envelope.sample(t);
        let phi = ins.envelope.phase();
        match ins.channel {
            Channel::Control { control, target } => {
                let e = self
                    .edges
                    .get(&(control, target))
                    .ok_or_else(|| Error::MissingHamiltonian(ins.channel.to_string()))?;
                let h = cr_hamiltonian(&e.params, env / e.reference_amplitude, phi);
                Ok(embed(&h, &[control, target], n))
            }
            Channel::Drive(q) => {
                let w = self
                    .drive_omega
                    .get(&q)
                    .ok_or_else(|| Error::MissingHamiltonian(ins.channel.to_string()))?;
                Ok(embed(&drive_hamiltonian(*w, env, phi), &[q], n))
            }
        }
    }
}

/// Integrate the schedule's time-dependent Hamiltonian on `model.num_qubits`.
///
/// Segments where every active pulse is flat take one exact step; ramp
/// segments are stepped sample by sample with the Hamiltonian held constant
/// over each sample.
pub fn simulate_schedule(s: &Schedule, model: &SimulationModel) -> Result<UnitaryMatrix> {
    let n = model.num_qubits;
    check_width(n)?;
    let d = 1usize << n;
    let violations = crate::pulse_model::validate_schedule(s);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidPulse(format!("invalid schedule: {v}")));
    }
    if let Some(q) = s.qubits().into_iter().find(|&q| q >= n) {
        return Err(Error::TooManyQubits(q + 1));
    }
    let mut cuts = vec![0i64];
    for ins in &s.instructions {
        let rf = ins.envelope.risefall() as i64;
        cuts.extend([ins.start, ins.start + rf, ins.end() - rf, ins.end()]);
    }
    cuts.sort_unstable();
    cuts.dedup();
    let mut u = CMatrix::identity(d, d);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let active: Vec<_> = s.instructions.iter().filter(|i| i.start < b && i.end() > a).collect();
        if active.is_empty() {
            continue;
        }
        let flat = active.iter().all(|i| {
            i.envelope.kind() == EnvelopeKind::Constant || i.envelope.is_flat_at((a - i.start) as usize)
        });
        let steps: Vec<(i64, i64)> = if flat { vec![(a, b - a)] } else { (a..b).map(|t| (t, 1)).collect() };
        for (t, len) in steps {
            let mut h = CMatrix::zeros(d, d);
            for ins in &active {
                h += model.term_at(ins, (t - ins.start) as usize, n)?;
            }
            u = expm_hermitian(&h, len as f64 * model.dt) * u;
        }
    }
    UnitaryMatrix::new(n, u)
}

/// Unitary of a circuit compiled for `mode`, simulated one placed fragment at
/// a time. Two-qubit fragments run through [`simulate_schedule`]; single-qubit
/// blocks use their ideal matrices, since virtual and timing-only blocks carry
/// no physical pulse. Also returns the schedule length in samples.
pub fn simulate_compiled(
    c: &Circuit,
    cfg: &DeviceConfig,
    mode: Mode,
    opts: CompileOptions,
    model: &SimulationModel,
) -> Result<(UnitaryMatrix, usize)> {
    let n = model.num_qubits;
    if c.num_qubits() > n {
        return Err(Error::InvalidCircuit(format!(
            "circuit uses {} qubits but the device has {n}",
            c.num_qubits()
        )));
    }
    let prepared = prepare_circuit(c, mode, opts)?.widened(n)?;
    let mut placed = place_circuit(&prepared, cfg, mode)?;
    placed.sort_by_key(|p| p.start);
    let mut u = UnitaryMatrix::identity(n)?;
    let mut end = 0i64;
    for p in &placed {
        end = end.max(p.start + p.fragment.duration as i64);
        let step = match &p.fragment.source {
            g @ Gate::Single { .. } => unitary_of_gate(g, n)?,
            _ => simulate_schedule(&p.fragment.schedule, model)?,
        };
        u = u.then(&step)?;
    }
    Ok((u, end as usize))
}

/// A process on 1 to `MAX_QUBITS` qubits in one of three representations.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumChannel {
    Unitary(UnitaryMatrix),
    Choi { num_qubits: usize, s: CMatrix },
    Ptm { num_qubits: usize, r: RMatrix },
}

impl QuantumChannel {
    pub fn num_qubits(&self) -> usize {
        match self {
            QuantumChannel::Unitary(u) => u.num_qubits(),
            QuantumChannel::Choi { num_qubits, .. } | QuantumChannel::Ptm { num_qubits, .. } => *num_qubits,
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits()
    }

    pub fn choi(s: CMatrix) -> Result<Self> {
        let d2 = s.nrows();
        let d = (d2 as f64).sqrt().round() as usize;
        if d * d != d2 || s.ncols() != d2 || !d.is_power_of_two() {
            return Err(Error::InvalidCircuit(format!("Choi matrix of size {d2} is not d^2 x d^2")));
        }
        let n = d.trailing_zeros() as usize;
        check_width(n)?;
        Ok(QuantumChannel::Choi { num_qubits: n, s })
    }

    /// Choi operator in the unit-trace convention.
    pub fn to_choi(&self) -> CMatrix {
        match self {
            QuantumChannel::Unitary(u) => choi_matrix_of_unitary(u.matrix()),
            QuantumChannel::Choi { s, .. } => s.clone(),
            QuantumChannel::Ptm { num_qubits, r } => {
                let n = *num_qubits;
                let d = 1usize << n;
                let paulis: Vec<CMatrix> = (0..d * d).map(|i| pauli_string_matrix(&pauli_label(i, n))).collect();
                let mut s = CMatrix::zeros(d * d, d * d);
                // S = (1/d^2) sum_j P_j^T (x) L(P_j), with L(P_j) = sum_i R_ij P_i
                for (j, pj) in paulis.iter().enumerate() {
                    let mut out = CMatrix::zeros(d, d);
                    for (i, pi) in paulis.iter().enumerate() {
                        if r[(i, j)] != 0.0 {
                            out += pi * c(r[(i, j)], 0.0);
                        }
                    }
                    s += pj.transpose().kronecker(&out);
                }
                s / c((d * d) as f64, 0.0)
            }
        }
    }

    /// `L(x)` for a `d x d` operator `x`.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        match self {
            QuantumChannel::Unitary(u) => u.matrix() * x * u.matrix().adjoint(),
            _ => apply_choi(&self.to_choi(), x, self.dim()),
        }
    }
}

fn choi_matrix_of_unitary(u: &CMatrix) -> CMatrix {
    let d = u.nrows();
    let mut v = nalgebra::DVector::<C64>::zeros(d * d);
    let norm = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        for a in 0..d {
            v[i * d + a] = u[(a, i)] * norm;
        }
    }
    &v * v.adjoint()
}

/// `L(x) = d Tr_in[(x^T (x) I) S]`.
fn apply_choi(s: &CMatrix, x: &CMatrix, d: usize) -> CMatrix {
    let mut out = CMatrix::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            let xji = x[(j, i)];
            if xji == c(0.0, 0.0) {
                continue;
            }
            for a in 0..d {
                for b in 0..d {
                    out[(a, b)] += xji * s[(j * d + a, i * d + b)];
                }
            }
        }
    }
    out * c(d as f64, 0.0)
}

pub fn choi_of_unitary(u: &UnitaryMatrix) -> QuantumChannel {
    QuantumChannel::Choi { num_qubits: u.num_qubits(), s: choi_matrix_of_unitary(u.matrix()) }
}

pub fn ptm_matrix(ch: &QuantumChannel) -> RMatrix {
    if let QuantumChannel::Ptm { r, .. } = ch {
        return r.clone();
    }
    let n = ch.num_qubits();
    let d = 1usize << n;
    let paulis: Vec<CMatrix> = (0..d * d).map(|i| pauli_string_matrix(&pauli_label(i, n))).collect();
    let mut r = RMatrix::zeros(d * d, d * d);
    for (j, pj) in paulis.iter().enumerate() {
        let out = ch.apply(pj);
        for (i, pi) in paulis.iter().enumerate() {
            r[(i, j)] = (pi * &out).trace().re / d as f64;
        }
    }
    r
}

pub fn ptm_of_channel(ch: &QuantumChannel) -> QuantumChannel {
    QuantumChannel::Ptm { num_qubits: ch.num_qubits(), r: ptm_matrix(ch) }
}

/// Process fidelity `Tr(S_a S_b)` of unit-trace Choi operators; for two
/// unitaries this equals `|Tr(U^dagger V)|^2 / d^2`.
pub fn process_fidelity(a: &QuantumChannel, b: &QuantumChannel) -> Result<f64> {
    if a.num_qubits() != b.num_qubits() {
        return Err(Error::InvalidCircuit("channels act on different numbers of qubits".into()));
    }
    if let (QuantumChannel::Unitary(u), QuantumChannel::Unitary(v)) = (a, b) {
        return Ok(phase_invariant_fidelity(u, v));
    }
    Ok((a.to_choi() * b.to_choi()).trace().re)
}

/// `T_ij` = probability of reading `|j>` after preparing `|i>`.
pub fn truth_table(ch: &QuantumChannel) -> RMatrix {
    let d = ch.dim();
    let mut t = RMatrix::zeros(d, d);
    for i in 0..d {
        let mut rho = CMatrix::zeros(d, d);
        rho[(i, i)] = c(1.0, 0.0);
        let out = ch.apply(&rho);
        for j in 0..d {
            t[(i, j)] = out[(j, j)].re;
        }
    }
    t
}

pub fn ptm_diff(a: &QuantumChannel, b: &QuantumChannel) -> Result<RMatrix> {
    if a.num_qubits() != b.num_qubits() {
        return Err(Error::InvalidCircuit("channels act on different numbers of qubits".into()));
    }
    Ok(ptm_matrix(a) - ptm_matrix(b))
}

pub fn basis_label(i: usize, n: usize) -> String {
    (0..n).map(|q| if (i >> bit_pos(q, n)) & 1 == 1 { '1' } else { '0' }).collect()
}

fn csv_string<F>(fill: F) -> Result<String>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Row-major CSV with each entry written as a `re,im` column pair.
pub fn matrix_to_csv(m: &CMatrix) -> Result<String> {
    csv_string(|w| {
        for r in 0..m.nrows() {
            w.write_record((0..m.ncols()).flat_map(|col| {
                let z = m[(r, col)];
                [z.re.to_string(), z.im.to_string()]
            }))?;
        }
        Ok(())
    })
}

/// PTM as CSV with a header row of Pauli strings; the first column labels rows.
pub fn ptm_to_csv(r: &RMatrix, num_qubits: usize) -> Result<String> {
    let labels: Vec<String> = (0..r.nrows()).map(|i| pauli_label(i, num_qubits)).collect();
    csv_string(|w| {
        w.write_record(std::iter::once("pauli".to_string()).chain(labels.iter().cloned()))?;
        for (i, l) in labels.iter().enumerate() {
            w.write_record(std::iter::once(l.clone()).chain((0..r.ncols()).map(|j| r[(i, j)].to_string())))?;
        }
        Ok(())
    })
}

/// Truth table as long-form CSV: `input,output,probability`, one row per pair.
pub fn truth_table_to_csv(t: &RMatrix, num_qubits: usize) -> Result<String> {
    csv_string(|w| {
        w.write_record(["input", "output", "probability"])?;
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                w.write_record([basis_label(i, num_qubits), basis_label(j, num_qubits), t[(i, j)].to_string()])?;
            }
        }
        Ok(())
    })
}
