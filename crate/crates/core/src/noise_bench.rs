//! Decoherence model, SPAM normalization, Pauli-twirled cycle benchmarking
//! and linear-inversion process tomography.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate_compiler::Circuit;
use crate::simulator::{
    pauli_label, pauli_string_matrix, process_fidelity, truth_table, unitary_of_circuit, CMatrix, QuantumChannel,
    RMatrix, UnitaryMatrix,
};
use crate::C64;

/// Parameters of `F(t) = (1 - F0) exp(-beta t) + F0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoherenceParams {
    beta: f64,
    n_qubits: usize,
}

impl DecoherenceParams {
    pub fn new(beta: f64, n_qubits: usize) -> Result<Self> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidNoise(format!("beta must be non-negative, got {beta}")));
        }
        Ok(Self { beta, n_qubits })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    /// Fidelity of the maximally mixed state, `2^-n`.
    pub fn f0(&self) -> f64 {
        0.5f64.powi(self.n_qubits as i32)
    }
}

pub fn fidelity_decay(t: f64, params: &DecoherenceParams) -> f64 {
    let f0 = params.f0();
    (1.0 - f0) * (-params.beta * t).exp() + f0
}

/// Parallel-gate fidelity implied by the serial one under the decay model.
pub fn predict_parallel_fidelity(f_s: f64, t_p: f64, t_s: f64, f0: f64) -> Result<f64> {
    if !(t_s > 0.0 && t_p >= 0.0) {
        return Err(Error::InvalidNoise(format!("durations must satisfy t_s > 0, t_p >= 0 (got {t_s}, {t_p})")));
    }
    if !(0.0..1.0).contains(&f0) {
        return Err(Error::InvalidNoise(format!("F0 must lie in [0, 1), got {f0}")));
    }
    if f_s < f0 {
        return Err(Error::BelowMixedFloor { fidelity: f_s, floor: f0 });
    }
    Ok((1.0 - f0) * ((f_s - f0) / (1.0 - f0)).powf(t_p / t_s) + f0)
}

/// Blend `alpha S_mle + (1 - alpha) S_ideal` whose fidelity to the ideal
/// process equals `F_mle / F_id`.
pub fn spam_normalize(
    s_mle: &QuantumChannel,
    s_ideal: &QuantumChannel,
    f_id: f64,
) -> Result<(QuantumChannel, f64)> {
    if !(f_id > 0.0 && f_id <= 1.0) {
        return Err(Error::InvalidNoise(format!("F_id must lie in (0, 1], got {f_id}")));
    }
    let f_mle = process_fidelity(s_mle, s_ideal)?;
    let f_ii = process_fidelity(s_ideal, s_ideal)?;
    let target = f_mle / f_id;
    if target > f_ii + 1e-12 {
        return Err(Error::NegativeBlend(target));
    }
    let alpha = if (f_ii - f_mle).abs() < 1e-15 { 0.0 } else { ((f_ii - target) / (f_ii - f_mle)).max(0.0) };
    let s = s_mle.to_choi() * C64::new(alpha, 0.0) + s_ideal.to_choi() * C64::new(1.0 - alpha, 0.0);
    Ok((QuantumChannel::choi(s)?, alpha))
}

/// Truth table of the blended process; rows sum to one.
pub fn normalized_truth_table(s_norm: &QuantumChannel) -> RMatrix {
    truth_table(s_norm)
}

/// Pauli channel: non-identity Pauli strings with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NoiseJson", into = "NoiseJson")]
pub struct PauliNoiseModel {
    num_qubits: usize,
    probs: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct NoiseJson {
    num_qubits: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probabilities: Option<BTreeMap<String, f64>>,
    /// Global depolarizing channel with this Pauli eigenvalue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depolarizing: Option<f64>,
}

impl TryFrom<NoiseJson> for PauliNoiseModel {
    type Error = Error;
    fn try_from(j: NoiseJson) -> Result<Self> {
        match (j.probabilities, j.depolarizing) {
            (Some(p), None) => Self::new(j.num_qubits, p),
            (None, Some(l)) => Self::depolarizing_with_eigenvalue(j.num_qubits, l),
            (None, None) => Self::new(j.num_qubits, BTreeMap::new()),
            (Some(_), Some(_)) => {
                Err(Error::InvalidNoise("give either probabilities or depolarizing, not both".into()))
            }
        }
    }
}

impl From<PauliNoiseModel> for NoiseJson {
    fn from(m: PauliNoiseModel) -> Self {
        NoiseJson { num_qubits: m.num_qubits, probabilities: Some(m.probs), depolarizing: None }
    }
}

impl PauliNoiseModel {
    pub fn new(num_qubits: usize, probs: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (label, p) in probs {
            if label.len() != num_qubits || !label.chars().all(|c| "IXYZ".contains(c)) {
                return Err(Error::InvalidNoise(format!("'{label}' is not a {num_qubits}-qubit Pauli string")));
            }
            if label.chars().all(|c| c == 'I') {
                return Err(Error::InvalidNoise("identity probability is implied, do not list it".into()));
            }
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::InvalidNoise(format!("probability of {label} must be >= 0, got {p}")));
            }
            if p > 0.0 {
                *map.entry(label).or_insert(0.0) += p;
            }
        }
        let total: f64 = map.values().sum();
        if total > 1.0 + 1e-12 {
            return Err(Error::InvalidNoise(format!("probabilities sum to {total} > 1")));
        }
        Ok(Self { num_qubits, probs: map })
    }

    pub fn none(num_qubits: usize) -> Self {
        Self { num_qubits, probs: BTreeMap::new() }
    }

    /// Total probability `q` spread evenly over all `4^n - 1` non-identity Paulis.
    pub fn depolarizing(num_qubits: usize, q: f64) -> Result<Self> {
        let k = (1usize << (2 * num_qubits)) - 1;
        Self::new(num_qubits, (1..=k).map(|i| (pauli_label(i, num_qubits), q / k as f64)))
    }

    /// Depolarizing channel scaling every non-identity Pauli by `lambda`.
    pub fn depolarizing_with_eigenvalue(num_qubits: usize, lambda: f64) -> Result<Self> {
        let d2 = (1usize << (2 * num_qubits)) as f64;
        Self::depolarizing(num_qubits, (1.0 - lambda) * (d2 - 1.0) / d2)
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn probabilities(&self) -> &BTreeMap<String, f64> {
        &self.probs
    }

    pub fn identity_probability(&self) -> f64 {
        1.0 - self.probs.values().sum::<f64>()
    }

    /// Eigenvalue of the channel on Pauli `label`: `sum_Q p_Q (+-1)`.
    pub fn pauli_eigenvalue(&self, label: &str) -> f64 {
        self.identity_probability()
            + self.probs.iter().map(|(q, p)| if commutes(q, label) { *p } else { -*p }).sum::<f64>()
    }

    /// Apply the channel to a density matrix.
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = rho * C64::new(self.identity_probability(), 0.0);
        for (label, p) in &self.probs {
            let q = pauli_string_matrix(label);
            out += &q * rho * &q * C64::new(*p, 0.0);
        }
        out
    }
}

fn commutes(a: &str, b: &str) -> bool {
    a.chars().zip(b.chars()).filter(|&(x, y)| x != 'I' && y != 'I' && x != y).count() % 2 == 0
}

/// Choi operator of `noise` applied after `u`.
pub fn apply_pauli_noise(u: &UnitaryMatrix, noise: &PauliNoiseModel) -> Result<QuantumChannel> {
    if noise.num_qubits() != u.num_qubits() {
        return Err(Error::InvalidNoise("noise model and gate act on different qubit counts".into()));
    }
    let d = u.dim();
    let mut v = nalgebra::DVector::<C64>::zeros(d * d);
    let mut s = CMatrix::zeros(d * d, d * d);
    let mut add = |m: &CMatrix, p: f64| {
        for i in 0..d {
            for a in 0..d {
                v[i * d + a] = m[(a, i)] / (d as f64).sqrt();
            }
        }
        s += &v * v.adjoint() * C64::new(p, 0.0);
    };
    add(u.matrix(), noise.identity_probability());
    for (label, p) in noise.probabilities() {
        add(&(pauli_string_matrix(label) * u.matrix()), *p);
    }
    QuantumChannel::choi(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CBConfig {
    pub depths: Vec<usize>,
    pub samples_per_depth: usize,
    /// Shots per circuit; 0 selects exact expectations.
    pub shots: u64,
    pub seed: u64,
}

impl Default for CBConfig {
    fn default() -> Self {
        Self { depths: vec![4, 8, 16, 32], samples_per_depth: 28, shots: 0, seed: 0 }
    }
}

impl CBConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depths.is_empty() || self.depths[0] == 0 || self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidBenchmark(format!(
                "depths must be positive and strictly increasing, got {:?}",
                self.depths
            )));
        }
        if self.depths.len() < 2 {
            return Err(Error::InvalidBenchmark("a decay fit needs at least two depths".into()));
        }
        if self.samples_per_depth == 0 {
            return Err(Error::InvalidBenchmark("samples_per_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Noise injected in each benchmark cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbNoise {
    /// After the benchmarked gate.
    pub gate: PauliNoiseModel,
    /// After every random Pauli layer, in both runs.
    pub twirl: PauliNoiseModel,
}

impl CbNoise {
    pub fn none(num_qubits: usize) -> Self {
        Self { gate: PauliNoiseModel::none(num_qubits), twirl: PauliNoiseModel::none(num_qubits) }
    }
}

/// Least-squares fit of `A p^m` on log survival means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub a: f64,
    pub p: f64,
    /// Standard error of `p` from shot noise; 0 in exact mode.
    pub sigma_p: f64,
    /// Sum of squared log residuals.
    pub residual: f64,
    /// Set when some depth had a non-positive mean and was dropped.
    pub flagged: bool,
}

/// One depth: mean survival and the variance of that mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayPoint {
    pub depth: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn fit_decay(points: &[DecayPoint]) -> DecayFit {
    let good: Vec<&DecayPoint> = points.iter().filter(|p| p.mean > 0.0).collect();
    let flagged = good.len() < points.len();
    if good.len() < 2 {
        return DecayFit { a: f64::NAN, p: 0.0, sigma_p: f64::INFINITY, residual: f64::INFINITY, flagged: true };
    }
    let n = good.len() as f64;
    let xs: Vec<f64> = good.iter().map(|p| p.depth as f64).collect();
    let ys: Vec<f64> = good.iter().map(|p| p.mean.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>() / sxx;
    let icpt = ym - slope * xm;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
    let var_slope: f64 = good
        .iter()
        .zip(&xs)
        .map(|(pt, x)| ((x - xm) / sxx).powi(2) * pt.variance / (pt.mean * pt.mean))
        .sum();
    let p = slope.exp();
    DecayFit { a: icpt.exp(), p, sigma_p: p * var_slope.sqrt(), residual, flagged }
}

/// Survival means drawn from `A p^m` with `shots` two-outcome shots per depth
/// (exact values when `shots == 0`).
pub fn synthetic_decay(a: f64, p: f64, depths: &[usize], shots: u64, seed: u64) -> Result<Vec<DecayPoint>> {
    let mut out = Vec::with_capacity(depths.len());
    for (i, &m) in depths.iter().enumerate() {
        let f = a * p.powi(m as i32);
        let mut rng = substream(seed, 0, 0, i, 0);
        out.push(sample_expectation(f, shots, &mut rng)?);
        out.last_mut().expect("pushed").depth = m;
    }
    Ok(out)
}

fn sample_expectation(f: f64, shots: u64, rng: &mut ChaCha8Rng) -> Result<DecayPoint> {
    if shots == 0 {
        return Ok(DecayPoint { depth: 0, mean: f, variance: 0.0 });
    }
    let prob = ((1.0 + f) / 2.0).clamp(0.0, 1.0);
    let k = Binomial::new(shots, prob).map_err(|e| Error::InvalidBenchmark(e.to_string()))?.sample(rng);
    let est = 2.0 * k as f64 / shots as f64 - 1.0;
    Ok(DecayPoint { depth: 0, mean: est, variance: (1.0 - f * f).max(0.0) / shots as f64 })
}

fn substream(seed: u64, run: u64, channel: usize, depth: usize, sample: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((run << 60) ^ ((channel as u64) << 40) ^ ((depth as u64) << 24) ^ sample as u64);
    rng
}

/// Action of a Clifford unitary on Pauli labels: index -> (image index, sign).
fn clifford_table(u: &UnitaryMatrix) -> Result<Vec<(usize, f64)>> {
    let n = u.num_qubits();
    let d = u.dim();
    let paulis: Vec<CMatrix> = (0..d * d).map(|i| pauli_string_matrix(&pauli_label(i, n))).collect();
    let mut table = Vec::with_capacity(d * d);
    for p in &paulis {
        let img = u.matrix() * p * u.matrix().adjoint();
        let hit = paulis.iter().enumerate().find_map(|(j, q)| {
            let c = (q * &img).trace() / C64::new(d as f64, 0.0);
            ((c.norm() - 1.0).abs() < 1e-8 && c.im.abs() < 1e-8).then_some((j, c.re.signum()))
        });
        table.push(hit.ok_or(Error::NotClifford)?);
    }
    Ok(table)
}

/// Smallest `r` with `G^r` fixing every Pauli label (signs ignored).
fn frame_order(table: &[(usize, f64)]) -> usize {
    let mut cur: Vec<usize> = (0..table.len()).collect();
    for r in 1..=64 {
        cur = cur.iter().map(|&i| table[i].0).collect();
        if cur.iter().enumerate().all(|(i, &j)| i == j) {
            return r;
        }
    }
    64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelResult {
    pub channel: String,
    pub p: f64,
    pub p_ref: f64,
    pub ratio: f64,
    pub a: f64,
    pub residual: f64,
    pub sigma_p: f64,
    pub sigma_p_ref: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CBResult {
    pub num_qubits: usize,
    pub channels: Vec<ChannelResult>,
}

impl CBResult {
    /// Process fidelity estimate `(1 + sum_k ratio_k) / 4^n`.
    pub fn process_fidelity(&self) -> f64 {
        (1.0 + self.channels.iter().map(|c| c.ratio).sum::<f64>()) / (1u64 << (2 * self.num_qubits)) as f64
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["channel", "p", "p_ref", "ratio", "A", "residual"]).map_err(io)?;
        for c in &self.channels {
            w.write_record([
                c.channel.clone(),
                c.p.to_string(),
                c.p_ref.to_string(),
                c.ratio.to_string(),
                c.a.to_string(),
                c.residual.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Survival of one random sequence: start from the `+1` eigenspace of Pauli
/// `k`, run `m` cycles of (random Pauli, twirl noise, [gate, gate noise]) and
/// measure the propagated Pauli. Both noise channels are Pauli channels and
/// the gate is Clifford, so the state stays `(I + c P)/d` and only `c` and `P`
/// need tracking.
fn sequence_expectation(
    k: usize,
    m: usize,
    n: usize,
    table: Option<&[(usize, f64)]>,
    noise: &CbNoise,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let d2 = 1usize << (2 * n);
    let mut idx = k;
    let mut coeff = 1.0;
    let mut sign = 1.0;
    for _ in 0..m {
        let twirl = rng.random_range(0..d2);
        if !commutes(&pauli_label(twirl, n), &pauli_label(idx, n)) {
            coeff = -coeff;
            sign = -sign;
        }
        coeff *= noise.twirl.pauli_eigenvalue(&pauli_label(idx, n));
        if let Some(t) = table {
            let (j, s) = t[idx];
            idx = j;
            coeff *= s;
            sign *= s;
            coeff *= noise.gate.pauli_eigenvalue(&pauli_label(idx, n));
        }
    }
    // the ideal sequence leaves sign * P_idx; its expectation is coeff * sign
    coeff * sign
}

fn run_channel(
    k: usize,
    n: usize,
    table: Option<&[(usize, f64)]>,
    noise: &CbNoise,
    cfg: &CBConfig,
    run: u64,
) -> Result<DecayFit> {
    let mut points = Vec::with_capacity(cfg.depths.len());
    for (di, &m) in cfg.depths.iter().enumerate() {
        let mut mean = 0.0;
        let mut var = 0.0;
        for s in 0..cfg.samples_per_depth {
            let mut rng = substream(cfg.seed, run, k, di, s);
            let f = sequence_expectation(k, m, n, table, noise, &mut rng);
            let pt = sample_expectation(f, cfg.shots, &mut rng)?;
            mean += pt.mean;
            var += pt.variance;
        }
        let ns = cfg.samples_per_depth as f64;
        points.push(DecayPoint { depth: m, mean: mean / ns, variance: var / (ns * ns) });
    }
    Ok(fit_decay(&points))
}

/// Cycle benchmarking of `gate` under Pauli noise, one decay per Pauli channel.
pub fn cycle_benchmark(gate: &Circuit, noise: &CbNoise, cfg: &CBConfig, interleave: bool) -> Result<CBResult> {
    cfg.validate()?;
    let n = gate.num_qubits();
    if noise.gate.num_qubits() != n || noise.twirl.num_qubits() != n {
        return Err(Error::InvalidNoise("noise model and gate act on different qubit counts".into()));
    }
    let table = if interleave {
        let t = clifford_table(&unitary_of_circuit(gate)?)?;
        let r = frame_order(&t);
        if let Some(m) = cfg.depths.iter().find(|&&m| m % r != 0) {
            return Err(Error::InvalidBenchmark(format!("depth {m} is not a multiple of the gate's Pauli order {r}")));
        }
        Some(t)
    } else {
        None
    };
    let d2 = 1usize << (2 * n);
    let mut channels = Vec::with_capacity(d2 - 1);
    for k in 1..d2 {
        let reference = run_channel(k, n, None, noise, cfg, 0)?;
        let fit = match &table {
            Some(t) => run_channel(k, n, Some(t), noise, cfg, 1)?,
            None => reference,
        };
        channels.push(ChannelResult {
            channel: pauli_label(k, n),
            p: fit.p,
            p_ref: reference.p,
            ratio: fit.p / reference.p,
            a: fit.a,
            residual: fit.residual,
            sigma_p: fit.sigma_p,
            sigma_p_ref: reference.sigma_p,
            flagged: fit.flagged || reference.flagged || fit.p <= 0.0,
        });
    }
    Ok(CBResult { num_qubits: n, channels })
}

fn input_state(code: usize) -> CMatrix {
    let h = 0.5;
    let z = C64::new(0.0, 0.0);
    let r = |x: f64| C64::new(x, 0.0);
    match code {
        0 => CMatrix::from_row_slice(2, 2, &[r(1.0), z, z, z]),
        1 => CMatrix::from_row_slice(2, 2, &[z, z, z, r(1.0)]),
        2 => CMatrix::from_row_slice(2, 2, &[r(h), r(h), r(h), r(h)]),
        _ => CMatrix::from_row_slice(2, 2, &[r(h), C64::new(0.0, -h), C64::new(0.0, h), r(h)]),
    }
}

/// Coefficients of Pauli `P` over the inputs `{|0>, |1>, |+>, |+i>}`.
fn pauli_in_inputs(p: char) -> [f64; 4] {
    match p {
        'I' => [1.0, 1.0, 0.0, 0.0],
        'Z' => [1.0, -1.0, 0.0, 0.0],
        'X' => [-1.0, -1.0, 2.0, 0.0],
        _ => [-1.0, -1.0, 0.0, 2.0],
    }
}

fn digits(mut x: usize, base: usize, n: usize) -> Vec<usize> {
    let mut v = vec![0; n];
    for slot in v.iter_mut().rev() {
        *slot = x % base;
        x /= base;
    }
    v
}

fn kron_all(ms: impl IntoIterator<Item = CMatrix>) -> CMatrix {
    ms.into_iter().reduce(|a, b| a.kronecker(&b)).unwrap_or_else(|| CMatrix::identity(1, 1))
}

/// Estimated Pauli expectations of `rho`, indexed like [`pauli_label`].
fn estimate_paulis(rho: &CMatrix, n: usize, shots: u64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let d = 1usize << n;
    let labels: Vec<String> = (0..d * d).map(|i| pauli_label(i, n)).collect();
    if shots == 0 {
        return Ok(labels.iter().map(|l| (pauli_string_matrix(l) * rho).trace().re).collect());
    }
    let bases = ['X', 'Y', 'Z'];
    let n_settings = 3usize.pow(n as u32);
    let mut sums = vec![0.0; d * d];
    let mut uses = vec![0usize; d * d];
    for s in 0..n_settings {
        let setting: Vec<char> = digits(s, 3, n).into_iter().map(|b| bases[b]).collect();
        let probs: Vec<f64> = (0..d)
            .map(|outcome| {
                let proj = kron_all(setting.iter().enumerate().map(|(q, &b)| {
                    let bit = (outcome >> (n - 1 - q)) & 1;
                    let sgn = if bit == 0 { 0.5 } else { -0.5 };
                    CMatrix::identity(2, 2) * C64::new(0.5, 0.0)
                        + crate::simulator::pauli_2x2(b) * C64::new(sgn, 0.0)
                }));
                (proj * rho).trace().re.max(0.0)
            })
            .collect();
        let counts = multinomial(shots, &probs, rng)?;
        for (i, l) in labels.iter().enumerate() {
            let compatible = l.chars().zip(&setting).all(|(c, &b)| c == 'I' || c == b);
            if !compatible {
                continue;
            }
            let mask: usize =
                l.chars().enumerate().filter(|(_, c)| *c != 'I').map(|(q, _)| 1usize << (n - 1 - q)).sum();
            let e: f64 = counts
                .iter()
                .enumerate()
                .map(|(o, &c)| if (o & mask).count_ones().is_multiple_of(2) { c as f64 } else { -(c as f64) })
                .sum::<f64>()
                / shots as f64;
            sums[i] += e;
            uses[i] += 1;
        }
    }
    Ok(sums.iter().zip(&uses).map(|(s, &u)| s / u as f64).collect())
}

fn multinomial(shots: u64, probs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    let mut left = shots;
    let mut mass: f64 = probs.iter().sum();
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, q).map_err(|e| Error::InvalidBenchmark(e.to_string()))?.sample(rng);
        out.push(k);
        left -= k;
        mass -= p;
    }
    Ok(out)
}

/// Linear-inversion process tomography with Pauli-basis readout.
///
/// Inputs are the `4^n` product states over `{|0>, |1>, |+>, |+i>}`; each
/// output is measured in all `3^n` Pauli settings with `shots` shots
/// (`shots == 0` gives exact expectations).
pub fn shot_tomography(ch: &QuantumChannel, shots: u64, seed: u64) -> Result<QuantumChannel> {
    let n = ch.num_qubits();
    let d = 1usize << n;
    let labels: Vec<String> = (0..d * d).map(|i| pauli_label(i, n)).collect();
    let paulis: Vec<CMatrix> = labels.iter().map(|l| pauli_string_matrix(l)).collect();
    let mut outputs = Vec::with_capacity(d * d);
    for code in 0..d * d {
        let rho_in = kron_all(digits(code, 4, n).into_iter().map(input_state));
        let out = ch.apply(&rho_in);
        let mut rng = substream(seed, 2, code, 0, 0);
        let ev = estimate_paulis(&out, n, shots, &mut rng)?;
        let mut est = CMatrix::zeros(d, d);
        for (e, p) in ev.iter().zip(&paulis) {
            est += p * C64::new(*e / d as f64, 0.0);
        }
        outputs.push(est);
    }
    let mut s = CMatrix::zeros(d * d, d * d);
    for (label, p) in labels.iter().zip(&paulis) {
        let coeffs: Vec<[f64; 4]> = label.chars().map(pauli_in_inputs).collect();
        let mut image = CMatrix::zeros(d, d);
        for (code, out) in outputs.iter().enumerate() {
            let w: f64 = digits(code, 4, n).iter().zip(&coeffs).map(|(&dg, c)| c[dg]).product();
            if w != 0.0 {
                image += out * C64::new(w, 0.0);
            }
        }
        s += p.transpose().kronecker(&image);
    }
    QuantumChannel::choi(s / C64::new((d * d) as f64, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate_compiler::{Gate, SingleQubitKind};
    use crate::simulator::{choi_of_unitary, unitary_of_gate};
    use std::f64::consts::FRAC_PI_2;

    fn przx() -> Circuit {
        Circuit::from_gates(3, vec![Gate::przx(vec![FRAC_PI_2, FRAC_PI_2], vec![0, 2], 1).unwrap()]).unwrap()
    }

    #[test]
    fn decay_examples() {
        let p = DecoherenceParams::new(0.0, 3).unwrap();
        assert_eq!(fidelity_decay(0.0, &p), 1.0);
        let t0 = 1e-6;
        let p = DecoherenceParams::new(std::f64::consts::LN_2 / t0, 3).unwrap();
        assert!((fidelity_decay(t0, &p) - 0.5625).abs() < 1e-12);
        assert!((fidelity_decay(1.0, &p) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn prediction_examples() {
        assert!((predict_parallel_fidelity(0.9816, 0.514, 1.0, 0.0).unwrap() - 0.9905).abs() < 5e-4);
        assert_eq!(predict_parallel_fidelity(0.93, 1.0, 1.0, 0.125).unwrap(), 0.93);
        assert!((predict_parallel_fidelity(0.98, 1.0, 2.0, 0.0).unwrap() - 0.98f64.sqrt()).abs() < 1e-15);
        assert!(matches!(predict_parallel_fidelity(0.1, 1.0, 2.0, 0.125), Err(Error::BelowMixedFloor { .. })));
    }

    #[test]
    fn spam_blend_examples() {
        let u = unitary_of_circuit(&przx()).unwrap();
        let ideal = choi_of_unitary(&u);
        let (s, a) = spam_normalize(&ideal, &ideal, 1.0).unwrap();
        assert_eq!(a, 0.0);
        assert!((process_fidelity(&s, &ideal).unwrap() - 1.0).abs() < 1e-12);
        let noisy = apply_pauli_noise(&u, &PauliNoiseModel::depolarizing(3, 0.2).unwrap()).unwrap();
        let f = process_fidelity(&noisy, &ideal).unwrap();
        assert!((f - 0.8).abs() < 1e-12);
        let (blend, alpha) = spam_normalize(&noisy, &ideal, 0.9).unwrap();
        let got = process_fidelity(&blend, &ideal).unwrap();
        assert!((got - f / 0.9).abs() < 1e-12);
        assert!((got - (alpha * f + 1.0 - alpha)).abs() < 1e-12);
        assert!(matches!(spam_normalize(&noisy, &ideal, 0.5), Err(Error::NegativeBlend(_))));
    }

    #[test]
    fn pauli_noise_examples() {
        let u = unitary_of_gate(&Gate::rzx(0.3, 0, 1), 2).unwrap();
        let ch = apply_pauli_noise(&u, &PauliNoiseModel::none(2)).unwrap();
        assert!((ch.to_choi() - choi_of_unitary(&u).to_choi()).camax() < 1e-15);
        let x = PauliNoiseModel::new(2, [("XI".to_string(), 0.1)]).unwrap();
        let f = process_fidelity(&apply_pauli_noise(&u, &x).unwrap(), &QuantumChannel::Unitary(u.clone())).unwrap();
        assert!((f - 0.9).abs() < 1e-12);
        assert!(PauliNoiseModel::new(2, [("II".to_string(), 0.1)]).is_err());
        assert!(PauliNoiseModel::new(2, [("XI".to_string(), 0.7), ("ZZ".to_string(), 0.7)]).is_err());
    }

    #[test]
    fn pauli_eigenvalues_match_dense_channel() {
        let m = PauliNoiseModel::new(2, [("XI".to_string(), 0.1), ("YZ".to_string(), 0.05)]).unwrap();
        for i in 1..16 {
            let l = pauli_label(i, 2);
            let p = pauli_string_matrix(&l);
            let out = m.apply(&p);
            let lam = (&p * out).trace().re / 4.0;
            assert!((lam - m.pauli_eigenvalue(&l)).abs() < 1e-12, "{l}");
        }
        let dep = PauliNoiseModel::depolarizing_with_eigenvalue(3, 0.99).unwrap();
        assert!((dep.pauli_eigenvalue("XYZ") - 0.99).abs() < 1e-12);
    }

    #[test]
    fn fit_is_exact_on_model_data() {
        let pts = synthetic_decay(0.95, 0.99, &[4, 8, 16, 32], 0, 0).unwrap();
        let f = fit_decay(&pts);
        assert!((f.p - 0.99).abs() < 1e-12 && (f.a - 0.95).abs() < 1e-12);
        assert!(f.residual < 1e-20 && !f.flagged);
    }

    #[test]
    fn fit_guards_nonpositive_means() {
        let pts = [
            DecayPoint { depth: 1, mean: 0.5, variance: 0.0 },
            DecayPoint { depth: 2, mean: 0.25, variance: 0.0 },
            DecayPoint { depth: 3, mean: -0.01, variance: 0.0 },
        ];
        let f = fit_decay(&pts);
        assert!(f.flagged && (f.p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noiseless_benchmark_is_perfect() {
        let cfg = CBConfig { samples_per_depth: 3, ..CBConfig::default() };
        let r = cycle_benchmark(&przx(), &CbNoise::none(3), &cfg, true).unwrap();
        assert_eq!(r.channels.len(), 63);
        assert!(r.channels.iter().all(|c| (c.p - 1.0).abs() < 1e-9 && (c.ratio - 1.0).abs() < 1e-9));
    }

    #[test]
    fn depolarizing_benchmark_recovers_eigenvalue() {
        let cfg = CBConfig { samples_per_depth: 2, ..CBConfig::default() };
        let noise = CbNoise {
            gate: PauliNoiseModel::depolarizing_with_eigenvalue(3, 0.99).unwrap(),
            twirl: PauliNoiseModel::none(3),
        };
        let r = cycle_benchmark(&przx(), &noise, &cfg, true).unwrap();
        assert!(r.channels.iter().all(|c| (c.p - 0.99).abs() < 1e-6 && (c.p_ref - 1.0).abs() < 1e-12));
    }

    #[test]
    fn benchmark_rejects_non_clifford_and_bad_depths() {
        let t = Circuit::from_gates(1, vec![Gate::single(SingleQubitKind::Rz(0.3), 0)]).unwrap();
        let cfg = CBConfig { samples_per_depth: 1, ..CBConfig::default() };
        assert!(matches!(cycle_benchmark(&t, &CbNoise::none(1), &cfg, true), Err(Error::NotClifford)));
        let odd = CBConfig { depths: vec![3, 5], samples_per_depth: 1, shots: 0, seed: 0 };
        assert!(matches!(cycle_benchmark(&przx(), &CbNoise::none(3), &odd, true), Err(Error::InvalidBenchmark(_))));
        let bad = CBConfig { depths: vec![8, 4], ..cfg };
        assert!(bad.validate().is_err());
    }

    /// Dense density-matrix replay of one sequence, independent of the frame tracker.
    #[test]
    fn frame_tracking_matches_dense_replay() {
        let n = 2;
        let g = Circuit::from_gates(2, vec![Gate::rzx(FRAC_PI_2, 0, 1), Gate::single(SingleQubitKind::H, 0)]).unwrap();
        let u = unitary_of_circuit(&g).unwrap();
        let table = clifford_table(&u).unwrap();
        let noise = CbNoise {
            gate: PauliNoiseModel::new(2, [("XI".to_string(), 0.03), ("ZY".to_string(), 0.02)]).unwrap(),
            twirl: PauliNoiseModel::new(2, [("IZ".to_string(), 0.01)]).unwrap(),
        };
        for k in [1usize, 6, 11, 15] {
            let m = 5;
            let mut rng = substream(7, 1, k, 0, 0);
            let tracked = sequence_expectation(k, m, n, Some(&table), &noise, &mut rng);
            let mut rng = substream(7, 1, k, 0, 0);
            let p0 = pauli_string_matrix(&pauli_label(k, n));
            let mut rho = (CMatrix::identity(4, 4) + &p0) / C64::new(4.0, 0.0);
            let mut ideal = p0.clone();
            for _ in 0..m {
                let t = pauli_string_matrix(&pauli_label(rng.random_range(0..16), n));
                rho = &t * &rho * &t;
                ideal = &t * &ideal * &t;
                rho = noise.twirl.apply(&rho);
                rho = u.matrix() * &rho * u.matrix().adjoint();
                ideal = u.matrix() * &ideal * u.matrix().adjoint();
                rho = noise.gate.apply(&rho);
            }
            let dense = (ideal * rho).trace().re;
            assert!((dense - tracked).abs() < 1e-12, "channel {k}");
        }
    }

    #[test]
    fn exact_tomography_reproduces_channel() {
        let u = unitary_of_gate(&Gate::rzx(FRAC_PI_2, 0, 1), 2).unwrap();
        let ch = QuantumChannel::Unitary(u.clone());
        let rec = shot_tomography(&ch, 0, 1).unwrap();
        assert!((rec.to_choi() - choi_of_unitary(&u).to_choi()).camax() < 1e-12);
        let id = QuantumChannel::Unitary(UnitaryMatrix::identity(1).unwrap());
        let rec = shot_tomography(&id, 0, 1).unwrap();
        assert!((rec.to_choi() - id.to_choi()).camax() < 1e-12);
    }

    #[test]
    fn noise_json_forms() {
        let m: PauliNoiseModel = serde_json::from_str(r#"{"num_qubits":1,"depolarizing":0.9}"#).unwrap();
        assert!((m.pauli_eigenvalue("X") - 0.9).abs() < 1e-12);
        let m: PauliNoiseModel = serde_json::from_str(r#"{"num_qubits":2,"probabilities":{"XX":0.1}}"#).unwrap();
        assert_eq!(m.probabilities().len(), 1);
        assert!(serde_json::from_str::<PauliNoiseModel>(r#"{"num_qubits":2,"probabilities":{"X":0.1}}"#).is_err());
    }
}
