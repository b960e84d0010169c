//! Abstract gate layer and the circuit rewrites built on it.
//!
//! Circuits list gates in application order: the first gate acts on the
//! state first. Operator products written right-to-left are converted to this
//! order in every decomposition below. `Rz(l)` is `exp(-i l Z / 2)` and
//! `Rzx(t)` is `exp(-i t/2 Z(x)X)` throughout. Global phases are dropped.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout_analyzer::{self, CouplingGraph, TreeMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SingleQubitKind {
    X,
    Z,
    H,
    S,
    Sdg,
    /// `X^{1/2}`
    SqrtX,
    /// `X^{3/2}`, the inverse of `SqrtX`
    X32,
    Rz(f64),
}

impl SingleQubitKind {
    pub fn inverse(self) -> Self {
        use SingleQubitKind::*;
        match self {
            S => Sdg,
            Sdg => S,
            SqrtX => X32,
            X32 => SqrtX,
            Rz(l) => Rz(-l),
            k => k,
        }
    }

    /// Z-type gates are frame changes with no physical pulse.
    pub fn is_virtual(self) -> bool {
        matches!(self, SingleQubitKind::Z | SingleQubitKind::S | SingleQubitKind::Sdg | SingleQubitKind::Rz(_))
    }

    fn name(self) -> &'static str {
        use SingleQubitKind::*;
        match self {
            X => "x",
            Z => "z",
            H => "h",
            S => "s",
            Sdg => "sdg",
            SqrtX => "sx",
            X32 => "x32",
            Rz(_) => "rz",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    Rzx { theta: f64, control: usize, target: usize },
    /// Parallel RZX: `exp(-i sum_k theta_k/2 Z_{c_k} X_t)`.
    Przx { thetas: Vec<f64>, controls: Vec<usize>, target: usize },
    Cnot { control: usize, target: usize },
    Cz { a: usize, b: usize },
    Single { kind: SingleQubitKind, qubit: usize },
}

impl Gate {
    pub fn rzx(theta: f64, control: usize, target: usize) -> Self {
        Gate::Rzx { theta, control, target }
    }

    pub fn przx(thetas: Vec<f64>, controls: Vec<usize>, target: usize) -> Result<Self> {
        let g = Gate::Przx { thetas, controls, target };
        g.check()?;
        Ok(g)
    }

    pub fn single(kind: SingleQubitKind, qubit: usize) -> Self {
        Gate::Single { kind, qubit }
    }

    /// Qubits touched, in the gate's own ordering (controls before target).
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::Rzx { control, target, .. } | Gate::Cnot { control, target } => vec![*control, *target],
            Gate::Przx { controls, target, .. } => {
                let mut q = controls.clone();
                q.push(*target);
                q
            }
            Gate::Cz { a, b } => vec![*a, *b],
            Gate::Single { qubit, .. } => vec![*qubit],
        }
    }

    pub fn check(&self) -> Result<()> {
        let qs = self.qubits();
        let mut sorted = qs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != qs.len() {
            return Err(Error::InvalidGate(format!("{self} acts on repeated qubits")));
        }
        let finite = match self {
            Gate::Rzx { theta, .. } => theta.is_finite(),
            Gate::Przx { thetas, controls, .. } => {
                if thetas.len() != controls.len() || controls.is_empty() {
                    return Err(Error::InvalidGate(format!(
                        "PRZX needs one angle per control, got {} angles for {} controls",
                        thetas.len(),
                        controls.len()
                    )));
                }
                thetas.iter().all(|t| t.is_finite())
            }
            Gate::Single { kind: SingleQubitKind::Rz(l), .. } => l.is_finite(),
            _ => true,
        };
        if !finite {
            return Err(Error::InvalidGate(format!("{self} has a non-finite angle")));
        }
        Ok(())
    }

    pub fn inverse(&self) -> Gate {
        match self {
            Gate::Rzx { theta, control, target } => Gate::rzx(-theta, *control, *target),
            Gate::Przx { thetas, controls, target } => Gate::Przx {
                thetas: thetas.iter().map(|t| -t).collect(),
                controls: controls.clone(),
                target: *target,
            },
            Gate::Single { kind, qubit } => Gate::single(kind.inverse(), *qubit),
            g => g.clone(),
        }
    }

    pub fn is_two_qubit_interaction(&self) -> bool {
        !matches!(self, Gate::Single { .. })
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Rzx { theta, control, target } => write!(f, "rzx({theta}) q{control},q{target}"),
            Gate::Przx { thetas, controls, target } => {
                write!(f, "przx({thetas:?}) {controls:?}->q{target}")
            }
            Gate::Cnot { control, target } => write!(f, "cnot q{control},q{target}"),
            Gate::Cz { a, b } => write!(f, "cz q{a},q{b}"),
            Gate::Single { kind: SingleQubitKind::Rz(l), qubit } => write!(f, "rz({l}) q{qubit}"),
            Gate::Single { kind, qubit } => write!(f, "{} q{qubit}", kind.name()),
        }
    }
}

/// Ordered gate list on `num_qubits` qubits, first gate applied first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitJson", into = "CircuitJson")]
pub struct Circuit {
    num_qubits: usize,
    gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(num_qubits: usize) -> Self {
        Self { num_qubits, gates: Vec::new() }
    }

    pub fn from_gates(num_qubits: usize, gates: Vec<Gate>) -> Result<Self> {
        let mut c = Self::new(num_qubits);
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, g: Gate) -> Result<()> {
        g.check()?;
        if let Some(q) = g.qubits().into_iter().find(|&q| q >= self.num_qubits) {
            return Err(Error::InvalidCircuit(format!(
                "gate {g} uses qubit {q} outside a {}-qubit circuit",
                self.num_qubits
            )));
        }
        self.gates.push(g);
        Ok(())
    }

    pub fn extend(&mut self, other: &Circuit) -> Result<()> {
        for g in &other.gates {
            self.push(g.clone())?;
        }
        Ok(())
    }

    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    /// Same circuit on a wider register.
    pub fn widened(&self, num_qubits: usize) -> Result<Circuit> {
        Circuit::from_gates(num_qubits, self.gates.clone())
    }

    pub fn inverse(&self) -> Circuit {
        Circuit {
            num_qubits: self.num_qubits,
            gates: self.gates.iter().rev().map(Gate::inverse).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Apply `rewrite` to every gate, splicing the resulting sub-circuits.
    pub fn map_gates<F>(&self, mut rewrite: F) -> Result<Circuit>
    where
        F: FnMut(&Gate) -> Result<Circuit>,
    {
        let mut out = Circuit::new(self.num_qubits);
        for g in &self.gates {
            let sub = rewrite(g)?;
            out.extend(&sub)?;
        }
        Ok(out)
    }
}

fn minimal_width(qubits: &[usize]) -> usize {
    qubits.iter().copied().max().map_or(1, |m| m + 1)
}

fn circuit_on(qubits: &[usize], gates: Vec<Gate>) -> Result<Circuit> {
    Circuit::from_gates(minimal_width(qubits), gates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// `h * O_{q1} ... O_{qk}` with each `O` in {X, Y, Z}.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliTerm {
    coefficient: f64,
    paulis: BTreeMap<usize, Pauli>,
}

impl PauliTerm {
    pub fn new(coefficient: f64, paulis: impl IntoIterator<Item = (usize, Pauli)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (q, p) in paulis {
            if map.insert(q, p).is_some() {
                return Err(Error::InvalidGate(format!("qubit {q} appears twice in Pauli term")));
            }
        }
        if map.is_empty() {
            return Err(Error::InvalidGate("Pauli term must be non-empty".into()));
        }
        if !coefficient.is_finite() {
            return Err(Error::InvalidGate("Pauli term coefficient must be finite".into()));
        }
        Ok(Self { coefficient, paulis: map })
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    pub fn paulis(&self) -> &BTreeMap<usize, Pauli> {
        &self.paulis
    }

    pub fn support(&self) -> Vec<usize> {
        self.paulis.keys().copied().collect()
    }
}

/// Wrap into (-pi, pi] and fold to `|theta_bar| <= pi/2`; `delta` marks a fold.
pub fn reduce_angle(theta: f64) -> (f64, u8) {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w.abs() > FRAC_PI_2 {
        (w - w.signum() * PI, 1)
    } else {
        (w, 0)
    }
}

pub fn reduce_rzx(theta: f64, control: usize, target: usize) -> Result<Circuit> {
    let (bar, delta) = reduce_angle(theta);
    let mut gates = vec![Gate::rzx(bar, control, target)];
    if delta == 1 {
        gates.push(Gate::single(SingleQubitKind::Z, control));
        gates.push(Gate::single(SingleQubitKind::X, target));
    }
    circuit_on(&[control, target], gates)
}

pub fn reduce_przx(thetas: &[f64], controls: &[usize], target: usize) -> Result<Circuit> {
    let (bars, deltas): (Vec<f64>, Vec<u8>) = thetas.iter().map(|&t| reduce_angle(t)).unzip();
    let mut gates = vec![Gate::przx(bars, controls.to_vec(), target)?];
    for (&c, &d) in controls.iter().zip(&deltas) {
        if d == 1 {
            gates.push(Gate::single(SingleQubitKind::Z, c));
        }
    }
    let total: u32 = deltas.iter().map(|&d| d as u32).sum();
    if total % 2 == 1 {
        gates.push(Gate::single(SingleQubitKind::X, target));
    }
    let mut qs = controls.to_vec();
    qs.push(target);
    circuit_on(&qs, gates)
}

/// Angle-reduce every RZX and PRZX gate in `c`.
pub fn reduce_circuit(c: &Circuit) -> Result<Circuit> {
    c.map_gates(|g| {
        let sub = match g {
            Gate::Rzx { theta, control, target } => reduce_rzx(*theta, *control, *target)?,
            Gate::Przx { thetas, controls, target } => reduce_przx(thetas, controls, *target)?,
            other => circuit_on(&other.qubits(), vec![other.clone()])?,
        };
        sub.widened(c.num_qubits())
    })
}

pub fn echo_rzx(theta: f64, control: usize, target: usize) -> Result<Circuit> {
    let x = Gate::single(SingleQubitKind::X, control);
    circuit_on(
        &[control, target],
        vec![Gate::rzx(theta / 2.0, control, target), x.clone(), Gate::rzx(-theta / 2.0, control, target), x],
    )
}

pub fn echo_przx(thetas: &[f64], controls: &[usize], target: usize) -> Result<Circuit> {
    let half: Vec<f64> = thetas.iter().map(|t| t / 2.0).collect();
    let neg: Vec<f64> = half.iter().map(|t| -t).collect();
    let mut gates = vec![Gate::przx(half, controls.to_vec(), target)?];
    gates.extend(controls.iter().map(|&c| Gate::single(SingleQubitKind::X, c)));
    gates.push(Gate::przx(neg, controls.to_vec(), target)?);
    gates.extend(controls.iter().map(|&c| Gate::single(SingleQubitKind::X, c)));
    let mut qs = controls.to_vec();
    qs.push(target);
    circuit_on(&qs, gates)
}

/// Echo-expand every RZX and PRZX gate in `c`.
pub fn echo_circuit(c: &Circuit) -> Result<Circuit> {
    c.map_gates(|g| {
        let sub = match g {
            Gate::Rzx { theta, control, target } => echo_rzx(*theta, *control, *target)?,
            Gate::Przx { thetas, controls, target } => echo_przx(thetas, controls, *target)?,
            other => circuit_on(&other.qubits(), vec![other.clone()])?,
        };
        sub.widened(c.num_qubits())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnotVariant {
    /// `X_c Rzx(pi/2) Sdg_c Z_t SX_t Z_t`
    Ibm,
    /// `Rzx(pi/2) Sdg_c X^{3/2}_t`
    Simple,
}

pub fn decompose_cnot(control: usize, target: usize, variant: CnotVariant) -> Result<Circuit> {
    if control == target {
        return Err(Error::InvalidGate(format!("CNOT control equals target ({control})")));
    }
    use SingleQubitKind::*;
    let gates = match variant {
        CnotVariant::Ibm => vec![
            Gate::single(Z, target),
            Gate::single(SqrtX, target),
            Gate::single(Z, target),
            Gate::single(Sdg, control),
            Gate::rzx(FRAC_PI_2, control, target),
        ],
        CnotVariant::Simple => vec![
            Gate::single(Sdg, control),
            Gate::single(X32, target),
            Gate::rzx(FRAC_PI_2, control, target),
        ],
    };
    circuit_on(&[control, target], gates)
}

/// `X^{3n/2 mod 2}` as a single-qubit gate, `None` for the identity.
fn half_power_of_x(n: usize) -> Option<SingleQubitKind> {
    match (3 * n) % 4 {
        0 => None,
        1 => Some(SingleQubitKind::SqrtX),
        2 => Some(SingleQubitKind::X),
        _ => Some(SingleQubitKind::X32),
    }
}

fn check_distinct(qubits: &[usize], what: &str) -> Result<()> {
    let mut s = qubits.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != qubits.len() {
        return Err(Error::InvalidGate(format!("{what}: duplicate qubits in {qubits:?}")));
    }
    Ok(())
}

/// Product of CNOTs from every control onto one shared target, as one PRZX(pi/2).
pub fn parallel_cnot_group(controls: &[usize], target: usize) -> Result<Circuit> {
    if controls.is_empty() {
        return Err(Error::InvalidGate("parallel CNOT group needs at least one control".into()));
    }
    let mut all = controls.to_vec();
    all.push(target);
    check_distinct(&all, "parallel CNOT group")?;
    let mut gates: Vec<Gate> =
        controls.iter().map(|&c| Gate::single(SingleQubitKind::Sdg, c)).collect();
    if let Some(q) = half_power_of_x(controls.len()) {
        gates.push(Gate::single(q, target));
    }
    gates.push(match controls {
        [c] => Gate::rzx(FRAC_PI_2, *c, target),
        _ => Gate::przx(vec![FRAC_PI_2; controls.len()], controls.to_vec(), target)?,
    });
    circuit_on(&all, gates)
}

/// Product of CZs between `shared` and each of `others`.
pub fn parallel_cz_group(others: &[usize], shared: usize) -> Result<Circuit> {
    if others.is_empty() {
        return Err(Error::InvalidGate("parallel CZ group needs at least one partner".into()));
    }
    let mut all = others.to_vec();
    all.push(shared);
    check_distinct(&all, "parallel CZ group")?;
    let mut gates: Vec<Gate> = others.iter().map(|&c| Gate::single(SingleQubitKind::Sdg, c)).collect();
    gates.push(Gate::single(SingleQubitKind::H, shared));
    if let Some(q) = half_power_of_x(others.len()) {
        gates.push(Gate::single(q, shared));
    }
    gates.push(Gate::przx(vec![FRAC_PI_2; others.len()], others.to_vec(), shared)?);
    gates.push(Gate::single(SingleQubitKind::H, shared));
    circuit_on(&all, gates)
}

/// Single-qubit circuit `V` with `V P V^dagger = target` (target is X or Z).
pub fn basis_change(pauli: Pauli, target: Pauli, qubit: usize) -> Result<Circuit> {
    use SingleQubitKind::*;
    let kinds: Vec<SingleQubitKind> = match (pauli, target) {
        (p, t) if p == t => vec![],
        (Pauli::X, Pauli::Z) | (Pauli::Z, Pauli::X) => vec![H],
        (Pauli::Y, Pauli::Z) => vec![SqrtX],
        (Pauli::Y, Pauli::X) => vec![SqrtX, H],
        (_, Pauli::Y) => {
            return Err(Error::InvalidGate("basis change target must be X or Z".into()));
        }
        _ => unreachable!(),
    };
    circuit_on(&[qubit], kinds.into_iter().map(|k| Gate::single(k, qubit)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermStyle {
    SerialChain,
    ParallelMerged,
}

impl From<TermStyle> for TreeMode {
    fn from(s: TermStyle) -> Self {
        match s {
            TermStyle::SerialChain => TreeMode::Serial,
            TermStyle::ParallelMerged => TreeMode::ParallelMerged,
        }
    }
}

/// Circuit for `exp(-i h t O...O)`: basis change, parity collection into
/// `root`, `Rz(2 h t)`, mirrored un-collection and inverse basis change.
pub fn pauli_term_circuit(
    term: &PauliTerm,
    t: f64,
    style: TermStyle,
    graph: &CouplingGraph,
    root: usize,
) -> Result<Circuit> {
    let support = term.support();
    let tree = layout_analyzer::spanning_parity_tree(graph, &support, root, style.into())?;
    let n = graph.num_qubits();
    let mut basis = Circuit::new(n);
    for (&q, &p) in term.paulis() {
        basis.extend(&basis_change(p, Pauli::Z, q)?.widened(n)?)?;
    }
    let core = layout_analyzer::tree_to_circuit(&tree, 2.0 * term.coefficient() * t, n)?;
    let mut out = basis.clone();
    out.extend(&core)?;
    out.extend(&basis.inverse())?;
    Ok(out)
}

/// `n_steps` Trotter steps of the three-qubit Heisenberg chain on qubits
/// 0-1-2, each two-body pair realised as one PRZX onto the middle qubit.
pub fn trotter_heisenberg(n_steps: usize, t: f64) -> Result<Circuit> {
    if n_steps < 1 {
        return Err(Error::InvalidCircuit("Trotter step count must be >= 1".into()));
    }
    let theta = 2.0 * t / n_steps as f64;
    let mut step = Circuit::new(3);
    // application order: ZZ first, then YY, then XX
    for p in [Pauli::Z, Pauli::Y, Pauli::X] {
        let mut basis = Circuit::new(3);
        basis.extend(&basis_change(p, Pauli::Z, 0)?.widened(3)?)?;
        basis.extend(&basis_change(p, Pauli::X, 1)?.widened(3)?)?;
        basis.extend(&basis_change(p, Pauli::Z, 2)?.widened(3)?)?;
        step.extend(&basis)?;
        step.push(Gate::przx(vec![theta, theta], vec![0, 2], 1)?)?;
        step.extend(&basis.inverse())?;
    }
    let mut out = Circuit::new(3);
    for _ in 0..n_steps {
        out.extend(&step)?;
    }
    Ok(out)
}

/// Consecutive CZ gates that share one qubit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CzGroup {
    pub shared: usize,
    pub others: Vec<usize>,
    /// Index range into the oracle circuit's gate list.
    pub gates: std::ops::Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOracle {
    pub circuit: Circuit,
    pub groups: Vec<CzGroup>,
}

impl PhaseOracle {
    /// The oracle with each flagged group replaced by one parallel CZ group.
    pub fn parallelized(&self) -> Result<Circuit> {
        let n = self.circuit.num_qubits();
        let mut out = Circuit::new(n);
        let mut i = 0;
        let gates = self.circuit.gates();
        while i < gates.len() {
            if let Some(g) = self.groups.iter().find(|g| g.gates.start == i) {
                out.extend(&parallel_cz_group(&g.others, g.shared)?.widened(n)?)?;
                i = g.gates.end;
            } else {
                out.push(gates[i].clone())?;
                i += 1;
            }
        }
        Ok(out)
    }
}

/// Phase oracle for `f(x) = sum_{(i,j)} x_i x_j mod 2`: one CZ per pair.
pub fn phase_oracle(num_vars: usize, pair_terms: &[(usize, usize)]) -> Result<PhaseOracle> {
    let mut circuit = Circuit::new(num_vars);
    for &(a, b) in pair_terms {
        circuit.push(Gate::Cz { a, b })?;
    }
    let mut groups = Vec::new();
    let mut i = 0;
    while i < pair_terms.len() {
        let (a, b) = pair_terms[i];
        let mut end = i + 1;
        let mut shared = None;
        while end < pair_terms.len() {
            let (c, d) = pair_terms[end];
            let candidates: Vec<usize> = match shared {
                Some(s) => vec![s],
                None => vec![a, b],
            };
            match candidates.into_iter().find(|&s| s == c || s == d) {
                Some(s) => {
                    shared = Some(s);
                    end += 1;
                }
                None => break,
            }
        }
        if let Some(s) = shared {
            let others = pair_terms[i..end]
                .iter()
                .map(|&(x, y)| if x == s { y } else { x })
                .collect::<Vec<_>>();
            let mut dedup = others.clone();
            dedup.sort_unstable();
            dedup.dedup();
            if dedup.len() == others.len() {
                groups.push(CzGroup { shared: s, others, gates: i..end });
            }
        }
        i = end;
    }
    Ok(PhaseOracle { circuit, groups })
}

/// Shared-control parallel RZX via Hadamard conjugation of the shared-target form.
pub fn common_control_przx(control: usize, targets: &[usize], thetas: &[f64]) -> Result<Circuit> {
    let mut all = targets.to_vec();
    all.push(control);
    check_distinct(&all, "common-control PRZX")?;
    let hs: Vec<Gate> = all.iter().map(|&q| Gate::single(SingleQubitKind::H, q)).collect();
    let mut gates = hs.clone();
    gates.push(Gate::przx(thetas.to_vec(), targets.to_vec(), control)?);
    gates.extend(hs);
    circuit_on(&all, gates)
}

/// Lower CNOT and CZ gates to the RZX gate set.
pub fn decompose_two_qubit_gates(c: &Circuit, variant: CnotVariant) -> Result<Circuit> {
    c.map_gates(|g| {
        let sub = match g {
            Gate::Cnot { control, target } => decompose_cnot(*control, *target, variant)?,
            Gate::Cz { a, b } => parallel_cz_group(&[*a], *b)?,
            other => circuit_on(&other.qubits(), vec![other.clone()])?,
        };
        sub.widened(c.num_qubits())
    })
}

#[derive(Serialize, Deserialize)]
struct GateJson {
    kind: String,
    qubits: Vec<usize>,
    #[serde(default)]
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CircuitJson {
    num_qubits: usize,
    gates: Vec<GateJson>,
}

impl TryFrom<GateJson> for Gate {
    type Error = Error;

    fn try_from(j: GateJson) -> Result<Gate> {
        use SingleQubitKind::*;
        let bad = |why: &str| Error::InvalidGate(format!("{} gate: {why}", j.kind));
        let single = |kind| match j.qubits.as_slice() {
            [q] => Ok(Gate::single(kind, *q)),
            _ => Err(bad("expects one qubit")),
        };
        let g = match j.kind.as_str() {
            "rzx" => match (j.qubits.as_slice(), j.params.as_slice()) {
                ([c, t], [theta]) => Gate::rzx(*theta, *c, *t),
                _ => return Err(bad("expects qubits [control, target] and one angle")),
            },
            "przx" => {
                if j.qubits.len() < 2 {
                    return Err(bad("expects controls followed by the target"));
                }
                let (controls, target) = j.qubits.split_at(j.qubits.len() - 1);
                Gate::przx(j.params.clone(), controls.to_vec(), target[0])?
            }
            "cnot" | "cx" => match j.qubits.as_slice() {
                [c, t] => Gate::Cnot { control: *c, target: *t },
                _ => return Err(bad("expects two qubits")),
            },
            "cz" => match j.qubits.as_slice() {
                [a, b] => Gate::Cz { a: *a, b: *b },
                _ => return Err(bad("expects two qubits")),
            },
            "x" => single(X)?,
            "z" => single(Z)?,
            "h" => single(H)?,
            "s" => single(S)?,
            "sdg" => single(Sdg)?,
            "sx" => single(SqrtX)?,
            "x32" => single(X32)?,
            "rz" => match j.params.as_slice() {
                [l] => single(Rz(*l))?,
                _ => return Err(bad("expects one angle")),
            },
            other => return Err(Error::InvalidGate(format!("unknown gate kind '{other}'"))),
        };
        g.check()?;
        Ok(g)
    }
}

impl From<&Gate> for GateJson {
    fn from(g: &Gate) -> Self {
        let (kind, params) = match g {
            Gate::Rzx { theta, .. } => ("rzx".to_string(), vec![*theta]),
            Gate::Przx { thetas, .. } => ("przx".to_string(), thetas.clone()),
            Gate::Cnot { .. } => ("cnot".to_string(), vec![]),
            Gate::Cz { .. } => ("cz".to_string(), vec![]),
            Gate::Single { kind: SingleQubitKind::Rz(l), .. } => ("rz".to_string(), vec![*l]),
            Gate::Single { kind, .. } => (kind.name().to_string(), vec![]),
        };
        GateJson { kind, qubits: g.qubits(), params }
    }
}

impl TryFrom<CircuitJson> for Circuit {
    type Error = Error;

    fn try_from(j: CircuitJson) -> Result<Circuit> {
        let gates = j.gates.into_iter().map(Gate::try_from).collect::<Result<Vec<_>>>()?;
        Circuit::from_gates(j.num_qubits, gates)
    }
}

impl From<Circuit> for CircuitJson {
    fn from(c: Circuit) -> Self {
        CircuitJson { num_qubits: c.num_qubits, gates: c.gates.iter().map(GateJson::from).collect() }
    }
}
