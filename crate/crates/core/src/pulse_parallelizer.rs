//! Lowering of circuits to pulse schedules, and the merge of cross-resonance
//! pulses that share a target qubit into one parallel segment.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate_compiler::{self, Circuit, CnotVariant, Gate, SingleQubitKind};
use crate::pulse_model::{
    calibrate_area, pulse_area, stretch_to, validate_schedule, AreaCalibration, Channel, PulseEnvelope, Schedule, DEFAULT_DT,
};
use crate::simulator::CrHamiltonianParams;
use crate::C64;

const ANGLE_SLACK: f64 = 1e-9;

/// How a reference pulse is rescaled to a smaller angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaPolicy {
    /// Keep the peak amplitude and shorten the plateau.
    #[default]
    VaryDuration,
    /// Keep the duration and scale the amplitude.
    VaryAmplitude,
}

/// Phase of a merged compensation tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseRule {
    /// Argument of the summed complex areas.
    #[default]
    ComplexSum,
    /// `phi = sum(phi_i A_i t_i) / A`, with `A` the merged amplitude and `t_i`
    /// in samples.
    WeightedPhase,
}

/// Reference pulses of one directed edge, calibrated to `RZX(pi/2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCalibration {
    pub control: usize,
    pub target: usize,
    pub cr: PulseEnvelope,
    pub compensation: PulseEnvelope,
    /// Hamiltonian override for simulation; the ideal model is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<CrHamiltonianParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub dt: f64,
    pub sq_gate_duration: usize,
    pub a_max: f64,
    /// Seconds, one entry per qubit.
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub edges: Vec<EdgeCalibration>,
    /// Decay rate in 1/s for the exponential fidelity model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default)]
    pub theta_policy: ThetaPolicy,
    #[serde(default)]
    pub phase_rule: PhaseRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_amplitude: Option<f64>,
}

const DEFAULT_X_AMPLITUDE: f64 = 0.2;

impl DeviceConfig {
    /// Three-qubit config modelled on a small five-qubit transmon device: qubit 1
    /// is the shared target, qubits 0 and 2 are controls.
    pub fn belem_like() -> Self {
        let gs = |amp: f64, phase: f64, dur: usize| {
            PulseEnvelope::gaussian_square(amp, phase, dur, 64.0, 128).expect("valid builtin pulse")
        };
        Self {
            dt: DEFAULT_DT,
            sq_gate_duration: 160,
            a_max: 0.5,
            t1: vec![69.3e-6, 78.0e-6, 53.6e-6],
            t2: vec![38.6e-6, 63.8e-6, 56.5e-6],
            edges: vec![
                EdgeCalibration {
                    control: 0,
                    target: 1,
                    cr: gs(0.32, 0.0, 1696),
                    compensation: gs(0.05, 0.3, 1696),
                    omega: None,
                },
                EdgeCalibration {
                    control: 2,
                    target: 1,
                    cr: gs(0.30, 0.0, 1632),
                    compensation: gs(0.045, -0.2, 1632),
                    omega: None,
                },
            ],
            beta: None,
            theta_policy: ThetaPolicy::VaryDuration,
            phase_rule: PhaseRule::ComplexSum,
            x_amplitude: None,
        }
    }

    /// Copy in which every edge uses the first edge's reference pulses.
    pub fn with_uniform_references(&self) -> Self {
        let mut c = self.clone();
        if let Some(first) = self.edges.first().cloned() {
            for e in &mut c.edges {
                e.cr = first.cr.clone();
                e.compensation = first.compensation.clone();
            }
        }
        c
    }

    pub fn num_qubits(&self) -> usize {
        self.t1.len()
    }

    pub fn x_amplitude(&self) -> f64 {
        self.x_amplitude.unwrap_or(DEFAULT_X_AMPLITUDE)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.sq_gate_duration == 0 {
            return bad("sq_gate_duration must be positive".into());
        }
        if !(self.a_max > 0.0 && self.a_max <= 1.0) {
            return bad(format!("a_max must lie in (0, 1], got {}", self.a_max));
        }
        if self.t1.len() != self.t2.len() || self.t1.is_empty() {
            return bad("t1 and t2 need one entry per qubit".into());
        }
        if self.t1.iter().chain(&self.t2).any(|t| !(t.is_finite() && *t > 0.0)) {
            return bad("coherence times must be positive".into());
        }
        if let Some(b) = self.beta {
            if !(b.is_finite() && b >= 0.0) {
                return bad(format!("beta must be non-negative, got {b}"));
            }
        }
        let xa = self.x_amplitude();
        if !(xa > 0.0 && xa <= 1.0) {
            return bad(format!("x_amplitude must lie in (0, 1], got {xa}"));
        }
        let n = self.num_qubits();
        let mut seen = BTreeMap::new();
        for e in &self.edges {
            if e.control >= n || e.target >= n || e.control == e.target {
                return bad(format!("edge ({}, {}) is not valid on {n} qubits", e.control, e.target));
            }
            if seen.insert((e.control, e.target), ()).is_some() {
                return bad(format!("edge ({}, {}) listed twice", e.control, e.target));
            }
            for p in [&e.cr, &e.compensation] {
                if p.amplitude() > self.a_max {
                    return bad(format!(
                        "reference amplitude {} on edge ({}, {}) exceeds a_max {}",
                        p.amplitude(),
                        e.control,
                        e.target,
                        self.a_max
                    ));
                }
            }
            calibrate_area(&e.cr, FRAC_PI_2)?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn edge(&self, control: usize, target: usize) -> Result<&EdgeCalibration> {
        self.edges
            .iter()
            .find(|e| e.control == control && e.target == target)
            .ok_or(Error::MissingCalibration { control, target })
    }

    pub fn calibration(&self, control: usize, target: usize) -> Result<AreaCalibration> {
        calibrate_area(&self.edge(control, target)?.cr, FRAC_PI_2)
    }

    /// Decay rate for the exponential model on `qubits`: the configured value,
    /// or the summed dephasing rates `sum 1/T2`.
    pub fn decay_rate(&self, qubits: &[usize]) -> f64 {
        self.beta.unwrap_or_else(|| qubits.iter().filter_map(|&q| self.t2.get(q)).map(|t| 1.0 / t).sum())
    }
}

/// A gate together with its schedule fragment starting at sample 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredGate {
    pub source: Gate,
    pub schedule: Schedule,
    pub duration: usize,
}

impl LoweredGate {
    fn new(source: Gate, schedule: Schedule) -> Self {
        let duration = schedule.duration();
        Self { source, schedule, duration }
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.instructions.is_empty()
    }

    fn cr_pulse(&self) -> Option<(usize, usize, &PulseEnvelope)> {
        self.schedule.instructions.iter().find_map(|i| match i.channel {
            Channel::Control { control, target } => Some((control, target, &i.envelope)),
            Channel::Drive(_) => None,
        })
    }

    fn compensation(&self) -> Option<&PulseEnvelope> {
        self.schedule.instructions.iter().find_map(|i| match i.channel {
            Channel::Drive(_) => Some(&i.envelope),
            _ => None,
        })
    }
}

/// Rescale a `pi/2` reference to the fraction `f` in `[0, 1]` of its area.
fn scale_reference(p: &PulseEnvelope, f: f64, policy: ThetaPolicy) -> Result<PulseEnvelope> {
    match policy {
        ThetaPolicy::VaryAmplitude => p.with_amplitude(p.amplitude() * f),
        ThetaPolicy::VaryDuration => {
            let target = p.real_area() * f;
            let a = p.amplitude();
            let ramps = 2 * p.risefall();
            let ramp_area = a * p.unit_area_at(ramps);
            if a > 0.0 && target >= ramp_area {
                let plateau = ((target - ramp_area) / a).round() as usize;
                p.with_duration(ramps + plateau, a)
            } else {
                let unit = p.unit_area_at(ramps.max(1));
                p.with_duration(ramps.max(1), target / unit)
            }
        }
    }
}

/// Schedule fragment for `RZX(theta)` on a calibrated edge.
pub fn lower_rzx(theta: f64, control: usize, target: usize, cfg: &DeviceConfig) -> Result<LoweredGate> {
    if !theta.is_finite() || theta.abs() > FRAC_PI_2 + ANGLE_SLACK {
        return Err(Error::AngleNotReduced(theta));
    }
    let edge = cfg.edge(control, target)?;
    let source = Gate::rzx(theta, control, target);
    let mut s = Schedule::new(cfg.dt);
    if theta == 0.0 {
        return Ok(LoweredGate::new(source, s));
    }
    let f = (theta.abs() / FRAC_PI_2).min(1.0);
    let shift = if theta < 0.0 { PI } else { 0.0 };
    let cr = scale_reference(&edge.cr, f, cfg.theta_policy)?;
    let comp = scale_reference(&edge.compensation, f, cfg.theta_policy)?;
    let cr = cr.with_phase(cr.phase() + shift);
    let comp = comp.with_phase(comp.phase() + shift);
    s.push(0, Channel::control(control, target)?, cr);
    s.push(0, Channel::Drive(target), comp);
    Ok(LoweredGate::new(source, s))
}

/// Smallest duration `>= floor` at which `shape` carries `area` within `a_max`.
fn clamp_duration(shape: &PulseEnvelope, area: f64, a_max: f64, floor: usize) -> usize {
    let mut t = floor.max(2 * shape.risefall()).max(1);
    if a_max * shape.unit_area_at(t) >= area {
        return t;
    }
    // unit area grows by exactly one per plateau sample
    let deficit = area / a_max - shape.unit_area_at(t);
    t += deficit.ceil().max(0.0) as usize;
    while a_max * shape.unit_area_at(t) < area {
        t += 1;
    }
    t
}

fn merged_compensation(comps: &[&PulseEnvelope], cfg: &DeviceConfig) -> Result<(PulseEnvelope, bool)> {
    let longest = comps
        .iter()
        .copied()
        .max_by_key(|p| p.duration())
        .ok_or_else(|| Error::Empty("no compensation pulses to merge".into()))?;
    let t0 = longest.duration();
    let (magnitude, phase) = match cfg.phase_rule {
        PhaseRule::ComplexSum => {
            let z: C64 = comps.iter().map(|p| pulse_area(p)).sum();
            (z.norm(), z.arg())
        }
        PhaseRule::WeightedPhase => {
            let s: f64 = comps.iter().map(|p| p.real_area()).sum();
            let weighted: f64 = comps.iter().map(|p| p.phase() * p.real_area()).sum();
            (s, weighted)
        }
    };
    let unit = longest.unit_area_at(t0);
    let (t, clamped) = if magnitude / unit > cfg.a_max {
        (clamp_duration(longest, magnitude, cfg.a_max, t0), true)
    } else {
        (t0, false)
    };
    let amplitude = magnitude / longest.unit_area_at(t);
    let phase = match cfg.phase_rule {
        PhaseRule::ComplexSum => phase,
        PhaseRule::WeightedPhase if amplitude > 0.0 => phase / amplitude,
        PhaseRule::WeightedPhase => 0.0,
    };
    let p = longest.with_duration(t, amplitude.min(cfg.a_max))?.with_phase(phase);
    Ok((p, clamped))
}

/// Merge RZX fragments that share a target into one parallel fragment.
pub fn merge_n(fragments: &[LoweredGate], cfg: &DeviceConfig) -> Result<LoweredGate> {
    if fragments.is_empty() {
        return Err(Error::Empty("merge_n needs at least one fragment".into()));
    }
    let mut controls = Vec::new();
    let mut thetas = Vec::new();
    let mut target = None;
    for f in fragments {
        let (c, t, theta) = match &f.source {
            Gate::Rzx { theta, control, target } => (*control, *target, *theta),
            g => return Err(Error::InvalidGate(format!("only RZX fragments can be merged, got {g}"))),
        };
        match target {
            None => target = Some(t),
            Some(t0) if t0 != t => {
                return Err(Error::NoSharedQubit(format!("fragments target qubits {t0} and {t}")));
            }
            _ => {}
        }
        if controls.contains(&c) {
            return Err(Error::InvalidGate(format!("control {c} appears in two merged fragments")));
        }
        controls.push(c);
        thetas.push(theta);
    }
    let target = target.expect("non-empty");
    let live: Vec<&LoweredGate> = fragments.iter().filter(|f| !f.is_empty()).collect();
    let source = if fragments.len() == 1 {
        fragments[0].source.clone()
    } else {
        Gate::przx(thetas, controls, target)?
    };
    match live.len() {
        0 => return Ok(LoweredGate::new(source, Schedule::new(cfg.dt))),
        1 => {
            let mut f = live[0].clone();
            f.source = source;
            return Ok(f);
        }
        _ => {}
    }
    let comps: Vec<&PulseEnvelope> = live.iter().filter_map(|f| f.compensation()).collect();
    let (comp, clamped) = merged_compensation(&comps, cfg)?;
    let mut t_cr = live.iter().filter_map(|f| f.cr_pulse()).map(|(_, _, p)| p.duration()).max().unwrap_or(0);
    if clamped {
        t_cr = t_cr.max(comp.duration());
    }
    let mut s = Schedule::new(cfg.dt);
    for f in &live {
        let (c, t, p) = f.cr_pulse().ok_or_else(|| Error::InvalidGate("fragment without CR pulse".into()))?;
        let stretched = if p.duration() == t_cr { p.clone() } else { stretch_to(p, t_cr)? };
        s.push(0, Channel::control(c, t)?, stretched);
    }
    s.push(0, Channel::Drive(target), comp);
    Ok(LoweredGate::new(source, s))
}

/// Two-fragment merge; see [`merge_n`].
pub fn merge_two(p1: &LoweredGate, p2: &LoweredGate, cfg: &DeviceConfig) -> Result<LoweredGate> {
    merge_n(&[p1.clone(), p2.clone()], cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CompileOptions {
    pub echo: bool,
    pub angle_reduce: bool,
}

fn single_block(kind: SingleQubitKind, cfg: &DeviceConfig) -> Result<Option<PulseEnvelope>> {
    use SingleQubitKind::*;
    let a = cfg.x_amplitude();
    let (amp, phase) = match kind {
        Z | S | Sdg | Rz(_) => return Ok(None),
        X => (a, 0.0),
        SqrtX => (a / 2.0, 0.0),
        X32 => (a / 2.0, PI),
        H => (0.0, 0.0),
    };
    Ok(Some(PulseEnvelope::constant(amp, phase, cfg.sq_gate_duration)?))
}

/// Schedule fragments for one gate, to be placed in order.
fn lower_gate(g: &Gate, cfg: &DeviceConfig, mode: Mode) -> Result<Vec<LoweredGate>> {
    match g {
        Gate::Rzx { theta, control, target } => Ok(vec![lower_rzx(*theta, *control, *target, cfg)?]),
        Gate::Przx { thetas, controls, target } => {
            let parts = thetas
                .iter()
                .zip(controls)
                .map(|(th, c)| lower_rzx(*th, *c, *target, cfg))
                .collect::<Result<Vec<_>>>()?;
            match mode {
                Mode::Serial => Ok(parts),
                Mode::Parallel => Ok(vec![merge_n(&parts, cfg)?]),
            }
        }
        Gate::Cnot { .. } | Gate::Cz { .. } => {
            let sub = gate_compiler::decompose_two_qubit_gates(
                &Circuit::from_gates(g.qubits().into_iter().max().unwrap_or(0) + 1, vec![g.clone()])?,
                CnotVariant::Simple,
            )?;
            let mut out = Vec::new();
            for h in sub.gates() {
                out.extend(lower_gate(h, cfg, mode)?);
            }
            Ok(out)
        }
        Gate::Single { kind, qubit } => {
            let mut s = Schedule::new(cfg.dt);
            if let Some(p) = single_block(*kind, cfg)? {
                s.push(0, Channel::Drive(*qubit), p);
            }
            Ok(vec![LoweredGate::new(g.clone(), s)])
        }
    }
}

/// Gate-level placement of a lowered circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub fragment: LoweredGate,
    pub start: i64,
}

/// Place every gate ASAP per qubit, then slide single-qubit blocks as late as
/// their successors allow.
pub fn place_circuit(c: &Circuit, cfg: &DeviceConfig, mode: Mode) -> Result<Vec<Placement>> {
    let mut frags = Vec::new();
    for g in c.gates() {
        frags.extend(lower_gate(g, cfg, mode)?);
    }
    let mut frontier = vec![0i64; c.num_qubits()];
    let mut placed: Vec<Placement> = Vec::with_capacity(frags.len());
    for f in frags {
        let qs = f.source.qubits();
        if f.duration == 0 {
            continue;
        }
        let start = qs.iter().map(|&q| frontier[q]).max().unwrap_or(0);
        for &q in &qs {
            frontier[q] = start + f.duration as i64;
        }
        placed.push(Placement { fragment: f, start });
    }
    let total = frontier.iter().copied().max().unwrap_or(0);
    let mut next_use = vec![total; c.num_qubits()];
    for p in placed.iter_mut().rev() {
        let qs = p.fragment.source.qubits();
        if let [q] = qs.as_slice() {
            p.start = next_use[*q] - p.fragment.duration as i64;
        }
        for &q in &qs {
            next_use[q] = p.start;
        }
    }
    Ok(placed)
}

/// Lower a compiled circuit to one schedule.
pub fn lower_circuit(c: &Circuit, cfg: &DeviceConfig, mode: Mode) -> Result<Schedule> {
    let mut s = Schedule::new(cfg.dt);
    for p in place_circuit(c, cfg, mode)? {
        s.insert(p.start, &p.fragment.schedule);
    }
    let s = s.sorted();
    if let Some(v) = validate_schedule(&s).first() {
        return Err(Error::InvalidCircuit(format!("lowering produced an invalid schedule: {v}")));
    }
    Ok(s)
}

/// Replace PRZX gates by the equivalent sequence of RZX gates.
pub fn serialize_przx(c: &Circuit) -> Result<Circuit> {
    c.map_gates(|g| match g {
        Gate::Przx { thetas, controls, target } => Circuit::from_gates(
            c.num_qubits(),
            thetas.iter().zip(controls).map(|(th, ctl)| Gate::rzx(*th, *ctl, *target)).collect(),
        ),
        other => Circuit::from_gates(c.num_qubits(), vec![other.clone()]),
    })
}

/// Fuse runs of adjacent RZX gates with a common target and distinct controls
/// into single PRZX gates.
pub fn parallelize_rzx(c: &Circuit) -> Result<Circuit> {
    let mut out = Circuit::new(c.num_qubits());
    let gates = c.gates();
    let mut i = 0;
    while i < gates.len() {
        if let Gate::Rzx { target, .. } = &gates[i] {
            let mut thetas = Vec::new();
            let mut controls = Vec::new();
            let mut j = i;
            while let Some(Gate::Rzx { theta, control, target: t }) = gates.get(j) {
                if t != target || controls.contains(control) {
                    break;
                }
                thetas.push(*theta);
                controls.push(*control);
                j += 1;
            }
            if controls.len() > 1 {
                out.push(Gate::przx(thetas, controls, *target)?)?;
            } else {
                out.push(gates[i].clone())?;
            }
            i = j;
        } else {
            out.push(gates[i].clone())?;
            i += 1;
        }
    }
    Ok(out)
}

/// Gate-level pipeline run before lowering: two-qubit decomposition, PRZX
/// fusion or splitting for the mode, angle reduction and echo expansion.
pub fn prepare_circuit(c: &Circuit, mode: Mode, opts: CompileOptions) -> Result<Circuit> {
    let mut c = gate_compiler::decompose_two_qubit_gates(c, CnotVariant::Simple)?;
    c = match mode {
        Mode::Serial => serialize_przx(&c)?,
        Mode::Parallel => parallelize_rzx(&c)?,
    };
    if opts.angle_reduce {
        c = gate_compiler::reduce_circuit(&c)?;
    }
    if opts.echo {
        c = gate_compiler::echo_circuit(&c)?;
    }
    Ok(c)
}

pub fn compile(c: &Circuit, cfg: &DeviceConfig, mode: Mode, opts: CompileOptions) -> Result<Schedule> {
    lower_circuit(&prepare_circuit(c, mode, opts)?, cfg, mode)
}

/// Samples during which at least one control channel is driven.
pub fn cr_busy_samples(s: &Schedule) -> usize {
    let mut spans: Vec<(i64, i64)> = s
        .instructions
        .iter()
        .filter(|i| matches!(i.channel, Channel::Control { .. }))
        .map(|i| (i.start, i.end()))
        .collect();
    spans.sort_unstable();
    let mut total = 0;
    let mut cur: Option<(i64, i64)> = None;
    for (a, b) in spans {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DurationReport {
    pub serial_samples: usize,
    pub parallel_samples: usize,
    pub t_serial: f64,
    pub t_parallel: f64,
    pub ratio: f64,
    pub cr_serial_samples: usize,
    pub cr_parallel_samples: usize,
}

pub fn duration_report(c: &Circuit, cfg: &DeviceConfig, opts: CompileOptions) -> Result<DurationReport> {
    let s = compile(c, cfg, Mode::Serial, opts)?;
    let p = compile(c, cfg, Mode::Parallel, opts)?;
    let (ns, np) = (s.duration(), p.duration());
    let ratio = if ns == 0 { 1.0 } else { np as f64 / ns as f64 };
    Ok(DurationReport {
        serial_samples: ns,
        parallel_samples: np,
        t_serial: ns as f64 * cfg.dt,
        t_parallel: np as f64 * cfg.dt,
        ratio,
        cr_serial_samples: cr_busy_samples(&s),
        cr_parallel_samples: cr_busy_samples(&p),
    })
}
