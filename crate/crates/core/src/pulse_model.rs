//! Pulse envelopes, channels, timed schedules and the area/angle calibration.
//!
//! A [`PulseEnvelope`] lives on an integer sample grid. Gaussian-square
//! envelopes use the lifted convention: each edge is a Gaussian centred on
//! the plateau boundary, shifted down by its boundary value and rescaled so
//! that the first and last samples are exactly zero and the plateau sits
//! exactly at the peak amplitude.
//!
//! The rotation angle a pulse implements is proportional to its integrated
//! area; [`AreaCalibration`] holds that proportionality constant.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Default sample period: 2/9 ns.
pub const DEFAULT_DT: f64 = 2.0 / 9.0 * 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    GaussianSquare,
    Constant,
}

/// A single pulse shape with amplitude and phase.
///
/// Invariants (enforced by the constructors):
/// - `amplitude >= 0`, `sigma > 0`
/// - `duration >= 2 * risefall`
/// - Gaussian-square pulses have `risefall >= 1` so both endpoints are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnvelopeJson", into = "EnvelopeJson")]
pub struct PulseEnvelope {
    kind: EnvelopeKind,
    amplitude: f64,
    phase: f64,
    duration: usize,
    sigma: f64,
    risefall: usize,
}

impl PulseEnvelope {
    pub fn gaussian_square(
        amplitude: f64,
        phase: f64,
        duration: usize,
        sigma: f64,
        risefall: usize,
    ) -> Result<Self> {
        let p = Self {
            kind: EnvelopeKind::GaussianSquare,
            amplitude,
            phase,
            duration,
            sigma,
            risefall,
        };
        p.check()?;
        Ok(p)
    }

    /// Gaussian-square pulse with the default shape: `sigma = duration / 8`
    /// and `risefall = 2 * sigma`.
    pub fn gaussian_square_default(amplitude: f64, phase: f64, duration: usize) -> Result<Self> {
        let sigma = duration as f64 / 8.0;
        let risefall = (2.0 * sigma).round() as usize;
        Self::gaussian_square(amplitude, phase, duration, sigma, risefall.max(1))
    }

    pub fn constant(amplitude: f64, phase: f64, duration: usize) -> Result<Self> {
        let p = Self {
            kind: EnvelopeKind::Constant,
            amplitude,
            phase,
            duration,
            sigma: 1.0,
            risefall: 0,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidPulse(format!(
                "amplitude must be finite and non-negative, got {}",
                self.amplitude
            )));
        }
        if !self.phase.is_finite() {
            return Err(Error::InvalidPulse("phase must be finite".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidPulse(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.duration < 2 * self.risefall {
            return Err(Error::InvalidPulse(format!(
                "duration {} shorter than two ramps of {}",
                self.duration, self.risefall
            )));
        }
        if self.kind == EnvelopeKind::GaussianSquare && self.risefall == 0 {
            return Err(Error::InvalidPulse("gaussian-square pulse needs risefall >= 1".into()));
        }
        Ok(())
    }

    pub fn kind(&self) -> EnvelopeKind {
        self.kind
    }
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
    pub fn phase(&self) -> f64 {
        self.phase
    }
    pub fn duration(&self) -> usize {
        self.duration
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn risefall(&self) -> usize {
        self.risefall
    }

    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        let p = Self { amplitude, ..self.clone() };
        p.check()?;
        Ok(p)
    }

    pub fn with_phase(&self, phase: f64) -> Self {
        Self { phase, ..self.clone() }
    }

    /// Same shape parameters at a new duration and amplitude.
    pub fn with_duration(&self, duration: usize, amplitude: f64) -> Result<Self> {
        let p = Self { duration, amplitude, ..self.clone() };
        p.check()?;
        Ok(p)
    }

    /// Unit-amplitude value of the lifted Gaussian rise at sample `k < risefall`.
    fn ramp(&self, k: usize) -> f64 {
        let rf = self.risefall as f64;
        let two_s2 = 2.0 * self.sigma * self.sigma;
        let base = (-(rf * rf) / two_s2).exp();
        let d = k as f64 - rf;
        let g = (-(d * d) / two_s2).exp();
        (g - base) / (1.0 - base)
    }

    /// Real envelope value (without phase) at sample `t`; zero outside the pulse.
    pub fn sample(&self, t: usize) -> f64 {
        if t >= self.duration {
            return 0.0;
        }
        match self.kind {
            EnvelopeKind::Constant => self.amplitude,
            EnvelopeKind::GaussianSquare => {
                let rf = self.risefall;
                if t < rf {
                    self.amplitude * self.ramp(t)
                } else if t >= self.duration - rf {
                    self.amplitude * self.ramp(self.duration - 1 - t)
                } else {
                    self.amplitude
                }
            }
        }
    }

    /// Whether sample `t` lies on the flat part of the envelope.
    pub fn is_flat_at(&self, t: usize) -> bool {
        match self.kind {
            EnvelopeKind::Constant => true,
            EnvelopeKind::GaussianSquare => t >= self.risefall && t < self.duration - self.risefall,
        }
    }

    /// Sample range `[start, end)` of the plateau, relative to the pulse start.
    pub fn plateau(&self) -> (usize, usize) {
        match self.kind {
            EnvelopeKind::Constant => (0, self.duration),
            EnvelopeKind::GaussianSquare => (self.risefall, self.duration - self.risefall),
        }
    }

    /// Sum of the real envelope over all samples.
    pub fn real_area(&self) -> f64 {
        match self.kind {
            EnvelopeKind::Constant => self.amplitude * self.duration as f64,
            EnvelopeKind::GaussianSquare => {
                let ramps: f64 = (0..self.risefall).map(|k| self.ramp(k)).sum();
                self.amplitude * (2.0 * ramps + (self.duration - 2 * self.risefall) as f64)
            }
        }
    }

    /// Area of the same shape at unit amplitude and the given duration.
    pub fn unit_area_at(&self, duration: usize) -> f64 {
        let unit = Self { amplitude: 1.0, duration, ..self.clone() };
        unit.real_area()
    }

    pub fn end(&self, start: i64) -> i64 {
        start + self.duration as i64
    }
}

/// Complex pulse area `e^{i phi} * sum_t envelope(t)`, in amplitude-samples.
pub fn pulse_area(p: &PulseEnvelope) -> C64 {
    C64::from_polar(p.real_area(), p.phase)
}

/// Proportionality between pulse area and implemented rotation angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaCalibration {
    k: f64,
}

impl AreaCalibration {
    pub fn new(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::DegenerateCalibration);
        }
        Ok(Self { k })
    }

    /// Radians per amplitude-sample.
    pub fn k(&self) -> f64 {
        self.k
    }
}

/// Calibrate `k` so that `reference` implements `theta_ref`.
pub fn calibrate_area(reference: &PulseEnvelope, theta_ref: f64) -> Result<AreaCalibration> {
    let area = pulse_area(reference).norm();
    if area <= 0.0 {
        return Err(Error::DegenerateCalibration);
    }
    AreaCalibration::new(theta_ref / area)
}

/// Rotation angle implemented by `p`; the sign follows `cos(phase)`.
pub fn theta_of_pulse(p: &PulseEnvelope, cal: &AreaCalibration) -> f64 {
    let area = pulse_area(p);
    let sign = if area.re < 0.0 { -1.0 } else { 1.0 };
    sign * cal.k * area.norm()
}

/// Rescale `p` to `duration` samples, adjusting the amplitude so the area is kept.
pub fn stretch_to(p: &PulseEnvelope, duration: usize) -> Result<PulseEnvelope> {
    if duration < 2 * p.risefall || duration == 0 {
        return Err(Error::InvalidPulse(format!(
            "stretched duration {} shorter than two ramps of {}",
            duration, p.risefall
        )));
    }
    let target = p.real_area();
    let amplitude = target / p.unit_area_at(duration);
    if amplitude > 1.0 {
        return Err(Error::AmplitudeSaturation { required: amplitude, limit: 1.0 });
    }
    p.with_duration(duration, amplitude)
}

/// Stretch the duration by `factor` (rounded to the sample grid) at constant area.
pub fn stretch_pulse(p: &PulseEnvelope, factor: f64) -> Result<PulseEnvelope> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::InvalidPulse(format!("stretch factor must be positive, got {factor}")));
    }
    let duration = (p.duration as f64 * factor).round() as usize;
    stretch_to(p, duration)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "ChannelJson", into = "ChannelJson")]
pub enum Channel {
    Drive(usize),
    Control { control: usize, target: usize },
}

impl Channel {
    pub fn control(control: usize, target: usize) -> Result<Self> {
        if control == target {
            return Err(Error::InvalidPulse(format!(
                "control channel endpoints must differ, got ({control}, {target})"
            )));
        }
        Ok(Channel::Control { control, target })
    }

    pub fn qubits(&self) -> Vec<usize> {
        match *self {
            Channel::Drive(q) => vec![q],
            Channel::Control { control, target } => vec![control, target],
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Channel::Drive(q) => write!(f, "d{q}"),
            Channel::Control { control, target } => write!(f, "u{control}_{target}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub start: i64,
    pub channel: Channel,
    pub envelope: PulseEnvelope,
}

impl Instruction {
    pub fn end(&self) -> i64 {
        self.envelope.end(self.start)
    }
}

/// Timed pulse instructions on a common sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub dt: f64,
    pub instructions: Vec<Instruction>,
}

/// A schedule-level problem found by [`validate_schedule`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    NegativeStart { channel: Channel, start: i64 },
    /// Two pulses on one channel; intervals are `(start, duration)`, sorted.
    Overlap { channel: Channel, first: (i64, usize), second: (i64, usize), at: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeStart { channel, start } => {
                write!(f, "{channel}: negative start sample {start}")
            }
            Violation::Overlap { channel, first, second, at } => write!(
                f,
                "{channel}: pulses [{}, {}) and [{}, {}) overlap at sample {at}",
                first.0,
                first.0 + first.1 as i64,
                second.0,
                second.0 + second.1 as i64
            ),
        }
    }
}

impl Schedule {
    pub fn new(dt: f64) -> Self {
        Self { dt, instructions: Vec::new() }
    }

    pub fn push(&mut self, start: i64, channel: Channel, envelope: PulseEnvelope) {
        self.instructions.push(Instruction { start, channel, envelope });
    }

    /// Total length in samples (end of the last instruction).
    pub fn duration(&self) -> usize {
        self.instructions.iter().map(|i| i.end().max(0)).max().unwrap_or(0) as usize
    }

    pub fn duration_seconds(&self) -> f64 {
        self.duration() as f64 * self.dt
    }

    /// Copy every instruction of `other` into `self`, shifted by `offset`.
    pub fn insert(&mut self, offset: i64, other: &Schedule) {
        for i in &other.instructions {
            self.push(i.start + offset, i.channel, i.envelope.clone());
        }
    }

    pub fn on_channel(&self, channel: Channel) -> impl Iterator<Item = &Instruction> {
        self.instructions.iter().filter(move |i| i.channel == channel)
    }

    pub fn qubits(&self) -> Vec<usize> {
        let mut qs: Vec<usize> =
            self.instructions.iter().flat_map(|i| i.channel.qubits()).collect();
        qs.sort_unstable();
        qs.dedup();
        qs
    }

    /// Instructions sorted by start, then channel, for stable output.
    pub fn sorted(&self) -> Schedule {
        let mut s = self.clone();
        s.instructions.sort_by(|a, b| a.start.cmp(&b.start).then(a.channel.cmp(&b.channel)));
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Every negative start and every same-channel overlap, in canonical order.
pub fn validate_schedule(s: &Schedule) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_channel: BTreeMap<Channel, Vec<(i64, usize)>> = BTreeMap::new();
    for ins in &s.instructions {
        if ins.start < 0 {
            out.push(Violation::NegativeStart { channel: ins.channel, start: ins.start });
        }
        if ins.envelope.duration() > 0 {
            by_channel.entry(ins.channel).or_default().push((ins.start, ins.envelope.duration()));
        }
    }
    for (channel, mut spans) in by_channel {
        spans.sort_unstable();
        for i in 0..spans.len() {
            for j in (i + 1)..spans.len() {
                let (a, b) = (spans[i], spans[j]);
                if b.0 >= a.0 + a.1 as i64 {
                    break;
                }
                out.push(Violation::Overlap { channel, first: a, second: b, at: b.0 });
            }
        }
    }
    out.sort();
    out
}

#[derive(Serialize, Deserialize)]
struct EnvelopeJson {
    kind: EnvelopeKind,
    amplitude: f64,
    phase: f64,
    duration: usize,
    sigma: f64,
    risefall: usize,
}

impl TryFrom<EnvelopeJson> for PulseEnvelope {
    type Error = Error;

    fn try_from(j: EnvelopeJson) -> Result<Self> {
        let p = PulseEnvelope {
            kind: j.kind,
            amplitude: j.amplitude,
            phase: j.phase,
            duration: j.duration,
            sigma: j.sigma,
            risefall: j.risefall,
        };
        p.check()?;
        Ok(p)
    }
}

impl From<PulseEnvelope> for EnvelopeJson {
    fn from(p: PulseEnvelope) -> Self {
        EnvelopeJson {
            kind: p.kind,
            amplitude: p.amplitude,
            phase: p.phase,
            duration: p.duration,
            sigma: p.sigma,
            risefall: p.risefall,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ChannelKindJson {
    Drive,
    Control,
}

#[derive(Serialize, Deserialize)]
struct ChannelJson {
    kind: ChannelKindJson,
    qubits: Vec<usize>,
}

impl TryFrom<ChannelJson> for Channel {
    type Error = Error;

    fn try_from(j: ChannelJson) -> Result<Self> {
        match (j.kind, j.qubits.as_slice()) {
            (ChannelKindJson::Drive, [q]) => Ok(Channel::Drive(*q)),
            (ChannelKindJson::Control, [c, t]) => Channel::control(*c, *t),
            (_, qs) => Err(Error::InvalidPulse(format!("channel has wrong qubit count {}", qs.len()))),
        }
    }
}

impl From<Channel> for ChannelJson {
    fn from(c: Channel) -> Self {
        match c {
            Channel::Drive(q) => ChannelJson { kind: ChannelKindJson::Drive, qubits: vec![q] },
            Channel::Control { control, target } => {
                ChannelJson { kind: ChannelKindJson::Control, qubits: vec![control, target] }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Independent sample-by-sample construction of the lifted Gaussian square.
    fn oracle_samples(a: f64, dur: usize, rf: usize, sigma: f64) -> Vec<f64> {
        let edge = |x: f64| (-(x * x) / (2.0 * sigma * sigma)).exp();
        let base = edge(rf as f64);
        (0..dur)
            .map(|t| {
                let dist = if t < rf {
                    rf as f64 - t as f64
                } else if t + rf >= dur {
                    (t + rf + 1 - dur) as f64
                } else {
                    0.0
                };
                a * (edge(dist) - base) / (1.0 - base)
            })
            .collect()
    }

    #[test]
    fn constant_area() {
        let p = PulseEnvelope::constant(0.5, 0.0, 100).unwrap();
        let a = pulse_area(&p);
        assert!((a.re - 50.0).abs() < 1e-12 && a.im.abs() < 1e-12);
        let p = PulseEnvelope::constant(0.5, PI, 100).unwrap();
        let a = pulse_area(&p);
        assert!((a.re + 50.0).abs() < 1e-12 && a.im.abs() < 1e-12);
    }

    #[test]
    fn gaussian_square_area_matches_summation() {
        let p = PulseEnvelope::gaussian_square(0.2, 0.0, 160, 16.0, 32).unwrap();
        let oracle: f64 = oracle_samples(0.2, 160, 32, 16.0).iter().sum();
        // frozen from the oracle above
        assert!((oracle - 25.850_502_495_045_408).abs() < 1e-9, "{oracle}");
        assert!((pulse_area(&p).re - oracle).abs() < 1e-12);
    }

    #[test]
    fn envelope_endpoints_and_plateau() {
        let p = PulseEnvelope::gaussian_square(0.3, 0.0, 200, 20.0, 40).unwrap();
        assert_eq!(p.sample(0), 0.0);
        assert_eq!(p.sample(199), 0.0);
        assert_eq!(p.sample(100), 0.3);
        let oracle = oracle_samples(0.3, 200, 40, 20.0);
        for (t, v) in oracle.iter().enumerate() {
            assert!((p.sample(t) - v).abs() < 1e-14, "sample {t}");
        }
    }

    #[test]
    fn calibration_round_trip() {
        let r = PulseEnvelope::constant(0.5, 0.0, 100).unwrap();
        let cal = calibrate_area(&r, FRAC_PI_2).unwrap();
        assert!((cal.k() - PI / 100.0).abs() < 1e-15);
        assert!((theta_of_pulse(&r, &cal) - FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(calibrate_area(&r, 0.0), Err(Error::DegenerateCalibration)));
        let zero = PulseEnvelope::constant(0.0, 0.0, 100).unwrap();
        assert!(matches!(calibrate_area(&zero, 1.0), Err(Error::DegenerateCalibration)));
        assert_eq!(theta_of_pulse(&zero, &cal), 0.0);
    }

    #[test]
    fn area_invariance_under_duration_amplitude_trade() {
        let r = PulseEnvelope::constant(0.4, 0.0, 120).unwrap();
        let cal = calibrate_area(&r, FRAC_PI_2).unwrap();
        let q = PulseEnvelope::constant(0.2, 0.0, 240).unwrap();
        assert!((theta_of_pulse(&q, &cal) - FRAC_PI_2).abs() < 1e-9);
        let neg = r.with_phase(PI);
        assert!((theta_of_pulse(&neg, &cal) + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn stretch_examples() {
        let p = PulseEnvelope::constant(0.2, 0.0, 100).unwrap();
        let s = stretch_pulse(&p, 2.0).unwrap();
        assert_eq!(s.duration(), 200);
        assert!((s.amplitude() - 0.1).abs() < 1e-15);
        assert!(matches!(stretch_pulse(&p, 0.1), Err(Error::AmplitudeSaturation { .. })));

        let g = PulseEnvelope::gaussian_square(0.2, 0.3, 160, 16.0, 32).unwrap();
        let s = stretch_pulse(&g, 1.5).unwrap();
        assert_eq!(s.duration(), 240);
        let oracle: f64 = oracle_samples(s.amplitude(), 240, 32, 16.0).iter().sum();
        let before: f64 = oracle_samples(0.2, 160, 32, 16.0).iter().sum();
        assert!((oracle - before).abs() <= 0.2);
        assert!((s.phase() - 0.3).abs() < 1e-15);

        assert!(stretch_pulse(&g, 0.3).is_err());
    }

    #[test]
    fn schedule_validation() {
        let env = PulseEnvelope::constant(0.1, 0.0, 100).unwrap();
        let ch = Channel::control(0, 1).unwrap();
        assert!(validate_schedule(&Schedule::new(DEFAULT_DT)).is_empty());

        let mut s = Schedule::new(DEFAULT_DT);
        s.push(0, ch, env.clone());
        s.push(50, ch, env.clone());
        let v = validate_schedule(&s);
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Overlap { at: 50, .. }));

        let mut s = Schedule::new(DEFAULT_DT);
        s.push(0, ch, env.clone());
        s.push(50, Channel::control(2, 1).unwrap(), env.clone());
        assert!(validate_schedule(&s).is_empty());

        let mut s = Schedule::new(DEFAULT_DT);
        s.push(-3, Channel::Drive(0), env);
        assert!(matches!(validate_schedule(&s)[0], Violation::NegativeStart { start: -3, .. }));
        assert!(Channel::control(1, 1).is_err());
    }

    #[test]
    fn schedule_json_layout() {
        let mut s = Schedule::new(0.5);
        s.push(3, Channel::control(0, 1).unwrap(), PulseEnvelope::constant(0.25, 0.0, 8).unwrap());
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(
            js,
            r#"{"dt":0.5,"instructions":[{"start":3,"channel":{"kind":"control","qubits":[0,1]},"envelope":{"kind":"constant","amplitude":0.25,"phase":0.0,"duration":8,"sigma":1.0,"risefall":0}}]}"#
        );
        let back = Schedule::from_json(&js).unwrap();
        assert_eq!(back, s);
        let bad = js.replace("\"qubits\":[0,1]", "\"qubits\":[1,1]");
        assert!(Schedule::from_json(&bad).is_err());
    }
}
