use thiserror::Error;

/// Errors produced anywhere in the compilation, lowering, simulation and
/// benchmarking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("degenerate calibration pulse")]
    DegenerateCalibration,

    #[error("amplitude saturation: required amplitude {required} exceeds limit {limit}")]
    AmplitudeSaturation { required: f64, limit: f64 },

    #[error("invalid gate: {0}")]
    InvalidGate(String),

    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),

    #[error("angle not reduced: |{0}| > pi/2")]
    AngleNotReduced(f64),

    #[error("missing calibration for edge ({control}, {target})")]
    MissingCalibration { control: usize, target: usize },

    #[error("no shared qubit: {0}")]
    NoSharedQubit(String),

    #[error("no parity tree: {0}")]
    NoParityTree(String),

    #[error("invalid device config: {0}")]
    InvalidConfig(String),

    #[error("too many qubits for dense simulation: {0} (max {max})", max = crate::simulator::MAX_QUBITS)]
    TooManyQubits(usize),

    #[error("missing Hamiltonian parameters for channel {0}")]
    MissingHamiltonian(String),

    #[error("below mixed-state floor: F_S = {fidelity} < F0 = {floor}")]
    BelowMixedFloor { fidelity: f64, floor: f64 },

    #[error("normalization requires negative blend weight (F_mle / F_id = {0} > 1)")]
    NegativeBlend(f64),

    #[error("gate is not a Clifford operation")]
    NotClifford,

    #[error("invalid benchmark config: {0}")]
    InvalidBenchmark(String),

    #[error("invalid noise model: {0}")]
    InvalidNoise(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
