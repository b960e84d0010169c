//! `pulseforge`: compile circuits to cross-resonance schedules, verify them by
//! simulation, run cycle benchmarks, analyze layouts and export plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use pulseforge_core::gate_compiler::{Circuit, Gate};
use pulseforge_core::layout_analyzer::{builtin_layout, gain_curve, gain_curve_csv, LayoutKind};
use pulseforge_core::noise_bench::{
    cycle_benchmark, fidelity_decay, predict_parallel_fidelity, CBConfig, CbNoise, DecoherenceParams,
    PauliNoiseModel,
};
use pulseforge_core::pulse_model::Schedule;
use pulseforge_core::pulse_parallelizer::{compile, duration_report, CompileOptions, DeviceConfig, Mode};
use pulseforge_core::simulator::{
    choi_of_unitary, phase_invariant_fidelity, ptm_matrix, ptm_to_csv, simulate_compiled, truth_table,
    truth_table_to_csv, unitary_of_circuit, SimulationModel,
};
use pulseforge_core::Error;

#[derive(Parser)]
#[command(name = "pulseforge", version, about = "Pulse-level parallel RZX compiler and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower a circuit to a pulse schedule and report serial/parallel durations.
    Compile(CompileArgs),
    /// Simulate serial and parallel schedules and compare fidelities.
    Verify(VerifyArgs),
    /// Cycle-benchmark a Clifford gate under a Pauli noise model.
    Bench(BenchArgs),
    /// Serial and parallel maximum Pauli-term sizes per depth.
    Layout(LayoutArgs),
    /// Write CSV bundles for plotting.
    ExportFigdata(ExportArgs),
}

#[derive(Args)]
struct DeviceArg {
    /// Device calibration JSON; the built-in 3-qubit device is used when absent.
    #[arg(long, env = "PULSEFORGE_CONFIG")]
    device: Option<PathBuf>,
}

#[derive(Args)]
struct CompileFlags {
    #[arg(long)]
    echo: bool,
    #[arg(long)]
    angle_reduce: bool,
}

impl CompileFlags {
    fn options(&self) -> CompileOptions {
        CompileOptions { echo: self.echo, angle_reduce: self.angle_reduce }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Serial,
    Parallel,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Serial => Mode::Serial,
            ModeArg::Parallel => Mode::Parallel,
        }
    }
}

#[derive(Args)]
struct CompileArgs {
    circuit: PathBuf,
    #[command(flatten)]
    device: DeviceArg,
    #[arg(long, value_enum, default_value = "parallel")]
    mode: ModeArg,
    #[command(flatten)]
    flags: CompileFlags,
    /// Output directory for schedule.json, report.json and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    circuit: PathBuf,
    #[command(flatten)]
    device: DeviceArg,
    #[command(flatten)]
    flags: CompileFlags,
    /// Output directory for verify.csv and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Circuit JSON holding the benchmarked gate.
    gate: PathBuf,
    /// `{"gate": <pauli noise>, "twirl": <pauli noise>}`.
    #[arg(long)]
    noise: PathBuf,
    /// Benchmark settings; defaults apply when absent.
    #[arg(long)]
    cb: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long, value_parser = parse_depths)]
    depths: Option<Depths>,
    /// Run the reference sequences only.
    #[arg(long)]
    reference_only: bool,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LayoutArgs {
    /// `lattice:WxH`, `hex:R`, `heavyhex:RxC`, `brisbane`, `complete:N` or a JSON file.
    layout: String,
    #[arg(long, value_parser = parse_depths, default_value = "1..4")]
    depths: Depths,
    /// CSV output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum Figure {
    Fig1,
    Fig2,
    Fig5,
    Fig7,
    Ptm,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(value_enum)]
    which: Figure,
    #[command(flatten)]
    device: DeviceArg,
    /// Circuit for fig1; two RZX(pi/2) gates sharing qubit 1 when absent.
    #[arg(long)]
    circuit: Option<PathBuf>,
    #[command(flatten)]
    flags: CompileFlags,
    #[arg(long, default_value = "brisbane")]
    layout: String,
    #[arg(long, value_parser = parse_depths, default_value = "1..4")]
    depths: Depths,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    shots: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Debug)]
struct Depths(Vec<usize>);

/// `a..b` (inclusive) or a comma-separated list.
fn parse_depths(s: &str) -> Result<Depths, String> {
    let bad = || format!("cannot parse depths '{s}'");
    let v: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if v.is_empty() {
        return Err(bad());
    }
    Ok(Depths(v))
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Domain(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Domain(_) => 1,
            Failure::Input(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Domain(m) => m,
        }
    }

    fn core(context: &str, e: Error) -> Self {
        let msg = if context.is_empty() { e.to_string() } else { format!("{context}: {e}") };
        match e {
            Error::Json(_)
            | Error::Io(_)
            | Error::InvalidConfig(_)
            | Error::InvalidNoise(_)
            | Error::InvalidBenchmark(_)
            | Error::InvalidLayout(_) => Failure::Input(msg),
            _ => Failure::Domain(msg),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::core("", e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn parse_file<T>(path: &Path, parse: impl FnOnce(&str) -> pulseforge_core::Result<T>) -> CliResult<T> {
    parse(&read(path)?).map_err(|e| Failure::core(&path.display().to_string(), e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<FileRecord>,
    seed: Option<u64>,
    config_hash: Option<String>,
    outputs: Vec<FileRecord>,
    tool_version: String,
}

/// Collects inputs and written outputs of one run.
struct Run {
    command: String,
    inputs: Vec<FileRecord>,
    seed: Option<u64>,
    config_hash: Option<String>,
    outputs: Vec<FileRecord>,
}

impl Run {
    fn new(command: &str) -> Self {
        Self { command: command.into(), inputs: vec![], seed: None, config_hash: None, outputs: vec![] }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn write(&mut self, path: &Path, contents: &str) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
        }
        fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        self.outputs.push(FileRecord { path: path.display().to_string(), sha256: sha256_hex(contents.as_bytes()) });
        Ok(())
    }

    fn finish(self, manifest_path: &Path) -> CliResult<()> {
        let m = RunManifest {
            command: self.command,
            inputs: self.inputs,
            seed: self.seed,
            config_hash: self.config_hash,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| Failure::Domain(e.to_string()))? + "\n";
        fs::write(manifest_path, text).map_err(|e| Failure::Input(format!("{}: {e}", manifest_path.display())))
    }
}

fn load_device(arg: &DeviceArg, run: &mut Run) -> CliResult<DeviceConfig> {
    let cfg = match &arg.device {
        Some(p) => {
            run.input(p)?;
            parse_file(p, DeviceConfig::from_json)?
        }
        None => DeviceConfig::belem_like(),
    };
    run.config_hash = Some(sha256_hex(cfg.to_json()?.as_bytes()));
    Ok(cfg)
}

fn load_circuit(path: &Path, run: &mut Run) -> CliResult<Circuit> {
    run.input(path)?;
    parse_file(path, Circuit::from_json)
}

fn file_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_compile(a: &CompileArgs) -> CliResult<()> {
    let mut run = Run::new("compile");
    let c = load_circuit(&a.circuit, &mut run)?;
    let cfg = load_device(&a.device, &mut run)?;
    let opts = a.flags.options();
    let report = duration_report(&c, &cfg, opts)?;
    println!("t_serial = {:.6e} s ({} samples)", report.t_serial, report.serial_samples);
    println!("t_parallel = {:.6e} s ({} samples)", report.t_parallel, report.parallel_samples);
    println!("ratio = {:.6}", report.ratio);
    if let Some(dir) = &a.out {
        let schedule = compile(&c, &cfg, a.mode.into(), opts)?;
        run.write(&dir.join("schedule.json"), &(schedule.to_json()? + "\n"))?;
        let rep = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
        run.write(&dir.join("report.json"), &rep)?;
        run.finish(&dir.join("manifest.json"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Verification {
    t_serial: f64,
    t_parallel: f64,
    coherent_serial: f64,
    coherent_parallel: f64,
    f_serial: f64,
    f_parallel: f64,
    predicted_parallel: f64,
}

fn verify(c: &Circuit, cfg: &DeviceConfig, opts: CompileOptions) -> CliResult<Verification> {
    let model = SimulationModel::from_config(cfg)?;
    let ideal = unitary_of_circuit(&c.widened(model.num_qubits)?)?;
    let (us, ns) = simulate_compiled(c, cfg, Mode::Serial, opts, &model)?;
    let (up, np) = simulate_compiled(c, cfg, Mode::Parallel, opts, &model)?;
    let t_serial = ns as f64 * cfg.dt;
    let t_parallel = np as f64 * cfg.dt;
    let used: Vec<usize> = (0..c.num_qubits()).filter(|q| c.gates().iter().any(|g| g.qubits().contains(q))).collect();
    let params = DecoherenceParams::new(cfg.decay_rate(&used), used.len().max(1))?;
    let coherent_serial = phase_invariant_fidelity(&us, &ideal);
    let coherent_parallel = phase_invariant_fidelity(&up, &ideal);
    let f_serial = coherent_serial * fidelity_decay(t_serial, &params);
    let f_parallel = coherent_parallel * fidelity_decay(t_parallel, &params);
    let predicted_parallel = if t_serial > 0.0 {
        predict_parallel_fidelity(f_serial, t_parallel, t_serial, params.f0())?
    } else {
        f_serial
    };
    Ok(Verification {
        t_serial,
        t_parallel,
        coherent_serial,
        coherent_parallel,
        f_serial,
        f_parallel,
        predicted_parallel,
    })
}

fn cmd_verify(a: &VerifyArgs) -> CliResult<()> {
    let mut run = Run::new("verify");
    let c = load_circuit(&a.circuit, &mut run)?;
    let cfg = load_device(&a.device, &mut run)?;
    let v = verify(&c, &cfg, a.flags.options())?;
    let csv = format!(
        "quantity,serial,parallel\nduration_s,{},{}\ncoherent_fidelity,{},{}\nfidelity,{},{}\npredicted_parallel,,{}\n",
        v.t_serial,
        v.t_parallel,
        v.coherent_serial,
        v.coherent_parallel,
        v.f_serial,
        v.f_parallel,
        v.predicted_parallel
    );
    println!("F_S = {:.6}", v.f_serial);
    println!("F_P = {:.6}", v.f_parallel);
    println!("F_P predicted = {:.6}", v.predicted_parallel);
    if let Some(dir) = &a.out {
        run.write(&dir.join("verify.csv"), &csv)?;
        run.finish(&dir.join("manifest.json"))?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let mut run = Run::new("bench");
    let gate = load_circuit(&a.gate, &mut run)?;
    run.input(&a.noise)?;
    let noise: CbNoise = parse_file(&a.noise, |s| Ok(serde_json::from_str(s)?))?;
    let mut cfg = match &a.cb {
        Some(p) => {
            run.input(p)?;
            parse_file(p, |s| Ok(serde_json::from_str::<CBConfig>(s)?))?
        }
        None => CBConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.shots {
        cfg.shots = s;
    }
    if let Some(d) = &a.depths {
        cfg.depths = d.0.clone();
    }
    run.seed = Some(cfg.seed);
    let result = cycle_benchmark(&gate, &noise, &cfg, !a.reference_only)?;
    let csv = result.to_csv()?;
    match &a.out {
        Some(path) => {
            run.write(path, &csv)?;
            run.finish(&file_manifest(path))?;
            println!("process fidelity = {:.6}", result.process_fidelity());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_layout(spec: &str, run: &mut Run) -> CliResult<pulseforge_core::layout_analyzer::CouplingGraph> {
    let kind: LayoutKind = spec.parse()?;
    if let LayoutKind::Custom(p) = &kind {
        run.input(p)?;
        return builtin_layout(&kind).map_err(|e| Failure::core(&p.display().to_string(), e));
    }
    Ok(builtin_layout(&kind)?)
}

fn layout_csv(spec: &str, depths: &[usize], run: &mut Run) -> CliResult<String> {
    let graph = load_layout(spec, run)?;
    Ok(gain_curve_csv(&gain_curve(&graph, depths)?)?)
}

fn cmd_layout(a: &LayoutArgs) -> CliResult<()> {
    let mut run = Run::new("layout");
    let csv = layout_csv(&a.layout, &a.depths.0, &mut run)?;
    match &a.out {
        Some(path) => {
            run.write(path, &csv)?;
            run.finish(&file_manifest(path))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn demo_circuit() -> Circuit {
    use std::f64::consts::FRAC_PI_2;
    Circuit::from_gates(3, vec![Gate::rzx(FRAC_PI_2, 0, 1), Gate::rzx(FRAC_PI_2, 2, 1)]).expect("valid demo circuit")
}

fn przx_circuit() -> Circuit {
    use std::f64::consts::FRAC_PI_2;
    Circuit::from_gates(3, vec![Gate::przx(vec![FRAC_PI_2; 2], vec![0, 2], 1).expect("valid PRZX")])
        .expect("valid PRZX circuit")
}

fn pulses_csv(rows: &mut String, mode: &str, s: &Schedule) {
    for i in &s.instructions {
        let _ = writeln!(
            rows,
            "{mode},{},{},{},{},{}",
            i.channel,
            i.start,
            i.envelope.duration(),
            i.envelope.amplitude(),
            i.envelope.phase()
        );
    }
}

/// Eigenvalue of the depolarizing channel with process fidelity `f` on `n` qubits.
fn depolarizing_eigenvalue(f: f64, n: usize) -> f64 {
    let d2 = (1u64 << (2 * n)) as f64;
    (d2 * f - 1.0) / (d2 - 1.0)
}

fn cmd_export(a: &ExportArgs) -> CliResult<()> {
    let name = a.which.to_possible_value().expect("named").get_name().to_string();
    let mut run = Run::new(&format!("export-figdata {name}"));
    let dir = &a.out;
    let opts = a.flags.options();
    match a.which {
        Figure::Fig1 => {
            let cfg = load_device(&a.device, &mut run)?;
            let c = match &a.circuit {
                Some(p) => load_circuit(p, &mut run)?,
                None => demo_circuit(),
            };
            let r = duration_report(&c, &cfg, opts)?;
            let durations = format!(
                "mode,samples,seconds,cr_samples\nserial,{},{},{}\nparallel,{},{},{}\n",
                r.serial_samples, r.t_serial, r.cr_serial_samples, r.parallel_samples, r.t_parallel, r.cr_parallel_samples
            );
            run.write(&dir.join("fig1_durations.csv"), &durations)?;
            let mut pulses = String::from("mode,channel,start,duration,amplitude,phase\n");
            pulses_csv(&mut pulses, "serial", &compile(&c, &cfg, Mode::Serial, opts)?);
            pulses_csv(&mut pulses, "parallel", &compile(&c, &cfg, Mode::Parallel, opts)?);
            run.write(&dir.join("fig1_pulses.csv"), &pulses)?;
        }
        Figure::Fig2 => {
            let cfg = load_device(&a.device, &mut run)?;
            let c = przx_circuit();
            let ideal = choi_of_unitary(&unitary_of_circuit(&c)?);
            run.write(&dir.join("fig2_truth_table.csv"), &truth_table_to_csv(&truth_table(&ideal), 3)?)?;
            let model = SimulationModel::from_config(&cfg)?;
            let (u, _) = simulate_compiled(&c, &cfg, Mode::Parallel, opts, &model)?;
            let sim = choi_of_unitary(&u);
            let n = sim.num_qubits();
            run.write(&dir.join("fig2_truth_table_simulated.csv"), &truth_table_to_csv(&truth_table(&sim), n)?)?;
        }
        Figure::Fig5 => {
            let csv = layout_csv(&a.layout, &a.depths.0, &mut run)?;
            run.write(&dir.join("fig5_gain.csv"), &csv)?;
        }
        Figure::Fig7 => {
            let cfg = load_device(&a.device, &mut run)?;
            run.seed = Some(a.seed);
            let c = przx_circuit();
            let v = verify(&c, &cfg, opts)?;
            let ratio = if v.t_serial > 0.0 { v.t_parallel / v.t_serial } else { 1.0 };
            let mut pred = String::from("f_serial,t_ratio,f_parallel_predicted\n");
            for i in 0..=20 {
                let fs = 0.9 + 0.005 * i as f64;
                let fp = predict_parallel_fidelity(fs, ratio, 1.0, 0.0)?;
                let _ = writeln!(pred, "{fs},{ratio},{fp}");
            }
            run.write(&dir.join("fig7_prediction.csv"), &pred)?;
            let cb = CBConfig { shots: a.shots, seed: a.seed, ..CBConfig::default() };
            let mut rows = String::from("mode,channel,p,p_ref,ratio,A,residual\n");
            let mut summary = String::from("mode,duration_s,fidelity_model,fidelity_cb\n");
            for (mode, t, f) in [("serial", v.t_serial, v.f_serial), ("parallel", v.t_parallel, v.f_parallel)] {
                let lambda = depolarizing_eigenvalue(f, 3).clamp(0.0, 1.0);
                let noise = CbNoise {
                    gate: PauliNoiseModel::depolarizing_with_eigenvalue(3, lambda)?,
                    twirl: PauliNoiseModel::none(3),
                };
                let r = cycle_benchmark(&c, &noise, &cb, true)?;
                for ch in &r.channels {
                    let _ = writeln!(rows, "{mode},{},{},{},{},{},{}", ch.channel, ch.p, ch.p_ref, ch.ratio, ch.a, ch.residual);
                }
                let _ = writeln!(summary, "{mode},{t},{f},{}", r.process_fidelity());
            }
            run.write(&dir.join("fig7_cb.csv"), &rows)?;
            run.write(&dir.join("fig7_summary.csv"), &summary)?;
        }
        Figure::Ptm => {
            let cfg = load_device(&a.device, &mut run)?;
            let c = przx_circuit();
            let ideal = choi_of_unitary(&unitary_of_circuit(&c)?);
            run.write(&dir.join("ptm_ideal.csv"), &ptm_to_csv(&ptm_matrix(&ideal), 3)?)?;
            let model = SimulationModel::from_config(&cfg)?;
            let (u, _) = simulate_compiled(&c, &cfg, Mode::Parallel, opts, &model)?;
            let sim = choi_of_unitary(&u);
            let n = sim.num_qubits();
            run.write(&dir.join("ptm_simulated.csv"), &ptm_to_csv(&ptm_matrix(&sim), n)?)?;
        }
    }
    run.finish(&dir.join(format!("manifest_{name}.json")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(a) => cmd_compile(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Layout(a) => cmd_layout(a),
        Command::ExportFigdata(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
