mod common;

use std::f64::consts::FRAC_PI_2;

use pulseforge_core::gate_compiler::{self as gc, Circuit, Gate, Pauli, PauliTerm, TermStyle};
use pulseforge_core::layout_analyzer::{builtin_layout, CouplingGraph, LayoutKind, BRISBANE_FRAGMENT_ROOT};
use pulseforge_core::noise_bench::{
    apply_pauli_noise, cycle_benchmark, normalized_truth_table, shot_tomography, spam_normalize, CBConfig, CbNoise,
    PauliNoiseModel,
};
use pulseforge_core::pulse_model::{pulse_area, Channel, PulseEnvelope, Schedule};
use pulseforge_core::pulse_parallelizer::{
    compile, duration_report, lower_rzx, merge_n, CompileOptions, DeviceConfig, EdgeCalibration, Mode,
};
use pulseforge_core::simulator::{
    choi_of_unitary, process_fidelity, simulate_compiled, unitary_of_circuit, QuantumChannel, SimulationModel,
};

fn przx() -> Circuit {
    Circuit::from_gates(3, vec![Gate::przx(vec![FRAC_PI_2; 2], vec![0, 2], 1).unwrap()]).unwrap()
}

#[test]
fn compiled_przx_matches_ideal_gate_under_ideal_model() {
    let cfg = DeviceConfig::belem_like().with_uniform_references();
    let model = SimulationModel::ideal(&cfg).unwrap();
    let want = common::circuit(&przx());
    for mode in [Mode::Serial, Mode::Parallel] {
        for echo in [false, true] {
            let (u, _) = simulate_compiled(&przx(), &cfg, mode, CompileOptions { echo, angle_reduce: true }, &model).unwrap();
            let f = common::fidelity(u.matrix(), &want);
            assert!(f > 1.0 - 1e-6, "{mode:?} echo={echo}: {f}");
        }
    }
}

#[test]
fn parallel_never_longer_than_serial() {
    let cfg = DeviceConfig::belem_like();
    let circuits = [
        Circuit::from_gates(3, vec![Gate::rzx(0.4, 0, 1)]).unwrap(),
        Circuit::from_gates(3, vec![Gate::rzx(0.4, 0, 1), Gate::rzx(-1.0, 2, 1)]).unwrap(),
        Circuit::from_gates(3, vec![Gate::Cnot { control: 0, target: 1 }, Gate::Cnot { control: 2, target: 1 }]).unwrap(),
        gc::trotter_heisenberg(2, 0.3).unwrap(),
    ];
    for (i, c) in circuits.iter().enumerate() {
        for echo in [false, true] {
            let r = duration_report(c, &cfg, CompileOptions { echo, angle_reduce: true }).unwrap();
            assert!(r.parallel_samples <= r.serial_samples, "circuit {i}");
            if i == 1 || i == 3 {
                assert!(r.parallel_samples < r.serial_samples, "circuit {i} should shrink");
            }
        }
    }
}

#[test]
fn merged_compensation_area_is_the_sum() {
    let mut cfg = DeviceConfig::belem_like();
    cfg.edges = vec![
        EdgeCalibration {
            control: 0,
            target: 1,
            cr: PulseEnvelope::constant(0.2, 0.0, 300).unwrap(),
            compensation: PulseEnvelope::constant(0.05, 0.4, 300).unwrap(),
            omega: None,
        },
        EdgeCalibration {
            control: 2,
            target: 1,
            cr: PulseEnvelope::constant(0.2, 0.0, 300).unwrap(),
            compensation: PulseEnvelope::constant(0.03, -1.1, 300).unwrap(),
            omega: None,
        },
    ];
    let a = lower_rzx(FRAC_PI_2, 0, 1, &cfg).unwrap();
    let b = lower_rzx(FRAC_PI_2 / 2.0, 2, 1, &cfg).unwrap();
    let m = merge_n(&[a.clone(), b.clone()], &cfg).unwrap();
    let comp = |s: &Schedule| -> pulseforge_core::C64 { s.on_channel(Channel::Drive(1)).map(|i| pulse_area(&i.envelope)).sum() };
    let diff = (comp(&m.schedule) - comp(&a.schedule) - comp(&b.schedule)).norm();
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn schedule_json_round_trip() {
    let cfg = DeviceConfig::belem_like();
    let s = compile(&przx(), &cfg, Mode::Parallel, CompileOptions { echo: true, angle_reduce: true }).unwrap();
    let back = Schedule::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn pauli_term_on_two_path() {
    let g = CouplingGraph::path(2);
    let t = 0.37;
    let term = PauliTerm::new(1.0, [(0, Pauli::Z), (1, Pauli::Z)]).unwrap();
    let c = gc::pauli_term_circuit(&term, t, TermStyle::SerialChain, &g, 1).unwrap();
    let f = common::fidelity(&common::circuit(&c), &common::pauli_rotation(2, &[(0, 'Z'), (1, 'Z')], t));
    assert!(1.0 - f < 1e-12);
    let mixed = PauliTerm::new(0.5, [(0, Pauli::X), (1, Pauli::Y)]).unwrap();
    let c = gc::pauli_term_circuit(&mixed, t, TermStyle::ParallelMerged, &g, 0).unwrap();
    let f = common::fidelity(&common::circuit(&c), &common::pauli_rotation(2, &[(0, 'X'), (1, 'Y')], 0.5 * t));
    assert!(1.0 - f < 1e-12);
}

#[test]
fn thirteen_qubit_term_on_fragment() {
    let g = builtin_layout(&LayoutKind::BrisbaneFragment).unwrap();
    let term = PauliTerm::new(1.0, (0..13).map(|q| (q, Pauli::Z))).unwrap();
    let c = gc::pauli_term_circuit(&term, 0.2, TermStyle::ParallelMerged, &g, BRISBANE_FRAGMENT_ROOT).unwrap();
    let rz: Vec<&Gate> = c.gates().iter().filter(|g| matches!(g, Gate::Single { .. })).collect();
    assert!(rz.iter().any(|g| g.qubits() == vec![BRISBANE_FRAGMENT_ROOT]));
    let touched: std::collections::BTreeSet<usize> = c.gates().iter().flat_map(|g| g.qubits()).collect();
    assert_eq!(touched.len(), 13);
    assert!(c.gates().iter().any(|g| matches!(g, Gate::Przx { .. })));
    assert!(gc::pauli_term_circuit(&term, 0.2, TermStyle::SerialChain, &g, BRISBANE_FRAGMENT_ROOT).is_ok());
}

#[test]
fn phase_oracle_brute_force() {
    let pairs = [(0, 1), (1, 2), (1, 3)];
    let o = gc::phase_oracle(4, &pairs).unwrap();
    assert_eq!(o.groups.len(), 1);
    assert_eq!(o.groups[0].shared, 1);
    let u = common::circuit(&o.circuit);
    let par = common::circuit(&o.parallelized().unwrap());
    assert!(1.0 - common::fidelity(&u, &par) < 1e-9);
    for x in 0..16usize {
        let bit = |q: usize| (x >> (3 - q)) & 1;
        let f = pairs.iter().map(|&(a, b)| bit(a) * bit(b)).sum::<usize>() % 2;
        let want = if f == 1 { -1.0 } else { 1.0 };
        assert!((u[(x, x)].re - want).abs() < 1e-12 && u[(x, x)].im.abs() < 1e-12);
    }
    assert!(gc::phase_oracle(3, &[]).unwrap().circuit.is_empty());
}

#[test]
fn blended_truth_table_keeps_the_permutation() {
    let u = unitary_of_circuit(&przx()).unwrap();
    let ideal = choi_of_unitary(&u);
    let noisy = apply_pauli_noise(&u, &PauliNoiseModel::depolarizing(3, 0.1).unwrap()).unwrap();
    let (blend, _) = spam_normalize(&noisy, &ideal, 0.95).unwrap();
    let t = normalized_truth_table(&blend);
    let oracle = common::circuit(&przx());
    for i in 0..8 {
        assert!((t.row(i).sum() - 1.0).abs() < 1e-10);
        let j = (0..8).max_by(|&a, &b| t[(i, a)].total_cmp(&t[(i, b)])).unwrap();
        assert!((oracle[(j, i)].norm_sqr() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn cb_estimate_is_seed_independent() {
    let noise = CbNoise {
        gate: PauliNoiseModel::depolarizing_with_eigenvalue(3, 0.97).unwrap(),
        twirl: PauliNoiseModel::none(3),
    };
    let mut fits = Vec::new();
    for seed in 0..4 {
        let cfg = CBConfig { depths: vec![4, 8, 16], samples_per_depth: 4, shots: 1000, seed };
        let r = cycle_benchmark(&przx(), &noise, &cfg, true).unwrap();
        fits.push(r.channels[5].clone());
    }
    for a in &fits {
        assert!((a.p - 0.97).abs() <= 3.0 * a.sigma_p, "{} +- {}", a.p, a.sigma_p);
    }
    assert!(fits.windows(2).any(|w| w[0].p != w[1].p));
}

#[test]
fn tomography_improves_with_shots() {
    let u = unitary_of_circuit(&Circuit::from_gates(2, vec![Gate::rzx(FRAC_PI_2, 0, 1)]).unwrap()).unwrap();
    let ch = apply_pauli_noise(&u, &PauliNoiseModel::depolarizing(2, 0.05).unwrap()).unwrap();
    let err = |shots: u64| -> f64 {
        (0..4)
            .map(|seed| {
                let est = shot_tomography(&ch, shots, seed).unwrap();
                (est.to_choi() - ch.to_choi()).norm()
            })
            .sum::<f64>()
            / 4.0
    };
    let e: Vec<f64> = [50, 500, 5000].iter().map(|&s| err(s)).collect();
    assert!(e[0] > e[1] && e[1] > e[2], "{e:?}");
    let exact = shot_tomography(&ch, 0, 0).unwrap();
    assert!((process_fidelity(&exact, &ch).unwrap() - process_fidelity(&ch, &ch).unwrap()).abs() < 1e-12);
    assert!(matches!(exact, QuantumChannel::Choi { .. }));
}
