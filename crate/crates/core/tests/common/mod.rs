//! Dense reference matrices built directly from Kronecker products, kept
//! separate from the simulator so the two can be compared.
#![allow(dead_code)]

use nalgebra::DMatrix;
use pulseforge_core::gate_compiler::{Circuit, Gate, SingleQubitKind};
use pulseforge_core::C64;

pub type M = DMatrix<C64>;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn pauli(p: char) -> M {
    let (o, z, i) = (c(1.0, 0.0), c(0.0, 0.0), c(0.0, 1.0));
    match p {
        'I' => M::from_row_slice(2, 2, &[o, z, z, o]),
        'X' => M::from_row_slice(2, 2, &[z, o, o, z]),
        'Y' => M::from_row_slice(2, 2, &[z, -i, i, z]),
        'Z' => M::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => panic!("bad pauli {p}"),
    }
}

/// Operator acting as `ops[k].1` on qubit `ops[k].0`, qubit 0 leftmost.
pub fn kron_on(n: usize, ops: &[(usize, M)]) -> M {
    let mut out = M::identity(1, 1);
    for q in 0..n {
        let f = ops.iter().find(|(k, _)| *k == q).map(|(_, m)| m.clone()).unwrap_or_else(|| pauli('I'));
        out = out.kronecker(&f);
    }
    out
}

/// `exp(-i a P)` for a Pauli string `P` (`P^2 = I`).
pub fn pauli_rotation(n: usize, paulis: &[(usize, char)], a: f64) -> M {
    let p = kron_on(n, &paulis.iter().map(|&(q, ch)| (q, pauli(ch))).collect::<Vec<_>>());
    let d = 1 << n;
    M::identity(d, d) * c(a.cos(), 0.0) - p * c(0.0, a.sin())
}

pub fn rzx(n: usize, theta: f64, control: usize, target: usize) -> M {
    pauli_rotation(n, &[(control, 'Z'), (target, 'X')], theta / 2.0)
}

pub fn cnot(n: usize, control: usize, target: usize) -> M {
    let d = 1 << n;
    let half = c(0.5, 0.0);
    let zc = kron_on(n, &[(control, pauli('Z'))]);
    let p0 = (M::identity(d, d) + &zc) * half;
    let p1 = (M::identity(d, d) - &zc) * half;
    p0 + p1 * kron_on(n, &[(target, pauli('X'))])
}

pub fn cz(n: usize, a: usize, b: usize) -> M {
    let d = 1 << n;
    let za = kron_on(n, &[(a, pauli('Z'))]);
    let zb = kron_on(n, &[(b, pauli('Z'))]);
    let zz = kron_on(n, &[(a, pauli('Z')), (b, pauli('Z'))]);
    (M::identity(d, d) + za + zb - zz) * c(0.5, 0.0)
}

pub fn single(kind: SingleQubitKind) -> M {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (o, z) = (c(1.0, 0.0), c(0.0, 0.0));
    match kind {
        SingleQubitKind::X => pauli('X'),
        SingleQubitKind::Z => pauli('Z'),
        SingleQubitKind::H => M::from_row_slice(2, 2, &[c(h, 0.0), c(h, 0.0), c(h, 0.0), c(-h, 0.0)]),
        SingleQubitKind::S => M::from_row_slice(2, 2, &[o, z, z, c(0.0, 1.0)]),
        SingleQubitKind::Sdg => M::from_row_slice(2, 2, &[o, z, z, c(0.0, -1.0)]),
        SingleQubitKind::SqrtX => M::from_row_slice(2, 2, &[c(0.5, 0.5), c(0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5)]),
        SingleQubitKind::X32 => M::from_row_slice(2, 2, &[c(0.5, -0.5), c(0.5, 0.5), c(0.5, 0.5), c(0.5, -0.5)]),
        SingleQubitKind::Rz(l) => {
            M::from_row_slice(2, 2, &[C64::from_polar(1.0, -l / 2.0), z, z, C64::from_polar(1.0, l / 2.0)])
        }
    }
}

pub fn gate(n: usize, g: &Gate) -> M {
    match g {
        Gate::Rzx { theta, control, target } => rzx(n, *theta, *control, *target),
        Gate::Przx { thetas, controls, target } => {
            let d = 1 << n;
            thetas.iter().zip(controls).fold(M::identity(d, d), |acc, (t, ctl)| rzx(n, *t, *ctl, *target) * acc)
        }
        Gate::Cnot { control, target } => cnot(n, *control, *target),
        Gate::Cz { a, b } => cz(n, *a, *b),
        Gate::Single { kind, qubit } => kron_on(n, &[(*qubit, single(*kind))]),
    }
}

/// Product of gate matrices in application order.
pub fn circuit(c: &Circuit) -> M {
    let n = c.num_qubits();
    let d = 1 << n;
    c.gates().iter().fold(M::identity(d, d), |acc, g| gate(n, g) * acc)
}

/// `|Tr(A^dag B)|^2 / d^2`.
pub fn fidelity(a: &M, b: &M) -> f64 {
    let d = a.nrows() as f64;
    (a.adjoint() * b).trace().norm_sqr() / (d * d)
}

pub fn max_abs_diff(a: &M, b: &M) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
