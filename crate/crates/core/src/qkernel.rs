//! Closed-form mathematics of one angle-encoded, CNOT-entangled qubit pair.
//!
//! Both qubits start in |0⟩, are rotated by `R_y(θ)` and then entangled by a
//! CNOT from the control to the target. Only real amplitudes appear, so the
//! whole state is four numbers and every derived quantity has a closed form.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{QpfError, Result};

/// A rotation angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);
    pub const HALF_PI: Angle = Angle(PI / 2.0);
    pub const PI: Angle = Angle(PI);

    pub fn new(radians: f64) -> Result<Self> {
        if (0.0..=PI).contains(&radians) {
            Ok(Angle(radians))
        } else {
            Err(QpfError::AngleOutOfRange(radians))
        }
    }

    /// Encodes a unit-interval intensity `x` as the angle `π·x`.
    pub fn from_intensity(x: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) {
            return Err(QpfError::IntensityOutOfRange(x));
        }
        Ok(Angle((PI * x).min(PI)))
    }

    /// Callers guarantee `radians` is already in range.
    pub(crate) fn new_unchecked(radians: f64) -> Self {
        debug_assert!((0.0..=PI).contains(&radians));
        Angle(radians)
    }

    pub fn radians(self) -> f64 {
        self.0
    }
}

/// Amplitudes of |00⟩, |01⟩, |10⟩, |11⟩; the first index is the control qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl PairState {
    pub fn norm_sqr(&self) -> f64 {
        self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d
    }

    /// Born-rule probabilities of |00⟩, |01⟩, |10⟩, |11⟩.
    pub fn probabilities(&self) -> [f64; 4] {
        [
            self.a * self.a,
            self.b * self.b,
            self.c * self.c,
            self.d * self.d,
        ]
    }
}

/// Single-qubit reduced density matrix, real symmetric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedDensity {
    pub p00: f64,
    pub p01: f64,
    pub p11: f64,
}

impl ReducedDensity {
    pub fn determinant(&self) -> f64 {
        self.p00 * self.p11 - self.p01 * self.p01
    }

    /// Eigenvalues `(λ+, λ−)`, each clamped to `[0, 1]`.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let det = self.determinant().clamp(0.0, 0.25);
        let root = (1.0 - 4.0 * det).max(0.0).sqrt();
        (
            ((1.0 + root) / 2.0).clamp(0.0, 1.0),
            ((1.0 - root) / 2.0).clamp(0.0, 1.0),
        )
    }
}

/// Probability of reading |1⟩ on each qubit of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairProbabilities {
    pub control_p1: f64,
    pub target_p1: f64,
}

/// `(R_y(θc) ⊗ R_y(θt))|00⟩` followed by `CNOT(control → target)`.
pub fn prepare_pair_state(theta_control: Angle, theta_target: Angle) -> PairState {
    let (sc, cc) = (theta_control.0 / 2.0).sin_cos();
    let (st, ct) = (theta_target.0 / 2.0).sin_cos();
    PairState {
        a: cc * ct,
        b: cc * st,
        c: sc * st,
        d: sc * ct,
    }
}

pub fn pair_probabilities(state: &PairState) -> PairProbabilities {
    PairProbabilities {
        control_p1: state.c * state.c + state.d * state.d,
        target_p1: state.b * state.b + state.d * state.d,
    }
}

/// Per-qubit `P(|1⟩)` straight from the angles.
///
/// Agrees with [`pair_probabilities`] up to rounding, but the control value is
/// exactly `sin²(θc/2)` whatever `θt` is, the target value is bit-identical
/// under swapping the two angles, and both are clamped to `[0, 1]`.
pub fn channel_probabilities(theta_control: Angle, theta_target: Angle) -> PairProbabilities {
    let (sc, cc) = (theta_control.0 / 2.0).sin_cos();
    let (st, ct) = (theta_target.0 / 2.0).sin_cos();
    let b = cc * st;
    let d = sc * ct;
    PairProbabilities {
        control_p1: (sc * sc).clamp(0.0, 1.0),
        target_p1: (b * b + d * d).clamp(0.0, 1.0),
    }
}

/// Reduced state of the control qubit (the target is traced out).
pub fn reduced_density(state: &PairState) -> ReducedDensity {
    ReducedDensity {
        p00: state.a * state.a + state.b * state.b,
        p11: state.c * state.c + state.d * state.d,
        p01: state.a * state.c + state.b * state.d,
    }
}

/// Reduced state of the target qubit (the control is traced out).
pub fn reduced_density_target(state: &PairState) -> ReducedDensity {
    ReducedDensity {
        p00: state.a * state.a + state.c * state.c,
        p11: state.b * state.b + state.d * state.d,
        p01: state.a * state.b + state.c * state.d,
    }
}

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Von Neumann entropy in bits, `0·log₂0 = 0`.
pub fn von_neumann_entropy(rho: &ReducedDensity) -> f64 {
    let (hi, lo) = rho.eigenvalues();
    (-(xlog2x(hi) + xlog2x(lo))).clamp(0.0, 1.0)
}

/// Entanglement entropy of the pair produced from the two angles.
pub fn pair_entropy(theta_control: Angle, theta_target: Angle) -> f64 {
    von_neumann_entropy(&reduced_density(&prepare_pair_state(
        theta_control,
        theta_target,
    )))
}

/// Measures the pair `shots` times; counts are ordered |00⟩, |01⟩, |10⟩, |11⟩.
///
/// Draws a multinomial as a chain of conditional binomials from a ChaCha
/// stream seeded with `seed`.
pub fn sample_counts(state: &PairState, shots: u64, seed: u64) -> Result<[u64; 4]> {
    if shots == 0 {
        return Err(QpfError::Config("shots must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = state.probabilities();
    let total: f64 = probs.iter().sum();
    let mut counts = [0u64; 4];
    let mut remaining = shots;
    let mut mass_left = total;
    for k in 0..3 {
        if remaining == 0 {
            break;
        }
        let p = if mass_left > 0.0 {
            (probs[k] / mass_left).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, p)
            .map_err(|e| QpfError::Config(e.to_string()))?
            .sample(&mut rng);
        counts[k] = draw;
        remaining -= draw;
        mass_left -= probs[k];
    }
    counts[3] = remaining;
    Ok(counts)
}
