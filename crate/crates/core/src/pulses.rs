//! Driving protocols built from hard rf rotations and scalar-coupling delays.
//!
//! A protocol is a declarative [`PulseSequence`]: steps are listed in the order
//! they are applied, and the propagator is the time-ordered product
//! `U = S_n ... S_2 S_1`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{pauli, sigma_zz, tensor, ComplexMatrix, HamiltonianSpec};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Qubit {
    H,
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PulseStep {
    Rotation { axis: Axis, qubit: Qubit, angle: f64 },
    FreeEvolution { duration: f64 },
}

impl PulseStep {
    pub fn rotation(axis: Axis, qubit: Qubit, angle: f64) -> Self {
        PulseStep::Rotation { axis, qubit, angle }
    }

    pub fn unitary(&self, j_hz: f64) -> Result<ComplexMatrix> {
        match *self {
            PulseStep::Rotation { axis, qubit, angle } => rotation(axis, angle, qubit),
            PulseStep::FreeEvolution { duration } => free_evolution(j_hz, duration),
        }
    }
}

/// `exp(-i angle sigma_axis / 2)` on `qubit`, identity on the other spin.
pub fn rotation(axis: Axis, angle: f64, qubit: Qubit) -> Result<ComplexMatrix> {
    if !angle.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite rotation angle {angle}")));
    }
    let (c, s) = ((angle / 2.0).cos(), (angle / 2.0).sin());
    let re = |x: f64| Complex64::new(x, 0.0);
    let im = |x: f64| Complex64::new(0.0, x);
    let single = match axis {
        Axis::X => ComplexMatrix::from_rows(2, &[re(c), im(-s), im(-s), re(c)])?,
        Axis::Y => ComplexMatrix::from_rows(2, &[re(c), re(-s), re(s), re(c)])?,
    };
    match qubit {
        Qubit::H => tensor(&single, &pauli::identity()),
        Qubit::C => tensor(&pauli::identity(), &single),
    }
}

/// Evolution under `h J sz_H sz_C / 4` for `t` seconds: `exp(-i 2π (J/4) sz_H sz_C t)`.
pub fn free_evolution(j_hz: f64, t: f64) -> Result<ComplexMatrix> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "free-evolution time must be finite and >= 0, got {t}"
        )));
    }
    let phase = 2.0 * PI * 0.25 * j_hz * t;
    let diag: Vec<Complex64> = sigma_zz()
        .real_diagonal()
        .into_iter()
        .map(|zz| Complex64::from_polar(1.0, -phase * zz))
        .collect();
    Ok(ComplexMatrix::from_diagonal(&diag))
}

/// Delay that produces a quarter-period coupling phase, `1/(2J)`; zero when uncoupled.
pub fn coupling_delay(j_hz: f64) -> f64 {
    if j_hz > 0.0 {
        1.0 / (2.0 * j_hz)
    } else {
        0.0
    }
}

/// Rotation angles of the drive: `alpha` on the hydrogen channel, `gamma` on carbon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolAngles {
    pub alpha: [f64; 6],
    pub gamma: [f64; 6],
}

impl ProtocolAngles {
    pub fn zeros() -> Self {
        Self {
            alpha: [0.0; 6],
            gamma: [0.0; 6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.iter().chain(&self.gamma).all(|a| a.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidArgument("protocol angles must be finite".into()))
        }
    }
}

impl Default for ProtocolAngles {
    fn default() -> Self {
        Self {
            alpha: [0.48, -0.80, FRAC_PI_2, -3.61, 0.69, FRAC_PI_2],
            gamma: [-0.83, 1.40, FRAC_PI_2, -3.65, 2.68, FRAC_PI_2],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    /// Simultaneous pulses `alpha[i]` on H and `gamma[i]` on C about the same axis.
    Pair(usize, Axis),
    Delay,
}

/// Forward drive layout. The pi/2 pairs (indices 2 and 5) sit next to the
/// coupling delays, so each delay acts as a CNOT-like entangler.
const FORWARD_LAYOUT: [Slot; 8] = [
    Slot::Pair(0, Axis::X),
    Slot::Pair(1, Axis::Y),
    Slot::Pair(2, Axis::X),
    Slot::Delay,
    Slot::Pair(3, Axis::X),
    Slot::Pair(4, Axis::Y),
    Slot::Delay,
    Slot::Pair(5, Axis::X),
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub steps: Vec<PulseStep>,
}

impl PulseSequence {
    pub fn new(steps: Vec<PulseStep>) -> Self {
        Self { steps }
    }

    pub fn forward(angles: &ProtocolAngles, delay: f64) -> Self {
        let mut steps = Vec::new();
        for slot in FORWARD_LAYOUT {
            match slot {
                Slot::Pair(i, axis) => {
                    steps.push(PulseStep::rotation(axis, Qubit::H, angles.alpha[i]));
                    steps.push(PulseStep::rotation(axis, Qubit::C, angles.gamma[i]));
                }
                Slot::Delay => steps.push(PulseStep::FreeEvolution { duration: delay }),
            }
        }
        Self { steps }
    }

    pub fn backward(angles: &ProtocolAngles, delay: f64) -> Self {
        Self::forward(angles, delay).time_reversed()
    }

    /// The sequence whose propagator is the adjoint of this one.
    ///
    /// Steps run in reverse order with negated angles. A coupling delay cannot
    /// run backwards, so it is refocused instead: `X_H U_J X_H = U_J^dag`,
    /// realized as pi pulses about x on H around the same delay.
    pub fn time_reversed(&self) -> Self {
        let mut steps = Vec::with_capacity(self.steps.len());
        for step in self.steps.iter().rev() {
            match *step {
                PulseStep::Rotation { axis, qubit, angle } => {
                    steps.push(PulseStep::rotation(axis, qubit, -angle))
                }
                PulseStep::FreeEvolution { duration } => {
                    steps.push(PulseStep::rotation(Axis::X, Qubit::H, -PI));
                    steps.push(PulseStep::FreeEvolution { duration });
                    steps.push(PulseStep::rotation(Axis::X, Qubit::H, PI));
                }
            }
        }
        Self { steps }
    }

    pub fn unitary(&self, j_hz: f64) -> Result<ComplexMatrix> {
        let mut u = ComplexMatrix::identity(4);
        for step in &self.steps {
            u = &step.unitary(j_hz)? * &u;
        }
        Ok(u)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        io::write_document(out, io::STEPS_FORMAT, &serde_json::json!({}), &self.steps)
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let doc = io::read_document(input, io::STEPS_FORMAT)?;
        let steps = doc
            .records
            .into_iter()
            .map(|(line, value)| {
                serde_json::from_value::<PulseStep>(value).map_err(|e| Error::parse(line, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        for step in &steps {
            match *step {
                PulseStep::Rotation { angle, .. } if !angle.is_finite() => {
                    return Err(Error::InvalidArgument("non-finite angle in step list".into()))
                }
                PulseStep::FreeEvolution { duration } if !(duration >= 0.0 && duration.is_finite()) => {
                    return Err(Error::InvalidArgument(format!("bad duration {duration}")))
                }
                _ => {}
            }
        }
        Ok(Self { steps })
    }
}

/// Forward propagator `U_F` for the given drive angles and coupling.
pub fn build_forward(angles: &ProtocolAngles, j_hz: f64) -> Result<ComplexMatrix> {
    angles.validate()?;
    PulseSequence::forward(angles, coupling_delay(j_hz)).unitary(j_hz)
}

/// Backward propagator `U_B = U_F^dag`.
pub fn build_backward(angles: &ProtocolAngles, j_hz: f64) -> Result<ComplexMatrix> {
    angles.validate()?;
    PulseSequence::backward(angles, coupling_delay(j_hz)).unitary(j_hz)
}

/// CNOT with control C and target H, written as x/y pulses and one coupling delay.
///
/// `CNOT = R_y^H(π/2) · CZ · R_y^H(-π/2)` with
/// `CZ ∝ U_J(1/2J) · R_z^H(-π/2) · R_z^C(-π/2)` and
/// `R_z(θ) = R_x(π/2) R_y(θ) R_x(-π/2)`.
pub fn cnot_sequence() -> PulseSequence {
    use Axis::{X, Y};
    let z_rotation = |qubit: Qubit, theta: f64| {
        [
            PulseStep::rotation(X, qubit, -FRAC_PI_2),
            PulseStep::rotation(Y, qubit, theta),
            PulseStep::rotation(X, qubit, FRAC_PI_2),
        ]
    };
    let mut steps = vec![PulseStep::rotation(Y, Qubit::H, -FRAC_PI_2)];
    steps.extend(z_rotation(Qubit::H, -FRAC_PI_2));
    steps.extend(z_rotation(Qubit::C, -FRAC_PI_2));
    steps.push(PulseStep::FreeEvolution {
        duration: coupling_delay(HamiltonianSpec::CHLOROFORM.j_coupling),
    });
    steps.push(PulseStep::rotation(Y, Qubit::H, FRAC_PI_2));
    PulseSequence { steps }
}

/// Readout prefix `S^k`: identity for `k = 0`, the pulse-built CNOT for `k = 1`.
pub fn readout_prefix(k: u8) -> Result<ComplexMatrix> {
    match k {
        0 => Ok(ComplexMatrix::identity(4)),
        1 => cnot_sequence().unitary(HamiltonianSpec::CHLOROFORM.j_coupling),
        _ => Err(Error::InvalidArgument(format!("readout index must be 0 or 1, got {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const J: f64 = 215.1;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Canonical CNOT with control C (second factor) and target H (first factor).
    fn canonical_cnot() -> ComplexMatrix {
        let (o, l) = (c(0.0, 0.0), c(1.0, 0.0));
        // |b_H b_C>: flip b_H when b_C = 1, i.e. swap indices 1 and 3.
        ComplexMatrix::from_rows(
            4,
            &[l, o, o, o, o, o, o, l, o, o, l, o, o, l, o, o],
        )
        .unwrap()
    }

    #[test]
    fn zero_rotation_is_identity() {
        assert_eq!(rotation(Axis::X, 0.0, Qubit::H).unwrap(), ComplexMatrix::identity(4));
    }

    #[test]
    fn pi_rotation_flips_hydrogen() {
        let r = rotation(Axis::X, PI, Qubit::H).unwrap();
        // column of |↑↑> (index 0) should be -i |↓↑> (index 2)
        for row in 0..4 {
            let expected = if row == 2 { c(0.0, -1.0) } else { c(0.0, 0.0) };
            assert_abs_diff_eq!((r.get(row, 0) - expected).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn half_pi_y_rotation_on_carbon() {
        let r = rotation(Axis::Y, FRAC_PI_2, Qubit::C).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        // 2x2 exponential exp(-i π/4 Y) = [[h, -h], [h, h]] on the C factor.
        let expected = [[h, -h, 0.0, 0.0], [h, h, 0.0, 0.0], [0.0, 0.0, h, -h], [0.0, 0.0, h, h]];
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!((r.get(i, j) - c(expected[i][j], 0.0)).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn free_evolution_phases() {
        assert_eq!(free_evolution(J, 0.0).unwrap(), ComplexMatrix::identity(4));
        let quarter = free_evolution(J, 1.0 / (2.0 * J)).unwrap();
        let m = Complex64::from_polar(1.0, -PI / 4.0);
        let p = Complex64::from_polar(1.0, PI / 4.0);
        let expected = ComplexMatrix::from_diagonal(&[m, p, p, m]);
        assert!(quarter.max_abs_diff(&expected) < 1e-14);
        let full = free_evolution(J, 2.0 / J).unwrap();
        assert!(full.max_abs_diff(&ComplexMatrix::identity(4).scale(c(-1.0, 0.0))) < 1e-14);
        assert!(free_evolution(J, -1.0).is_err());
    }

    #[test]
    fn empty_protocol_limit() {
        let u = build_forward(&ProtocolAngles::zeros(), 0.0).unwrap();
        assert!(u.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-15);
    }

    #[test]
    fn zero_angle_backward_inverts_delay_skeleton() {
        let angles = ProtocolAngles::zeros();
        let skeleton = build_forward(&angles, J).unwrap();
        let back = build_backward(&angles, J).unwrap();
        assert!(back.max_abs_diff(&skeleton.adjoint()) < 1e-14);
    }

    #[test]
    fn default_protocol_is_unitary_and_reversible() {
        let angles = ProtocolAngles::default();
        let uf = build_forward(&angles, J).unwrap();
        let ub = build_backward(&angles, J).unwrap();
        assert!(uf.unitarity_error() < 1e-12);
        assert!((&ub * &uf).max_abs_diff(&ComplexMatrix::identity(4)) < 1e-12);
        assert!(ub.max_abs_diff(&uf.adjoint()) < 1e-12);
    }

    #[test]
    fn forward_sequence_layout() {
        let seq = PulseSequence::forward(&ProtocolAngles::default(), 1.0);
        assert_eq!(seq.steps.len(), 14);
        let delays = seq
            .steps
            .iter()
            .filter(|s| matches!(s, PulseStep::FreeEvolution { .. }))
            .count();
        assert_eq!(delays, 2);
        assert_eq!(seq.steps[0], PulseStep::rotation(Axis::X, Qubit::H, 0.48));
        assert_eq!(seq.steps[1], PulseStep::rotation(Axis::X, Qubit::C, -0.83));
        // backward starts with the last gamma/alpha pair, negated
        let back = seq.time_reversed();
        assert_eq!(back.steps[0], PulseStep::rotation(Axis::X, Qubit::C, -FRAC_PI_2));
        assert_eq!(back.steps[1], PulseStep::rotation(Axis::X, Qubit::H, -FRAC_PI_2));
    }

    #[test]
    fn readout_prefixes() {
        assert_eq!(readout_prefix(0).unwrap(), ComplexMatrix::identity(4));
        let s1 = readout_prefix(1).unwrap();
        assert!(s1.max_abs_diff_up_to_phase(&canonical_cnot()) < 1e-12);
        assert!((&s1 * &s1).max_abs_diff_up_to_phase(&ComplexMatrix::identity(4)) < 1e-12);
        assert!(readout_prefix(2).is_err());
    }

    #[test]
    fn cnot_maps_hydrogen_readout_to_correlation() {
        let s1 = readout_prefix(1).unwrap();
        let heisenberg = s1.adjoint().conjugate(&crate::hilbert::sigma_z_h());
        assert!(heisenberg.max_abs_diff(&sigma_zz()) < 1e-12);
    }

    #[test]
    fn step_list_round_trip() {
        let seq = PulseSequence::forward(&ProtocolAngles::default(), coupling_delay(J));
        let mut buf = Vec::new();
        seq.write(&mut buf).unwrap();
        let back = PulseSequence::read(buf.as_slice()).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn step_list_rejects_unknown_fields() {
        let text = "{\"format\":\"workstat.steps\",\"version\":1}\n{\"kind\":\"rotation\",\"axis\":\"z\",\"qubit\":\"H\",\"angle\":1.0}\n";
        let err = PulseSequence::read(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    fn angles_strategy() -> impl Strategy<Value = ProtocolAngles> {
        (prop::array::uniform6(-PI..PI), prop::array::uniform6(-PI..PI))
            .prop_map(|(alpha, gamma)| ProtocolAngles { alpha, gamma })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn random_protocols_are_unitary(angles in angles_strategy(), j in 1.0f64..500.0) {
            let uf = build_forward(&angles, j).unwrap();
            let ub = build_backward(&angles, j).unwrap();
            prop_assert!(uf.unitarity_error() < 1e-12);
            prop_assert!(ub.unitarity_error() < 1e-12);
            prop_assert!((&ub * &uf).max_abs_diff(&ComplexMatrix::identity(4)) < 1e-12);
        }
    }
}
