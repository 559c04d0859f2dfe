//! Small dense Hilbert-space algebra and the two-spin Hamiltonian.
//!
//! The two qubits are ordered (H, C) in every tensor product, and the
//! computational index of a basis state is `2 * b_H + b_C` where `b = 0`
//! means spin up (`sigma_z = +1`). Energies are stored as frequencies in Hz
//! (that is, in units of `h * Hz`); conversion to peV only happens through
//! an [`EnergyScale`].

use std::fmt;
use std::ops::Mul;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planck constant in eV s.
pub const PLANCK_EV_S: f64 = 4.135667696e-15;

/// Energy of one `h * Hz` expressed in peV.
pub const PEV_PER_HZ: f64 = PLANCK_EV_S * 1e12;

/// Largest Hilbert-space dimension accepted by [`ComplexMatrix`].
pub const MAX_DIM: usize = 64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Square complex matrix with finite entries and dimension at most [`MAX_DIM`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMatrix(DMatrix<Complex64>);

impl ComplexMatrix {
    pub fn new(inner: DMatrix<Complex64>) -> Result<Self> {
        let (rows, cols) = inner.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows > MAX_DIM {
            return Err(Error::DimensionTooLarge(rows));
        }
        if inner.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(inner))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_rows(dim: usize, entries: &[Complex64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        Self(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                Complex64::new(diag[i], 0.0)
            } else {
                ZERO
            }
        }))
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let d = diag.len();
        Self(DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] } else { ZERO }))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn inner(&self) -> &DMatrix<Complex64> {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Conjugation `self * m * self^dag`.
    pub fn conjugate(&self, m: &ComplexMatrix) -> Self {
        Self(&self.0 * &m.0 * self.0.adjoint())
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Like [`max_abs_diff`](Self::max_abs_diff) after removing the best global phase.
    pub fn max_abs_diff_up_to_phase(&self, other: &ComplexMatrix) -> f64 {
        // Align on the overlap Tr(other^dag self).
        let overlap: Complex64 = other
            .0
            .iter()
            .zip(self.0.iter())
            .map(|(b, a)| b.conj() * a)
            .sum();
        let phase = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            ONE
        };
        self.max_abs_diff(&other.scale(phase))
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.max_abs_diff(&self.adjoint())
    }

    pub fn unitarity_error(&self) -> f64 {
        let product = Self(self.0.adjoint() * &self.0);
        product.max_abs_diff(&Self::identity(self.dim()))
    }

    pub fn max_off_diagonal(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    worst = worst.max(self.0[(i, j)].norm());
                }
            }
        }
        worst
    }

    /// Real parts of the diagonal.
    pub fn real_diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

/// Single-qubit Pauli matrices.
pub mod pauli {
    use super::{ComplexMatrix, ONE, ZERO};
    use num_complex::Complex64;

    pub fn identity() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_rows(2, &[ZERO, ONE, ONE, ZERO]).unwrap()
    }

    pub fn y() -> ComplexMatrix {
        let i = Complex64::new(0.0, 1.0);
        ComplexMatrix::from_rows(2, &[ZERO, -i, i, ZERO]).unwrap()
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_real_diagonal(&[1.0, -1.0])
    }
}

/// Kronecker product `a ⊗ b`.
pub fn tensor(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    let dim = a
        .dim()
        .checked_mul(b.dim())
        .ok_or(Error::DimensionTooLarge(usize::MAX))?;
    if dim > MAX_DIM {
        return Err(Error::DimensionTooLarge(dim));
    }
    Ok(ComplexMatrix(a.0.kronecker(&b.0)))
}

/// `sigma_z^H`, `sigma_z^C` and `sigma_z^H sigma_z^C` on the two-spin space.
pub fn sigma_z_h() -> ComplexMatrix {
    tensor(&pauli::z(), &pauli::identity()).unwrap()
}

pub fn sigma_z_c() -> ComplexMatrix {
    tensor(&pauli::identity(), &pauli::z()).unwrap()
}

pub fn sigma_zz() -> ComplexMatrix {
    tensor(&pauli::z(), &pauli::z()).unwrap()
}

/// Parameters of the rotating-frame two-spin Hamiltonian
/// `H = -(1/2) dnu_H sz_H - (1/2) dnu_C sz_C + (1/4) J sz_H sz_C` (in `h * Hz`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub dnu_h: f64,
    pub dnu_c: f64,
    pub j_coupling: f64,
}

impl HamiltonianSpec {
    /// Offsets and coupling used for the chloroform experiment.
    pub const CHLOROFORM: HamiltonianSpec = HamiltonianSpec {
        dnu_h: 2000.0,
        dnu_c: 4000.0,
        j_coupling: 215.1,
    };

    pub fn new(dnu_h: f64, dnu_c: f64, j_coupling: f64) -> Result<Self> {
        let spec = Self {
            dnu_h,
            dnu_c,
            j_coupling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.dnu_h.is_finite() || !self.dnu_c.is_finite() {
            return Err(Error::InvalidArgument(
                "frequency offsets must be finite".into(),
            ));
        }
        if !self.j_coupling.is_finite() || self.j_coupling < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "scalar coupling must be finite and >= 0, got {}",
                self.j_coupling
            )));
        }
        Ok(())
    }

    /// Same offsets with the coupling switched off.
    pub fn without_coupling(&self) -> Self {
        Self {
            j_coupling: 0.0,
            ..*self
        }
    }

    /// Diagonal energy of a computational basis state.
    pub fn energy(&self, state: BasisState) -> f64 {
        let (sh, sc) = (state.h.sign(), state.c.sign());
        -0.5 * self.dnu_h * sh - 0.5 * self.dnu_c * sc + 0.25 * self.j_coupling * sh * sc
    }

    /// The Hamiltonian as a 4x4 matrix in the computational basis.
    pub fn matrix(&self) -> ComplexMatrix {
        let h = sigma_z_h().scale(Complex64::new(-0.5 * self.dnu_h, 0.0));
        let c = sigma_z_c().scale(Complex64::new(-0.5 * self.dnu_c, 0.0));
        let zz = sigma_zz().scale(Complex64::new(0.25 * self.j_coupling, 0.0));
        ComplexMatrix(h.0 + c.0 + zz.0)
    }
}

impl Default for HamiltonianSpec {
    fn default() -> Self {
        Self::CHLOROFORM
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn sign(self) -> f64 {
        match self {
            Spin::Up => 1.0,
            Spin::Down => -1.0,
        }
    }

    fn bit(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    fn from_bit(bit: usize) -> Self {
        if bit == 0 {
            Spin::Up
        } else {
            Spin::Down
        }
    }
}

/// Computational basis state of the (H, C) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisState {
    pub h: Spin,
    pub c: Spin,
}

impl BasisState {
    pub fn all() -> [BasisState; 4] {
        [0, 1, 2, 3].map(Self::from_index)
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            h: Spin::from_bit(index >> 1),
            c: Spin::from_bit(index & 1),
        }
    }

    pub fn index(self) -> usize {
        2 * self.h.bit() + self.c.bit()
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let arrow = |s: Spin| if s == Spin::Up { '↑' } else { '↓' };
        write!(f, "{}{}", arrow(self.h), arrow(self.c))
    }
}

/// Energy-ascending spectrum of the two-spin Hamiltonian.
///
/// `energies[k]` (Hz) belongs to `labels[k]`; this ordering defines the level
/// indices used by every downstream matrix and vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub energies: Vec<f64>,
    pub labels: Vec<BasisState>,
}

impl SpectrumTable {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    /// Computational index of sorted level `k`.
    pub fn basis_index(&self, k: usize) -> usize {
        self.labels[k].index()
    }

    /// Sorted level index of a computational basis state.
    pub fn level_of(&self, state: BasisState) -> usize {
        self.labels.iter().position(|&s| s == state).unwrap()
    }

    /// Energy difference between the second excited level and the ground level, in Hz.
    pub fn gap_02(&self) -> f64 {
        self.energies[2] - self.energies[0]
    }
}

/// Eigen-decomposition of the (diagonal) two-spin Hamiltonian.
///
/// Degenerate levels keep computational-index order.
pub fn spectrum(spec: &HamiltonianSpec) -> SpectrumTable {
    let mut levels: Vec<(f64, BasisState)> = BasisState::all()
        .into_iter()
        .map(|s| (spec.energy(s), s))
        .collect();
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));
    SpectrumTable {
        energies: levels.iter().map(|l| l.0).collect(),
        labels: levels.iter().map(|l| l.1).collect(),
    }
}

/// Conversion between `h * Hz` and peV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyScale {
    pub pev_per_hz: f64,
}

impl EnergyScale {
    /// Physical conversion through the Planck constant.
    pub const PLANCK: EnergyScale = EnergyScale {
        pev_per_hz: PEV_PER_HZ,
    };

    /// Rescales energies so that `E_2 - E_0` equals `gap_pev`.
    pub fn from_gap(spectrum: &SpectrumTable, gap_pev: f64) -> Result<Self> {
        let gap = spectrum.gap_02();
        if !(gap_pev.is_finite() && gap_pev > 0.0) || gap <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "cannot map a gap of {gap} Hz onto {gap_pev} peV"
            )));
        }
        Ok(Self {
            pev_per_hz: gap_pev / gap,
        })
    }

    pub fn to_pev(&self, hz: f64) -> f64 {
        hz * self.pev_per_hz
    }

    pub fn to_hz(&self, pev: f64) -> f64 {
        pev / self.pev_per_hz
    }
}

impl Default for EnergyScale {
    fn default() -> Self {
        Self::PLANCK
    }
}

/// Thermal energy `k_B T`, stored in Hz. `+inf` is the infinite-temperature sentinel.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ThermalEnergy {
    hz: f64,
}

impl ThermalEnergy {
    pub const INFINITE: ThermalEnergy = ThermalEnergy { hz: f64::INFINITY };

    pub fn from_hz(hz: f64) -> Result<Self> {
        if hz.is_nan() || hz <= 0.0 || hz == f64::NEG_INFINITY {
            return Err(Error::InvalidTemperature(hz));
        }
        Ok(Self { hz })
    }

    pub fn from_pev(pev: f64, scale: &EnergyScale) -> Result<Self> {
        if pev.is_nan() || pev <= 0.0 {
            return Err(Error::InvalidTemperature(pev));
        }
        Self::from_hz(scale.to_hz(pev))
    }

    pub fn hz(&self) -> f64 {
        self.hz
    }

    pub fn pev(&self, scale: &EnergyScale) -> f64 {
        scale.to_pev(self.hz)
    }

    pub fn is_infinite(&self) -> bool {
        self.hz.is_infinite()
    }
}

/// Occupation probabilities of the sorted energy levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationVector {
    probs: Vec<f64>,
    kt: Option<ThermalEnergy>,
}

impl PopulationVector {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(probs: Vec<f64>, kt: Option<ThermalEnergy>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPopulations("empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidPopulations(format!(
                "entry {bad} outside [0, 1]"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidPopulations(format!("entries sum to {sum}")));
        }
        Ok(Self { probs, kt })
    }

    /// Renormalizes measured populations whose sum is within `tolerance` of 1.
    pub fn from_measured(raw: Vec<f64>, tolerance: f64, kt: Option<ThermalEnergy>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > tolerance {
            return Err(Error::InvalidPopulations(format!(
                "measured populations {raw:?} (sum {sum}) are not a distribution"
            )));
        }
        Self::new(raw.iter().map(|p| p / sum).collect(), kt)
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            probs: vec![1.0 / dim as f64; dim],
            kt: Some(ThermalEnergy::INFINITE),
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kt(&self) -> Option<ThermalEnergy> {
        self.kt
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    /// Diagonal density matrix in the computational basis.
    pub fn density_matrix(&self, spectrum: &SpectrumTable) -> ComplexMatrix {
        let mut diag = vec![0.0; spectrum.dim()];
        for (k, p) in self.probs.iter().enumerate() {
            diag[spectrum.basis_index(k)] = *p;
        }
        ComplexMatrix::from_real_diagonal(&diag)
    }
}

/// Gibbs populations `p_n ∝ exp(-E_n / kT)` over the sorted levels.
pub fn gibbs_populations(spectrum: &SpectrumTable, kt: ThermalEnergy) -> PopulationVector {
    if kt.is_infinite() {
        return PopulationVector::uniform(spectrum.dim());
    }
    let ground = spectrum.energies[0];
    let weights: Vec<f64> = spectrum
        .energies
        .iter()
        .map(|e| (-(e - ground) / kt.hz()).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    PopulationVector {
        probs: weights.iter().map(|w| w / z).collect(),
        kt: Some(kt),
    }
}

/// Validation tolerance for Hermiticity and unit trace in [`expectation`].
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// `Re Tr(obs * state)` for a Hermitian observable and a density matrix.
pub fn expectation(obs: &ComplexMatrix, state: &ComplexMatrix) -> Result<f64> {
    if obs.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: obs.dim(),
            actual: state.dim(),
        });
    }
    let dev = obs.hermiticity_error();
    if dev > HERMITIAN_TOLERANCE {
        return Err(Error::NonHermitian {
            what: "observable",
            deviation: dev,
        });
    }
    let dev = state.hermiticity_error();
    if dev > HERMITIAN_TOLERANCE {
        return Err(Error::NonHermitian {
            what: "state",
            deviation: dev,
        });
    }
    let trace = state.trace();
    if (trace.re - 1.0).abs() > HERMITIAN_TOLERANCE || trace.im.abs() > HERMITIAN_TOLERANCE {
        return Err(Error::BadTrace { trace: trace.re });
    }
    let value = (obs * state).trace();
    debug_assert!(value.im.abs() < 1e-9, "imaginary residue {}", value.im);
    Ok(value.re)
}
