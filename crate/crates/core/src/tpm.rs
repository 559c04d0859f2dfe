//! Two-point-measurement statistics: transition probabilities, work
//! distributions and the fluctuation identities they obey.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{ComplexMatrix, EnergyScale, PopulationVector, SpectrumTable, ThermalEnergy};
use crate::io;

/// Work values closer than this (Hz) share a bin.
pub const WORK_BIN_TOLERANCE: f64 = 1e-9;

/// Bistochastic tolerance for exact (oracle) matrices.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Bistochastic tolerance for reconstructed matrices.
pub const RECONSTRUCTED_TOLERANCE: f64 = 1e-6;

const UNITARITY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Forward, Direction::Backward];

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            _ => Err(Error::InvalidArgument(format!("unknown direction {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Reconstructed,
}

/// `p_{m|n}` stored with row `m` (final level) and column `n` (initial level).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    #[serde(with = "crate::io::matrix_rows")]
    probs: DMatrix<f64>,
    pub direction: Direction,
    pub provenance: Provenance,
}

impl TransitionMatrix {
    /// Wraps a matrix after checking the box and bistochastic constraints for `provenance`.
    pub fn new(probs: DMatrix<f64>, direction: Direction, provenance: Provenance) -> Result<Self> {
        let tol = match provenance {
            Provenance::Oracle => ORACLE_TOLERANCE,
            Provenance::Reconstructed => RECONSTRUCTED_TOLERANCE,
        };
        if !probs.is_square() {
            return Err(Error::NotSquare {
                rows: probs.nrows(),
                cols: probs.ncols(),
            });
        }
        if let Some(bad) = probs.iter().find(|p| !(-tol..=1.0 + tol).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "transition probability {bad} outside [0, 1]"
            )));
        }
        let dev = bistochastic_deviation(&probs);
        if dev > tol {
            return Err(Error::InvalidArgument(format!(
                "matrix is not bistochastic (deviation {dev:e} > {tol:e})"
            )));
        }
        Ok(Self {
            probs,
            direction,
            provenance,
        })
    }

    /// No constraint checks. Used for projections that failed to converge, which are always flagged.
    pub(crate) fn unchecked(probs: DMatrix<f64>, direction: Direction, provenance: Provenance) -> Self {
        Self {
            probs,
            direction,
            provenance,
        }
    }

    pub fn identity(dim: usize, direction: Direction) -> Self {
        Self {
            probs: DMatrix::identity(dim, dim),
            direction,
            provenance: Provenance::Oracle,
        }
    }

    pub fn dim(&self) -> usize {
        self.probs.nrows()
    }

    /// `p_{m|n}`.
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.probs[(m, n)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.probs
    }

    /// The matrix with rows and columns exchanged, tagged with the opposite direction.
    pub fn transposed(&self) -> Self {
        Self {
            probs: self.probs.transpose(),
            direction: match self.direction {
                Direction::Forward => Direction::Backward,
                Direction::Backward => Direction::Forward,
            },
            provenance: self.provenance,
        }
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        (&self.probs - &other.probs).amax()
    }
}

/// Largest deviation of any row or column sum from one.
pub fn bistochastic_deviation(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// `max |p^F_{m|n} - p^B_{n|m}|`.
pub fn micro_reversibility_error(forward: &TransitionMatrix, backward: &TransitionMatrix) -> f64 {
    (forward.matrix() - backward.matrix().transpose()).amax()
}

/// Exact transition probabilities `|<m|U|n>|^2` between sorted energy levels.
///
/// Initial and final Hamiltonians coincide, so both bases come from `basis`.
pub fn transition_matrix(
    u: &ComplexMatrix,
    basis: &SpectrumTable,
    direction: Direction,
) -> Result<TransitionMatrix> {
    if u.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            actual: u.dim(),
        });
    }
    let deviation = u.unitarity_error();
    if deviation > UNITARITY_TOLERANCE {
        return Err(Error::NotUnitary { deviation });
    }
    let d = basis.dim();
    let probs = DMatrix::from_fn(d, d, |m, n| {
        u.get(basis.basis_index(m), basis.basis_index(n)).norm_sqr()
    });
    TransitionMatrix::new(probs, direction, Provenance::Oracle)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkPoint {
    /// Work in Hz (`h * Hz`).
    pub work: f64,
    pub prob: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkHeader {
    direction: Direction,
    #[serde(with = "crate::io::opt_kt_serde")]
    kt_pev: Option<f64>,
    pev_per_hz: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkLine {
    work_hz: f64,
    work_pev: f64,
    prob: f64,
}

/// `P(W)` over the distinct energy differences `E_m - E_n`, sorted by `W`.
///
/// Every gap of the spectrum gets a bin, including bins with zero mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkDistribution {
    pub points: Vec<WorkPoint>,
    pub direction: Direction,
    pub kt: Option<ThermalEnergy>,
}

impl WorkDistribution {
    pub fn total(&self) -> f64 {
        self.points.iter().map(|p| p.prob).sum()
    }

    /// Probability at `work`, if a bin exists there.
    pub fn prob_at(&self, work: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| (p.work - work).abs() <= WORK_BIN_TOLERANCE)
            .map(|p| p.prob)
    }

    /// Work values carrying more than `threshold` probability.
    pub fn support(&self, threshold: f64) -> Vec<f64> {
        self.points
            .iter()
            .filter(|p| p.prob > threshold)
            .map(|p| p.work)
            .collect()
    }

    /// Header carries direction, kT (peV) and the energy scale; one `{work_hz, work_pev, prob}` line per bin.
    pub fn write<W: Write>(&self, out: W, scale: &EnergyScale) -> Result<()> {
        let header = WorkHeader {
            direction: self.direction,
            kt_pev: self.kt.map(|k| k.pev(scale)),
            pev_per_hz: scale.pev_per_hz,
        };
        let lines: Vec<WorkLine> = self
            .points
            .iter()
            .map(|p| WorkLine {
                work_hz: p.work,
                work_pev: scale.to_pev(p.work),
                prob: p.prob,
            })
            .collect();
        let header = serde_json::to_value(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        io::write_document(out, io::WORKDIST_FORMAT, &header, &lines)
    }

    pub fn read<R: BufRead>(input: R) -> Result<(WorkDistribution, EnergyScale)> {
        let doc = io::read_document(input, io::WORKDIST_FORMAT)?;
        let mut fields = doc.header;
        fields.remove("format");
        fields.remove("version");
        let header: WorkHeader = serde_json::from_value(serde_json::Value::Object(fields))
            .map_err(|e| Error::parse(1, e.to_string()))?;
        let scale = EnergyScale {
            pev_per_hz: header.pev_per_hz,
        };
        let kt = header.kt_pev.map(|k| ThermalEnergy::from_pev(k, &scale)).transpose()?;
        let points = doc
            .records
            .into_iter()
            .map(|(line, v)| {
                serde_json::from_value::<WorkLine>(v)
                    .map(|l| WorkPoint {
                        work: l.work_hz,
                        prob: l.prob,
                    })
                    .map_err(|e| Error::parse(line, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((
            WorkDistribution {
                points,
                direction: header.direction,
                kt,
            },
            scale,
        ))
    }
}

/// Accumulates `p_n p_{m|n}` at `W = E_m - E_n`.
pub fn work_distribution(
    pops: &PopulationVector,
    t: &TransitionMatrix,
    spectrum: &SpectrumTable,
) -> Result<WorkDistribution> {
    let d = spectrum.dim();
    if pops.dim() != d || t.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: if pops.dim() != d { pops.dim() } else { t.dim() },
        });
    }
    let mut raw: Vec<WorkPoint> = Vec::with_capacity(d * d);
    for n in 0..d {
        for m in 0..d {
            raw.push(WorkPoint {
                work: spectrum.energies[m] - spectrum.energies[n],
                prob: pops.probs()[n] * t.get(m, n),
            });
        }
    }
    raw.sort_by(|a, b| a.work.total_cmp(&b.work));
    let mut points: Vec<WorkPoint> = Vec::new();
    for p in raw {
        match points.last_mut() {
            Some(last) if (p.work - last.work).abs() <= WORK_BIN_TOLERANCE => last.prob += p.prob,
            _ => points.push(p),
        }
    }
    Ok(WorkDistribution {
        points,
        direction: t.direction,
        kt: pops.kt(),
    })
}

/// `<W> = Σ W P(W)`, in Hz.
pub fn mean_work(w: &WorkDistribution) -> f64 {
    w.points.iter().map(|p| p.work * p.prob).sum()
}

/// `Σ P(W) exp(-W / kT)`; equals one for exact statistics with `ΔF = 0`.
pub fn jarzynski_functional(w: &WorkDistribution, kt: ThermalEnergy) -> f64 {
    w.points
        .iter()
        .map(|p| p.prob * (-p.work / kt.hz()).exp())
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrooksPoint {
    pub work: f64,
    pub ln_ratio: f64,
    pub p_forward: f64,
    pub p_backward: f64,
}

/// A forward work value that could not be paired with a usable backward partner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnpairedPoint {
    pub work: f64,
    pub p_forward: f64,
    /// `None` when the backward distribution has no bin at `-W`.
    pub p_backward: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CrooksPoints {
    pub paired: Vec<CrooksPoint>,
    pub unpaired: Vec<UnpairedPoint>,
}

/// `(W, ln[P^F(W) / P^B(-W)])` for every forward bin where both probabilities exceed `floor`.
///
/// Bins failing the floor are returned in `unpaired` rather than dropped.
pub fn crooks_points(
    forward: &WorkDistribution,
    backward: &WorkDistribution,
    floor: f64,
) -> CrooksPoints {
    let mut out = CrooksPoints::default();
    for p in &forward.points {
        let partner = backward.prob_at(-p.work);
        match partner {
            Some(pb) if p.prob > floor && pb > floor => out.paired.push(CrooksPoint {
                work: p.work,
                ln_ratio: (p.prob / pb).ln(),
                p_forward: p.prob,
                p_backward: pb,
            }),
            _ => out.unpaired.push(UnpairedPoint {
                work: p.work,
                p_forward: p.prob,
                p_backward: partner,
            }),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{gibbs_populations, spectrum, EnergyScale, HamiltonianSpec};
    use crate::pulses::{build_backward, build_forward, ProtocolAngles};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn chloroform() -> SpectrumTable {
        spectrum(&HamiltonianSpec::CHLOROFORM)
    }

    fn kt_pev(v: f64) -> ThermalEnergy {
        ThermalEnergy::from_pev(v, &EnergyScale::PLANCK).unwrap()
    }

    fn oracle_pair(angles: &ProtocolAngles) -> (TransitionMatrix, TransitionMatrix) {
        let s = chloroform();
        let j = HamiltonianSpec::CHLOROFORM.j_coupling;
        let f = transition_matrix(&build_forward(angles, j).unwrap(), &s, Direction::Forward).unwrap();
        let b = transition_matrix(&build_backward(angles, j).unwrap(), &s, Direction::Backward).unwrap();
        (f, b)
    }

    #[test]
    fn identity_and_swap() {
        let s = chloroform();
        let t = transition_matrix(&ComplexMatrix::identity(4), &s, Direction::Forward).unwrap();
        assert_eq!(t.matrix(), &DMatrix::identity(4, 4));

        // SWAP exchanges ↑↓ and ↓↑, the two middle levels.
        let (o, l) = (Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0));
        let swap = ComplexMatrix::from_rows(4, &[l, o, o, o, o, o, l, o, o, l, o, o, o, o, o, l]).unwrap();
        let t = transition_matrix(&swap, &s, Direction::Forward).unwrap();
        let mut expected = DMatrix::identity(4, 4);
        expected.swap_columns(1, 2);
        assert_eq!(t.matrix(), &expected);
    }

    #[test]
    fn rejects_non_unitary() {
        let m = ComplexMatrix::identity(4).scale(Complex64::new(1.1, 0.0));
        assert!(matches!(
            transition_matrix(&m, &chloroform(), Direction::Forward),
            Err(Error::NotUnitary { .. })
        ));
    }

    #[test]
    fn default_drive_populates_many_channels() {
        let (f, _) = oracle_pair(&ProtocolAngles::default());
        let nonzero = f.matrix().iter().filter(|p| **p > 0.01).count();
        assert!(nonzero >= 14, "only {nonzero} channels above 1%");
        assert!(bistochastic_deviation(f.matrix()) < 1e-12);
    }

    #[test]
    fn identity_work_is_a_spike_at_zero() {
        let s = chloroform();
        let pops = gibbs_populations(&s, kt_pev(20.0));
        let w = work_distribution(&pops, &TransitionMatrix::identity(4, Direction::Forward), &s).unwrap();
        assert_eq!(w.support(0.0), vec![0.0]);
        assert_eq!(mean_work(&w), 0.0);
        assert_eq!(jarzynski_functional(&w, kt_pev(20.0)), 1.0);
        // 13 bins: zero plus the 12 signed gaps
        assert_eq!(w.points.len(), 13);
    }

    #[test]
    fn uniform_populations_give_zero_mean_work() {
        let s = chloroform();
        let (f, _) = oracle_pair(&ProtocolAngles::default());
        let w = work_distribution(&PopulationVector::uniform(4), &f, &s).unwrap();
        assert!(mean_work(&w).abs() < 1e-9);
    }

    #[test]
    fn brute_force_work_distribution() {
        let s = chloroform();
        let (f, _) = oracle_pair(&ProtocolAngles::default());
        let pops = gibbs_populations(&s, kt_pev(20.0));
        let w = work_distribution(&pops, &f, &s).unwrap();
        assert!((w.total() - 1.0).abs() < 1e-12);
        for m in 0..4 {
            for n in 0..4 {
                let gap = s.energies[m] - s.energies[n];
                // every (m, n) gap is distinct unless m == n
                let mut expected = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        if (s.energies[a] - s.energies[b] - gap).abs() < 1e-9 {
                            expected += pops.probs()[b] * f.get(a, b);
                        }
                    }
                }
                assert!((w.prob_at(gap).unwrap() - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_gaps_are_binned() {
        let s = spectrum(&HamiltonianSpec::new(0.0, 0.0, 100.0).unwrap());
        let (f, _) = oracle_pair(&ProtocolAngles::default());
        let w = work_distribution(&PopulationVector::uniform(4), &f, &s).unwrap();
        let works: Vec<f64> = w.points.iter().map(|p| p.work).collect();
        assert_eq!(works, vec![-50.0, 0.0, 50.0]);
    }

    #[test]
    fn jarzynski_fails_at_wrong_temperature() {
        let s = chloroform();
        let (f, _) = oracle_pair(&ProtocolAngles::default());
        let w = work_distribution(&gibbs_populations(&s, kt_pev(20.0)), &f, &s).unwrap();
        assert!((jarzynski_functional(&w, kt_pev(20.0)) - 1.0).abs() < 1e-10);
        let wrong = jarzynski_functional(&w, kt_pev(9.0));
        assert!((wrong - 1.0).abs() > 1e-3, "functional {wrong}");
    }

    #[test]
    fn crooks_routing() {
        let s = chloroform();
        let pops = gibbs_populations(&s, kt_pev(12.0));
        let id = TransitionMatrix::identity(4, Direction::Forward);
        let w = work_distribution(&pops, &id, &s).unwrap();
        let c = crooks_points(&w, &w, 0.0);
        assert_eq!(c.paired.len(), 1);
        assert_eq!(c.paired[0].work, 0.0);
        assert_eq!(c.paired[0].ln_ratio, 0.0);
        assert_eq!(c.unpaired.len(), 12);

        let forward_only = WorkDistribution {
            points: vec![WorkPoint { work: 5.0, prob: 1.0 }],
            direction: Direction::Forward,
            kt: None,
        };
        let c = crooks_points(&forward_only, &w, 0.0);
        assert!(c.paired.is_empty());
        assert_eq!(c.unpaired[0].p_backward, None);
    }

    #[test]
    fn oracle_crooks_points_lie_on_the_line() {
        let s = chloroform();
        let (f, b) = oracle_pair(&ProtocolAngles::default());
        for kt in [20.0, 12.0, 9.0] {
            let pops = gibbs_populations(&s, kt_pev(kt));
            let wf = work_distribution(&pops, &f, &s).unwrap();
            let wb = work_distribution(&pops, &b, &s).unwrap();
            let c = crooks_points(&wf, &wb, 0.0);
            assert_eq!(c.paired.len(), 13);
            for p in &c.paired {
                let expected = p.work / kt_pev(kt).hz();
                assert!((p.ln_ratio - expected).abs() <= 1e-9 * expected.abs().max(1e-3));
            }
        }
    }

    fn angles_strategy() -> impl Strategy<Value = ProtocolAngles> {
        (prop::array::uniform6(-PI..PI), prop::array::uniform6(-PI..PI))
            .prop_map(|(alpha, gamma)| ProtocolAngles { alpha, gamma })
    }

    proptest! {
        #[test]
        fn micro_reversibility_and_jarzynski(angles in angles_strategy(), kt in 1.0f64..100.0) {
            let (f, b) = oracle_pair(&angles);
            prop_assert!(micro_reversibility_error(&f, &b) < 1e-12);
            prop_assert!(bistochastic_deviation(f.matrix()) < 1e-9);
            let s = chloroform();
            let pops = gibbs_populations(&s, kt_pev(kt));
            let w = work_distribution(&pops, &f, &s).unwrap();
            prop_assert!((jarzynski_functional(&w, kt_pev(kt)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn work_distribution_file_round_trip() {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        let scale = EnergyScale::PLANCK;
        let u = build_forward(&ProtocolAngles::default(), 215.1).unwrap();
        let t = transition_matrix(&u, &s, Direction::Forward).unwrap();
        let pops = gibbs_populations(&s, ThermalEnergy::from_pev(12.0, &scale).unwrap());
        let w = work_distribution(&pops, &t, &s).unwrap();
        let mut buf = Vec::new();
        w.write(&mut buf, &scale).unwrap();
        let (back, back_scale) = WorkDistribution::read(buf.as_slice()).unwrap();
        assert_eq!(back_scale, scale);
        assert_eq!(back.points, w.points);
        assert!((back.kt.unwrap().hz() - w.kt.unwrap().hz()).abs() < 1e-9 * w.kt.unwrap().hz());

        let hot = work_distribution(&crate::hilbert::PopulationVector::uniform(4), &t, &s).unwrap();
        let mut buf = Vec::new();
        hot.write(&mut buf, &scale).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().lines().next().unwrap().contains("\"inf\""));
        assert!(WorkDistribution::read(buf.as_slice()).unwrap().0.kt.unwrap().is_infinite());
    }
}
