//! Reconstruction of the transition matrix from observable means.
//!
//! The `d x d` matrix is bistochastic, so only the leading `(d-1) x (d-1)`
//! block is unknown. For an observable diagonal in the energy basis with
//! eigenvalues `o_m`, eliminating the last row and column gives
//!
//! ```text
//! <O> = o_d + Σ_{m<d} (o_m - o_d) [ p_d + Σ_{n<d} (p_n - p_d) p_{m|n} ]
//! ```
//!
//! so each measured mean contributes one linear equation with coefficients
//! `(o_m - o_d)(p_n - p_d)` and constant `o_d + p_d Σ_{m<d}(o_m - o_d)`.
//! The least-squares solution is completed to a full matrix and projected
//! onto the box-constrained bistochastic set by alternating clamping and
//! Sinkhorn balancing.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::SpectrumTable;
use crate::io;
use crate::measure::{observable_diagonals, Dataset, Observable};
use crate::tpm::{bistochastic_deviation, Direction, Provenance, TransitionMatrix};

/// Entries below this are raised to it before Sinkhorn balancing.
pub const SINKHORN_FLOOR: f64 = 1e-12;

/// Condition numbers above this raise an [`InversionFlag::IllConditioned`] warning.
pub const CONDITION_WARNING: f64 = 1e8;

/// Rows whose coefficients are all below this carry no information.
const UNINFORMATIVE_ROW: f64 = 1e-14;

/// Bijection between `(m, n)` in the reduced block and the flat unknown index `m * (d-1) + n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnknownIndex {
    pub dim: usize,
}

impl UnknownIndex {
    pub fn reduced(&self) -> usize {
        self.dim - 1
    }

    pub fn len(&self) -> usize {
        self.reduced() * self.reduced()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self, m: usize, n: usize) -> usize {
        m * self.reduced() + n
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        (k / self.reduced(), k % self.reduced())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationInfo {
    pub observable: Observable,
    pub kt_pev: f64,
    pub uninformative: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub rank: usize,
    pub condition_number: f64,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub index: UnknownIndex,
    pub equations: Vec<EquationInfo>,
}

impl LinearSystem {
    pub fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm()
    }

    pub fn conditioning(&self) -> Conditioning {
        let svd = self.a.clone().svd(false, false);
        conditioning_from(&svd.singular_values, self.a.nrows(), self.a.ncols())
    }

    /// Appends the rows of `other`; used to check that duplicate rows never raise the residual.
    pub fn stacked(&self, other: &LinearSystem) -> LinearSystem {
        let rows = self.a.nrows() + other.a.nrows();
        let a = DMatrix::from_fn(rows, self.a.ncols(), |i, j| {
            if i < self.a.nrows() {
                self.a[(i, j)]
            } else {
                other.a[(i - self.a.nrows(), j)]
            }
        });
        let b = DVector::from_iterator(rows, self.b.iter().chain(other.b.iter()).copied());
        let mut equations = self.equations.clone();
        equations.extend(other.equations.iter().cloned());
        LinearSystem {
            a,
            b,
            index: self.index,
            equations,
        }
    }
}

fn rank_tolerance(sv: &DVector<f64>, rows: usize, cols: usize) -> f64 {
    sv.max() * rows.max(cols) as f64 * f64::EPSILON
}

fn conditioning_from(sv: &DVector<f64>, rows: usize, cols: usize) -> Conditioning {
    let tol = rank_tolerance(sv, rows, cols);
    let rank = sv.iter().filter(|s| **s > tol).count();
    let min = sv.min();
    let condition_number = if min > 0.0 { sv.max() / min } else { f64::INFINITY };
    let mut singular_values: Vec<f64> = sv.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Conditioning {
        rank,
        condition_number,
        singular_values,
    }
}

/// One equation per record of `direction`, using that direction's population blocks.
pub fn build_system(ds: &Dataset, spectrum: &SpectrumTable, direction: Direction) -> Result<LinearSystem> {
    let d = spectrum.dim();
    let index = UnknownIndex { dim: d };
    let diagonals = observable_diagonals(spectrum);
    let records: Vec<_> = ds.records_for(direction).collect();
    if records.len() < index.len() {
        return Err(Error::UnderDetermined {
            equations: records.len(),
            unknowns: index.len(),
        });
    }
    let mut a = DMatrix::zeros(records.len(), index.len());
    let mut b = DVector::zeros(records.len());
    let mut equations = Vec::with_capacity(records.len());
    for (row, rec) in records.iter().enumerate() {
        let block = ds
            .population_block(direction, rec.kt_pev)
            .ok_or(Error::MissingPopulations {
                direction,
                kt_pev: rec.kt_pev,
            })?;
        if block.probs.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: block.probs.len(),
            });
        }
        let total: f64 = block.probs.iter().sum();
        let p: Vec<f64> = block.probs.iter().map(|x| x / total).collect();
        let o = diagonals.get(rec.observable);
        let (o_last, p_last) = (o[d - 1], p[d - 1]);
        let mut constant = o_last;
        let mut largest = 0.0_f64;
        for m in 0..d - 1 {
            let delta = o[m] - o_last;
            constant += delta * p_last;
            for n in 0..d - 1 {
                let coef = delta * (p[n] - p_last);
                a[(row, index.flat(m, n))] = coef;
                largest = largest.max(coef.abs());
            }
        }
        b[row] = rec.mean - constant;
        equations.push(EquationInfo {
            observable: rec.observable,
            kt_pev: rec.kt_pev,
            uninformative: largest < UNINFORMATIVE_ROW,
        });
    }
    let informative = equations.iter().filter(|e| !e.uninformative).count();
    if informative < index.len() {
        return Err(Error::UnderDetermined {
            equations: informative,
            unknowns: index.len(),
        });
    }
    Ok(LinearSystem {
        a,
        b,
        index,
        equations,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveOptions {
    /// Return the minimum-norm solution instead of failing on rank deficiency.
    pub allow_rank_deficient: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresSolution {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub conditioning: Conditioning,
    pub ill_conditioned: bool,
    pub rank_deficient: bool,
}

/// Minimum-norm least squares through the singular value decomposition.
pub fn solve_least_squares(sys: &LinearSystem, opts: SolveOptions) -> Result<LeastSquaresSolution> {
    let (rows, cols) = sys.a.shape();
    if rows < cols {
        return Err(Error::UnderDetermined {
            equations: rows,
            unknowns: cols,
        });
    }
    let svd = sys.a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let sv = &svd.singular_values;
    let tol = rank_tolerance(sv, rows, cols);
    let conditioning = conditioning_from(sv, rows, cols);

    let rank_deficient = conditioning.rank < cols;
    if rank_deficient && !opts.allow_rank_deficient {
        let directions = (0..sv.len())
            .filter(|&i| sv[i] <= tol)
            .map(|i| v_t.row(i).iter().copied().collect())
            .collect();
        return Err(Error::RankDeficient {
            rank: conditioning.rank,
            unknowns: cols,
            directions,
        });
    }

    let mut x = DVector::zeros(cols);
    for i in 0..sv.len() {
        if sv[i] > tol {
            let coef = u.column(i).dot(&sys.b) / sv[i];
            x += v_t.row(i).transpose() * coef;
        }
    }
    Ok(LeastSquaresSolution {
        residual_norm: sys.residual_norm(&x),
        ill_conditioned: conditioning.condition_number > CONDITION_WARNING,
        conditioning,
        rank_deficient,
        x,
    })
}

/// Fills the last row and column from the bistochastic identities. No clamping.
pub fn complete_matrix(x: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    let index = UnknownIndex { dim };
    if x.len() != index.len() {
        return Err(Error::DimensionMismatch {
            expected: index.len(),
            actual: x.len(),
        });
    }
    let r = index.reduced();
    let mut m = DMatrix::zeros(dim, dim);
    for (k, v) in x.iter().enumerate() {
        let (i, j) = index.pair(k);
        m[(i, j)] = *v;
    }
    for i in 0..r {
        let row: f64 = (0..r).map(|j| m[(i, j)]).sum();
        m[(i, r)] = 1.0 - row;
    }
    for j in 0..dim {
        let col: f64 = (0..r).map(|i| m[(i, j)]).sum();
        m[(r, j)] = 1.0 - col;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinkhornOutcome {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub deviation: f64,
}

/// Alternating row and column normalization.
///
/// Entries below [`SINKHORN_FLOOR`] are raised to it first; a row or column
/// with no entry above the floor cannot be balanced. One iteration is a row
/// pass followed by a column pass.
pub fn sinkhorn(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<SinkhornOutcome> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().all(|v| *v <= SINKHORN_FLOOR) {
            return Err(Error::Unbalanceable { axis: "row", index: i });
        }
    }
    for (j, col) in m.column_iter().enumerate() {
        if col.iter().all(|v| *v <= SINKHORN_FLOOR) {
            return Err(Error::Unbalanceable { axis: "column", index: j });
        }
    }
    let mut cur = m.map(|v| v.max(SINKHORN_FLOOR));
    let mut deviation = bistochastic_deviation(&cur);
    let mut iterations = 0;
    while deviation >= tol && iterations < max_iter {
        for mut row in cur.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        for mut col in cur.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        iterations += 1;
        deviation = bistochastic_deviation(&cur);
    }
    Ok(SinkhornOutcome {
        matrix: cur,
        iterations,
        converged: deviation < tol,
        deviation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    pub final_change: f64,
    pub converged: bool,
    /// Entries of the input outside `[0, 1]`.
    pub clamped_entries: usize,
}

/// Closest physical matrix: alternately minimize `Σ (x - Ξ)^2` over the box
/// `0 <= Ξ <= 1` (entrywise clamping) and Sinkhorn-balance the result, until
/// successive iterates differ by less than `tol` in max norm.
pub fn mle_project(raw: &DMatrix<f64>, opts: MleOptions) -> Result<Projection> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("MLE tolerance and iteration cap must be positive".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let clamped_entries = raw.iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
    let mut current = raw.clone();
    let mut change = f64::INFINITY;
    let mut iterations = 0;
    let mut balanced = false;
    while iterations < opts.max_iter {
        let boxed = current.map(|v| v.clamp(0.0, 1.0));
        let outcome = sinkhorn(&boxed, opts.tol, opts.max_iter)?;
        change = (&outcome.matrix - &current).amax();
        current = outcome.matrix;
        balanced = outcome.converged;
        iterations += 1;
        if change < opts.tol && balanced {
            break;
        }
    }
    Ok(Projection {
        converged: change < opts.tol && balanced,
        matrix: current,
        iterations,
        final_change: change,
        clamped_entries,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum InversionFlag {
    ClampedEntries { count: usize },
    IllConditioned { condition_number: f64 },
    RankDeficient { rank: usize },
    UninformativeEquations { count: usize },
    NotConverged,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct InversionOptions {
    pub mle: MleOptions,
    pub solve: SolveOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionReport {
    pub direction: Direction,
    pub raw_solution: Vec<f64>,
    #[serde(with = "crate::io::matrix_rows")]
    pub raw_matrix: DMatrix<f64>,
    pub projected: TransitionMatrix,
    pub iterations: usize,
    pub final_change: f64,
    pub converged: bool,
    pub residual_norm: f64,
    pub rank: usize,
    pub condition_number: f64,
    pub flags: Vec<InversionFlag>,
}

impl InversionReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn write_all<W: Write>(reports: &[InversionReport], out: W) -> Result<()> {
        io::write_document(out, io::INVERSION_FORMAT, &serde_json::json!({}), reports)
    }

    pub fn read_all<R: BufRead>(input: R) -> Result<Vec<InversionReport>> {
        let doc = io::read_document(input, io::INVERSION_FORMAT)?;
        doc.records
            .into_iter()
            .map(|(line, v)| serde_json::from_value(v).map_err(|e| Error::parse(line, e.to_string())))
            .collect()
    }
}

/// build_system → solve_least_squares → complete_matrix → mle_project.
pub fn invert_pipeline(
    ds: &Dataset,
    spectrum: &SpectrumTable,
    direction: Direction,
    opts: InversionOptions,
) -> Result<InversionReport> {
    let sys = build_system(ds, spectrum, direction)?;
    let solution = solve_least_squares(&sys, opts.solve)?;
    let raw_solution: Vec<f64> = solution.x.iter().copied().collect();
    let raw_matrix = complete_matrix(&raw_solution, spectrum.dim())?;
    let projection = mle_project(&raw_matrix, opts.mle)?;

    let mut flags = Vec::new();
    if projection.clamped_entries > 0 {
        flags.push(InversionFlag::ClampedEntries {
            count: projection.clamped_entries,
        });
    }
    if solution.ill_conditioned {
        flags.push(InversionFlag::IllConditioned {
            condition_number: solution.conditioning.condition_number,
        });
    }
    if solution.rank_deficient {
        flags.push(InversionFlag::RankDeficient {
            rank: solution.conditioning.rank,
        });
    }
    let uninformative = sys.equations.iter().filter(|e| e.uninformative).count();
    if uninformative > 0 {
        flags.push(InversionFlag::UninformativeEquations { count: uninformative });
    }
    let projected = if projection.converged {
        TransitionMatrix::new(projection.matrix, direction, Provenance::Reconstructed)?
    } else {
        flags.push(InversionFlag::NotConverged);
        TransitionMatrix::unchecked(projection.matrix, direction, Provenance::Reconstructed)
    };
    Ok(InversionReport {
        direction,
        raw_solution,
        raw_matrix,
        projected,
        iterations: projection.iterations,
        final_change: projection.final_change,
        converged: projection.converged,
        residual_norm: solution.residual_norm,
        rank: solution.conditioning.rank,
        condition_number: solution.conditioning.condition_number,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{gibbs_populations, spectrum, EnergyScale, HamiltonianSpec, PopulationVector, ThermalEnergy};
    use crate::measure::{add_noise, simulate_observables};
    use crate::pulses::{build_forward, ProtocolAngles};
    use crate::tpm::transition_matrix;

    fn pops(kts: &[f64]) -> Vec<PopulationVector> {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        kts.iter()
            .map(|k| gibbs_populations(&s, ThermalEnergy::from_pev(*k, &EnergyScale::PLANCK).unwrap()))
            .collect()
    }

    fn oracle_dataset(kts: &[f64]) -> (Dataset, TransitionMatrix, SpectrumTable) {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        let u = build_forward(&ProtocolAngles::default(), HamiltonianSpec::CHLOROFORM.j_coupling).unwrap();
        let t = transition_matrix(&u, &s, Direction::Forward).unwrap();
        let ds = simulate_observables(&u, &pops(kts), &s, Direction::Forward, &EnergyScale::PLANCK).unwrap();
        (ds, t, s)
    }

    fn oracle_unknowns(t: &TransitionMatrix) -> DVector<f64> {
        DVector::from_fn(9, |k, _| t.get(k / 3, k % 3))
    }

    #[test]
    fn oracle_unknowns_satisfy_the_system() {
        let (ds, t, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let sys = build_system(&ds, &s, Direction::Forward).unwrap();
        assert_eq!(sys.a.shape(), (9, 9));
        assert!(sys.residual_norm(&oracle_unknowns(&t)) < 1e-12);
        assert_eq!(sys.conditioning().rank, 9);
    }

    #[test]
    fn infinite_temperature_rows_are_uninformative() {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        let u = build_forward(&ProtocolAngles::default(), 215.1).unwrap();
        let mut p = pops(&[20.0, 12.0, 9.0]);
        p.push(PopulationVector::uniform(4));
        let ds = simulate_observables(&u, &p, &s, Direction::Forward, &EnergyScale::PLANCK).unwrap();
        let sys = build_system(&ds, &s, Direction::Forward).unwrap();
        let flagged: Vec<bool> = sys.equations.iter().map(|e| e.uninformative).collect();
        assert_eq!(flagged.iter().filter(|f| **f).count(), 3);
        assert!(flagged[9..].iter().all(|f| *f));
        assert!(sys.a.rows(9, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn only_infinite_temperature_is_under_determined() {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        let u = build_forward(&ProtocolAngles::default(), 215.1).unwrap();
        let mut p = pops(&[20.0, 12.0]);
        p.push(PopulationVector::uniform(4));
        let ds = simulate_observables(&u, &p, &s, Direction::Forward, &EnergyScale::PLANCK).unwrap();
        assert!(matches!(
            build_system(&ds, &s, Direction::Forward),
            Err(Error::UnderDetermined { equations: 6, unknowns: 9 })
        ));
    }

    #[test]
    fn two_temperatures_are_under_determined() {
        let (ds, _, s) = oracle_dataset(&[20.0, 12.0]);
        assert!(matches!(
            build_system(&ds, &s, Direction::Forward),
            Err(Error::UnderDetermined { equations: 6, unknowns: 9 })
        ));
    }

    #[test]
    fn missing_populations_error() {
        let (mut ds, _, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        ds.populations.remove(1);
        assert!(matches!(
            build_system(&ds, &s, Direction::Forward),
            Err(Error::MissingPopulations { .. })
        ));
    }

    #[test]
    fn identity_system_returns_rhs() {
        let b = DVector::from_fn(9, |i, _| i as f64 * 0.1 - 0.3);
        let sys = LinearSystem {
            a: DMatrix::identity(9, 9),
            b: b.clone(),
            index: UnknownIndex { dim: 4 },
            equations: Vec::new(),
        };
        let sol = solve_least_squares(&sys, SolveOptions::default()).unwrap();
        assert!((sol.x - b).amax() < 1e-15);
        assert_eq!(sol.conditioning.condition_number, 1.0);
    }

    #[test]
    fn rank_deficiency_names_directions() {
        let mut a = DMatrix::identity(9, 9);
        a[(8, 8)] = 0.0;
        let sys = LinearSystem {
            a,
            b: DVector::from_element(9, 1.0),
            index: UnknownIndex { dim: 4 },
            equations: Vec::new(),
        };
        match solve_least_squares(&sys, SolveOptions::default()) {
            Err(Error::RankDeficient { rank, directions, .. }) => {
                assert_eq!(rank, 8);
                assert_eq!(directions.len(), 1);
                assert!((directions[0][8].abs() - 1.0).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
        let sol = solve_least_squares(&sys, SolveOptions { allow_rank_deficient: true }).unwrap();
        assert!(sol.rank_deficient);
        assert_eq!(sol.x[8], 0.0);
        assert!((sol.x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_solution_matches_oracle() {
        let (ds, t, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let sys = build_system(&ds, &s, Direction::Forward).unwrap();
        let sol = solve_least_squares(&sys, SolveOptions::default()).unwrap();
        assert!((sol.x - oracle_unknowns(&t)).amax() < 1e-9);
    }

    #[test]
    fn duplicated_rows_do_not_increase_the_residual() {
        let (ds, _, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let noisy = add_noise(&ds, 0.05, 3).unwrap();
        let sys = build_system(&noisy, &s, Direction::Forward).unwrap();
        let sol = solve_least_squares(&sys, SolveOptions::default()).unwrap();
        let stacked = sys.stacked(&sys);
        let sol2 = solve_least_squares(&stacked, SolveOptions::default()).unwrap();
        assert!(stacked.residual_norm(&sol2.x) <= stacked.residual_norm(&sol.x) + 1e-12);
    }

    #[test]
    fn completion_identities() {
        let (_, t, _) = oracle_dataset(&[20.0]);
        let x: Vec<f64> = oracle_unknowns(&t).iter().copied().collect();
        let full = complete_matrix(&x, 4).unwrap();
        assert!((&full - t.matrix()).amax() < 1e-15);

        let uniform = complete_matrix(&[0.25; 9], 4).unwrap();
        assert!(uniform.iter().all(|v| (*v - 0.25).abs() < 1e-15));

        let mut x = vec![0.25; 9];
        x[0] = 1.2;
        let m = complete_matrix(&x, 4).unwrap();
        assert_eq!(m[(0, 0)], 1.2);
        assert!(m.iter().any(|v| *v < 0.0));
    }

    #[test]
    fn sinkhorn_two_by_two_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = sinkhorn(&m, 1e-14, 10_000).unwrap();
        let x = 2.0 / (2.0 + 6f64.sqrt());
        assert!(out.converged);
        assert!((out.matrix[(0, 0)] - x).abs() < 1e-10);
        assert!((out.matrix[(0, 1)] - (1.0 - x)).abs() < 1e-10);
        assert!((out.matrix[(1, 1)] - x).abs() < 1e-10);
    }

    #[test]
    fn sinkhorn_fixed_points() {
        let mut perm = DMatrix::zeros(4, 4);
        for (i, j) in [(0, 2), (1, 0), (2, 3), (3, 1)] {
            perm[(i, j)] = 1.0;
        }
        let out = sinkhorn(&perm, 1e-6, 1000).unwrap();
        assert!((&out.matrix - &perm).amax() < 1e-6);
        let uniform = DMatrix::from_element(4, 4, 0.25);
        let out = sinkhorn(&uniform, 1e-6, 1000).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.matrix, uniform);
    }

    #[test]
    fn sinkhorn_rejects_empty_rows() {
        let mut m = DMatrix::from_element(4, 4, 0.3);
        m.row_mut(2).fill(0.0);
        assert!(matches!(
            sinkhorn(&m, 1e-6, 100),
            Err(Error::Unbalanceable { axis: "row", index: 2 })
        ));
    }

    #[test]
    fn mle_feasible_input_is_a_fixed_point() {
        let (_, t, _) = oracle_dataset(&[20.0]);
        let p = mle_project(t.matrix(), MleOptions::default()).unwrap();
        assert!(p.converged);
        assert_eq!(p.iterations, 1);
        assert!((&p.matrix - t.matrix()).amax() < 1e-12);
    }

    #[test]
    fn mle_is_locally_stable() {
        let (_, t, _) = oracle_dataset(&[20.0]);
        let perturbed = t.matrix().map(|v| v + 1e-8) - DMatrix::from_fn(4, 4, |i, j| if (i + j) % 2 == 0 { 2e-8 } else { 0.0 });
        let p = mle_project(&perturbed, MleOptions::default()).unwrap();
        assert!((&p.matrix - t.matrix()).amax() < 1e-6);
    }

    #[test]
    fn mle_output_is_physical_and_idempotent() {
        let raw = DMatrix::from_row_slice(4, 4, &[
            1.3, -0.2, 0.1, -0.2, //
            -0.4, 0.6, 0.5, 0.3, //
            0.2, 0.7, -0.1, 0.2, //
            -0.1, -0.1, 0.5, 0.7,
        ]);
        let p = mle_project(&raw, MleOptions::default()).unwrap();
        assert!(p.converged);
        assert_eq!(p.clamped_entries, 7);
        assert!(p.matrix.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(bistochastic_deviation(&p.matrix) < 1e-6);
        let again = mle_project(&p.matrix, MleOptions::default()).unwrap();
        assert!((&again.matrix - &p.matrix).amax() < 1e-6);
        assert_eq!(again.iterations, 1);
    }

    #[test]
    fn pipeline_round_trip() {
        let (ds, t, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let report = invert_pipeline(&ds, &s, Direction::Forward, InversionOptions::default()).unwrap();
        assert!(report.converged);
        assert!(report.projected.max_abs_diff(&t) < 1e-9);
        assert!(report.residual_norm < 1e-12);
        assert!(report.is_clean(), "{:?}", report.flags);
    }

    #[test]
    fn noisy_pipeline_clamps_and_converges() {
        // seed 7 gives raw entries far outside [0, 1]
        let (ds, _, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let noisy = add_noise(&ds, 0.05, 7).unwrap();
        let report = invert_pipeline(&noisy, &s, Direction::Forward, InversionOptions::default()).unwrap();
        assert!(report.raw_solution.iter().any(|v| !(0.0..=1.0).contains(v)));
        assert!(report.flags.iter().any(|f| matches!(f, InversionFlag::ClampedEntries { .. })));
        assert!(report.converged);
        assert!(report.iterations <= 1000);
    }

    #[test]
    fn report_round_trip() {
        let (ds, _, s) = oracle_dataset(&[20.0, 12.0, 9.0]);
        let noisy = add_noise(&ds, 0.05, 11).unwrap();
        let report = invert_pipeline(&noisy, &s, Direction::Forward, InversionOptions::default()).unwrap();
        let mut buf = Vec::new();
        InversionReport::write_all(std::slice::from_ref(&report), &mut buf).unwrap();
        let back = InversionReport::read_all(buf.as_slice()).unwrap();
        assert_eq!(back, vec![report]);
    }
}
