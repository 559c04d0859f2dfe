//! Forward model of the experiment: end-of-protocol observable means per
//! temperature and direction, plus a seeded Gaussian noise model.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    expectation, sigma_z_c, sigma_z_h, sigma_zz, ComplexMatrix, EnergyScale, PopulationVector,
    SpectrumTable, ThermalEnergy,
};
use crate::io;
use crate::pulses::readout_prefix;
use crate::tpm::{transition_matrix, Direction, TransitionMatrix};

/// Default per-record noise level.
pub const DEFAULT_SIGMA: f64 = 0.05;

/// Relative tolerance used to match temperatures between records and population blocks.
pub const KT_MATCH_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Observable {
    #[serde(rename = "sigma_z_H")]
    SigmaZH,
    #[serde(rename = "sigma_z_C")]
    SigmaZC,
    #[serde(rename = "sigma_zz")]
    SigmaZZ,
}

impl Observable {
    pub const ALL: [Observable; 3] = [Observable::SigmaZH, Observable::SigmaZC, Observable::SigmaZZ];

    pub fn operator(&self) -> ComplexMatrix {
        match self {
            Observable::SigmaZH => sigma_z_h(),
            Observable::SigmaZC => sigma_z_c(),
            Observable::SigmaZZ => sigma_zz(),
        }
    }

    /// Readout prefix index and the local magnetization actually recorded.
    ///
    /// The correlation is read as the hydrogen magnetization after the CNOT prefix.
    pub fn readout(&self) -> (u8, Observable) {
        match self {
            Observable::SigmaZH => (0, Observable::SigmaZH),
            Observable::SigmaZC => (0, Observable::SigmaZC),
            Observable::SigmaZZ => (1, Observable::SigmaZH),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Observable::SigmaZH => "sigma_z_H",
            Observable::SigmaZC => "sigma_z_C",
            Observable::SigmaZZ => "sigma_zz",
        })
    }
}

/// Eigenvalues of an observable listed in energy-ascending level order.
///
/// Fails when the operator is not diagonal in the computational (energy) basis.
pub fn observable_diagonal(op: &ComplexMatrix, spectrum: &SpectrumTable, name: &str) -> Result<Vec<f64>> {
    if op.max_off_diagonal() > 1e-12 || op.hermiticity_error() > 1e-12 {
        return Err(Error::NonDiagonalObservable(name.to_string()));
    }
    let diag = op.real_diagonal();
    Ok((0..spectrum.dim()).map(|k| diag[spectrum.basis_index(k)]).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservableDiagonals {
    pub sigma_z_h: Vec<f64>,
    pub sigma_z_c: Vec<f64>,
    pub sigma_zz: Vec<f64>,
}

impl ObservableDiagonals {
    pub fn get(&self, obs: Observable) -> &[f64] {
        match obs {
            Observable::SigmaZH => &self.sigma_z_h,
            Observable::SigmaZC => &self.sigma_z_c,
            Observable::SigmaZZ => &self.sigma_zz,
        }
    }
}

pub fn observable_diagonals(spectrum: &SpectrumTable) -> ObservableDiagonals {
    let diag = |o: Observable| observable_diagonal(&o.operator(), spectrum, &o.to_string()).unwrap();
    ObservableDiagonals {
        sigma_z_h: diag(Observable::SigmaZH),
        sigma_z_c: diag(Observable::SigmaZC),
        sigma_zz: diag(Observable::SigmaZZ),
    }
}

/// `<O(τ)> = Σ_m o_m Σ_n p_n p_{m|n}`.
pub fn mean_from_transitions(o: &[f64], pops: &PopulationVector, t: &TransitionMatrix) -> f64 {
    let p = pops.probs();
    (0..o.len())
        .map(|m| o[m] * (0..p.len()).map(|n| p[n] * t.get(m, n)).sum::<f64>())
        .sum()
}

/// Mean of `obs` after the drive, computed through the readout chain:
/// apply `S^k` to `U ρ U^dag` and take the recorded local magnetization.
pub fn readout_mean(
    obs: Observable,
    u: &ComplexMatrix,
    pops: &PopulationVector,
    spectrum: &SpectrumTable,
) -> Result<f64> {
    let (k, recorded) = obs.readout();
    let prefix = readout_prefix(k)?;
    let rho = (&prefix * u).conjugate(&pops.density_matrix(spectrum));
    expectation(&recorded.operator(), &rho)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableRecord {
    pub observable: Observable,
    pub direction: Direction,
    #[serde(with = "crate::io::kt_serde")]
    pub kt_pev: f64,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationBlock {
    pub direction: Direction,
    #[serde(with = "crate::io::kt_serde")]
    pub kt_pev: f64,
    pub probs: Vec<f64>,
}

impl PopulationBlock {
    pub fn to_populations(&self, scale: &EnergyScale) -> Result<PopulationVector> {
        let kt = ThermalEnergy::from_pev(self.kt_pev, scale)?;
        PopulationVector::from_measured(self.probs.clone(), 1e-6, Some(kt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataProvenance {
    Simulated,
    Ingested,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub records: Vec<ObservableRecord>,
    pub populations: Vec<PopulationBlock>,
    pub provenance: DataProvenance,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum DatasetLine {
    Population(PopulationBlock),
    Observable(ObservableRecord),
}

/// Temperatures equal up to a relative [`KT_MATCH_TOLERANCE`]; infinity matches only itself.
pub fn same_kt(a: f64, b: f64) -> bool {
    a == b || (a.is_finite() && b.is_finite() && (a - b).abs() <= KT_MATCH_TOLERANCE * a.abs().max(b.abs()))
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !r.mean.is_finite() || !(r.stderr >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "record {} {} kT={} has mean {} and stderr {}",
                    r.observable, r.direction, r.kt_pev, r.mean, r.stderr
                )));
            }
            if r.mean.abs() > 1.0 + 3.0 * r.stderr + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "record {} {} kT={}: |mean| = {} exceeds 1 + 3 stderr",
                    r.observable, r.direction, r.kt_pev, r.mean.abs()
                )));
            }
            if !(r.kt_pev > 0.0) {
                return Err(Error::InvalidTemperature(r.kt_pev));
            }
            if !seen.insert((r.observable, r.direction, r.kt_pev.to_bits())) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate record {} {} kT={}",
                    r.observable, r.direction, r.kt_pev
                )));
            }
        }
        Ok(())
    }

    pub fn merge(mut self, other: Dataset) -> Result<Dataset> {
        self.records.extend(other.records);
        self.populations.extend(other.populations);
        self.validate()?;
        Ok(self)
    }

    pub fn records_for(&self, direction: Direction) -> impl Iterator<Item = &ObservableRecord> {
        self.records.iter().filter(move |r| r.direction == direction)
    }

    pub fn population_block(&self, direction: Direction, kt_pev: f64) -> Option<&PopulationBlock> {
        self.populations
            .iter()
            .find(|b| b.direction == direction && same_kt(b.kt_pev, kt_pev))
    }

    pub fn directions(&self) -> Vec<Direction> {
        Direction::BOTH
            .into_iter()
            .filter(|d| self.records.iter().any(|r| r.direction == *d))
            .collect()
    }

    /// Distinct record temperatures for `direction`, in first-appearance order.
    pub fn temperatures(&self, direction: Direction) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in self.records_for(direction) {
            if !out.iter().any(|k| same_kt(*k, r.kt_pev)) {
                out.push(r.kt_pev);
            }
        }
        out
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = serde_json::json!({
            "provenance": self.provenance,
            "seed": self.seed,
        });
        let lines: Vec<DatasetLine> = self
            .populations
            .iter()
            .cloned()
            .map(DatasetLine::Population)
            .chain(self.records.iter().cloned().map(DatasetLine::Observable))
            .collect();
        io::write_document(out, io::DATASET_FORMAT, &header, &lines)
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let doc = io::read_document(input, io::DATASET_FORMAT)?;
        let provenance = match doc.header.get("provenance") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::parse(1, format!("field `provenance`: {e}")))?,
            None => DataProvenance::Ingested,
        };
        let seed = doc.header.get("seed").and_then(|v| v.as_u64());
        let mut ds = Dataset {
            records: Vec::new(),
            populations: Vec::new(),
            provenance,
            seed,
        };
        for (line, value) in doc.records {
            match serde_json::from_value::<DatasetLine>(value) {
                Ok(DatasetLine::Population(p)) => ds.populations.push(p),
                Ok(DatasetLine::Observable(r)) => ds.records.push(r),
                Err(e) => return Err(Error::parse(line, e.to_string())),
            }
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// Noiseless means of the three built-in observables for each preparation.
///
/// Each population vector must carry its thermal energy.
pub fn simulate_observables(
    u: &ComplexMatrix,
    pops_by_kt: &[PopulationVector],
    spectrum: &SpectrumTable,
    direction: Direction,
    scale: &EnergyScale,
) -> Result<Dataset> {
    let t = transition_matrix(u, spectrum, direction)?;
    let diagonals = observable_diagonals(spectrum);
    let mut ds = Dataset {
        records: Vec::new(),
        populations: Vec::new(),
        provenance: DataProvenance::Simulated,
        seed: None,
    };
    for pops in pops_by_kt {
        let kt = pops.kt().ok_or_else(|| {
            Error::InvalidArgument("populations must carry their thermal energy".into())
        })?;
        let kt_pev = kt.pev(scale);
        ds.populations.push(PopulationBlock {
            direction,
            kt_pev,
            probs: pops.probs().to_vec(),
        });
        for obs in Observable::ALL {
            ds.records.push(ObservableRecord {
                observable: obs,
                direction,
                kt_pev,
                mean: mean_from_transitions(diagonals.get(obs), pops, &t),
                stderr: 0.0,
            });
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Adds independent `N(0, sigma^2)` draws to every mean, in record order.
pub fn add_noise(ds: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut out = ds.clone();
    out.seed = Some(seed);
    if sigma == 0.0 {
        for r in &mut out.records {
            r.stderr = 0.0;
        }
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in &mut out.records {
        r.mean += normal.sample(&mut rng);
        r.stderr = sigma;
    }
    Ok(out)
}
