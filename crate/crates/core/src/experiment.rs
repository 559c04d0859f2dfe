//! Run configuration and the end-to-end pipeline built from it.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    gibbs_populations, spectrum, ComplexMatrix, EnergyScale, HamiltonianSpec, PopulationVector, SpectrumTable,
    ThermalEnergy,
};
use crate::invert::{invert_pipeline, InversionOptions, InversionReport, MleOptions, SolveOptions};
use crate::measure::{add_noise, simulate_observables, Dataset};
use crate::pulses::{build_backward, build_forward, ProtocolAngles, PulseSequence};
use crate::stats::{derive_seed, Quantity, RatioPoint, Stage, TrialOutcome, DEFAULT_CONFIDENCE, RATIO_FLOOR};
use crate::tpm::{crooks_points, transition_matrix, work_distribution, Direction, TransitionMatrix, WorkDistribution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hamiltonian: HamiltonianSpec,
    pub angles: ProtocolAngles,
    /// Step-list file replacing `angles` for the forward drive.
    pub steps: Option<PathBuf>,
    pub temperatures_pev: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub trials: usize,
    pub mle_tol: f64,
    pub mle_max_iter: usize,
    pub directions: Vec<Direction>,
    /// Run with `J = 0` for the non-interacting comparison.
    pub non_interacting: bool,
    /// Rescale energies so that `E_2 - E_0` equals this many peV.
    pub gap_override_pev: Option<f64>,
    pub confidence: f64,
    pub ratio_floor: f64,
    pub allow_rank_deficient: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hamiltonian: HamiltonianSpec::CHLOROFORM,
            angles: ProtocolAngles::default(),
            steps: None,
            temperatures_pev: vec![20.0, 12.0, 9.0],
            sigma: 0.05,
            seed: 1,
            trials: 1000,
            mle_tol: 1e-6,
            mle_max_iter: 1000,
            directions: Direction::BOTH.to_vec(),
            non_interacting: false,
            gap_override_pev: None,
            confidence: DEFAULT_CONFIDENCE,
            ratio_floor: RATIO_FLOOR,
            allow_rank_deficient: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hamiltonian.validate()?;
        self.angles.validate()?;
        if self.temperatures_pev.is_empty() {
            return Err(Error::InvalidArgument("at least one temperature is required".into()));
        }
        for kt in &self.temperatures_pev {
            if !(kt.is_finite() && *kt > 0.0) {
                return Err(Error::InvalidTemperature(*kt));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.mle_tol > 0.0) || self.mle_max_iter == 0 {
            return Err(Error::InvalidArgument("mle_tol and mle_max_iter must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        if !(self.ratio_floor > 0.0) {
            return Err(Error::InvalidArgument("ratio_floor must be positive".into()));
        }
        if self.directions.is_empty() {
            return Err(Error::InvalidArgument("at least one direction is required".into()));
        }
        if let Some(g) = self.gap_override_pev {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidArgument(format!("gap_override_pev must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Inversion needs three distinct preparations.
    pub fn validate_for_inversion(&self) -> Result<()> {
        self.validate()?;
        let mut distinct: Vec<f64> = Vec::new();
        for kt in &self.temperatures_pev {
            if !distinct.iter().any(|d| (d - kt).abs() <= 1e-9 * kt) {
                distinct.push(*kt);
            }
        }
        if distinct.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "inversion needs at least 3 distinct temperatures, got {}",
                distinct.len()
            )));
        }
        Ok(())
    }

    pub fn effective_hamiltonian(&self) -> HamiltonianSpec {
        if self.non_interacting {
            self.hamiltonian.without_coupling()
        } else {
            self.hamiltonian
        }
    }

    pub fn inversion_options(&self) -> InversionOptions {
        InversionOptions {
            mle: MleOptions {
                tol: self.mle_tol,
                max_iter: self.mle_max_iter,
            },
            solve: SolveOptions {
                allow_rank_deficient: self.allow_rank_deficient,
            },
        }
    }
}

/// Everything derived from a [`RunConfig`]: spectrum, propagators and preparations.
#[derive(Clone, Debug)]
pub struct Experiment {
    config: RunConfig,
    spectrum: SpectrumTable,
    scale: EnergyScale,
    forward: ComplexMatrix,
    backward: ComplexMatrix,
    populations: Vec<PopulationVector>,
    /// Distinct `E_m - E_n` in Hz, ascending; the bin grid of every work distribution.
    bins: Vec<f64>,
}

impl Experiment {
    /// `steps` replaces the angle-built forward drive; the backward drive is its time reverse.
    pub fn new(config: RunConfig, steps: Option<&PulseSequence>) -> Result<Self> {
        config.validate()?;
        let h = config.effective_hamiltonian();
        let spectrum = spectrum(&h);
        let scale = match config.gap_override_pev {
            Some(g) => EnergyScale::from_gap(&crate::hilbert::spectrum(&config.hamiltonian), g)?,
            None => EnergyScale::PLANCK,
        };
        let (forward, backward) = match steps {
            Some(seq) => (seq.unitary(h.j_coupling)?, seq.time_reversed().unitary(h.j_coupling)?),
            None => (
                build_forward(&config.angles, h.j_coupling)?,
                build_backward(&config.angles, h.j_coupling)?,
            ),
        };
        let populations = config
            .temperatures_pev
            .iter()
            .map(|kt| Ok(gibbs_populations(&spectrum, ThermalEnergy::from_pev(*kt, &scale)?)))
            .collect::<Result<Vec<_>>>()?;
        let probe = work_distribution(&PopulationVector::uniform(spectrum.dim()), &TransitionMatrix::identity(spectrum.dim(), Direction::Forward), &spectrum)?;
        let bins = probe.points.iter().map(|p| p.work).collect();
        Ok(Self {
            config,
            spectrum,
            scale,
            forward,
            backward,
            populations,
            bins,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn spectrum(&self) -> &SpectrumTable {
        &self.spectrum
    }

    pub fn scale(&self) -> &EnergyScale {
        &self.scale
    }

    pub fn temperatures_pev(&self) -> &[f64] {
        &self.config.temperatures_pev
    }

    pub fn confidence(&self) -> f64 {
        self.config.confidence
    }

    pub fn populations(&self) -> &[PopulationVector] {
        &self.populations
    }

    pub fn unitary(&self, direction: Direction) -> &ComplexMatrix {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }

    pub fn work_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn oracle(&self, direction: Direction) -> Result<TransitionMatrix> {
        transition_matrix(self.unitary(direction), &self.spectrum, direction)
    }

    /// Noiseless means for every configured direction and temperature.
    pub fn clean_dataset(&self) -> Result<Dataset> {
        let mut parts = self.config.directions.iter().map(|d| {
            simulate_observables(self.unitary(*d), &self.populations, &self.spectrum, *d, &self.scale)
        });
        let mut ds = parts.next().expect("validated non-empty")?;
        for p in parts {
            ds = ds.merge(p?)?;
        }
        Ok(ds)
    }

    /// The configured dataset: clean means plus noise seeded from the master seed.
    pub fn simulate(&self) -> Result<Dataset> {
        add_noise(
            &self.clean_dataset()?,
            self.config.sigma,
            derive_seed(self.config.seed, Stage::Simulate, 0),
        )
    }

    /// One report per direction present in `ds`.
    pub fn invert(&self, ds: &Dataset) -> Result<Vec<InversionReport>> {
        ds.directions()
            .into_iter()
            .map(|d| invert_pipeline(ds, &self.spectrum, d, self.config.inversion_options()))
            .collect()
    }

    /// `P(W)` for each configured preparation, in temperature order.
    pub fn distributions(&self, t: &TransitionMatrix) -> Result<Vec<WorkDistribution>> {
        self.populations
            .iter()
            .map(|p| work_distribution(p, t, &self.spectrum))
            .collect()
    }

    pub fn bin_of(&self, work_hz: f64) -> Option<usize> {
        self.bins
            .iter()
            .position(|b| (b - work_hz).abs() <= crate::tpm::WORK_BIN_TOLERANCE)
    }

    pub fn quantity_kt(&self, q: Quantity) -> Option<f64> {
        match q {
            Quantity::Transition { .. } => None,
            Quantity::WorkWeight { kt_index, .. } | Quantity::LnRatio { kt_index, .. } => {
                self.config.temperatures_pev.get(kt_index).copied()
            }
        }
    }

    pub fn quantity_work(&self, q: Quantity) -> Option<f64> {
        match q {
            Quantity::Transition { .. } => None,
            Quantity::WorkWeight { bin, .. } | Quantity::LnRatio { bin, .. } => {
                self.bins.get(bin).map(|w| self.scale.to_pev(*w))
            }
        }
    }

    /// Ratio points `(bin, point)` for one forward/backward pair, with unit sigma.
    pub fn ratio_pairs(&self, forward: &WorkDistribution, backward: &WorkDistribution) -> Vec<(usize, RatioPoint)> {
        let crooks = crooks_points(forward, backward, self.config.ratio_floor);
        crooks
            .paired
            .iter()
            .filter_map(|p| {
                Some((
                    self.bin_of(p.work)?,
                    RatioPoint {
                        work_pev: self.scale.to_pev(p.work),
                        ln_ratio: p.ln_ratio,
                        sigma: 1.0,
                    },
                ))
            })
            .collect()
    }

    /// One noisy pass of the pipeline, starting from the clean dataset.
    pub fn trial(&self, clean: &Dataset, sigma: f64, seed: u64) -> TrialOutcome {
        let mut out = TrialOutcome {
            values: Vec::new(),
            ratios: Vec::new(),
            failure: None,
        };
        let result = (|| -> Result<()> {
            let noisy = add_noise(clean, sigma, seed)?;
            let mut dists: Vec<(Direction, Vec<WorkDistribution>)> = Vec::new();
            for report in self.invert(&noisy)? {
                if !report.converged {
                    out.failure = Some(format!("{} projection did not converge", report.direction));
                }
                let t = &report.projected;
                for m in 0..t.dim() {
                    for n in 0..t.dim() {
                        out.values.push((
                            Quantity::Transition {
                                direction: report.direction,
                                m,
                                n,
                            },
                            t.get(m, n),
                        ));
                    }
                }
                let wds = self.distributions(t)?;
                for (k, wd) in wds.iter().enumerate() {
                    for p in &wd.points {
                        if let Some(bin) = self.bin_of(p.work) {
                            out.values.push((
                                Quantity::WorkWeight {
                                    direction: report.direction,
                                    kt_index: k,
                                    bin,
                                },
                                p.prob,
                            ));
                        }
                    }
                }
                dists.push((report.direction, wds));
            }
            let fwd = dists.iter().find(|(d, _)| *d == Direction::Forward);
            let bwd = dists.iter().find(|(d, _)| *d == Direction::Backward);
            if let (Some((_, f)), Some((_, b))) = (fwd, bwd) {
                for (fk, bk) in f.iter().zip(b) {
                    let pairs = self.ratio_pairs(fk, bk);
                    for (bin, p) in &pairs {
                        out.values.push((Quantity::LnRatio { kt_index: out.ratios.len(), bin: *bin }, p.ln_ratio));
                    }
                    out.ratios.push(pairs);
                }
            }
            Ok(())
        })();
        if let Err(e) = result {
            out.failure = Some(e.to_string());
        }
        out
    }
}
