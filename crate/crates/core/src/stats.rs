//! Fluctuation-relation fits, temperature estimates and Monte Carlo error propagation.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::experiment::Experiment;
use crate::hilbert::{EnergyScale, PopulationVector, SpectrumTable};
use crate::parallel::{map_trials, Execution};
use crate::io;
use crate::tpm::{CrooksPoints, Direction, UnpairedPoint};

pub const DEFAULT_CONFIDENCE: f64 = 0.99;

/// Bins where either probability of a Crooks pair falls below this are left out of the fit.
pub const RATIO_FLOOR: f64 = 1e-6;

/// Smallest `sigma` used as a fit weight.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub work_pev: f64,
    pub ln_ratio: f64,
    pub sigma: f64,
}

/// Converts paired Crooks points to peV, with `sigma_of(work_pev)` supplying the uncertainty.
pub fn ratio_points(
    crooks: &CrooksPoints,
    scale: &EnergyScale,
    mut sigma_of: impl FnMut(f64) -> f64,
) -> Vec<RatioPoint> {
    crooks
        .paired
        .iter()
        .map(|p| {
            let work_pev = scale.to_pev(p.work);
            RatioPoint {
                work_pev,
                ln_ratio: p.ln_ratio,
                sigma: sigma_of(work_pev).max(SIGMA_FLOOR),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub work_pev: f64,
    pub ln_ratio: f64,
    pub sigma: f64,
    /// Value of the final line at `work_pev`.
    pub fitted: f64,
    pub residual: f64,
    /// Prediction interval of the final fit.
    pub lower: f64,
    pub upper: f64,
    /// Outside the first-pass prediction interval.
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// 1/peV.
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    /// `1 / slope` in peV; `None` unless the slope is positive.
    pub kt_pev: Option<f64>,
    pub kt_stderr_pev: Option<f64>,
    /// Work values (peV) removed by the outlier pass.
    pub excluded: Vec<f64>,
    pub confidence: f64,
    /// Degrees of freedom of the final fit.
    pub dof: usize,
    pub points: Vec<FitPoint>,
}

struct Line {
    slope: f64,
    intercept: f64,
    s2: f64,
    // unscaled covariance terms
    s: f64,
    sx: f64,
    sxx: f64,
    det: f64,
    dof: usize,
}

impl Line {
    fn fit(points: &[&RatioPoint]) -> Result<Line> {
        if points.len() < 3 {
            return Err(Error::FitDegenerate { points: points.len() });
        }
        let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in points {
            if !(p.sigma > 0.0) || !p.work_pev.is_finite() || !p.ln_ratio.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "ratio point at W = {} needs finite values and sigma > 0",
                    p.work_pev
                )));
            }
            let w = 1.0 / (p.sigma * p.sigma);
            s += w;
            sx += w * p.work_pev;
            sy += w * p.ln_ratio;
            sxx += w * p.work_pev * p.work_pev;
            sxy += w * p.work_pev * p.ln_ratio;
        }
        let det = s * sxx - sx * sx;
        if !(det > 1e-12 * s * sxx) {
            return Err(Error::FitDegenerate { points: points.len() });
        }
        let slope = (s * sxy - sx * sy) / det;
        let intercept = (sxx * sy - sx * sxy) / det;
        let dof = points.len() - 2;
        let chi2: f64 = points
            .iter()
            .map(|p| {
                let r = p.ln_ratio - (intercept + slope * p.work_pev);
                r * r / (p.sigma * p.sigma)
            })
            .sum();
        Ok(Line {
            slope,
            intercept,
            s2: chi2 / dof as f64,
            s,
            sx,
            sxx,
            det,
            dof,
        })
    }

    fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }

    /// Half-width of the two-sided prediction interval for an observation at `x` with uncertainty `sigma`.
    fn half_width(&self, x: f64, sigma: f64, confidence: f64) -> f64 {
        let t = StudentsT::new(0.0, 1.0, self.dof as f64)
            .expect("dof >= 1")
            .inverse_cdf(0.5 + confidence / 2.0);
        let mean_var = (self.sxx - 2.0 * x * self.sx + x * x * self.s) / self.det;
        let hw = t * (self.s2 * (sigma * sigma + mean_var)).sqrt();
        hw.max(1e-9 * (1.0 + self.at(x).abs()))
    }
}

/// Inverse-variance weighted fit of `ln_ratio` against `W`, with one outlier pass.
///
/// Points outside the two-sided Student-t prediction interval of the first fit
/// are excluded and the line is refitted once. The intercept is free.
pub fn fit_fluctuation(points: &[RatioPoint], confidence: f64) -> Result<FitResult> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let all: Vec<&RatioPoint> = points.iter().collect();
    let first = Line::fit(&all)?;
    let excluded_flags: Vec<bool> = points
        .iter()
        .map(|p| (p.ln_ratio - first.at(p.work_pev)).abs() > first.half_width(p.work_pev, p.sigma, confidence))
        .collect();
    let survivors: Vec<&RatioPoint> = points
        .iter()
        .zip(&excluded_flags)
        .filter(|(_, ex)| !**ex)
        .map(|(p, _)| p)
        .collect();
    let line = if survivors.len() == points.len() {
        first
    } else {
        Line::fit(&survivors)?
    };

    let slope_stderr = (line.s2 * line.s / line.det).sqrt();
    let intercept_stderr = (line.s2 * line.sxx / line.det).sqrt();
    let (kt_pev, kt_stderr_pev) = if line.slope > 0.0 {
        (Some(1.0 / line.slope), Some(slope_stderr / (line.slope * line.slope)))
    } else {
        (None, None)
    };
    let fit_points = points
        .iter()
        .zip(&excluded_flags)
        .map(|(p, ex)| {
            let fitted = line.at(p.work_pev);
            let hw = line.half_width(p.work_pev, p.sigma, confidence);
            FitPoint {
                work_pev: p.work_pev,
                ln_ratio: p.ln_ratio,
                sigma: p.sigma,
                fitted,
                residual: p.ln_ratio - fitted,
                lower: fitted - hw,
                upper: fitted + hw,
                excluded: *ex,
            }
        })
        .collect();
    Ok(FitResult {
        slope: line.slope,
        intercept: line.intercept,
        slope_stderr,
        intercept_stderr,
        kt_pev,
        kt_stderr_pev,
        excluded: points
            .iter()
            .zip(&excluded_flags)
            .filter(|(_, ex)| **ex)
            .map(|(p, _)| p.work_pev)
            .collect(),
        confidence,
        dof: line.dof,
        points: fit_points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KtEstimate {
    Finite { kt_pev: f64 },
    Infinite,
    /// Population inversion; `kt_pev` is negative.
    Negative { kt_pev: f64 },
}

impl KtEstimate {
    pub fn finite(&self) -> Option<f64> {
        match self {
            KtEstimate::Finite { kt_pev } => Some(*kt_pev),
            _ => None,
        }
    }
}

/// `(E_2 - E_0) / ln(p_0 / p_2)` over energy-sorted populations, in peV.
pub fn kt_from_populations(
    pops: &PopulationVector,
    spectrum: &SpectrumTable,
    scale: &EnergyScale,
) -> Result<KtEstimate> {
    if spectrum.dim() < 3 || pops.dim() != spectrum.dim() {
        return Err(Error::DimensionMismatch {
            expected: spectrum.dim().max(3),
            actual: pops.dim(),
        });
    }
    let (p0, p2) = (pops.probs()[0], pops.probs()[2]);
    if !(p0 > 0.0 && p2 > 0.0) {
        return Err(Error::InvalidPopulations(format!(
            "temperature needs p0 > 0 and p2 > 0, got {p0} and {p2}"
        )));
    }
    let gap = scale.to_pev(spectrum.energies[2] - spectrum.energies[0]);
    let log_ratio = (p0 / p2).ln();
    Ok(if log_ratio == 0.0 {
        KtEstimate::Infinite
    } else if log_ratio > 0.0 {
        KtEstimate::Finite { kt_pev: gap / log_ratio }
    } else {
        KtEstimate::Negative { kt_pev: gap / log_ratio }
    })
}

/// Randomness stages. Each carries a distinct tag in the high bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    MonteCarlo,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Simulate => 0x5349_4d55_0000_0000,
            Stage::MonteCarlo => 0x4d43_5452_0000_0000,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(master ^ stage ^ index)`.
pub fn derive_seed(master: u64, stage: Stage, index: u64) -> u64 {
    splitmix64(master ^ stage.tag() ^ index)
}

/// A fresh generator for `(master, stage, index)`.
pub fn stage_rng(master: u64, stage: Stage, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stage, index))
}

/// Running mean and variance (Welford). Identical samples give exactly zero spread.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Accumulator {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation; `None` below two samples.
    pub fn std(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantity {
    /// `p_{m|n}`.
    Transition { direction: Direction, m: usize, n: usize },
    /// Weight of work bin `bin` at preparation `kt_index`.
    WorkWeight { direction: Direction, kt_index: usize, bin: usize },
    /// Crooks log-ratio at forward work bin `bin`.
    LnRatio { kt_index: usize, bin: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyRow {
    pub quantity: Quantity,
    /// Preparation kT of the quantity, when it has one.
    pub kt_pev: Option<f64>,
    /// Work value of the bin, when it has one.
    pub work_pev: Option<f64>,
    pub mean: f64,
    pub std: Option<f64>,
    pub samples: usize,
}

/// Per-trial output of the Monte Carlo pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialOutcome {
    pub values: Vec<(Quantity, f64)>,
    /// Per preparation: `(forward bin, ratio point)` pairs before weighting.
    pub ratios: Vec<Vec<(usize, RatioPoint)>>,
    /// Trials whose inversion failed record the error message.
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRecovery {
    pub kt_pev: f64,
    /// Fitted kT per trial; `None` when that trial's fit failed or had a non-positive slope.
    pub fitted: Vec<Option<f64>>,
    pub median_pev: Option<f64>,
    pub failures: usize,
}

impl TemperatureRecovery {
    pub fn relative_error(&self) -> Option<f64> {
        self.median_pev.map(|m| (m - self.kt_pev).abs() / self.kt_pev)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyTable {
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<UncertaintyRow>,
    pub recovery: Vec<TemperatureRecovery>,
    /// Trials whose pipeline raised an error, with the message.
    pub failed_trials: Vec<(usize, String)>,
}

impl UncertaintyTable {
    pub fn row(&self, q: Quantity) -> Option<&UncertaintyRow> {
        self.rows.iter().find(|r| r.quantity == q)
    }

    /// Monte Carlo uncertainty of the log-ratio at `work_pev`, for preparation `kt_index`.
    pub fn ln_ratio_sigma(&self, kt_index: usize, work_pev: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                matches!(r.quantity, Quantity::LnRatio { kt_index: k, .. } if k == kt_index)
                    && r.work_pev.is_some_and(|w| (w - work_pev).abs() <= 1e-9 * (1.0 + w.abs()))
            })
            .and_then(|r| r.std)
    }

    /// Weight sigma for a ratio point: its own positive spread, otherwise the
    /// largest spread recorded at that preparation.
    pub fn ratio_sigma(&self, kt_index: usize, work_pev: f64) -> f64 {
        let fallback = self
            .rows
            .iter()
            .filter(|r| matches!(r.quantity, Quantity::LnRatio { kt_index: k, .. } if k == kt_index))
            .filter_map(|r| r.std)
            .fold(SIGMA_FLOOR, f64::max);
        self.ln_ratio_sigma(kt_index, work_pev)
            .filter(|s| *s > 0.0)
            .unwrap_or(fallback)
            .max(SIGMA_FLOOR)
    }

    /// Index of the preparation at `kt_pev`, if the table covers it.
    pub fn kt_index(&self, kt_pev: f64) -> Option<usize> {
        self.recovery.iter().position(|r| crate::measure::same_kt(r.kt_pev, kt_pev))
    }
}

/// Reruns simulate → noise → invert → distributions → ratios `trials` times.
///
/// Trial `i` draws its noise from `derive_seed(seed, MonteCarlo, i)`. Each
/// trial's ratio points are then fitted with weights from the aggregated
/// log-ratio spread.
pub fn propagate_errors(
    experiment: &Experiment,
    sigma: f64,
    trials: usize,
    seed: u64,
    exec: Execution,
) -> Result<UncertaintyTable> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("error propagation needs at least 2 trials, got {trials}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let clean = experiment.clean_dataset()?;
    let outcomes = map_trials(trials, exec, |i| {
        experiment.trial(&clean, sigma, derive_seed(seed, Stage::MonteCarlo, i as u64))
    });

    let mut acc: BTreeMap<Quantity, Accumulator> = BTreeMap::new();
    let mut failed_trials = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        if let Some(msg) = &o.failure {
            failed_trials.push((i, msg.clone()));
        }
        for (q, v) in &o.values {
            acc.entry(*q).or_default().push(*v);
        }
    }
    let rows: Vec<UncertaintyRow> = acc
        .iter()
        .map(|(q, a)| UncertaintyRow {
            quantity: *q,
            kt_pev: experiment.quantity_kt(*q),
            work_pev: experiment.quantity_work(*q),
            mean: a.mean(),
            std: a.std(),
            samples: a.count(),
        })
        .collect();

    let mut recovery = Vec::new();
    for (k, kt_pev) in experiment.temperatures_pev().iter().enumerate() {
        let sigma_of = |bin: usize| -> Option<f64> {
            acc.get(&Quantity::LnRatio { kt_index: k, bin })
                .and_then(Accumulator::std)
                .filter(|s| *s > 0.0)
        };
        let fallback = (0..experiment.work_bins())
            .filter_map(sigma_of)
            .fold(SIGMA_FLOOR, f64::max);
        let fitted: Vec<Option<f64>> = outcomes
            .iter()
            .map(|o| {
                let points: Vec<RatioPoint> = o
                    .ratios
                    .get(k)?
                    .iter()
                    .map(|(bin, p)| RatioPoint {
                        sigma: sigma_of(*bin).unwrap_or(fallback).max(SIGMA_FLOOR),
                        ..*p
                    })
                    .collect();
                fit_fluctuation(&points, experiment.confidence()).ok()?.kt_pev
            })
            .collect();
        let mut ok: Vec<f64> = fitted.iter().flatten().copied().collect();
        recovery.push(TemperatureRecovery {
            kt_pev: *kt_pev,
            failures: fitted.len() - ok.len(),
            median_pev: median(&mut ok),
            fitted,
        });
    }
    Ok(UncertaintyTable {
        sigma,
        trials,
        seed,
        rows,
        recovery,
        failed_trials,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum UncertaintyLine {
    Row(UncertaintyRow),
    Recovery(TemperatureRecovery),
    Failure { trial: usize, message: String },
}

impl UncertaintyTable {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let header = serde_json::json!({ "sigma": self.sigma, "trials": self.trials, "seed": self.seed });
        let lines: Vec<UncertaintyLine> = self
            .rows
            .iter()
            .cloned()
            .map(UncertaintyLine::Row)
            .chain(self.recovery.iter().cloned().map(UncertaintyLine::Recovery))
            .chain(
                self.failed_trials
                    .iter()
                    .map(|(trial, message)| UncertaintyLine::Failure {
                        trial: *trial,
                        message: message.clone(),
                    }),
            )
            .collect();
        io::write_document(out, io::UNCERTAINTY_FORMAT, &header, &lines)
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let doc = io::read_document(input, io::UNCERTAINTY_FORMAT)?;
        let field = |name: &str| doc.header.get(name).cloned().unwrap_or(serde_json::Value::Null);
        let number = |name: &str| -> Result<serde_json::Value> {
            let v = field(name);
            if v.is_number() {
                Ok(v)
            } else {
                Err(Error::parse(1, format!("missing field `{name}`")))
            }
        };
        let mut table = UncertaintyTable {
            sigma: number("sigma")?.as_f64().unwrap_or_default(),
            trials: number("trials")?.as_u64().unwrap_or_default() as usize,
            seed: number("seed")?.as_u64().unwrap_or_default(),
            rows: Vec::new(),
            recovery: Vec::new(),
            failed_trials: Vec::new(),
        };
        for (line, v) in doc.records {
            match serde_json::from_value(v).map_err(|e| Error::parse(line, e.to_string()))? {
                UncertaintyLine::Row(r) => table.rows.push(r),
                UncertaintyLine::Recovery(r) => table.recovery.push(r),
                UncertaintyLine::Failure { trial, message } => table.failed_trials.push((trial, message)),
            }
        }
        Ok(table)
    }
}

/// How the ratio points of a fit were weighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Inverse variance from a Monte Carlo uncertainty table.
    MonteCarlo,
    /// No uncertainty table supplied; all points weigh the same.
    Uniform,
}

/// A fluctuation fit together with the provenance of its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    /// Preparation kT of the forward distribution.
    pub forward_kt_pev: Option<f64>,
    pub backward_kt_pev: Option<f64>,
    /// Forward and backward preparations disagree.
    pub kt_mismatch: bool,
    pub weighting: Weighting,
    pub fit: FitResult,
    /// Forward bins left out of the ratio set by the probability floor.
    pub unpaired: Vec<UnpairedPoint>,
}

impl FitDocument {
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        io::write_document(out, io::FIT_FORMAT, &serde_json::json!({}), std::slice::from_ref(self))
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let doc = io::read_document(input, io::FIT_FORMAT)?;
        let mut records = doc.records.into_iter();
        let (line, v) = records.next().ok_or_else(|| Error::parse(1, "fit document has no record"))?;
        if let Some((extra, _)) = records.next() {
            return Err(Error::parse(extra, "fit document holds a single record"));
        }
        serde_json::from_value(v).map_err(|e| Error::parse(line, e.to_string()))
    }

    /// Tab-separated plot data: one row per ratio point.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "work_pev\tln_ratio\tsigma\tfitted\tlower\tupper\texcluded")?;
        for p in &self.fit.points {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.work_pev, p.ln_ratio, p.sigma, p.fitted, p.lower, p.upper, p.excluded
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Standard normal draws for tests and synthetic fixtures.
pub fn normal_draws(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{gibbs_populations, spectrum, HamiltonianSpec, ThermalEnergy};
    use proptest::prelude::*;

    fn line_points(kt: f64, n: usize) -> Vec<RatioPoint> {
        (0..n)
            .map(|i| {
                let w = -30.0 + 60.0 * i as f64 / (n - 1) as f64;
                RatioPoint {
                    work_pev: w,
                    ln_ratio: w / kt,
                    sigma: 0.1,
                }
            })
            .collect()
    }

    #[test]
    fn exact_line() {
        let fit = fit_fluctuation(&line_points(20.0, 9), DEFAULT_CONFIDENCE).unwrap();
        assert!((fit.slope - 0.05).abs() < 1e-12);
        assert!((fit.kt_pev.unwrap() - 20.0).abs() < 1e-9);
        assert!(fit.intercept.abs() < 1e-12);
        assert!(fit.excluded.is_empty());
        assert_eq!(fit.dof, 7);
    }

    #[test]
    fn six_sigma_point_is_excluded() {
        let mut rng = stage_rng(5, Stage::Simulate, 0);
        let noise = normal_draws(&mut rng, 20);
        let mut points = line_points(12.0, 20);
        for (p, z) in points.iter_mut().zip(&noise) {
            p.ln_ratio += p.sigma * z;
        }
        points[7].ln_ratio = points[7].work_pev / 12.0 + 6.0 * points[7].sigma;
        let fit = fit_fluctuation(&points, DEFAULT_CONFIDENCE).unwrap();
        assert_eq!(fit.excluded, vec![points[7].work_pev]);
        assert!(fit.points[7].excluded);
        assert_eq!(fit.dof, 17);
        assert!((fit.kt_pev.unwrap() - 12.0).abs() < 1.0);
    }

    #[test]
    fn too_few_points() {
        let p = line_points(9.0, 3);
        assert!(matches!(
            fit_fluctuation(&p[..2], DEFAULT_CONFIDENCE),
            Err(Error::FitDegenerate { points: 2 })
        ));
        let same_w = vec![p[0]; 4];
        assert!(matches!(fit_fluctuation(&same_w, DEFAULT_CONFIDENCE), Err(Error::FitDegenerate { .. })));
    }

    #[test]
    fn negative_slope_has_no_temperature() {
        let mut p = line_points(20.0, 5);
        for q in &mut p {
            q.ln_ratio = -q.ln_ratio;
        }
        let fit = fit_fluctuation(&p, DEFAULT_CONFIDENCE).unwrap();
        assert!(fit.slope < 0.0);
        assert_eq!(fit.kt_pev, None);
    }

    #[test]
    fn kt_round_trip() {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        for kt in [1.0, 9.0, 12.0, 20.0, 100.0] {
            let pops = gibbs_populations(&s, ThermalEnergy::from_pev(kt, &EnergyScale::PLANCK).unwrap());
            let est = kt_from_populations(&pops, &s, &EnergyScale::PLANCK).unwrap().finite().unwrap();
            assert!((est - kt).abs() / kt < 1e-10, "{kt} -> {est}");
        }
    }

    #[test]
    fn kt_tags() {
        let s = spectrum(&HamiltonianSpec::CHLOROFORM);
        let flat = PopulationVector::uniform(4);
        assert_eq!(kt_from_populations(&flat, &s, &EnergyScale::PLANCK).unwrap(), KtEstimate::Infinite);
        let inverted = PopulationVector::new(vec![0.1, 0.2, 0.3, 0.4], None).unwrap();
        assert!(matches!(
            kt_from_populations(&inverted, &s, &EnergyScale::PLANCK).unwrap(),
            KtEstimate::Negative { kt_pev } if kt_pev < 0.0
        ));
        let empty = PopulationVector::new(vec![0.5, 0.5, 0.0, 0.0], None).unwrap();
        assert!(kt_from_populations(&empty, &s, &EnergyScale::PLANCK).is_err());
    }

    #[test]
    fn seeds_are_stage_separated() {
        assert_eq!(derive_seed(1, Stage::MonteCarlo, 3), derive_seed(1, Stage::MonteCarlo, 3));
        assert_ne!(derive_seed(1, Stage::MonteCarlo, 3), derive_seed(1, Stage::Simulate, 3));
        assert_ne!(derive_seed(1, Stage::MonteCarlo, 3), derive_seed(1, Stage::MonteCarlo, 4));
    }

    #[test]
    fn accumulator_constant_samples() {
        let mut a = Accumulator::default();
        for _ in 0..1000 {
            a.push(0.1234567);
        }
        assert_eq!(a.std(), Some(0.0));
        assert_eq!(a.mean(), 0.1234567);
        let mut b = Accumulator::default();
        b.push(1.0);
        assert_eq!(b.std(), None);
        b.push(3.0);
        assert!((b.std().unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }

    proptest! {
        #[test]
        fn kt_round_trip_everywhere(kt in 0.5f64..1000.0) {
            let s = spectrum(&HamiltonianSpec::CHLOROFORM);
            let pops = gibbs_populations(&s, ThermalEnergy::from_pev(kt, &EnergyScale::PLANCK).unwrap());
            let est = kt_from_populations(&pops, &s, &EnergyScale::PLANCK).unwrap().finite().unwrap();
            prop_assert!((est - kt).abs() / kt < 1e-9);
        }

        #[test]
        fn single_pass_contract(seed in 0u64..500, n in 5usize..25) {
            let mut rng = stage_rng(seed, Stage::Simulate, 1);
            let noise = normal_draws(&mut rng, n);
            let mut points = line_points(15.0, n);
            for (p, z) in points.iter_mut().zip(&noise) {
                p.ln_ratio += p.sigma * z;
            }
            if let Ok(fit) = fit_fluctuation(&points, DEFAULT_CONFIDENCE) {
                prop_assert!(fit.excluded.iter().all(|w| points.iter().any(|p| p.work_pev == *w)));
                prop_assert_eq!(fit.dof + 2 + fit.excluded.len(), n);
                prop_assert_eq!(fit.points.iter().filter(|p| p.excluded).count(), fit.excluded.len());
            }
        }
    }

    #[test]
    fn fit_document_round_trip() {
        let fit = fit_fluctuation(&line_points(20.0, 6), DEFAULT_CONFIDENCE).unwrap();
        let doc = FitDocument {
            forward_kt_pev: Some(20.0),
            backward_kt_pev: Some(20.0),
            kt_mismatch: false,
            weighting: Weighting::Uniform,
            fit,
            unpaired: Vec::new(),
        };
        let mut buf = Vec::new();
        doc.write(&mut buf).unwrap();
        assert_eq!(FitDocument::read(buf.as_slice()).unwrap(), doc);
        let mut plot = Vec::new();
        doc.write_plot_data(&mut plot).unwrap();
        let text = String::from_utf8(plot).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("work_pev\tln_ratio"));
    }
}
