use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use workstat::experiment::{Experiment, RunConfig};
use workstat::invert::InversionReport;
use workstat::measure::{same_kt, Dataset};
use workstat::pulses::PulseSequence;
use workstat::stats::{
    fit_fluctuation, propagate_errors, ratio_points, FitDocument, UncertaintyTable, Weighting,
};
use workstat::tpm::{crooks_points, work_distribution, WorkDistribution};
use workstat::{Direction, Error, Execution};

use crate::error::CliError;

/// Probability mass of a work distribution may differ from one by at most this.
pub const MASS_TOLERANCE: f64 = 1e-6;

pub struct Context {
    pub config: RunConfig,
    pub exec: Execution,
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// File-name form of a temperature: `20`, `12p5`, `inf`.
pub fn kt_label(kt_pev: Option<f64>) -> String {
    match kt_pev {
        Some(k) if k.is_finite() => {
            let text = format!("{k:.6}");
            let text = text.trim_end_matches('0').trim_end_matches('.');
            text.replace('.', "p")
        }
        _ => "inf".into(),
    }
}

impl Context {
    pub fn experiment(&self) -> Result<Experiment, CliError> {
        let steps = match &self.config.steps {
            Some(path) => Some(PulseSequence::read(open(path)?).map_err(|e| CliError::input(path, e))?),
            None => None,
        };
        Ok(Experiment::new(self.config.clone(), steps.as_ref())?)
    }

    pub fn simulate(&self, out: &Path) -> Result<Dataset, CliError> {
        let ds = self.experiment()?.simulate()?;
        ds.write(create(out)?)?;
        Ok(ds)
    }

    /// Writes the report file even when a projection fails to converge, then reports the failure.
    pub fn invert(&self, dataset: &Path, out: &Path) -> Result<Vec<InversionReport>, CliError> {
        let ds = Dataset::read(open(dataset)?).map_err(|e| CliError::input(dataset, e))?;
        let reports = self.experiment()?.invert(&ds)?;
        InversionReport::write_all(&reports, create(out)?)?;
        if let Some(bad) = reports.iter().find(|r| !r.converged) {
            return Err(Error::NotConverged {
                max_iter: self.config.mle_max_iter,
                last_change: bad.final_change,
            }
            .into());
        }
        Ok(reports)
    }

    /// One file per (direction, preparation) found in the dataset.
    pub fn workdist(&self, inversion: &Path, dataset: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let reports = InversionReport::read_all(open(inversion)?).map_err(|e| CliError::input(inversion, e))?;
        let ds = Dataset::read(open(dataset)?).map_err(|e| CliError::input(dataset, e))?;
        let exp = self.experiment()?;
        ensure_dir(out_dir)?;
        let mut written = Vec::new();
        for report in &reports {
            let blocks: Vec<_> = ds.populations.iter().filter(|b| b.direction == report.direction).collect();
            if blocks.is_empty() {
                return Err(CliError::input(
                    dataset,
                    Error::InvalidPopulations(format!("no population blocks for direction {}", report.direction)),
                ));
            }
            for block in blocks {
                let pops = block.to_populations(exp.scale())?;
                let w = work_distribution(&pops, &report.projected, exp.spectrum())?;
                let mass = w.total();
                if (mass - 1.0).abs() > MASS_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "{} distribution at kT = {} has total mass {mass}",
                        report.direction, block.kt_pev
                    ))
                    .into());
                }
                let path = out_dir.join(format!("workdist-{}-kt{}.jsonl", report.direction, kt_label(Some(block.kt_pev))));
                w.write(create(&path)?, exp.scale())?;
                written.push(path);
            }
        }
        Ok(written)
    }

    pub fn propagate(&self, out: &Path) -> Result<UncertaintyTable, CliError> {
        self.config.validate_for_inversion()?;
        let exp = self.experiment()?;
        let table = propagate_errors(&exp, self.config.sigma, self.config.trials, self.config.seed, self.exec)?;
        table.write(create(out)?)?;
        Ok(table)
    }

    pub fn crooks(
        &self,
        forward: &Path,
        backward: &Path,
        uncertainty: Option<&Path>,
        out: &Path,
        plot: Option<&Path>,
    ) -> Result<FitDocument, CliError> {
        let (fwd, scale) = read_distribution(forward, Some(Direction::Forward))?;
        let (bwd, _) = read_distribution(backward, Some(Direction::Backward))?;
        let forward_kt_pev = fwd.kt.map(|k| k.pev(&scale));
        let backward_kt_pev = bwd.kt.map(|k| k.pev(&scale));
        let kt_mismatch = match (forward_kt_pev, backward_kt_pev) {
            (Some(a), Some(b)) => !same_kt(a, b),
            (a, b) => a != b,
        };
        if kt_mismatch {
            eprintln!(
                "warning: preparation temperatures disagree (forward {}, backward {})",
                kt_label(forward_kt_pev),
                kt_label(backward_kt_pev)
            );
        }
        let table = match uncertainty {
            Some(path) => Some(UncertaintyTable::read(open(path)?).map_err(|e| CliError::input(path, e))?),
            None => None,
        };
        let kt_index = match (&table, forward_kt_pev) {
            (Some(t), Some(kt)) => t.kt_index(kt),
            _ => None,
        };
        if table.is_some() && kt_index.is_none() {
            eprintln!("warning: uncertainty table has no entry for this temperature; using uniform weights");
        }
        let crooks = crooks_points(&fwd, &bwd, self.config.ratio_floor);
        let (points, weighting) = match (&table, kt_index) {
            (Some(t), Some(k)) => (ratio_points(&crooks, &scale, |w| t.ratio_sigma(k, w)), Weighting::MonteCarlo),
            _ => (ratio_points(&crooks, &scale, |_| 1.0), Weighting::Uniform),
        };
        let fit = fit_fluctuation(&points, self.config.confidence)?;
        let doc = FitDocument {
            forward_kt_pev,
            backward_kt_pev,
            kt_mismatch,
            weighting,
            fit,
            unpaired: crooks.unpaired,
        };
        doc.write(create(out)?)?;
        if let Some(p) = plot {
            doc.write_plot_data(create(p)?)?;
        }
        Ok(doc)
    }

    /// simulate → invert → workdist → propagate → crooks → report, all inside `out_dir`.
    pub fn run(&self, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        self.config.validate_for_inversion()?;
        ensure_dir(out_dir)?;
        let mut written = Vec::new();
        let dataset = out_dir.join("dataset.jsonl");
        self.simulate(&dataset)?;
        written.push(dataset.clone());
        let inversion = out_dir.join("inversion.jsonl");
        self.invert(&dataset, &inversion)?;
        written.push(inversion.clone());
        let dists = self.workdist(&inversion, &dataset, out_dir)?;
        written.extend(dists.iter().cloned());

        let uncertainty = if self.config.trials >= 2 {
            let path = out_dir.join("uncertainty.jsonl");
            self.propagate(&path)?;
            written.push(path.clone());
            Some(path)
        } else {
            None
        };

        let mut fits = Vec::new();
        for f in dists.iter().filter(|p| is_direction_file(p, Direction::Forward)) {
            let name = f.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let label = name.trim_start_matches("workdist-forward-").trim_end_matches(".jsonl");
            let b = out_dir.join(format!("workdist-backward-{label}.jsonl"));
            if !dists.contains(&b) {
                continue;
            }
            let fit = out_dir.join(format!("fit-{label}.jsonl"));
            let plot = out_dir.join(format!("plot-{label}.tsv"));
            self.crooks(f, &b, uncertainty.as_deref(), &fit, Some(&plot))?;
            written.push(fit.clone());
            written.push(plot);
            fits.push(fit);
        }

        let text = crate::report::render(
            self,
            &crate::report::Inputs {
                dataset,
                inversion,
                workdist: dists,
                fits,
                uncertainty,
            },
        )?;
        let report = out_dir.join("report.txt");
        fs::write(&report, text).map_err(|e| CliError::io(&report, e))?;
        written.push(report);
        Ok(written)
    }
}

fn is_direction_file(path: &Path, direction: Direction) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with(&format!("workdist-{direction}-")))
}

pub fn read_distribution(
    path: &Path,
    expected: Option<Direction>,
) -> Result<(WorkDistribution, workstat::hilbert::EnergyScale), CliError> {
    let (w, scale) = WorkDistribution::read(open(path)?).map_err(|e| CliError::input(path, e))?;
    if let Some(expected) = expected.filter(|d| *d != w.direction) {
        return Err(CliError::input(
            path,
            Error::InvalidArgument(format!("expected a {expected} distribution, found {}", w.direction)),
        ));
    }
    Ok((w, scale))
}
