//! Plain-text summary of a run.

use std::fmt::Write as _;
use std::path::PathBuf;

use workstat::hilbert::PopulationVector;
use workstat::invert::InversionReport;
use workstat::measure::{same_kt, Dataset};
use workstat::stats::{kt_from_populations, FitDocument, KtEstimate, UncertaintyTable};
use workstat::tpm::{jarzynski_functional, mean_work, micro_reversibility_error, TransitionMatrix};
use workstat::Direction;

use crate::commands::{open, read_distribution, Context};
use crate::error::CliError;

pub struct Inputs {
    pub dataset: PathBuf,
    pub inversion: PathBuf,
    pub workdist: Vec<PathBuf>,
    pub fits: Vec<PathBuf>,
    pub uncertainty: Option<PathBuf>,
}

fn kt_text(est: &KtEstimate) -> String {
    match est {
        KtEstimate::Finite { kt_pev } => format!("{kt_pev:.3}"),
        KtEstimate::Infinite => "inf".into(),
        KtEstimate::Negative { kt_pev } => format!("{kt_pev:.3} (inverted)"),
    }
}

fn matrix_rows(out: &mut String, left: &TransitionMatrix, right: &TransitionMatrix) {
    let d = left.dim();
    for m in 0..d {
        let l: Vec<String> = (0..d).map(|n| format!("{:7.4}", left.get(m, n))).collect();
        let r: Vec<String> = (0..d).map(|n| format!("{:7.4}", right.get(m, n))).collect();
        let _ = writeln!(out, "    {}   |   {}", l.join(" "), r.join(" "));
    }
}

pub fn render(ctx: &Context, inputs: &Inputs) -> Result<String, CliError> {
    let ds = Dataset::read(open(&inputs.dataset)?).map_err(|e| CliError::input(&inputs.dataset, e))?;
    let reports =
        InversionReport::read_all(open(&inputs.inversion)?).map_err(|e| CliError::input(&inputs.inversion, e))?;
    let exp = ctx.experiment()?;
    let spectrum = exp.spectrum();
    let scale = exp.scale();
    let c = &ctx.config;
    let h = c.effective_hamiltonian();
    let mut out = String::new();

    let _ = writeln!(out, "workstat report");
    let _ = writeln!(
        out,
        "dnu_H = {} Hz, dnu_C = {} Hz, J = {} Hz, {} peV per Hz, seed {}",
        h.dnu_h, h.dnu_c, h.j_coupling, scale.pev_per_hz, c.seed
    );

    let _ = writeln!(out, "\nSpectrum");
    let _ = writeln!(out, "  level  state  energy_hz     energy_pev");
    for (k, (e, label)) in spectrum.energies.iter().zip(&spectrum.labels).enumerate() {
        let _ = writeln!(out, "  {k:>5}  {label}     {e:>10.3}  {:>10.4}", scale.to_pev(*e));
    }

    let fit_docs: Vec<FitDocument> = inputs
        .fits
        .iter()
        .map(|p| FitDocument::read(open(p)?).map_err(|e| CliError::input(p, e)))
        .collect::<Result<_, _>>()?;

    let _ = writeln!(out, "\nTemperatures (peV)");
    let _ = writeln!(out, "  direction  prepared  from_populations  from_fit");
    for block in &ds.populations {
        let pops = PopulationVector::new(block.probs.clone(), None)
            .or_else(|_| PopulationVector::from_measured(block.probs.clone(), 1e-6, None))?;
        let est = kt_from_populations(&pops, spectrum, scale)?;
        let fitted = fit_docs
            .iter()
            .filter(|_| block.direction == Direction::Forward)
            .find(|f| f.forward_kt_pev.is_some_and(|k| same_kt(k, block.kt_pev)))
            .and_then(|f| Some((f.fit.kt_pev?, f.fit.kt_stderr_pev?)))
            .map(|(k, e)| format!("{k:.2} +/- {e:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "  {:<9}  {:>8.3}  {:>16}  {}",
            block.direction.to_string(),
            block.kt_pev,
            kt_text(&est),
            fitted
        );
    }

    let _ = writeln!(out, "\nTransition matrices p(m|n), rows m, columns n: reconstructed | exact");
    let mut reconstructed = Vec::new();
    for d in Direction::BOTH {
        match reports.iter().find(|r| r.direction == d) {
            Some(r) => {
                let oracle = exp.oracle(d)?;
                let flags: Vec<String> = r
                    .flags
                    .iter()
                    .map(|f| serde_json::to_string(f).unwrap_or_default())
                    .collect();
                let _ = writeln!(
                    out,
                    "  {d}: converged {}, {} iterations, condition number {:.1}, max |reconstructed - exact| {:.4}",
                    r.converged,
                    r.iterations,
                    r.condition_number,
                    r.projected.max_abs_diff(&oracle)
                );
                if !flags.is_empty() {
                    let _ = writeln!(out, "    flags: {}", flags.join(", "));
                }
                matrix_rows(&mut out, &r.projected, &oracle);
                reconstructed.push(r.projected.clone());
            }
            None => {
                let _ = writeln!(out, "  {d}: absent");
            }
        }
    }

    let _ = writeln!(out, "\nMicro-reversibility max |pF(m|n) - pB(n|m)|");
    match (
        reports.iter().find(|r| r.direction == Direction::Forward),
        reports.iter().find(|r| r.direction == Direction::Backward),
    ) {
        (Some(f), Some(b)) => {
            let exact =
                micro_reversibility_error(&exp.oracle(Direction::Forward)?, &exp.oracle(Direction::Backward)?);
            let _ = writeln!(
                out,
                "  reconstructed {:.4}, exact {:.2e}",
                micro_reversibility_error(&f.projected, &b.projected),
                exact
            );
        }
        _ => {
            let _ = writeln!(out, "  absent (needs both directions)");
        }
    }

    let _ = writeln!(out, "\nWork distributions");
    if inputs.workdist.is_empty() {
        let _ = writeln!(out, "  none supplied");
    }
    for path in &inputs.workdist {
        let (w, wscale) = read_distribution(path, None)?;
        let kt = w.kt;
        let _ = writeln!(
            out,
            "  {} kT = {} peV: <W> = {:.4} peV, <exp(-W/kT)> = {}",
            w.direction,
            kt.map(|k| format!("{:.3}", k.pev(&wscale))).unwrap_or_else(|| "?".into()),
            wscale.to_pev(mean_work(&w)),
            kt.map(|k| format!("{:.6}", jarzynski_functional(&w, k))).unwrap_or_else(|| "-".into())
        );
        for p in &w.points {
            let _ = writeln!(out, "    {:>10.4}  {:.6}", wscale.to_pev(p.work), p.prob);
        }
    }

    let _ = writeln!(out, "\nFluctuation fits");
    if fit_docs.is_empty() {
        let _ = writeln!(out, "  none supplied");
    }
    for doc in &fit_docs {
        let f = &doc.fit;
        let _ = writeln!(
            out,
            "  kT {}: slope {:.5} +/- {:.5} 1/peV, intercept {:.4} +/- {:.4}, fitted kT {}, {} points, excluded {:?}, weighting {:?}{}",
            doc.forward_kt_pev.map(|k| format!("{k:.3}")).unwrap_or_else(|| "inf".into()),
            f.slope,
            f.slope_stderr,
            f.intercept,
            f.intercept_stderr,
            match (f.kt_pev, f.kt_stderr_pev) {
                (Some(k), Some(e)) => format!("{k:.3} +/- {e:.3}"),
                _ => "undefined".into(),
            },
            f.points.len(),
            f.excluded,
            doc.weighting,
            if doc.kt_mismatch { ", PREPARATION MISMATCH" } else { "" }
        );
    }

    if let Some(path) = &inputs.uncertainty {
        let table = UncertaintyTable::read(open(path)?).map_err(|e| CliError::input(path, e))?;
        let _ = writeln!(
            out,
            "\nMonte Carlo ({} trials, sigma {}, seed {})",
            table.trials, table.sigma, table.seed
        );
        for r in &table.recovery {
            let _ = writeln!(
                out,
                "  kT {:.3}: median fitted kT {}, {} failed fits",
                r.kt_pev,
                r.median_pev.map(|m| format!("{m:.3}")).unwrap_or_else(|| "-".into()),
                r.failures
            );
        }
        if !table.failed_trials.is_empty() {
            let _ = writeln!(out, "  {} trials raised errors", table.failed_trials.len());
        }
    }
    Ok(out)
}
