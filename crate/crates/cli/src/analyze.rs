//! `qcal analyze`: tables and figures from a campaign dataset.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use qcal_core::analysis::{
    allan_deviation, delta_correlation, extract_series, fit_allan_models, log_spaced_factors,
    uncertainty_scaling_study, AllanFit, Channel, ScalingConfig, ScalingStudy,
};
use qcal_core::config::RunConfig;
use qcal_core::records::{read_campaign, CampaignLine, CampaignMeta};
use sha2::{Digest, Sha256};

use crate::campaign::{DATA_FILE, META_FILE};
use crate::output::{self, cell, Provenance, Table};
use crate::svg::{Plot, Series};
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Analysis {
    Allan,
    Correlations,
    DeltaCorrelation,
    Scaling,
}

struct Dataset {
    lines: Vec<CampaignLine>,
    cadence_s: f64,
    hash: String,
}

fn load(path: &Path, cfg: &RunConfig) -> Result<Dataset, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let lines = read_campaign(bytes.as_slice())
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let meta_path = path.with_file_name(META_FILE);
    let meta: Option<CampaignMeta> = fs::read_to_string(&meta_path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let cadence_ms = meta
        .as_ref()
        .map_or(cfg.campaign.cadence_ms, |m| m.config.campaign.cadence_ms);
    let hash = Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(Dataset {
        lines,
        cadence_s: cadence_ms * 1e-3,
        hash,
    })
}

pub fn cmd_analyze(
    cfg: &RunConfig,
    analyses: &[Analysis],
    input: Option<PathBuf>,
) -> Result<(), CliError> {
    if analyses.is_empty() {
        return Ok(());
    }
    let dir = PathBuf::from(&cfg.output_dir);
    let needs_data = analyses.iter().any(|a| *a != Analysis::Scaling);
    let data = if needs_data {
        let path = input.unwrap_or_else(|| dir.join(DATA_FILE));
        Some(load(&path, cfg)?)
    } else {
        None
    };
    let mut prov = Provenance::of(cfg);
    prov.dataset_hash = data.as_ref().map(|d| d.hash.clone());
    let mut done: Vec<Analysis> = Vec::new();
    for a in analyses {
        if done.contains(a) {
            continue;
        }
        done.push(*a);
        match a {
            Analysis::Allan => allan(cfg, data.as_ref().expect("loaded"), &dir, &prov)?,
            Analysis::Correlations => {
                correlations(cfg, data.as_ref().expect("loaded"), &dir, &prov, false)?
            }
            Analysis::DeltaCorrelation => {
                correlations(cfg, data.as_ref().expect("loaded"), &dir, &prov, true)?
            }
            Analysis::Scaling => scaling(cfg, &dir, &prov)?,
        }
    }
    Ok(())
}

fn allan(cfg: &RunConfig, data: &Dataset, dir: &Path, prov: &Provenance) -> Result<(), CliError> {
    let records: Vec<_> = data.lines.iter().map(|l| l.record.clone()).collect();
    let mut curves = Table::new(&["channel", "tau_s", "adev", "fit_adev", "adev_minus_white"]);
    let mut fits = Table::new(&[
        "channel",
        "white",
        "flicker",
        "lorentz_q",
        "tau_c_s",
        "residual",
        "degenerate",
    ]);
    for ch in &cfg.analysis.allan_channels {
        let series = &extract_series(&records, &[*ch], data.cadence_s)[0];
        let ms = log_spaced_factors(series.len(), cfg.analysis.allan_per_decade);
        if ms.is_empty() {
            eprintln!("allan: {} has too few points ({})", ch.name(), series.len());
            continue;
        }
        let curve = allan_deviation(&series.values, data.cadence_s, &ms)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let fit: Option<AllanFit> = match fit_allan_models(&curve) {
            Ok(f) => Some(f),
            Err(e) => {
                eprintln!("allan: {} fit skipped: {e}", ch.name());
                None
            }
        };
        for (tau, a) in &curve {
            curves.row(vec![
                ch.name().into(),
                tau.to_string(),
                a.to_string(),
                cell(fit.map(|f| f.avar(*tau).sqrt())),
                cell(fit.map(|f| f.without_white(*tau))),
            ]);
        }
        if let Some(f) = fit {
            fits.row(vec![
                ch.name().into(),
                f.white.to_string(),
                f.flicker.to_string(),
                f.lorentz_q.to_string(),
                f.tau_c.to_string(),
                f.residual.to_string(),
                f.degenerate.to_string(),
            ]);
        }
        let mut series_out = vec![Series::points("Allan deviation", curve.clone())];
        if let Some(f) = fit.filter(|f| !f.degenerate) {
            series_out.push(Series::line(
                "fit",
                curve.iter().map(|(t, _)| (*t, f.avar(*t).sqrt())).collect(),
            ));
            series_out.push(Series::line(
                "fit − white",
                curve
                    .iter()
                    .map(|(t, _)| (*t, f.without_white(*t)))
                    .collect(),
            ));
        }
        let plot = Plot {
            title: format!("Allan deviation: {}", ch.name()),
            x_label: "τ (s)".into(),
            y_label: "σ(τ)".into(),
            log_x: true,
            log_y: true,
            series: series_out,
        };
        output::write(
            dir,
            &format!("allan-{}.svg", ch.name()),
            &plot.to_svg(&prov.line()),
        )?;
    }
    output::write(dir, "allan.tsv", &curves.render(prov))?;
    output::write(dir, "allan-fit.tsv", &fits.render(prov))?;
    Ok(())
}

fn correlations(
    cfg: &RunConfig,
    data: &Dataset,
    dir: &Path,
    prov: &Provenance,
    delta: bool,
) -> Result<(), CliError> {
    let records: Vec<_> = data.lines.iter().map(|l| l.record.clone()).collect();
    let taus = &cfg.analysis.correlation_taus_s;
    let mut table = if delta {
        Table::new(&["channel", "tau_s", "window", "delta_c"])
    } else {
        Table::new(&["channel", "tau_s", "window", "c_eps_a", "c_eps_b"])
    };
    let mut plot_series = Vec::new();
    for ch in &cfg.analysis.correlation_channels {
        let s = extract_series(
            &records,
            &[Channel::EpsA, Channel::EpsB, *ch],
            data.cadence_s,
        );
        let rows = match delta_correlation(&s[0], &s[1], &s[2], taus) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("{}: skipped: {e}", ch.name());
                continue;
            }
        };
        for d in &rows {
            if delta {
                table.row(vec![
                    ch.name().into(),
                    d.tau.to_string(),
                    d.window.to_string(),
                    cell(d.delta),
                ]);
            } else {
                table.row(vec![
                    ch.name().into(),
                    d.tau.to_string(),
                    d.window.to_string(),
                    cell(d.c_a),
                    cell(d.c_b),
                ]);
            }
        }
        if delta {
            plot_series.push(Series::line(
                format!("ΔC({})", ch.name()),
                rows.iter()
                    .filter_map(|d| Some((d.tau, d.delta?)))
                    .collect(),
            ));
        } else {
            plot_series.push(Series::line(
                format!("C(ε_A, {})", ch.name()),
                rows.iter().filter_map(|d| Some((d.tau, d.c_a?))).collect(),
            ));
            plot_series.push(Series::line(
                format!("C(ε_B, {})", ch.name()),
                rows.iter().filter_map(|d| Some((d.tau, d.c_b?))).collect(),
            ));
        }
    }
    let name = if delta {
        "delta-correlation"
    } else {
        "correlations"
    };
    output::write(dir, &format!("{name}.tsv"), &table.render(prov))?;
    let plot = Plot {
        title: if delta {
            "Correlation change from recalibration"
        } else {
            "Pearson correlation after smoothing"
        }
        .into(),
        x_label: "smoothing τ (s)".into(),
        y_label: if delta { "ΔC" } else { "C" }.into(),
        log_x: true,
        log_y: false,
        series: plot_series,
    };
    output::write(dir, &format!("{name}.svg"), &plot.to_svg(&prov.line()))?;
    Ok(())
}

fn scaling_table(s: &ScalingStudy) -> Table {
    let mut t = Table::new(&[
        "value",
        "t_decision_ms",
        "sigma",
        "sigma_sqrt_t",
        "ok",
        "failed",
        "breakdown",
    ]);
    for r in &s.rows {
        t.row(vec![
            r.value.to_string(),
            r.t_decision_ms.to_string(),
            r.sigma.to_string(),
            r.sigma_sqrt_t.to_string(),
            r.ok.to_string(),
            r.failed.to_string(),
            r.breakdown.to_string(),
        ]);
    }
    t
}

fn scaling(cfg: &RunConfig, dir: &Path, prov: &Provenance) -> Result<(), CliError> {
    let mut summary = Table::new(&["sweep", "exponent", "exponent_se", "n_fit"]);
    let studies: [(&str, &ScalingConfig, &str); 2] = [
        ("pi", &cfg.analysis.scaling_pi, "train length n"),
        ("t1", &cfg.analysis.scaling_t1, "wait scale α"),
    ];
    for (name, sc, x_label) in studies {
        let study = uncertainty_scaling_study(&cfg.device, &cfg.sim, &cfg.latency, sc, cfg.seed)
            .map_err(|e| CliError::Runtime(format!("scaling {name}: {e}")))?;
        output::write(
            dir,
            &format!("scaling-{name}.tsv"),
            &scaling_table(&study).render(prov),
        )?;
        summary.row(vec![
            name.into(),
            study.exponent.to_string(),
            study.exponent_se.to_string(),
            study.n_fit.to_string(),
        ]);
        let pts: Vec<(f64, f64)> = study
            .rows
            .iter()
            .filter(|r| !r.breakdown)
            .map(|r| (r.value, r.sigma_sqrt_t))
            .collect();
        let plot = Plot {
            title: format!(
                "σ·√T, fitted exponent {:.2} ± {:.2}",
                study.exponent, study.exponent_se
            ),
            x_label: x_label.into(),
            y_label: "σ·√T".into(),
            log_x: true,
            log_y: true,
            series: vec![Series::points("median over runs", pts)],
        };
        output::write(
            dir,
            &format!("scaling-{name}.svg"),
            &plot.to_svg(&prov.line()),
        )?;
    }
    let text = summary.render(prov);
    output::write(dir, "scaling.tsv", &text)?;
    print!("{text}");
    Ok(())
}
