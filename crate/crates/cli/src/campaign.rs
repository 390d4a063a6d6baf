//! `qcal campaign`: stream cycle records, resuming from a partial file.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::Path;

use qcal_core::config::RunConfig;
use qcal_core::control::{run_campaign, summarize, Campaign, CampaignSummary};
use qcal_core::records::{read_campaign, CampaignLine, CampaignMeta};

use crate::output::{self, cell, Provenance, Table};
use crate::CliError;

pub const DATA_FILE: &str = "campaign.ndjson";
pub const META_FILE: &str = "campaign.meta.json";

/// Drop a trailing partial line left by an interrupted write.
fn trim_partial(path: &Path) -> Result<(), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if keep < bytes.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| CliError::io(path, e))?;
        f.set_len(keep as u64).map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

fn existing_count(dir: &Path, cfg: &RunConfig) -> Result<usize, CliError> {
    let data = dir.join(DATA_FILE);
    if !data.exists() {
        return Ok(0);
    }
    let meta_path = dir.join(META_FILE);
    let meta: CampaignMeta = fs::read_to_string(&meta_path)
        .map_err(|e| CliError::io(&meta_path, e))
        .and_then(|t| {
            serde_json::from_str(&t)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", meta_path.display())))
        })?;
    if meta.config_hash != cfg.hash() {
        return Err(CliError::Usage(format!(
            "{} was produced by config {}, not {}; pass --fresh to overwrite",
            data.display(),
            meta.config_hash,
            cfg.hash()
        )));
    }
    trim_partial(&data)?;
    let f = File::open(&data).map_err(|e| CliError::io(&data, e))?;
    let lines = read_campaign(BufReader::new(f))
        .map_err(|e| CliError::Runtime(format!("{}: {e}", data.display())))?;
    Ok(lines.len())
}

pub fn summary_table(s: &CampaignSummary) -> Table {
    let mut t = Table::new(&[
        "cycles",
        "paired",
        "mean_eps_a",
        "mean_eps_b",
        "reduction_percent",
        "failures",
        "overruns",
        "mean_cycle_ms",
    ]);
    t.row(vec![
        s.cycles.to_string(),
        s.paired.to_string(),
        cell(s.mean_eps_a),
        cell(s.mean_eps_b),
        cell(s.reduction_percent),
        s.failures.to_string(),
        s.overruns.to_string(),
        cell(s.mean_cycle_ms),
    ]);
    t
}

pub fn cmd_campaign(cfg: &RunConfig, fresh: bool) -> Result<(), CliError> {
    let dir = Path::new(&cfg.output_dir);
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let data = dir.join(DATA_FILE);
    if fresh && data.exists() {
        fs::remove_file(&data).map_err(|e| CliError::io(&data, e))?;
    }
    let done = existing_count(dir, cfg)?;
    output::write_json(dir, META_FILE, &CampaignMeta::new(cfg))?;
    let n = cfg.campaign.n_cycles;
    if done > n {
        return Err(CliError::Runtime(format!(
            "{} already holds {done} records, more than n_cycles = {n}",
            data.display()
        )));
    }

    let mut campaign = Campaign::new(
        cfg.device.clone(),
        cfg.sim.clone(),
        cfg.latency,
        &cfg.drift,
        cfg.initial.clone(),
        cfg.loop_primitives.clone(),
        &cfg.campaign,
        cfg.seed,
    )
    .map_err(|e| CliError::Config(e.to_string()))?;
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&data)
        .map_err(|e| CliError::io(&data, e))?;
    let hash = cfg.hash();
    run_campaign(&mut campaign, n, done, |r| {
        let line = CampaignLine {
            seed: cfg.seed,
            config_hash: hash.clone(),
            record: r.clone(),
        };
        let mut text =
            serde_json::to_string(&line).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        file.write_all(text.as_bytes())
            .map_err(|e| CliError::io(&data, e))
    })?;
    file.flush().map_err(|e| CliError::io(&data, e))?;
    drop(file);

    let f = File::open(&data).map_err(|e| CliError::io(&data, e))?;
    let lines = read_campaign(BufReader::new(f)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let records: Vec<_> = lines.into_iter().map(|l| l.record).collect();
    let table = summary_table(&summarize(&records)).render(&Provenance::of(cfg));
    output::write(dir, "campaign-summary.tsv", &table)?;
    print!("{table}");
    if done > 0 {
        eprintln!("resumed after {done} records");
    }
    Ok(())
}
