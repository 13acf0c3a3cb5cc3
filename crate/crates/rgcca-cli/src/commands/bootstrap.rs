use std::path::{Path, PathBuf};

use clap::Args;
use rgcca::{bootstrap_stability, Result, StabilityReport};
use toml::value::Value;

use super::{ensure_out_dir, load_model, read_blocks, write_text};
use crate::io::{finish, fmt17, open_writer, write_record};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Comma-separated list of block data files (CSV with a header row).
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub blocks: Vec<PathBuf>,
    /// Model description file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of row resamples.
    #[arg(long, default_value_t = 500)]
    pub rounds: usize,
    /// Seed of the resampling generator.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight magnitude above which a variable counts as selected.
    #[arg(long, default_value_t = 1e-10)]
    pub threshold: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn write_counts(path: &Path, report: &StabilityReport, headers: &[Vec<String>]) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(
        &mut w,
        path,
        &["block", "component", "index", "variable", "count", "frequency"].map(String::from),
    )?;
    let successful = report.successful as f64;
    for (k, counts) in report.selection_counts.iter().enumerate() {
        for a in 0..counts.ncols() {
            for i in 0..counts.nrows() {
                let count = counts[[i, a]];
                write_record(
                    &mut w,
                    path,
                    &[
                        k.to_string(),
                        a.to_string(),
                        i.to_string(),
                        headers[k][i].clone(),
                        count.to_string(),
                        fmt17(count as f64 / successful),
                    ],
                )?;
            }
        }
    }
    finish(w, path)
}

fn report_text(report: &StabilityReport) -> String {
    let mut text = String::new();
    text.push_str(&format!("rounds = {}\n", report.rounds));
    text.push_str(&format!("successful = {}\n", report.successful));
    text.push_str(&format!("threshold = {}\n", fmt17(report.threshold)));
    for (k, per_component) in report.kappa.iter().enumerate() {
        for (a, &kappa) in per_component.iter().enumerate() {
            text.push_str(&format!(
                "kappa_block{}_component{} = {}\n",
                k,
                a,
                fmt17(kappa)
            ));
        }
    }
    text
}

pub fn run(args: &BootstrapArgs, jobs: usize) -> Result<i32> {
    let mut manifest = Manifest::new("bootstrap", Some(args.seed), jobs);
    for path in &args.blocks {
        manifest.record_input(path)?;
    }

    let (raw, headers) = read_blocks(&args.blocks)?;
    let widths: Vec<usize> = raw.iter().map(|m| m.ncols()).collect();
    let (model, aux_inputs) = load_model(args.config.as_deref(), None, None, args.seed, &widths)?;
    for path in &aux_inputs {
        manifest.record_input(path)?;
    }
    let mut resolved = model.resolved.clone();
    resolved.insert("rounds".into(), Value::Integer(args.rounds as i64));
    resolved.insert("threshold".into(), Value::Float(args.threshold));
    manifest.set_config(resolved);

    let report = bootstrap_stability(
        &raw,
        &model.prep,
        &model.spec,
        args.rounds,
        args.seed,
        args.threshold,
    )?;

    ensure_out_dir(&args.out)?;
    write_counts(&args.out.join("selection_counts.csv"), &report, &headers)?;
    write_text(&args.out.join("report.txt"), &report_text(&report))?;
    manifest.write(&args.out)?;

    Ok(0)
}
