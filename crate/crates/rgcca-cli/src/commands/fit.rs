use std::path::PathBuf;

use clap::Args;
use ndarray::Array2;
use rgcca::{fit, Block, FitResult, Result};
use toml::value::Value;

use super::{ensure_out_dir, load_model, read_blocks, write_text};
use crate::io::{finish, fmt17, open_writer, write_record};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Comma-separated list of block data files (CSV with a header row).
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub blocks: Vec<PathBuf>,
    /// Design matrix file overriding the model file's design section.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Model description file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of components, overriding the model file.
    #[arg(long)]
    pub components: Option<usize>,
    /// Seed for the random start (only used with init method "random").
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn write_weights(
    path: &std::path::Path,
    weights: &[Array2<f64>],
    headers: &[Vec<String>],
) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(
        &mut w,
        path,
        &["block", "component", "index", "variable", "value"].map(String::from),
    )?;
    for (k, block_weights) in weights.iter().enumerate() {
        for a in 0..block_weights.ncols() {
            for i in 0..block_weights.nrows() {
                write_record(
                    &mut w,
                    path,
                    &[
                        k.to_string(),
                        a.to_string(),
                        i.to_string(),
                        headers[k][i].clone(),
                        fmt17(block_weights[[i, a]]),
                    ],
                )?;
            }
        }
    }
    finish(w, path)
}

fn write_scores(path: &std::path::Path, scores: &[Array2<f64>]) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(
        &mut w,
        path,
        &["block", "component", "row", "value"].map(String::from),
    )?;
    for (k, block_scores) in scores.iter().enumerate() {
        for a in 0..block_scores.ncols() {
            for r in 0..block_scores.nrows() {
                write_record(
                    &mut w,
                    path,
                    &[
                        k.to_string(),
                        a.to_string(),
                        r.to_string(),
                        fmt17(block_scores[[r, a]]),
                    ],
                )?;
            }
        }
    }
    finish(w, path)
}

fn diagnostics_text(result: &FitResult) -> String {
    let mut text = String::new();
    text.push_str(&format!("converged = {}\n", result.converged));
    text.push_str(&format!("components = {}\n", result.components.len()));
    for (a, comp) in result.components.iter().enumerate() {
        text.push_str(&format!("\n[component {a}]\n"));
        text.push_str(&format!("converged = {}\n", comp.converged));
        text.push_str(&format!("sweeps = {}\n", comp.sweeps));
        let trace = &comp.objective_trace;
        text.push_str(&format!("objective_initial = {}\n", fmt17(trace[0])));
        text.push_str(&format!(
            "objective_final = {}\n",
            fmt17(*trace.last().unwrap())
        ));
        text.push_str(&format!(
            "gradient_map_norms = {}\n",
            comp.gradient_map_norms
                .iter()
                .map(|&v| fmt17(v))
                .collect::<Vec<_>>()
                .join(" ")
        ));
        text.push_str(&format!(
            "inner_iterations = {}\n",
            comp.inner_iterations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
        text.push_str(&format!(
            "capped_projections = {}\n",
            comp.capped_projections
        ));
        text.push_str(&format!(
            "objective_trace = {}\n",
            trace.iter().map(|&v| fmt17(v)).collect::<Vec<_>>().join(" ")
        ));
    }
    text
}

pub fn run(args: &FitArgs, jobs: usize) -> Result<i32> {
    let mut manifest = Manifest::new("fit", Some(args.seed), jobs);
    for path in &args.blocks {
        manifest.record_input(path)?;
    }

    let (raw, headers) = read_blocks(&args.blocks)?;
    let widths: Vec<usize> = raw.iter().map(|m| m.ncols()).collect();
    let (model, aux_inputs) = load_model(
        args.config.as_deref(),
        args.design.as_deref(),
        args.components,
        args.seed,
        &widths,
    )?;
    for path in &aux_inputs {
        manifest.record_input(path)?;
    }
    let mut resolved = model.resolved.clone();
    resolved.insert(
        "blocks".into(),
        Value::Array(
            args.blocks
                .iter()
                .map(|p| Value::String(p.display().to_string()))
                .collect(),
        ),
    );
    manifest.set_config(resolved);

    let blocks: Vec<Block> = raw
        .iter()
        .zip(&model.prep)
        .map(|(x, &(center, scale))| Block::preprocess(x.view(), center, scale))
        .collect::<Result<_>>()?;
    let result = fit(&blocks, &model.spec)?;

    ensure_out_dir(&args.out)?;
    write_weights(&args.out.join("weights.csv"), &result.weights, &headers)?;
    write_scores(&args.out.join("scores.csv"), &result.scores)?;
    write_text(
        &args.out.join("diagnostics.txt"),
        &diagnostics_text(&result),
    )?;
    manifest.write(&args.out)?;

    Ok(if result.converged { 0 } else { 2 })
}
