use std::path::{Path, PathBuf};

use clap::Args;
use rgcca::{cross_validate, CvAxis, CvGrid, CvParam, CvResult, Error, Result};
use serde::Deserialize;
use toml::value::Value;

use super::{ensure_out_dir, load_model, read_blocks, write_text};
use crate::io::{finish, fmt17, io_err, open_writer, write_record};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Comma-separated list of block data files (CSV with a header row).
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub blocks: Vec<PathBuf>,
    /// Model description file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid file (TOML) with one [[axis]] section per tuned parameter.
    #[arg(long)]
    pub grid: PathBuf,
    /// Number of folds.
    #[arg(long, default_value_t = 7)]
    pub folds: usize,
    /// Index of the response block the other blocks should predict.
    #[arg(long)]
    pub target: usize,
    /// Seed of the fold shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    #[serde(default, rename = "axis")]
    axes: Vec<AxisSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSection {
    target: String,
    block: usize,
    attachment: Option<usize>,
    values: Vec<f64>,
}

fn parse_grid(path: &Path) -> Result<CvGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: GridFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut axes = Vec::with_capacity(file.axes.len());
    for section in &file.axes {
        let param = match section.target.as_str() {
            "omega" => CvParam::Omega {
                block: section.block,
                attachment: section.attachment.unwrap_or(0),
            },
            "l1_radius" => CvParam::L1Radius {
                block: section.block,
            },
            other => {
                return Err(Error::Config {
                    message: format!(
                        "unknown grid target '{other}' (expected omega or l1_radius)"
                    ),
                })
            }
        };
        axes.push(CvAxis {
            param,
            values: section.values.clone(),
        });
    }
    Ok(CvGrid { axes })
}

fn axis_label(param: &CvParam) -> String {
    match param {
        CvParam::Omega { block, attachment } => format!("omega_b{block}_p{attachment}"),
        CvParam::L1Radius { block } => format!("l1_radius_b{block}"),
    }
}

fn write_table(path: &Path, grid: &CvGrid, result: &CvResult) -> Result<()> {
    let mut w = open_writer(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend(grid.axes.iter().map(|a| axis_label(&a.param)));
    header.push("score".to_string());
    header.push("failed".to_string());
    write_record(&mut w, path, &header)?;
    for (idx, cell) in result.cells.iter().enumerate() {
        let mut record = vec![idx.to_string()];
        record.extend(cell.values.iter().map(|&v| fmt17(v)));
        record.push(fmt17(cell.score));
        record.push(cell.failed.to_string());
        write_record(&mut w, path, &record)?;
    }
    finish(w, path)
}

fn write_folds(path: &Path, result: &CvResult) -> Result<()> {
    let mut w = open_writer(path)?;
    write_record(&mut w, path, &["cell", "fold", "score"].map(String::from))?;
    for (idx, cell) in result.cells.iter().enumerate() {
        for (f, &score) in cell.fold_scores.iter().enumerate() {
            write_record(
                &mut w,
                path,
                &[idx.to_string(), f.to_string(), fmt17(score)],
            )?;
        }
    }
    finish(w, path)
}

fn report_text(grid: &CvGrid, result: &CvResult, folds: usize, seed: u64) -> String {
    let mut text = String::new();
    text.push_str(&format!("cells = {}\n", result.cells.len()));
    text.push_str(&format!("folds = {folds}\n"));
    text.push_str(&format!("seed = {seed}\n"));
    text.push_str(&format!("best_cell = {}\n", result.best));
    for (axis, &value) in grid.axes.iter().zip(&result.best_values) {
        text.push_str(&format!(
            "best_{} = {}\n",
            axis_label(&axis.param),
            fmt17(value)
        ));
    }
    text.push_str(&format!(
        "best_score = {}\n",
        fmt17(result.cells[result.best].score)
    ));
    text.push_str(&format!("tied = {}\n", result.tied));
    let failed = result.cells.iter().filter(|c| c.failed).count();
    text.push_str(&format!("failed_cells = {failed}\n"));
    text
}

pub fn run(args: &CvArgs, jobs: usize) -> Result<i32> {
    let mut manifest = Manifest::new("cv", Some(args.seed), jobs);
    for path in &args.blocks {
        manifest.record_input(path)?;
    }
    manifest.record_input(&args.grid)?;

    let (raw, _headers) = read_blocks(&args.blocks)?;
    let widths: Vec<usize> = raw.iter().map(|m| m.ncols()).collect();
    let (model, aux_inputs) = load_model(args.config.as_deref(), None, None, args.seed, &widths)?;
    for path in &aux_inputs {
        manifest.record_input(path)?;
    }
    let grid = parse_grid(&args.grid)?;

    let mut resolved = model.resolved.clone();
    resolved.insert("folds".into(), Value::Integer(args.folds as i64));
    resolved.insert("target".into(), Value::Integer(args.target as i64));
    manifest.set_config(resolved);

    let result = cross_validate(
        &raw,
        &model.prep,
        &model.spec,
        &grid,
        args.target,
        args.folds,
        args.seed,
    )?;

    ensure_out_dir(&args.out)?;
    write_table(&args.out.join("cv_table.csv"), &grid, &result)?;
    write_folds(&args.out.join("cv_folds.csv"), &result)?;
    write_text(
        &args.out.join("report.txt"),
        &report_text(&grid, &result, args.folds, args.seed),
    )?;
    manifest.write(&args.out)?;

    Ok(0)
}
