use std::path::PathBuf;

use clap::Args;
use rgcca::{
    project_l1, project_w, read_matrix_csv, Block, BlockConstraint, EllipsoidSpec, Error,
    ProjectionReport, Result,
};
use toml::value::{Table, Value};

use super::{ensure_out_dir, write_text};
use crate::io::{read_vector_csv, write_vector_csv};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Vector file to project (single `value` column).
    pub vector: PathBuf,
    /// Radius of the l1 ball.
    #[arg(long)]
    pub s: Option<f64>,
    /// Data file whose covariance shapes the quadratic constraint; the
    /// matrix is used as given, without centering or scaling.
    #[arg(long)]
    pub block: Option<PathBuf>,
    /// Shrinkage of the quadratic constraint towards the identity.
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Right-hand side of the quadratic constraint.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Tolerance of the alternating projection onto the intersection.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn report_table(report: &ProjectionReport) -> Table {
    let mut table = Table::new();
    table.insert(
        "iterations".into(),
        Value::Integer(report.iterations as i64),
    );
    table.insert("residual".into(), Value::Float(report.residual));
    table.insert("converged".into(), Value::Boolean(report.converged));
    table.insert("l1_active".into(), Value::Boolean(report.l1_active));
    table.insert("quad_active".into(), Value::Boolean(report.quad_active));
    table
}

pub fn run(args: &ProjectArgs, jobs: usize) -> Result<i32> {
    let mut manifest = Manifest::new("project", None, jobs);
    manifest.record_input(&args.vector)?;
    let x = read_vector_csv(&args.vector)?;

    let report = match (&args.block, args.s) {
        (None, None) => {
            return Err(Error::Config {
                message: "nothing to project onto: give --s, --block or both".into(),
            })
        }
        (None, Some(s)) => {
            if s <= 0.0 || s.is_nan() {
                return Err(Error::Config {
                    message: format!("l1 radius must be positive, got {s}"),
                });
            }
            let point = project_l1(x.view(), s);
            let l1: f64 = point.iter().map(|v| v.abs()).sum();
            ProjectionReport {
                l1_active: l1 >= s - 1e-8 * s.max(1.0),
                quad_active: false,
                point,
                iterations: 1,
                residual: 0.0,
                converged: true,
            }
        }
        (Some(block_path), s) => {
            manifest.record_input(block_path)?;
            let (data, _) = read_matrix_csv(block_path)?;
            if data.ncols() != x.len() {
                return Err(Error::Shape {
                    message: format!(
                        "vector has {} entries but the data file has {} columns",
                        x.len(),
                        data.ncols()
                    ),
                });
            }
            let block = Block::preprocess(data.view(), false, false)?;
            let constraint = BlockConstraint {
                tau: args.tau,
                l1_radius: s,
                quad_radius: args.c,
            };
            let ellipsoid = EllipsoidSpec::new(&block, &constraint, 0)?;
            project_w(x.view(), &constraint, &ellipsoid, args.eps, 10_000)?
        }
    };

    let mut config = Table::new();
    if let Some(s) = args.s {
        config.insert("s".into(), Value::Float(s));
    }
    if let Some(path) = &args.block {
        config.insert("block".into(), Value::String(path.display().to_string()));
        config.insert("tau".into(), Value::Float(args.tau));
        config.insert("c".into(), Value::Float(args.c));
        config.insert("eps".into(), Value::Float(args.eps));
    }
    manifest.set_config(config);

    ensure_out_dir(&args.out)?;
    write_vector_csv(&args.out.join("projected.csv"), &report.point)?;
    let table = report_table(&report);
    let text =
        toml::to_string_pretty(&Value::Table(table)).map_err(|e| Error::Config {
            message: format!("could not serialise the projection report: {e}"),
        })?;
    write_text(&args.out.join("report.txt"), &text)?;
    manifest.write(&args.out)?;

    Ok(if report.converged { 0 } else { 2 })
}
