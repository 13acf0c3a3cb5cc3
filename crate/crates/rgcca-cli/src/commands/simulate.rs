use std::path::PathBuf;

use clap::Args;
use rgcca::{generate, Result, SimSpec};
use toml::value::{Table, Value};

use super::{ensure_out_dir, write_text};
use crate::io::{write_matrix_csv, write_vector_csv};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Seed of the generator; the same seed always produces the same files.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn spec_table(spec: &SimSpec) -> Table {
    let mut table = Table::new();
    table.insert("n".into(), Value::Integer(spec.n as i64));
    table.insert("p1".into(), Value::Integer(spec.true_w1.len() as i64));
    table.insert("p2".into(), Value::Integer(spec.true_w2.len() as i64));
    table.insert("sd_t2".into(), Value::Float(spec.sd_t2));
    table.insert("sd_e1".into(), Value::Float(spec.sd_e1));
    table.insert("sd_e2".into(), Value::Float(spec.sd_e2));
    table.insert("seed".into(), Value::Integer(spec.seed as i64));
    table
}

fn column_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("v{i}")).collect()
}

pub fn run(args: &SimulateArgs, jobs: usize) -> Result<i32> {
    let mut manifest = Manifest::new("simulate", Some(args.seed), jobs);
    let spec = SimSpec::canonical(args.seed);
    let data = generate(&spec)?;

    ensure_out_dir(&args.out)?;
    write_matrix_csv(
        &args.out.join("X1.csv"),
        &data.x1,
        &column_names(data.x1.ncols()),
    )?;
    write_matrix_csv(
        &args.out.join("X2.csv"),
        &data.x2,
        &column_names(data.x2.ncols()),
    )?;
    write_vector_csv(&args.out.join("truth_w1.csv"), &data.truth.w1)?;
    write_vector_csv(&args.out.join("truth_w2.csv"), &data.truth.w2)?;
    let table = spec_table(&spec);
    let text = toml::to_string_pretty(&Value::Table(table.clone())).map_err(|e| {
        rgcca::Error::Config {
            message: format!("could not serialise the generator settings: {e}"),
        }
    })?;
    write_text(&args.out.join("sim_spec.toml"), &text)?;
    manifest.set_config(table);
    manifest.write(&args.out)?;

    Ok(0)
}
