pub mod bootstrap;
pub mod cv;
pub mod fit;
pub mod project;
pub mod simulate;

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rgcca::{read_matrix_csv, Result};

use crate::config::{parse_file, resolve_model, FileConfig, ModelOverrides, ResolvedModel};
use crate::io::io_err;

/// Read the per-block data files named on the command line.
pub fn read_blocks(paths: &[PathBuf]) -> Result<(Vec<Array2<f64>>, Vec<Vec<String>>)> {
    let mut raw = Vec::with_capacity(paths.len());
    let mut headers = Vec::with_capacity(paths.len());
    for path in paths {
        let (matrix, names) = read_matrix_csv(path)?;
        raw.push(matrix);
        headers.push(names);
    }
    Ok((raw, headers))
}

/// Resolve the model description against the loaded data.  Returns the
/// resolved model plus every auxiliary file that was read (model file,
/// design file, group files), so the manifest can record their hashes.
pub fn load_model(
    config: Option<&Path>,
    design_file: Option<&Path>,
    components: Option<usize>,
    seed: u64,
    widths: &[usize],
) -> Result<(ResolvedModel, Vec<PathBuf>)> {
    let mut inputs = Vec::new();
    let (file_config, config_dir) = match config {
        Some(path) => {
            inputs.push(path.to_path_buf());
            (parse_file(path)?, path.parent().map(Path::to_path_buf))
        }
        None => (FileConfig::default(), None),
    };
    let design = match design_file {
        Some(path) => {
            inputs.push(path.to_path_buf());
            let (matrix, _) = read_matrix_csv(path)?;
            Some(matrix)
        }
        None => None,
    };
    let overrides = ModelOverrides {
        design,
        components,
        seed,
    };
    let resolved = resolve_model(&file_config, config_dir.as_deref(), widths, &overrides)?;
    inputs.extend(resolved.extra_inputs.iter().cloned());
    Ok((resolved, inputs))
}

pub fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
