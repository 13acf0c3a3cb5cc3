//! Model description file: flat TOML with one `[[block]]` section per data
//! block, optional `[design]`, `[solver]` and `[init]` sections, and
//! `[[block.penalty]]` subsections attaching sparsity penalties.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;
use toml::value::{Table, Value};

use rgcca::{
    read_group_file, BlockConstraint, Design, Error, Init, LinearOperator, ModelSpec,
    PenaltyAttachment, Result, Scheme, Tolerances,
};

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub components: Option<usize>,
    pub scheme: Option<String>,
    pub design: Option<DesignSection>,
    pub solver: Option<SolverSection>,
    pub init: Option<InitSection>,
    #[serde(default, rename = "block")]
    pub blocks: Vec<BlockSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub eps_outer: Option<f64>,
    pub eps_inner: Option<f64>,
    pub eps_dykstra0: Option<f64>,
    pub max_iter_outer: Option<usize>,
    pub max_iter_inner: Option<usize>,
    pub max_iter_dykstra: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub method: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSection {
    pub center: Option<bool>,
    pub scale: Option<bool>,
    pub tau: Option<f64>,
    pub l1_radius: Option<f64>,
    pub quad_radius: Option<f64>,
    #[serde(default, rename = "penalty")]
    pub penalties: Vec<PenaltySection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub kind: String,
    pub groups_file: Option<String>,
    pub omega: f64,
    pub mu: f64,
}

fn config_err(message: String) -> Error {
    Error::Config { message }
}

pub fn parse_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::io::io_err(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })
}

/// Everything a command needs after the model file has been resolved against
/// the actual data: the solver spec, per-block preprocessing switches, the
/// fully resolved settings for the manifest and the extra files that were
/// read along the way.
pub struct ResolvedModel {
    pub spec: ModelSpec,
    pub prep: Vec<(bool, bool)>,
    pub resolved: Table,
    pub extra_inputs: Vec<PathBuf>,
}

pub struct ModelOverrides {
    pub design: Option<Array2<f64>>,
    pub components: Option<usize>,
    pub seed: u64,
}

pub fn resolve_model(
    config: &FileConfig,
    config_dir: Option<&Path>,
    widths: &[usize],
    overrides: &ModelOverrides,
) -> Result<ResolvedModel> {
    let n_blocks = widths.len();
    if !config.blocks.is_empty() && config.blocks.len() != n_blocks {
        return Err(config_err(format!(
            "model file describes {} blocks but {} data files were given",
            config.blocks.len(),
            n_blocks
        )));
    }

    let scheme = match config.scheme.as_deref() {
        None | Some("horst") => Scheme::Horst,
        Some("centroid") => Scheme::Centroid,
        Some("factorial") => Scheme::Factorial,
        Some(other) => {
            return Err(config_err(format!(
                "unknown scheme '{other}' (expected horst, centroid or factorial)"
            )))
        }
    };

    let design = match (&overrides.design, &config.design) {
        (Some(matrix), _) => Design::new(matrix.clone())?,
        (None, Some(section)) => {
            let rows = section.matrix.len();
            let flat: Vec<f64> = section.matrix.iter().flatten().copied().collect();
            if section.matrix.iter().any(|r| r.len() != rows) {
                return Err(config_err("design matrix must be square".to_string()));
            }
            let matrix = Array2::from_shape_vec((rows, rows), flat)
                .map_err(|e| config_err(format!("bad design matrix shape: {e}")))?;
            Design::new(matrix)?
        }
        (None, None) => Design::fully_connected(n_blocks),
    };

    let n_components = overrides.components.or(config.components).unwrap_or(1);

    let mut tol = Tolerances::default();
    if let Some(solver) = &config.solver {
        if let Some(v) = solver.eps_outer {
            tol.eps_outer = v;
        }
        if let Some(v) = solver.eps_inner {
            tol.eps_inner = v;
        }
        if let Some(v) = solver.eps_dykstra0 {
            tol.eps_dykstra0 = v;
        }
        if let Some(v) = solver.max_iter_outer {
            tol.max_iter_outer = v;
        }
        if let Some(v) = solver.max_iter_inner {
            tol.max_iter_inner = v;
        }
        if let Some(v) = solver.max_iter_dykstra {
            tol.max_iter_dykstra = v;
        }
    }

    let init = match config.init.as_ref().map(|s| s.method.as_str()) {
        None | Some("singular_vector") => Init::SingularVector,
        Some("ones") => Init::Ones,
        Some("random") => Init::Random {
            seed: overrides.seed,
        },
        Some(other) => {
            return Err(config_err(format!(
                "unknown init method '{other}' (expected singular_vector, ones or random)"
            )))
        }
    };

    let mut constraints = Vec::with_capacity(n_blocks);
    let mut penalties = Vec::with_capacity(n_blocks);
    let mut prep = Vec::with_capacity(n_blocks);
    let mut extra_inputs = Vec::new();
    let mut resolved_blocks = Vec::with_capacity(n_blocks);

    for k in 0..n_blocks {
        let section = config.blocks.get(k);
        let center = section.and_then(|s| s.center).unwrap_or(true);
        let scale = section.and_then(|s| s.scale).unwrap_or(false);
        let constraint = BlockConstraint {
            tau: section.and_then(|s| s.tau).unwrap_or(1.0),
            l1_radius: section.and_then(|s| s.l1_radius),
            quad_radius: section.and_then(|s| s.quad_radius).unwrap_or(1.0),
        };

        let mut attachments = Vec::new();
        let mut resolved_penalties = Vec::new();
        if let Some(section) = section {
            for pen in &section.penalties {
                let operator = match pen.kind.as_str() {
                    "tv" => LinearOperator::tv1d(widths[k])?,
                    "groups" => {
                        let rel = pen.groups_file.as_ref().ok_or_else(|| {
                            config_err(format!(
                                "block {k}: penalty kind 'groups' needs groups_file"
                            ))
                        })?;
                        let path = match config_dir {
                            Some(dir) => dir.join(rel),
                            None => PathBuf::from(rel),
                        };
                        let (groups, weights) = read_group_file(&path)?;
                        extra_inputs.push(path);
                        LinearOperator::group_l12(&groups, Some(&weights), widths[k])?
                    }
                    other => {
                        return Err(config_err(format!(
                            "block {k}: unknown penalty kind '{other}' (expected tv or groups)"
                        )))
                    }
                };
                let mut table = Table::new();
                table.insert("kind".into(), Value::String(pen.kind.clone()));
                if let Some(rel) = &pen.groups_file {
                    table.insert("groups_file".into(), Value::String(rel.clone()));
                }
                table.insert("omega".into(), Value::Float(pen.omega));
                table.insert("mu".into(), Value::Float(pen.mu));
                resolved_penalties.push(Value::Table(table));
                attachments.push(PenaltyAttachment {
                    operator,
                    omega: pen.omega,
                    mu: pen.mu,
                });
            }
        }

        let mut table = Table::new();
        table.insert("center".into(), Value::Boolean(center));
        table.insert("scale".into(), Value::Boolean(scale));
        table.insert("tau".into(), Value::Float(constraint.tau));
        if let Some(s) = constraint.l1_radius {
            table.insert("l1_radius".into(), Value::Float(s));
        }
        table.insert("quad_radius".into(), Value::Float(constraint.quad_radius));
        table.insert("penalty".into(), Value::Array(resolved_penalties));
        resolved_blocks.push(Value::Table(table));

        prep.push((center, scale));
        constraints.push(constraint);
        penalties.push(attachments);
    }

    let mut resolved = Table::new();
    resolved.insert("components".into(), Value::Integer(n_components as i64));
    resolved.insert("scheme".into(), Value::String(scheme.to_string()));
    let design_rows: Vec<Value> = design
        .matrix()
        .rows()
        .into_iter()
        .map(|row| Value::Array(row.iter().map(|&v| Value::Float(v)).collect()))
        .collect();
    let mut design_table = Table::new();
    design_table.insert("matrix".into(), Value::Array(design_rows));
    resolved.insert("design".into(), Value::Table(design_table));
    let mut solver_table = Table::new();
    solver_table.insert("eps_outer".into(), Value::Float(tol.eps_outer));
    solver_table.insert("eps_inner".into(), Value::Float(tol.eps_inner));
    solver_table.insert("eps_dykstra0".into(), Value::Float(tol.eps_dykstra0));
    solver_table.insert(
        "max_iter_outer".into(),
        Value::Integer(tol.max_iter_outer as i64),
    );
    solver_table.insert(
        "max_iter_inner".into(),
        Value::Integer(tol.max_iter_inner as i64),
    );
    solver_table.insert(
        "max_iter_dykstra".into(),
        Value::Integer(tol.max_iter_dykstra as i64),
    );
    resolved.insert("solver".into(), Value::Table(solver_table));
    let mut init_table = Table::new();
    init_table.insert(
        "method".into(),
        Value::String(
            match init {
                Init::SingularVector => "singular_vector",
                Init::Ones => "ones",
                Init::Random { .. } => "random",
                Init::Given(_) => "given",
            }
            .to_string(),
        ),
    );
    resolved.insert("init".into(), Value::Table(init_table));
    resolved.insert("block".into(), Value::Array(resolved_blocks));

    let spec = ModelSpec {
        design,
        constraints,
        penalties,
        n_components,
        scheme,
        tol,
        init,
    };

    Ok(ResolvedModel {
        spec,
        prep,
        resolved,
        extra_inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_overrides() -> ModelOverrides {
        ModelOverrides {
            design: None,
            components: None,
            seed: 0,
        }
    }

    #[test]
    fn an_empty_model_file_resolves_to_plain_defaults() {
        let model = resolve_model(&FileConfig::default(), None, &[3, 4], &no_overrides()).unwrap();
        assert_eq!(model.spec.n_components, 1);
        assert_eq!(model.spec.constraints.len(), 2);
        for constraint in &model.spec.constraints {
            assert_eq!(constraint.tau, 1.0);
            assert!(constraint.l1_radius.is_none());
            assert_eq!(constraint.quad_radius, 1.0);
        }
        assert!(model.spec.penalties.iter().all(Vec::is_empty));
        assert_eq!(model.prep, vec![(true, false); 2]);
        assert_eq!(model.spec.design.matrix()[[0, 1]], 1.0);
    }

    #[test]
    fn block_sections_carry_constraints_and_penalties() {
        let text = "\
components = 2

[[block]]
tau = 0.4
l1_radius = 2.5

[[block.penalty]]
kind = \"tv\"
omega = 0.3
mu = 1e-3

[[block]]
scale = true
";
        let config: FileConfig = toml::from_str(text).unwrap();
        let model = resolve_model(&config, None, &[6, 5], &no_overrides()).unwrap();
        assert_eq!(model.spec.n_components, 2);
        assert_eq!(model.spec.constraints[0].tau, 0.4);
        assert_eq!(model.spec.constraints[0].l1_radius, Some(2.5));
        assert_eq!(model.spec.penalties[0].len(), 1);
        assert_eq!(model.spec.penalties[0][0].omega, 0.3);
        assert_eq!(model.spec.penalties[0][0].mu, 1e-3);
        assert!(model.spec.penalties[1].is_empty());
        assert_eq!(model.prep, vec![(true, false), (true, true)]);
        // The resolved table spells out every default for the manifest.
        assert!(model.resolved.contains_key("solver"));
        assert!(model.resolved.contains_key("design"));
    }

    #[test]
    fn group_files_resolve_relative_to_the_model_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("groups.txt"), "0,1\n2,3\n").unwrap();
        let text = "\
[[block]]

[[block.penalty]]
kind = \"groups\"
groups_file = \"groups.txt\"
omega = 0.1
mu = 1e-4
";
        let config: FileConfig = toml::from_str(text).unwrap();
        let model = resolve_model(&config, Some(dir.path()), &[4], &no_overrides()).unwrap();
        assert_eq!(model.spec.penalties[0].len(), 1);
        assert_eq!(model.extra_inputs, vec![dir.path().join("groups.txt")]);
    }

    #[test]
    fn block_count_mismatch_is_rejected() {
        let config: FileConfig = toml::from_str("[[block]]\ntau = 0.5\n").unwrap();
        match resolve_model(&config, None, &[3, 4], &no_overrides()) {
            Err(Error::Config { message }) => assert!(message.contains("2 data files")),
            _ => panic!("block count mismatch must be a configuration error"),
        }
    }

    #[test]
    fn unknown_names_are_rejected() {
        let config: FileConfig = toml::from_str("scheme = \"ridge\"\n").unwrap();
        assert!(resolve_model(&config, None, &[3], &no_overrides()).is_err());

        let config: FileConfig = toml::from_str("[init]\nmethod = \"zeros\"\n").unwrap();
        assert!(resolve_model(&config, None, &[3], &no_overrides()).is_err());

        assert!(toml::from_str::<FileConfig>("unknown_key = 1\n").is_err());
    }
}
