use ndarray::{Array1, Array2};

use crate::block::Block;
use crate::error::{Error, Result};
use crate::penalty::LinearOperator;

/// Symmetric block connection matrix with a zero diagonal.  Entry `(k, j)`
/// weights the covariance between the scores of blocks `k` and `j`; zero
/// means the pair is not linked.
#[derive(Debug, Clone)]
pub struct Design {
    weights: Array2<f64>,
}

impl Design {
    pub fn new(weights: Array2<f64>) -> Result<Design> {
        let (r, c) = weights.dim();
        if r != c || r < 2 {
            return Err(Error::Config {
                message: format!("design matrix must be square with at least two blocks, got {r}x{c}"),
            });
        }
        for k in 0..r {
            if weights[[k, k]] != 0.0 {
                return Err(Error::Config {
                    message: format!("design diagonal entry ({k}, {k}) must be zero"),
                });
            }
            for j in 0..r {
                let v = weights[[k, j]];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Config {
                        message: format!("design entry ({k}, {j}) must be finite and nonnegative, got {v}"),
                    });
                }
                if v != weights[[j, k]] {
                    return Err(Error::Config {
                        message: format!("design matrix is not symmetric at ({k}, {j})"),
                    });
                }
            }
        }
        Ok(Design { weights })
    }

    /// All off-diagonal entries one: every pair of blocks linked.
    pub fn fully_connected(k: usize) -> Design {
        let mut weights = Array2::ones((k, k));
        for i in 0..k {
            weights[[i, i]] = 0.0;
        }
        Design { weights }
    }

    pub fn n_blocks(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, k: usize, j: usize) -> f64 {
        self.weights[[k, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.weights
    }
}

/// Per-block feasible set: an optional l1 ball of radius `l1_radius`
/// intersected with the ellipsoid `w' M w <= quad_radius`, where `M`
/// interpolates between the identity (`tau = 1`) and the sample covariance
/// of the block (`tau = 0`).
#[derive(Debug, Clone)]
pub struct BlockConstraint {
    pub tau: f64,
    pub l1_radius: Option<f64>,
    pub quad_radius: f64,
}

impl Default for BlockConstraint {
    fn default() -> Self {
        BlockConstraint {
            tau: 1.0,
            l1_radius: None,
            quad_radius: 1.0,
        }
    }
}

impl BlockConstraint {
    fn validate(&self, block_idx: usize) -> Result<()> {
        if !self.tau.is_finite() || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config {
                message: format!("block {block_idx}: tau must lie in [0, 1], got {}", self.tau),
            });
        }
        if let Some(s) = self.l1_radius {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::Config {
                    message: format!("block {block_idx}: l1 radius must be positive, got {s}"),
                });
            }
        }
        if !self.quad_radius.is_finite() || self.quad_radius <= 0.0 {
            return Err(Error::Config {
                message: format!(
                    "block {block_idx}: quadratic radius must be positive, got {}",
                    self.quad_radius
                ),
            });
        }
        Ok(())
    }
}

/// A penalty operator attached to one block, with its objective weight and
/// smoothing parameter.
#[derive(Debug, Clone)]
pub struct PenaltyAttachment {
    pub operator: LinearOperator,
    pub omega: f64,
    pub mu: f64,
}

/// Inner weighting scheme of the covariance sum.  Only the identity
/// (`Horst`) scheme is implemented; the other names are recognised so a
/// configuration asking for them gets a targeted error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Horst,
    Centroid,
    Factorial,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Scheme::Horst => "horst",
            Scheme::Centroid => "centroid",
            Scheme::Factorial => "factorial",
        };
        f.write_str(name)
    }
}

/// Stopping tolerances and iteration caps for the solver.
#[derive(Debug, Clone)]
pub struct Tolerances {
    /// Outer (block sweep) stationarity tolerance.
    pub eps_outer: f64,
    /// Inner (per block) proximal-step tolerance.
    pub eps_inner: f64,
    /// Starting tolerance of the alternating-projection loop; it tightens
    /// as the inner iteration counter grows.
    pub eps_dykstra0: f64,
    pub max_iter_outer: usize,
    pub max_iter_inner: usize,
    pub max_iter_dykstra: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_outer: 1e-6,
            eps_inner: 1e-6,
            eps_dykstra0: 1e-3,
            max_iter_outer: 500,
            max_iter_inner: 5000,
            max_iter_dykstra: 10_000,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_outer", self.eps_outer),
            ("eps_inner", self.eps_inner),
            ("eps_dykstra0", self.eps_dykstra0),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config {
                    message: format!("{name} must be positive, got {v}"),
                });
            }
        }
        for (name, v) in [
            ("max_iter_outer", self.max_iter_outer),
            ("max_iter_inner", self.max_iter_inner),
            ("max_iter_dykstra", self.max_iter_dykstra),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    message: format!("{name} must be at least 1"),
                });
            }
        }
        Ok(())
    }
}

/// How the solver seeds the weight vectors before the first sweep.  Every
/// choice is projected onto the feasible set before use.
#[derive(Debug, Clone)]
pub enum Init {
    /// Top right singular vector of each processed block, sign-fixed so the
    /// entry of largest magnitude is positive.  Deterministic default.
    SingularVector,
    /// Constant vector `1/sqrt(p)`.
    Ones,
    /// Standard normal draws from a seeded generator.
    Random { seed: u64 },
    /// Caller-supplied start, one vector per block.
    Given(Vec<Array1<f64>>),
}

/// Full description of one fit: design, constraints, penalties and solver
/// settings.  `validate` checks it against the actual blocks before any
/// numeric work starts.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub design: Design,
    pub constraints: Vec<BlockConstraint>,
    pub penalties: Vec<Vec<PenaltyAttachment>>,
    pub n_components: usize,
    pub scheme: Scheme,
    pub tol: Tolerances,
    pub init: Init,
}

impl ModelSpec {
    /// A spec with default constraints (`tau = 1`, no l1 ball), no
    /// penalties and a fully connected design.
    pub fn plain(n_blocks: usize, n_components: usize) -> ModelSpec {
        ModelSpec {
            design: Design::fully_connected(n_blocks),
            constraints: vec![BlockConstraint::default(); n_blocks],
            penalties: vec![Vec::new(); n_blocks],
            n_components,
            scheme: Scheme::Horst,
            tol: Tolerances::default(),
            init: Init::SingularVector,
        }
    }

    pub fn validate(&self, blocks: &[Block]) -> Result<()> {
        if self.scheme != Scheme::Horst {
            return Err(Error::UnsupportedScheme {
                requested: self.scheme.to_string(),
            });
        }
        let k = blocks.len();
        if k < 2 {
            return Err(Error::Config {
                message: format!("need at least two blocks, got {k}"),
            });
        }
        if self.design.n_blocks() != k {
            return Err(Error::Config {
                message: format!(
                    "design is for {} blocks but {k} were supplied",
                    self.design.n_blocks()
                ),
            });
        }
        let n = blocks[0].n();
        for (i, b) in blocks.iter().enumerate() {
            if b.n() != n {
                return Err(Error::RowMismatch {
                    block: i,
                    expected: n,
                    found: b.n(),
                });
            }
        }
        if self.constraints.len() != k {
            return Err(Error::Config {
                message: format!("{} constraint entries for {k} blocks", self.constraints.len()),
            });
        }
        for (i, c) in self.constraints.iter().enumerate() {
            c.validate(i)?;
            if c.tau == 0.0 && blocks[i].svd().sigma.iter().all(|s| *s == 0.0) {
                return Err(Error::ZeroConstraintMatrix { block: i });
            }
        }
        if self.penalties.len() != k {
            return Err(Error::Config {
                message: format!("{} penalty entries for {k} blocks", self.penalties.len()),
            });
        }
        for (i, attachments) in self.penalties.iter().enumerate() {
            for att in attachments {
                if att.operator.n_cols() != blocks[i].p() {
                    return Err(Error::Shape {
                        message: format!(
                            "block {i}: penalty operator acts on {} variables, block has {}",
                            att.operator.n_cols(),
                            blocks[i].p()
                        ),
                    });
                }
                if !att.omega.is_finite() || att.omega <= 0.0 {
                    return Err(Error::Config {
                        message: format!("block {i}: penalty weight must be positive, got {}", att.omega),
                    });
                }
                if !att.mu.is_finite() || att.mu <= 0.0 {
                    return Err(Error::Config {
                        message: format!("block {i}: smoothing parameter must be positive, got {}", att.mu),
                    });
                }
            }
        }
        let max_components = blocks.iter().map(|b| b.n().min(b.p())).min().unwrap();
        if self.n_components == 0 || self.n_components > max_components {
            return Err(Error::Config {
                message: format!(
                    "n_components must lie in 1..={max_components}, got {}",
                    self.n_components
                ),
            });
        }
        self.tol.validate()?;
        if let Init::Given(starts) = &self.init {
            if starts.len() != k {
                return Err(Error::Config {
                    message: format!("{} start vectors for {k} blocks", starts.len()),
                });
            }
            for (i, w) in starts.iter().enumerate() {
                if w.len() != blocks[i].p() {
                    return Err(Error::Shape {
                        message: format!(
                            "start vector for block {i} has length {}, block has {} variables",
                            w.len(),
                            blocks[i].p()
                        ),
                    });
                }
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("start vector for block {i}"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_blocks() -> Vec<Block> {
        let x1 = array![[1.0, 2.0, 0.5], [0.0, -1.0, 1.5], [2.0, 0.3, -0.7], [1.1, 0.9, 0.2]];
        let x2 = array![[0.2, -0.4], [1.0, 0.8], [-0.6, 0.1], [0.3, 0.3]];
        vec![
            Block::preprocess(x1.view(), true, false).unwrap(),
            Block::preprocess(x2.view(), true, false).unwrap(),
        ]
    }

    #[test]
    fn plain_spec_validates() {
        let blocks = two_blocks();
        ModelSpec::plain(2, 1).validate(&blocks).unwrap();
    }

    #[test]
    fn non_horst_schemes_are_rejected() {
        let blocks = two_blocks();
        let mut spec = ModelSpec::plain(2, 1);
        spec.scheme = Scheme::Centroid;
        let err = spec.validate(&blocks).unwrap_err();
        assert!(matches!(err, Error::UnsupportedScheme { .. }));
    }

    #[test]
    fn design_checks_symmetry_and_diagonal() {
        assert!(Design::new(array![[0.0, 1.0], [0.5, 0.0]]).is_err());
        assert!(Design::new(array![[1.0, 1.0], [1.0, 0.0]]).is_err());
        assert!(Design::new(array![[0.0, -1.0], [-1.0, 0.0]]).is_err());
        assert!(Design::new(array![[0.0, 2.0], [2.0, 0.0]]).is_ok());
    }

    #[test]
    fn bad_tau_and_radii_are_rejected() {
        let blocks = two_blocks();
        let mut spec = ModelSpec::plain(2, 1);
        spec.constraints[0].tau = 1.5;
        assert!(spec.validate(&blocks).is_err());
        spec.constraints[0].tau = 0.5;
        spec.constraints[0].l1_radius = Some(0.0);
        assert!(spec.validate(&blocks).is_err());
        spec.constraints[0].l1_radius = Some(2.0);
        spec.constraints[1].quad_radius = -1.0;
        assert!(spec.validate(&blocks).is_err());
    }

    #[test]
    fn component_count_is_bounded_by_block_size() {
        let blocks = two_blocks();
        let mut spec = ModelSpec::plain(2, 1);
        spec.n_components = 3;
        assert!(spec.validate(&blocks).is_err());
        spec.n_components = 2;
        assert!(spec.validate(&blocks).is_ok());
    }

    #[test]
    fn mismatched_rows_are_rejected() {
        let x1 = array![[1.0, 2.0], [0.0, -1.0], [2.0, 0.3]];
        let x2 = array![[0.2, -0.4], [1.0, 0.8]];
        let blocks = vec![
            Block::preprocess(x1.view(), true, false).unwrap(),
            Block::preprocess(x2.view(), true, false).unwrap(),
        ];
        let err = ModelSpec::plain(2, 1).validate(&blocks).unwrap_err();
        assert!(matches!(err, Error::RowMismatch { .. }));
    }
}
