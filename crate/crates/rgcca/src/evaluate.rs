//! Model evaluation: inner-relation regression between block scores,
//! held-out prediction quality, grid search by cross-validation and
//! bootstrap selection stability.

use ndarray::{Array1, Array2, ArrayView2, Axis, s};
use ndarray_linalg::{JobSvd, SVDDC};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::block::Block;
use crate::config::ModelSpec;
use crate::error::{Error, Result};
use crate::solver;

/// Least-squares slope of `t_j` on `t_k` through the origin.
pub fn inner_coeff(t_k: &Array1<f64>, t_j: &Array1<f64>) -> Result<f64> {
    if t_k.len() != t_j.len() {
        return Err(Error::Shape {
            message: format!("score lengths differ: {} vs {}", t_k.len(), t_j.len()),
        });
    }
    let denom = t_k.dot(t_k);
    if denom == 0.0 {
        return Err(Error::Evaluation {
            context: "inner relation".into(),
            message: "source scores are identically zero".into(),
        });
    }
    Ok(t_k.dot(t_j) / denom)
}

/// Everything needed to predict one block from another's scores: the
/// source scores the regression is solved on, the target scores it maps
/// to, and the target weights that lift scores back to variables.
#[derive(Debug, Clone)]
pub struct PredictionModel {
    /// `n x A` scores of the predictor block.
    pub t_source: Array2<f64>,
    /// `n x A` scores of the predicted block.
    pub t_target: Array2<f64>,
    /// `p_j x A` weights of the predicted block.
    pub w_target: Array2<f64>,
}

/// Minimum-norm solution of `T_s B = T_t` through an SVD with a spectral
/// cutoff.  The boolean reports whether the cutoff actually dropped
/// directions (rank-deficient source scores).
fn solve_regression(t_s: &Array2<f64>, t_t: &Array2<f64>) -> Result<(Array2<f64>, bool)> {
    let (u, sigma, vt) = t_s
        .svddc(JobSvd::Some)
        .map_err(|e| Error::Svd(e.to_string()))?;
    let u = u.ok_or_else(|| Error::Svd("missing left factor".into()))?;
    let vt = vt.ok_or_else(|| Error::Svd("missing right factor".into()))?;
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = smax * t_s.nrows().max(t_s.ncols()) as f64 * f64::EPSILON;
    let mut rank_deficient = false;
    let mut inv = Array1::zeros(sigma.len());
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            inv[i] = 1.0 / s;
        } else {
            rank_deficient = true;
        }
    }
    // B = V S^+ U' T_t
    let mut ut_tt = u.t().dot(t_t);
    for (mut row, &iv) in ut_tt.rows_mut().into_iter().zip(inv.iter()) {
        row *= iv;
    }
    Ok((vt.t().dot(&ut_tt), rank_deficient))
}

/// Predict the target block on the variable scale:
/// `X_hat = T_s (T_s' T_s)^{-1} T_s' T_t W_t'`, with a pseudo-inverse when
/// the source scores are rank deficient.  Returns the prediction and a
/// flag for the pseudo-inverse path.
pub fn predict_block(model: &PredictionModel) -> Result<(Array2<f64>, bool)> {
    let n = model.t_source.nrows();
    if model.t_target.nrows() != n {
        return Err(Error::Shape {
            message: "source and target scores have different row counts".into(),
        });
    }
    if model.t_target.ncols() != model.w_target.ncols() {
        return Err(Error::Shape {
            message: "target scores and weights disagree on the component count".into(),
        });
    }
    let (b, rank_deficient) = solve_regression(&model.t_source, &model.t_target)?;
    let t_hat = model.t_source.dot(&b);
    Ok((t_hat.dot(&model.w_target.t()), rank_deficient))
}

/// Fraction of squared norm explained: `1 - ||X_hat - X||^2 / ||X||^2`.
pub fn r2_pred(x_hat: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<f64> {
    if x_hat.dim() != x.dim() {
        return Err(Error::Shape {
            message: format!("prediction is {:?}, data is {:?}", x_hat.dim(), x.dim()),
        });
    }
    let denom: f64 = x.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::Evaluation {
            context: "prediction quality".into(),
            message: "reference block has zero norm".into(),
        });
    }
    let num: f64 = x_hat
        .iter()
        .zip(x.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - num / denom)
}

/// Row-wise argmax over dummy-coded class columns; ties resolve to the
/// lowest column index.
pub fn classify_from_dummy(x_hat: ArrayView2<f64>) -> Vec<usize> {
    x_hat
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// One tunable quantity in a grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CvParam {
    /// Objective weight of one penalty attachment.
    Omega { block: usize, attachment: usize },
    /// Radius of one block's l1 ball.
    L1Radius { block: usize },
}

#[derive(Debug, Clone)]
pub struct CvAxis {
    pub param: CvParam,
    pub values: Vec<f64>,
}

/// Cartesian grid over penalty weights and l1 radii.
#[derive(Debug, Clone)]
pub struct CvGrid {
    pub axes: Vec<CvAxis>,
}

impl CvGrid {
    fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product::<usize>().max(1)
    }

    /// Values of cell `idx` in row-major order (first axis slowest).
    fn cell_values(&self, idx: usize) -> Vec<f64> {
        let mut values = vec![0.0; self.axes.len()];
        let mut rem = idx;
        for (a, axis) in self.axes.iter().enumerate().rev() {
            let m = axis.values.len();
            values[a] = axis.values[rem % m];
            rem /= m;
        }
        values
    }

    fn apply(&self, spec: &ModelSpec, values: &[f64]) -> ModelSpec {
        let mut out = spec.clone();
        for (axis, &v) in self.axes.iter().zip(values) {
            match axis.param {
                CvParam::Omega { block, attachment } => {
                    out.penalties[block][attachment].omega = v;
                }
                CvParam::L1Radius { block } => {
                    out.constraints[block].l1_radius = Some(v);
                }
            }
        }
        out
    }

    fn validate(&self, spec: &ModelSpec) -> Result<()> {
        for axis in &self.axes {
            if axis.values.is_empty() {
                return Err(Error::Config {
                    message: "grid axis has no values".into(),
                });
            }
            if axis.values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::Config {
                    message: "grid values must be positive and finite".into(),
                });
            }
            match axis.param {
                CvParam::Omega { block, attachment } => {
                    if block >= spec.penalties.len() || attachment >= spec.penalties[block].len() {
                        return Err(Error::Config {
                            message: format!(
                                "grid axis targets penalty {attachment} of block {block}, which does not exist"
                            ),
                        });
                    }
                }
                CvParam::L1Radius { block } => {
                    if block >= spec.constraints.len() {
                        return Err(Error::Config {
                            message: format!("grid axis targets block {block}, which does not exist"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Score and status of one grid cell.
#[derive(Debug, Clone)]
pub struct CvCell {
    pub values: Vec<f64>,
    /// Mean over folds of the product of held-out prediction scores;
    /// `-inf` when any fold failed.
    pub score: f64,
    pub fold_scores: Vec<f64>,
    pub failed: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub cells: Vec<CvCell>,
    /// Index of the winning cell; ties resolve to the smallest index.
    pub best: usize,
    pub best_values: Vec<f64>,
    pub tied: bool,
}

/// Per-block preprocessing request: `(center, scale)`.
pub type PrepFlags = (bool, bool);

fn build_blocks(raw: &[Array2<f64>], prep: &[PrepFlags]) -> Result<Vec<Block>> {
    raw.iter()
        .zip(prep)
        .map(|(x, &(center, scale))| Block::preprocess(x.view(), center, scale))
        .collect()
}

/// Predictor blocks for `response`: every other block the design links to
/// it with positive weight.
fn predictors(spec: &ModelSpec, response: usize) -> Vec<usize> {
    (0..spec.design.n_blocks())
        .filter(|&k| k != response && spec.design.weight(k, response) > 0.0)
        .collect()
}

/// Fit on the training rows, score on the held-out rows: product over
/// predictor blocks of the held-out prediction quality for the response.
fn holdout_score(
    raw: &[Array2<f64>],
    prep: &[PrepFlags],
    spec: &ModelSpec,
    response: usize,
    train_idx: &[usize],
    val_idx: &[usize],
) -> Result<f64> {
    let train: Vec<Array2<f64>> = raw.iter().map(|x| x.select(Axis(0), train_idx)).collect();
    let val: Vec<Array2<f64>> = raw.iter().map(|x| x.select(Axis(0), val_idx)).collect();

    let blocks = build_blocks(&train, prep)?;
    let fitted = solver::fit(&blocks, spec)?;

    // Processed validation rows, train statistics.
    let val_proc: Vec<Array2<f64>> = blocks
        .iter()
        .zip(&val)
        .map(|(b, v)| b.preprocessing().apply(v.view()))
        .collect::<Result<_>>()?;
    let val_scores: Vec<Array2<f64>> = val_proc
        .iter()
        .zip(&fitted.weights)
        .map(|(x, w)| x.dot(w))
        .collect();

    let mut product = 1.0;
    for &k in &predictors(spec, response) {
        let (b, _) = solve_regression(&fitted.scores[k], &fitted.scores[response])?;
        let t_hat = val_scores[k].dot(&b);
        let x_hat = t_hat.dot(&fitted.weights[response].t());
        product *= r2_pred(x_hat.view(), val_proc[response].view())?;
    }
    Ok(product)
}

/// Grid search by k-fold cross-validation.
///
/// Rows are shuffled once with the given seed, then cut into contiguous
/// folds.  Every cell is scored with the same folds; a cell whose fit
/// fails on any fold scores `-inf` and is flagged instead of aborting the
/// search.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    raw: &[Array2<f64>],
    prep: &[PrepFlags],
    template: &ModelSpec,
    grid: &CvGrid,
    response: usize,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if raw.is_empty() || raw.len() != prep.len() {
        return Err(Error::Config {
            message: "need one preprocessing entry per block".into(),
        });
    }
    let n = raw[0].nrows();
    if folds < 2 || folds > n {
        return Err(Error::Config {
            message: format!("folds must lie in 2..={n}, got {folds}"),
        });
    }
    if response >= raw.len() {
        return Err(Error::Config {
            message: format!("response block {response} does not exist"),
        });
    }
    grid.validate(template)?;
    if predictors(template, response).is_empty() {
        return Err(Error::Config {
            message: format!("no predictor blocks are linked to block {response}"),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n / folds;
    let rem = n % folds;
    let mut fold_ranges = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < rem);
        fold_ranges.push(start..start + len);
        start += len;
    }

    let cells: Vec<CvCell> = (0..grid.n_cells())
        .into_par_iter()
        .map(|idx| {
            let values = grid.cell_values(idx);
            let spec = grid.apply(template, &values);
            let mut fold_scores = Vec::with_capacity(folds);
            let mut failure: Option<String> = None;
            for range in &fold_ranges {
                let val_idx: Vec<usize> = order[range.clone()].to_vec();
                let train_idx: Vec<usize> = order[..range.start]
                    .iter()
                    .chain(&order[range.end..])
                    .copied()
                    .collect();
                match holdout_score(raw, prep, &spec, response, &train_idx, &val_idx) {
                    Ok(s) => fold_scores.push(s),
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            match failure {
                Some(message) => CvCell {
                    values,
                    score: f64::NEG_INFINITY,
                    fold_scores,
                    failed: true,
                    message: Some(message),
                },
                None => {
                    let score = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
                    CvCell {
                        values,
                        score,
                        fold_scores,
                        failed: false,
                        message: None,
                    }
                }
            }
        })
        .collect();

    let mut best = 0;
    let mut tied = false;
    for (i, cell) in cells.iter().enumerate().skip(1) {
        if cell.score > cells[best].score {
            best = i;
            tied = false;
        } else if cell.score == cells[best].score && cell.score.is_finite() {
            tied = true;
        }
    }
    if cells[best].failed {
        return Err(Error::Evaluation {
            context: "cross-validation".into(),
            message: "every grid cell failed".into(),
        });
    }
    let best_values = cells[best].values.clone();
    Ok(CvResult {
        cells,
        best,
        best_values,
        tied,
    })
}

/// Selection stability across bootstrap resamples.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rounds: usize,
    pub successful: usize,
    /// Per block: `p_k x A` counts of rounds where the variable was
    /// selected in that component.
    pub selection_counts: Vec<Array2<usize>>,
    /// Per block and component: agreement of selections across rounds.
    pub kappa: Vec<Vec<f64>>,
    pub threshold: f64,
}

/// Refit the model on row resamples drawn with replacement and measure how
/// consistently each variable is selected, where selection means a weight
/// magnitude above `threshold`.  Rounds whose resample cannot be fitted
/// are dropped and counted, not fatal.
pub fn bootstrap_stability(
    raw: &[Array2<f64>],
    prep: &[PrepFlags],
    spec: &ModelSpec,
    rounds: usize,
    seed: u64,
    threshold: f64,
) -> Result<StabilityReport> {
    if rounds < 2 {
        return Err(Error::Config {
            message: format!("bootstrap needs at least 2 rounds, got {rounds}"),
        });
    }
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::Config {
            message: format!("selection threshold must be nonnegative, got {threshold}"),
        });
    }
    if raw.is_empty() || raw.len() != prep.len() {
        return Err(Error::Config {
            message: "need one preprocessing entry per block".into(),
        });
    }
    let n = raw[0].nrows();
    let a_total = spec.n_components;

    let fits: Vec<Option<Vec<Array2<bool>>>> = (0..rounds)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let resampled: Vec<Array2<f64>> =
                raw.iter().map(|x| x.select(Axis(0), &idx)).collect();
            let blocks = match build_blocks(&resampled, prep) {
                Ok(b) => b,
                Err(_) => return None,
            };
            match solver::fit(&blocks, spec) {
                Ok(fit) => Some(
                    fit.weights
                        .iter()
                        .map(|w| w.mapv(|v| v.abs() > threshold))
                        .collect(),
                ),
                Err(_) => None,
            }
        })
        .collect();

    let successful = fits.iter().filter(|f| f.is_some()).count();
    if successful < 2 {
        return Err(Error::Evaluation {
            context: "bootstrap stability".into(),
            message: format!("only {successful} of {rounds} rounds could be fitted"),
        });
    }

    let mut selection_counts: Vec<Array2<usize>> = raw
        .iter()
        .map(|x| Array2::zeros((x.ncols(), a_total)))
        .collect();
    for selected in fits.iter().flatten() {
        for (counts, sel) in selection_counts.iter_mut().zip(selected) {
            for ((i, a), &flag) in sel.indexed_iter() {
                if flag {
                    counts[[i, a]] += 1;
                }
            }
        }
    }

    let kappa = selection_counts
        .iter()
        .map(|counts| {
            (0..a_total)
                .map(|a| {
                    let col: Vec<usize> = counts.slice(s![.., a]).to_vec();
                    fleiss_kappa(&col, successful)
                })
                .collect()
        })
        .collect();

    Ok(StabilityReport {
        rounds,
        successful,
        selection_counts,
        kappa,
        threshold,
    })
}

/// Chance-corrected agreement of `raters` binary ratings per item, where
/// `selected[i]` counts the raters who marked item `i`.
///
/// When the marginal distribution is degenerate (every rating in one
/// category) observed and expected agreement are both one; that limit is
/// defined as perfect agreement.
pub fn fleiss_kappa(selected: &[usize], raters: usize) -> f64 {
    assert!(raters >= 2, "kappa needs at least two raters");
    let n_items = selected.len();
    assert!(n_items > 0, "kappa needs at least one item");
    let b = raters as f64;

    let mut p_bar = 0.0;
    let mut total_selected = 0.0;
    for &s in selected {
        assert!(s <= raters, "item selected by more raters than exist");
        let s1 = s as f64;
        let s0 = b - s1;
        p_bar += (s1 * s1 + s0 * s0 - b) / (b * (b - 1.0));
        total_selected += s1;
    }
    p_bar /= n_items as f64;

    let p1 = total_selected / (b * n_items as f64);
    let p0 = 1.0 - p1;
    let pe = p1 * p1 + p0 * p0;

    if 1.0 - pe <= f64::EPSILON {
        return 1.0;
    }
    (p_bar - pe) / (1.0 - pe)
}
