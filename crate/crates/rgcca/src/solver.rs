//! Block relaxation over the weight vectors: each sweep runs an
//! accelerated proximal-gradient loop per block while the others stay
//! fixed, with projections onto the feasible set at every step.  The
//! covariance part is linear in the active block, so each inner problem is
//! a smoothed-penalty minimisation over a convex set.

use ndarray::{Array1, Array2};

use crate::block::Block;
use crate::config::{Design, Init, ModelSpec, PenaltyAttachment, Tolerances};
use crate::error::{Error, Result};
use crate::objective::{gradient_phi, objective};
use crate::project::{project_w, EllipsoidSpec};

/// Hard floor of the projection tolerance schedule.
const DYKSTRA_EPS_FLOOR: f64 = 1e-12;
/// Largest number of halvings the backtracking fallback will try.
const BACKTRACK_MAX: usize = 60;

/// Mutable solver bookkeeping for one component fit.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub weights: Vec<Array1<f64>>,
    /// Cumulative inner iterations per block; drives the projection
    /// tolerance schedule.
    pub inner_counts: Vec<usize>,
    pub sweeps: usize,
    pub objective_trace: Vec<f64>,
}

/// Per-component convergence report.
#[derive(Debug, Clone)]
pub struct ComponentDiagnostics {
    pub sweeps: usize,
    pub converged: bool,
    /// Objective value at the start and after each sweep.
    pub objective_trace: Vec<f64>,
    /// Final stationarity measure per block (gradient-map norm).
    pub gradient_map_norms: Vec<f64>,
    /// Total inner iterations spent per block.
    pub inner_iterations: Vec<usize>,
    /// Projections that hit the alternating-projection iteration cap.
    pub capped_projections: usize,
}

/// Weights, scores and diagnostics for a full multi-component fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Per block: `p_k x n_components` weight matrix.
    pub weights: Vec<Array2<f64>>,
    /// Per block: `n x n_components` scores of the undeflated data.
    pub scores: Vec<Array2<f64>>,
    pub components: Vec<ComponentDiagnostics>,
    pub converged: bool,
}

fn dykstra_eps(tol: &Tolerances, i: usize) -> f64 {
    let i = i.max(1) as f64;
    (tol.eps_dykstra0 * i.powi(-5)).max(DYKSTRA_EPS_FLOOR)
}

/// Inverse Lipschitz step for block `k`: `1 / sum(omega * ||A||^2 / mu)`
/// over the block's penalties.  Without penalties the smooth part has a
/// vanishing curvature bound, so a backtracking search from `t = 1` picks
/// the step; the covariance term is linear in `w_k`, which makes the
/// sufficient-decrease test accept immediately.
pub fn step_size(
    k: usize,
    blocks: &[Block],
    design: &Design,
    weights: &[Array1<f64>],
    penalties: &[Vec<PenaltyAttachment>],
) -> f64 {
    let total: f64 = penalties[k]
        .iter()
        .map(|att| att.omega * att.operator.lipschitz(att.mu))
        .sum();
    if total > 0.0 {
        return 1.0 / total;
    }

    let g = gradient_phi(blocks, design, weights, k);
    let w = &weights[k];
    let fw = g.dot(w);
    let mut t = 1.0;
    for _ in 0..BACKTRACK_MAX {
        let cand = w - &(&g * t);
        let f_cand = g.dot(&cand);
        let diff = &cand - w;
        let quad = fw + g.dot(&diff) + diff.dot(&diff) / (2.0 * t);
        if f_cand <= quad + 1e-12 * quad.abs().max(1.0) {
            break;
        }
        t *= 0.5;
    }
    t
}

struct BlockUpdate {
    w: Array1<f64>,
    inner_used: usize,
    capped: usize,
}

/// One accelerated proximal-gradient run for a single block.
///
/// `linear` is the gradient of the covariance part, constant while the
/// other blocks are frozen.  Returns the trajectory point with the lowest
/// surrogate value (the momentum steps are not monotone on their own), so
/// the block update never increases the objective.
#[allow(clippy::too_many_arguments)]
fn fista_block(
    w0: &Array1<f64>,
    linear: &Array1<f64>,
    attachments: &[PenaltyAttachment],
    constraint: &crate::config::BlockConstraint,
    ellipsoid: &EllipsoidSpec<'_>,
    t: f64,
    tol: &Tolerances,
    inner_count: &mut usize,
) -> Result<BlockUpdate> {
    let surrogate = |w: &Array1<f64>| -> f64 {
        let mut h = linear.dot(w);
        for att in attachments {
            h += att.omega * att.operator.smoothed_value(w.view(), att.mu);
        }
        h
    };

    let mut w_cur = w0.clone();
    let mut y = w0.clone();
    let mut w_best = w0.clone();
    let mut h_best = surrogate(w0);
    let mut capped = 0;
    let mut used = 0;

    for s in 1..=tol.max_iter_inner {
        *inner_count += 1;
        used = s;

        let mut grad = linear.clone();
        for att in attachments {
            let alpha = att.operator.alpha_star(y.view(), att.mu);
            att.operator
                .accumulate_transpose(alpha.values.view(), att.omega, &mut grad);
        }

        let z = &y - &(&grad * t);
        let eps = dykstra_eps(tol, *inner_count);
        let report = project_w(z.view(), constraint, ellipsoid, eps, tol.max_iter_dykstra)?;
        if !report.converged {
            capped += 1;
        }
        let w_new = report.point;

        let h_new = surrogate(&w_new);
        if h_new < h_best {
            h_best = h_new;
            w_best = w_new.clone();
        }

        let diff = &w_new - &y;
        let moved = diff.dot(&diff).sqrt();

        let beta = (s as f64 - 1.0) / (s as f64 + 2.0);
        y = &w_new + &((&w_new - &w_cur) * beta);
        w_cur = w_new;

        if moved <= t * tol.eps_inner {
            break;
        }
    }

    Ok(BlockUpdate {
        w: w_best,
        inner_used: used,
        capped,
    })
}

/// Stationarity measure at the current point: the scaled difference
/// between `w_k` and one projected gradient step from it.  Returns the map
/// vector and its norm.
pub fn gradient_map(
    k: usize,
    blocks: &[Block],
    weights: &[Array1<f64>],
    spec: &ModelSpec,
) -> Result<(Array1<f64>, f64)> {
    let ell = EllipsoidSpec::new(&blocks[k], &spec.constraints[k], k)?;
    let t = step_size(k, blocks, &spec.design, weights, &spec.penalties);
    let mut grad = gradient_phi(blocks, &spec.design, weights, k);
    for att in &spec.penalties[k] {
        let alpha = att.operator.alpha_star(weights[k].view(), att.mu);
        att.operator
            .accumulate_transpose(alpha.values.view(), att.omega, &mut grad);
    }
    let z = &weights[k] - &(&grad * t);
    let report = project_w(
        z.view(),
        &spec.constraints[k],
        &ell,
        DYKSTRA_EPS_FLOOR,
        spec.tol.max_iter_dykstra,
    )?;
    let map = (&weights[k] - &report.point) / t;
    let norm = map.dot(&map).sqrt();
    Ok((map, norm))
}

fn initial_weights(blocks: &[Block], spec: &ModelSpec) -> Result<Vec<Array1<f64>>> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    let mut out = Vec::with_capacity(blocks.len());
    for (k, block) in blocks.iter().enumerate() {
        let p = block.p();
        let w = match &spec.init {
            Init::SingularVector => {
                let v = block.svd().vt.row(0).to_owned();
                // Fix the sign so reruns and refactors agree: largest
                // magnitude entry positive.
                let lead = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                if v[lead] < 0.0 {
                    -v
                } else {
                    v
                }
            }
            Init::Ones => Array1::from_elem(p, 1.0 / (p as f64).sqrt()),
            Init::Random { seed } => {
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(*seed);
                rng.set_stream(k as u64);
                Array1::from_iter((0..p).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)))
            }
            Init::Given(starts) => starts[k].clone(),
        };
        out.push(w);
    }
    Ok(out)
}

/// Fit a single component on the given (possibly deflated) blocks.
pub fn fit_component(
    blocks: &[Block],
    spec: &ModelSpec,
) -> Result<(Vec<Array1<f64>>, ComponentDiagnostics)> {
    let k_total = blocks.len();
    let ellipsoids: Vec<EllipsoidSpec> = blocks
        .iter()
        .zip(&spec.constraints)
        .enumerate()
        .map(|(k, (b, c))| EllipsoidSpec::new(b, c, k))
        .collect::<Result<_>>()?;

    let mut state = SolverState {
        weights: initial_weights(blocks, spec)?,
        inner_counts: vec![0; k_total],
        sweeps: 0,
        objective_trace: Vec::new(),
    };

    // Start from a feasible point.
    for k in 0..k_total {
        let eps = dykstra_eps(&spec.tol, 1);
        let report = project_w(
            state.weights[k].view(),
            &spec.constraints[k],
            &ellipsoids[k],
            eps,
            spec.tol.max_iter_dykstra,
        )?;
        state.weights[k] = report.point;
    }

    let steps: Vec<f64> = (0..k_total)
        .map(|k| {
            step_size(
                k,
                blocks,
                &spec.design,
                &state.weights,
                &spec.penalties,
            )
        })
        .collect();

    state
        .objective_trace
        .push(objective(blocks, &spec.design, &state.weights, &spec.penalties));

    let mut capped_projections = 0;
    let mut inner_iterations = vec![0usize; k_total];
    let mut gradient_map_norms = vec![f64::INFINITY; k_total];
    let mut converged = false;

    for sweep in 1..=spec.tol.max_iter_outer {
        state.sweeps = sweep;
        for k in 0..k_total {
            let linear = gradient_phi(blocks, &spec.design, &state.weights, k);
            let update = fista_block(
                &state.weights[k],
                &linear,
                &spec.penalties[k],
                &spec.constraints[k],
                &ellipsoids[k],
                steps[k],
                &spec.tol,
                &mut state.inner_counts[k],
            )?;
            inner_iterations[k] += update.inner_used;
            capped_projections += update.capped;
            state.weights[k] = update.w;
        }

        let value = objective(blocks, &spec.design, &state.weights, &spec.penalties);
        state.objective_trace.push(value);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context: "objective trace".into(),
            });
        }

        // Outer stationarity: one projected gradient step per block moves
        // less than its step size times the tolerance.
        let mut all_stationary = true;
        for k in 0..k_total {
            let mut grad = gradient_phi(blocks, &spec.design, &state.weights, k);
            for att in &spec.penalties[k] {
                let alpha = att.operator.alpha_star(state.weights[k].view(), att.mu);
                att.operator
                    .accumulate_transpose(alpha.values.view(), att.omega, &mut grad);
            }
            let z = &state.weights[k] - &(&grad * steps[k]);
            let eps = dykstra_eps(&spec.tol, state.inner_counts[k]);
            let report = project_w(
                z.view(),
                &spec.constraints[k],
                &ellipsoids[k],
                eps,
                spec.tol.max_iter_dykstra,
            )?;
            let diff = &state.weights[k] - &report.point;
            let dist = diff.dot(&diff).sqrt();
            gradient_map_norms[k] = dist / steps[k];
            if dist >= steps[k] * spec.tol.eps_outer {
                all_stationary = false;
            }
        }
        if all_stationary {
            converged = true;
            break;
        }
    }

    let diagnostics = ComponentDiagnostics {
        sweeps: state.sweeps,
        converged,
        objective_trace: state.objective_trace,
        gradient_map_norms,
        inner_iterations,
        capped_projections,
    };
    Ok((state.weights, diagnostics))
}

/// Remove the fitted direction from a block and recompute its SVD:
/// `X <- X (I - w w' / ||w||^2)`.
pub fn deflate(block: &Block, w: &Array1<f64>) -> Result<Block> {
    if w.len() != block.p() {
        return Err(Error::Shape {
            message: format!(
                "deflation weight has length {}, block has {} variables",
                w.len(),
                block.p()
            ),
        });
    }
    let norm2 = w.dot(w);
    if norm2 <= 0.0 || !norm2.is_finite() {
        return Err(Error::Evaluation {
            context: "deflation".into(),
            message: "weight vector has zero norm".into(),
        });
    }
    let scores = block.data().dot(w);
    let mut data = block.data().clone();
    let scale = 1.0 / norm2;
    for (mut row, &t) in data.rows_mut().into_iter().zip(scores.iter()) {
        row.scaled_add(-t * scale, w);
    }
    Block::with_data(data, block.preprocessing().clone())
}

/// Fit `spec.n_components` components with deflation between them.
/// Scores are always taken against the undeflated data.
pub fn fit(blocks: &[Block], spec: &ModelSpec) -> Result<FitResult> {
    spec.validate(blocks)?;
    let k_total = blocks.len();
    let a_total = spec.n_components;
    let n = blocks[0].n();

    let mut weights: Vec<Array2<f64>> = blocks
        .iter()
        .map(|b| Array2::zeros((b.p(), a_total)))
        .collect();
    let mut scores: Vec<Array2<f64>> = (0..k_total).map(|_| Array2::zeros((n, a_total))).collect();
    let mut components = Vec::with_capacity(a_total);

    let mut current: Vec<Block> = blocks.to_vec();
    for a in 0..a_total {
        let (w, diag) = fit_component(&current, spec)?;
        for k in 0..k_total {
            weights[k].column_mut(a).assign(&w[k]);
            scores[k]
                .column_mut(a)
                .assign(&blocks[k].data().dot(&w[k]));
        }
        components.push(diag);
        if a + 1 < a_total {
            for k in 0..k_total {
                current[k] = deflate(&current[k], &w[k])?;
            }
        }
    }

    let converged = components.iter().all(|c| c.converged);
    Ok(FitResult {
        weights,
        scores,
        components,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BlockConstraint, ModelSpec};
    use crate::objective::ConstraintMatrix;
    use crate::penalty::LinearOperator;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn random_blocks(seed: u64, n: usize, ps: &[usize]) -> Vec<Block> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        ps.iter()
            .map(|&p| {
                let raw = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
                Block::preprocess(raw.view(), true, false).unwrap()
            })
            .collect()
    }

    #[test]
    fn penalised_step_is_the_inverse_lipschitz_sum() {
        let blocks = random_blocks(1, 8, &[3, 4]);
        let mut spec = ModelSpec::plain(2, 1);
        // Single variable, weight 2: operator norm is exactly 2.
        let op = LinearOperator::group_l12(&[vec![0]], Some(&[2.0]), 3).unwrap();
        assert_abs_diff_eq!(op.spectral_norm(), 2.0, epsilon = 1e-10);
        let mu = 5e-4;
        spec.penalties[0].push(crate::config::PenaltyAttachment {
            operator: op,
            omega: 1.0,
            mu,
        });
        let w = vec![array![1.0, 0.0, 0.0], array![0.5, 0.5, 0.5, 0.5]];
        let t = step_size(0, &blocks, &spec.design, &w, &spec.penalties);
        assert_abs_diff_eq!(t, mu / 4.0, epsilon = 1e-16);
    }

    #[test]
    fn unpenalised_step_backtracks_to_one() {
        let blocks = random_blocks(2, 8, &[3, 4]);
        let spec = ModelSpec::plain(2, 1);
        let w = vec![array![1.0, 0.0, 0.0], array![0.5, 0.5, 0.5, 0.5]];
        let t = step_size(0, &blocks, &spec.design, &w, &spec.penalties);
        assert_abs_diff_eq!(t, 1.0, epsilon = 0.0);
    }

    #[test]
    fn objective_trace_never_increases() {
        let blocks = random_blocks(3, 12, &[6, 5]);
        let mut spec = ModelSpec::plain(2, 1);
        spec.constraints[0] = BlockConstraint {
            tau: 0.5,
            l1_radius: Some(1.5),
            quad_radius: 1.0,
        };
        let op = LinearOperator::tv1d(5).unwrap();
        spec.penalties[1].push(crate::config::PenaltyAttachment {
            operator: op,
            omega: 0.3,
            mu: 1e-3,
        });
        let (_, diag) = fit_component(&blocks, &spec).unwrap();
        for pair in diag.objective_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-9,
                "trace increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn converged_fit_is_stationary() {
        let blocks = random_blocks(4, 10, &[4, 6]);
        let spec = ModelSpec::plain(2, 1);
        let (w, diag) = fit_component(&blocks, &spec).unwrap();
        assert!(diag.converged, "did not converge in {} sweeps", diag.sweeps);
        for k in 0..2 {
            let (_, norm) = gradient_map(k, &blocks, &w, &spec).unwrap();
            assert!(norm <= 2.0 * spec.tol.eps_outer, "block {k}: {norm}");
        }
    }

    #[test]
    fn deflation_removes_the_fitted_direction() {
        let blocks = random_blocks(5, 9, &[5, 4]);
        let w = array![0.5, -0.3, 0.8, 0.1, -0.6];
        let deflated = deflate(&blocks[0], &w).unwrap();
        let residual_scores = deflated.data().dot(&w);
        for v in residual_scores.iter() {
            assert_abs_diff_eq!(v, &0.0, epsilon = 1e-10);
        }
        assert!(deflate(&blocks[0], &Array1::zeros(5)).is_err());
    }

    #[test]
    fn fits_are_deterministic() {
        let blocks = random_blocks(6, 10, &[5, 4]);
        let mut spec = ModelSpec::plain(2, 2);
        spec.constraints[0].l1_radius = Some(1.8);
        let a = fit(&blocks, &spec).unwrap();
        let b = fit(&blocks, &spec).unwrap();
        for k in 0..2 {
            assert_eq!(a.weights[k], b.weights[k]);
            assert_eq!(a.scores[k], b.scores[k]);
        }
    }

    #[test]
    fn second_component_weights_are_feasible_for_the_deflated_block() {
        let blocks = random_blocks(7, 12, &[6, 5]);
        let mut spec = ModelSpec::plain(2, 2);
        spec.constraints[0].tau = 0.4;
        spec.constraints[1].tau = 0.9;
        let result = fit(&blocks, &spec).unwrap();

        let deflated: Vec<Block> = (0..2)
            .map(|k| deflate(&blocks[k], &result.weights[k].column(0).to_owned()).unwrap())
            .collect();
        for k in 0..2 {
            let cm = ConstraintMatrix::new(&deflated[k], spec.constraints[k].tau, k).unwrap();
            let w2 = result.weights[k].column(1).to_owned();
            let q = cm.quad_form(w2.view());
            assert!(q <= 1.0 + 1e-6, "block {k}: q = {q}");
        }
    }
}
