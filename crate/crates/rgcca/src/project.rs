//! Euclidean projections onto the feasible sets: the l1 ball, the
//! ellipsoid `w' M w <= c` and their intersection via alternating
//! projections with correction terms.

use ndarray::{Array1, ArrayView1};

use crate::block::Block;
use crate::config::BlockConstraint;
use crate::error::{Error, Result};
use crate::objective::ConstraintMatrix;

/// Newton stopping threshold on the multiplier step.  Deliberately near
/// machine precision: the iteration is quadratically convergent and cheap.
const NEWTON_STEP_TOL: f64 = 5e-16;
const NEWTON_MAX_ITER: usize = 200;

/// Tolerance for flagging a constraint as active in reports.
const ACTIVE_TOL: f64 = 1e-8;

/// Elementwise shrinkage towards zero by `lambda`.
pub fn soft_threshold(x: ArrayView1<f64>, lambda: f64) -> Array1<f64> {
    x.mapv(|v| {
        if v > lambda {
            v - lambda
        } else if v < -lambda {
            v + lambda
        } else {
            0.0
        }
    })
}

/// Euclidean projection onto the l1 ball of radius `s`.
///
/// Points inside the ball are returned unchanged.  Otherwise the optimal
/// shrinkage is found from the sorted absolute values and applied through
/// [`soft_threshold`], so the result satisfies `||y||_1 = s` exactly up to
/// rounding.
pub fn project_l1(x: ArrayView1<f64>, s: f64) -> Array1<f64> {
    debug_assert!(s > 0.0);
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 <= s {
        return x.to_owned();
    }
    let mut abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    abs.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());

    let mut cumsum = 0.0;
    let mut lambda = 0.0;
    for (k, &u) in abs.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - s) / (k + 1) as f64;
        if u - candidate <= 0.0 {
            break;
        }
        lambda = candidate;
    }
    soft_threshold(x, lambda)
}

/// The ellipsoid `{ w : w' M w <= radius }` of one block, with the
/// spectrum of `M` split into SVD coordinates and the flat remainder.
#[derive(Debug, Clone)]
pub struct EllipsoidSpec<'a> {
    matrix: ConstraintMatrix<'a>,
    radius: f64,
    /// Eigenvalues along the cached right singular vectors.
    lam: Array1<f64>,
}

/// Diagnostics of one ellipsoid projection.
#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    /// Multiplier of the quadratic constraint; zero when the input was
    /// already feasible.
    pub gamma: f64,
    pub iterations: usize,
    pub last_step: f64,
}

impl<'a> EllipsoidSpec<'a> {
    pub fn new(block: &'a Block, constraint: &BlockConstraint, block_idx: usize) -> Result<Self> {
        let matrix = ConstraintMatrix::new(block, constraint.tau, block_idx)?;
        let radius = constraint.quad_radius;
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::Config {
                message: format!("block {block_idx}: quadratic radius must be positive, got {radius}"),
            });
        }
        let tau = matrix.tau();
        let scale = (1.0 - tau) / (block.n() as f64 - 1.0);
        let lam = block.svd().sigma.mapv(|s| tau + scale * s * s);
        Ok(EllipsoidSpec {
            matrix,
            radius,
            lam,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn matrix(&self) -> &ConstraintMatrix<'a> {
        &self.matrix
    }

    /// Project `x` onto the ellipsoid.
    ///
    /// Feasible points come back untouched.  Otherwise the multiplier
    /// `gamma` of `y = (I + 2 gamma M)^{-1} x` is found by Newton's method
    /// on the constraint residual, which is convex and decreasing in
    /// `gamma`, so the iteration climbs monotonically from zero.  A step
    /// that fails to increase `gamma` means the residual has hit rounding
    /// noise and counts as converged.
    pub fn project(&self, x: ArrayView1<f64>) -> Result<(Array1<f64>, NewtonReport)> {
        let svd = self.matrix.block().svd();
        let tau = self.matrix.tau();
        let coords = svd.vt.dot(&x);
        let norm2: f64 = x.dot(&x);
        let tail2 = (norm2 - coords.dot(&coords)).max(0.0);

        let residual = |gamma: f64| -> f64 {
            let mut q = tau * tail2 / (1.0 + 2.0 * gamma * tau).powi(2);
            for (c, &l) in coords.iter().zip(self.lam.iter()) {
                q += l * c * c / (1.0 + 2.0 * gamma * l).powi(2);
            }
            q - self.radius
        };
        let slope = |gamma: f64| -> f64 {
            let mut d = -4.0 * tau * tau * tail2 / (1.0 + 2.0 * gamma * tau).powi(3);
            for (c, &l) in coords.iter().zip(self.lam.iter()) {
                d -= 4.0 * l * l * c * c / (1.0 + 2.0 * gamma * l).powi(3);
            }
            d
        };

        if residual(0.0) <= 0.0 {
            return Ok((
                x.to_owned(),
                NewtonReport {
                    gamma: 0.0,
                    iterations: 0,
                    last_step: 0.0,
                },
            ));
        }

        let mut gamma = 0.0_f64;
        let mut iterations = 0;
        let last_step;
        loop {
            let f = residual(gamma);
            if f <= 0.0 {
                last_step = 0.0;
                break;
            }
            let fp = slope(gamma);
            let step = -f / fp;
            if !step.is_finite() {
                return Err(Error::NonFinite {
                    context: "ellipsoid projection Newton step".into(),
                });
            }
            if step <= 0.0 {
                // Rounding noise at the root; no progress is possible.
                last_step = step.max(0.0);
                break;
            }
            gamma += step;
            iterations += 1;
            if step < NEWTON_STEP_TOL {
                last_step = step;
                break;
            }
            if iterations >= NEWTON_MAX_ITER {
                return Err(Error::NewtonStalled {
                    max_iter: NEWTON_MAX_ITER,
                    last_step: step,
                });
            }
        }

        // y = V diag(1/(1 + 2 gamma lam)) coords + (x - V coords)/(1 + 2 gamma tau)
        let shrunk = Array1::from_iter(
            coords
                .iter()
                .zip(self.lam.iter())
                .map(|(c, &l)| c / (1.0 + 2.0 * gamma * l)),
        );
        let in_span = svd.vt.t().dot(&shrunk);
        let span_part = svd.vt.t().dot(&coords);
        let tail_scale = 1.0 / (1.0 + 2.0 * gamma * tau);
        let mut y = in_span;
        for i in 0..y.len() {
            y[i] += (x[i] - span_part[i]) * tail_scale;
        }
        Ok((
            y,
            NewtonReport {
                gamma,
                iterations,
                last_step,
            },
        ))
    }

    /// `x' M x` for feasibility checks.
    pub fn quad_form(&self, x: ArrayView1<f64>) -> f64 {
        self.matrix.quad_form(x)
    }
}

/// Result of an alternating-projection run.
#[derive(Debug, Clone)]
pub struct DykstraOutcome {
    pub point: Array1<f64>,
    pub iterations: usize,
    /// Largest distance from the returned point to either set.
    pub residual: f64,
    pub converged: bool,
}

/// Dykstra's alternating projections onto the intersection of two closed
/// convex sets, with the usual correction vectors so the limit is the
/// Euclidean projection rather than just any intersection point.
///
/// The reported residual is the classic feasibility test, the largest
/// distance from the iterate to either set.  That test alone is not a
/// convergence certificate: an iterate can land inside both sets (residual
/// zero) while still far from the nearest point, for instance when the
/// second projection shrinks the point into the interior of the first set.
/// Termination therefore also watches the correction increments, whose
/// norms equal the within-sweep gaps `|x_prev - y|` and `|y - x|`; they
/// vanish only at the limit.  Assuming the locally linear convergence of
/// the sweep, the distance left to the limit is about `m * r / (1 - r)`
/// for gap size `m` and contraction ratio `r`, and that estimate must stay
/// below `eps` on two consecutive sweeps.
///
/// Hitting `max_iter` is reported through `converged = false`, not an
/// error; the caller decides whether an inexact projection is acceptable.
pub fn dykstra<P, S>(
    x0: ArrayView1<f64>,
    mut proj_p: P,
    mut proj_s: S,
    eps: f64,
    max_iter: usize,
) -> Result<DykstraOutcome>
where
    P: FnMut(ArrayView1<f64>) -> Result<Array1<f64>>,
    S: FnMut(ArrayView1<f64>) -> Result<Array1<f64>>,
{
    let mut x = x0.to_owned();
    let mut p = Array1::zeros(x.len());
    let mut q = Array1::zeros(x.len());

    let mut residual = f64::INFINITY;
    let mut prev_movement = f64::INFINITY;
    let mut passes = 0usize;
    for it in 1..=max_iter {
        let y = proj_p((&x + &p).view())?;
        p = &x + &p - &y;
        let x_next = proj_s((&y + &q).view())?;
        q = &y + &q - &x_next;
        let gap_py = (&y - &x).mapv(|v| v * v).sum();
        let gap_ys = (&y - &x_next).mapv(|v| v * v).sum();
        let movement = (gap_py + gap_ys).sqrt();
        x = x_next;

        let to_p = proj_p(x.view())?;
        let to_s = proj_s(x.view())?;
        let dist_p = (&to_p - &x).mapv(|v| v * v).sum().sqrt();
        let dist_s = (&to_s - &x).mapv(|v| v * v).sum().sqrt();
        residual = dist_p.max(dist_s);

        // Once the sweep gap is at rounding level for the iterate's
        // magnitude the contraction ratio is noise (it sticks at 1), so
        // treat the iterate as fully resolved instead.
        let gap_floor = 50.0 * f64::EPSILON * (1.0 + x.dot(&x).sqrt());
        let tail = if movement <= gap_floor {
            0.0
        } else if prev_movement.is_finite() {
            let ratio = movement / prev_movement;
            if ratio < 1.0 {
                movement * ratio / (1.0 - ratio)
            } else {
                f64::INFINITY
            }
        } else {
            f64::INFINITY
        };
        prev_movement = movement;

        if residual <= eps && tail <= eps {
            passes += 1;
            if passes == 2 {
                return Ok(DykstraOutcome {
                    point: x,
                    iterations: it,
                    residual,
                    converged: true,
                });
            }
        } else {
            passes = 0;
        }
    }
    Ok(DykstraOutcome {
        point: x,
        iterations: max_iter,
        residual,
        converged: false,
    })
}

/// Outcome of projecting onto a block's full feasible set.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub point: Array1<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Whether the l1 constraint is tight at the returned point.
    pub l1_active: bool,
    /// Whether the quadratic constraint is tight at the returned point.
    pub quad_active: bool,
}

/// Project onto a block's feasible set: the ellipsoid alone, or its
/// intersection with the l1 ball when a radius is configured.
pub fn project_w(
    x: ArrayView1<f64>,
    constraint: &BlockConstraint,
    ellipsoid: &EllipsoidSpec<'_>,
    eps: f64,
    max_iter: usize,
) -> Result<ProjectionReport> {
    let radius = ellipsoid.radius();
    match constraint.l1_radius {
        None => {
            let (point, newton) = ellipsoid.project(x)?;
            let quad = ellipsoid.quad_form(point.view());
            Ok(ProjectionReport {
                point,
                iterations: 1,
                residual: 0.0,
                converged: true,
                l1_active: false,
                quad_active: newton.gamma > 0.0 || quad >= radius - ACTIVE_TOL * radius.max(1.0),
            })
        }
        Some(s) => {
            let outcome = dykstra(
                x,
                |v| Ok(project_l1(v, s)),
                |v| ellipsoid.project(v).map(|(y, _)| y),
                eps,
                max_iter,
            )?;
            let l1_norm: f64 = outcome.point.iter().map(|v| v.abs()).sum();
            let quad = ellipsoid.quad_form(outcome.point.view());
            Ok(ProjectionReport {
                l1_active: l1_norm >= s - ACTIVE_TOL * s.max(1.0),
                quad_active: quad >= radius - ACTIVE_TOL * radius.max(1.0),
                point: outcome.point,
                iterations: outcome.iterations,
                residual: outcome.residual,
                converged: outcome.converged,
            })
        }
    }
}
