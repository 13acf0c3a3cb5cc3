//! Synthetic two-block data with a shared latent factor: block one carries
//! a piecewise-constant weight profile suited to a total-variation penalty,
//! block two a group-structured profile with one overlapping group pair.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Knobs of the generator.  `canonical` reproduces the reference setup;
/// the fields are public so studies can vary one thing at a time.
#[derive(Debug, Clone)]
pub struct SimSpec {
    pub n: usize,
    /// Latent factor of block two is the block-one factor plus noise of
    /// this standard deviation.
    pub sd_t2: f64,
    pub sd_e1: f64,
    pub sd_e2: f64,
    pub true_w1: Array1<f64>,
    pub true_w2: Array1<f64>,
    pub seed: u64,
}

/// The latent factors and true weights behind one generated data set.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub t1: Array1<f64>,
    pub t2: Array1<f64>,
    pub w1: Array1<f64>,
    pub w2: Array1<f64>,
}

/// Raw (unprocessed) generated blocks plus the ground truth.
#[derive(Debug, Clone)]
pub struct SimData {
    pub x1: Array2<f64>,
    pub x2: Array2<f64>,
    pub truth: SimTruth,
}

impl SimSpec {
    /// The reference setup: 50 rows, 150 + 100 variables, unit-norm
    /// piecewise weight profiles, noise levels 0.15 and 0.2, latent jitter
    /// 0.01.
    pub fn canonical(seed: u64) -> SimSpec {
        let (true_w1, true_w2) = default_truth();
        SimSpec {
            n: 50,
            sd_t2: 0.01,
            sd_e1: 0.15,
            sd_e2: 0.2,
            true_w1,
            true_w2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config {
                message: format!("simulation needs n >= 2, got {}", self.n),
            });
        }
        if self.true_w1.is_empty() || self.true_w2.is_empty() {
            return Err(Error::Config {
                message: "true weight vectors must be non-empty".into(),
            });
        }
        for (name, v) in [("sd_t2", self.sd_t2), ("sd_e1", self.sd_e1), ("sd_e2", self.sd_e2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config {
                    message: format!("{name} must be finite and nonnegative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Unit-norm piecewise-constant weight profiles: 150 variables with flat
/// runs (zero, 0.5, -0.3, zero, 0.4 before normalisation) and 100 grouped
/// variables with two null groups at the edges.
pub fn default_truth() -> (Array1<f64>, Array1<f64>) {
    let mut w1 = Array1::zeros(150);
    fill(&mut w1, 30, 70, 0.5);
    fill(&mut w1, 70, 90, -0.3);
    fill(&mut w1, 120, 150, 0.4);
    normalise(&mut w1);

    let mut w2 = Array1::zeros(100);
    fill(&mut w2, 10, 30, 0.4);
    fill(&mut w2, 30, 40, -0.3);
    fill(&mut w2, 40, 60, 0.5);
    fill(&mut w2, 60, 90, 0.2);
    normalise(&mut w2);

    (w1, w2)
}

/// Group layout matching [`default_truth`]'s second block: six groups of
/// which the second and third overlap on ten variables, and the first and
/// last carry no signal.
pub fn default_groups() -> Vec<Vec<usize>> {
    vec![
        (0..10).collect(),
        (10..30).collect(),
        (20..40).collect(),
        (40..60).collect(),
        (60..90).collect(),
        (90..100).collect(),
    ]
}

fn fill(w: &mut Array1<f64>, start: usize, end: usize, value: f64) {
    for i in start..end {
        w[i] = value;
    }
}

fn normalise(w: &mut Array1<f64>) {
    let norm = w.dot(w).sqrt();
    if norm > 0.0 {
        *w /= norm;
    }
}

/// Generate one data set.
///
/// Each random ingredient has its own generator stream (latent factor,
/// its jitter, then the two noise matrices filled column by column), so
/// changing one noise level never perturbs the other draws.
pub fn generate(spec: &SimSpec) -> Result<SimData> {
    spec.validate()?;
    let n = spec.n;
    let p1 = spec.true_w1.len();
    let p2 = spec.true_w2.len();

    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);

    rng.set_stream(0);
    let t1: Array1<f64> = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));

    rng.set_stream(1);
    let t2: Array1<f64> = Array1::from_iter(
        t1.iter()
            .map(|&t| t + spec.sd_t2 * rng.sample::<f64, _>(StandardNormal)),
    );

    rng.set_stream(2);
    let mut x1 = Array2::zeros((n, p1));
    for j in 0..p1 {
        for i in 0..n {
            x1[[i, j]] = spec.sd_e1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for i in 0..n {
        for j in 0..p1 {
            x1[[i, j]] += t1[i] * spec.true_w1[j];
        }
    }

    rng.set_stream(3);
    let mut x2 = Array2::zeros((n, p2));
    for j in 0..p2 {
        for i in 0..n {
            x2[[i, j]] = spec.sd_e2 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for i in 0..n {
        for j in 0..p2 {
            x2[[i, j]] += t2[i] * spec.true_w2[j];
        }
    }

    Ok(SimData {
        x1,
        x2,
        truth: SimTruth {
            t1,
            t2,
            w1: spec.true_w1.clone(),
            w2: spec.true_w2.clone(),
        },
    })
}

/// Absolute cosine between an estimate and the truth; sign flips do not
/// matter.  Zero vectors score zero.
pub fn recovery_score(w_hat: &Array1<f64>, w_true: &Array1<f64>) -> f64 {
    let nh = w_hat.dot(w_hat).sqrt();
    let nt = w_true.dot(w_true).sqrt();
    if nh == 0.0 || nt == 0.0 {
        return 0.0;
    }
    (w_hat.dot(w_true) / (nh * nt)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn truth_profiles_are_unit_norm_with_the_expected_pattern() {
        let (w1, w2) = default_truth();
        assert_eq!(w1.len(), 150);
        assert_eq!(w2.len(), 100);
        assert_abs_diff_eq!(w1.dot(&w1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w2.dot(&w2), 1.0, epsilon = 1e-12);
        assert_eq!(w1[0], 0.0);
        assert_eq!(w1[95], 0.0);
        assert_abs_diff_eq!(w1[40] / w1[130], 0.5 / 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(w1[75] / w1[40], -0.3 / 0.5, epsilon = 1e-12);
        assert_eq!(w2[5], 0.0);
        assert_eq!(w2[95], 0.0);
        assert_abs_diff_eq!(w2[15] / w2[50], 0.4 / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w2[35] / w2[50], -0.3 / 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w2[70] / w2[50], 0.2 / 0.5, epsilon = 1e-12);
    }

    #[test]
    fn groups_cover_the_second_block_with_one_overlap() {
        let groups = default_groups();
        assert_eq!(groups.len(), 6);
        let mut hits = vec![0usize; 100];
        for g in &groups {
            for &j in g {
                hits[j] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h >= 1));
        assert_eq!(hits.iter().filter(|&&h| h == 2).count(), 10);
        assert_eq!((20..30).map(|j| hits[j]).sum::<usize>(), 20);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let spec = SimSpec::canonical(123);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.x1, b.x1);
        assert_eq!(a.x2, b.x2);
        assert_eq!(a.truth.t1, b.truth.t1);

        let c = generate(&SimSpec::canonical(124)).unwrap();
        assert_ne!(a.x1, c.x1);
    }

    #[test]
    fn noise_streams_are_independent() {
        let spec = SimSpec::canonical(55);
        let base = generate(&spec).unwrap();
        let mut louder = spec.clone();
        louder.sd_e2 = 0.9;
        let changed = generate(&louder).unwrap();
        // Only the second block's noise changed.
        assert_eq!(base.x1, changed.x1);
        assert_eq!(base.truth.t1, changed.truth.t1);
        assert_eq!(base.truth.t2, changed.truth.t2);
        assert_ne!(base.x2, changed.x2);
    }

    #[test]
    fn low_noise_data_lies_along_the_truth() {
        let mut spec = SimSpec::canonical(77);
        spec.sd_e1 = 1e-9;
        spec.sd_t2 = 1e-9;
        let data = generate(&spec).unwrap();
        let scores = data.x1.dot(&data.truth.w1);
        let cos = scores.dot(&data.truth.t1)
            / (scores.dot(&scores).sqrt() * data.truth.t1.dot(&data.truth.t1).sqrt());
        assert!(cos > 1.0 - 1e-10, "cos = {cos}");
    }

    #[test]
    fn recovery_score_ignores_sign_and_scale() {
        let w = array![1.0, 2.0, -2.0];
        let flipped = array![-2.0, -4.0, 4.0];
        assert_abs_diff_eq!(recovery_score(&flipped, &w), 1.0, epsilon = 1e-12);
        let orth = array![2.0, 0.0, 1.0];
        assert_abs_diff_eq!(recovery_score(&orth, &w), 0.0, epsilon = 1e-12);
        assert_eq!(recovery_score(&Array1::zeros(3), &w), 0.0);
    }
}
