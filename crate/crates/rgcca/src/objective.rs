//! The smooth part of the criterion: a weighted sum of covariances between
//! block scores, minimised with a negative sign.  Both orderings of every
//! linked pair are summed, which is why gradients carry a factor two.

use ndarray::{Array1, ArrayView1};

use crate::block::Block;
use crate::config::{Design, PenaltyAttachment};
use crate::error::{Error, Result};

/// Sample covariance of two block scores, `(X_k w_k)' (X_j w_j) / (n - 1)`.
pub fn covariance(
    xk: &Block,
    wk: ArrayView1<f64>,
    xj: &Block,
    wj: ArrayView1<f64>,
) -> Result<f64> {
    if xk.n() != xj.n() {
        return Err(Error::Shape {
            message: format!("blocks have {} and {} rows", xk.n(), xj.n()),
        });
    }
    if wk.len() != xk.p() || wj.len() != xj.p() {
        return Err(Error::Shape {
            message: "weight length does not match block width".into(),
        });
    }
    let tk = xk.data().dot(&wk);
    let tj = xj.data().dot(&wj);
    Ok(tk.dot(&tj) / (xk.n() as f64 - 1.0))
}

/// Negative covariance sum over all ordered linked pairs.
pub fn phi(blocks: &[Block], design: &Design, weights: &[Array1<f64>]) -> f64 {
    let n1 = blocks[0].n() as f64 - 1.0;
    let scores: Vec<Array1<f64>> = blocks
        .iter()
        .zip(weights)
        .map(|(b, w)| b.data().dot(w))
        .collect();
    let mut total = 0.0;
    for k in 0..blocks.len() {
        for j in 0..blocks.len() {
            let c = design.weight(k, j);
            if c != 0.0 {
                total += c * scores[k].dot(&scores[j]) / n1;
            }
        }
    }
    -total
}

/// Value the solver minimises: `phi` plus the smoothed penalties.
pub fn objective(
    blocks: &[Block],
    design: &Design,
    weights: &[Array1<f64>],
    penalties: &[Vec<PenaltyAttachment>],
) -> f64 {
    let mut total = phi(blocks, design, weights);
    for (w, attachments) in weights.iter().zip(penalties) {
        for att in attachments {
            total += att.omega * att.operator.smoothed_value(w.view(), att.mu);
        }
    }
    total
}

/// Like [`objective`] but with the exact (unsmoothed) penalty values, for
/// reporting.
pub fn objective_exact(
    blocks: &[Block],
    design: &Design,
    weights: &[Array1<f64>],
    penalties: &[Vec<PenaltyAttachment>],
) -> f64 {
    let mut total = phi(blocks, design, weights);
    for (w, attachments) in weights.iter().zip(penalties) {
        for att in attachments {
            total += att.omega * att.operator.exact_value(w.view());
        }
    }
    total
}

/// Gradient of [`phi`] with respect to `w_k`.  The double-counted pair sum
/// makes this `-2/(n-1) X_k' sum_j c_kj X_j w_j`; it does not depend on
/// `w_k` itself.
pub fn gradient_phi(
    blocks: &[Block],
    design: &Design,
    weights: &[Array1<f64>],
    k: usize,
) -> Array1<f64> {
    let n = blocks[0].n();
    let mut combined = Array1::zeros(n);
    for j in 0..blocks.len() {
        let c = design.weight(k, j);
        if j != k && c != 0.0 {
            combined.scaled_add(c, &blocks[j].data().dot(&weights[j]));
        }
    }
    let mut grad = blocks[k].data().t().dot(&combined);
    grad *= -2.0 / (n as f64 - 1.0);
    grad
}

/// Shrinkage-regularised scatter matrix of one block, kept implicit through
/// the block's SVD: `M = tau I + (1 - tau)/(n - 1) X'X`.
#[derive(Debug, Clone)]
pub struct ConstraintMatrix<'a> {
    block: &'a Block,
    tau: f64,
}

impl<'a> ConstraintMatrix<'a> {
    pub fn new(block: &'a Block, tau: f64, block_idx: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) || !tau.is_finite() {
            return Err(Error::Config {
                message: format!("block {block_idx}: tau must lie in [0, 1], got {tau}"),
            });
        }
        if tau == 0.0 && block.svd().sigma.iter().all(|s| *s == 0.0) {
            return Err(Error::ZeroConstraintMatrix { block: block_idx });
        }
        Ok(ConstraintMatrix { block, tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn block(&self) -> &'a Block {
        self.block
    }

    fn scatter_scale(&self) -> f64 {
        (1.0 - self.tau) / (self.block.n() as f64 - 1.0)
    }

    /// Eigenvalues in descending order, length `p`.  The leading
    /// `min(n, p)` pair with the cached right singular vectors; the rest of
    /// the spectrum is flat at `tau`.
    pub fn eigenvalues(&self) -> Array1<f64> {
        let p = self.block.p();
        let sigma = &self.block.svd().sigma;
        let scale = self.scatter_scale();
        let mut out = Array1::from_elem(p, self.tau);
        for (i, s) in sigma.iter().enumerate() {
            out[i] += scale * s * s;
        }
        out
    }

    /// `M w` without forming `M`.
    pub fn apply(&self, w: ArrayView1<f64>) -> Array1<f64> {
        let svd = self.block.svd();
        let mut coords = svd.vt.dot(&w);
        for (c, s) in coords.iter_mut().zip(svd.sigma.iter()) {
            *c *= s * s;
        }
        let mut out = svd.vt.t().dot(&coords);
        out *= self.scatter_scale();
        out.scaled_add(self.tau, &w);
        out
    }

    /// `w' M w`, evaluated through the SVD coordinates.
    pub fn quad_form(&self, w: ArrayView1<f64>) -> f64 {
        let svd = self.block.svd();
        let coords = svd.vt.dot(&w);
        let scatter: f64 = coords
            .iter()
            .zip(svd.sigma.iter())
            .map(|(c, s)| s * s * c * c)
            .sum();
        self.tau * w.dot(&w) + self.scatter_scale() * scatter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelSpec;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use ndarray_linalg::Eigh;

    fn blocks() -> Vec<Block> {
        let x1 = array![
            [1.0, 2.0, 0.5],
            [0.0, -1.0, 1.5],
            [2.0, 0.3, -0.7],
            [1.1, 0.9, 0.2],
            [-0.4, 1.2, 0.9]
        ];
        let x2 = array![
            [0.2, -0.4],
            [1.0, 0.8],
            [-0.6, 0.1],
            [0.3, 0.3],
            [0.9, -1.2]
        ];
        vec![
            Block::preprocess(x1.view(), true, false).unwrap(),
            Block::preprocess(x2.view(), true, false).unwrap(),
        ]
    }

    fn dense_m(block: &Block, tau: f64) -> Array2<f64> {
        let x = block.data();
        let n1 = block.n() as f64 - 1.0;
        let mut m = x.t().dot(x) * ((1.0 - tau) / n1);
        for i in 0..block.p() {
            m[[i, i]] += tau;
        }
        m
    }

    #[test]
    fn covariance_matches_the_direct_formula() {
        let blocks = blocks();
        let w1 = array![0.5, -0.2, 0.8];
        let w2 = array![1.0, 0.4];
        let t1 = blocks[0].data().dot(&w1);
        let t2 = blocks[1].data().dot(&w2);
        let expected = t1
            .iter()
            .zip(t2.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / 4.0;
        let got = covariance(&blocks[0], w1.view(), &blocks[1], w2.view()).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
    }

    #[test]
    fn two_block_phi_counts_each_pair_twice() {
        let blocks = blocks();
        let spec = ModelSpec::plain(2, 1);
        let w = vec![array![0.5, -0.2, 0.8], array![1.0, 0.4]];
        let cov = covariance(&blocks[0], w[0].view(), &blocks[1], w[1].view()).unwrap();
        assert_abs_diff_eq!(phi(&blocks, &spec.design, &w), -2.0 * cov, epsilon = 1e-12);
    }

    #[test]
    fn gradient_phi_matches_finite_differences() {
        let blocks = blocks();
        let spec = ModelSpec::plain(2, 1);
        let w = vec![array![0.5, -0.2, 0.8], array![1.0, 0.4]];
        for k in 0..2 {
            let grad = gradient_phi(&blocks, &spec.design, &w, k);
            let h = 1e-5;
            for j in 0..w[k].len() {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[k][j] += h;
                wm[k][j] -= h;
                let fd = (phi(&blocks, &spec.design, &wp) - phi(&blocks, &spec.design, &wm))
                    / (2.0 * h);
                assert_abs_diff_eq!(grad[j], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn constraint_matrix_agrees_with_dense_assembly() {
        let blocks = blocks();
        for &tau in &[0.0, 0.33, 1.0] {
            let cm = ConstraintMatrix::new(&blocks[0], tau, 0).unwrap();
            let dense = dense_m(&blocks[0], tau);
            let w = array![0.7, -1.1, 0.4];

            assert_abs_diff_eq!(cm.apply(w.view()), dense.dot(&w), epsilon = 1e-10);
            assert_abs_diff_eq!(cm.quad_form(w.view()), w.dot(&dense.dot(&w)), epsilon = 1e-10);

            let mut eig_dense = dense.eigh(ndarray_linalg::UPLO::Lower).unwrap().0;
            eig_dense.as_slice_mut().unwrap().reverse();
            let eig = cm.eigenvalues();
            assert_abs_diff_eq!(eig, eig_dense, epsilon = 1e-9);
        }
    }

    #[test]
    fn wide_block_spectrum_is_padded_with_tau() {
        // More variables than rows: the trailing eigenvalues equal tau.
        let x = array![[1.0, 0.5, -0.3, 2.0, 0.1], [0.4, 1.2, 0.8, -0.5, 0.6], [2.2, -0.7, 0.3, 0.9, 1.4]];
        let block = Block::preprocess(x.view(), true, false).unwrap();
        let tau = 0.25;
        let cm = ConstraintMatrix::new(&block, tau, 0).unwrap();
        let eig = cm.eigenvalues();
        assert_eq!(eig.len(), 5);
        // Centering drops one rank, so at most two eigenvalues exceed tau.
        for &v in eig.iter().skip(2) {
            assert_abs_diff_eq!(v, tau, epsilon = 1e-12);
        }
        let dense = dense_m(&block, tau);
        let w = array![0.2, -0.9, 1.3, 0.5, -0.1];
        assert_abs_diff_eq!(cm.quad_form(w.view()), w.dot(&dense.dot(&w)), epsilon = 1e-10);
    }

    #[test]
    fn zero_block_with_zero_tau_is_an_error() {
        let x = Array2::zeros((4, 3));
        let block = Block::preprocess(x.view(), false, false).unwrap();
        let err = ConstraintMatrix::new(&block, 0.0, 2).unwrap_err();
        assert!(matches!(err, Error::ZeroConstraintMatrix { block: 2 }));
        assert!(ConstraintMatrix::new(&block, 0.5, 2).is_ok());
    }
}
