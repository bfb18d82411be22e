//! Loss functions: MSE, max-margin contrastive loss, the weighted
//! variable-margin contrastive loss over rating bins, and the joint loss.
//!
//! The contrastive loss for one pair is
//!
//! ```text
//! L = 1/2 * Y * D^2 + 1/2 * (1 - Y) * max(0, m - D)^2
//! ```
//!
//! with D the Euclidean distance between the two latent vectors and Y = 1
//! iff both ratings fall in the same bin. In variable-margin mode the margin
//! is m = |X_i - X_j| * s, scaling the set distance s by the bin-index gap so
//! the margin reflects how far apart the ratings are.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// C equal-width bins partitioning the rating range [0, 1]. Bin k covers
/// [k/C, (k+1)/C), except the top bin which also includes 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingBins {
    pub count: usize,
}

impl RatingBins {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::Validation(format!(
                "bin count must be >= 2, got {count}"
            )));
        }
        Ok(RatingBins { count })
    }

    pub fn width(&self) -> f64 {
        1.0 / self.count as f64
    }
}

/// Similarity label for one training pair, derived from bin membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabel {
    pub bin_a: usize,
    pub bin_b: usize,
}

impl PairLabel {
    pub fn new(bin_a: usize, bin_b: usize) -> Self {
        PairLabel { bin_a, bin_b }
    }

    /// Y = 1 iff the two datapoints share a bin.
    pub fn same(&self) -> bool {
        self.bin_a == self.bin_b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    FixedMargin,
    VariableMargin,
}

impl std::fmt::Display for MarginMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MarginMode::FixedMargin => write!(f, "fixed_margin"),
            MarginMode::VariableMargin => write!(f, "variable_margin"),
        }
    }
}

impl std::str::FromStr for MarginMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_margin" => Ok(MarginMode::FixedMargin),
            "variable_margin" => Ok(MarginMode::VariableMargin),
            other => Err(Error::Parse(format!(
                "unknown margin mode '{other}' (expected fixed_margin or variable_margin)"
            ))),
        }
    }
}

/// Configuration of the contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Set margin distance s.
    pub margin: f64,
    /// Number of rating bins C.
    pub bins: usize,
    pub mode: MarginMode,
    /// Weight on the contrastive term in the joint loss; the default joint
    /// loss is the plain unweighted sum (weight 1).
    pub contrastive_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 1.0,
            bins: 5,
            mode: MarginMode::VariableMargin,
            contrastive_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::Validation(format!(
                "margin s must be > 0, got {}",
                self.margin
            )));
        }
        if self.bins < 2 {
            return Err(Error::Validation(format!(
                "bin count must be >= 2, got {}",
                self.bins
            )));
        }
        if !self.contrastive_weight.is_finite() || self.contrastive_weight < 0.0 {
            return Err(Error::Validation(format!(
                "contrastive weight must be >= 0, got {}",
                self.contrastive_weight
            )));
        }
        Ok(())
    }

    pub fn rating_bins(&self) -> RatingBins {
        RatingBins { count: self.bins }
    }

    /// Effective margin for a pair under the configured mode.
    pub fn margin_for(&self, label: &PairLabel) -> f64 {
        match self.mode {
            MarginMode::FixedMargin => self.margin,
            MarginMode::VariableMargin => {
                variable_margin(label.bin_a, label.bin_b, self.margin)
            }
        }
    }
}

/// Map a rating in [0, 1] to its bin index: min(floor(r * C), C - 1).
pub fn assign_bin(rating: f64, bins: &RatingBins) -> Result<usize> {
    if !rating.is_finite() || !(0.0..=1.0).contains(&rating) {
        return Err(Error::Validation(format!(
            "rating {rating} outside [0, 1]"
        )));
    }
    let idx = (rating * bins.count as f64).floor() as usize;
    Ok(idx.min(bins.count - 1))
}

/// Mean squared error between two equal-length vectors.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Validation(format!(
            "mse length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Validation("mse over empty vectors".into()));
    }
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        sum += d * d;
    }
    Ok(sum / pred.len() as f64)
}

/// L2 distance between two latent vectors.
pub fn euclidean_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "distance dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Max-margin contrastive loss for one pair given its distance, similarity
/// flag, and effective margin.
pub fn contrastive_pair_loss(distance: f64, same: bool, margin: f64) -> f64 {
    if same {
        0.5 * distance * distance
    } else {
        let gap = (margin - distance).max(0.0);
        0.5 * gap * gap
    }
}

/// Variable margin m = |X_i - X_j| * s.
pub fn variable_margin(bin_a: usize, bin_b: usize, s: f64) -> f64 {
    bin_a.abs_diff(bin_b) as f64 * s
}

/// Gradient of [`contrastive_pair_loss`] with respect to both latent
/// vectors (not mean-scaled). At the non-differentiable point D = 0 of a
/// dissimilar pair the subgradient 0 is used.
pub fn contrastive_pair_grad(
    a: ArrayView1<f64>,
    b: ArrayView1<f64>,
    same: bool,
    margin: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = euclidean_distance(a, b)?;
    let dim = a.len();
    let mut ga = vec![0.0; dim];
    let mut gb = vec![0.0; dim];
    if same {
        // L = 1/2 D^2: dL/da = a - b.
        for i in 0..dim {
            let diff = a[i] - b[i];
            ga[i] = diff;
            gb[i] = -diff;
        }
    } else if d < margin && d > 0.0 {
        // L = 1/2 (m - D)^2: dL/da = -(m - D)/D * (a - b).
        let scale = -(margin - d) / d;
        for i in 0..dim {
            let diff = a[i] - b[i];
            ga[i] = scale * diff;
            gb[i] = -scale * diff;
        }
    }
    Ok((ga, gb))
}

fn check_batch_shapes(
    latents_a: &ArrayView2<f64>,
    latents_b: &ArrayView2<f64>,
    labels: &[PairLabel],
) -> Result<()> {
    if latents_a.nrows() != latents_b.nrows() || latents_a.nrows() != labels.len() {
        return Err(Error::Validation(format!(
            "batch loss length mismatch: {} vs {} latent rows, {} labels",
            latents_a.nrows(),
            latents_b.nrows(),
            labels.len()
        )));
    }
    if latents_a.nrows() == 0 {
        return Err(Error::Validation("batch loss over empty batch".into()));
    }
    if latents_a.ncols() != latents_b.ncols() {
        return Err(Error::Validation(format!(
            "batch loss dimension mismatch: {} vs {}",
            latents_a.ncols(),
            latents_b.ncols()
        )));
    }
    Ok(())
}

/// Weighted contrastive loss over a batch of pairs: the mean of the per-pair
/// losses, with each pair's margin chosen by the configured mode.
pub fn weighted_contrastive_batch_loss(
    latents_a: ArrayView2<f64>,
    latents_b: ArrayView2<f64>,
    labels: &[PairLabel],
    cfg: &LossConfig,
) -> Result<f64> {
    check_batch_shapes(&latents_a, &latents_b, labels)?;
    cfg.validate()?;
    let mut sum = 0.0;
    for (k, label) in labels.iter().enumerate() {
        let d = euclidean_distance(latents_a.row(k), latents_b.row(k))?;
        sum += contrastive_pair_loss(d, label.same(), cfg.margin_for(label));
    }
    Ok(sum / labels.len() as f64)
}

/// Gradient of [`weighted_contrastive_batch_loss`] with respect to both
/// latent matrices.
pub fn weighted_contrastive_batch_grad(
    latents_a: ArrayView2<f64>,
    latents_b: ArrayView2<f64>,
    labels: &[PairLabel],
    cfg: &LossConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_batch_shapes(&latents_a, &latents_b, labels)?;
    cfg.validate()?;
    let n = labels.len() as f64;
    let mut ga = Array2::zeros(latents_a.raw_dim());
    let mut gb = Array2::zeros(latents_b.raw_dim());
    for (k, label) in labels.iter().enumerate() {
        let (pa, pb) = contrastive_pair_grad(
            latents_a.row(k),
            latents_b.row(k),
            label.same(),
            cfg.margin_for(label),
        )?;
        for (j, v) in pa.into_iter().enumerate() {
            ga[[k, j]] = v / n;
        }
        for (j, v) in pb.into_iter().enumerate() {
            gb[[k, j]] = v / n;
        }
    }
    Ok((ga, gb))
}

/// Joint loss: the plain sum of the regression and contrastive terms.
pub fn joint_loss(mse: f64, contrastive: f64) -> f64 {
    debug_assert!(mse >= 0.0 && contrastive >= 0.0);
    mse + contrastive
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array1};
    use proptest::prelude::*;
    use rand::Rng;

    use crate::rng::{stream_rng, Stream};

    fn bins5() -> RatingBins {
        RatingBins::new(5).unwrap()
    }

    #[test]
    fn bin_assignment_examples() {
        let b = bins5();
        assert_eq!(assign_bin(0.35, &b).unwrap(), 1);
        assert_eq!(assign_bin(0.0, &b).unwrap(), 0);
        assert_eq!(assign_bin(1.0, &b).unwrap(), 4);
        assert_eq!(assign_bin(0.2, &b).unwrap(), 1);
        assert!(assign_bin(1.5, &b).is_err());
        assert!(assign_bin(-0.1, &b).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[0.5], &[0.5]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());

        // Brute-force re-evaluation on random vectors.
        let mut rng = stream_rng(1, Stream::Data);
        let a: Vec<f64> = (0..33).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..33).map(|_| rng.random::<f64>()).collect();
        let mut expect = 0.0;
        for i in 0..a.len() {
            expect += (a[i] - b[i]) * (a[i] - b[i]);
        }
        expect /= a.len() as f64;
        assert!((mse_loss(&a, &b).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn distance_examples() {
        let v = arr1(&[0.3, -0.2, 0.9]);
        assert_eq!(euclidean_distance(v.view(), v.view()).unwrap(), 0.0);
        let a = arr1(&[0.0, 0.0]);
        let b = arr1(&[3.0, 4.0]);
        assert_eq!(euclidean_distance(a.view(), b.view()).unwrap(), 5.0);
        assert_eq!(
            euclidean_distance(a.view(), b.view()).unwrap(),
            euclidean_distance(b.view(), a.view()).unwrap()
        );
        assert!(euclidean_distance(a.view(), v.view()).is_err());
    }

    #[test]
    fn pair_loss_examples() {
        assert_eq!(contrastive_pair_loss(0.0, true, 1.0), 0.0);
        assert_eq!(contrastive_pair_loss(2.0, false, 1.0), 0.0);
        assert_eq!(contrastive_pair_loss(2.0, true, 1.0), 2.0);
        assert!((contrastive_pair_loss(0.25, false, 1.0) - 0.28125).abs() < 1e-15);
    }

    #[test]
    fn variable_margin_examples() {
        assert_eq!(variable_margin(2, 4, 0.5), 1.0);
        assert_eq!(variable_margin(3, 3, 7.0), 0.0);
        assert_eq!(variable_margin(0, 4, 1.0), 4.0);
        assert_eq!(variable_margin(4, 0, 1.0), 4.0);
    }

    #[test]
    fn margin_gap_ordering_holds() {
        // For a fixed distance below the margin, a 2-bin gap costs at least
        // as much as a 1-bin gap.
        let cfg = LossConfig::default();
        let d = 0.5;
        let l1 = contrastive_pair_loss(d, false, cfg.margin_for(&PairLabel::new(1, 2)));
        let l2 = contrastive_pair_loss(d, false, cfg.margin_for(&PairLabel::new(1, 3)));
        assert!(l2 >= l1);
    }

    #[test]
    fn single_pair_batch_reduces_to_pair_loss() {
        let cfg = LossConfig::default();
        let a = arr2(&[[0.1, 0.7]]);
        let b = arr2(&[[0.4, -0.2]]);
        let label = PairLabel::new(1, 3);
        let batch =
            weighted_contrastive_batch_loss(a.view(), b.view(), &[label], &cfg).unwrap();
        let d = euclidean_distance(a.row(0), b.row(0)).unwrap();
        let single = contrastive_pair_loss(d, false, cfg.margin_for(&label));
        assert_eq!(batch, single);
    }

    #[test]
    fn identical_same_bin_batch_is_zero() {
        let cfg = LossConfig::default();
        let a = arr2(&[[0.1, 0.7], [0.3, 0.3]]);
        let labels = vec![PairLabel::new(2, 2), PairLabel::new(0, 0)];
        let loss =
            weighted_contrastive_batch_loss(a.view(), a.view(), &labels, &cfg).unwrap();
        assert_eq!(loss, 0.0);
    }

    /// Independent scalar-loop oracle for the batch loss, written directly
    /// from the pair-loss and margin definitions without shared code.
    fn batch_loss_oracle(
        a: &Array2<f64>,
        b: &Array2<f64>,
        labels: &[PairLabel],
        cfg: &LossConfig,
    ) -> f64 {
        let mut total = 0.0;
        for k in 0..labels.len() {
            let mut sq = 0.0;
            for j in 0..a.ncols() {
                let diff = a[[k, j]] - b[[k, j]];
                sq += diff * diff;
            }
            let dist = sq.sqrt();
            let xi = labels[k].bin_a as f64;
            let xj = labels[k].bin_b as f64;
            let m = match cfg.mode {
                MarginMode::FixedMargin => cfg.margin,
                MarginMode::VariableMargin => (xi - xj).abs() * cfg.margin,
            };
            let y = if labels[k].bin_a == labels[k].bin_b { 1.0 } else { 0.0 };
            let hinge = if m - dist > 0.0 { m - dist } else { 0.0 };
            total += 0.5 * y * dist * dist + 0.5 * (1.0 - y) * hinge * hinge;
        }
        total / labels.len() as f64
    }

    #[test]
    fn batch_loss_matches_scalar_oracle() {
        let mut rng = stream_rng(11, Stream::Data);
        for case in 0..50 {
            let n = rng.random_range(1..=64);
            let dim = rng.random_range(1..=16);
            let bins = [3usize, 5, 10][case % 3];
            let cfg = LossConfig {
                margin: [0.5, 1.0, 2.0][case % 3],
                bins,
                mode: if case % 2 == 0 {
                    MarginMode::VariableMargin
                } else {
                    MarginMode::FixedMargin
                },
                contrastive_weight: 1.0,
            };
            let a = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() * 4.0 - 2.0);
            let b = Array2::from_shape_fn((n, dim), |_| rng.random::<f64>() * 4.0 - 2.0);
            let labels: Vec<PairLabel> = (0..n)
                .map(|_| PairLabel::new(rng.random_range(0..bins), rng.random_range(0..bins)))
                .collect();
            let got =
                weighted_contrastive_batch_loss(a.view(), b.view(), &labels, &cfg).unwrap();
            let want = batch_loss_oracle(&a, &b, &labels, &cfg);
            assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
        }
    }

    #[test]
    fn joint_loss_examples() {
        assert_eq!(joint_loss(0.0, 0.0), 0.0);
        assert_eq!(joint_loss(0.3, 0.7), 1.0);
    }

    #[test]
    fn pair_grad_matches_finite_differences() {
        let mut rng = stream_rng(5, Stream::Data);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 64 {
            let dim = rng.random_range(2..=8);
            let a: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0);
            let b: Array1<f64> = Array1::from_shape_fn(dim, |_| rng.random::<f64>() * 2.0 - 1.0);
            let same = rng.random::<bool>();
            let margin = rng.random_range(0.5..2.0);
            let d = euclidean_distance(a.view(), b.view()).unwrap();
            if d < 1e-3 || (d - margin).abs() < 1e-3 {
                continue;
            }
            let (ga, gb) = contrastive_pair_grad(a.view(), b.view(), same, margin).unwrap();
            for j in 0..dim {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[j] += h;
                am[j] -= h;
                let lp = contrastive_pair_loss(
                    euclidean_distance(ap.view(), b.view()).unwrap(),
                    same,
                    margin,
                );
                let lm = contrastive_pair_loss(
                    euclidean_distance(am.view(), b.view()).unwrap(),
                    same,
                    margin,
                );
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(ga[j].abs()).max(1e-8);
                assert!(
                    ((fd - ga[j]) / denom).abs() < 1e-4,
                    "grad a[{j}]: analytic {} vs fd {fd}",
                    ga[j]
                );
                let mut bp = b.clone();
                bp[j] += h;
                let lbp = contrastive_pair_loss(
                    euclidean_distance(a.view(), bp.view()).unwrap(),
                    same,
                    margin,
                );
                let mut bm = b.clone();
                bm[j] -= h;
                let lbm = contrastive_pair_loss(
                    euclidean_distance(a.view(), bm.view()).unwrap(),
                    same,
                    margin,
                );
                let fdb = (lbp - lbm) / (2.0 * h);
                let denomb = fdb.abs().max(gb[j].abs()).max(1e-8);
                assert!(((fdb - gb[j]) / denomb).abs() < 1e-4);
            }
            checked += 1;
        }
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(d in 0.0f64..10.0, same in any::<bool>(), m in 0.0f64..5.0) {
            prop_assert!(contrastive_pair_loss(d, same, m) >= 0.0);
        }

        #[test]
        fn dissimilar_loss_vanishes_past_margin(d in 0.0f64..10.0, m in 0.0f64..5.0) {
            let l = contrastive_pair_loss(d, false, m);
            if d >= m {
                prop_assert_eq!(l, 0.0);
            } else {
                // Non-increasing in D below the margin.
                let l2 = contrastive_pair_loss(d + 0.01, false, m);
                prop_assert!(l2 <= l);
            }
        }

        #[test]
        fn same_bin_pairs_ignore_margin_mode(d in 0.0f64..5.0, bin in 0usize..5) {
            let label = PairLabel::new(bin, bin);
            let fixed = LossConfig { mode: MarginMode::FixedMargin, ..LossConfig::default() };
            let var = LossConfig { mode: MarginMode::VariableMargin, ..LossConfig::default() };
            let lf = contrastive_pair_loss(d, label.same(), fixed.margin_for(&label));
            let lv = contrastive_pair_loss(d, label.same(), var.margin_for(&label));
            prop_assert_eq!(lf, lv);
            prop_assert_eq!(lf, 0.5 * d * d);
        }

        #[test]
        fn joint_dominates_components(mse in 0.0f64..10.0, lc in 0.0f64..10.0) {
            let j = joint_loss(mse, lc);
            prop_assert!(j >= mse && j >= lc);
        }
    }
}
