//! Exact (quadratic) t-SNE for 2-D projection of small latent sets.
//!
//! Gaussian similarities in the input space with a per-point bandwidth found
//! by binary search on the perplexity target, Student-t similarities in the
//! plane, KL-divergence gradient descent with momentum, per-coordinate
//! gains, and early exaggeration. Seeded initialization makes the layout a
//! pure function of (input, perplexity, seed).

use ndarray::ArrayView2;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

const N_ITER: usize = 750;
const EXAGGERATION_ITERS: usize = 100;
const EXAGGERATION: f64 = 12.0;
const LEARNING_RATE: f64 = 200.0;
const INITIAL_MOMENTUM: f64 = 0.5;
const FINAL_MOMENTUM: f64 = 0.8;
const MOMENTUM_SWITCH: usize = 250;
const MIN_PROB: f64 = 1e-12;

fn squared_distances(x: &ArrayView2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = x[[i, k]] - x[[j, k]];
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    out
}

/// Conditional probabilities with per-row beta chosen so the row entropy
/// matches ln(perplexity).
fn conditional_probs(dist_sq: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..64 {
            let mut sum = 0.0;
            for j in 0..n {
                if i == j {
                    p[i * n + j] = 0.0;
                    continue;
                }
                let v = (-beta * dist_sq[i * n + j]).exp();
                p[i * n + j] = v;
                sum += v;
            }
            let mut entropy = 0.0;
            if sum > 0.0 {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let q = p[i * n + j] / sum;
                    p[i * n + j] = q;
                    if q > MIN_PROB {
                        entropy -= q * q.ln();
                    }
                }
            } else {
                // Degenerate row (all far): fall back to uniform.
                let u = 1.0 / (n - 1) as f64;
                for j in 0..n {
                    if i != j {
                        p[i * n + j] = u;
                    }
                }
                break;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() {
                    beta * 2.0
                } else {
                    0.5 * (beta + beta_max)
                };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() {
                    beta * 0.5
                } else {
                    0.5 * (beta + beta_min)
                };
            }
        }
    }
    p
}

/// Project latent vectors to 2-D. Requires at least 4 points and
/// perplexity in (0, (n - 1) / 3).
pub fn project_2d(
    latents: ArrayView2<f64>,
    perplexity: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    let n = latents.nrows();
    if n < 4 {
        return Err(Error::Validation(format!(
            "projection needs at least 4 points, got {n}"
        )));
    }
    let limit = (n as f64 - 1.0) / 3.0;
    if !perplexity.is_finite() || perplexity <= 0.0 || perplexity >= limit {
        return Err(Error::Validation(format!(
            "perplexity {perplexity} outside (0, {limit}) for {n} points"
        )));
    }

    let dist_sq = squared_distances(&latents);
    let cond = conditional_probs(&dist_sq, n, perplexity);
    // Symmetrize and normalize to a joint distribution.
    let mut p = vec![0.0; n * n];
    let norm = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / norm).max(MIN_PROB);
        }
        p[i * n + i] = MIN_PROB;
    }

    let mut rng = stream_rng(seed, Stream::Projection);
    let normal = Normal::new(0.0, 1e-4).expect("init distribution");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut q = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    for iter in 0..N_ITER {
        let exaggeration = if iter < EXAGGERATION_ITERS {
            EXAGGERATION
        } else {
            1.0
        };

        // Student-t similarities in the plane.
        let mut q_sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let w = 1.0 / (1.0 + dx * dx + dy * dy);
                q[i * n + j] = w;
                q[j * n + i] = w;
                q_sum += 2.0 * w;
            }
        }

        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = q[i * n + j];
                let qij = (w / q_sum).max(MIN_PROB);
                let factor = 4.0 * (exaggeration * p[i * n + j] - qij) * w;
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                grad[2 * i] += factor * dx;
                grad[2 * i + 1] += factor * dy;
            }
        }

        let momentum = if iter < MOMENTUM_SWITCH {
            INITIAL_MOMENTUM
        } else {
            FINAL_MOMENTUM
        };
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) == (velocity[k] > 0.0) {
                (gains[k] * 0.8).max(0.01)
            } else {
                gains[k] + 0.2
            };
            velocity[k] = momentum * velocity[k] - LEARNING_RATE * gains[k] * grad[k];
            y[k] += velocity[k];
        }

        // Keep the embedding centered.
        let (mut cx, mut cy) = (0.0, 0.0);
        for i in 0..n {
            cx += y[2 * i];
            cy += y[2 * i + 1];
        }
        cx /= n as f64;
        cy /= n as f64;
        for i in 0..n {
            y[2 * i] -= cx;
            y[2 * i + 1] -= cy;
        }
    }

    Ok((0..n).map(|i| [y[2 * i], y[2 * i + 1]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn cardinality_and_determinism() {
        let x = Array2::from_shape_fn((12, 5), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let a = project_2d(x.view(), 3.0, 4).unwrap();
        let b = project_2d(x.view(), 3.0, 4).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        let c = project_2d(x.view(), 3.0, 5).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = Array2::zeros((3, 4));
        assert!(project_2d(x.view(), 1.0, 0).is_err());
        let x = Array2::zeros((10, 4));
        assert!(project_2d(x.view(), 3.0, 0).is_err()); // perplexity == (n-1)/3
        assert!(project_2d(x.view(), 0.0, 0).is_err());
    }

    /// Mean silhouette of a 2-cluster labeling in the plane; used as an
    /// independent quality oracle for the projection.
    fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
        let n = points.len();
        let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let mut total = 0.0;
        for i in 0..n {
            let (mut same_sum, mut same_n, mut other_sum, mut other_n) = (0.0, 0usize, 0.0, 0usize);
            for j in 0..n {
                if i == j {
                    continue;
                }
                if labels[i] == labels[j] {
                    same_sum += dist(points[i], points[j]);
                    same_n += 1;
                } else {
                    other_sum += dist(points[i], points[j]);
                    other_n += 1;
                }
            }
            let a = same_sum / same_n.max(1) as f64;
            let b = other_sum / other_n.max(1) as f64;
            total += (b - a) / a.max(b);
        }
        total / n as f64
    }

    #[test]
    fn separates_two_far_gaussian_blobs() {
        let mut rng = crate::rng::stream_rng(2, crate::rng::Stream::Data);
        let n_per = 15;
        let dim = 8;
        let mut data = Array2::zeros((2 * n_per, dim));
        let mut labels = Vec::new();
        for i in 0..2 * n_per {
            let blob = i / n_per;
            labels.push(blob);
            for j in 0..dim {
                let center = if blob == 0 { -10.0 } else { 10.0 };
                data[[i, j]] = center + rng.random::<f64>();
            }
        }
        let points = project_2d(data.view(), 5.0, 7).unwrap();
        let s = silhouette(&points, &labels);
        assert!(s > 0.0, "silhouette {s}");
    }
}
