//! Minimal 1-D neural network layers with hand-derived backward passes.
//!
//! All math runs in f64. Learnable parameters and batch-norm running
//! statistics are kept on the f32 grid (every stored value is exactly
//! representable as f32) so the f32 checkpoint format round-trips
//! bit-exactly; [`quantize`] is applied after every in-place update.

use ndarray::{Array1, Array2, Array3};

/// Snap a value to the f32 grid.
#[inline]
pub fn quantize(v: f64) -> f64 {
    (v as f32) as f64
}

/// 1-D convolution, no padding, fixed stride. Weight layout [out, in, k].
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
    pub stride: usize,
}

impl Conv1d {
    pub fn out_len(&self, in_len: usize) -> usize {
        let k = self.weight.dim().2;
        debug_assert!(in_len >= k);
        (in_len - k) / self.stride + 1
    }

    pub fn forward(&self, x: &Array3<f64>) -> Array3<f64> {
        let (bsz, cin, tin) = x.dim();
        let (cout, cin_w, k) = self.weight.dim();
        debug_assert_eq!(cin, cin_w);
        let tout = self.out_len(tin);
        let mut y = Array3::zeros((bsz, cout, tout));
        let xs = x.as_slice().expect("contiguous input");
        let ws = self.weight.as_slice().expect("contiguous weight");
        let ys = y.as_slice_mut().expect("contiguous output");
        for b in 0..bsz {
            for o in 0..cout {
                let y_base = (b * cout + o) * tout;
                let bias = self.bias[o];
                for t in 0..tout {
                    let mut acc = bias;
                    for i in 0..cin {
                        let x_base = (b * cin + i) * tin + t * self.stride;
                        let w_base = (o * cin + i) * k;
                        let xr = &xs[x_base..x_base + k];
                        let wr = &ws[w_base..w_base + k];
                        let mut s = 0.0;
                        for j in 0..k {
                            s += xr[j] * wr[j];
                        }
                        acc += s;
                    }
                    ys[y_base + t] = acc;
                }
            }
        }
        y
    }

    /// Returns (grad_input, grad_weight, grad_bias).
    pub fn backward(
        &self,
        x: &Array3<f64>,
        grad_out: &Array3<f64>,
    ) -> (Array3<f64>, Array3<f64>, Array1<f64>) {
        let (bsz, cin, tin) = x.dim();
        let (cout, _, k) = self.weight.dim();
        let tout = grad_out.dim().2;
        let mut gx = Array3::zeros((bsz, cin, tin));
        let mut gw = Array3::zeros(self.weight.raw_dim());
        let mut gb = Array1::zeros(cout);
        let xs = x.as_slice().expect("contiguous input");
        let ws = self.weight.as_slice().expect("contiguous weight");
        let gys = grad_out.as_slice().expect("contiguous grad");
        let gxs = gx.as_slice_mut().expect("contiguous grad input");
        let gws = gw.as_slice_mut().expect("contiguous grad weight");
        for b in 0..bsz {
            for o in 0..cout {
                let gy_base = (b * cout + o) * tout;
                let mut gb_acc = 0.0;
                for t in 0..tout {
                    let g = gys[gy_base + t];
                    if g == 0.0 {
                        continue;
                    }
                    gb_acc += g;
                    for i in 0..cin {
                        let x_base = (b * cin + i) * tin + t * self.stride;
                        let w_base = (o * cin + i) * k;
                        for j in 0..k {
                            gws[w_base + j] += g * xs[x_base + j];
                            gxs[x_base + j] += g * ws[w_base + j];
                        }
                    }
                }
                gb[o] += gb_acc;
            }
        }
        (gx, gw, gb)
    }
}

/// Per-channel batch normalization over (batch, time). Training mode uses
/// per-batch statistics; inference uses the accumulated running averages
/// (momentum 0.1, unbiased variance in the running estimate).
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug)]
pub struct BnCache {
    pub xhat: Array3<f64>,
    pub inv_std: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward_train(&mut self, x: &Array3<f64>) -> (Array3<f64>, BnCache) {
        let (bsz, channels, tlen) = x.dim();
        let n = (bsz * tlen) as f64;
        let mut y = Array3::zeros(x.raw_dim());
        let mut xhat = Array3::zeros(x.raw_dim());
        let mut inv_std = vec![0.0; channels];
        let xs = x.as_slice().expect("contiguous input");
        let ys = y.as_slice_mut().expect("contiguous output");
        let xh = xhat.as_slice_mut().expect("contiguous xhat");
        #[allow(clippy::needless_range_loop)]
        for c in 0..channels {
            let mut sum = 0.0;
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for v in &xs[base..base + tlen] {
                    sum += v;
                }
            }
            let mean = sum / n;
            let mut var_sum = 0.0;
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for v in &xs[base..base + tlen] {
                    let d = v - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = istd;
            let (g, bta) = (self.gamma[c], self.beta[c]);
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for t in 0..tlen {
                    let h = (xs[base + t] - mean) * istd;
                    xh[base + t] = h;
                    ys[base + t] = g * h + bta;
                }
            }
            let unbiased = if n > 1.0 { var * n / (n - 1.0) } else { var };
            self.running_mean[c] =
                quantize((1.0 - self.momentum) * self.running_mean[c] + self.momentum * mean);
            self.running_var[c] =
                quantize((1.0 - self.momentum) * self.running_var[c] + self.momentum * unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array3<f64>) -> Array3<f64> {
        let (bsz, channels, tlen) = x.dim();
        let mut y = Array3::zeros(x.raw_dim());
        let xs = x.as_slice().expect("contiguous input");
        let ys = y.as_slice_mut().expect("contiguous output");
        for c in 0..channels {
            let istd = 1.0 / (self.running_var[c] + self.eps).sqrt();
            let (g, bta, mean) = (self.gamma[c], self.beta[c], self.running_mean[c]);
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for t in 0..tlen {
                    ys[base + t] = g * (xs[base + t] - mean) * istd + bta;
                }
            }
        }
        y
    }

    /// Returns (grad_input, grad_gamma, grad_beta).
    pub fn backward(
        &self,
        cache: &BnCache,
        grad_out: &Array3<f64>,
    ) -> (Array3<f64>, Array1<f64>, Array1<f64>) {
        let (bsz, channels, tlen) = grad_out.dim();
        let n = (bsz * tlen) as f64;
        let mut gx = Array3::zeros(grad_out.raw_dim());
        let mut ggamma = Array1::zeros(channels);
        let mut gbeta = Array1::zeros(channels);
        let gys = grad_out.as_slice().expect("contiguous grad");
        let xh = cache.xhat.as_slice().expect("contiguous xhat");
        let gxs = gx.as_slice_mut().expect("contiguous grad input");
        for c in 0..channels {
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for t in 0..tlen {
                    let gy = gys[base + t];
                    sum_gy += gy;
                    sum_gy_xhat += gy * xh[base + t];
                }
            }
            gbeta[c] = sum_gy;
            ggamma[c] = sum_gy_xhat;
            let scale = self.gamma[c] * cache.inv_std[c];
            let mean_gy = sum_gy / n;
            let mean_gy_xhat = sum_gy_xhat / n;
            for b in 0..bsz {
                let base = (b * channels + c) * tlen;
                for t in 0..tlen {
                    gxs[base + t] =
                        scale * (gys[base + t] - mean_gy - xh[base + t] * mean_gy_xhat);
                }
            }
        }
        (gx, ggamma, gbeta)
    }
}

/// Fully connected layer, weight layout [out, in].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let (bsz, d_in) = x.dim();
        let (d_out, d_in_w) = self.weight.dim();
        debug_assert_eq!(d_in, d_in_w);
        let mut y = Array2::zeros((bsz, d_out));
        for b in 0..bsz {
            for o in 0..d_out {
                let mut acc = self.bias[o];
                for i in 0..d_in {
                    acc += self.weight[[o, i]] * x[[b, i]];
                }
                y[[b, o]] = acc;
            }
        }
        y
    }

    /// Returns (grad_input, grad_weight, grad_bias).
    pub fn backward(
        &self,
        x: &Array2<f64>,
        grad_out: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let (bsz, d_in) = x.dim();
        let d_out = self.weight.dim().0;
        let mut gx = Array2::zeros((bsz, d_in));
        let mut gw = Array2::zeros(self.weight.raw_dim());
        let mut gb = Array1::zeros(d_out);
        for b in 0..bsz {
            for o in 0..d_out {
                let gy = grad_out[[b, o]];
                if gy == 0.0 {
                    continue;
                }
                gb[o] += gy;
                for i in 0..d_in {
                    gw[[o, i]] += gy * x[[b, i]];
                    gx[[b, i]] += gy * self.weight[[o, i]];
                }
            }
        }
        (gx, gw, gb)
    }
}

pub fn relu3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// ReLU backward given the forward *output* (mask is output > 0).
pub fn relu3_backward(out: &Array3<f64>, grad_out: &Array3<f64>) -> Array3<f64> {
    let mut gx = grad_out.clone();
    ndarray::Zip::from(&mut gx).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

pub fn relu2(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu2_backward(out: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut gx = grad_out.clone();
    ndarray::Zip::from(&mut gx).and(out).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    gx
}

/// Global average pooling over the time axis: [B, C, T] -> [B, C].
pub fn global_avg_pool(x: &Array3<f64>) -> Array2<f64> {
    let (bsz, channels, tlen) = x.dim();
    let mut y = Array2::zeros((bsz, channels));
    let xs = x.as_slice().expect("contiguous input");
    for b in 0..bsz {
        for c in 0..channels {
            let base = (b * channels + c) * tlen;
            let acc: f64 = xs[base..base + tlen].iter().sum();
            y[[b, c]] = acc / tlen as f64;
        }
    }
    y
}

pub fn global_avg_pool_backward(grad_out: &Array2<f64>, tlen: usize) -> Array3<f64> {
    let (bsz, channels) = grad_out.dim();
    let mut gx = Array3::zeros((bsz, channels, tlen));
    let gxs = gx.as_slice_mut().expect("contiguous grad input");
    for b in 0..bsz {
        for c in 0..channels {
            let g = grad_out[[b, c]] / tlen as f64;
            let base = (b * channels + c) * tlen;
            for v in gxs[base..base + tlen].iter_mut() {
                *v = g;
            }
        }
    }
    gx
}

/// Logistic function kept strictly inside (0, 1): plain f64 evaluation
/// rounds to exactly 1.0 once v >= ~37 and underflows to 0.0 below ~-745.
pub fn sigmoid(v: f64) -> f64 {
    let s = 1.0 / (1.0 + (-v).exp());
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr3;

    #[test]
    fn conv_forward_matches_hand_computation() {
        // One batch, one input channel, kernel 2, stride 1.
        let conv = Conv1d {
            weight: arr3(&[[[1.0, -1.0]], [[0.5, 0.5]]]),
            bias: Array1::from(vec![0.0, 1.0]),
            stride: 1,
        };
        let x = arr3(&[[[1.0, 2.0, 4.0]]]);
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (1, 2, 2));
        assert_eq!(y[[0, 0, 0]], -1.0); // 1 - 2
        assert_eq!(y[[0, 0, 1]], -2.0); // 2 - 4
        assert_eq!(y[[0, 1, 0]], 2.5); // 1 + (1+2)/2
        assert_eq!(y[[0, 1, 1]], 4.0); // 1 + (2+4)/2
    }

    #[test]
    fn conv_stride_shrinks_output() {
        let conv = Conv1d {
            weight: Array3::ones((1, 1, 7)),
            bias: Array1::zeros(1),
            stride: 3,
        };
        assert_eq!(conv.out_len(1000), 332);
        assert_eq!(conv.out_len(332), 109);
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut bn = BatchNorm1d::new(1);
        let x = arr3(&[[[1.0, 2.0]], [[3.0, 4.0]]]);
        let (y, _) = bn.forward_train(&x);
        let mean: f64 = y.iter().sum::<f64>() / 4.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
        // Running stats moved toward the batch statistics.
        assert!(bn.running_mean[0] > 0.0);
    }

    #[test]
    fn batchnorm_eval_is_per_sample() {
        let bn = BatchNorm1d::new(1);
        let single = arr3(&[[[0.7, -0.3]]]);
        let pair = arr3(&[[[0.7, -0.3]], [[5.0, 5.0]]]);
        let y1 = bn.forward_eval(&single);
        let y2 = bn.forward_eval(&pair);
        assert_eq!(y1[[0, 0, 0]], y2[[0, 0, 0]]);
        assert_eq!(y1[[0, 0, 1]], y2[[0, 0, 1]]);
    }

    #[test]
    fn pooling_round_trip() {
        let x = arr3(&[[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]]);
        let y = global_avg_pool(&x);
        assert_eq!(y[[0, 0]], 2.0);
        assert_eq!(y[[0, 1]], 5.0);
        let gx = global_avg_pool_backward(&y, 3);
        assert!((gx[[0, 0, 0]] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn quantize_is_idempotent() {
        let v = 0.1234567890123_f64;
        let q = quantize(v);
        assert_ne!(v, q);
        assert_eq!(quantize(q), q);
    }
}
