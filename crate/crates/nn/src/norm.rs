use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

const EPS: f64 = 1e-5;

#[derive(Debug)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

/// Normalize each `(sample, channel)` plane to zero mean and unit variance.
/// No affine parameters and no running statistics.
pub fn instance_norm_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, NormCache<T>) {
    let (b, c, h, w) = x.dims4();
    let hw = h * w;
    let n = T::from_usize(hw).unwrap();
    let eps = T::lit(EPS);
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(b * c);
    for (plane, out) in x.data().chunks(hw).zip(xhat.chunks_mut(hw)) {
        let mean = plane.iter().copied().sum::<T>() / n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = (var + eps).sqrt().recip();
        for (o, &v) in out.iter_mut().zip(plane) {
            *o = (v - mean) * inv;
        }
        inv_std.push(inv);
    }
    let y = Tensor::from_vec(x.shape(), xhat.clone()).expect("shape");
    (y, NormCache { xhat, inv_std })
}

pub fn instance_norm_backward<T: Real>(cache: NormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = dy.dims4();
    let hw = h * w;
    let n = T::from_usize(hw).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    for (((g, xh), out), &inv) in dy
        .data()
        .chunks(hw)
        .zip(cache.xhat.chunks(hw))
        .zip(dx.chunks_mut(hw))
        .zip(&cache.inv_std)
    {
        let sum_g: T = g.iter().copied().sum();
        let sum_gx: T = g.iter().zip(xh).map(|(&a, &b)| a * b).sum();
        let scale = inv / n;
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o = scale * (n * gi - sum_g - xi * sum_gx);
        }
    }
    Tensor::from_vec(dy.shape(), dx).expect("shape")
}

/// Batch normalization over `(batch, h, w)` per channel with affine
/// parameters and running statistics for evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
}

#[derive(Debug)]
pub struct BatchNormCache<T> {
    norm: NormCache<T>,
    batch_mean: Vec<T>,
    batch_var_unbiased: Vec<T>,
    shape: Vec<usize>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
        }
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, BatchNormCache<T>) {
        let (b, c, h, w) = x.dims4();
        let hw = h * w;
        let count = b * hw;
        let n = T::from_usize(count).unwrap();
        let eps = T::lit(EPS);
        let data = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ci in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s = s + data[(bi * c + ci) * hw..][..hw].iter().copied().sum::<T>();
            }
            mean[ci] = s / n;
            let mut v = T::zero();
            for bi in 0..b {
                v = v + data[(bi * c + ci) * hw..][..hw]
                    .iter()
                    .map(|&x| (x - mean[ci]) * (x - mean[ci]))
                    .sum::<T>();
            }
            var[ci] = v / n;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * hw;
                let (g, bt) = (self.gamma.value.data()[ci], self.beta.value.data()[ci]);
                for i in off..off + hw {
                    let xh = (data[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = xh;
                    y[i] = g * xh + bt;
                }
            }
        }
        let unbiased = if count > 1 {
            T::from_usize(count).unwrap() / T::from_usize(count - 1).unwrap()
        } else {
            T::one()
        };
        let cache = BatchNormCache {
            norm: NormCache { xhat, inv_std },
            batch_mean: mean,
            batch_var_unbiased: var.iter().map(|&v| v * unbiased).collect(),
            shape: x.shape().to_vec(),
        };
        (Tensor::from_vec(x.shape(), y).expect("shape"), cache)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let (b, c, h, w) = x.dims4();
        let hw = h * w;
        let eps = T::lit(EPS);
        let mut y = x.clone();
        for bi in 0..b {
            for ci in 0..c {
                let inv = (self.running_var.data()[ci] + eps).sqrt().recip();
                let scale = self.gamma.value.data()[ci] * inv;
                let shift = self.beta.value.data()[ci] - self.running_mean.data()[ci] * scale;
                for v in &mut y.data_mut()[(bi * c + ci) * hw..][..hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        for (r, &bm) in self.running_mean.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = keep * *r + m * bm;
        }
        for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&cache.batch_var_unbiased) {
            *r = keep * *r + m * bv;
        }
    }

    pub fn backward(&mut self, cache: BatchNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let (b, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
        let hw = h * w;
        let n = T::from_usize(b * hw).unwrap();
        let g = dy.data();
        let xhat = &cache.norm.xhat;
        let mut dx = vec![T::zero(); dy.len()];
        for ci in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for bi in 0..b {
                let off = (bi * c + ci) * hw;
                for i in off..off + hw {
                    sum_g = sum_g + g[i];
                    sum_gx = sum_gx + g[i] * xhat[i];
                }
            }
            self.gamma.grad.data_mut()[ci] = self.gamma.grad.data()[ci] + sum_gx;
            self.beta.grad.data_mut()[ci] = self.beta.grad.data()[ci] + sum_g;
            let gamma = self.gamma.value.data()[ci];
            let scale = gamma * cache.norm.inv_std[ci] / n;
            for bi in 0..b {
                let off = (bi * c + ci) * hw;
                for i in off..off + hw {
                    dx[i] = scale * (n * g[i] - sum_g - xhat[i] * sum_gx);
                }
            }
        }
        Tensor::from_vec(dy.shape(), dx).expect("shape")
    }
}

impl<T: Real> Parameters<T> for BatchNorm2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.gamma);
        f(&join(prefix, "bias"), &mut self.beta);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_norm_planes_have_zero_mean_unit_variance() {
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap();
        let (y, _) = instance_norm_forward(&x);
        for plane in y.data().chunks(4) {
            let mean: f64 = plane.iter().sum::<f64>() / 4.0;
            let var: f64 = plane.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let (_, cache) = bn.forward_train(&x);
        bn.update_running(&cache);
        assert!((bn.running_mean.data()[0] - 0.3).abs() < 1e-12);
        // unbiased variance of {0,2,4,6} is 20/3
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        let y = bn.forward_eval(&Tensor::from_vec(&[1, 1, 1, 1], vec![0.3]).unwrap());
        assert!(y.data()[0].abs() < 1e-12);
    }
}
