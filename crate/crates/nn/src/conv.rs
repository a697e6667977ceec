use rand::Rng;

use crate::error::Result;
use crate::init::Init;
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::{matmul, Tensor};

/// Geometry of a strided, zero-padded square-kernel convolution from an
/// `h×w` input to an `out_h×out_w` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        let span_h = (h + 2 * pad).checked_sub(kernel)?;
        let span_w = (w + 2 * pad).checked_sub(kernel)?;
        Some(Self {
            channels,
            h,
            w,
            kernel,
            stride,
            pad,
            out_h: span_h / stride + 1,
            out_w: span_w / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }
}

/// Output positions `lo..hi` along one axis whose tap at kernel offset `k`
/// lands inside `0..len`.
fn valid_range(len: usize, out: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if len + pad > k { ((len - 1 + pad - k) / stride + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

/// Unfold `[batch, c, h, w]` into `[c·k·k, batch·out_h·out_w]`.
pub fn im2col<T: Real>(input: &[T], batch: usize, g: &ConvGeometry) -> Vec<T> {
    let mut cols = vec![T::zero(); g.rows() * batch * g.out_h * g.out_w];
    im2col_into(input, batch, g, &mut cols);
    cols
}

/// [`im2col`] into a caller-provided buffer; every entry is overwritten.
pub fn im2col_into<T: Real>(input: &[T], batch: usize, g: &ConvGeometry, cols: &mut [T]) {
    let cols_per_img = g.out_h * g.out_w;
    let ncols = batch * cols_per_img;
    assert_eq!(cols.len(), g.rows() * ncols);
    let (k, s) = (g.kernel, g.stride);
    for c in 0..g.channels {
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(g.h, g.out_h, s, g.pad, ky);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(g.w, g.out_w, s, g.pad, kx);
                let row = (c * k + ky) * k + kx;
                let row_buf = &mut cols[row * ncols..(row + 1) * ncols];
                if ox_lo >= ox_hi || oy_lo >= oy_hi {
                    row_buf.fill(T::zero());
                    continue;
                }
                let ix0 = ox_lo * s + kx - g.pad;
                for b in 0..batch {
                    let plane = &input[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    let img_buf = &mut row_buf[b * cols_per_img..][..cols_per_img];
                    img_buf[..oy_lo * g.out_w].fill(T::zero());
                    img_buf[oy_hi * g.out_w..].fill(T::zero());
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - g.pad;
                        let src = &plane[iy * g.w + ix0..];
                        let line = &mut img_buf[oy * g.out_w..][..g.out_w];
                        line[..ox_lo].fill(T::zero());
                        line[ox_hi..].fill(T::zero());
                        let dst = &mut line[ox_lo..ox_hi];
                        if s == 1 {
                            dst.copy_from_slice(&src[..dst.len()]);
                        } else {
                            for (d, v) in dst.iter_mut().zip(src.iter().step_by(s)) {
                                *d = *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `[batch, c, h, w]`.
pub fn col2im<T: Real>(cols: &[T], batch: usize, g: &ConvGeometry, out: &mut [T]) {
    let cols_per_img = g.out_h * g.out_w;
    let ncols = batch * cols_per_img;
    let (k, s) = (g.kernel, g.stride);
    for c in 0..g.channels {
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(g.h, g.out_h, s, g.pad, ky);
            for kx in 0..k {
                let (ox_lo, ox_hi) = valid_range(g.w, g.out_w, s, g.pad, kx);
                if ox_lo >= ox_hi {
                    continue;
                }
                let ix0 = ox_lo * s + kx - g.pad;
                let row = (c * k + ky) * k + kx;
                let row_buf = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..batch {
                    let plane = &mut out[(b * g.channels + c) * g.h * g.w..][..g.h * g.w];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - g.pad;
                        let dst = &mut plane[iy * g.w + ix0..];
                        let src = &row_buf[b * cols_per_img + oy * g.out_w + ox_lo..][..ox_hi - ox_lo];
                        if s == 1 {
                            for (d, v) in dst[..src.len()].iter_mut().zip(src) {
                                *d = *d + *v;
                            }
                        } else {
                            for (d, v) in dst.iter_mut().step_by(s).zip(src) {
                                *d = *d + *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], batch: usize, hw: usize) {
    let c = bias.len();
    for b in 0..batch {
        for (ci, &bv) in bias.iter().enumerate() {
            for v in &mut out[(b * c + ci) * hw..][..hw] {
                *v = *v + bv;
            }
        }
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &[T], batch: usize, hw: usize) {
    let c = grad.len();
    for b in 0..batch {
        for (ci, g) in grad.iter_mut().enumerate() {
            let s: T = dy[(b * c + ci) * hw..][..hw].iter().copied().sum();
            *g = *g + s;
        }
    }
}

/// 2-D convolution with square kernel and zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug)]
pub struct ConvCache<T> {
    input: Tensor<T>,
    geom: ConvGeometry,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [out_ch, in_ch, kernel, kernel];
        let fan_in = in_ch * kernel * kernel;
        let fan_out = out_ch * kernel * kernel;
        Self {
            weight: Param::new(init.sample(&shape, fan_in, fan_out, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_ch]))),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        ConvGeometry::new(self.in_channels(), h, w, self.kernel(), self.stride, self.pad).ok_or_else(|| {
            crate::NnError::Invalid(format!(
                "kernel {} does not fit a {h}x{w} input with padding {}",
                self.kernel(),
                self.pad
            ))
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (batch, c, h, w) = x.dims4();
        if c != self.in_channels() {
            return Err(crate::NnError::Shape {
                expected: vec![batch, self.in_channels(), h, w],
                actual: x.shape().to_vec(),
            });
        }
        let geom = self.geometry(h, w)?;
        let cout = self.out_channels();
        let hw = geom.out_h * geom.out_w;
        let in_len = c * h * w;
        let mut y = vec![T::zero(); batch * cout * hw];
        let mut cols = vec![T::zero(); geom.rows() * hw];
        // One sample at a time keeps the unfolded columns cache-sized.
        for b in 0..batch {
            im2col_into(&x.data()[b * in_len..][..in_len], 1, &geom, &mut cols);
            let yb = &mut y[b * cout * hw..][..cout * hw];
            matmul(self.weight.value.data(), false, &cols, false, cout, geom.rows(), hw, yb, T::zero());
        }
        if let Some(bias) = &self.bias {
            add_bias(&mut y, bias.value.data(), batch, hw);
        }
        let y = Tensor::from_vec(&[batch, cout, geom.out_h, geom.out_w], y)?;
        Ok((y, ConvCache { input: x.clone(), geom }))
    }

    pub fn backward(&mut self, cache: ConvCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ConvCache { input, geom } = cache;
        let batch = input.shape()[0];
        let cout = self.out_channels();
        let hw = geom.out_h * geom.out_w;
        let in_len = geom.channels * geom.h * geom.w;
        if let Some(bias) = &mut self.bias {
            accumulate_bias_grad(bias.grad.data_mut(), dy.data(), batch, hw);
        }
        let mut dx = Tensor::zeros(&[batch, geom.channels, geom.h, geom.w]);
        let mut dcols = vec![T::zero(); geom.rows() * hw];
        let mut cols = vec![T::zero(); geom.rows() * hw];
        for b in 0..batch {
            im2col_into(&input.data()[b * in_len..][..in_len], 1, &geom, &mut cols);
            let dyb = &dy.data()[b * cout * hw..][..cout * hw];
            // dW += dY · colsᵀ
            matmul(dyb, false, &cols, true, cout, hw, geom.rows(), self.weight.grad.data_mut(), T::one());
            // dcols = Wᵀ · dY
            matmul(self.weight.value.data(), true, dyb, false, geom.rows(), cout, hw, &mut dcols, T::zero());
            col2im(&dcols, 1, &geom, &mut dx.data_mut()[b * in_len..][..in_len]);
        }
        dx
    }
}

impl<T: Real> Parameters<T> for Conv2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Transposed convolution (fractionally strided), weight `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
    pub output_pad: usize,
}

#[derive(Debug)]
pub struct ConvTransposeCache<T> {
    input: Tensor<T>,
    geom: ConvGeometry,
}

impl<T: Real> ConvTranspose2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [in_ch, out_ch, kernel, kernel];
        Self {
            weight: Param::new(init.sample(&shape, out_ch * kernel * kernel, in_ch * kernel * kernel, rng)),
            bias: bias.then(|| Param::new(Tensor::zeros(&[out_ch]))),
            stride,
            pad,
            output_pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        let k = self.weight.value.shape()[2];
        let grow = |n: usize| ((n - 1) * self.stride + k + self.output_pad).checked_sub(2 * self.pad);
        let (Some(out_h), Some(out_w)) = (grow(h), grow(w)) else {
            return Err(crate::NnError::Invalid("transposed convolution output would be empty".into()));
        };
        // Geometry of the forward convolution this layer is the adjoint of.
        let g = ConvGeometry::new(self.out_channels(), out_h, out_w, k, self.stride, self.pad)
            .ok_or_else(|| crate::NnError::Invalid("invalid transposed convolution geometry".into()))?;
        debug_assert_eq!((g.out_h, g.out_w), (h, w));
        Ok(g)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvTransposeCache<T>)> {
        let (batch, c, h, w) = x.dims4();
        if c != self.in_channels() {
            return Err(crate::NnError::Shape {
                expected: vec![batch, self.in_channels(), h, w],
                actual: x.shape().to_vec(),
            });
        }
        let geom = self.geometry(h, w)?;
        let cout = self.out_channels();
        let (in_len, out_len) = (c * h * w, cout * geom.h * geom.w);
        let mut y = Tensor::zeros(&[batch, cout, geom.h, geom.w]);
        let mut cols = vec![T::zero(); geom.rows() * h * w];
        for b in 0..batch {
            let xb = &x.data()[b * in_len..][..in_len];
            matmul(self.weight.value.data(), true, xb, false, geom.rows(), c, h * w, &mut cols, T::zero());
            col2im(&cols, 1, &geom, &mut y.data_mut()[b * out_len..][..out_len]);
        }
        if let Some(bias) = &self.bias {
            add_bias(y.data_mut(), bias.value.data(), batch, geom.h * geom.w);
        }
        Ok((y, ConvTransposeCache { input: x.clone(), geom }))
    }

    pub fn backward(&mut self, cache: ConvTransposeCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let ConvTransposeCache { input, geom } = cache;
        let batch = input.shape()[0];
        if let Some(bias) = &mut self.bias {
            accumulate_bias_grad(bias.grad.data_mut(), dy.data(), batch, geom.h * geom.w);
        }
        let cin = self.in_channels();
        let (h, w) = (geom.out_h, geom.out_w);
        let (in_len, out_len) = (cin * h * w, geom.channels * geom.h * geom.w);
        let mut dx = Tensor::zeros(&[batch, cin, h, w]);
        let mut dcols = vec![T::zero(); geom.rows() * h * w];
        for b in 0..batch {
            im2col_into(&dy.data()[b * out_len..][..out_len], 1, &geom, &mut dcols);
            let xb = &input.data()[b * in_len..][..in_len];
            // dW += X · dcolsᵀ
            matmul(xb, false, &dcols, true, cin, h * w, geom.rows(), self.weight.grad.data_mut(), T::one());
            // dX = W · dcols
            let dxb = &mut dx.data_mut()[b * in_len..][..in_len];
            matmul(self.weight.value.data(), false, &dcols, false, cin, geom.rows(), h * w, dxb, T::zero());
        }
        dx
    }
}

impl<T: Real> Parameters<T> for ConvTranspose2d<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (b, c, h, wd) = x.dims4();
        let (co, _, k, _) = w.dims4();
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut y = Tensor::zeros(&[b, co, oh, ow]);
        for bi in 0..b {
            for o in 0..co {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * c + ci) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((bi * co + o) * oh + oy) * ow + ox] = s;
                    }
                }
            }
        }
        y
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (7, 1, 3), (1, 2, 0)] {
            let conv = Conv2d::<f64>::new(3, 5, k, s, p, false, Init::Normal(0.5), &mut rng);
            let x = random(&[2, 3, 9, 8], &mut rng);
            let (y, _) = conv.forward(&x).unwrap();
            let expected = naive_conv(&x, &conv.weight.value, s, p);
            assert_eq!(y.shape(), expected.shape());
            for (a, b) in y.data().iter().zip(expected.data()) {
                assert!((a - b).abs() < 1e-12, "k={k} s={s} p={p}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = ConvGeometry::new(2, 7, 6, 3, 2, 1).unwrap();
        let x = random(&[3, 2, 7, 6], &mut rng);
        let cols = im2col(x.data(), 3, &g);
        let c: Vec<f64> = (0..cols.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&c, 3, &g, &mut back);
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transpose_conv_doubles_resolution_and_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let up = ConvTranspose2d::<f64>::new(4, 3, 3, 2, 1, 1, false, Init::Normal(0.5), &mut rng);
        let x = random(&[2, 4, 5, 5], &mut rng);
        let (y, _) = up.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 10, 10]);

        // A conv sharing the weights is the adjoint map: <up(x), z> == <x, conv(z)>.
        let mut conv = Conv2d::<f64>::new(3, 4, 3, 2, 1, false, Init::Normal(0.5), &mut rng);
        conv.weight.value = up.weight.value.clone();
        let z = random(&[2, 3, 10, 10], &mut rng);
        let (cz, _) = conv.forward(&z).unwrap();
        let lhs: f64 = y.data().iter().zip(z.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(cz.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_rejects_kernel_larger_than_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::<f32>::new(1, 1, 4, 1, 1, true, Init::Normal(0.02), &mut rng);
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(conv.forward(&x).is_err());
    }
}
