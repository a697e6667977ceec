use crate::conv::{Conv2d, ConvCache, ConvTranspose2d, ConvTransposeCache};
use crate::error::{NnError, Result};
use crate::norm::{instance_norm_backward, instance_norm_forward, BatchNorm2d, BatchNormCache, NormCache};
use crate::param::{join, Param, Parameters};
use crate::real::Real;
use crate::tensor::Tensor;

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    ReflectPad(usize),
    InstanceNorm,
    BatchNorm(BatchNorm2d<T>),
    Relu,
    LeakyRelu(f64),
    Tanh,
    MaxPool { kernel: usize, stride: usize, pad: usize },
    GlobalAvgPool,
    Residual(Box<Residual<T>>),
}

/// `post(body(x) + shortcut(x))` where a missing shortcut is the identity.
#[derive(Debug, Clone)]
pub struct Residual<T> {
    pub body: Sequential<T>,
    pub shortcut: Option<Sequential<T>>,
    pub post_relu: bool,
}

#[derive(Debug)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    ConvTranspose(ConvTransposeCache<T>),
    ReflectPad { pad: usize, shape: Vec<usize> },
    InstanceNorm(NormCache<T>),
    BatchNorm(BatchNormCache<T>),
    BatchNormEval,
    Relu(Vec<bool>),
    LeakyRelu(Vec<bool>, f64),
    Tanh(Tensor<T>),
    MaxPool { argmax: Vec<usize>, shape: Vec<usize> },
    GlobalAvgPool(Vec<usize>),
    Residual {
        body: SeqCache<T>,
        shortcut: Option<SeqCache<T>>,
        relu_mask: Option<Vec<bool>>,
    },
}

#[derive(Debug)]
pub struct SeqCache<T>(Vec<LayerCache<T>>);

/// Named layer stack.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    layers: Vec<(String, Layer<T>)>,
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) -> &mut Self {
        self.layers.push((name.into(), layer));
        self
    }

    pub fn with(mut self, name: impl Into<String>, layer: Layer<T>) -> Self {
        self.push(name, layer);
        self
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Layer<T>)> {
        self.layers.iter().map(|(n, l)| (n.as_str(), l))
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, SeqCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur: Option<Tensor<T>> = None;
        for (_, layer) in &self.layers {
            let input = cur.as_ref().unwrap_or(x);
            let (y, cache) = layer_forward(layer, input, mode)?;
            caches.push(cache);
            cur = Some(y);
        }
        Ok((cur.unwrap_or_else(|| x.clone()), SeqCache(caches)))
    }

    /// Forward in training mode, folding batch statistics into running statistics.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, SeqCache<T>)> {
        let (y, cache) = self.forward(x, Mode::Train)?;
        self.update_running(&cache);
        Ok((y, cache))
    }

    /// Inference without retaining caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    fn update_running(&mut self, cache: &SeqCache<T>) {
        for ((_, layer), c) in self.layers.iter_mut().zip(&cache.0) {
            match (layer, c) {
                (Layer::BatchNorm(bn), LayerCache::BatchNorm(bc)) => bn.update_running(bc),
                (Layer::Residual(r), LayerCache::Residual { body, shortcut, .. }) => {
                    r.body.update_running(body);
                    if let (Some(s), Some(sc)) = (&mut r.shortcut, shortcut) {
                        s.update_running(sc);
                    }
                }
                _ => {}
            }
        }
    }

    /// Backpropagate `dy`, accumulating parameter gradients; returns the input gradient.
    pub fn backward(&mut self, cache: SeqCache<T>, dy: Tensor<T>) -> Tensor<T> {
        let mut grad = dy;
        for ((_, layer), c) in self.layers.iter_mut().zip(cache.0).rev() {
            grad = layer_backward(layer, c, grad);
        }
        grad
    }
}

impl<T: Real> Parameters<T> for Sequential<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (name, layer) in &mut self.layers {
            let p = join(prefix, name);
            match layer {
                Layer::Conv(c) => c.visit_params(&p, f),
                Layer::ConvTranspose(c) => c.visit_params(&p, f),
                Layer::BatchNorm(bn) => bn.visit_params(&p, f),
                Layer::Residual(r) => {
                    r.body.visit_params(&p, f);
                    if let Some(s) = &mut r.shortcut {
                        s.visit_params(&join(&p, "shortcut"), f);
                    }
                }
                _ => {}
            }
        }
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (name, layer) in &mut self.layers {
            let p = join(prefix, name);
            match layer {
                Layer::BatchNorm(bn) => bn.visit_buffers(&p, f),
                Layer::Residual(r) => {
                    r.body.visit_buffers(&p, f);
                    if let Some(s) = &mut r.shortcut {
                        s.visit_buffers(&join(&p, "shortcut"), f);
                    }
                }
                _ => {}
            }
        }
    }
}

fn layer_forward<T: Real>(layer: &Layer<T>, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, LayerCache<T>)> {
    Ok(match layer {
        Layer::Conv(c) => {
            let (y, cache) = c.forward(x)?;
            (y, LayerCache::Conv(cache))
        }
        Layer::ConvTranspose(c) => {
            let (y, cache) = c.forward(x)?;
            (y, LayerCache::ConvTranspose(cache))
        }
        Layer::ReflectPad(p) => (
            reflect_pad(x, *p)?,
            LayerCache::ReflectPad {
                pad: *p,
                shape: x.shape().to_vec(),
            },
        ),
        Layer::InstanceNorm => {
            let (y, cache) = instance_norm_forward(x);
            (y, LayerCache::InstanceNorm(cache))
        }
        Layer::BatchNorm(bn) => match mode {
            Mode::Train => {
                let (y, cache) = bn.forward_train(x);
                (y, LayerCache::BatchNorm(cache))
            }
            Mode::Eval => (bn.forward_eval(x), LayerCache::BatchNormEval),
        },
        Layer::Relu => {
            let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
            (x.map(|v| if v < T::zero() { T::zero() } else { v }), LayerCache::Relu(mask))
        }
        Layer::LeakyRelu(slope) => {
            let s = T::lit(*slope);
            let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
            (
                x.map(|v| if v > T::zero() { v } else { v * s }),
                LayerCache::LeakyRelu(mask, *slope),
            )
        }
        Layer::Tanh => {
            let y = x.map(|v| v.tanh());
            (y.clone(), LayerCache::Tanh(y))
        }
        Layer::MaxPool { kernel, stride, pad } => {
            let (y, argmax) = max_pool(x, *kernel, *stride, *pad)?;
            (
                y,
                LayerCache::MaxPool {
                    argmax,
                    shape: x.shape().to_vec(),
                },
            )
        }
        Layer::GlobalAvgPool => {
            let (b, c, h, w) = x.dims4();
            let n = T::from_usize(h * w).unwrap();
            let data = x.data().chunks(h * w).map(|p| p.iter().copied().sum::<T>() / n).collect();
            (
                Tensor::from_vec(&[b, c, 1, 1], data)?,
                LayerCache::GlobalAvgPool(x.shape().to_vec()),
            )
        }
        Layer::Residual(r) => {
            let (mut y, body) = r.body.forward(x, mode)?;
            let shortcut = match &r.shortcut {
                Some(s) => {
                    let (sy, sc) = s.forward(x, mode)?;
                    y.ensure_shape(sy.shape())?;
                    y.add_assign(&sy);
                    Some(sc)
                }
                None => {
                    y.ensure_shape(x.shape())?;
                    y.add_assign(x);
                    None
                }
            };
            let relu_mask = r.post_relu.then(|| {
                let mask: Vec<bool> = y.data().iter().map(|&v| v > T::zero()).collect();
                y = y.map(|v| if v < T::zero() { T::zero() } else { v });
                mask
            });
            (
                y,
                LayerCache::Residual {
                    body,
                    shortcut,
                    relu_mask,
                },
            )
        }
    })
}

fn layer_backward<T: Real>(layer: &mut Layer<T>, cache: LayerCache<T>, dy: Tensor<T>) -> Tensor<T> {
    match (layer, cache) {
        (Layer::Conv(c), LayerCache::Conv(cache)) => c.backward(cache, &dy),
        (Layer::ConvTranspose(c), LayerCache::ConvTranspose(cache)) => c.backward(cache, &dy),
        (Layer::ReflectPad(_), LayerCache::ReflectPad { pad, shape }) => reflect_pad_backward(&dy, pad, &shape),
        (Layer::InstanceNorm, LayerCache::InstanceNorm(cache)) => instance_norm_backward(cache, &dy),
        (Layer::BatchNorm(bn), LayerCache::BatchNorm(cache)) => bn.backward(cache, &dy),
        (Layer::BatchNorm(bn), LayerCache::BatchNormEval) => {
            let (b, c, h, w) = dy.dims4();
            let mut dx = dy;
            for bi in 0..b {
                for ci in 0..c {
                    let scale = bn.gamma.value.data()[ci] * (bn.running_var.data()[ci] + T::lit(1e-5)).sqrt().recip();
                    for v in &mut dx.data_mut()[(bi * c + ci) * h * w..][..h * w] {
                        *v = *v * scale;
                    }
                }
            }
            dx
        }
        (Layer::Relu, LayerCache::Relu(mask)) => mask_grad(dy, &mask, T::zero()),
        (Layer::LeakyRelu(_), LayerCache::LeakyRelu(mask, slope)) => mask_grad(dy, &mask, T::lit(slope)),
        (Layer::Tanh, LayerCache::Tanh(y)) => {
            let mut dx = dy;
            for (d, &yv) in dx.data_mut().iter_mut().zip(y.data()) {
                *d = *d * (T::one() - yv * yv);
            }
            dx
        }
        (Layer::MaxPool { .. }, LayerCache::MaxPool { argmax, shape }) => {
            let mut dx = Tensor::zeros(&shape);
            let data = dx.data_mut();
            for (&idx, &g) in argmax.iter().zip(dy.data()) {
                data[idx] = data[idx] + g;
            }
            dx
        }
        (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool(shape)) => {
            let hw = shape[2] * shape[3];
            let n = T::from_usize(hw).unwrap();
            let mut dx = Vec::with_capacity(hw * dy.len());
            for &g in dy.data() {
                dx.extend(std::iter::repeat_n(g / n, hw));
            }
            Tensor::from_vec(&shape, dx).expect("shape")
        }
        (
            Layer::Residual(r),
            LayerCache::Residual {
                body,
                shortcut,
                relu_mask,
            },
        ) => {
            let dy = match relu_mask {
                Some(mask) => mask_grad(dy, &mask, T::zero()),
                None => dy,
            };
            let mut dx = r.body.backward(body, dy.clone());
            match (&mut r.shortcut, shortcut) {
                (Some(s), Some(sc)) => dx.add_assign(&s.backward(sc, dy)),
                _ => dx.add_assign(&dy),
            }
            dx
        }
        _ => unreachable!("layer/cache mismatch"),
    }
}

fn mask_grad<T: Real>(mut dy: Tensor<T>, mask: &[bool], negative_slope: T) -> Tensor<T> {
    for (d, &m) in dy.data_mut().iter_mut().zip(mask) {
        if !m {
            *d = *d * negative_slope;
        }
    }
    dy
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding without repeating the edge pixel.
pub fn reflect_pad<T: Real>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (b, c, h, w) = x.dims4();
    if pad >= h || pad >= w {
        return Err(NnError::Invalid(format!("reflection pad {pad} needs input larger than {h}x{w}")));
    }
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for oy in 0..oh {
            let row = &plane[reflect(oy as isize - pad as isize, h) * w..][..w];
            for ox in 0..ow {
                out.push(row[reflect(ox as isize - pad as isize, w)]);
            }
        }
    }
    Tensor::from_vec(&[b, c, oh, ow], out)
}

fn reflect_pad_backward<T: Real>(dy: &Tensor<T>, pad: usize, shape: &[usize]) -> Tensor<T> {
    let (h, w) = (shape[2], shape[3]);
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let mut dx = Tensor::zeros(shape);
    for (gplane, plane) in dy.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for oy in 0..oh {
            let iy = reflect(oy as isize - pad as isize, h);
            for ox in 0..ow {
                let ix = reflect(ox as isize - pad as isize, w);
                plane[iy * w + ix] = plane[iy * w + ix] + gplane[oy * ow + ox];
            }
        }
    }
    dx
}

fn max_pool<T: Real>(x: &Tensor<T>, k: usize, s: usize, p: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, c, h, w) = x.dims4();
    if h + 2 * p < k || w + 2 * p < k {
        return Err(NnError::Invalid("max pool kernel larger than padded input".into()));
    }
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for (pi, plane) in x.data().chunks(h * w).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_idx = usize::MAX;
                for ky in 0..k {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = iy as usize * w + ix as usize;
                        if best_idx == usize::MAX || plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(pi * h * w + best_idx);
            }
        }
    }
    Ok((Tensor::from_vec(&[b, c, oh, ow], out)?, argmax))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        // height 1 cannot be reflected
        assert!(reflect_pad(&x, 1).is_err());
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = reflect_pad(&x, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 5]);
        assert_eq!(&y.data()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
        assert_eq!(&y.data()[0..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
    }

    #[test]
    fn max_pool_picks_first_maximum() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        let (y, arg) = max_pool(&x, 2, 2, 0).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![1]);
    }
}
