use cellbloom_nn::{Conv2d, ConvTranspose2d, Init, Layer, Real, Residual, Sequential};
use rand::Rng;

use super::config::{DiscriminatorSpec, GeneratorSpec};

fn conv<T: Real, R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, s: usize, p: usize, init: Init, rng: &mut R) -> Layer<T> {
    Layer::Conv(Conv2d::new(cin, cout, k, s, p, true, init, rng))
}

/// Reflect-padded residual generator with instance normalization and a
/// `tanh` output; spatial shape is preserved.
pub fn build_generator<T: Real, R: Rng + ?Sized>(spec: &GeneratorSpec, init_std: f64, rng: &mut R) -> Sequential<T> {
    let init = Init::Normal(init_std);
    let w = spec.base_width;
    let mut net = Sequential::new();
    net.push("head_pad", Layer::ReflectPad(3))
        .push("head", conv(spec.channels, w, 7, 1, 0, init, rng))
        .push("head_norm", Layer::InstanceNorm)
        .push("head_act", Layer::Relu);
    let mut ch = w;
    for i in 0..spec.downsample {
        net.push(format!("down{i}"), conv(ch, ch * 2, 3, 2, 1, init, rng))
            .push(format!("down{i}_norm"), Layer::InstanceNorm)
            .push(format!("down{i}_act"), Layer::Relu);
        ch *= 2;
    }
    for i in 0..spec.residual_blocks {
        let body = Sequential::new()
            .with("pad1", Layer::ReflectPad(1))
            .with("conv1", conv(ch, ch, 3, 1, 0, init, rng))
            .with("norm1", Layer::InstanceNorm)
            .with("act", Layer::Relu)
            .with("pad2", Layer::ReflectPad(1))
            .with("conv2", conv(ch, ch, 3, 1, 0, init, rng))
            .with("norm2", Layer::InstanceNorm);
        net.push(
            format!("res{i}"),
            Layer::Residual(Box::new(Residual {
                body,
                shortcut: None,
                post_relu: false,
            })),
        );
    }
    for i in 0..spec.downsample {
        net.push(
            format!("up{i}"),
            Layer::ConvTranspose(ConvTranspose2d::new(ch, ch / 2, 3, 2, 1, 1, true, init, rng)),
        )
        .push(format!("up{i}_norm"), Layer::InstanceNorm)
        .push(format!("up{i}_act"), Layer::Relu);
        ch /= 2;
    }
    net.push("tail_pad", Layer::ReflectPad(3))
        .push("tail", conv(ch, spec.channels, 7, 1, 0, init, rng))
        .push("tail_act", Layer::Tanh);
    net
}

/// Patch discriminator emitting one realness score per receptive field.
pub fn build_discriminator<T: Real, R: Rng + ?Sized>(
    spec: &DiscriminatorSpec,
    init_std: f64,
    rng: &mut R,
) -> Sequential<T> {
    let init = Init::Normal(init_std);
    let w = spec.base_width;
    let mut net = Sequential::new();
    net.push("conv0", conv(spec.channels, w, 4, 2, 1, init, rng))
        .push("act0", Layer::LeakyRelu(0.2));
    let mut ch = w;
    for n in 1..spec.stride2_layers {
        let next = w * (1 << n.min(3));
        net.push(format!("conv{n}"), conv(ch, next, 4, 2, 1, init, rng))
            .push(format!("norm{n}"), Layer::InstanceNorm)
            .push(format!("act{n}"), Layer::LeakyRelu(0.2));
        ch = next;
    }
    let n = spec.stride2_layers;
    let next = w * (1 << n.min(3));
    net.push(format!("conv{n}"), conv(ch, next, 4, 1, 1, init, rng))
        .push(format!("norm{n}"), Layer::InstanceNorm)
        .push(format!("act{n}"), Layer::LeakyRelu(0.2))
        .push("score", conv(next, 1, 4, 1, 1, init, rng));
    net
}
