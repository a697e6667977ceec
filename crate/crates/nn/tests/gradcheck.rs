//! Central finite differences against hand-written backward passes.

use cellbloom_nn::layers::Residual;
use cellbloom_nn::loss::{mse_to_constant, softmax_cross_entropy};
use cellbloom_nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Init, Layer, Mode, Parameters, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn net(rng: &mut ChaCha8Rng) -> Sequential<f64> {
    let init = Init::Normal(0.3);
    let block = Residual {
        body: Sequential::new()
            .with("pad", Layer::ReflectPad(1))
            .with("conv", Layer::Conv(Conv2d::new(4, 4, 3, 1, 0, true, init, rng)))
            .with("norm", Layer::InstanceNorm)
            .with("act", Layer::LeakyRelu(0.2)),
        shortcut: None,
        post_relu: false,
    };
    let proj = Residual {
        body: Sequential::new()
            .with("conv", Layer::Conv(Conv2d::new(4, 6, 3, 2, 1, false, init, rng)))
            .with("bn", Layer::BatchNorm(BatchNorm2d::new(6))),
        shortcut: Some(
            Sequential::new()
                .with("conv", Layer::Conv(Conv2d::new(4, 6, 1, 2, 0, false, init, rng)))
                .with("bn", Layer::BatchNorm(BatchNorm2d::new(6))),
        ),
        post_relu: true,
    };
    Sequential::new()
        .with("head", Layer::Conv(Conv2d::new(3, 4, 3, 1, 1, true, init, rng)))
        .with("pool", Layer::MaxPool { kernel: 3, stride: 1, pad: 1 })
        .with("block", Layer::Residual(Box::new(block)))
        .with("down", Layer::Residual(Box::new(proj)))
        .with("up", Layer::ConvTranspose(ConvTranspose2d::new(6, 3, 3, 2, 1, 1, true, init, rng)))
        .with("relu", Layer::Relu)
        .with("tanh", Layer::Tanh)
        .with("gap", Layer::GlobalAvgPool)
}

fn loss(net: &Sequential<f64>, x: &Tensor<f64>, labels: &[usize]) -> f64 {
    let (y, _) = net.forward(x, Mode::Train).unwrap();
    let (ce, _) = softmax_cross_entropy(y.data(), 3, labels).unwrap();
    let (mse, _) = mse_to_constant(&y, 0.3);
    ce + mse
}

#[test]
fn every_layer_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = net(&mut rng);
    let x = random(&[2, 3, 6, 6], &mut rng);
    let labels = [0usize, 2];

    let (y, cache) = model.forward(&x, Mode::Train).unwrap();
    let (_, dce) = softmax_cross_entropy(y.data(), 3, &labels).unwrap();
    let (_, mut dy) = mse_to_constant(&y, 0.3);
    for (d, c) in dy.data_mut().iter_mut().zip(dce) {
        *d += c;
    }
    model.zero_grad();
    let dx = model.backward(cache, dy);

    // parameter gradients
    let mut analytic = Vec::new();
    model.visit_params("", &mut |name, p| analytic.push((name.to_string(), p.grad.clone())));
    let h = 1e-6;
    let mut checked = 0;
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for idx in (0..grad.len()).step_by(grad.len().div_ceil(5).max(1)) {
            let perturb = |m: &mut Sequential<f64>, delta: f64| {
                let mut k = 0;
                m.visit_params("", &mut |_, p| {
                    if k == pi {
                        p.value.data_mut()[idx] += delta;
                    }
                    k += 1;
                });
            };
            perturb(&mut model, h);
            let up = loss(&model, &x, &labels);
            perturb(&mut model, -2.0 * h);
            let down = loss(&model, &x, &labels);
            perturb(&mut model, h);
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            assert!(err < 1e-5, "{name}[{idx}]: analytic {a} numeric {numeric}");
            checked += 1;
        }
    }
    assert!(checked >= 30);

    // input gradient
    for idx in [0, 17, 50, 101, 200] {
        let mut xp = x.clone();
        xp.data_mut()[idx] += h;
        let up = loss(&model, &xp, &labels);
        xp.data_mut()[idx] -= 2.0 * h;
        let down = loss(&model, &xp, &labels);
        let numeric = (up - down) / (2.0 * h);
        let a = dx.data()[idx];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
        assert!(err < 1e-5, "input[{idx}]: analytic {a} numeric {numeric}");
    }
}
