//! Finite-difference verification of the training objectives.

use std::collections::HashSet;

use cellbloom_nn::{io, Layer, Parameters, Real, Sequential, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TransferConfig;
use super::step::CycleNets;
use crate::error::{CoreError, Result};

/// One sampled parameter: analytic gradient next to its central difference.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradSample {
    pub fn rel_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs());
        if denom == 0.0 {
            0.0
        } else {
            (self.analytic - self.numeric).abs() / denom
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub generator: Vec<GradSample>,
    pub discriminator: Vec<GradSample>,
    /// Draws rejected because the loss is not differentiable within the
    /// difference step there (the two step sizes disagree).
    pub kinks_skipped: usize,
}

impl GradReport {
    pub fn samples(&self) -> impl Iterator<Item = &GradSample> {
        self.generator.iter().chain(&self.discriminator)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.samples().map(GradSample::rel_error).fold(0.0, f64::max)
    }
}

/// Names of convolution biases that feed straight into an instance norm.
/// The norm subtracts them out, so their gradient is identically zero.
fn normalized_biases<T: Real>(net: &Sequential<T>, prefix: &str, out: &mut HashSet<String>) {
    let layers: Vec<(&str, &Layer<T>)> = net.layers().collect();
    for (i, (name, layer)) in layers.iter().enumerate() {
        let path = format!("{prefix}.{name}");
        match layer {
            Layer::Conv(_) | Layer::ConvTranspose(_) => {
                if matches!(layers.get(i + 1), Some((_, Layer::InstanceNorm))) {
                    out.insert(format!("{path}.bias"));
                }
            }
            Layer::Residual(r) => {
                normalized_biases(&r.body, &path, out);
                if let Some(sc) = &r.shortcut {
                    normalized_biases(sc, &format!("{path}.shortcut"), out);
                }
            }
            _ => {}
        }
    }
}

/// Flat `(name, element)` addresses of every parameter element of `nets`
/// whose name starts with one of `prefixes`, leaving out parameters whose
/// gradient is structurally zero.
fn addresses<T: Real>(nets: &mut CycleNets<T>, prefixes: &[&str]) -> Vec<(String, usize)> {
    let mut zero = HashSet::new();
    for (name, net) in [("g_ab", &nets.g_ab), ("g_ba", &nets.g_ba), ("d_a", &nets.d_a), ("d_b", &nets.d_b)] {
        normalized_biases(net, name, &mut zero);
    }
    let mut out = Vec::new();
    nets.visit_params("", &mut |name, p| {
        if prefixes.iter().any(|pre| name.starts_with(pre)) && !zero.contains(name) {
            out.extend((0..p.value.len()).map(|i| (name.to_string(), i)));
        }
    });
    out
}

fn read_grad<T: Real>(nets: &mut CycleNets<T>, name: &str, index: usize) -> f64 {
    let mut g = 0.0;
    nets.visit_params("", &mut |n, p| {
        if n == name {
            g = p.grad.data()[index].to_f64().unwrap_or(f64::NAN);
        }
    });
    g
}

fn nudge(nets: &mut CycleNets<f64>, name: &str, index: usize, delta: f64) {
    nets.visit_params("", &mut |n, p| {
        if n == name {
            p.value.data_mut()[index] += delta;
        }
    });
}

fn central_difference(
    nets: &mut CycleNets<f64>,
    name: &str,
    index: usize,
    h: f64,
    objective: &mut dyn FnMut(&mut CycleNets<f64>) -> Result<f64>,
) -> Result<f64> {
    nudge(nets, name, index, h);
    let plus = objective(nets)?;
    nudge(nets, name, index, -2.0 * h);
    let minus = objective(nets)?;
    nudge(nets, name, index, h);
    Ok((plus - minus) / (2.0 * h))
}

/// Central difference at step `1e-6`, or `None` when the estimate at step
/// `1e-7` disagrees beyond rounding, meaning the step straddles a kink.
fn smooth_difference(
    nets: &mut CycleNets<f64>,
    name: &str,
    index: usize,
    objective: &mut dyn FnMut(&mut CycleNets<f64>) -> Result<f64>,
) -> Result<Option<f64>> {
    let coarse = central_difference(nets, name, index, 1e-6, &mut *objective)?;
    let fine = central_difference(nets, name, index, 1e-7, &mut *objective)?;
    let tol = 1e-6 + 1e-4 * coarse.abs().max(fine.abs());
    Ok(((coarse - fine).abs() <= tol).then_some(coarse))
}

/// Compare analytic gradients of the generator objective (w.r.t. generator
/// parameters) and of the discriminator objective (w.r.t. discriminator
/// parameters), computed in precision `T`, against float64 central
/// differences on an exact copy of the same networks. `samples` elements are
/// drawn uniformly per side; draws sitting on a kink are redrawn.
pub fn check_transfer_gradients<T: Real>(
    cfg: &TransferConfig,
    batch: usize,
    samples: usize,
    seed: u64,
) -> Result<GradReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.image_size;
    let c = cfg.generator.channels;
    let mut input = || -> Result<Tensor<f64>> {
        let data = (0..batch * c * s * s).map(|_| rng.random_range(-0.9..0.9)).collect();
        Ok(Tensor::from_vec(&[batch, c, s, s], data)?)
    };
    let (a64, b64) = (input()?, input()?);
    let (a, b) = (a64.cast::<T>(), b64.cast::<T>());

    let mut nets = CycleNets::<T>::new(cfg);
    let mut exact = CycleNets::<f64>::new(cfg);
    io::cast_into(&mut nets, &mut exact)?;
    let (lc, li) = (cfg.lambda_cycle, cfg.lambda_identity);

    nets.zero_grad();
    let pass = nets.generator_pass(&a, &b, lc, li)?;
    let fakes = (pass.fake_a.cast::<f64>(), pass.fake_b.cast::<f64>());
    let (fake_a, fake_b) = (pass.fake_a, pass.fake_b);
    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut report = GradReport::default();

    let g_addr = addresses(&mut nets, &["g_ab.", "g_ba."]);
    let mut g_objective = |n: &mut CycleNets<f64>| Ok(n.generator_pass(&a64, &b64, lc, li)?.total);
    while report.generator.len() < samples {
        let (name, index) = g_addr[pick.random_range(0..g_addr.len())].clone();
        match smooth_difference(&mut exact, &name, index, &mut g_objective)? {
            Some(numeric) => {
                let analytic = read_grad(&mut nets, &name, index);
                report.generator.push(GradSample { name, index, analytic, numeric });
            }
            None => report.kinks_skipped += 1,
        }
        if report.kinks_skipped > 4 * samples {
            return Err(CoreError::Invalid("loss is not smooth enough to difference".into()));
        }
    }

    nets.zero_grad();
    nets.discriminator_pass(&a, &b, &fake_a, &fake_b)?;
    let d_addr = addresses(&mut nets, &["d_a.", "d_b."]);
    let mut d_objective = |n: &mut CycleNets<f64>| {
        let (la, lb) = n.discriminator_pass(&a64, &b64, &fakes.0, &fakes.1)?;
        Ok(la + lb)
    };
    while report.discriminator.len() < samples {
        let (name, index) = d_addr[pick.random_range(0..d_addr.len())].clone();
        match smooth_difference(&mut exact, &name, index, &mut d_objective)? {
            Some(numeric) => {
                let analytic = read_grad(&mut nets, &name, index);
                report.discriminator.push(GradSample { name, index, analytic, numeric });
            }
            None => report.kinks_skipped += 1,
        }
        if report.kinks_skipped > 4 * samples {
            return Err(CoreError::Invalid("loss is not smooth enough to difference".into()));
        }
    }
    Ok(report)
}

/// The tiny configuration used for gradient checks: 8×8 inputs, width-4
/// networks, one residual block and one stride-2 discriminator stage.
pub fn tiny_config(seed: u64) -> TransferConfig {
    use crate::manifest::{CellClass, ClassPairMap};
    let mut cfg = TransferConfig::for_pair(CellClass::Neutrophil, &ClassPairMap::default());
    cfg.image_size = 8;
    cfg.batch_size = 2;
    cfg.generator.base_width = 4;
    cfg.generator.residual_blocks = 1;
    cfg.discriminator.base_width = 4;
    cfg.discriminator.stride2_layers = 1;
    cfg.init_std = 0.3;
    cfg.seed = seed;
    cfg
}
