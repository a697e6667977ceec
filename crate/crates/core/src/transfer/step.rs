use cellbloom_nn::loss::{l1, mse_to_constant};
use cellbloom_nn::{Mode, Param, Parameters, Real, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TransferConfig;
use super::nets::{build_discriminator, build_generator};
use crate::error::{CoreError, Result};
use crate::seeding::derive_seed;

/// The four networks of one pair. Domain A is cells, domain B flowers.
#[derive(Debug, Clone)]
pub struct CycleNets<T> {
    pub g_ab: Sequential<T>,
    pub g_ba: Sequential<T>,
    pub d_a: Sequential<T>,
    pub d_b: Sequential<T>,
}

/// Every loss term of one training step, unweighted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub cycle_a: f64,
    pub cycle_b: f64,
    pub identity_a: f64,
    pub identity_b: f64,
    pub d_a: f64,
    pub d_b: f64,
}

/// Result of the generator objective: loss terms, weighted total and the
/// generated batches (detached).
#[derive(Debug, Clone)]
pub struct GeneratorPass<T> {
    pub adv_ab: T,
    pub adv_ba: T,
    pub cycle_a: T,
    pub cycle_b: T,
    pub identity_a: T,
    pub identity_b: T,
    pub total: T,
    pub fake_a: Tensor<T>,
    pub fake_b: Tensor<T>,
}

fn finite<T: Real>(name: &str, v: T) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CoreError::NonFinite(name.to_string()))
    }
}

fn scaled<T: Real>(mut t: Tensor<T>, s: T) -> Tensor<T> {
    t.data_mut().iter_mut().for_each(|v| *v = *v * s);
    t
}

impl<T: Real> CycleNets<T> {
    /// Freshly initialized networks; each draws from its own seed derived
    /// from `cfg.seed`.
    pub fn new(cfg: &TransferConfig) -> Self {
        let rng = |tag: &str| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, tag));
        Self {
            g_ab: build_generator(&cfg.generator, cfg.init_std, &mut rng("init.g_ab")),
            g_ba: build_generator(&cfg.generator, cfg.init_std, &mut rng("init.g_ba")),
            d_a: build_discriminator(&cfg.discriminator, cfg.init_std, &mut rng("init.d_a")),
            d_b: build_discriminator(&cfg.discriminator, cfg.init_std, &mut rng("init.d_b")),
        }
    }

    /// Generator objective `adv_ab + adv_ba + λc(cycle_a + cycle_b) + λi(idt_a + idt_b)`.
    /// Gradients accumulate into both generators; the discriminators also
    /// receive gradients, which callers discard.
    pub fn generator_pass(
        &mut self,
        real_a: &Tensor<T>,
        real_b: &Tensor<T>,
        lambda_cycle: f64,
        lambda_identity: f64,
    ) -> Result<GeneratorPass<T>> {
        let lc = T::lit(lambda_cycle);
        let li = T::lit(lambda_identity);

        let (fake_b, c_fake_b) = self.g_ab.forward(real_a, Mode::Train)?;
        let (rec_a, c_rec_a) = self.g_ba.forward(&fake_b, Mode::Train)?;
        let (fake_a, c_fake_a) = self.g_ba.forward(real_b, Mode::Train)?;
        let (rec_b, c_rec_b) = self.g_ab.forward(&fake_a, Mode::Train)?;

        let (score_b, c_db) = self.d_b.forward(&fake_b, Mode::Train)?;
        let (adv_ab, g_score_b) = mse_to_constant(&score_b, T::one());
        let (score_a, c_da) = self.d_a.forward(&fake_a, Mode::Train)?;
        let (adv_ba, g_score_a) = mse_to_constant(&score_a, T::one());
        let (cycle_a, g_rec_a) = l1(&rec_a, real_a)?;
        let (cycle_b, g_rec_b) = l1(&rec_b, real_b)?;

        let adv_ab = finite("loss_G_adv_ab", adv_ab)?;
        let adv_ba = finite("loss_G_adv_ba", adv_ba)?;
        let cycle_a = finite("loss_cycle_a", cycle_a)?;
        let cycle_b = finite("loss_cycle_b", cycle_b)?;

        let (mut identity_a, mut identity_b) = (T::zero(), T::zero());
        if lambda_identity > 0.0 {
            let (idt_a, c_idt_a) = self.g_ba.forward(real_a, Mode::Train)?;
            let (idt_b, c_idt_b) = self.g_ab.forward(real_b, Mode::Train)?;
            let (la, ga) = l1(&idt_a, real_a)?;
            let (lb, gb) = l1(&idt_b, real_b)?;
            identity_a = finite("loss_identity_a", la)?;
            identity_b = finite("loss_identity_b", lb)?;
            self.g_ba.backward(c_idt_a, scaled(ga, li));
            self.g_ab.backward(c_idt_b, scaled(gb, li));
        }

        let mut g_fake_b = self.d_b.backward(c_db, g_score_b);
        g_fake_b.add_assign(&self.g_ba.backward(c_rec_a, scaled(g_rec_a, lc)));
        self.g_ab.backward(c_fake_b, g_fake_b);

        let mut g_fake_a = self.d_a.backward(c_da, g_score_a);
        g_fake_a.add_assign(&self.g_ab.backward(c_rec_b, scaled(g_rec_b, lc)));
        self.g_ba.backward(c_fake_a, g_fake_a);

        let total = adv_ab + adv_ba + lc * (cycle_a + cycle_b) + li * (identity_a + identity_b);
        Ok(GeneratorPass {
            adv_ab,
            adv_ba,
            cycle_a,
            cycle_b,
            identity_a,
            identity_b,
            total,
            fake_a,
            fake_b,
        })
    }

    /// Discriminator objective for both domains; returns `(loss_D_a, loss_D_b)`
    /// and accumulates gradients into the discriminators.
    pub fn discriminator_pass(
        &mut self,
        real_a: &Tensor<T>,
        real_b: &Tensor<T>,
        fake_a: &Tensor<T>,
        fake_b: &Tensor<T>,
    ) -> Result<(T, T)> {
        let la = Self::critic(&mut self.d_a, real_a, fake_a, "loss_D_a")?;
        let lb = Self::critic(&mut self.d_b, real_b, fake_b, "loss_D_b")?;
        Ok((la, lb))
    }

    fn critic(d: &mut Sequential<T>, real: &Tensor<T>, fake: &Tensor<T>, name: &str) -> Result<T> {
        let half = T::lit(0.5);
        let (s_real, c_real) = d.forward(real, Mode::Train)?;
        let (l_real, g_real) = mse_to_constant(&s_real, T::one());
        let (s_fake, c_fake) = d.forward(fake, Mode::Train)?;
        let (l_fake, g_fake) = mse_to_constant(&s_fake, T::zero());
        let loss = finite(name, half * (l_real + l_fake))?;
        d.backward(c_real, scaled(g_real, half));
        d.backward(c_fake, scaled(g_fake, half));
        Ok(loss)
    }

    pub fn generators_mut(&mut self) -> [&mut Sequential<T>; 2] {
        [&mut self.g_ab, &mut self.g_ba]
    }

    pub fn discriminators_mut(&mut self) -> [&mut Sequential<T>; 2] {
        [&mut self.d_a, &mut self.d_b]
    }
}

impl<T: Real> Parameters<T> for CycleNets<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let p = |n: &str| if prefix.is_empty() { n.to_string() } else { format!("{prefix}.{n}") };
        self.g_ab.visit_params(&p("g_ab"), f);
        self.g_ba.visit_params(&p("g_ba"), f);
        self.d_a.visit_params(&p("d_a"), f);
        self.d_b.visit_params(&p("d_b"), f);
    }
}
