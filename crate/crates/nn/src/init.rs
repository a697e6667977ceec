use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::real::Real;
use crate::tensor::Tensor;

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean normal with the given standard deviation.
    Normal(f64),
    /// He normal scaled by fan-out, for ReLU networks.
    KaimingNormalFanOut,
    /// Uniform in `±1/sqrt(fan_in)`.
    UniformFanIn,
    Zeros,
}

impl Init {
    pub fn sample<T: Real, R: Rng + ?Sized>(
        self,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match self {
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
            Init::KaimingNormalFanOut => {
                let dist = Normal::new(0.0, (2.0 / fan_out.max(1) as f64).sqrt()).expect("finite std");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
            Init::UniformFanIn => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("bounds");
                (0..n).map(|_| T::lit(dist.sample(rng))).collect()
            }
            Init::Zeros => vec![T::zero(); n],
        };
        Tensor::from_vec(shape, data).expect("shape matches")
    }
}
