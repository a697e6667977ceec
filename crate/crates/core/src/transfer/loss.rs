use cellbloom_nn::{Real, Tensor};

use crate::error::Result;

/// Least-squares adversarial loss: mean of `(score - t)^2` with `t = 1` for a
/// real target and `t = 0` for a fake one.
pub fn adversarial_loss<T: Real>(scores: &Tensor<T>, target_real: bool) -> T {
    let t = if target_real { T::one() } else { T::zero() };
    cellbloom_nn::loss::mse_to_constant(scores, t).0
}

/// Mean absolute difference between two equally shaped images.
pub fn cycle_loss<T: Real>(original: &Tensor<T>, reconstructed: &Tensor<T>) -> Result<T> {
    Ok(cellbloom_nn::loss::l1(reconstructed, original)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adversarial_values() {
        assert_eq!(adversarial_loss(&Tensor::<f64>::full(&[1, 1, 3, 3], 1.0), true), 0.0);
        assert_eq!(adversarial_loss(&Tensor::<f64>::full(&[1, 1, 3, 3], 0.0), true), 1.0);
        let s = Tensor::<f64>::from_vec(&[2], vec![0.5, 0.5]).unwrap();
        assert_eq!(adversarial_loss(&s, false), 0.25);
    }

    #[test]
    fn cycle_values() {
        let x = Tensor::<f32>::full(&[3, 8, 8], 0.3);
        assert_eq!(cycle_loss(&x, &x).unwrap(), 0.0);
        let a = Tensor::<f64>::full(&[3, 4, 4], 1.0);
        let b = Tensor::<f64>::full(&[3, 4, 4], 0.5);
        assert_eq!(cycle_loss(&a, &b).unwrap(), 0.5);
        assert!(cycle_loss(&a, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn cycle_matches_scalar_loop_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 3 * 64 * 64;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut total = 0.0;
        for i in 0..n {
            total += (a[i] - b[i]).abs();
        }
        let oracle = total / n as f64;
        let ta = Tensor::from_vec(&[3, 64, 64], a).unwrap();
        let tb = Tensor::from_vec(&[3, 64, 64], b).unwrap();
        let got = cycle_loss(&ta, &tb).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert_eq!(got, cycle_loss(&tb, &ta).unwrap());
    }
}
