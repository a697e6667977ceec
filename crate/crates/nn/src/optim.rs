use crate::error::{NnError, Result};
use crate::param::Parameters;
use crate::real::Real;
use crate::tensor::Tensor;

/// Adam with bias correction, one moment pair per visited parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<(String, Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the accumulated gradients of `net`.
    pub fn step(&mut self, net: &mut dyn Parameters<T>) {
        self.step += 1;
        let t = self.step as i32;
        let lr = T::lit(self.lr);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        let eps = T::lit(self.eps);
        let moments = &mut self.moments;
        let mut idx = 0;
        net.visit_params("", &mut |name, p| {
            if moments.len() <= idx {
                moments.push((name.to_string(), vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]));
            }
            let (_, m, v) = &mut moments[idx];
            for (((w, &g), mi), vi) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
            idx += 1;
        });
    }

    /// Moments and step count as named tensors.
    pub fn state_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![("step".to_string(), Tensor::full(&[1], T::from_u64(self.step).unwrap()))];
        for (name, m, v) in &self.moments {
            out.push((format!("m.{name}"), Tensor::from_vec(&[m.len()], m.clone()).unwrap()));
            out.push((format!("v.{name}"), Tensor::from_vec(&[v.len()], v.clone()).unwrap()));
        }
        out
    }

    /// Restore moments saved by [`Adam::state_tensors`] for the parameters of `net`.
    pub fn load_state(&mut self, net: &mut dyn Parameters<T>, tensors: &[(String, Tensor<T>)]) -> Result<()> {
        let find = |key: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t)
                .ok_or_else(|| NnError::MissingTensor(key.to_string()))
        };
        let step = find("step")?.data()[0].to_u64().unwrap_or(0);
        let mut moments = Vec::new();
        if step > 0 {
            let mut err = None;
            net.visit_params("", &mut |name, p| {
                let (Ok(m), Ok(v)) = (find(&format!("m.{name}")), find(&format!("v.{name}"))) else {
                    err.get_or_insert(NnError::MissingTensor(format!("m/v.{name}")));
                    return;
                };
                if m.len() != p.value.len() || v.len() != p.value.len() {
                    err.get_or_insert(NnError::Invalid(format!("moment size mismatch for {name}")));
                    return;
                }
                moments.push((name.to_string(), m.data().to_vec(), v.data().to_vec()));
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        self.step = step;
        self.moments = moments;
        Ok(())
    }
}
