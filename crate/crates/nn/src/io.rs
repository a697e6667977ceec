//! Named-tensor persistence in the safetensors container format.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{NnError, Result};
use crate::param::Parameters;
use crate::real::Real;
use crate::tensor::Tensor;

pub fn save_tensors<T: Real>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = tensors
        .iter()
        .map(|(name, t)| {
            let mut buf = Vec::with_capacity(t.len() * std::mem::size_of::<T>());
            t.data().iter().for_each(|v| v.write_le(&mut buf));
            (name.clone(), t.shape().to_vec(), buf)
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, shape, buf)| Ok((name.as_str(), TensorView::new(T::DTYPE, shape.clone(), buf)?)))
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize_to_file(views, None, path)?;
    Ok(())
}

/// Load every tensor, converting f32/f64 storage to `T`. Order follows the file.
pub fn load_tensors<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    let bytes = std::fs::read(path)?;
    let st = SafeTensors::deserialize(&bytes)?;
    let mut out = Vec::new();
    for (name, view) in st.iter() {
        let data: Vec<T> = match view.dtype() {
            Dtype::F32 => view
                .data()
                .chunks_exact(4)
                .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect(),
            Dtype::F64 => view
                .data()
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())).unwrap())
                .collect(),
            other => {
                return Err(NnError::Dtype {
                    name: name.to_string(),
                    found: format!("{other:?}"),
                })
            }
        };
        out.push((name.to_string(), Tensor::from_vec(view.shape(), data)?));
    }
    Ok(out)
}

/// Parameters followed by buffers, in visit order.
pub fn state_dict<T: Real>(net: &mut dyn Parameters<T>) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    net.visit_params("", &mut |name, p| out.push((name.to_string(), p.value.clone())));
    net.visit_buffers("", &mut |name, b| out.push((name.to_string(), b.clone())));
    out
}

/// Strict load: every parameter and buffer must be present with matching
/// shape, and no extra tensors may remain.
pub fn load_state_dict<T: Real>(net: &mut dyn Parameters<T>, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
    let mut map: HashMap<String, Tensor<T>> = tensors.into_iter().collect();
    let mut err: Option<NnError> = None;
    let mut take = |name: &str, dst: &mut Tensor<T>| {
        if err.is_some() {
            return;
        }
        match map.remove(name) {
            Some(t) if t.shape() == dst.shape() => *dst = t,
            Some(t) => {
                err = Some(NnError::Shape {
                    expected: dst.shape().to_vec(),
                    actual: t.shape().to_vec(),
                })
            }
            None => err = Some(NnError::MissingTensor(name.to_string())),
        }
    };
    net.visit_params("", &mut |name, p| take(name, &mut p.value));
    net.visit_buffers("", &mut |name, b| take(name, b));
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(extra) = map.keys().min() {
        return Err(NnError::UnexpectedTensor(extra.clone()));
    }
    Ok(())
}

pub fn save_state<T: Real>(path: &Path, net: &mut dyn Parameters<T>) -> Result<()> {
    save_tensors(path, &state_dict(net))
}

pub fn load_state<T: Real>(path: &Path, net: &mut dyn Parameters<T>) -> Result<()> {
    load_state_dict(net, load_tensors(path)?)
}

/// Copy parameters and buffers between networks of identical structure,
/// converting element type.
pub fn cast_into<A: Real, B: Real>(src: &mut dyn Parameters<A>, dst: &mut dyn Parameters<B>) -> Result<()> {
    let converted = state_dict(src).into_iter().map(|(n, t)| (n, t.cast::<B>())).collect();
    load_state_dict(dst, converted)
}
