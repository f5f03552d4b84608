//! Named-parameter utilities: zeroing, counting, flat access for gradient
//! checks, and the on-disk weights blob.
//!
//! The blob is raw little-endian f64 (lossless for both engine precisions)
//! indexed by a manifest of `(name, shape, offset)` entries that callers
//! embed in their `meta.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tensor::{Scalar, Tensor};

/// A visitor over a model's parameters, in the model's stable order.
pub type Visit<'a, S> = &'a mut dyn FnMut(&str, &mut Tensor<S>, &mut Tensor<S>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset into the blob.
    pub offset: usize,
}

pub fn zero_grads<S: Scalar>(visit: impl FnOnce(Visit<S>)) {
    visit(&mut |_, _, grad| grad.fill(S::zero()));
}

pub fn param_count<S: Scalar>(visit: impl FnOnce(Visit<S>)) -> usize {
    let mut n = 0;
    visit(&mut |_, param, _| n += param.numel());
    n
}

/// Reads the parameter value at a flat index over the visit order.
pub fn param_get<S: Scalar>(visit: impl FnOnce(Visit<S>), index: usize) -> f64 {
    let mut cursor = 0;
    let mut value = f64::NAN;
    visit(&mut |_, param, _| {
        let n = param.numel();
        if index >= cursor && index < cursor + n {
            value = param.data()[index - cursor].to_f64();
        }
        cursor += n;
    });
    value
}

/// Adds `delta` to the parameter at a flat index.
pub fn param_add<S: Scalar>(visit: impl FnOnce(Visit<S>), index: usize, delta: f64) {
    let mut cursor = 0;
    visit(&mut |_, param, _| {
        let n = param.numel();
        if index >= cursor && index < cursor + n {
            let i = index - cursor;
            let v = param.data()[i].to_f64() + delta;
            param.data_mut()[i] = S::from_f64(v);
        }
        cursor += n;
    });
}

/// Reads the accumulated gradient at a flat index.
pub fn grad_get<S: Scalar>(visit: impl FnOnce(Visit<S>), index: usize) -> f64 {
    let mut cursor = 0;
    let mut value = f64::NAN;
    visit(&mut |_, param, grad| {
        let n = param.numel();
        if index >= cursor && index < cursor + n {
            value = grad.data()[index - cursor].to_f64();
        }
        cursor += n;
    });
    value
}

/// Writes every visited parameter to `path` as little-endian f64 and
/// returns the manifest entries.
pub fn save_params<S: Scalar>(
    path: impl AsRef<Path>,
    visit: impl FnOnce(Visit<S>),
) -> Result<Vec<TensorEntry>> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    visit(&mut |name, param, _| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: param.shape().to_vec(),
            offset,
        });
        for v in param.data() {
            blob.extend_from_slice(&v.to_f64().to_le_bytes());
        }
        offset += param.numel();
    });
    let path = path.as_ref();
    fs::write(path, blob).map_err(|e| Error::io(path, e))?;
    Ok(entries)
}

/// Loads a blob written by [`save_params`] back into the visited model.
/// Names and shapes must match the manifest exactly.
pub fn load_params<S: Scalar>(
    path: impl AsRef<Path>,
    entries: &[TensorEntry],
    visit: impl FnOnce(Visit<S>),
) -> Result<()> {
    let path = path.as_ref();
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    if blob.len() % 8 != 0 {
        return Err(Error::Runtime(format!(
            "weights blob {} is not a whole number of f64 values",
            path.display()
        )));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
        .collect();
    let mut idx = 0usize;
    let mut error: Option<Error> = None;
    visit(&mut |name, param, _| {
        if error.is_some() {
            return;
        }
        let Some(entry) = entries.get(idx) else {
            error = Some(Error::Runtime(format!(
                "weights manifest ends before parameter {name}"
            )));
            return;
        };
        if entry.name != name || entry.shape != param.shape() {
            error = Some(Error::Runtime(format!(
                "weights manifest entry {} {:?} does not match parameter {name} {:?}",
                entry.name,
                entry.shape,
                param.shape()
            )));
            return;
        }
        let n = param.numel();
        if entry.offset + n > values.len() {
            error = Some(Error::Runtime(format!(
                "weights blob too short for parameter {name}"
            )));
            return;
        }
        for (i, slot) in param.data_mut().iter_mut().enumerate() {
            *slot = S::from_f64(values[entry.offset + i]);
        }
        idx += 1;
    });
    if let Some(e) = error {
        return Err(e);
    }
    if idx != entries.len() {
        return Err(Error::Runtime(format!(
            "model visits {idx} parameters but the manifest lists {}",
            entries.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Toy {
        a: Tensor<f64>,
        ga: Tensor<f64>,
        b: Tensor<f64>,
        gb: Tensor<f64>,
    }

    impl Toy {
        fn visit(&mut self, f: Visit<f64>) {
            f("a", &mut self.a, &mut self.ga);
            f("b", &mut self.b, &mut self.gb);
        }
    }

    fn toy(seed: u64) -> Toy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Toy {
            a: Tensor::randn(&[2, 3], &mut rng),
            ga: Tensor::zeros(&[2, 3]),
            b: Tensor::randn(&[4], &mut rng),
            gb: Tensor::zeros(&[4]),
        }
    }

    #[test]
    fn count_and_flat_access() {
        let mut t = toy(1);
        assert_eq!(param_count(|f| t.visit(f)), 10);
        let before = param_get(|f| t.visit(f), 7);
        param_add(|f| t.visit(f), 7, 0.5);
        let after = param_get(|f| t.visit(f), 7);
        assert!((after - before - 0.5).abs() < 1e-12);
        assert_eq!(after, t.b.data()[1]);
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let mut t = toy(2);
        let entries = save_params(&path, |f| t.visit(f)).unwrap();
        assert_eq!(entries.len(), 2);
        let mut fresh = toy(3);
        assert_ne!(fresh.a, t.a);
        load_params(&path, &entries, |f| fresh.visit(f)).unwrap();
        assert_eq!(fresh.a, t.a);
        assert_eq!(fresh.b, t.b);
    }

    #[test]
    fn load_rejects_mismatched_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let mut t = toy(4);
        let mut entries = save_params(&path, |f| t.visit(f)).unwrap();
        entries[1].name = "c".into();
        let mut fresh = toy(5);
        assert!(load_params(&path, &entries, |f| fresh.visit(f)).is_err());
    }
}
