use indexmap::IndexMap;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Ordered collection of named parameter arrays.
///
/// Every trainable network keeps its weights in one of these so that
/// checkpointing, digests, optimizers and finite-difference checks can treat
/// all networks the same way.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params {
    arrays: IndexMap<String, ArrayD<f64>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, array: ArrayD<f64>) {
        self.arrays.insert(name.into(), array);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f64> {
        self.arrays
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.arrays
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.arrays.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.arrays.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.arrays.values().map(|a| a.len()).sum()
    }

    pub fn zeros_like(&self) -> Params {
        let arrays = self
            .arrays
            .iter()
            .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
            .collect();
        Params { arrays }
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Parameters whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> Params {
        let arrays = self
            .arrays
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Params { arrays }
    }

    /// Inserts (or replaces) every array of `other`.
    pub fn extend(&mut self, other: &Params) {
        for (k, v) in &other.arrays {
            self.arrays.insert(k.clone(), v.clone());
        }
    }

    /// Adds `scale * other` in place. Names missing from `other` are left alone.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (k, v) in self.arrays.iter_mut() {
            if let Some(o) = other.arrays.get(k) {
                v.scaled_add(scale, o);
            }
        }
    }

    /// Checks that `self` has exactly the names and shapes of `template`.
    pub fn check_layout(&self, template: &Params) -> Result<()> {
        for (k, v) in &template.arrays {
            match self.arrays.get(k) {
                None => return Err(Error::ShapeMismatch(format!("missing parameter `{k}`"))),
                Some(a) if a.shape() != v.shape() => {
                    return Err(Error::ShapeMismatch(format!(
                        "parameter `{k}` has shape {:?}, expected {:?}",
                        a.shape(),
                        v.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.arrays.keys().find(|k| !template.arrays.contains_key(*k)) {
            return Err(Error::ShapeMismatch(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of every value.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.arrays {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            h.update((v.ndim() as u64).to_le_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Normal initialisation with standard deviation `std`.
pub fn init_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// He initialisation for layers followed by a ReLU.
pub fn init_he<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    init_normal(rng, shape, (2.0 / fan_in as f64).sqrt())
}

/// Glorot-style initialisation for linear or sigmoid outputs.
pub fn init_glorot<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> ArrayD<f64> {
    init_normal(rng, shape, (2.0 / (fan_in + fan_out) as f64).sqrt())
}
