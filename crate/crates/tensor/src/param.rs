use std::collections::BTreeMap;
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::array::{numel, Array};
use crate::TensorError;

struct ParamInner {
    name: String,
    shape: Vec<usize>,
    value: RwLock<Vec<f64>>,
    trainable: bool,
}

/// A named, shared parameter buffer. Cloning shares the storage.
#[derive(Clone)]
pub struct Param(Arc<ParamInner>);

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({}, {:?})", self.0.name, self.0.shape)
    }
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array, trainable: bool) -> Self {
        Param(Arc::new(ParamInner {
            name: name.into(),
            shape: value.shape().to_vec(),
            value: RwLock::new(value.into_data()),
            trainable,
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn is_trainable(&self) -> bool {
        self.0.trainable
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.value.read().expect("parameter lock poisoned")
    }

    pub fn value(&self) -> Array {
        Array::new(&self.0.shape, self.read().clone())
    }

    pub fn set(&self, values: &[f64]) {
        assert_eq!(values.len(), self.numel(), "set {}: wrong element count", self.0.name);
        self.0
            .value
            .write()
            .expect("parameter lock poisoned")
            .copy_from_slice(values);
    }

    pub fn update(&self, f: impl FnOnce(&mut [f64])) {
        let mut guard = self.0.value.write().expect("parameter lock poisoned");
        f(&mut guard);
    }

    pub(crate) fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    /// U(-b, b) with b = gain / sqrt(fan_in).
    Uniform { fan_in: usize, gain: f64 },
    Normal { std: f64 },
}

/// Ordered registry of every parameter of a model, plus the seeded stream
/// used to initialize them.
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn init_values(&mut self, shape: &[usize], init: Init) -> Vec<f64> {
        let n = numel(shape);
        match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Uniform { fan_in, gain } => {
                let bound = gain / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Param {
        self.insert(name, shape, init, true)
    }

    /// Non-trainable state (running statistics, frozen backbones).
    pub fn add_buffer(&mut self, name: &str, shape: &[usize], init: Init) -> Param {
        self.insert(name, shape, init, false)
    }

    fn insert(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Param {
        assert!(!self.params.contains_key(name), "duplicate parameter {name}");
        let values = self.init_values(shape, init);
        let p = Param::new(name, Array::new(shape, values), trainable);
        self.params.insert(name.to_string(), p.clone());
        p
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.values()
    }

    pub fn trainable(&self) -> Vec<Param> {
        self.params.values().filter(|p| p.is_trainable()).cloned().collect()
    }

    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<Param> {
        self.params
            .values()
            .filter(|p| p.is_trainable() && p.name().starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Param::numel).sum()
    }

    /// Copy all values from `other`; names and shapes must match exactly.
    pub fn copy_from(&self, other: &ParamStore) -> Result<(), TensorError> {
        self.check_same_structure(other)?;
        for (a, b) in self.params.values().zip(other.params.values()) {
            a.set(&b.read());
        }
        Ok(())
    }

    pub fn check_same_structure(&self, other: &ParamStore) -> Result<(), TensorError> {
        if self.params.len() != other.params.len() {
            return Err(TensorError::Structure(format!(
                "{} vs {} parameters",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.values().zip(other.params.values()) {
            if a.name() != b.name() || a.shape() != b.shape() {
                return Err(TensorError::Structure(format!(
                    "{} {:?} vs {} {:?}",
                    a.name(),
                    a.shape(),
                    b.name(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    /// Load named values, failing on any missing or mis-shaped entry.
    pub fn load_values(&self, values: &BTreeMap<String, Array>) -> Result<(), TensorError> {
        for p in self.params.values() {
            let v = values
                .get(p.name())
                .ok_or_else(|| TensorError::Structure(format!("missing parameter {}", p.name())))?;
            if v.shape() != p.shape() {
                return Err(TensorError::Structure(format!(
                    "{}: stored {:?}, expected {:?}",
                    p.name(),
                    v.shape(),
                    p.shape()
                )));
            }
            p.set(v.data());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> BTreeMap<String, Array> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), p.value()))
            .collect()
    }
}
