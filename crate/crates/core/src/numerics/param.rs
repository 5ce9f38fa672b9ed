use rand::Rng;

use super::array::NdArray;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named trainable (or frozen) tensor together with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: NdArray,
    pub grad: NdArray,
    /// Frozen entries (normalization statistics and the like) are stored and
    /// serialized but skipped by optimizers.
    pub trainable: bool,
}

impl Parameter {
    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Ordered collection of parameters addressed by [`ParamId`] or name.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: NdArray) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: NdArray) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: NdArray, trainable: bool) -> ParamId {
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        let grad = NdArray::zeros(value.shape());
        self.params.push(Parameter {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    /// Kaiming-style uniform initialization, `U(-b, b)` with `b = gain / sqrt(fan_in)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, NdArray::new(shape, data).expect("valid init shape"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &NdArray {
        &self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .flat_map(|p| p.grad.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.iter_mut() {
                p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    /// Rounds every value to `f32` precision, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        for p in self.params.iter_mut() {
            p.value
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_values(&mut self, other: &[(String, NdArray)]) -> Result<()> {
        if other.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.len()
            )));
        }
        for (name, value) in other {
            let id = self
                .id_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
            let p = &mut self.params[id.0];
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: shape {:?} in checkpoint, {:?} in model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }

    pub fn named_values(&self) -> Vec<(String, NdArray)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_grad_resets() {
        let mut store = ParamStore::new();
        let id = store.add("w", NdArray::full(&[2, 2], 1.0));
        store.get_mut(id).grad = NdArray::full(&[2, 2], 3.0);
        store.zero_grad();
        assert!(store.get(id).grad.data().iter().all(|&g| g == 0.0));
        assert_eq!(store.get(id).grad.shape(), store.get(id).value.shape());
    }

    #[test]
    fn uniform_init_is_seeded_and_bounded() {
        let mk = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            let mut s = ParamStore::new();
            s.add_uniform("w", &[16, 4], 16, 1.0, &mut rng);
            s
        };
        let (a, b) = (mk(), mk());
        assert_eq!(a.get(ParamId(0)).value, b.get(ParamId(0)).value);
        assert!(a.get(ParamId(0)).value.data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut store = ParamStore::new();
        let id = store.add("w", NdArray::zeros(&[2]));
        store.get_mut(id).grad = NdArray::new(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }
}
