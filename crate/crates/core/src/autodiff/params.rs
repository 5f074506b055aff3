use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Owns every trainable array of a model together with its accumulated gradient.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Flat on-disk layout: name -> shape and row-major values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SavedParam {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = vec![0.0; value.len()];
        self.params.push(Param { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn numel_of(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|id| self.params[id.0].value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        debug_assert_eq!(p.grad.len(), grad.len());
        for (acc, g) in p.grad.iter_mut().zip(grad) {
            *acc += g;
        }
    }

    /// Euclidean norm of the gradients of `ids`.
    pub fn grad_norm(&self, ids: &[ParamId]) -> f64 {
        ids.iter()
            .flat_map(|id| self.params[id.0].grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales the gradients of `ids` so their joint norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, ids: &[ParamId], max_norm: f64) -> f64 {
        let norm = self.grad_norm(ids);
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for id in ids {
                self.params[id.0].grad.iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }

    pub fn to_saved(&self) -> BTreeMap<String, SavedParam> {
        self.params
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    SavedParam { shape: p.value.shape().to_vec(), values: p.value.to_vec() },
                )
            })
            .collect()
    }

    /// Overwrites parameter values from a saved map. Every registered
    /// parameter must be present with a matching shape.
    pub fn load_saved(&mut self, saved: &BTreeMap<String, SavedParam>) -> Result<(), AutodiffError> {
        for p in &mut self.params {
            let s = saved.get(&p.name).ok_or_else(|| AutodiffError::ShapeMismatch {
                op: "load",
                detail: format!("missing parameter {}", p.name),
            })?;
            if s.shape != p.value.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load",
                    detail: format!(
                        "parameter {} has shape {:?}, file has {:?}",
                        p.name,
                        p.value.shape(),
                        s.shape
                    ),
                });
            }
            p.value = Tensor::new(s.shape.clone(), s.values.clone())?;
        }
        Ok(())
    }
}
