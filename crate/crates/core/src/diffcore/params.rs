use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, Graph, Real, Tensor, Var};
use crate::error::{Error, Result};

/// What a parameter is for. Recorded in checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Weight,
    Bias,
    Gain,
    Offset,
    SlotInit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub role: Role,
    pub tensor: Tensor<T>,
}

/// Named learnable arrays, iterated in lexicographic name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterTree<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T> Default for ParameterTree<T> {
    fn default() -> Self {
        ParameterTree {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Real> ParameterTree<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, role: Role, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Structure(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, Param { role, tensor });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Structure(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Structure(format!("missing parameter `{name}`")))
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        self.entries.get(name).map(|p| p.role)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values across all entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.tensor.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        ParameterTree {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            role: p.role,
                            tensor: Tensor::zeros(p.tensor.shape()),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterTree<U> {
        ParameterTree {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            role: p.role,
                            tensor: p.tensor.cast(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Same names and shapes as `other`.
    pub fn check_congruent<U: Real>(&self, other: &ParameterTree<U>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Structure(format!(
                "trees hold {} and {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((ka, a), (kb, b)) in self.entries.iter().zip(&other.entries) {
            if ka != kb {
                return Err(Error::Structure(format!("entry `{ka}` vs `{kb}`")));
            }
            if a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Structure(format!(
                    "`{ka}` has shape {:?} vs {:?}",
                    a.tensor.shape(),
                    b.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> Self {
        ParameterTree {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, p)| k.strip_prefix(prefix).map(|s| (s.to_string(), p.clone())))
                .collect(),
        }
    }

    /// Copy every entry of `other` in under `prefix`.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &ParameterTree<T>) -> Result<()> {
        for (k, p) in &other.entries {
            self.insert(format!("{prefix}{k}"), p.role, p.tensor.clone())?;
        }
        Ok(())
    }

    /// Place every entry on `g` as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), g.param(p.tensor.clone())))
                .collect(),
        }
    }

    /// Place every entry on `g` as a constant (no gradients).
    pub fn bind_constant(&self, g: &mut Graph<T>) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), g.constant(p.tensor.clone())))
                .collect(),
        }
    }

    /// Collect gradients for every bound entry; entries the output does not
    /// depend on get zeros.
    pub fn gradients(&self, bound: &Bound, grads: &Gradients<T>) -> Result<ParameterTree<T>> {
        let mut out = ParameterTree::new();
        for (k, p) in &self.entries {
            let v = bound.get(k)?;
            let g = match grads.get(v) {
                Some(t) => t.clone(),
                None => Tensor::zeros(p.tensor.shape()),
            };
            out.insert(k.clone(), p.role, g)?;
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|p| p.tensor.all_finite())
    }

    /// Bitwise equality of every value (distinguishes 0.0 and -0.0, NaN payloads).
    pub fn bit_identical(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.role == b.role
                    && a.tensor.shape() == b.tensor.shape()
                    && a.tensor
                        .data()
                        .iter()
                        .zip(b.tensor.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }

    // ------------------------------------------------------------------
    // Initializers

    /// Dense layer `{prefix}.weight` `[fan_in, fan_out]` drawn from
    /// U(-1/√fan_in, 1/√fan_in), plus a zero `{prefix}.bias` when requested.
    pub fn init_dense<R: Rng>(
        &mut self,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Tensor::from_fn(&[fan_in, fan_out], |_| T::lit(rng.gen_range(-bound..bound)));
        self.insert(format!("{prefix}.weight"), Role::Weight, w)?;
        if bias {
            self.insert(format!("{prefix}.bias"), Role::Bias, Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    pub fn init_layer_norm(&mut self, prefix: &str, width: usize) -> Result<()> {
        self.insert(format!("{prefix}.gain"), Role::Gain, Tensor::full(&[width], T::one()))?;
        self.insert(format!("{prefix}.offset"), Role::Offset, Tensor::zeros(&[width]))
    }

    /// Two dense layers with a ReLU between them.
    pub fn init_mlp<R: Rng>(
        &mut self,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.init_dense(&format!("{prefix}.l0"), input, hidden, true, rng)?;
        self.init_dense(&format!("{prefix}.l1"), hidden, output, true, rng)
    }

    /// GRU weights: `w_x` `[input, 3·hidden]` (update | reset | candidate),
    /// `u_zr` `[hidden, 2·hidden]`, `u_h` `[hidden, hidden]`, `bias` `[3·hidden]`.
    pub fn init_gru<R: Rng>(&mut self, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
        let bx = 1.0 / (input.max(1) as f64).sqrt();
        let bh = 1.0 / (hidden.max(1) as f64).sqrt();
        let w_x = Tensor::from_fn(&[input, 3 * hidden], |_| T::lit(rng.gen_range(-bx..bx)));
        let u_zr = Tensor::from_fn(&[hidden, 2 * hidden], |_| T::lit(rng.gen_range(-bh..bh)));
        let u_h = Tensor::from_fn(&[hidden, hidden], |_| T::lit(rng.gen_range(-bh..bh)));
        self.insert(format!("{prefix}.w_x"), Role::Weight, w_x)?;
        self.insert(format!("{prefix}.u_zr"), Role::Weight, u_zr)?;
        self.insert(format!("{prefix}.u_h"), Role::Weight, u_h)?;
        self.insert(format!("{prefix}.bias"), Role::Bias, Tensor::zeros(&[3 * hidden]))
    }

    /// Slot initialization rows drawn from N(0, 1/dim).
    pub fn init_slots<R: Rng>(&mut self, name: &str, slots: usize, dim: usize, rng: &mut R) -> Result<()> {
        let scale = 1.0 / (dim.max(1) as f64).sqrt();
        let c = Tensor::from_fn(&[slots, dim], |_| {
            let e: f64 = StandardNormal.sample(rng);
            T::lit(e * scale)
        });
        self.insert(name, Role::SlotInit, c)
    }
}

/// Graph handles for the entries of a [`ParameterTree`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Structure(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Entries under `prefix`, with the prefix removed.
    pub fn scoped(&self, prefix: &str) -> Bound {
        Bound {
            vars: self
                .vars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), *v)))
                .collect(),
        }
    }
}
