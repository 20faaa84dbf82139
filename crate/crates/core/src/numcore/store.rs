use std::collections::BTreeMap;

use rand::Rng;

use super::{NumError, Tensor};

/// One trainable tensor with its gradient accumulator and AdamW moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Parameter {
    fn new(value: Tensor) -> Self {
        let (r, c) = (value.rows(), value.cols());
        Self {
            value,
            grad: Tensor::zeros(r, c),
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            step: 0,
        }
    }
}

/// Named trainable parameters, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Parameter>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), Parameter::new(value));
    }

    /// Xavier-uniform initialisation for a `rows × cols` weight.
    pub fn insert_xavier(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).expect("shape"));
    }

    pub fn insert_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.insert(name, Tensor::new(vec![rows, cols], data).expect("shape"));
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor) -> Result<(), NumError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))?;
        if !p.grad.same_shape(grad) {
            return Err(NumError::Shape {
                op: "accumulate",
                left: p.grad.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .flat_map(|p| p.grad.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.values_mut() {
                p.grad.scale_in_place(s);
            }
        }
    }

    /// Moves all parameters of `other` into this store. Names must not collide.
    pub fn merge(&mut self, other: ParameterStore) -> Result<(), NumError> {
        for (name, p) in other.params {
            if self.params.contains_key(&name) {
                return Err(NumError::DuplicateParameter(name));
            }
            self.params.insert(name, p);
        }
        Ok(())
    }

    /// Splits off every parameter whose name starts with `prefix`.
    pub fn split_prefix(&mut self, prefix: &str) -> ParameterStore {
        let names: Vec<String> = self
            .params
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect();
        let mut out = ParameterStore::new();
        for n in names {
            let p = self.params.remove(&n).expect("present");
            out.params.insert(n, p);
        }
        out
    }

    /// One AdamW step with decoupled weight decay; zeroes gradients afterwards.
    pub fn adamw_update(&mut self, opt: &AdamW) -> Result<(), NumError> {
        if opt.lr.is_nan() || opt.lr <= 0.0 {
            return Err(NumError::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                opt.lr
            )));
        }
        for p in self.params.values_mut() {
            p.step += 1;
            let bc1 = 1.0 - opt.beta1.powi(p.step as i32);
            let bc2 = 1.0 - opt.beta2.powi(p.step as i32);
            let decay = 1.0 - opt.lr * opt.weight_decay;
            let value = p.value.data_mut();
            let grad = p.grad.data();
            let m = p.first_moment.data_mut();
            let v = p.second_moment.data_mut();
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] = value[i] * decay - opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
            p.grad.fill(0.0);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::row(values));
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut s = store_with(&[1.0, -2.0, 3.5]);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        s.adamw_update(&opt).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn decoupled_decay_scales_values() {
        let mut s = store_with(&[1.0, -2.0]);
        let opt = AdamW {
            lr: 0.1,
            weight_decay: 0.1,
            ..AdamW::default()
        };
        s.adamw_update(&opt).unwrap();
        let v = s.value("w").unwrap().data();
        assert!((v[0] - 0.99).abs() < 1e-15);
        assert!((v[1] + 1.98).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        let mut s = store_with(&[0.0, 0.0]);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        for _ in 0..50 {
            s.accumulate("w", &Tensor::row(&[0.3, -2.0])).unwrap();
            s.adamw_update(&opt).unwrap();
        }
        let v = s.value("w").unwrap().data();
        assert!(v[0] < 0.0 && v[1] > 0.0);
        assert_eq!(s.get("w").unwrap().step, 50);
        assert_eq!(s.grad("w").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let mut s = store_with(&[1.0]);
        let opt = AdamW {
            lr: 0.0,
            ..AdamW::default()
        };
        assert!(matches!(
            s.adamw_update(&opt),
            Err(NumError::InvalidParameter(_))
        ));
    }
}
