use std::collections::BTreeMap;

use super::array::Array;
use super::params::ParameterStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.00005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment estimates of one optimizer instance.
///
/// Several instances may drive the same [`ParameterStore`]; each keeps its
/// own moments and its own step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    m: BTreeMap<String, Array<S>>,
    v: BTreeMap<String, Array<S>>,
    step_count: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn moments(&self, name: &str) -> Option<(&Array<S>, &Array<S>)> {
        Some((self.m.get(name)?, self.v.get(name)?))
    }

    /// One bias-corrected Adam update of every entry named in `grads`.
    pub fn step(
        &mut self,
        store: &mut ParameterStore<S>,
        grads: &BTreeMap<String, Array<S>>,
    ) -> Result<()> {
        for (name, g) in grads {
            let w = store.get(name)?;
            if w.dims() != g.dims() {
                return Err(Error::Invalid(format!(
                    "gradient for `{name}` has dims {:?}, weights {:?}",
                    g.dims(),
                    w.dims()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let (b1, b2, lr, eps) = (S::of(beta1), S::of(beta2), S::of(lr), S::of(eps));
        let one = S::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for (name, g) in grads {
            let w = store.get_mut(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.dims().to_vec()).expect("valid dims"));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array::zeros(g.dims().to_vec()).expect("valid dims"));
            for (((wi, mi), vi), &gi) in w
                .values_mut()
                .iter_mut()
                .zip(m.values_mut())
                .zip(v.values_mut())
                .zip(g.values())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *wi = *wi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Flattens the optimizer state into checkpoint entries under `prefix`.
    pub fn export(&self, prefix: &str) -> Vec<(String, Array<S>)> {
        let mut out = vec![(
            format!("{prefix}.step"),
            Array::scalar(S::of(self.step_count as f64)),
        )];
        for (k, m) in &self.m {
            out.push((format!("{prefix}.m.{k}"), m.clone()));
        }
        for (k, v) in &self.v {
            out.push((format!("{prefix}.v.{k}"), v.clone()));
        }
        out
    }

    /// Inverse of [`Adam::export`].
    pub fn import(
        config: AdamConfig,
        prefix: &str,
        entries: &BTreeMap<String, Array<S>>,
    ) -> Result<Self> {
        let mut adam = Self::new(config);
        let step_key = format!("{prefix}.step");
        let step = entries
            .get(&step_key)
            .and_then(Array::item)
            .ok_or_else(|| Error::Checkpoint(format!("missing `{step_key}`")))?;
        adam.step_count = step.as_f64() as u64;
        let mp = format!("{prefix}.m.");
        let vp = format!("{prefix}.v.");
        for (k, a) in entries {
            if let Some(n) = k.strip_prefix(&mp) {
                adam.m.insert(n.to_string(), a.clone());
            } else if let Some(n) = k.strip_prefix(&vp) {
                adam.v.insert(n.to_string(), a.clone());
            }
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new();
        s.insert("w", Array::scalar(w));
        s
    }

    fn grads(g: f64) -> BTreeMap<String, Array<f64>> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Array::scalar(g));
        m
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut s = store(0.7);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut s, &grads(0.0)).unwrap();
        assert_eq!(s.get("w").unwrap().values(), &[0.7]);
    }

    #[test]
    fn single_step_by_hand() {
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1; w = 1 - 0.1 / (1 + 1e-8)
        let mut s = store(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut s, &grads(1.0)).unwrap();
        let w = s.get("w").unwrap().values()[0];
        let expect = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((w - expect).abs() < 1e-15);
        assert!((w - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_is_bit_identical_but_advances_moments() {
        let mut s = store(0.3);
        let mut adam = Adam::new(AdamConfig::with_lr(0.0));
        adam.step(&mut s, &grads(2.5)).unwrap();
        assert_eq!(s.get("w").unwrap().values()[0].to_bits(), 0.3f64.to_bits());
        let (m, v) = adam.moments("w").unwrap();
        assert!(m.values()[0] > 0.0 && v.values()[0] > 0.0);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn shape_mismatch_and_unknown_names_fail() {
        let mut s = store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Array::vector(vec![1.0, 2.0]).unwrap());
        assert!(adam.step(&mut s, &g).is_err());
        assert!(adam.step(&mut s, &{
            let mut g = BTreeMap::new();
            g.insert("nope".to_string(), Array::scalar(1.0));
            g
        })
        .is_err());
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(AdamConfig::default().lr, 0.00005);
    }

    #[test]
    fn f32_step() {
        let mut s = ParameterStore::<f32>::new();
        s.insert("w", Array::scalar(1.0f32));
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Array::scalar(1.0f32));
        let mut adam = Adam::new(AdamConfig::with_lr(0.1));
        adam.step(&mut s, &g).unwrap();
        assert!((s.get("w").unwrap().values()[0] - 0.9).abs() < 1e-6);
    }
}
