//! Adam with bias correction and a staircase exponential learning-rate decay.

use crate::encoders::ParamSlot;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Added after the square root of the second-moment estimate.
    pub eps: f64,
    pub decay: f64,
    pub decay_interval: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr0: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.999,
            decay_interval: 1000,
        }
    }
}

impl AdamConfig {
    /// lr0 · decay^floor(t / decay_interval): constant within each interval.
    pub fn lr_at(&self, t: u64) -> f64 {
        let k = t / self.decay_interval.max(1);
        self.lr0 * self.decay.powf(k as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr0 > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.decay_interval > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Learning rate at step `t` under the default schedule.
pub fn lr_at(t: u64) -> f64 {
    AdamConfig::default().lr_at(t)
}

/// Moments for each parameter tensor, in the order the slots are passed.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    step: u64,
    names: Vec<String>,
    m: Vec<Tensor<F>>,
    v: Vec<Tensor<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            names: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Restores saved state; moments must be listed in slot order.
    pub fn from_parts(
        config: AdamConfig,
        step: u64,
        names: Vec<String>,
        m: Vec<Tensor<F>>,
        v: Vec<Tensor<F>>,
    ) -> Result<Self> {
        if names.len() != m.len() || m.len() != v.len() {
            return Err(Error::State("optimizer moment lists differ in length".into()));
        }
        if m.iter().zip(&v).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::State("first and second moments differ in shape".into()));
        }
        Ok(AdamState {
            config,
            step,
            names,
            m,
            v,
        })
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn first_moments(&self) -> &[Tensor<F>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<F>] {
        &self.v
    }

    fn ensure_layout(&mut self, slots: &[ParamSlot<'_, F>]) -> Result<()> {
        if self.m.is_empty() && self.step == 0 {
            self.names = slots.iter().map(|s| s.name.clone()).collect();
            self.m = slots.iter().map(|s| Tensor::zeros(s.value.shape())).collect();
            self.v = self.m.clone();
            return Ok(());
        }
        let matches = slots.len() == self.m.len()
            && slots
                .iter()
                .zip(&self.names)
                .zip(&self.m)
                .all(|((s, n), m)| &s.name == n && s.value.shape() == m.shape());
        if matches {
            Ok(())
        } else {
            Err(Error::State("optimizer state does not match the parameter layout".into()))
        }
    }

    /// Applies one update using the gradients stored in the slots.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_, F>]) -> Result<()> {
        for s in slots.iter() {
            if s.grad.shape() != s.value.shape() {
                return Err(Error::dim(format!(
                    "gradient of {} has shape {:?}, parameter {:?}",
                    s.name,
                    s.grad.shape(),
                    s.value.shape()
                )));
            }
            if !s.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", s.name)));
            }
        }
        self.ensure_layout(slots)?;

        let c = self.config;
        let lr = F::of(c.lr_at(self.step));
        let t = (self.step + 1) as f64;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let one_m_b1 = F::of(1.0 - c.beta1);
        let one_m_b2 = F::of(1.0 - c.beta2);
        let bc1 = F::of(1.0 - c.beta1.powf(t));
        let bc2 = F::of(1.0 - c.beta2.powf(t));
        let eps = F::of(c.eps);

        for ((slot, m), v) in slots.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let theta = slot.value.data_mut();
            let g = slot.grad.data();
            for i in 0..theta.len() {
                let gi = g[i];
                let mi = b1 * m.data()[i] + one_m_b1 * gi;
                let vi = b2 * v.data()[i] + one_m_b2 * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        self.step += 1;
        Ok(())
    }
}
