use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkParameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rho: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            rho: 0.9,
            decay: 0.0,
            epsilon: 1e-8,
            batch_size: 4,
            iterations: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::Validation(format!("rho {} must lie in (0, 1)", self.rho)));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Validation(format!("decay {} must be >= 0", self.decay)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Validation(format!("epsilon {} must be > 0", self.epsilon)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        Ok(())
    }

    /// Learning rate after `step` updates (`lr / (1 + decay * step)`).
    pub fn rate_at(&self, step: usize) -> f64 {
        self.learning_rate / (1.0 + self.decay * step as f64)
    }
}

/// Running averages of squared gradients, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    pub step: usize,
    pub accum: Gradients,
}

impl RmsState {
    pub fn new(p: &NetworkParameters) -> Self {
        RmsState {
            step: 0,
            accum: p.zeros_like(),
        }
    }
}

fn update(p: &mut [f64], g: &[f64], v: &mut [f64], rho: f64, lr: f64, eps: f64) {
    for ((w, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = rho * *v + (1.0 - rho) * g * g;
        *w -= lr * g / (v.sqrt() + eps);
    }
}

pub fn rmsprop_step(p: &mut NetworkParameters, grads: &Gradients, s: &mut RmsState, cfg: &TrainConfig) -> Result<()> {
    if grads.blocks.len() != p.blocks.len() || s.accum.blocks.len() != p.blocks.len() {
        return Err(Error::Validation("gradient or state layout does not match the parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::Divergence {
            iteration: s.step,
            reason: "non-finite gradient".into(),
        });
    }
    let lr = cfg.rate_at(s.step);
    for ((blk, g), v) in p.blocks.iter_mut().zip(&grads.blocks).zip(&mut s.accum.blocks) {
        if g.weights.len() != blk.weights.len() || g.bias.len() != blk.bias.len() {
            return Err(Error::Validation(format!("gradient shape mismatch at {}", blk.spec.name)));
        }
        update(&mut blk.weights, &g.weights, &mut v.weights, cfg.rho, lr, cfg.epsilon);
        update(&mut blk.bias, &g.bias, &mut v.bias, cfg.rho, lr, cfg.epsilon);
    }
    s.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, NetworkConfig};

    fn scalar_net(w: f64) -> NetworkParameters {
        let mut p = build_network(
            &NetworkConfig {
                levels: 1,
                channels: vec![1],
                ..Default::default()
            },
            0,
        )
        .unwrap();
        p.blocks[0].weights[0] = w;
        p
    }

    fn grad_with(p: &NetworkParameters, g: f64) -> Gradients {
        let mut grads = p.zeros_like();
        grads.blocks[0].weights[0] = g;
        grads
    }

    #[test]
    fn closed_form_single_step() {
        let mut p = scalar_net(1.0);
        let grads = grad_with(&p, 0.5);
        let mut s = RmsState::new(&p);
        rmsprop_step(&mut p, &grads, &mut s, &TrainConfig::default()).unwrap();
        assert!((s.accum.blocks[0].weights[0] - 0.025).abs() < 1e-15);
        assert!((p.blocks[0].weights[0] - 0.99683772).abs() < 1e-8);
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let mut p = scalar_net(1.0);
        let grads = grad_with(&p, 0.5);
        let mut s = RmsState::new(&p);
        let cfg = TrainConfig::default();
        rmsprop_step(&mut p, &grads, &mut s, &cfg).unwrap();
        rmsprop_step(&mut p, &grads, &mut s, &cfg).unwrap();
        let v1 = 0.1 * 0.25;
        let w1 = 1.0 - 0.001 * 0.5 / (f64::sqrt(v1) + 1e-8);
        let v2 = 0.9 * v1 + 0.1 * 0.25;
        let w2 = w1 - 0.001 * 0.5 / (f64::sqrt(v2) + 1e-8);
        assert!((p.blocks[0].weights[0] - w2).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar_net(0.3);
        let before = p.clone();
        let grads = p.zeros_like();
        let mut s = RmsState::new(&p);
        rmsprop_step(&mut p, &grads, &mut s, &TrainConfig::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_diverges() {
        let mut p = scalar_net(0.3);
        let grads = grad_with(&p, f64::NAN);
        let mut s = RmsState::new(&p);
        let err = rmsprop_step(&mut p, &grads, &mut s, &TrainConfig::default()).unwrap_err();
        assert!(err.is_numerical());
    }
}
