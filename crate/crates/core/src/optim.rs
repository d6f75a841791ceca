//! Learning-rate schedule, Adam and gradient clipping.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::ModelParameters;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Linear warmup to `peak_lr`, then linear decay to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            peak_lr: 6e-4,
            warmup_steps: 200,
            total_steps: 2_000,
        }
    }
}

impl Schedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Result<Self> {
        let s = Self {
            peak_lr,
            warmup_steps,
            total_steps,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Config(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        if self.warmup_steps == 0 || self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "need 0 < warmup_steps < total_steps, got {} and {}",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Learning rate at `step`; steps past `total_steps` get zero.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step <= self.warmup_steps {
            self.peak_lr * (step as f64 / self.warmup_steps as f64)
        } else if step >= self.total_steps {
            0.0
        } else {
            self.peak_lr * ((self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightDecayStyle {
    /// `param -= lr * wd * param`, outside the adaptive update.
    #[default]
    Decoupled,
    /// `grad += wd * param` before the moment update.
    L2,
}

impl FromStr for WeightDecayStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "decoupled" => Ok(Self::Decoupled),
            "l2" => Ok(Self::L2),
            _ => Err(Error::InvalidArgument(format!("unknown weight decay style {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub wd_style: WeightDecayStyle,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 0.01,
            wd_style: WeightDecayStyle::Decoupled,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("adam eps must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub m: ModelParameters<F>,
    pub v: ModelParameters<F>,
    pub t: u64,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ModelParameters<F>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. The state's step counter is incremented
/// first, so the first call uses `t = 1`. A non-finite gradient aborts the
/// step and leaves parameters and state untouched.
pub fn adam_step<F: Scalar>(
    params: &mut ModelParameters<F>,
    grads: &ModelParameters<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if lr.is_nan() || lr < 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    for (name, g) in grads.named() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    let (b1, b2) = (F::lit(cfg.beta1), F::lit(cfg.beta2));
    let (one_b1, one_b2) = (F::lit(1.0 - cfg.beta1), F::lit(1.0 - cfg.beta2));
    let decay = F::lit(lr * cfg.weight_decay);
    let wd = F::lit(cfg.weight_decay);
    let step = F::lit(lr / bc1);
    let inv_bc2 = F::lit(1.0 / bc2);
    let eps = F::lit(cfg.eps);
    let tensors = params
        .named_mut()
        .into_iter()
        .zip(grads.named())
        .zip(state.m.named_mut())
        .zip(state.v.named_mut());
    for ((((_, p), (_, g)), (_, m)), (_, v)) in tensors {
        for i in 0..p.data.len() {
            let mut gi = g.data[i];
            match cfg.wd_style {
                WeightDecayStyle::Decoupled => {
                    let w = p.data[i];
                    p.data[i] = w - decay * w;
                }
                WeightDecayStyle::L2 => gi += wd * p.data[i],
            }
            m.data[i] = b1 * m.data[i] + one_b1 * gi;
            v.data[i] = b2 * v.data[i] + one_b2 * gi * gi;
            p.data[i] -= step * m.data[i] / ((v.data[i] * inv_bc2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping. `None` disables clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut ModelParameters<F>, max_norm: Option<f64>) -> f64 {
    let norm = grads
        .named()
        .iter()
        .flat_map(|(_, t)| t.data.iter())
        .map(|v| {
            let x = v.as_f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if let Some(max) = max_norm {
        if norm > max && norm.is_finite() {
            grads.scale(F::lit(max / norm));
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn scalar_model(value: f64) -> ModelParameters<f64> {
        let mut p = ModelParameters::<f64>::init(&EncoderConfig::tiny(8), 0).unwrap();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
        p
    }

    #[test]
    fn schedule_examples() {
        let full_scale = Schedule::new(6e-4, 24_000, 500_000).unwrap();
        assert!((full_scale.lr_at(24_000) - 6e-4).abs() < 1e-18);
        assert!((full_scale.lr_at(12_000) - 3e-4).abs() < 1e-18);
        assert_eq!(full_scale.lr_at(500_000), 0.0);
        assert_eq!(full_scale.lr_at(0), 0.0);
        let mut max = (0, 0.0);
        for s in (0..=500_000).step_by(1000) {
            let lr = full_scale.lr_at(s);
            assert!(lr >= 0.0);
            if lr > max.1 {
                max = (s, lr);
            }
        }
        assert_eq!(max.0, 24_000);
    }

    #[test]
    fn schedule_is_continuous_at_the_knee() {
        let s = Schedule::new(1.0, 10, 30).unwrap();
        assert_eq!(s.lr_at(10), 1.0);
        assert!((s.lr_at(11) - 0.95).abs() < 1e-15);
        assert!((s.lr_at(9) - 0.9).abs() < 1e-15);
        assert!(Schedule::new(1.0, 0, 10).is_err());
        assert!(Schedule::new(1.0, 10, 10).is_err());
        assert!(Schedule::new(0.0, 1, 10).is_err());
    }

    #[test]
    fn first_adam_step_matches_hand_evaluation() {
        // m_hat = 1, v_hat = 1: update = -1e-3 * 1 / (1 + 1e-6).
        let mut p = scalar_model(0.0);
        let g = scalar_model(1.0);
        let mut st = OptimizerState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        let expected = -9.999_990_000_01e-4;
        for (_, t) in p.named() {
            assert!(t.data.iter().all(|v| (v - expected).abs() < 1e-9));
        }
        assert!((p.mlm_bias.data[0] - -1e-3 / (1.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut p = scalar_model(0.25);
        let before = p.clone();
        let g = p.zeros_like();
        let mut st = OptimizerState::new(&p);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &g, &mut st, 1e-3, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn decay_styles_differ() {
        let g = scalar_model(0.0).zeros_like();
        let cfg = AdamConfig::default();
        let mut dec = scalar_model(1.0);
        let mut st = OptimizerState::new(&dec);
        adam_step(&mut dec, &g, &mut st, 0.1, &cfg).unwrap();
        assert!((dec.mlm_bias.data[0] - (1.0 - 0.1 * 0.01)).abs() < 1e-15);

        let mut l2 = scalar_model(1.0);
        let mut st = OptimizerState::new(&l2);
        let cfg = AdamConfig {
            wd_style: WeightDecayStyle::L2,
            ..cfg
        };
        adam_step(&mut l2, &g, &mut st, 0.1, &cfg).unwrap();
        // Gradient becomes 0.01 everywhere, so the first step moves by ~lr.
        assert!((l2.mlm_bias.data[0] - (1.0 - 0.1 * 0.01 / (0.01 + 1e-6))).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut p = scalar_model(0.5);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[1].out_bias.data[2] = f64::NAN;
        let mut st = OptimizerState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, 1e-3, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "layers.1.attn.out.bias"), "{err}");
        assert_eq!(p, before);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = scalar_model(0.1);
            let mut g = p.zeros_like();
            for (i, t) in g.tensors_mut().enumerate() {
                t.data.iter_mut().enumerate().for_each(|(j, v)| *v = ((i * 31 + j) as f64).sin());
            }
            let mut st = OptimizerState::new(&p);
            for _ in 0..2 {
                adam_step(&mut p, &g, &mut st, 1e-3, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_caps_norm_and_reports_original() {
        let mut g = scalar_model(0.0);
        g.mlm_bias.data[0] = 3.0;
        g.mlm_bias.data[1] = 4.0;
        assert_eq!(clip_global_norm(&mut g, Some(1.0)), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert!((g.mlm_bias.data[0] - 0.6).abs() < 1e-12);
        let mut small = g.clone();
        assert!((clip_global_norm(&mut small, Some(10.0)) - 1.0).abs() < 1e-12);
        assert_eq!(small, g);
        let mut off = scalar_model(0.0);
        off.mlm_bias.data[0] = 100.0;
        assert_eq!(clip_global_norm(&mut off, None), 100.0);
        assert_eq!(off.mlm_bias.data[0], 100.0);
    }
}
