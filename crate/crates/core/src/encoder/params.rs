use super::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::Scalar;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut CounterRng) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| F::lit(rng.normal() * std)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::lit(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub attn_norm_gamma: Tensor<F>,
    pub attn_norm_beta: Tensor<F>,
    /// `[hidden, 3 * hidden]`, columns ordered query, key, value.
    pub qkv_weight: Tensor<F>,
    pub qkv_bias: Tensor<F>,
    pub out_weight: Tensor<F>,
    pub out_bias: Tensor<F>,
    pub ffn_norm_gamma: Tensor<F>,
    pub ffn_norm_beta: Tensor<F>,
    pub ffn_in_weight: Tensor<F>,
    pub ffn_in_bias: Tensor<F>,
    pub ffn_out_weight: Tensor<F>,
    pub ffn_out_bias: Tensor<F>,
}

/// Encoder, masked-LM head and projection head weights.
///
/// Linear maps are stored `[in, out]` and applied as `y = x W + b`. The
/// masked-LM decoder reuses the token embedding matrix and only owns a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<F> {
    pub config: EncoderConfig,
    pub token_embedding: Tensor<F>,
    pub position_embedding: Tensor<F>,
    pub layers: Vec<LayerParams<F>>,
    pub final_norm_gamma: Tensor<F>,
    pub final_norm_beta: Tensor<F>,
    pub mlm_bias: Tensor<F>,
    pub proj_in_weight: Tensor<F>,
    pub proj_in_bias: Tensor<F>,
    pub proj_out_weight: Tensor<F>,
    pub proj_out_bias: Tensor<F>,
}

macro_rules! layer_fields {
    ($m:ident) => {
        [
            ("attn_norm.gamma", &$m.attn_norm_gamma),
            ("attn_norm.beta", &$m.attn_norm_beta),
            ("attn.qkv.weight", &$m.qkv_weight),
            ("attn.qkv.bias", &$m.qkv_bias),
            ("attn.out.weight", &$m.out_weight),
            ("attn.out.bias", &$m.out_bias),
            ("ffn_norm.gamma", &$m.ffn_norm_gamma),
            ("ffn_norm.beta", &$m.ffn_norm_beta),
            ("ffn.in.weight", &$m.ffn_in_weight),
            ("ffn.in.bias", &$m.ffn_in_bias),
            ("ffn.out.weight", &$m.ffn_out_weight),
            ("ffn.out.bias", &$m.ffn_out_bias),
        ]
    };
    (mut $m:ident) => {
        [
            ("attn_norm.gamma", &mut $m.attn_norm_gamma),
            ("attn_norm.beta", &mut $m.attn_norm_beta),
            ("attn.qkv.weight", &mut $m.qkv_weight),
            ("attn.qkv.bias", &mut $m.qkv_bias),
            ("attn.out.weight", &mut $m.out_weight),
            ("attn.out.bias", &mut $m.out_bias),
            ("ffn_norm.gamma", &mut $m.ffn_norm_gamma),
            ("ffn_norm.beta", &mut $m.ffn_norm_beta),
            ("ffn.in.weight", &mut $m.ffn_in_weight),
            ("ffn.in.bias", &mut $m.ffn_in_bias),
            ("ffn.out.weight", &mut $m.ffn_out_weight),
            ("ffn.out.bias", &mut $m.ffn_out_bias),
        ]
    };
}

impl<F: Scalar> LayerParams<F> {
    fn init(cfg: &EncoderConfig, rng: &mut CounterRng) -> Self {
        let h = cfg.hidden;
        let std = cfg.init_std;
        Self {
            attn_norm_gamma: Tensor::filled(&[h], F::one()),
            attn_norm_beta: Tensor::zeros(&[h]),
            qkv_weight: Tensor::normal(&[h, 3 * h], std, rng),
            qkv_bias: Tensor::zeros(&[3 * h]),
            out_weight: Tensor::normal(&[h, h], std, rng),
            out_bias: Tensor::zeros(&[h]),
            ffn_norm_gamma: Tensor::filled(&[h], F::one()),
            ffn_norm_beta: Tensor::zeros(&[h]),
            ffn_in_weight: Tensor::normal(&[h, cfg.ffn_dim], std, rng),
            ffn_in_bias: Tensor::zeros(&[cfg.ffn_dim]),
            ffn_out_weight: Tensor::normal(&[cfg.ffn_dim, h], std, rng),
            ffn_out_bias: Tensor::zeros(&[h]),
        }
    }
}

impl<F: Scalar> ModelParameters<F> {
    /// Normal(0, init_std) weights, zero biases, unit layer-norm gains.
    /// The projection head uses a fan-in scaled initialisation.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = CounterRng::new(seed);
        let h = config.hidden;
        let std = config.init_std;
        let token_embedding = Tensor::normal(&[config.vocab_size, h], std, &mut rng);
        let position_embedding = Tensor::normal(&[config.max_positions, h], std, &mut rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(config, &mut rng))
            .collect();
        let head_std = 1.0 / (h as f64).sqrt();
        Ok(Self {
            config: *config,
            token_embedding,
            position_embedding,
            layers,
            final_norm_gamma: Tensor::filled(&[h], F::one()),
            final_norm_beta: Tensor::zeros(&[h]),
            mlm_bias: Tensor::zeros(&[config.vocab_size]),
            proj_in_weight: Tensor::normal(&[h, h], head_std, &mut rng),
            proj_in_bias: Tensor::zeros(&[h]),
            proj_out_weight: Tensor::normal(&[h, config.projection_dim], head_std, &mut rng),
            proj_out_bias: Tensor::zeros(&[config.projection_dim]),
        })
    }

    /// Named tensors in a fixed order.
    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_embedding),
            ("embeddings.position".to_string(), &self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in layer_fields!(l) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_norm.gamma".to_string(), &self.final_norm_gamma),
            ("final_norm.beta".to_string(), &self.final_norm_beta),
            ("mlm.bias".to_string(), &self.mlm_bias),
            ("projection.in.weight".to_string(), &self.proj_in_weight),
            ("projection.in.bias".to_string(), &self.proj_in_bias),
            ("projection.out.weight".to_string(), &self.proj_out_weight),
            ("projection.out.bias".to_string(), &self.proj_out_bias),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &mut self.token_embedding),
            ("embeddings.position".to_string(), &mut self.position_embedding),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, t) in layer_fields!(mut l) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out.extend([
            ("final_norm.gamma".to_string(), &mut self.final_norm_gamma),
            ("final_norm.beta".to_string(), &mut self.final_norm_beta),
            ("mlm.bias".to_string(), &mut self.mlm_bias),
            ("projection.in.weight".to_string(), &mut self.proj_in_weight),
            ("projection.in.bias".to_string(), &mut self.proj_in_bias),
            ("projection.out.weight".to_string(), &mut self.proj_out_weight),
            ("projection.out.bias".to_string(), &mut self.proj_out_bias),
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.named_mut().into_iter().map(|(_, t)| t)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = F::zero());
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn global_norm(&self) -> F {
        self.named()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .fold(F::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn cast<G: Scalar>(&self) -> ModelParameters<G> {
        let mut out = ModelParameters::<G>::init(&self.config, 0).expect("validated config");
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }

    /// Replaces tensors from `(name, shape, data)` records; every tensor must
    /// be supplied exactly once with a matching shape.
    pub fn assign_named(&mut self, mut records: Vec<(String, Tensor<F>)>) -> Result<()> {
        let expected = self.named().len();
        if records.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} tensors, found {}",
                records.len()
            )));
        }
        for (name, slot) in self.named_mut() {
            let pos = records
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::ShapeMismatch(format!("missing tensor {name}")))?;
            let (_, t) = records.swap_remove(pos);
            if t.shape != slot.shape {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: expected {:?}, found {:?}",
                    slot.shape, t.shape
                )));
            }
            *slot = t;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let cfg = EncoderConfig::tiny(30);
        let p = ModelParameters::<f32>::init(&cfg, 1).unwrap();
        assert_eq!(p.token_embedding.shape, [30, 16]);
        assert_eq!(p.position_embedding.shape, [32, 16]);
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].qkv_weight.shape, [16, 48]);
        assert_eq!(p.layers[1].ffn_in_weight.shape, [16, 32]);
        assert_eq!(p.proj_out_weight.shape, [16, 8]);
        assert_eq!(p.named().len(), 2 + 2 * 12 + 7);
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn init_is_seeded() {
        let cfg = EncoderConfig::tiny(30);
        let a = ModelParameters::<f32>::init(&cfg, 5).unwrap();
        assert_eq!(a, ModelParameters::<f32>::init(&cfg, 5).unwrap());
        assert_ne!(a, ModelParameters::<f32>::init(&cfg, 6).unwrap());
        assert!(a.is_finite());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = EncoderConfig::tiny(30);
        cfg.heads = 3;
        assert!(ModelParameters::<f32>::init(&cfg, 1).is_err());
        cfg = EncoderConfig::tiny(0);
        assert!(ModelParameters::<f32>::init(&cfg, 1).is_err());
    }

    #[test]
    fn assign_named_checks_shapes() {
        let cfg = EncoderConfig::tiny(12);
        let a = ModelParameters::<f32>::init(&cfg, 1).unwrap();
        let mut b = ModelParameters::<f32>::init(&cfg, 2).unwrap();
        let records: Vec<(String, Tensor<f32>)> =
            a.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        b.assign_named(records.clone()).unwrap();
        assert_eq!(a, b);
        let mut bad = records;
        bad[0].1.shape = vec![1];
        assert!(b.assign_named(bad).is_err());
    }
}
