use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;
use crate::text::{Style, N_SPECIAL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Bidirectional attention, masked-LM objective, mean pooling.
    Encoder,
    /// Causal attention, next-token objective, last-token pooling.
    Decoder,
}

impl Variant {
    pub fn style(self) -> Style {
        match self {
            Variant::Encoder => Style::Encoder,
            Variant::Decoder => Style::Decoder,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub variant: Variant,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Share the token embedding with the LM output projection.
    #[serde(default = "yes")]
    pub tie_embeddings: bool,
    #[serde(default)]
    pub nsp_head: bool,
}

impl ArchConfig {
    /// L=2, d=64, h=4, FFN 256, max_len 32, dropout 0.1.
    pub fn toy(variant: Variant, vocab_size: usize, seed: u64) -> Self {
        ArchConfig {
            variant,
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            max_len: 32,
            vocab_size,
            dropout: 0.1,
            seed,
            tie_embeddings: true,
            nsp_head: false,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::field("layers", "must be at least 1"));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::field(
                "heads",
                format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads),
            ));
        }
        if self.d_ff == 0 {
            return Err(Error::field("d_ff", "must be at least 1"));
        }
        if self.max_len < 3 {
            return Err(Error::field("max_len", "must be at least 3"));
        }
        if self.vocab_size < N_SPECIAL as usize {
            return Err(Error::field("vocab_size", "must cover the special tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::field("dropout", "must lie in [0, 1)"));
        }
        if self.nsp_head && self.variant != Variant::Encoder {
            return Err(Error::field("nsp_head", "next-sentence prediction needs the encoder variant"));
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.d_model, self.d_ff, self.layers);
        let per_layer = 2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d);
        let head = if self.tie_embeddings { 0 } else { v * d };
        let nsp = if self.nsp_head { 2 * d + 2 } else { 0 };
        v * d + self.max_len * d + l * per_layer + 2 * d + v + head + nsp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All learnable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ArchConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
    pub lm_bias: Tensor,
    /// Separate output projection when embeddings are untied.
    pub lm_head: Option<Tensor>,
    pub nsp_w: Option<Tensor>,
    pub nsp_b: Option<Tensor>,
}

const INIT_STD: f64 = 0.02;

impl ModelParams {
    /// Gaussian(σ=0.02) weights, zero biases, unit LayerNorm gains.
    pub fn init(config: &ArchConfig) -> Result<Self> {
        config.validate()?;
        let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
        let mut rng = seed::rng(config.seed, "transformer-init", &[]);
        let mut g = |shape: &[usize]| Tensor::gaussian(shape, INIT_STD, &mut rng);
        let tok_emb = g(&[v, d]);
        let pos_emb = g(&[config.max_len, d]);
        let layers = (0..config.layers)
            .map(|_| LayerParams {
                ln1_g: Tensor::filled(&[d], 1.0),
                ln1_b: Tensor::zeros(&[d]),
                wq: g(&[d, d]),
                bq: Tensor::zeros(&[d]),
                wk: g(&[d, d]),
                bk: Tensor::zeros(&[d]),
                wv: g(&[d, d]),
                bv: Tensor::zeros(&[d]),
                wo: g(&[d, d]),
                bo: Tensor::zeros(&[d]),
                ln2_g: Tensor::filled(&[d], 1.0),
                ln2_b: Tensor::zeros(&[d]),
                w1: g(&[d, f]),
                b1: Tensor::zeros(&[f]),
                w2: g(&[f, d]),
                b2: Tensor::zeros(&[d]),
            })
            .collect();
        let lm_head = (!config.tie_embeddings).then(|| g(&[v, d]));
        let nsp_w = config.nsp_head.then(|| g(&[d, 2]));
        Ok(ModelParams {
            config: config.clone(),
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Tensor::filled(&[d], 1.0),
            lnf_b: Tensor::zeros(&[d]),
            lm_bias: Tensor::zeros(&[v]),
            lm_head,
            nsp_b: config.nsp_head.then(|| Tensor::zeros(&[2])),
            nsp_w,
        })
    }

    /// Same structure, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// Named tensors in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![("tok_emb".into(), &self.tok_emb), ("pos_emb".into(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in [
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("wq", &l.wq),
                ("bq", &l.bq),
                ("wk", &l.wk),
                ("bk", &l.bk),
                ("wv", &l.wv),
                ("bv", &l.bv),
                ("wo", &l.wo),
                ("bo", &l.bo),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
                ("w1", &l.w1),
                ("b1", &l.b1),
                ("w2", &l.w2),
                ("b2", &l.b2),
            ] {
                out.push((format!("layers.{i}.{n}"), t));
            }
        }
        out.push(("lnf_g".into(), &self.lnf_g));
        out.push(("lnf_b".into(), &self.lnf_b));
        out.push(("lm_bias".into(), &self.lm_bias));
        if let Some(t) = &self.lm_head {
            out.push(("lm_head".into(), t));
        }
        if let (Some(w), Some(b)) = (&self.nsp_w, &self.nsp_b) {
            out.push(("nsp_w".into(), w));
            out.push(("nsp_b".into(), b));
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_g,
                &mut l.ln1_b,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_g,
                &mut l.ln2_b,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ]);
        }
        out.push(&mut self.lnf_g);
        out.push(&mut self.lnf_b);
        out.push(&mut self.lm_bias);
        if let Some(t) = &mut self.lm_head {
            out.push(t);
        }
        if let (Some(w), Some(b)) = (&mut self.nsp_w, &mut self.nsp_b) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.is_finite())
    }

    /// Output projection matrix [V, d].
    pub fn output_embedding(&self) -> &Tensor {
        self.lm_head.as_ref().unwrap_or(&self.tok_emb)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("transformer", json!({ "arch": self.config }));
        for (name, t) in self.named() {
            c.push(name, t.clone());
        }
        c
    }

    pub fn from_container(mut c: Container) -> Result<Self> {
        let arch = c.meta.get("arch").cloned().ok_or_else(|| Error::Format("header has no `arch`".into()))?;
        let config: ArchConfig = serde_json::from_value(arch).map_err(|e| Error::Format(format!("arch: {e}")))?;
        Self::from_tensors(config, &mut c)
    }

    /// Pull this architecture's tensors out of a container, checking every shape.
    pub fn from_tensors(config: ArchConfig, c: &mut Container) -> Result<Self> {
        let mut p = ModelParams::init(&config)?;
        let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(p.tensors_mut()) {
            let shape = slot.shape.clone();
            *slot = c.take(name, &shape)?;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> ArchConfig {
        ArchConfig { d_model: 8, heads: 2, d_ff: 12, max_len: 6, ..ArchConfig::toy(variant, 20, 5) }
    }

    #[test]
    fn init_is_deterministic() {
        let c = small(Variant::Encoder);
        assert_eq!(ModelParams::init(&c).unwrap(), ModelParams::init(&c).unwrap());
        let mut other = c.clone();
        other.seed = 6;
        assert_ne!(ModelParams::init(&c).unwrap().tok_emb, ModelParams::init(&other).unwrap().tok_emb);
    }

    #[test]
    fn head_divisibility() {
        assert!(ModelParams::init(&small(Variant::Encoder)).is_ok());
        let bad = ArchConfig { heads: 3, ..small(Variant::Encoder) };
        match ModelParams::init(&bad) {
            Err(Error::InvalidField { field, .. }) => assert_eq!(field, "heads"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parameter_count_matches_shapes() {
        for cfg in [
            small(Variant::Encoder),
            ArchConfig { tie_embeddings: false, nsp_head: true, ..small(Variant::Encoder) },
            ArchConfig::toy(Variant::Decoder, 600, 1),
        ] {
            let p = ModelParams::init(&cfg).unwrap();
            assert_eq!(p.param_count(), cfg.param_count());
        }
        // Toy default, worked by hand: V=600, d=64, f=256, L=2, max_len=32.
        let per_layer = 128 + 4 * (4096 + 64) + 128 + (16_384 + 256) + (16_384 + 64);
        assert_eq!(ArchConfig::toy(Variant::Decoder, 600, 1).param_count(), 38_400 + 2048 + 2 * per_layer + 128 + 600);
    }

    #[test]
    fn init_statistics() {
        let p = ModelParams::init(&ArchConfig::toy(Variant::Encoder, 400, 3)).unwrap();
        let xs = &p.tok_emb.data;
        let sd = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((sd - 0.02).abs() < 0.001, "{sd}");
        assert!(p.layers[0].bq.data.iter().all(|&x| x == 0.0));
        assert!(p.layers[1].ln2_g.data.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn container_round_trip() {
        let p = ModelParams::init(&ArchConfig { nsp_head: true, ..small(Variant::Encoder) }).unwrap();
        let bytes = p.to_container().to_bytes().unwrap();
        let back = ModelParams::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, p);
    }
}
