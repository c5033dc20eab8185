//! Classifier/autoencoder composite.
//!
//! A shared backbone `E` feeds two projection heads: `f_c` gives the
//! classification embedding `E_c = f_c ∘ E` consumed by the per-task heads,
//! `f_r` gives the reconstruction embedding `E_r = f_r ∘ E` consumed by the
//! decoder and modelled by the flow.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Dense, Dropout, Layer, Network, Padding};
use crate::rng::{self, Purpose, Rng};
use crate::tensor::{one_hot, Tensor};

/// Which generators receive the one-hot class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    Both,
    Decoder,
    Flow,
    None,
}

impl Conditioning {
    pub fn decoder(self) -> bool {
        matches!(self, Conditioning::Both | Conditioning::Decoder)
    }

    pub fn flow(self) -> bool {
        matches!(self, Conditioning::Both | Conditioning::Flow)
    }

    pub fn name(self) -> &'static str {
        match self {
            Conditioning::Both => "both",
            Conditioning::Decoder => "decoder",
            Conditioning::Flow => "flow",
            Conditioning::None => "none",
        }
    }
}

impl core::str::FromStr for Conditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Conditioning::Both),
            "decoder" => Ok(Conditioning::Decoder),
            "flow" => Ok(Conditioning::Flow),
            "none" => Ok(Conditioning::None),
            other => Err(Error::config(format!("unknown conditioning mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderSpec {
    /// Dense layers with ReLU; inputs are flattened first.
    Mlp { hidden: Vec<usize> },
    /// Same-padded convolutions with ReLU, then flattened. Needs
    /// `(channels, height, width)` inputs.
    Conv {
        channels: Vec<usize>,
        kernel: usize,
        stride: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_shape: Vec<usize>,
    pub encoder: EncoderSpec,
    /// Width of `E_c`.
    pub class_embedding: usize,
    /// Width of `E_r`, i.e. of the flow.
    pub recon_embedding: usize,
    pub head_hidden: Vec<usize>,
    pub head_dropout: f64,
    pub decoder_hidden: Vec<usize>,
    /// Size of the one-hot class vector (all classes of the stream).
    pub total_classes: usize,
    pub conditioning: Conditioning,
}

impl ModelConfig {
    pub fn mlp(input_shape: &[usize], total_classes: usize) -> Self {
        Self {
            input_shape: input_shape.to_vec(),
            encoder: EncoderSpec::Mlp { hidden: vec![256] },
            class_embedding: 100,
            recon_embedding: 100,
            head_hidden: vec![64, 32],
            head_dropout: 0.2,
            decoder_hidden: vec![256],
            total_classes,
            conditioning: Conditioning::Decoder,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualModel {
    pub config: ModelConfig,
    /// `E`
    pub backbone: Network,
    /// `f_c`
    pub class_proj: Network,
    /// `f_r`
    pub recon_proj: Network,
    /// `S_t`, keyed by task index.
    pub heads: BTreeMap<usize, Network>,
    /// `D`
    pub decoder: Network,
}

fn build_backbone(cfg: &ModelConfig, rng: &mut Rng) -> Result<(Network, usize)> {
    let mut layers = Vec::new();
    let width = match &cfg.encoder {
        EncoderSpec::Mlp { hidden } => {
            layers.push(Layer::Flatten);
            let mut w = cfg.input_len();
            for &h in hidden {
                layers.push(Layer::Dense(Dense::new(w, h, rng)));
                layers.push(Layer::Relu);
                w = h;
            }
            w
        }
        EncoderSpec::Conv {
            channels,
            kernel,
            stride,
        } => {
            if cfg.input_shape.len() != 3 {
                return Err(Error::config(
                    "convolutional encoder needs (channels, height, width) inputs",
                ));
            }
            let mut shape = [cfg.input_shape[0], cfg.input_shape[1], cfg.input_shape[2]];
            for &c in channels {
                let conv = Conv2d::new(shape[0], c, *kernel, *stride, Padding::Same, rng);
                shape = conv
                    .output_shape(&shape)
                    .ok_or_else(|| Error::config("convolution does not fit the input"))?;
                layers.push(Layer::Conv2d(conv));
                layers.push(Layer::Relu);
            }
            layers.push(Layer::Flatten);
            shape.iter().product()
        }
    };
    Ok((Network::new(layers), width))
}

impl ContinualModel {
    /// Initializes every shared component; heads are added per task.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&config.head_dropout) {
            return Err(Error::config("head dropout must be in [0, 1)"));
        }
        let mut enc_rng = rng::stream(seed, Purpose::EncoderInit, 0);
        let (backbone, feat) = build_backbone(&config, &mut enc_rng)?;
        let class_proj = Network::new(vec![Layer::Dense(Dense::new(
            feat,
            config.class_embedding,
            &mut enc_rng,
        ))]);

        let mut dec_rng = rng::stream(seed, Purpose::DecoderInit, 0);
        let recon_proj = Network::new(vec![Layer::Dense(Dense::new(
            feat,
            config.recon_embedding,
            &mut dec_rng,
        ))]);
        let mut layers = Vec::new();
        let mut w = config.recon_embedding;
        if config.conditioning.decoder() {
            layers.push(Layer::ConcatCondition {
                width: config.total_classes,
            });
            w += config.total_classes;
        }
        for &h in &config.decoder_hidden {
            layers.push(Layer::Dense(Dense::new(w, h, &mut dec_rng)));
            layers.push(Layer::Relu);
            w = h;
        }
        layers.push(Layer::Dense(Dense::new(w, config.input_len(), &mut dec_rng)));

        Ok(Self {
            config,
            backbone,
            class_proj,
            recon_proj,
            heads: BTreeMap::new(),
            decoder: Network::new(layers),
        })
    }

    /// Adds a freshly initialized head `S_t` with `classes` outputs.
    pub fn add_head(&mut self, task: usize, classes: usize, seed: u64) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(Error::state(format!("head for task {task} already exists")));
        }
        let mut rng = rng::stream(seed, Purpose::HeadInit, task as u64);
        let mut layers = Vec::new();
        let mut w = self.config.class_embedding;
        for &h in &self.config.head_hidden {
            layers.push(Layer::Dense(Dense::new(w, h, &mut rng)));
            layers.push(Layer::Relu);
            layers.push(Layer::Dropout(Dropout::new(self.config.head_dropout)?));
            w = h;
        }
        layers.push(Layer::Dense(Dense::new(w, classes, &mut rng)));
        self.heads.insert(task, Network::new(layers));
        Ok(())
    }

    pub fn head(&self, task: usize) -> Result<&Network> {
        self.heads
            .get(&task)
            .ok_or_else(|| Error::config(format!("no head for task {task}")))
    }

    pub fn head_mut(&mut self, task: usize) -> Result<&mut Network> {
        self.heads
            .get_mut(&task)
            .ok_or_else(|| Error::config(format!("no head for task {task}")))
    }

    /// `E_c(x)`
    pub fn encode_classify(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.backbone.infer(x, None)?;
        self.class_proj.infer(&h, None)
    }

    /// `E_r(x)`
    pub fn encode_reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.backbone.infer(x, None)?;
        self.recon_proj.infer(&h, None)
    }

    /// One-hot decoder condition for `classes`, or `None` when the decoder
    /// is unconditioned.
    pub fn decoder_condition(&self, classes: Option<&[usize]>) -> Result<Option<Tensor>> {
        match (self.config.conditioning.decoder(), classes) {
            (true, Some(c)) => {
                if let Some(bad) = c.iter().find(|&&y| y >= self.config.total_classes) {
                    return Err(Error::config(format!("class {bad} outside the one-hot range")));
                }
                Ok(Some(one_hot(c, self.config.total_classes)))
            }
            (true, None) => Err(Error::config("conditioned decoder needs class labels")),
            (false, Some(_)) => Err(Error::config(
                "class labels passed to an unconditioned decoder",
            )),
            (false, None) => Ok(None),
        }
    }

    /// Reshapes flat decoder output to the input shape.
    pub fn to_image(&self, flat: Tensor) -> Result<Tensor> {
        let mut shape = vec![flat.rows()];
        shape.extend_from_slice(&self.config.input_shape);
        flat.reshape(&shape)
    }

    /// `D(z_r, y^d)`; `classes` must be given iff the decoder is conditioned.
    pub fn decode(&self, z: &Tensor, classes: Option<&[usize]>) -> Result<Tensor> {
        let cond = self.decoder_condition(classes)?;
        let flat = self.decoder.infer(z, cond.as_ref())?;
        self.to_image(flat)
    }

    /// `S_t(E_c(x))`
    pub fn classify(&self, x: &Tensor, task: usize) -> Result<Tensor> {
        let head = self.head(task)?;
        head.infer(&self.encode_classify(x)?, None)
    }

    pub fn num_params(&self) -> usize {
        self.backbone.num_params()
            + self.class_proj.num_params()
            + self.recon_proj.num_params()
            + self.decoder.num_params()
            + self.heads.values().map(Network::num_params).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Parameters;

    fn model(cond: Conditioning) -> ContinualModel {
        let mut cfg = ModelConfig::mlp(&[6], 4);
        cfg.encoder = EncoderSpec::Mlp { hidden: vec![8] };
        cfg.class_embedding = 5;
        cfg.recon_embedding = 3;
        cfg.decoder_hidden = vec![7];
        cfg.conditioning = cond;
        ContinualModel::new(cfg, 1).unwrap()
    }

    fn input() -> Tensor {
        Tensor::matrix(2, 6, (0..12).map(|v| v as f64 * 0.1 - 0.5).collect()).unwrap()
    }

    fn shift_all(net: &mut Network) {
        net.visit_params(&mut |p, _| p.data_mut().iter_mut().for_each(|v| *v += 0.3));
    }

    #[test]
    fn classification_embedding_ignores_recon_head() {
        let mut m = model(Conditioning::None);
        let before = m.encode_classify(&input()).unwrap();
        assert_eq!(before.shape(), &[2, 5]);
        shift_all(&mut m.recon_proj);
        assert_eq!(m.encode_classify(&input()).unwrap(), before);
    }

    #[test]
    fn reconstruction_ignores_class_head() {
        let mut m = model(Conditioning::None);
        let z = m.encode_reconstruct(&input()).unwrap();
        let before = m.decode(&z, None).unwrap();
        assert_eq!(before.shape(), &[2, 6]);
        shift_all(&mut m.class_proj);
        let z2 = m.encode_reconstruct(&input()).unwrap();
        assert_eq!(m.decode(&z2, None).unwrap(), before);
    }

    #[test]
    fn decoder_condition_contract() {
        let m = model(Conditioning::None);
        let z = Tensor::zeros(&[1, 3]);
        assert!(m.decode(&z, Some(&[1])).is_err());
        let c = model(Conditioning::Decoder);
        assert!(c.decode(&z, None).is_err());
        assert!(c.decode(&z, Some(&[3])).is_ok());
        assert!(c.decode(&z, Some(&[4])).is_err());
    }

    #[test]
    fn heads_and_tasks() {
        let mut m = model(Conditioning::Decoder);
        assert!(m.classify(&input(), 0).is_err());
        m.add_head(0, 2, 1).unwrap();
        let logits = m.classify(&input(), 0).unwrap();
        assert_eq!(logits.shape(), &[2, 2]);
        assert_eq!(m.classify(&input(), 0).unwrap(), logits);
        assert!(m.add_head(0, 2, 1).is_err());
    }

    #[test]
    fn conv_encoder_shapes() {
        let mut cfg = ModelConfig::mlp(&[1, 6, 6], 2);
        cfg.encoder = EncoderSpec::Conv {
            channels: vec![2, 3],
            kernel: 3,
            stride: 2,
        };
        cfg.class_embedding = 4;
        let m = ContinualModel::new(cfg, 0).unwrap();
        let x = Tensor::zeros(&[3, 1, 6, 6]);
        assert_eq!(m.encode_classify(&x).unwrap().shape(), &[3, 4]);
        assert_eq!(m.decode(&m.encode_reconstruct(&x).unwrap(), Some(&[0, 1, 1])).unwrap().shape(), &[3, 1, 6, 6]);
    }
}
