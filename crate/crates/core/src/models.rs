//! Convolutional autoencoder and (β-)VAE with fixed geometry: four 3×3
//! stride-2 convolutions of 64 filters, a dense bottleneck, and a mirrored
//! stack of transposed convolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndmath::conv::{conv_output_len, output_padding_for};
use crate::ndmath::{Array, Scalar, Tape, Var};

pub const ALLOWED_LATENT_DIMS: [usize; 4] = [32, 64, 128, 256];
pub const FILTERS: usize = 64;
pub const KERNEL: usize = 3;
pub const STRIDE: usize = 2;
pub const PAD: usize = 1;
pub const DEPTH: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Ae,
    Vae,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub dropout_p: f64,
    /// KL multiplier; ignored by the plain autoencoder.
    pub beta: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Ae,
            latent_dim: 256,
            dropout_p: 0.0,
            beta: 1.0,
            height: 28,
            width: 28,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !ALLOWED_LATENT_DIMS.contains(&self.latent_dim) {
            return Err(Error::Config(format!(
                "latent_dim must be one of {ALLOWED_LATENT_DIMS:?}, got {}",
                self.latent_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        Geometry::new(self.height, self.width).map(|_| ())
    }
}

/// Spatial extents through the encoder and the output paddings that let the
/// decoder retrace them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Geometry {
    /// `DEPTH + 1` extents, from the input down to the bottleneck.
    pub extents: Vec<(usize, usize)>,
    /// Output padding of decoder layer `i`, which maps `extents[DEPTH - i]`
    /// back to `extents[DEPTH - i - 1]`.
    pub output_padding: Vec<(usize, usize)>,
}

impl Geometry {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        let mut extents = vec![(height, width)];
        for layer in 0..DEPTH {
            let (h, w) = extents[layer];
            let next = conv_output_len(h, KERNEL, STRIDE, PAD).zip(conv_output_len(w, KERNEL, STRIDE, PAD));
            match next {
                Some((ho, wo)) if ho > 0 && wo > 0 => extents.push((ho, wo)),
                _ => {
                    return Err(Error::Config(format!(
                        "input {height}x{width} does not survive {DEPTH} stride-{STRIDE} convolutions"
                    )))
                }
            }
        }
        let mut output_padding = Vec::with_capacity(DEPTH);
        for i in 0..DEPTH {
            let (small, big) = (extents[DEPTH - i], extents[DEPTH - i - 1]);
            let oh = output_padding_for(big.0, small.0, KERNEL, STRIDE, PAD);
            let ow = output_padding_for(big.1, small.1, KERNEL, STRIDE, PAD);
            match oh.zip(ow) {
                Some(p) => output_padding.push(p),
                None => {
                    return Err(Error::Config(format!(
                        "no output padding maps {small:?} back to {big:?}"
                    )))
                }
            }
        }
        Ok(Self {
            extents,
            output_padding,
        })
    }

    pub fn bottleneck(&self) -> (usize, usize) {
        self.extents[DEPTH]
    }

    /// Width of the flattened bottleneck feature map.
    pub fn flatten_len(&self) -> usize {
        let (h, w) = self.bottleneck();
        FILTERS * h * w
    }
}

/// Mean and log-variance of the approximate posterior.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianParams {
    pub mu: Array<f32>,
    pub log_var: Array<f32>,
}

/// Output of the encoder for a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Encoded {
    Latent(Array<f32>),
    Gaussian(GaussianParams),
}

impl Encoded {
    /// The deterministic code: `z` for an autoencoder, `mu` for a VAE.
    pub fn embedding(&self) -> &Array<f32> {
        match self {
            Encoded::Latent(z) => z,
            Encoded::Gaussian(g) => &g.mu,
        }
    }
}

/// Encoder output on a tape.
#[derive(Clone, Copy, Debug)]
pub enum LatentVars {
    Latent(Var),
    Gaussian { mu: Var, log_var: Var },
}

/// Train mode draws dropout masks from the given stream; eval mode is
/// deterministic.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// Named, ordered learnable tensors plus the config that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    geometry: Geometry,
    names: Vec<String>,
    tensors: Vec<Array<f32>>,
}

/// Parameter handles on one tape, in [`ModelParams::names`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

fn layer_specs(config: &ModelConfig, geometry: &Geometry) -> Vec<(String, Vec<usize>, usize)> {
    let mut specs = Vec::new();
    let mut cin = 1;
    for i in 0..DEPTH {
        let fan_in = cin * KERNEL * KERNEL;
        specs.push((format!("enc.conv{i}.weight"), vec![FILTERS, cin, KERNEL, KERNEL], fan_in));
        specs.push((format!("enc.conv{i}.bias"), vec![FILTERS], fan_in));
        cin = FILTERS;
    }
    let flat = geometry.flatten_len();
    let l = config.latent_dim;
    let heads: &[&str] = match config.kind {
        ModelKind::Ae => &["latent"],
        ModelKind::Vae => &["mu", "log_var"],
    };
    for head in heads {
        specs.push((format!("{head}.weight"), vec![l, flat], flat));
        specs.push((format!("{head}.bias"), vec![l], flat));
    }
    specs.push(("dec.linear.weight".into(), vec![flat, l], l));
    specs.push(("dec.linear.bias".into(), vec![flat], l));
    for i in 0..DEPTH {
        let cout = if i + 1 == DEPTH { 1 } else { FILTERS };
        let fan_in = FILTERS * KERNEL * KERNEL;
        specs.push((format!("dec.deconv{i}.weight"), vec![FILTERS, cout, KERNEL, KERNEL], fan_in));
        specs.push((format!("dec.deconv{i}.bias"), vec![cout], fan_in));
    }
    specs
}

/// Builds a model with weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let geometry = Geometry::new(config.height, config.width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, fan_in) in layer_specs(config, &geometry) {
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
        names.push(name);
        tensors.push(Array::new(&shape, data)?);
    }
    Ok(ModelParams {
        config: config.clone(),
        geometry,
        names,
        tensors,
    })
}

/// `z = mu + exp(log_var / 2) * eps` on the tape, with `eps` a fixed
/// standard-normal draw.
pub fn reparameterize<T: Scalar>(
    tape: &mut Tape<T>,
    mu: Var,
    log_var: Var,
    eps: &Array<T>,
) -> Result<Var> {
    let half = tape.mul_scalar(log_var, T::of(0.5));
    let std = tape.exp(half);
    let e = tape.constant(eps.clone());
    let noise = tape.mul(std, e)?;
    tape.add(mu, noise)
}

/// Standard-normal noise of the given shape.
pub fn sample_noise<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<T> {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::of(StandardNormal.sample(rng)))
        .collect();
    Array::new(shape, data).expect("length matches shape")
}

/// Value-level reparameterization.
pub fn sample_latent(g: &GaussianParams, rng: &mut ChaCha8Rng) -> Result<Array<f32>> {
    if g.mu.shape() != g.log_var.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("mu {:?} vs log_var {:?}", g.mu.shape(), g.log_var.shape()),
        ));
    }
    if !g.mu.all_finite() || !g.log_var.all_finite() {
        return Err(Error::NonFinite("gaussian parameters".into()));
    }
    let eps: Array<f32> = sample_noise(g.mu.shape(), rng);
    let data = g
        .mu
        .data()
        .iter()
        .zip(g.log_var.data())
        .zip(eps.data())
        .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
        .collect();
    Array::new(g.mu.shape(), data)
}

impl ModelParams {
    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against what `config` requires.
    pub fn from_tensors(config: &ModelConfig, named: Vec<(String, Array<f32>)>) -> Result<Self> {
        config.validate()?;
        let geometry = Geometry::new(config.height, config.width)?;
        let specs = layer_specs(config, &geometry);
        if specs.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((want, shape, _), (name, t)) in specs.into_iter().zip(named) {
            if want != name || t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Self {
            config: config.clone(),
            geometry,
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array<f32>] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Array<f32>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Array::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Puts every tensor on `tape` as a trainable leaf.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t.cast())).collect(),
        }
    }

    fn var(&self, bound: &Bound, name: &str) -> Var {
        bound.vars[self.index_of(name).expect("layer names are fixed by the config")]
    }

    fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let want = [1, self.config.height, self.config.width];
        if shape.len() != 4 || shape[1..] != want {
            return Err(Error::shape(
                "encode",
                format!("expected [B, 1, {}, {}], got {shape:?}", want[1], want[2]),
            ));
        }
        Ok(())
    }

    /// Encoder on a tape: `x: [B, 1, H, W]`.
    pub fn encode_on<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<LatentVars> {
        self.check_batch(tape.value(x).shape())?;
        let p = self.config.dropout_p;
        let mut h = x;
        for i in 0..DEPTH {
            let w = self.var(bound, &format!("enc.conv{i}.weight"));
            let b = self.var(bound, &format!("enc.conv{i}.bias"));
            h = tape.conv2d(h, w, b, STRIDE, PAD)?;
            h = tape.relu(h);
            if let Mode::Train(rng) = mode {
                if p > 0.0 {
                    let scale = T::of(1.0 / (1.0 - p));
                    let mask = (0..tape.value(h).len())
                        .map(|_| if rng.random::<f64>() < p { T::zero() } else { scale })
                        .collect();
                    h = tape.dropout_mask(h, mask)?;
                }
            }
        }
        let bn = tape.value(x).dim(0);
        let flat = tape.reshape(h, &[bn, self.geometry.flatten_len()])?;
        let head = |tape: &mut Tape<T>, name: &str| {
            let w = self.var(bound, &format!("{name}.weight"));
            let b = self.var(bound, &format!("{name}.bias"));
            tape.linear(flat, w, b)
        };
        Ok(match self.config.kind {
            ModelKind::Ae => LatentVars::Latent(head(tape, "latent")?),
            ModelKind::Vae => LatentVars::Gaussian {
                mu: head(tape, "mu")?,
                log_var: head(tape, "log_var")?,
            },
        })
    }

    /// Decoder on a tape: `z: [B, latent_dim] -> [B, 1, H, W]`.
    pub fn decode_on<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, z: Var) -> Result<Var> {
        let shape = tape.value(z).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("expected [B, {}], got {shape:?}", self.config.latent_dim),
            ));
        }
        let w = self.var(bound, "dec.linear.weight");
        let b = self.var(bound, "dec.linear.bias");
        let h = tape.linear(z, w, b)?;
        let h = tape.relu(h);
        let (bh, bw) = self.geometry.bottleneck();
        let mut h = tape.reshape(h, &[shape[0], FILTERS, bh, bw])?;
        for i in 0..DEPTH {
            let w = self.var(bound, &format!("dec.deconv{i}.weight"));
            let b = self.var(bound, &format!("dec.deconv{i}.bias"));
            let (oh, ow) = self.geometry.output_padding[i];
            if oh != ow {
                h = self.deconv_asymmetric(tape, h, w, b, (oh, ow))?;
            } else {
                h = tape.conv_transpose2d(h, w, b, STRIDE, PAD, oh)?;
            }
            if i + 1 < DEPTH {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Transposed convolution when the two axes need different output
    /// padding: run with the larger padding and crop the surplus.
    fn deconv_asymmetric<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        h: Var,
        w: Var,
        b: Var,
        (oh, ow): (usize, usize),
    ) -> Result<Var> {
        let extra = oh.max(ow);
        let big = tape.conv_transpose2d(h, w, b, STRIDE, PAD, extra)?;
        let shape = tape.value(big).shape().to_vec();
        tape.crop2d(big, shape[2] - (extra - oh), shape[3] - (extra - ow))
    }

    /// Eval-mode encoder on plain values.
    pub fn encode(&self, batch: &Array<f32>) -> Result<Encoded> {
        let mut tape = Tape::<f32>::new();
        let bound = self.bind(&mut tape);
        let x = tape.constant(batch.clone());
        Ok(match self.encode_on(&mut tape, &bound, x, &mut Mode::Eval)? {
            LatentVars::Latent(z) => Encoded::Latent(tape.value(z).clone()),
            LatentVars::Gaussian { mu, log_var } => Encoded::Gaussian(GaussianParams {
                mu: tape.value(mu).clone(),
                log_var: tape.value(log_var).clone(),
            }),
        })
    }

    /// Eval-mode decoder on plain values.
    pub fn decode(&self, z: &Array<f32>) -> Result<Array<f32>> {
        let mut tape = Tape::<f32>::new();
        let bound = self.bind(&mut tape);
        let zv = tape.constant(z.clone());
        let out = self.decode_on(&mut tape, &bound, zv)?;
        Ok(tape.value(out).clone())
    }

    /// Deterministic codes for a set of images, encoded in batches.
    pub fn embed(&self, images: &Array<f32>, batch_size: usize) -> Result<Array<f32>> {
        let n = images.shape().first().copied().unwrap_or(0);
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + batch_size.max(1)).min(n);
            let enc = self.encode(&images.slice_outer(start, end))?;
            parts.push(enc.embedding().clone());
            start = end;
        }
        if parts.is_empty() {
            return Ok(Array::zeros(&[0, self.config.latent_dim]));
        }
        Array::concat_outer(&parts.iter().collect::<Vec<_>>())
    }
}
