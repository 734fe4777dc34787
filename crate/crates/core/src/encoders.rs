//! Dense autoencoders for node features and adjacency rows.
//!
//! Each stack is `input -> hidden -> latent` with a mirrored decoder. Hidden
//! layers use the configured activation; encoder and decoder outputs are
//! linear. Gradients come from the reverse-mode tape in [`crate::autodiff`].

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Linear,
}

/// Reconstruction loss applied to the adjacency autoencoder. Features always
/// use MSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    #[default]
    Mse,
    /// Decoder output is read as logits.
    Bce,
}

/// One affine layer: `y = x·w + b`, `w` is `fan_in x fan_out`, `b` is `1 x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
            b: Array2::zeros((1, fan_out)),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoEncoderParams {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
    pub activation: Activation,
}

fn check_chain(layers: &[Dense], what: &str) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Dimension(format!("{what} has no layers")));
    }
    for (i, l) in layers.iter().enumerate() {
        if l.b.dim() != (1, l.fan_out()) {
            return Err(Error::Dimension(format!("{what} layer {i}: bias shape mismatch")));
        }
        if i > 0 && layers[i - 1].fan_out() != l.fan_in() {
            return Err(Error::Dimension(format!(
                "{what} layer {i}: expects {} inputs, previous layer gives {}",
                l.fan_in(),
                layers[i - 1].fan_out()
            )));
        }
    }
    Ok(())
}

impl AutoEncoderParams {
    /// Assembles and validates explicit layers.
    pub fn from_layers(encoder: Vec<Dense>, decoder: Vec<Dense>, activation: Activation) -> Result<Self> {
        check_chain(&encoder, "encoder")?;
        check_chain(&decoder, "decoder")?;
        let input = encoder[0].fan_in();
        let latent = encoder.last().map(Dense::fan_out).unwrap_or(0);
        if latent > input {
            return Err(Error::Dimension(format!(
                "latent dimension {latent} exceeds input dimension {input}"
            )));
        }
        if decoder[0].fan_in() != latent || decoder.last().map(Dense::fan_out) != Some(input) {
            return Err(Error::Dimension("decoder does not mirror the encoder".into()));
        }
        Ok(Self {
            encoder,
            decoder,
            activation,
        })
    }

    /// Randomly initialized `input -> hidden -> latent` stack and its mirror.
    pub fn init(input: usize, hidden: usize, latent: usize, activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if latent == 0 || hidden == 0 {
            return Err(Error::Config("hidden and latent dimensions must be positive".into()));
        }
        let encoder = vec![Dense::glorot(input, hidden, rng), Dense::glorot(hidden, latent, rng)];
        let decoder = vec![Dense::glorot(latent, hidden, rng), Dense::glorot(hidden, input, rng)];
        Self::from_layers(encoder, decoder, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].fan_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.last().map(Dense::fan_out).unwrap_or(0)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights and biases, layer by layer, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter();
        for l in self.layers_mut() {
            for (dst, src) in l.w.iter_mut().zip(&mut it) {
                *dst = *src;
            }
            for (dst, src) in l.b.iter_mut().zip(&mut it) {
                *dst = *src;
            }
        }
    }

    /// A zero-valued copy with the same shapes.
    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
            decoder: self.decoder.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
            activation: self.activation,
        }
    }

    /// Puts every weight and bias on `tape`.
    pub fn register(&self, tape: &mut Tape) -> ParamVars {
        let reg = |tape: &mut Tape, layers: &[Dense]| {
            layers
                .iter()
                .map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone())))
                .collect()
        };
        ParamVars {
            encoder: reg(tape, &self.encoder),
            decoder: reg(tape, &self.decoder),
            activation: self.activation,
        }
    }
}

/// Tape handles for one autoencoder's parameters.
#[derive(Debug, Clone)]
pub struct ParamVars {
    encoder: Vec<(Var, Var)>,
    decoder: Vec<(Var, Var)>,
    activation: Activation,
}

fn stack_on_tape(tape: &mut Tape, layers: &[(Var, Var)], activation: Activation, input: Var) -> Var {
    let mut h = input;
    let last = layers.len() - 1;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul(h, w);
        h = tape.add_row(lin, b);
        if i < last && activation == Activation::Tanh {
            h = tape.tanh(h);
        }
    }
    h
}

impl ParamVars {
    pub fn encode(&self, tape: &mut Tape, input: Var) -> Var {
        stack_on_tape(tape, &self.encoder, self.activation, input)
    }

    pub fn decode(&self, tape: &mut Tape, latent: Var) -> Var {
        stack_on_tape(tape, &self.decoder, self.activation, latent)
    }

    /// Reads this parameter set's gradients back into parameter shape.
    pub fn gradients(&self, grads: &Gradients) -> AutoEncoderParams {
        let collect = |layers: &[(Var, Var)]| {
            layers
                .iter()
                .map(|&(w, b)| Dense {
                    w: grads.get(w),
                    b: grads.get(b),
                })
                .collect()
        };
        AutoEncoderParams {
            encoder: collect(&self.encoder),
            decoder: collect(&self.decoder),
            activation: self.activation,
        }
    }
}

fn forward_stack(layers: &[Dense], activation: Activation, input: &Array2<f64>) -> Array2<f64> {
    let mut h = input.clone();
    let last = layers.len() - 1;
    for (i, l) in layers.iter().enumerate() {
        h = h.dot(&l.w) + &l.b;
        if i < last && activation == Activation::Tanh {
            h.mapv_inplace(f64::tanh);
        }
    }
    h
}

/// Encoder forward pass.
pub fn encode(params: &AutoEncoderParams, input: &Array2<f64>) -> Result<Array2<f64>> {
    if input.ncols() != params.input_dim() {
        return Err(Error::Dimension(format!(
            "encoder expects {} columns, got {}",
            params.input_dim(),
            input.ncols()
        )));
    }
    Ok(forward_stack(&params.encoder, params.activation, input))
}

/// Decoder forward pass.
pub fn decode(params: &AutoEncoderParams, latent: &Array2<f64>) -> Result<Array2<f64>> {
    if latent.ncols() != params.latent_dim() {
        return Err(Error::Dimension(format!(
            "decoder expects {} columns, got {}",
            params.latent_dim(),
            latent.ncols()
        )));
    }
    Ok(forward_stack(&params.decoder, params.activation, latent))
}

fn single_loss(params: &AutoEncoderParams, input: &Array2<f64>, loss: ReconLoss) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let l = loss_on_tape(&mut tape, &vars, input, loss)?;
    Ok(tape.scalar(l))
}

/// Puts `l(decode(encode(input)); input)` on the tape.
pub fn loss_on_tape(tape: &mut Tape, vars: &ParamVars, input: &Array2<f64>, loss: ReconLoss) -> Result<Var> {
    let x = tape.constant(input.clone());
    let (_, l) = encode_and_loss(tape, vars, x, input, loss)?;
    Ok(l)
}

/// Returns `(latent, loss)` for one autoencoder whose input is already on the tape.
pub fn encode_and_loss(
    tape: &mut Tape,
    vars: &ParamVars,
    x: Var,
    target: &Array2<f64>,
    loss: ReconLoss,
) -> Result<(Var, Var)> {
    let input_dim = tape.value(vars.encoder[0].0).nrows();
    if target.ncols() != input_dim {
        return Err(Error::Dimension(format!(
            "autoencoder expects {input_dim} columns, got {}",
            target.ncols()
        )));
    }
    let z = vars.encode(tape, x);
    let recon = vars.decode(tape, z);
    let l = match loss {
        ReconLoss::Mse => tape.mse(recon, target.clone()),
        ReconLoss::Bce => tape.bce_logits(recon, target.clone()),
    };
    Ok((z, l))
}

/// `L_Rec = l(f_x(X); X) + l(f_a(A); A)` with MSE on features and `a_loss`
/// on the adjacency.
pub fn reconstruction_loss(
    params_x: &AutoEncoderParams,
    params_a: &AutoEncoderParams,
    x: &Array2<f64>,
    a: &Array2<f64>,
    a_loss: ReconLoss,
) -> Result<f64> {
    let lx = single_loss(params_x, x, ReconLoss::Mse)?;
    let la = single_loss(params_a, a, a_loss)?;
    let total = lx + la;
    if !total.is_finite() {
        return Err(Error::Numeric {
            what: "reconstruction loss".into(),
            epoch: 0,
        });
    }
    Ok(total)
}

/// Loss and reverse-mode gradients of one autoencoder reconstructing `batch`.
pub fn gradient(params: &AutoEncoderParams, loss: ReconLoss, batch: &Array2<f64>) -> Result<(f64, AutoEncoderParams)> {
    let mut tape = Tape::new();
    let vars = params.register(&mut tape);
    let l = loss_on_tape(&mut tape, &vars, batch, loss)?;
    let value = tape.scalar(l);
    if !value.is_finite() {
        return Err(Error::Numeric {
            what: "reconstruction loss".into(),
            epoch: 0,
        });
    }
    let grads = vars.gradients(&tape.backward(l));
    if grads.to_flat().iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric {
            what: "gradient".into(),
            epoch: 0,
        });
    }
    Ok((value, grads))
}

/// Adam moment estimates over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Applies one step to an autoencoder given same-shaped gradients.
    pub fn step_params(&mut self, params: &mut AutoEncoderParams, grads: &AutoEncoderParams) {
        let mut flat = params.to_flat();
        self.step(&mut flat, &grads.to_flat());
        params.set_flat(&flat);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Pretraining epochs on the reconstruction loss.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Latent size `d'`; capped at the feature dimension.
    pub latent_dim: usize,
    /// Hidden width; `None` means `max(256, 4·d')`.
    pub hidden_dim: Option<usize>,
    pub activation: Activation,
    pub adjacency_loss: ReconLoss,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            latent_dim: 64,
            hidden_dim: None,
            activation: Activation::Tanh,
            adjacency_loss: ReconLoss::Mse,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }

    /// Latent size actually used for a feature matrix with `d` columns.
    pub fn effective_latent(&self, d: usize, n: usize) -> usize {
        self.latent_dim.min(d).min(n).max(1)
    }

    pub fn effective_hidden(&self, latent: usize) -> usize {
        self.hidden_dim.unwrap_or_else(|| (4 * latent).max(256))
    }
}

/// Encoded features and encoded adjacency of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub z_x: Array2<f64>,
    pub z_a: Array2<f64>,
}

impl EmbeddingPair {
    pub fn new(z_x: Array2<f64>, z_a: Array2<f64>) -> Result<Self> {
        if z_x.dim() != z_a.dim() {
            return Err(Error::Dimension(format!(
                "z_x is {:?} but z_a is {:?}",
                z_x.dim(),
                z_a.dim()
            )));
        }
        if z_x.iter().chain(z_a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("embedding contains non-finite entries".into()));
        }
        Ok(Self { z_x, z_a })
    }

    pub fn n_nodes(&self) -> usize {
        self.z_x.nrows()
    }
}

/// Both autoencoders of one view, trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewAutoEncoders {
    pub x: AutoEncoderParams,
    pub a: AutoEncoderParams,
}

impl ViewAutoEncoders {
    pub fn init(d: usize, n: usize, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let latent = cfg.effective_latent(d, n);
        let hidden = cfg.effective_hidden(latent);
        Ok(Self {
            x: AutoEncoderParams::init(d, hidden, latent, cfg.activation, rng)?,
            a: AutoEncoderParams::init(n, hidden, latent, cfg.activation, rng)?,
        })
    }

    pub fn embed(&self, x: &Array2<f64>, a: &Array2<f64>) -> Result<EmbeddingPair> {
        EmbeddingPair::new(encode(&self.x, x)?, encode(&self.a, a)?)
    }
}

/// Outcome of [`train_autoencoders`].
#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub params: ViewAutoEncoders,
    pub embeddings: EmbeddingPair,
    /// `L_Rec` before each update; one entry per epoch.
    pub losses: Vec<f64>,
}

/// Full-batch Adam on `L_Rec` for one view.
pub fn train_autoencoders(x: &Array2<f64>, a: &Array2<f64>, cfg: &EncoderConfig) -> Result<PretrainResult> {
    cfg.validate()?;
    if x.nrows() != a.nrows() || a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "features {:?} do not match adjacency {:?}",
            x.dim(),
            a.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ViewAutoEncoders::init(x.ncols(), a.nrows(), cfg, &mut rng)?;
    let losses = pretrain(&mut params, x, a, cfg, 0)?;
    let embeddings = params.embed(x, a)?;
    Ok(PretrainResult {
        params,
        embeddings,
        losses,
    })
}

/// Runs `cfg.epochs` reconstruction steps on existing parameters. Epoch
/// numbers in errors are offset by `epoch_offset`.
pub fn pretrain(
    params: &mut ViewAutoEncoders,
    x: &Array2<f64>,
    a: &Array2<f64>,
    cfg: &EncoderConfig,
    epoch_offset: usize,
) -> Result<Vec<f64>> {
    let mut opt_x = Adam::new(params.x.num_params(), cfg.learning_rate);
    let mut opt_a = Adam::new(params.a.num_params(), cfg.learning_rate);
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let step = gradient(&params.x, ReconLoss::Mse, x).and_then(|(lx, gx)| {
            gradient(&params.a, cfg.adjacency_loss, a).map(|(la, ga)| (lx + la, gx, ga))
        });
        let (loss, gx, ga) = match step {
            Ok(v) => v,
            Err(Error::Numeric { .. }) => {
                return Err(Error::Divergence {
                    last_finite_epoch: (epoch + epoch_offset).checked_sub(1),
                })
            }
            Err(e) => return Err(e),
        };
        losses.push(loss);
        opt_x.step_params(&mut params.x, &gx);
        opt_a.step_params(&mut params.a, &ga);
    }
    Ok(losses)
}
