//! Conditional VAE over future trajectories given the past.
//!
//! The encoder maps `(x, h)` to a diagonal Gaussian posterior `(μ, log σ)`; the
//! decoder maps `(z, h)` back to a future. Training minimizes
//!
//! ```text
//! (1/V) Σ_v ‖x̃_v − x‖² − β · (1/D_z) Σ_j (1 + 2 log σ_j − μ_j² − σ_j²)
//! ```
//!
//! with `z_v = μ + σ ⊙ ε_v`, so gradients reach both networks through the
//! reparameterized samples.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Checkpoint, DenseNet, ForwardTrace, NetworkRecord, ParamStore};
use crate::seeding::{derive_seed, rng_from_seed, standard_normal_vec};
use crate::synthdata::DataExample;
use crate::trajectory::Trajectory;

pub const CVAE_CHECKPOINT_KIND: &str = "cvae";

/// Bounds applied to the encoder's log-σ head.
pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 10.0;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeConfig {
    pub latent_dim: usize,
    /// KL weight.
    pub beta: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Posterior samples per example.
    pub posterior_samples: usize,
}

impl Default for CvaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            beta: 0.1,
            hidden: 128,
            epochs: 500,
            batch_size: 32,
            lr: 1e-4,
            posterior_samples: 1,
        }
    }
}

impl CvaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.posterior_samples == 0 {
            return Err(Error::config(
                "latent_dim, hidden, batch_size and posterior_samples must be positive",
            ));
        }
        if !(self.beta > 0.0) || !(self.lr > 0.0) {
            return Err(Error::config("beta and lr must be positive"));
        }
        Ok(())
    }
}

/// Trajectory shapes a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryShape {
    pub future_steps: usize,
    pub past_steps: usize,
    pub dim: usize,
}

impl TrajectoryShape {
    pub fn future_len(&self) -> usize {
        self.future_steps * self.dim
    }

    pub fn past_len(&self) -> usize {
        self.past_steps * self.dim
    }
}

/// Diagonal Gaussian posterior stored as mean and clamped log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl Posterior {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp()).collect()
    }

    /// Closed-form `KL(q ‖ N(0, I))`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        -0.5 * self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, l)| 1.0 + 2.0 * l - m * m - (2.0 * l).exp())
            .sum::<f64>()
    }
}

/// `z = μ + σ ⊙ noise`.
pub fn reparameterize(post: &Posterior, noise: &[f64]) -> Vec<f64> {
    post.mean
        .iter()
        .zip(&post.log_std)
        .zip(noise)
        .map(|((m, l), e)| m + l.exp() * e)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvaeHeader {
    pub latent_dim: usize,
    pub beta: f64,
    #[serde(flatten)]
    pub shape: TrajectoryShape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvaeModel {
    pub encoder: DenseNet,
    pub encoder_params: ParamStore,
    pub decoder: DenseNet,
    pub decoder_params: ParamStore,
    pub latent_dim: usize,
    pub beta: f64,
    pub shape: TrajectoryShape,
    init_seed: u64,
}

/// Loss value, its two terms and gradients for both networks.
#[derive(Debug, Clone)]
pub struct ElboOutput {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl_term: f64,
    pub encoder_grads: ParamStore,
    pub decoder_grads: ParamStore,
}

impl CvaeModel {
    /// Fresh model with Glorot-initialized networks.
    pub fn new(cfg: &CvaeConfig, shape: TrajectoryShape, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let encoder = DenseNet::mlp(vec![
            shape.future_len() + shape.past_len(),
            cfg.hidden,
            2 * cfg.latent_dim,
        ])?;
        let decoder = DenseNet::mlp(vec![cfg.latent_dim + shape.past_len(), cfg.hidden, shape.future_len()])?;
        let init_seed = derive_seed(seed, STREAM_INIT, 0);
        let mut rng = rng_from_seed(init_seed);
        let encoder_params = encoder.init_params(&mut rng);
        let decoder_params = decoder.init_params(&mut rng);
        Ok(Self {
            encoder,
            encoder_params,
            decoder,
            decoder_params,
            latent_dim: cfg.latent_dim,
            beta: cfg.beta,
            shape,
            init_seed,
        })
    }

    fn check_future(&self, x: &Trajectory) -> Result<()> {
        if x.shape() != (self.shape.future_steps, self.shape.dim) {
            return Err(Error::config(format!(
                "future shape {:?} does not match model ({}, {})",
                x.shape(),
                self.shape.future_steps,
                self.shape.dim
            )));
        }
        Ok(())
    }

    fn check_past(&self, h: &Trajectory) -> Result<()> {
        if h.shape() != (self.shape.past_steps, self.shape.dim) {
            return Err(Error::config(format!(
                "past shape {:?} does not match model ({}, {})",
                h.shape(),
                self.shape.past_steps,
                self.shape.dim
            )));
        }
        Ok(())
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::config(format!(
                "latent code has {} components, model uses {}",
                z.len(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    fn encoder_trace(&self, x: &Trajectory, h: &Trajectory) -> Result<ForwardTrace> {
        self.check_future(x)?;
        self.check_past(h)?;
        let input = [x.as_flat(), h.as_flat()].concat();
        self.encoder.forward_trace(&self.encoder_params, &input)
    }

    fn posterior_from_output(&self, out: &[f64]) -> Posterior {
        let (mean, raw) = out.split_at(self.latent_dim);
        Posterior {
            mean: mean.to_vec(),
            log_std: raw.iter().map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect(),
        }
    }

    pub fn encode(&self, x: &Trajectory, h: &Trajectory) -> Result<Posterior> {
        let trace = self.encoder_trace(x, h)?;
        Ok(self.posterior_from_output(trace.output()))
    }

    /// Runs the decoder and keeps the trace for a later backward pass.
    pub fn decode_trace(&self, z: &[f64], h: &Trajectory) -> Result<ForwardTrace> {
        self.check_latent(z)?;
        self.check_past(h)?;
        let input = [z, h.as_flat()].concat();
        self.decoder.forward_trace(&self.decoder_params, &input)
    }

    pub fn decode(&self, z: &[f64], h: &Trajectory) -> Result<Trajectory> {
        let trace = self.decode_trace(z, h)?;
        self.output_trajectory(trace.output())
    }

    pub(crate) fn output_trajectory(&self, flat: &[f64]) -> Result<Trajectory> {
        Trajectory::from_flat(self.shape.future_steps, self.shape.dim, flat.to_vec())
    }

    /// Gradient of `upstream · decode(z, h)` with respect to `z`; decoder
    /// parameters are treated as constants.
    pub fn decoder_latent_grad(&self, trace: &ForwardTrace, upstream: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = self.decoder_params.zeros_like();
        let input_grad = self
            .decoder
            .backward_trace(&self.decoder_params, trace, upstream, &mut scratch)?;
        Ok(input_grad[..self.latent_dim].to_vec())
    }

    /// Loss and gradients for one example with the given standard-normal noises.
    pub fn elbo_loss(&self, x: &Trajectory, h: &Trajectory, noises: &[Vec<f64>]) -> Result<ElboOutput> {
        if noises.is_empty() {
            return Err(Error::config("need at least one posterior sample"));
        }
        let enc_trace = self.encoder_trace(x, h)?;
        let post = self.posterior_from_output(enc_trace.output());
        let sigma = post.std();
        let d = self.latent_dim as f64;
        let v = noises.len() as f64;

        let mut encoder_grads = self.encoder_params.zeros_like();
        let mut decoder_grads = self.decoder_params.zeros_like();
        let mut grad_mean = vec![0.0; self.latent_dim];
        let mut grad_log_std = vec![0.0; self.latent_dim];

        let mut reconstruction = 0.0;
        for noise in noises {
            self.check_latent(noise)?;
            let z = reparameterize(&post, noise);
            let dec_trace = self.decode_trace(&z, h)?;
            let diff: Vec<f64> = dec_trace.output().iter().zip(x.as_flat()).map(|(a, b)| a - b).collect();
            reconstruction += diff.iter().map(|e| e * e).sum::<f64>() / v;
            let upstream: Vec<f64> = diff.iter().map(|e| 2.0 * e / v).collect();
            let input_grad =
                self.decoder
                    .backward_trace(&self.decoder_params, &dec_trace, &upstream, &mut decoder_grads)?;
            for j in 0..self.latent_dim {
                grad_mean[j] += input_grad[j];
                grad_log_std[j] += input_grad[j] * sigma[j] * noise[j];
            }
        }

        let kl_sum: f64 = (0..self.latent_dim)
            .map(|j| {
                let (m, l) = (post.mean[j], post.log_std[j]);
                1.0 + 2.0 * l - m * m - sigma[j] * sigma[j]
            })
            .sum();
        let kl_term = -self.beta * kl_sum / d;
        for j in 0..self.latent_dim {
            grad_mean[j] += 2.0 * self.beta * post.mean[j] / d;
            grad_log_std[j] += 2.0 * self.beta * (sigma[j] * sigma[j] - 1.0) / d;
        }

        // the clamp passes no gradient outside its range
        let raw_log_std = &enc_trace.output()[self.latent_dim..];
        for (g, raw) in grad_log_std.iter_mut().zip(raw_log_std) {
            if *raw < LOG_STD_MIN || *raw > LOG_STD_MAX {
                *g = 0.0;
            }
        }
        let upstream = [grad_mean, grad_log_std].concat();
        self.encoder
            .backward_trace(&self.encoder_params, &enc_trace, &upstream, &mut encoder_grads)?;

        let loss = reconstruction + kl_term;
        if !loss.is_finite() {
            return Err(Error::optimization("cvae", format!("non-finite loss {loss}")));
        }
        Ok(ElboOutput {
            loss,
            reconstruction,
            kl_term,
            encoder_grads,
            decoder_grads,
        })
    }

    /// Decodes `n` latent codes drawn from the standard normal prior.
    ///
    /// Codes are drawn sequentially, so a smaller `n` yields a prefix of a larger one.
    pub fn forecast_random(&self, h: &Trajectory, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                let z = standard_normal_vec(&mut rng, self.latent_dim);
                self.decode(&z, h)
            })
            .collect()
    }

    pub fn header(&self) -> CvaeHeader {
        CvaeHeader {
            latent_dim: self.latent_dim,
            beta: self.beta,
            shape: self.shape,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<CvaeHeader>> {
        Ok(Checkpoint::new(CVAE_CHECKPOINT_KIND, self.header())
            .with_network(
                "encoder",
                NetworkRecord::new(self.encoder.clone(), self.init_seed, self.encoder_params.clone())?,
            )
            .with_network(
                "decoder",
                NetworkRecord::new(self.decoder.clone(), self.init_seed, self.decoder_params.clone())?,
            ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<CvaeHeader>) -> Result<Self> {
        let enc = ckpt.network("encoder")?;
        let dec = ckpt.network("decoder")?;
        let h = ckpt.header;
        let expect_enc = vec![h.shape.future_len() + h.shape.past_len(), 2 * h.latent_dim];
        let expect_dec = vec![h.latent_dim + h.shape.past_len(), h.shape.future_len()];
        let ends = |net: &DenseNet| vec![net.input_dim(), net.output_dim()];
        if ends(&enc.architecture) != expect_enc || ends(&dec.architecture) != expect_dec {
            return Err(Error::parse("cvae checkpoint", "network sizes disagree with header"));
        }
        Ok(Self {
            encoder: enc.architecture.clone(),
            encoder_params: enc.params.clone(),
            decoder: dec.architecture.clone(),
            decoder_params: dec.params.clone(),
            latent_dim: h.latent_dim,
            beta: h.beta,
            shape: h.shape,
            init_seed: enc.init_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CVAE_CHECKPOINT_KIND)?)
    }
}

/// A trained model with its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct CvaeTraining {
    pub model: CvaeModel,
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam on the ELBO loss, reshuffling the data every epoch.
pub fn train_cvae(data: &[DataExample], cfg: &CvaeConfig, seed: u64) -> Result<CvaeTraining> {
    cfg.validate()?;
    let first = data
        .first()
        .ok_or_else(|| Error::config("cannot train on an empty dataset"))?;
    let shape = TrajectoryShape {
        future_steps: first.future.steps(),
        past_steps: first.past.steps(),
        dim: first.future.dim(),
    };
    let mut model = CvaeModel::new(cfg, shape, seed)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut enc_state = AdamState::new(&model.encoder_params);
    let mut dec_state = AdamState::new(&model.decoder_params);
    let mut noise_rng = rng_from_seed(derive_seed(seed, STREAM_NOISE, 0));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_SHUFFLE, epoch as u64)));
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut enc_grads = model.encoder_params.zeros_like();
            let mut dec_grads = model.decoder_params.zeros_like();
            for &i in batch {
                let ex = &data[i];
                let noises: Vec<Vec<f64>> = (0..cfg.posterior_samples)
                    .map(|_| standard_normal_vec(&mut noise_rng, cfg.latent_dim))
                    .collect();
                let out = model
                    .elbo_loss(&ex.future, &ex.past, &noises)
                    .map_err(|e| at_epoch(e, epoch))?;
                epoch_loss += out.loss;
                enc_grads.add_scaled(&out.encoder_grads, 1.0)?;
                dec_grads.add_scaled(&out.decoder_grads, 1.0)?;
            }
            let scale = 1.0 / batch.len() as f64;
            enc_grads.scale(scale);
            dec_grads.scale(scale);
            adam_step(&mut model.encoder_params, &enc_grads, &mut enc_state, &adam).map_err(|e| at_epoch(e, epoch))?;
            adam_step(&mut model.decoder_params, &dec_grads, &mut dec_state, &adam).map_err(|e| at_epoch(e, epoch))?;
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::optimization(format!("cvae epoch {epoch}"), "loss diverged"));
        }
        loss_trace.push(mean);
    }
    Ok(CvaeTraining { model, loss_trace })
}

fn at_epoch(err: Error, epoch: usize) -> Error {
    match err {
        Error::Optimization { location, message } => Error::Optimization {
            location: format!("cvae epoch {epoch}: {location}"),
            message,
        },
        other => other,
    }
}
