//! Convolutional variational autoencoder.
//!
//! Encoder: four stride-2 convolutions (kernel 5, padding 2) with ReLU between
//! them, then two parallel linear heads producing the latent mean and
//! log-variance. Decoder: a linear layer back to the last feature map, then
//! four stride-2 transposed convolutions (kernel 4, padding 1) with ReLU
//! between them. No activation follows the last encoder conv or the last
//! decoder deconv.
//!
//! Training minimizes `0.5 * ||x - recon||^2 + KL(q(z|x) || N(0, I))` per
//! frame, i.e. a unit-variance Gaussian decoder likelihood. Frames are scored
//! by the mean squared reconstruction error over sampled latents, expressed on
//! the 0-255 pixel scale.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nncore::{
    adam_step, AdamConfig, AdamState, Layer, LayerSpec, ParamStore, Real, Sequential, Tape, Tensor,
};

/// Conv stage geometry.
const ENC_KERNEL: usize = 5;
const ENC_PADDING: usize = 2;
const DEC_KERNEL: usize = 4;
const DEC_PADDING: usize = 1;
const STRIDE: usize = 2;

/// Pixel values are in `[0, 1]` inside the network; scores use 0-255.
pub const PIXEL_SCALE: f64 = 255.0;

/// Default reconstruction samples per score.
pub const DEFAULT_SCORE_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Full-size network on `3 x 240 x 320` frames.
    Canonical,
    /// Laptop-scale network on `3 x 64 x 64` frames.
    Desk,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Canonical => "canonical",
            Preset::Desk => "desk",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Preset::Canonical),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VaeConfig {
    pub preset: Option<Preset>,
    /// `(channels, height, width)` of input frames.
    pub input: (usize, usize, usize),
    /// Output channels of the four encoder convolutions.
    pub channels: [usize; 4],
    pub latent_dim: usize,
}

impl VaeConfig {
    pub fn canonical() -> Self {
        VaeConfig {
            preset: Some(Preset::Canonical),
            input: (3, 240, 320),
            channels: [32, 64, 128, 256],
            latent_dim: 1024,
        }
    }

    pub fn desk() -> Self {
        VaeConfig {
            preset: Some(Preset::Desk),
            input: (3, 64, 64),
            channels: [8, 16, 32, 64],
            latent_dim: 64,
        }
    }

    pub fn from_preset(preset: Preset) -> Self {
        match preset {
            Preset::Canonical => Self::canonical(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Config("input dimensions must be positive".into()));
        }
        if h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Config(format!(
                "spatial dims {h}x{w} must both be divisible by 16"
            )));
        }
        if self.channels.contains(&0) || self.latent_dim == 0 {
            return Err(Error::Config(
                "channel widths and latent dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.input.0, self.input.1, self.input.2]
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    /// Shape of the last encoder feature map.
    pub fn bottleneck_shape(&self) -> Vec<usize> {
        vec![self.channels[3], self.input.1 / 16, self.input.2 / 16]
    }

    pub fn flatten_len(&self) -> usize {
        self.bottleneck_shape().iter().product()
    }
}

/// One row of the layer table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRow {
    /// Kind and 1-based position, e.g. `Conv2d-1`.
    pub label: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

/// Layer graph of the autoencoder, without parameter storage.
#[derive(Clone, Debug)]
pub struct VaeArchitecture {
    config: VaeConfig,
    encoder: Sequential,
    mu_head: Sequential,
    logvar_head: Sequential,
    decoder: Sequential,
}

fn conv(cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: ENC_KERNEL,
        stride: STRIDE,
        padding: ENC_PADDING,
    }
}

fn deconv(cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::ConvTranspose2d {
        in_channels: cin,
        out_channels: cout,
        kernel: DEC_KERNEL,
        stride: STRIDE,
        padding: DEC_PADDING,
    }
}

impl VaeArchitecture {
    pub fn new(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3, c4] = config.channels;
        let cin = config.input.0;
        let flat = config.flatten_len();
        let latent = config.latent_dim;

        let encoder = Sequential::new(
            config.input_shape(),
            vec![
                Layer::new("enc.conv1", conv(cin, c1)),
                Layer::new("enc.relu2", LayerSpec::Relu),
                Layer::new("enc.conv3", conv(c1, c2)),
                Layer::new("enc.relu4", LayerSpec::Relu),
                Layer::new("enc.conv5", conv(c2, c3)),
                Layer::new("enc.relu6", LayerSpec::Relu),
                Layer::new("enc.conv7", conv(c3, c4)),
            ],
        )?;
        let head = |name: &str| {
            Sequential::new(
                config.bottleneck_shape(),
                vec![Layer::new(
                    name,
                    LayerSpec::Linear {
                        in_features: flat,
                        out_features: latent,
                    },
                )],
            )
        };
        let mu_head = head("enc.fc_mu8")?;
        let logvar_head = head("enc.fc_logvar9")?;
        let decoder = Sequential::new(
            vec![latent],
            vec![
                Layer::new(
                    "dec.fc10",
                    LayerSpec::Linear {
                        in_features: latent,
                        out_features: flat,
                    },
                ),
                Layer::new(
                    "dec.unflatten",
                    LayerSpec::Reshape {
                        shape: config.bottleneck_shape(),
                    },
                ),
                Layer::new("dec.deconv11", deconv(c4, c3)),
                Layer::new("dec.relu12", LayerSpec::Relu),
                Layer::new("dec.deconv13", deconv(c3, c2)),
                Layer::new("dec.relu14", LayerSpec::Relu),
                Layer::new("dec.deconv15", deconv(c2, c1)),
                Layer::new("dec.relu16", LayerSpec::Relu),
                Layer::new("dec.deconv17", deconv(c1, cin)),
            ],
        )?;
        if decoder.output_shape() != config.input_shape().as_slice() {
            return Err(Error::Config(format!(
                "decoder output {:?} does not match input {:?}",
                decoder.output_shape(),
                config.input_shape()
            )));
        }
        Ok(VaeArchitecture {
            config,
            encoder,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    fn stacks(&self) -> [&Sequential; 4] {
        [
            &self.encoder,
            &self.mu_head,
            &self.logvar_head,
            &self.decoder,
        ]
    }

    /// Convolutional trunk, ending in the flattened features.
    pub fn encoder(&self) -> &Sequential {
        &self.encoder
    }

    pub fn mu_head(&self) -> &Sequential {
        &self.mu_head
    }

    pub fn logvar_head(&self) -> &Sequential {
        &self.logvar_head
    }

    pub fn decoder(&self) -> &Sequential {
        &self.decoder
    }

    /// Per-layer table in network order; reshape plumbing is omitted.
    pub fn layer_summary(&self) -> Vec<LayerRow> {
        let mut rows = Vec::new();
        for stack in self.stacks() {
            for (layer, shape) in stack.layers().iter().zip(stack.layer_shapes()) {
                if matches!(layer.spec, LayerSpec::Reshape { .. }) {
                    continue;
                }
                rows.push(LayerRow {
                    label: format!("{}-{}", layer.spec.kind_name(), rows.len() + 1),
                    output_shape: shape.clone(),
                    params: layer.spec.param_count(),
                });
            }
        }
        rows
    }

    pub fn param_count(&self) -> usize {
        self.stacks().iter().map(|s| s.param_count()).sum()
    }
}

/// Latent Gaussian parameters produced by the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T> {
    pub mu: Vec<T>,
    /// `2 * log(sigma)`.
    pub logvar: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSample<T> {
    pub eps: Vec<T>,
    pub z: Vec<T>,
}

/// Per-frame loss terms. `recon_term` is the Gaussian negative log-likelihood
/// up to its additive constant.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_term: f64,
    pub kl_term: f64,
}

/// `+1` = no anomaly, `-1` = anomaly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnomalyFlag {
    pub value: i8,
    pub score: f64,
}

impl AnomalyFlag {
    pub fn is_anomaly(&self) -> bool {
        self.value < 0
    }
}

/// Thresholds a reconstruction score. Ties count as anomalies.
pub fn anomaly_flag(score: f64, threshold: f64) -> AnomalyFlag {
    AnomalyFlag {
        value: if score < threshold { 1 } else { -1 },
        score,
    }
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize<T: Real>(enc: &EncoderOutput<T>, eps: &[T]) -> Result<LatentSample<T>> {
    if eps.len() != enc.mu.len() {
        return Err(Error::dim("noise length", enc.mu.len(), eps.len()));
    }
    let half = T::lit(0.5);
    let z = enc
        .mu
        .iter()
        .zip(&enc.logvar)
        .zip(eps)
        .map(|((&m, &lv), &e)| m + (lv * half).exp() * e)
        .collect();
    Ok(LatentSample {
        eps: eps.to_vec(),
        z,
    })
}

/// Closed-form `KL(N(mu, sigma^2) || N(0, 1))`, summed over latent dims.
pub fn kl_divergence<T: Real>(enc: &EncoderOutput<T>) -> Result<f64> {
    if enc.mu.len() != enc.logvar.len() {
        return Err(Error::dim("logvar length", enc.mu.len(), enc.logvar.len()));
    }
    let mut kl = 0.0;
    for (&m, &lv) in enc.mu.iter().zip(&enc.logvar) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        if !m.is_finite() || !lv.is_finite() {
            return Err(Error::Numeric("non-finite latent parameters".into()));
        }
        kl += m * m + lv.exp() - 1.0 - lv;
    }
    let kl = 0.5 * kl;
    if !kl.is_finite() {
        return Err(Error::Numeric("KL divergence overflowed".into()));
    }
    Ok(kl.max(0.0))
}

/// Negative evidence lower bound for one frame.
pub fn elbo_loss<T: Real>(
    x: &Tensor<T>,
    recon: &Tensor<T>,
    enc: &EncoderOutput<T>,
) -> Result<LossBreakdown> {
    if x.shape() != recon.shape() {
        return Err(Error::Input(format!(
            "reconstruction shape {:?} differs from input {:?}",
            recon.shape(),
            x.shape()
        )));
    }
    let recon_term = 0.5
        * x.data()
            .iter()
            .zip(recon.data())
            .map(|(&a, &b)| {
                let d = (a - b).as_f64();
                d * d
            })
            .sum::<f64>();
    let kl_term = kl_divergence(enc)?;
    Ok(LossBreakdown {
        total: recon_term + kl_term,
        recon_term,
        kl_term,
    })
}

/// Mean squared error between two frames on the 0-255 scale.
pub fn mse_255<T: Real>(x: &Tensor<T>, recon: &Tensor<T>) -> Result<f64> {
    if x.len() != recon.len() {
        return Err(Error::dim("frame length", x.len(), recon.len()));
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(recon.data())
        .map(|(&a, &b)| {
            let d = (a - b).as_f64() * PIXEL_SCALE;
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

pub fn standard_normal<T: Real, R: Rng>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Trained or freshly initialized autoencoder.
#[derive(Clone, Debug)]
pub struct VaeModel<T> {
    arch: VaeArchitecture,
    params: ParamStore<T>,
}

impl<T: Real> VaeModel<T> {
    /// Builds the network with weights uniform in `±1/sqrt(fan_in)`.
    pub fn build(config: VaeConfig, seed: u64) -> Result<Self> {
        let arch = VaeArchitecture::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for stack in arch.stacks() {
            stack.init_params(&mut params, &mut rng)?;
        }
        Ok(VaeModel { arch, params })
    }

    /// Builds the network with every weight and bias zero.
    pub fn zeroed(config: VaeConfig) -> Result<Self> {
        let arch = VaeArchitecture::new(config)?;
        let mut params = ParamStore::new();
        for stack in arch.stacks() {
            stack.zero_params(&mut params)?;
        }
        Ok(VaeModel { arch, params })
    }

    /// Reassembles a model from stored parameters, checking the layout.
    pub fn from_params(config: VaeConfig, params: ParamStore<T>) -> Result<Self> {
        let template = Self::zeroed(config)?;
        template.params.check_layout(&params)?;
        Ok(VaeModel {
            arch: template.arch,
            params,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.arch.config
    }

    pub fn architecture(&self) -> &VaeArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.config.latent_dim
    }

    pub fn cast<U: Real>(&self) -> VaeModel<U> {
        VaeModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    fn check_frame(&self, x: &Tensor<T>) -> Result<()> {
        let want = self.arch.config.input_shape();
        if x.shape() != want.as_slice() {
            return Err(Error::Input(format!(
                "frame shape {:?} does not match model input {:?}",
                x.shape(),
                want
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let feats = self.features(x)?;
        self.heads(&feats)
    }

    /// Output of the convolutional trunk (before the latent heads).
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_frame(x)?;
        self.arch.encoder.forward(&self.params, x)
    }

    /// Latent heads applied to trunk features.
    pub fn heads(&self, feats: &Tensor<T>) -> Result<EncoderOutput<T>> {
        let mu = self.arch.mu_head.forward(&self.params, feats)?;
        let logvar = self.arch.logvar_head.forward(&self.params, feats)?;
        Ok(EncoderOutput {
            mu: mu.into_data(),
            logvar: logvar.into_data(),
        })
    }

    pub fn decode(&self, z: &[T]) -> Result<Tensor<T>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Input(format!(
                "latent length {} does not match latent dim {}",
                z.len(),
                self.latent_dim()
            )));
        }
        self.arch
            .decoder
            .forward(&self.params, &Tensor::from_vec(z.to_vec()))
    }

    /// Mean over `samples` latent draws of the 0-255 MSE between `x` and its
    /// reconstruction. Higher means less likely under the model.
    pub fn reconstruction_score(
        &self,
        x: &Tensor<T>,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        Ok(self
            .reconstruction_scores(x, samples, rng)?
            .iter()
            .sum::<f64>()
            / samples as f64)
    }

    /// Individual per-sample MSEs behind [`Self::reconstruction_score`].
    pub fn reconstruction_scores(
        &self,
        x: &Tensor<T>,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        let enc = self.encode(x)?;
        self.sampled_scores(x, &enc, samples, rng)
    }

    /// Per-sample MSEs for an encoding of `x` that is already at hand.
    pub fn sampled_scores(
        &self,
        x: &Tensor<T>,
        enc: &EncoderOutput<T>,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<f64>> {
        if samples == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        (0..samples)
            .map(|_| {
                let eps = standard_normal(rng, self.latent_dim());
                let sample = reparameterize(enc, &eps)?;
                mse_255(x, &self.decode(&sample.z)?)
            })
            .collect()
    }

    /// Loss and exact parameter gradients for one frame and one noise draw.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        eps: &[T],
    ) -> Result<(LossBreakdown, ParamStore<T>)> {
        self.check_frame(x)?;
        let arch = &self.arch;
        let p = &self.params;
        let mut enc_tape = Tape::default();
        let mut mu_tape = Tape::default();
        let mut lv_tape = Tape::default();
        let mut dec_tape = Tape::default();

        let feats = arch.encoder.forward_recorded(p, x.clone(), &mut enc_tape)?;
        let mu = arch
            .mu_head
            .forward_recorded(p, feats.clone(), &mut mu_tape)?;
        let logvar = arch.logvar_head.forward_recorded(p, feats, &mut lv_tape)?;
        let enc = EncoderOutput {
            mu: mu.into_data(),
            logvar: logvar.into_data(),
        };
        let sample = reparameterize(&enc, eps)?;
        let recon =
            arch.decoder
                .forward_recorded(p, Tensor::from_vec(sample.z.clone()), &mut dec_tape)?;
        let loss = elbo_loss(x, &recon, &enc)?;

        let mut grads = p.zeros_like();
        let g_recon = Tensor::new(
            recon.shape().to_vec(),
            recon
                .data()
                .iter()
                .zip(x.data())
                .map(|(&r, &v)| r - v)
                .collect(),
        )?;
        let g_z = arch.decoder.backward(p, &dec_tape, g_recon, &mut grads)?;

        let half = T::lit(0.5);
        let mut g_mu = Vec::with_capacity(enc.mu.len());
        let mut g_lv = Vec::with_capacity(enc.mu.len());
        for i in 0..enc.mu.len() {
            let (m, lv, e, gz) = (enc.mu[i], enc.logvar[i], eps[i], g_z.data()[i]);
            let sigma = (lv * half).exp();
            g_mu.push(gz + m);
            g_lv.push(gz * e * half * sigma + half * (lv.exp() - T::one()));
        }
        let g_feats_mu = arch
            .mu_head
            .backward(p, &mu_tape, Tensor::from_vec(g_mu), &mut grads)?;
        let g_feats_lv =
            arch.logvar_head
                .backward(p, &lv_tape, Tensor::from_vec(g_lv), &mut grads)?;
        let g_feats = Tensor::new(
            g_feats_mu.shape().to_vec(),
            g_feats_mu
                .data()
                .iter()
                .zip(g_feats_lv.data())
                .map(|(&a, &b)| a + b)
                .collect(),
        )?;
        arch.encoder.backward(p, &enc_tape, g_feats, &mut grads)?;
        Ok((loss, grads))
    }

    /// Loss for one frame and noise draw without recording activations.
    pub fn loss(&self, x: &Tensor<T>, eps: &[T]) -> Result<LossBreakdown> {
        let enc = self.encode(x)?;
        let sample = reparameterize(&enc, eps)?;
        let recon = self.decode(&sample.z)?;
        elbo_loss(x, &recon, &enc)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

/// Mean per-frame loss terms over one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochStats {
    /// `epoch<TAB>total<TAB>recon<TAB>kl`.
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}",
            self.epoch, self.loss.total, self.loss.recon_term, self.loss.kl_term
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainingLog {
    pub fn to_tsv(&self) -> String {
        self.epochs.iter().map(|e| e.tsv() + "\n").collect()
    }
}

/// Trains a fresh model on normal frames with minibatch Adam.
///
/// Per-frame gradients within a batch may be computed in parallel; they are
/// always reduced in batch order so results do not depend on thread count.
/// `on_epoch` sees each epoch's statistics as soon as it finishes.
pub fn train_vae(
    frames: &[Tensor<f32>],
    config: VaeConfig,
    train: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(VaeModel<f32>, TrainingLog)> {
    if frames.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if train.batch_size == 0 || train.epochs == 0 {
        return Err(Error::Argument(
            "epochs and batch size must be positive".into(),
        ));
    }
    let mut model = VaeModel::<f32>::build(config, train.seed)?;
    for (i, f) in frames.iter().enumerate() {
        model
            .check_frame(f)
            .map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5EED_0F_7A1A);
    let mut adam = AdamState::new(&model.params, train.adam);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut log = TrainingLog::default();
    let latent = model.latent_dim();

    for epoch in 1..=train.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let noise: Vec<Vec<f32>> = batch
                .iter()
                .map(|_| standard_normal(&mut rng, latent))
                .collect();
            let results: Vec<Result<(LossBreakdown, ParamStore<f32>)>> = batch
                .par_iter()
                .zip(noise.par_iter())
                .map(|(&i, eps)| model.loss_and_grads(&frames[i], eps))
                .collect();
            let mut grads = model.params.zeros_like();
            for r in results {
                let (loss, g) = r?;
                if !loss.total.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch}, batch {b}"
                    )));
                }
                sum.total += loss.total;
                sum.recon_term += loss.recon_term;
                sum.kl_term += loss.kl_term;
                grads.accumulate(&g)?;
            }
            grads.scale(1.0 / batch.len() as f32);
            adam_step(&mut model.params, &grads, &mut adam)
                .map_err(|e| Error::Training(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let n = frames.len() as f64;
        let stats = EpochStats {
            epoch,
            loss: LossBreakdown {
                total: sum.total / n,
                recon_term: sum.recon_term / n,
                kl_term: sum.kl_term / n,
            },
        };
        on_epoch(&stats);
        log.epochs.push(stats);
    }
    Ok((model, log))
}
