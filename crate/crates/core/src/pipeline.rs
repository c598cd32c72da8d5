//! Hybrid decision flow.
//!
//! A frame's VAE reconstruction score is compared with a threshold. Frames
//! below it are `NoAnomaly` and go no further. Anomalous frames have their
//! latent mean normalized, PCA-reduced and passed to the one-class SVM:
//! recognized latents are non-hazardous anomalies, novel ones are hazards and
//! get an error heatmap and bounding box.
//!
//! Scoring noise for frame `i` comes from `ChaCha8Rng::seed_from_u64(seed)` on
//! stream `i`, so results do not depend on processing order or thread count.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::{
    auc, confusion_matrix, default_thresholds, roc_curve, ConfusionMatrix, FrameLabel, RocPoint,
};
use crate::latentprep::LatentPrep;
use crate::ocsvm::OcsvmModel;
use crate::vae::{anomaly_flag, EncoderOutput, VaeModel, DEFAULT_SCORE_SAMPLES};
use crate::Tensor;

pub const DEFAULT_MASK_SIGMAS: f64 = 2.0;
pub const DEFAULT_MIN_BLOB_FRACTION: f64 = 0.005;
/// Quantile of normal-frame scores used as the threshold by default.
pub const DEFAULT_CALIBRATION_QUANTILE: f64 = 0.995;
/// Camera frame rate used to timestamp alert records.
pub const FRAME_RATE: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    /// VAE score (0-255 MSE) at or above which a frame is anomalous.
    pub threshold: f64,
    /// Latent samples per reconstruction score.
    pub samples: usize,
    /// Heatmap pixels above `mean + mask_sigmas * std` form the hazard mask.
    pub mask_sigmas: f64,
    /// Smallest blob, as a fraction of the frame, that earns a bounding box.
    pub min_blob_fraction: f64,
}

impl PipelineConfig {
    pub fn new(threshold: f64) -> Self {
        PipelineConfig {
            threshold,
            samples: DEFAULT_SCORE_SAMPLES,
            mask_sigmas: DEFAULT_MASK_SIGMAS,
            min_blob_fraction: DEFAULT_MIN_BLOB_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if !(self.mask_sigmas >= 0.0) || !(0.0..=1.0).contains(&self.min_blob_fraction) {
            return Err(Error::Config("invalid heatmap mask parameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VerdictKind {
    NoAnomaly,
    NonHazardousAnomaly,
    Hazard,
}

impl VerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::NoAnomaly => "no_anomaly",
            VerdictKind::NonHazardousAnomaly => "nonhazard_anomaly",
            VerdictKind::Hazard => "hazard",
        }
    }
}

impl fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_anomaly" => Ok(VerdictKind::NoAnomaly),
            "nonhazard_anomaly" => Ok(VerdictKind::NonHazardousAnomaly),
            "hazard" => Ok(VerdictKind::Hazard),
            other => Err(Error::Data(format!("unknown verdict {other:?}"))),
        }
    }
}

/// The verdict as a pure function of the score, threshold and the SVM sign
/// (`None` when the SVM was not consulted).
pub fn verdict_kind(score: f64, threshold: f64, ocsvm_sign: Option<i8>) -> VerdictKind {
    if !anomaly_flag(score, threshold).is_anomaly() {
        return VerdictKind::NoAnomaly;
    }
    match ocsvm_sign {
        Some(s) if s >= 0 => VerdictKind::NonHazardousAnomaly,
        _ => VerdictKind::Hazard,
    }
}

/// Axis-aligned box; `(x, y)` is the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x..self.x + self.w).contains(&x) && (self.y..self.y + self.h).contains(&y)
    }
}

/// Per-pixel reconstruction error, row-major `height x width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `(x, y)` of the largest value; the first one in scan order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// Values scaled into `[0, 1]` by the maximum, for writing as an image.
    pub fn normalized(&self) -> Vec<f32> {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return vec![0.0; self.values.len()];
        }
        self.values.iter().map(|&v| (v / max) as f32).collect()
    }
}

/// Squared error averaged over channels, per pixel.
pub fn error_heatmap(x: &Tensor<f32>, recon: &Tensor<f32>) -> Result<Heatmap> {
    if x.shape() != recon.shape() {
        return Err(Error::Input(format!(
            "heatmap inputs differ in shape: {:?} vs {:?}",
            x.shape(),
            recon.shape()
        )));
    }
    let [c, h, w] = *x.shape() else {
        return Err(Error::Input(format!(
            "expected C x H x W frames, got {:?}",
            x.shape()
        )));
    };
    let plane = h * w;
    let mut values = vec![0.0f64; plane];
    for ch in 0..c {
        let (a, b) = (
            &x.data()[ch * plane..][..plane],
            &recon.data()[ch * plane..][..plane],
        );
        for ((v, &p), &q) in values.iter_mut().zip(a).zip(b) {
            let d = (p - q) as f64;
            *v += d * d;
        }
    }
    values.iter_mut().for_each(|v| *v /= c as f64);
    Ok(Heatmap {
        width: w,
        height: h,
        values,
    })
}

/// Box around the largest 4-connected blob of pixels strictly above
/// `mean + mask_sigmas * std`, or `None` when that blob is too small.
pub fn heatmap_to_bbox(heatmap: &Heatmap, config: &PipelineConfig) -> Option<BBox> {
    let (w, h) = (heatmap.width, heatmap.height);
    let n = w * h;
    if n == 0 {
        return None;
    }
    let mean = heatmap.values.iter().sum::<f64>() / n as f64;
    let var = heatmap
        .values
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let cut = mean + config.mask_sigmas * var.sqrt();
    let mask: Vec<bool> = heatmap.values.iter().map(|&v| v > cut).collect();

    let mut seen = vec![false; n];
    let mut best: Option<(usize, BBox)> = None;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut x0, mut y0, mut x1, mut y1) = (0, w, h, 0, 0);
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            area += 1;
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if best.is_none_or(|(a, _)| area > a) {
            let bbox = BBox {
                x: x0,
                y: y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            };
            best = Some((area, bbox));
        }
    }
    let (area, bbox) = best?;
    (area as f64 >= config.min_blob_fraction * n as f64).then_some(bbox)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazardVerdict {
    pub kind: VerdictKind,
    pub vae_score: f64,
    pub ocsvm_value: Option<f64>,
    pub bbox: Option<BBox>,
    pub heatmap: Option<Heatmap>,
}

/// Anything that can tell recognized latents (`>= 0`) from novel ones.
pub trait NoveltyModel: Sync {
    fn input_dim(&self) -> usize;
    fn decision_value(&self, x: &[f64]) -> Result<f64>;
}

impl NoveltyModel for OcsvmModel {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn decision_value(&self, x: &[f64]) -> Result<f64> {
        OcsvmModel::decision_value(self, x)
    }
}

/// Scoring noise stream for one frame of a run.
pub fn frame_rng(seed: u64, frame_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_index);
    rng
}

/// Encodes a frame and scores it with noise drawn from its own stream.
pub fn score_frame(
    vae: &VaeModel<f32>,
    frame: &Tensor<f32>,
    samples: usize,
    seed: u64,
    frame_index: u64,
) -> Result<(f64, EncoderOutput<f32>)> {
    let enc = vae.encode(frame)?;
    let mut rng = frame_rng(seed, frame_index);
    let scores = vae.sampled_scores(frame, &enc, samples, &mut rng)?;
    Ok((scores.iter().sum::<f64>() / samples as f64, enc))
}

/// Scores many frames in parallel; frame `i` of the slice uses stream `i`.
pub fn score_frames(
    vae: &VaeModel<f32>,
    frames: &[Tensor<f32>],
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| score_frame(vae, f, samples, seed, i as u64).map(|(s, _)| s))
        .collect()
}

/// Linearly interpolated sample quantile, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Data("no values to take a quantile of".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Argument(format!(
            "quantile must be in [0, 1], got {q}"
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// The trained models plus decision settings.
#[derive(Clone, Debug)]
pub struct HybridDetector<C = OcsvmModel> {
    pub vae: VaeModel<f32>,
    pub prep: LatentPrep,
    pub classifier: C,
    pub config: PipelineConfig,
}

impl<C: NoveltyModel> HybridDetector<C> {
    /// Checks that the models fit together before any frame is seen.
    pub fn new(
        vae: VaeModel<f32>,
        prep: LatentPrep,
        classifier: C,
        config: PipelineConfig,
    ) -> Result<Self> {
        config.validate()?;
        prep.check()?;
        let latent = vae.latent_dim();
        if prep.normalizer.features() != latent {
            return Err(Error::Config(format!(
                "normalizer expects {} features but the VAE latent has {latent}",
                prep.normalizer.features()
            )));
        }
        if prep.pca.output_dim() != classifier.input_dim() {
            return Err(Error::Config(format!(
                "PCA emits {} components but the classifier expects {}",
                prep.pca.output_dim(),
                classifier.input_dim()
            )));
        }
        Ok(HybridDetector {
            vae,
            prep,
            classifier,
            config,
        })
    }

    /// Runs the full decision flow on one frame.
    pub fn classify_frame(
        &self,
        frame: &Tensor<f32>,
        frame_index: u64,
        seed: u64,
    ) -> Result<HazardVerdict> {
        let (score, enc) = score_frame(&self.vae, frame, self.config.samples, seed, frame_index)?;
        if !anomaly_flag(score, self.config.threshold).is_anomaly() {
            return Ok(HazardVerdict {
                kind: VerdictKind::NoAnomaly,
                vae_score: score,
                ocsvm_value: None,
                bbox: None,
                heatmap: None,
            });
        }
        let mu: Vec<f64> = enc.mu.iter().map(|&v| v as f64).collect();
        let value = self.classifier.decision_value(&self.prep.apply(&mu)?)?;
        let sign = if value >= 0.0 { 1 } else { -1 };
        let kind = verdict_kind(score, self.config.threshold, Some(sign));
        let (bbox, heatmap) = if kind == VerdictKind::Hazard {
            let recon = self.vae.decode(&enc.mu)?;
            let heatmap = error_heatmap(frame, &recon)?;
            (heatmap_to_bbox(&heatmap, &self.config), Some(heatmap))
        } else {
            (None, None)
        };
        Ok(HazardVerdict {
            kind,
            vae_score: score,
            ocsvm_value: Some(value),
            bbox,
            heatmap,
        })
    }

    /// Classifies frames in parallel; frame `i` of the slice uses stream `i`.
    pub fn classify_frames(&self, frames: &[Tensor<f32>], seed: u64) -> Result<Vec<HazardVerdict>> {
        frames
            .par_iter()
            .enumerate()
            .map(|(i, f)| self.classify_frame(f, i as u64, seed))
            .collect()
    }
}

/// One line of the alert stream.
#[derive(Clone, Debug, PartialEq)]
pub struct AlertRecord {
    pub frame: String,
    /// Seconds since the first frame at [`FRAME_RATE`].
    pub timestamp: f64,
    pub kind: VerdictKind,
    pub vae_score: f64,
    pub ocsvm_value: Option<f64>,
    pub bbox: Option<BBox>,
}

pub const ALERT_HEADER: [&str; 8] = [
    "frame",
    "kind",
    "vae_score",
    "ocsvm_value",
    "bbox_x",
    "bbox_y",
    "bbox_w",
    "bbox_h",
];

impl AlertRecord {
    pub fn new(frame: impl Into<String>, frame_index: u64, verdict: &HazardVerdict) -> Self {
        AlertRecord {
            frame: frame.into(),
            timestamp: frame_index as f64 / FRAME_RATE,
            kind: verdict.kind,
            vae_score: verdict.vae_score,
            ocsvm_value: verdict.ocsvm_value,
            bbox: verdict.bbox,
        }
    }

    /// Fields in [`ALERT_HEADER`] order; absent values are empty.
    pub fn fields(&self) -> [String; 8] {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        [
            self.frame.clone(),
            self.kind.to_string(),
            self.vae_score.to_string(),
            self.ocsvm_value.map(|v| v.to_string()).unwrap_or_default(),
            opt(self.bbox.map(|b| b.x)),
            opt(self.bbox.map(|b| b.y)),
            opt(self.bbox.map(|b| b.w)),
            opt(self.bbox.map(|b| b.h)),
        ]
    }
}

/// Renders records as CSV with the [`ALERT_HEADER`] header line.
pub fn alerts_csv(records: &[AlertRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ALERT_HEADER).expect("in-memory write");
    for r in records {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
}

/// Everything the evaluation reports for one labeled run.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub verdicts: Vec<HazardVerdict>,
    /// Hazard = every flagged anomaly.
    pub vae_only: ConfusionMatrix,
    /// Hazard = SVM-rejected anomaly.
    pub hybrid: ConfusionMatrix,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

/// Runs the detector over labeled frames and tallies both decision rules.
pub fn evaluate<C: NoveltyModel>(
    detector: &HybridDetector<C>,
    frames: &[Tensor<f32>],
    labels: &[FrameLabel],
    thresholds: Option<&[f64]>,
    seed: u64,
) -> Result<Evaluation> {
    if frames.len() != labels.len() {
        return Err(Error::dim("labels", frames.len(), labels.len()));
    }
    let verdicts = detector.classify_frames(frames, seed)?;
    let vae_pred: Vec<bool> = verdicts
        .iter()
        .map(|v| v.kind != VerdictKind::NoAnomaly)
        .collect();
    let hybrid_pred: Vec<bool> = verdicts
        .iter()
        .map(|v| v.kind == VerdictKind::Hazard)
        .collect();
    let scores: Vec<f64> = verdicts.iter().map(|v| v.vae_score).collect();
    let default = default_thresholds();
    let anomalous: Vec<bool> = labels.iter().map(|l| l.is_anomaly()).collect();
    let roc = roc_curve(&scores, &anomalous, thresholds.unwrap_or(&default))?;
    Ok(Evaluation {
        vae_only: confusion_matrix(&vae_pred, labels)?,
        hybrid: confusion_matrix(&hybrid_pred, labels)?,
        auc: auc(&roc)?,
        roc,
        verdicts,
    })
}
