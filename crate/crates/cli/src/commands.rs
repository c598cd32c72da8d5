use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use sidewalk_core::dataio::dataset::parse_labels;
use sidewalk_core::dataio::{
    encode_pgm, fit_frame, load_bundle, load_dir, read_frame, save_bundle, synth_corpus,
    FrameRecord, ModelBundle, SynthSpec, LABELS_FILE,
};
use sidewalk_core::evalkit::{
    auc, confusion_matrix, default_thresholds, roc_csv, roc_curve, FrameLabel, ROC_NOTE,
};
use sidewalk_core::latentprep::LatentPrep;
use sidewalk_core::ocsvm::{fit, OcsvmModel, OcsvmTrainConfig};
use sidewalk_core::pipeline::{
    alerts_csv, evaluate, quantile, score_frames, AlertRecord, HybridDetector, PipelineConfig,
    VerdictKind,
};
use sidewalk_core::vae::{train_vae, TrainConfig, VaeConfig, VaeModel};
use sidewalk_core::{Error, Tensor};

use crate::{
    CalibrateArgs, Command, EvalArgs, InferArgs, Mode, SynthArgs, TrainOcsvmArgs, TrainVaeArgs,
};

/// A bad flag value or flag combination.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(Usage(msg.into()))
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Argument(_) => 1,
                e if e.is_numeric() => 3,
                _ => 2,
            };
        }
    }
    2
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::TrainVae(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::TrainOcsvm(a) => train_ocsvm(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        seed: a.seed,
        width: a.width,
        height: a.height,
        train: a.train,
        ocsvm: a.ocsvm,
        test_normal: a.test_normal,
        test_nonhazard: a.test_nonhazard,
        test_hazard: a.test_hazard,
        contamination: a.contamination,
        ..SynthSpec::default()
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let s = synth_corpus(&spec, &a.out)?;
    println!(
        "wrote {}: train {} ({} contaminated), ocsvm {}, test {}/{}/{}",
        a.out.display(),
        s.train,
        s.train_contaminated,
        s.ocsvm,
        s.test[0],
        s.test[1],
        s.test[2]
    );
    Ok(())
}

/// Loads a directory and resizes every frame to the model's input.
fn frames_for(dir: &Path, config: &VaeConfig) -> Result<Vec<FrameRecord>> {
    let (_, h, w) = config.input;
    let mut records = load_dir(dir).with_context(|| format!("loading {}", dir.display()))?;
    if records.is_empty() {
        return Err(Error::Data(format!("no .ppm frames in {}", dir.display())).into());
    }
    for r in &mut records {
        r.image = fit_frame(&r.image, h, w)?;
    }
    Ok(records)
}

/// Keeps frames carrying `label` when the directory is labeled at all.
fn select(records: Vec<FrameRecord>, label: FrameLabel) -> Vec<FrameRecord> {
    if records.iter().any(|r| r.label.is_some()) {
        records.into_iter().filter(|r| r.label == Some(label)).collect()
    } else {
        records
    }
}

fn images(records: &[FrameRecord]) -> Vec<Tensor<f32>> {
    records.iter().map(|r| r.image.clone()).collect()
}

fn require<T>(part: Option<T>, what: &str, path: &Path) -> Result<T> {
    part.ok_or_else(|| {
        Error::Data(format!("bundle {} has no {what}; train it first", path.display())).into()
    })
}

fn open(path: &Path) -> Result<ModelBundle> {
    load_bundle(path).with_context(|| format!("reading bundle {}", path.display()))
}

fn train(a: TrainVaeArgs) -> Result<()> {
    if a.epochs == 0 || a.batch == 0 || !(a.lr > 0.0) {
        return Err(usage("--epochs, --batch and --lr must be positive"));
    }
    let config = VaeConfig::from_preset(a.preset.into());
    let records = frames_for(&a.data, &config)?;
    let mut train_cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        ..TrainConfig::default()
    };
    train_cfg.adam.lr = a.lr;
    eprintln!(
        "training {} preset on {} frames for {} epochs",
        config.preset.map_or("custom", |p| p.name()),
        records.len(),
        a.epochs
    );
    println!("epoch\ttotal\trecon\tkl");
    let (vae, _) = train_vae(&images(&records), config, &train_cfg, |e| {
        println!("{}", e.tsv())
    })?;
    let bundle = ModelBundle {
        vae: Some(vae),
        ..ModelBundle::default()
    };
    save_bundle(&bundle, &a.out)?;
    eprintln!("saved {}", a.out.display());
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.quantile) || a.samples == 0 {
        return Err(usage("--quantile must be in [0, 1] and --samples at least 1"));
    }
    let mut bundle = open(&a.bundle)?;
    let vae = require(bundle.vae.as_ref(), "VAE", &a.bundle)?;
    let records = select(frames_for(&a.data, vae.config())?, FrameLabel::Normal);
    if records.is_empty() {
        return Err(Error::Data(format!("no normal frames in {}", a.data.display())).into());
    }
    let scores = score_frames(vae, &images(&records), a.samples, a.seed)?;
    let threshold = quantile(&scores, a.quantile)?;
    println!("{threshold}");
    if a.write {
        let mut config = bundle.pipeline.unwrap_or(PipelineConfig::new(threshold));
        config.threshold = threshold;
        config.samples = a.samples;
        bundle.pipeline = Some(config);
        save_bundle(&bundle, &a.bundle)?;
        eprintln!("stored threshold in {}", a.bundle.display());
    }
    Ok(())
}

fn latent_means(vae: &VaeModel<f32>, frames: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
    frames
        .iter()
        .map(|f| Ok(vae.encode(f)?.mu.iter().map(|&v| v as f64).collect()))
        .collect()
}

fn train_ocsvm(a: TrainOcsvmArgs) -> Result<()> {
    let config = OcsvmTrainConfig {
        nu: a.nu,
        gamma: a.gamma,
        ..OcsvmTrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    if !(a.pca_var > 0.0 && a.pca_var <= 1.0) {
        return Err(usage("--pca-var must be in (0, 1]"));
    }
    let mut bundle = open(&a.bundle)?;
    let vae = require(bundle.vae.as_ref(), "VAE", &a.bundle)?;
    let records = select(frames_for(&a.data, vae.config())?, FrameLabel::AnomalyNonHazard);
    if records.is_empty() {
        return Err(Error::Data(format!("no anomaly_nonhazard frames in {}", a.data.display())).into());
    }
    let latents = latent_means(vae, &images(&records))?;
    let prep = LatentPrep::fit(&latents, a.pca_var)?;
    let reduced = latents
        .iter()
        .map(|x| prep.apply(x))
        .collect::<sidewalk_core::Result<Vec<_>>>()?;
    let svm = fit(&reduced, &config)?;
    let inliers = reduced
        .iter()
        .filter(|x| svm.predict(x).map_or(false, |p| p > 0))
        .count();
    eprintln!(
        "fit on {} frames: {} PCA components, {} support vectors, {inliers} recognized{}",
        records.len(),
        prep.pca.output_dim(),
        svm.alphas.len(),
        if svm.converged { "" } else { " (solver hit its iteration budget)" }
    );
    bundle.prep = Some(prep);
    bundle.ocsvm = Some(svm);
    save_bundle(&bundle, &a.out)?;
    eprintln!("saved {}", a.out.display());
    Ok(())
}

/// Assembles a detector from a complete bundle, optionally overriding the
/// stored threshold.
fn detector(path: &Path, threshold: Option<f64>) -> Result<HybridDetector<OcsvmModel>> {
    let bundle = open(path)?;
    let mut config = match (bundle.pipeline, threshold) {
        (Some(c), _) => c,
        (None, Some(t)) => PipelineConfig::new(t),
        (None, None) => {
            return Err(usage(
                "no threshold: pass --threshold or run `calibrate --write` first",
            ))
        }
    };
    if let Some(t) = threshold {
        if !(t > 0.0 && t.is_finite()) {
            return Err(usage("--threshold must be positive"));
        }
        config.threshold = t;
    }
    let vae = require(bundle.vae, "VAE", path)?;
    let prep = require(bundle.prep, "latent normalizer/PCA", path)?;
    let svm = require(bundle.ocsvm, "one-class SVM", path)?;
    Ok(HybridDetector::new(vae, prep, svm, config)?)
}

fn infer(a: InferArgs) -> Result<()> {
    let det = detector(&a.bundle, a.threshold)?;
    let records = frames_for(&a.frames, det.vae.config())?;
    let verdicts = det.classify_frames(&images(&records), a.seed)?;
    let alerts: Vec<AlertRecord> = records
        .iter()
        .zip(&verdicts)
        .enumerate()
        .map(|(i, (r, v))| AlertRecord::new(file_name(&r.path), i as u64, v))
        .collect();
    fs::write(&a.alerts, alerts_csv(&alerts)).map_err(|e| Error::Io {
        path: a.alerts.clone(),
        source: e,
    })?;
    if let Some(dir) = &a.heatmaps {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for (r, v) in records.iter().zip(&verdicts) {
            if let Some(h) = &v.heatmap {
                let path = dir.join(Path::new(&file_name(&r.path)).with_extension("pgm"));
                let bytes = encode_pgm(h.width, h.height, &h.normalized())?;
                fs::write(&path, bytes).map_err(|e| Error::Io { path, source: e })?;
            }
        }
    }
    let count = |k: VerdictKind| verdicts.iter().filter(|v| v.kind == k).count();
    eprintln!(
        "{} frames: {} no_anomaly, {} nonhazard_anomaly, {} hazard",
        verdicts.len(),
        count(VerdictKind::NoAnomaly),
        count(VerdictKind::NonHazardousAnomaly),
        count(VerdictKind::Hazard)
    );
    Ok(())
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Reads the labels file and loads the frames it lists from `data`.
fn labeled(data: &Path, labels: &Path, config: &VaeConfig) -> Result<(Vec<Tensor<f32>>, Vec<FrameLabel>)> {
    let text = fs::read_to_string(labels).map_err(|e| Error::Io {
        path: labels.to_path_buf(),
        source: e,
    })?;
    let (_, h, w) = config.input;
    let mut frames = Vec::new();
    let mut out = Vec::new();
    for (rel, label) in parse_labels(&text)? {
        let path: PathBuf = data.join(rel);
        frames.push(fit_frame(&read_frame(&path)?, h, w)?);
        out.push(label);
    }
    if frames.is_empty() {
        return Err(Error::Data(format!("{} lists no frames", labels.display())).into());
    }
    Ok((frames, out))
}

fn eval(a: EvalArgs) -> Result<()> {
    let labels_path = a.labels.clone().unwrap_or_else(|| a.data.join(LABELS_FILE));
    let (scores, cm, auc_value, roc) = match a.mode {
        Mode::Hybrid => {
            let det = detector(&a.bundle, a.threshold)?;
            let (frames, labels) = labeled(&a.data, &labels_path, det.vae.config())?;
            let ev = evaluate(&det, &frames, &labels, None, a.seed)?;
            let scores: Vec<f64> = ev.verdicts.iter().map(|v| v.vae_score).collect();
            (scores, ev.hybrid, ev.auc, ev.roc)
        }
        Mode::VaeOnly => {
            let bundle = open(&a.bundle)?;
            let threshold = match (a.threshold, bundle.pipeline) {
                (Some(t), _) => t,
                (None, Some(c)) => c.threshold,
                (None, None) => return Err(usage("no threshold: pass --threshold")),
            };
            let samples = bundle.pipeline.map_or(10, |c| c.samples);
            let vae = require(bundle.vae, "VAE", &a.bundle)?;
            let (frames, labels) = labeled(&a.data, &labels_path, vae.config())?;
            let scores = score_frames(&vae, &frames, samples, a.seed)?;
            let flagged: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
            let cm = confusion_matrix(&flagged, &labels)?;
            let anomalous: Vec<bool> = labels.iter().map(|l| l.is_anomaly()).collect();
            let roc = roc_curve(&scores, &anomalous, &default_thresholds())?;
            (scores, cm, auc(&roc)?, roc)
        }
    };
    if let Some(path) = &a.roc {
        fs::write(path, roc_csv(&roc)).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    println!("frames: {}", scores.len());
    println!("roc: {ROC_NOTE}");
    println!("auc: {auc_value:.4}");
    print!("{}", cm.report()?);
    println!("{}", cm.csv_line()?);
    Ok(())
}
