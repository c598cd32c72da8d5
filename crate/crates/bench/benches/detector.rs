//! Per-frame costs of the desk-scale detector.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use rand::Rng;
use sidewalk_core::dataio::synth::{synth_frame, Split};
use sidewalk_core::dataio::SynthSpec;
use sidewalk_core::evalkit::FrameLabel;
use sidewalk_core::latentprep::LatentPrep;
use sidewalk_core::ocsvm::{fit, OcsvmTrainConfig};
use sidewalk_core::pipeline::{
    error_heatmap, frame_rng, heatmap_to_bbox, HybridDetector, PipelineConfig,
};
use sidewalk_core::vae::{VaeConfig, VaeModel};

fn detector() -> (HybridDetector, Vec<sidewalk_core::Tensor<f32>>) {
    let spec = SynthSpec { seed: 3, ..SynthSpec::default() };
    let vae = VaeModel::<f32>::build(VaeConfig::desk(), 1).unwrap();
    let anomalies: Vec<_> = (0..150)
        .map(|i| synth_frame(&spec, Split::Ocsvm, FrameLabel::AnomalyNonHazard, i).image)
        .collect();
    let latents: Vec<Vec<f64>> = anomalies
        .iter()
        .map(|f| vae.encode(f).unwrap().mu.iter().map(|&v| v as f64).collect())
        .collect();
    let prep = LatentPrep::fit(&latents, 0.95).unwrap();
    let reduced: Vec<Vec<f64>> = latents.iter().map(|x| prep.apply(x).unwrap()).collect();
    let svm = fit(&reduced, &OcsvmTrainConfig::default()).unwrap();
    let frames = FrameLabel::ALL
        .iter()
        .map(|&l| synth_frame(&spec, Split::Test, l, 0).image)
        .collect();
    // threshold 1 sends every frame down the full path
    let det = HybridDetector::new(vae, prep, svm, PipelineConfig::new(1.0)).unwrap();
    (det, frames)
}

fn vae_stages(c: &mut Criterion) {
    let (det, frames) = detector();
    let frame = &frames[2];
    let enc = det.vae.encode(frame).unwrap();
    let mut g = c.benchmark_group("desk_vae");
    g.throughput(Throughput::Elements(1));
    g.bench_function("encode", |b| b.iter(|| det.vae.encode(black_box(frame)).unwrap()));
    g.bench_function("decode", |b| b.iter(|| det.vae.decode(black_box(&enc.mu)).unwrap()));
    g.bench_function("score_l10", |b| {
        let mut rng = frame_rng(0, 0);
        b.iter(|| det.vae.reconstruction_score(black_box(frame), 10, &mut rng).unwrap())
    });
    g.finish();
}

fn novelty_stages(c: &mut Criterion) {
    let (det, frames) = detector();
    let mu: Vec<f64> = det.vae.encode(&frames[1]).unwrap().mu.iter().map(|&v| v as f64).collect();
    let reduced = det.prep.apply(&mu).unwrap();
    let recon = det.vae.decode(&det.vae.encode(&frames[2]).unwrap().mu).unwrap();
    let heat = error_heatmap(&frames[2], &recon).unwrap();
    c.bench_function("latent_prep_apply", |b| b.iter(|| det.prep.apply(black_box(&mu)).unwrap()));
    c.bench_function("ocsvm_decision", |b| {
        b.iter(|| det.classifier.decision_value(black_box(&reduced)).unwrap())
    });
    c.bench_function("heatmap_to_bbox_64", |b| {
        b.iter(|| heatmap_to_bbox(black_box(&heat), &det.config))
    });
}

fn ocsvm_fit(c: &mut Criterion) {
    let mut rng = frame_rng(5, 0);
    let data: Vec<Vec<f64>> = (0..150)
        .map(|_| (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    c.bench_function("ocsvm_fit_150x9", |b| {
        b.iter(|| fit(black_box(&data), &OcsvmTrainConfig::default()).unwrap())
    });
}

fn full_frame(c: &mut Criterion) {
    let (det, frames) = detector();
    let mut g = c.benchmark_group("desk_pipeline");
    g.throughput(Throughput::Elements(1));
    g.bench_function("classify_frame", |b| {
        b.iter(|| det.classify_frame(black_box(&frames[2]), 0, 9).unwrap())
    });
    g.finish();
}

criterion_group!(benches, vae_stages, novelty_stages, ocsvm_fit, full_frame);
criterion_main!(benches);
