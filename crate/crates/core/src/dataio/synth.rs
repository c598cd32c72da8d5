//! Deterministic synthetic sidewalk corpus.
//!
//! Normal frames are a gray value-noise pavement texture crossed by periodic
//! darker expansion joints. Non-hazardous anomalies add a dark filled disk
//! (a manhole cover). Hazards add an irregular polygon in a bright, pale
//! color that stands out against the pavement. Every frame draws from its own
//! ChaCha stream keyed by (corpus seed, split, case, index), so the corpus is a
//! pure function of the `SynthSpec` and frames can be rendered in any order.
//!
//! Layout under the output directory:
//!
//! ```text
//! train/frame_NNNNN.ppm   labels.csv
//! ocsvm/nonhazard_NNNNN.ppm   labels.csv   masks/
//! test/{normal,nonhazard,hazard}_NNNNN.ppm   labels.csv   masks/
//! ```

use std::f32::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{format_labels, write_frame, LABELS_FILE};
use super::pnm::encode_pgm;
use crate::error::{Error, Result};
use crate::evalkit::FrameLabel;
use crate::Tensor;

pub const TRAIN_DIR: &str = "train";
pub const OCSVM_DIR: &str = "ocsvm";
pub const TEST_DIR: &str = "test";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureParams {
    /// Mean pavement gray level.
    pub base: f32,
    /// Per-frame jitter of the gray level (lighting).
    pub base_jitter: f32,
    /// Amplitude of the coarse value noise.
    pub contrast: f32,
    /// Lattice spacing of the coarse noise, as a fraction of the frame width.
    pub cell: f32,
    /// Amplitude of per-pixel grain.
    pub grain: f32,
    /// Distance between expansion joints, as a fraction of the frame height.
    pub joint_period: f32,
    /// How much darker a joint is than the surrounding slab.
    pub joint_darkening: f32,
}

impl Default for TextureParams {
    fn default() -> Self {
        TextureParams {
            base: 0.55,
            base_jitter: 0.06,
            contrast: 0.03,
            cell: 0.25,
            grain: 0.025,
            joint_period: 0.4,
            joint_darkening: 0.18,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub train: usize,
    /// Non-hazardous anomaly frames for fitting the one-class SVM.
    pub ocsvm: usize,
    pub test_normal: usize,
    pub test_nonhazard: usize,
    pub test_hazard: usize,
    /// Fraction of training frames that show a non-hazardous anomaly instead
    /// of plain pavement.
    pub contamination: f64,
    pub texture: TextureParams,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            width: 64,
            height: 64,
            train: 2000,
            ocsvm: 150,
            test_normal: 300,
            test_nonhazard: 150,
            test_hazard: 150,
            contamination: 0.0,
            texture: TextureParams::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!(
                "synthetic frames must be at least 8x8, got {}x{}",
                self.width, self.height
            )));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::Config(format!(
                "contamination must be in [0, 1], got {}",
                self.contamination
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Ocsvm,
    Test,
}

impl Split {
    fn code(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Ocsvm => 2,
            Split::Test => 3,
        }
    }
}

fn case_code(label: FrameLabel) -> u64 {
    match label {
        FrameLabel::Normal => 0,
        FrameLabel::AnomalyNonHazard => 1,
        FrameLabel::Hazard => 2,
    }
}

fn case_prefix(label: FrameLabel) -> &'static str {
    match label {
        FrameLabel::Normal => "normal",
        FrameLabel::AnomalyNonHazard => "nonhazard",
        FrameLabel::Hazard => "hazard",
    }
}

/// One rendered frame; `mask` marks anomaly pixels row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthFrame {
    pub image: Tensor<f32>,
    pub label: FrameLabel,
    pub mask: Option<Vec<bool>>,
}

struct Canvas {
    w: usize,
    h: usize,
    planes: [Vec<f32>; 3],
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        for (plane, v) in self.planes.iter_mut().zip(rgb) {
            plane[y * self.w + x] = v;
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let data: Vec<f32> = self
            .planes
            .into_iter()
            .flatten()
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Tensor::new(vec![3, self.h, self.w], data).expect("canvas size")
    }
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[-1, 1]`.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cell: f32) -> Vec<f32> {
    let gw = (w as f32 / cell).ceil() as usize + 2;
    let gh = (h as f32 / cell).ceil() as usize + 2;
    let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let fy = (y as f32 + oy) / cell;
        let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
        for x in 0..w {
            let fx = (x as f32 + ox) / cell;
            let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let top = at(ix, iy) * (1.0 - tx) + at(ix + 1, iy) * tx;
            let bot = at(ix, iy + 1) * (1.0 - tx) + at(ix + 1, iy + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn pavement(rng: &mut ChaCha8Rng, w: usize, h: usize, tex: &TextureParams) -> Canvas {
    let base = tex.base + rng.random_range(-tex.base_jitter..=tex.base_jitter);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.015..=0.015));
    let cell = (tex.cell * w as f32).max(2.0);
    let coarse = value_noise(rng, w, h, cell);
    let fine = value_noise(rng, w, h, cell / 2.0);
    let period = (tex.joint_period * h as f32).max(4.0);
    let phase = rng.random_range(0.0..period);
    let thickness = (h as f32 / 32.0).max(1.0);
    let mut gray = Vec::with_capacity(w * h);
    for y in 0..h {
        let d = (y as f32 - phase).rem_euclid(period);
        let joint = if d < thickness {
            tex.joint_darkening
        } else {
            0.0
        };
        for x in 0..w {
            let i = y * w + x;
            let grain = rng.random_range(-tex.grain..=tex.grain);
            gray.push(base + tex.contrast * (coarse[i] + 0.5 * fine[i]) + grain - joint);
        }
    }
    let planes = tint.map(|t| gray.iter().map(|g| g + t).collect());
    Canvas { w, h, planes }
}

fn manhole(rng: &mut ChaCha8Rng, canvas: &mut Canvas) -> Vec<bool> {
    let (w, h) = (canvas.w, canvas.h);
    let m = w.min(h) as f32;
    let r = rng.random_range(0.12..0.2) * m;
    let cx = rng.random_range(r..w as f32 - r);
    let cy = rng.random_range(r..h as f32 - r);
    let lid = rng.random_range(0.12..0.2);
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let d = ((x as f32 + 0.5 - cx).powi(2) + (y as f32 + 0.5 - cy).powi(2)).sqrt();
            if d <= r {
                // a faint concentric ring on the lid
                let ring = if (d / r - 0.65).abs() < 0.08 {
                    0.05
                } else {
                    0.0
                };
                let v = lid + ring + rng.random_range(-0.02..=0.02);
                canvas.set(x, y, [v, v, v]);
                mask[y * w + x] = true;
            }
        }
    }
    mask
}

const HAZARD_COLORS: [[f32; 3]; 3] = [
    [0.98, 0.98, 0.95],
    [1.0, 0.96, 0.72],
    [0.88, 0.95, 1.0],
];

fn inside_polygon(px: f32, py: f32, poly: &[(f32, f32)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn hazard_blob(rng: &mut ChaCha8Rng, canvas: &mut Canvas) -> Vec<bool> {
    let (w, h) = (canvas.w, canvas.h);
    let m = w.min(h) as f32;
    let r = rng.random_range(0.24..0.32) * m;
    let cx = rng.random_range(r..w as f32 - r);
    let cy = rng.random_range(r..h as f32 - r);
    let n = rng.random_range(7..=12);
    let start = rng.random_range(0.0..TAU);
    let poly: Vec<(f32, f32)> = (0..n)
        .map(|k| {
            let a = start + TAU * (k as f32 + rng.random_range(-0.3..0.3)) / n as f32;
            let rad = r * rng.random_range(0.6..1.0);
            (cx + rad * a.cos(), cy + rad * a.sin())
        })
        .collect();
    let color = HAZARD_COLORS[rng.random_range(0..HAZARD_COLORS.len())];
    let mut mask = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            mask[y * w + x] = inside_polygon(x as f32 + 0.5, y as f32 + 0.5, &poly);
        }
    }
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            let shade = rng.random_range(0.92..=1.0);
            canvas.set(x, y, color.map(|c| c * shade));
        }
    }
    mask
}

/// Renders frame `index` of the given split and case.
pub fn synth_frame(spec: &SynthSpec, split: Split, label: FrameLabel, index: usize) -> SynthFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream((split.code() << 40) | (case_code(label) << 32) | index as u64);
    let mut canvas = pavement(&mut rng, spec.width, spec.height, &spec.texture);
    let mask = match label {
        FrameLabel::Normal => None,
        FrameLabel::AnomalyNonHazard => Some(manhole(&mut rng, &mut canvas)),
        FrameLabel::Hazard => Some(hazard_blob(&mut rng, &mut canvas)),
    };
    SynthFrame {
        image: canvas.into_tensor(),
        label,
        mask,
    }
}

/// Label of training frame `i`: contaminated frames are spread evenly so that
/// exactly `round(contamination * n)` of them appear.
fn train_label(spec: &SynthSpec, i: usize) -> FrameLabel {
    let c = spec.contamination;
    if ((i + 1) as f64 * c).round() > (i as f64 * c).round() {
        FrameLabel::AnomalyNonHazard
    } else {
        FrameLabel::Normal
    }
}

/// Frame counts written per split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusSummary {
    pub train: usize,
    pub train_contaminated: usize,
    pub ocsvm: usize,
    pub test: [usize; 3],
}

struct Job {
    split: Split,
    label: FrameLabel,
    index: usize,
    name: String,
}

fn write_split(spec: &SynthSpec, dir: &Path, jobs: &[Job]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let frames: Vec<SynthFrame> = jobs
        .par_iter()
        .map(|j| synth_frame(spec, j.split, j.label, j.index))
        .collect();
    let masks = dir.join("masks");
    if frames.iter().any(|f| f.mask.is_some()) {
        fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    }
    for (job, frame) in jobs.iter().zip(&frames) {
        write_frame(&dir.join(&job.name), &frame.image)?;
        if let Some(mask) = &frame.mask {
            let values: Vec<f32> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
            let path = masks.join(Path::new(&job.name).with_extension("pgm"));
            let bytes = encode_pgm(spec.width, spec.height, &values)?;
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    let labels = format_labels(jobs.iter().map(|j| (j.name.as_str(), j.label)));
    let path = dir.join(LABELS_FILE);
    fs::write(&path, labels).map_err(|e| Error::io(&path, e))
}

/// Writes the whole corpus under `out`.
pub fn synth_corpus(spec: &SynthSpec, out: &Path) -> Result<CorpusSummary> {
    spec.validate()?;
    let train: Vec<Job> = (0..spec.train)
        .map(|i| Job {
            split: Split::Train,
            label: train_label(spec, i),
            index: i,
            name: format!("frame_{i:05}.ppm"),
        })
        .collect();
    let ocsvm: Vec<Job> = (0..spec.ocsvm)
        .map(|i| Job {
            split: Split::Ocsvm,
            label: FrameLabel::AnomalyNonHazard,
            index: i,
            name: format!("nonhazard_{i:05}.ppm"),
        })
        .collect();
    let counts = [spec.test_normal, spec.test_nonhazard, spec.test_hazard];
    let test: Vec<Job> = FrameLabel::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&label, n)| {
            (0..n).map(move |i| Job {
                split: Split::Test,
                label,
                index: i,
                name: format!("{}_{i:05}.ppm", case_prefix(label)),
            })
        })
        .collect();
    write_split(spec, &out.join(TRAIN_DIR), &train)?;
    write_split(spec, &out.join(OCSVM_DIR), &ocsvm)?;
    write_split(spec, &out.join(TEST_DIR), &test)?;
    Ok(CorpusSummary {
        train: spec.train,
        train_contaminated: train
            .iter()
            .filter(|j| j.label != FrameLabel::Normal)
            .count(),
        ocsvm: spec.ocsvm,
        test: counts,
    })
}
