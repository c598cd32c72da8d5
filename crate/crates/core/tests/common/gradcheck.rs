//! Exhaustive central-difference check of every VAE parameter.
//!
//! The loss is about `0.5 * ||x - recon||^2`, which is in the thousands for a
//! random frame, so `L(w + h) - L(w - h)` computed as a difference of two
//! totals loses most of its digits. Instead the difference is accumulated
//! term by term: `0.5 * (b - a) * (2x - a - b)` per pixel and the matching
//! expansion of the KL term per latent unit.
//!
//! Only the layers at and after the perturbed one are re-evaluated; the
//! activations before it are cached from the unperturbed pass. Perturbed
//! states are pushed through the remaining layers in blocks, layer by layer,
//! so each weight tensor is streamed from memory once per block.

use rayon::prelude::*;
use sidewalk_core::nncore::{ParamStore, Sequential};
use sidewalk_core::vae::{reparameterize, EncoderOutput, VaeModel};
use sidewalk_core::Tensor;

/// Tried in order until one agrees. The larger step lowers rounding noise,
/// the smaller one avoids ReLU kinks.
pub const STEPS: [f64; 3] = [1e-5, 1e-4, 1e-6];
/// Gradients below this are compared in absolute terms (tolerance times the
/// floor); they sit about nine orders of magnitude below the loss itself.
pub const DENOM_FLOOR: f64 = 1e-6;
const BLOCK: usize = 8;

pub struct TensorSummary {
    pub name: String,
    pub count: usize,
    pub max_rel: f64,
    pub retried: usize,
    pub seconds: f64,
}

pub struct Mismatch {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel: f64,
}

pub struct GradReport {
    pub tensors: Vec<TensorSummary>,
    pub failures: Vec<Mismatch>,
}

impl GradReport {
    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.count).sum()
    }

    pub fn max_rel(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel).fold(0.0, f64::max)
    }

    pub fn retried(&self) -> usize {
        self.tensors.iter().map(|t| t.retried).sum()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

struct Outputs {
    recon: Vec<f64>,
    mu: Vec<f64>,
    logvar: Vec<f64>,
}

/// `L(a) - L(b)` without forming either total.
fn loss_difference(x: &[f64], a: &Outputs, b: &Outputs) -> f64 {
    let mut s = 0.0;
    for ((&v, &p), &q) in x.iter().zip(&a.recon).zip(&b.recon) {
        s += 0.5 * (q - p) * (2.0 * v - p - q);
    }
    for i in 0..a.mu.len() {
        let (m1, l1, m2, l2) = (a.mu[i], a.logvar[i], b.mu[i], b.logvar[i]);
        s += 0.5 * ((m1 - m2) * (m1 + m2) + (l1.exp() - l2.exp()) - (l1 - l2));
    }
    s
}

fn single_layers(stack: &Sequential, from: usize) -> Vec<Sequential> {
    let (_, mut rest) = stack.split(from).unwrap();
    let mut out = Vec::new();
    while !rest.layers().is_empty() {
        let (one, tail) = rest.split(1).unwrap();
        out.push(one);
        rest = tail;
    }
    out
}

fn through(layers: &[Sequential], params: &ParamStore<f64>, states: &mut [Tensor<f64>]) {
    for layer in layers {
        for s in states.iter_mut() {
            *s = layer.forward(params, s).unwrap();
        }
    }
}

enum Where {
    /// Remaining trunk layers after the perturbed one.
    Encoder(Vec<Sequential>),
    /// True for the mean head; holds the other head's output.
    Head(bool, Vec<f64>),
    Decoder(EncoderOutput<f64>),
}

struct Stage {
    perturbed: Sequential,
    input: Tensor<f64>,
    place: Where,
    decoder_rest: Vec<Sequential>,
    mu_head: Sequential,
    logvar_head: Sequential,
}

fn locate(stack: &Sequential, name: &str) -> Option<usize> {
    stack
        .layers()
        .iter()
        .position(|l| l.weight_name() == name || l.bias_name() == name)
}

fn stage_for(model: &VaeModel<f64>, x: &Tensor<f64>, eps: &[f64], name: &str) -> Stage {
    let arch = model.architecture();
    let p = model.params();
    let mu_head = arch.mu_head().clone();
    let logvar_head = arch.logvar_head().clone();
    if let Some(l) = locate(arch.encoder(), name) {
        let (pre, _) = arch.encoder().split(l).unwrap();
        let mut layers = single_layers(arch.encoder(), l);
        let perturbed = layers.remove(0);
        return Stage {
            perturbed,
            input: pre.forward(p, x).unwrap(),
            place: Where::Encoder(layers),
            decoder_rest: single_layers(arch.decoder(), 0),
            mu_head,
            logvar_head,
        };
    }
    let feats = model.features(x).unwrap();
    let enc = model.heads(&feats).unwrap();
    let in_mu = locate(&mu_head, name).is_some();
    if in_mu || locate(&logvar_head, name).is_some() {
        let (perturbed, other) = if in_mu {
            (mu_head.clone(), enc.logvar)
        } else {
            (logvar_head.clone(), enc.mu)
        };
        return Stage {
            perturbed,
            input: feats,
            place: Where::Head(in_mu, other),
            decoder_rest: single_layers(arch.decoder(), 0),
            mu_head,
            logvar_head,
        };
    }
    let l = locate(arch.decoder(), name).expect("parameter belongs to some layer");
    let z = reparameterize(&enc, eps).unwrap().z;
    let (pre, _) = arch.decoder().split(l).unwrap();
    let mut layers = single_layers(arch.decoder(), l);
    let perturbed = layers.remove(0);
    Stage {
        perturbed,
        input: pre.forward(p, &Tensor::from_vec(z)).unwrap(),
        place: Where::Decoder(enc),
        decoder_rest: layers,
        mu_head,
        logvar_head,
    }
}

/// Pushes the perturbed layer outputs through the rest of the network.
fn finish(
    stage: &Stage,
    params: &ParamStore<f64>,
    eps: &[f64],
    mut states: Vec<Tensor<f64>>,
) -> Vec<Outputs> {
    let encs: Vec<EncoderOutput<f64>> = match &stage.place {
        Where::Encoder(rest) => {
            through(rest, params, &mut states);
            let mut mus = states.clone();
            through(std::slice::from_ref(&stage.mu_head), params, &mut mus);
            through(
                std::slice::from_ref(&stage.logvar_head),
                params,
                &mut states,
            );
            mus.into_iter()
                .zip(states)
                .map(|(m, l)| EncoderOutput {
                    mu: m.into_data(),
                    logvar: l.into_data(),
                })
                .collect()
        }
        Where::Head(is_mu, other) => states
            .into_iter()
            .map(|s| {
                if *is_mu {
                    EncoderOutput {
                        mu: s.into_data(),
                        logvar: other.clone(),
                    }
                } else {
                    EncoderOutput {
                        mu: other.clone(),
                        logvar: s.into_data(),
                    }
                }
            })
            .collect(),
        Where::Decoder(enc) => {
            through(&stage.decoder_rest, params, &mut states);
            return states
                .into_iter()
                .map(|r| Outputs {
                    recon: r.into_data(),
                    mu: enc.mu.clone(),
                    logvar: enc.logvar.clone(),
                })
                .collect();
        }
    };
    let mut zs: Vec<Tensor<f64>> = encs
        .iter()
        .map(|e| Tensor::from_vec(reparameterize(e, eps).unwrap().z))
        .collect();
    through(&stage.decoder_rest, params, &mut zs);
    zs.into_iter()
        .zip(encs)
        .map(|(r, e)| Outputs {
            recon: r.into_data(),
            mu: e.mu,
            logvar: e.logvar,
        })
        .collect()
}

/// Central differences at step `h` for a block of entries of one tensor.
fn central_block(
    stage: &Stage,
    params: &mut ParamStore<f64>,
    x: &[f64],
    eps: &[f64],
    name: &str,
    entries: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut states = Vec::with_capacity(2 * entries.len());
    for &i in entries {
        let orig = params.get(name).unwrap().data()[i];
        for w in [orig + h, orig - h] {
            params.get_mut(name).unwrap().data_mut()[i] = w;
            states.push(stage.perturbed.forward(params, &stage.input).unwrap());
        }
        params.get_mut(name).unwrap().data_mut()[i] = orig;
    }
    let outs = finish(stage, params, eps, states);
    outs.chunks(2)
        .map(|pair| loss_difference(x, &pair[0], &pair[1]) / (2.0 * h))
        .collect()
}

/// Compares the backward pass against central differences for every scalar
/// parameter. Entries that miss at the first step are retried at the others.
pub fn check_all(model: &VaeModel<f64>, x: &Tensor<f64>, eps: &[f64], tol: f64) -> GradReport {
    let (_, grads) = model.loss_and_grads(x, eps).unwrap();
    let mut tensors = Vec::new();
    let mut failures = Vec::new();
    for name in model.params().names() {
        let started = std::time::Instant::now();
        let stage = stage_for(model, x, eps, name);
        let analytic = grads.get(name).unwrap().data();
        let n = analytic.len();
        let indices: Vec<usize> = (0..n).collect();
        // (index, numeric, relative error, retried)
        let results: Vec<(usize, f64, f64, bool)> = indices
            .par_chunks(BLOCK)
            .map_init(
                || model.params().clone(),
                |params, chunk| {
                    let mut best: Vec<(usize, f64, f64, bool)> = chunk
                        .iter()
                        .map(|&i| (i, f64::NAN, f64::INFINITY, false))
                        .collect();
                    let mut pending: Vec<usize> = (0..chunk.len()).collect();
                    for (attempt, &h) in STEPS.iter().enumerate() {
                        if pending.is_empty() {
                            break;
                        }
                        let entries: Vec<usize> = pending.iter().map(|&k| chunk[k]).collect();
                        let nums = central_block(&stage, params, x.data(), eps, name, &entries, h);
                        pending = pending
                            .into_iter()
                            .zip(nums)
                            .filter_map(|(k, num)| {
                                let rel = rel_err(analytic[chunk[k]], num);
                                if rel < best[k].2 {
                                    best[k] = (chunk[k], num, rel, attempt > 0);
                                }
                                best[k].3 = attempt > 0;
                                (rel > tol).then_some(k)
                            })
                            .collect();
                    }
                    best
                },
            )
            .flatten()
            .collect();
        let mut summary = TensorSummary {
            name: name.clone(),
            count: n,
            max_rel: 0.0,
            retried: 0,
            seconds: started.elapsed().as_secs_f64(),
        };
        for (i, num, rel, retried) in results {
            summary.max_rel = summary.max_rel.max(rel);
            summary.retried += retried as usize;
            if rel > tol {
                failures.push(Mismatch {
                    name: name.clone(),
                    index: i,
                    analytic: analytic[i],
                    numeric: num,
                    rel,
                });
            }
        }
        tensors.push(summary);
    }
    GradReport { tensors, failures }
}
