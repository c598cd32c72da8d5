//! Model bundle file format.
//!
//! ```text
//! "VOCS"  version:u32le
//! entry*: name_len:u16le name rank:u8 dims:u32le*rank dtype:u8 data
//! ```
//!
//! `dtype` 0 is little-endian `f32`, 1 is little-endian `f64`. An entry named
//! `@section/<name>` (rank 1, zero length) opens a section; every other entry
//! belongs to the most recent section. Names starting with `@` are reserved.
//! Scalars are rank-0 entries holding one value.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::latentprep::{LatentPrep, NormalizerModel, PcaModel};
use crate::nncore::ParamStore;
use crate::ocsvm::{OcsvmModel, RbfKernel};
use crate::pipeline::PipelineConfig;
use crate::vae::{Preset, VaeConfig, VaeModel};
use crate::Tensor;

pub const MAGIC: &[u8; 4] = b"VOCS";
pub const VERSION: u32 = 1;
pub const SECTION_PREFIX: &str = "@section/";

pub const VAE_SECTION: &str = "vae";
pub const NORMALIZER_SECTION: &str = "normalizer";
pub const PCA_SECTION: &str = "pca";
pub const OCSVM_SECTION: &str = "ocsvm";
pub const PIPELINE_SECTION: &str = "pipeline";

#[derive(Clone, Debug, PartialEq)]
pub enum Values {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Values {
    fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::F64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Values,
}

impl Entry {
    pub fn scalar(name: &str, v: f64) -> Self {
        Entry {
            name: name.into(),
            dims: vec![],
            values: Values::F64(vec![v]),
        }
    }

    pub fn vector(name: &str, v: Vec<f64>) -> Self {
        Entry {
            name: name.into(),
            dims: vec![v.len()],
            values: Values::F64(v),
        }
    }

    pub fn matrix(name: &str, rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        Entry {
            name: name.into(),
            dims: vec![rows.len(), cols],
            values: Values::F64(rows.concat()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<Entry>,
}

impl Section {
    fn new(name: &str) -> Self {
        Section {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Format(format!("section {} lacks entry {name}", self.name)))
    }

    fn f64s(&self, name: &str) -> Result<&[f64]> {
        match &self.entry(name)?.values {
            Values::F64(v) => Ok(v),
            Values::F32(_) => Err(Error::Format(format!("{}/{name} must be f64", self.name))),
        }
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        match self.f64s(name)? {
            [v] => Ok(*v),
            _ => Err(Error::Format(format!(
                "{}/{name} is not a scalar",
                self.name
            ))),
        }
    }

    fn count(&self, name: &str) -> Result<usize> {
        let v = self.scalar(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::Format(format!(
                "{}/{name} is not a count",
                self.name
            )));
        }
        Ok(v as usize)
    }

    fn rows(&self, name: &str) -> Result<Vec<Vec<f64>>> {
        let e = self.entry(name)?;
        let [r, c] = e.dims[..] else {
            return Err(Error::Format(format!(
                "{}/{name} is not a matrix",
                self.name
            )));
        };
        let v = self.f64s(name)?;
        Ok((0..r).map(|i| v[i * c..(i + 1) * c].to_vec()).collect())
    }
}

/// Sections in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawBundle {
    pub sections: Vec<Section>,
}

impl RawBundle {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend(VERSION.to_le_bytes());
        for s in &self.sections {
            write_entry(
                &mut out,
                &format!("{SECTION_PREFIX}{}", s.name),
                &[0],
                &Values::F64(vec![]),
            )?;
            for e in &s.entries {
                if e.name.starts_with('@') {
                    return Err(Error::Format(format!("entry name {} is reserved", e.name)));
                }
                write_entry(&mut out, &e.name, &e.dims, &e.values)?;
            }
        }
        Ok(out)
    }

    /// Parses a whole bundle; nothing is returned unless every entry is valid.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a model bundle (bad magic)".into()));
        }
        let version = u32::from_le_bytes(r.array("version")?);
        if version > VERSION {
            return Err(Error::Version {
                found: version,
                supported: VERSION,
            });
        }
        if version == 0 {
            return Err(Error::Format("bundle version 0 is invalid".into()));
        }
        let mut sections: Vec<Section> = Vec::new();
        while r.pos < bytes.len() {
            let entry = r.entry()?;
            if let Some(name) = entry.name.strip_prefix(SECTION_PREFIX) {
                if sections.iter().any(|s| s.name == name) {
                    return Err(Error::Format(format!("duplicate section {name}")));
                }
                sections.push(Section::new(name));
            } else if entry.name.starts_with('@') {
                return Err(Error::Format(format!(
                    "unknown reserved entry {}",
                    entry.name
                )));
            } else {
                let s = sections.last_mut().ok_or_else(|| {
                    Error::Format(format!("entry {} precedes any section", entry.name))
                })?;
                s.entries.push(entry);
            }
        }
        Ok(RawBundle { sections })
    }
}

fn write_entry(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &Values) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Format(format!("entry name too long: {name}")))?;
    let rank =
        u8::try_from(dims.len()).map_err(|_| Error::Format(format!("{name}: rank too large")))?;
    let count: usize = dims.iter().product();
    if count != values.len() {
        return Err(Error::dim("bundle entry values", count, values.len()));
    }
    out.extend(len.to_le_bytes());
    out.extend(name.as_bytes());
    out.push(rank);
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("{name}: dimension too large")))?;
        out.extend(d.to_le_bytes());
    }
    match values {
        Values::F32(v) => {
            out.push(0);
            v.iter().for_each(|x| out.extend(x.to_le_bytes()));
        }
        Values::F64(v) => {
            out.push(1);
            v.iter().for_each(|x| out.extend(x.to_le_bytes()));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Format(format!("truncated bundle while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn entry(&mut self) -> Result<Entry> {
        let len = u16::from_le_bytes(self.array("entry name length")?) as usize;
        let name = std::str::from_utf8(self.take(len, "entry name")?)
            .map_err(|_| Error::Format("entry name is not UTF-8".into()))?
            .to_string();
        let rank = self.array::<1>(&name)?[0] as usize;
        let dims: Vec<usize> = (0..rank)
            .map(|_| {
                self.array::<4>(&name)
                    .map(|b| u32::from_le_bytes(b) as usize)
            })
            .collect::<Result<_>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("{name}: size overflows")))?;
        let values = match self.array::<1>(&name)?[0] {
            0 => {
                let raw = self.take(count.saturating_mul(4), &name)?;
                Values::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            1 => {
                let raw = self.take(count.saturating_mul(8), &name)?;
                Values::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            code => {
                return Err(Error::Format(format!(
                    "entry {name}: unknown dtype code {code}"
                )))
            }
        };
        Ok(Entry { name, dims, values })
    }
}

/// Every model the pipeline needs; absent parts are `None` until trained.
#[derive(Clone, Debug, Default)]
pub struct ModelBundle {
    pub vae: Option<VaeModel<f32>>,
    pub prep: Option<LatentPrep>,
    pub ocsvm: Option<OcsvmModel>,
    pub pipeline: Option<PipelineConfig>,
}

fn preset_code(p: Option<Preset>) -> f64 {
    match p {
        None => 0.0,
        Some(Preset::Canonical) => 1.0,
        Some(Preset::Desk) => 2.0,
    }
}

fn vae_section(m: &VaeModel<f32>) -> Section {
    let c = m.config();
    let mut s = Section::new(VAE_SECTION);
    s.entries
        .push(Entry::scalar("preset", preset_code(c.preset)));
    let (ch, h, w) = c.input;
    s.entries
        .push(Entry::vector("input", vec![ch as f64, h as f64, w as f64]));
    s.entries.push(Entry::vector(
        "channels",
        c.channels.iter().map(|&v| v as f64).collect(),
    ));
    s.entries
        .push(Entry::scalar("latent_dim", c.latent_dim as f64));
    for (name, t) in m.params().iter() {
        s.entries.push(Entry {
            name: name.to_string(),
            dims: t.shape().to_vec(),
            values: Values::F32(t.data().to_vec()),
        });
    }
    s
}

fn read_vae(s: &Section) -> Result<VaeModel<f32>> {
    let preset = match s.scalar("preset")? {
        0.0 => None,
        1.0 => Some(Preset::Canonical),
        2.0 => Some(Preset::Desk),
        v => return Err(Error::Format(format!("unknown preset code {v}"))),
    };
    let input = s.f64s("input")?;
    let channels = s.f64s("channels")?;
    let ([c, h, w], [a, b, cc, d]) = (input, channels) else {
        return Err(Error::Format("malformed VAE geometry".into()));
    };
    let config = VaeConfig {
        preset,
        input: (*c as usize, *h as usize, *w as usize),
        channels: [*a as usize, *b as usize, *cc as usize, *d as usize],
        latent_dim: s.count("latent_dim")?,
    };
    let template = VaeModel::<f32>::zeroed(config.clone())?;
    let mut params = ParamStore::new();
    for name in template.params().names() {
        let e = s.entry(name)?;
        let Values::F32(v) = &e.values else {
            return Err(Error::Format(format!("vae/{name} must be f32")));
        };
        params.insert(name.clone(), Tensor::new(e.dims.clone(), v.clone())?)?;
    }
    VaeModel::from_params(config, params)
}

impl ModelBundle {
    pub fn to_raw(&self) -> RawBundle {
        let mut sections = Vec::new();
        if let Some(m) = &self.vae {
            sections.push(vae_section(m));
        }
        if let Some(p) = &self.prep {
            let mut n = Section::new(NORMALIZER_SECTION);
            n.entries
                .push(Entry::vector("min", p.normalizer.min.clone()));
            n.entries
                .push(Entry::vector("max", p.normalizer.max.clone()));
            sections.push(n);
            let mut s = Section::new(PCA_SECTION);
            s.entries.push(Entry::vector("mean", p.pca.mean.clone()));
            s.entries
                .push(Entry::matrix("components", &p.pca.components));
            s.entries.push(Entry::vector(
                "explained_variance",
                p.pca.explained_variance.clone(),
            ));
            s.entries.push(Entry::scalar("retained", p.pca.retained));
            sections.push(s);
        }
        if let Some(o) = &self.ocsvm {
            let mut s = Section::new(OCSVM_SECTION);
            s.entries
                .push(Entry::matrix("support_vectors", &o.support_vectors));
            s.entries.push(Entry::vector("alphas", o.alphas.clone()));
            s.entries.push(Entry::scalar("bias", o.bias));
            s.entries.push(Entry::scalar("gamma", o.kernel.gamma));
            s.entries.push(Entry::scalar("nu", o.nu));
            s.entries.push(Entry::scalar("n_train", o.n_train as f64));
            s.entries
                .push(Entry::scalar("converged", o.converged as u8 as f64));
            sections.push(s);
        }
        if let Some(c) = &self.pipeline {
            let mut s = Section::new(PIPELINE_SECTION);
            s.entries.push(Entry::scalar("threshold", c.threshold));
            s.entries.push(Entry::scalar("samples", c.samples as f64));
            s.entries.push(Entry::scalar("mask_sigmas", c.mask_sigmas));
            s.entries
                .push(Entry::scalar("min_blob_fraction", c.min_blob_fraction));
            sections.push(s);
        }
        RawBundle { sections }
    }

    pub fn from_raw(raw: &RawBundle) -> Result<Self> {
        let vae = raw.section(VAE_SECTION).map(read_vae).transpose()?;
        let prep = match (raw.section(NORMALIZER_SECTION), raw.section(PCA_SECTION)) {
            (Some(n), Some(p)) => {
                let prep = LatentPrep {
                    normalizer: NormalizerModel {
                        min: n.f64s("min")?.to_vec(),
                        max: n.f64s("max")?.to_vec(),
                    },
                    pca: PcaModel {
                        mean: p.f64s("mean")?.to_vec(),
                        components: p.rows("components")?,
                        explained_variance: p.f64s("explained_variance")?.to_vec(),
                        retained: p.scalar("retained")?,
                    },
                };
                prep.check()?;
                Some(prep)
            }
            (None, None) => None,
            _ => {
                return Err(Error::Format(
                    "normalizer and PCA sections must appear together".into(),
                ))
            }
        };
        let ocsvm = raw
            .section(OCSVM_SECTION)
            .map(|s| -> Result<OcsvmModel> {
                Ok(OcsvmModel {
                    support_vectors: s.rows("support_vectors")?,
                    alphas: s.f64s("alphas")?.to_vec(),
                    bias: s.scalar("bias")?,
                    kernel: RbfKernel::new(s.scalar("gamma")?)?,
                    nu: s.scalar("nu")?,
                    n_train: s.count("n_train")?,
                    converged: s.scalar("converged")? != 0.0,
                })
            })
            .transpose()?;
        let pipeline = raw
            .section(PIPELINE_SECTION)
            .map(|s| -> Result<PipelineConfig> {
                Ok(PipelineConfig {
                    threshold: s.scalar("threshold")?,
                    samples: s.count("samples")?,
                    mask_sigmas: s.scalar("mask_sigmas")?,
                    min_blob_fraction: s.scalar("min_blob_fraction")?,
                })
            })
            .transpose()?;
        Ok(ModelBundle {
            vae,
            prep,
            ocsvm,
            pipeline,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_raw().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_raw(&RawBundle::from_bytes(bytes)?)
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<()> {
    fs::write(path, bundle.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}
