//! Frame files, label files and dataset directories.
//!
//! A labels file is a CSV with header `frame_path,label`; paths are relative
//! to the directory holding the file. Ground-truth anomaly masks for frame
//! `dir/name.ppm` live at `dir/masks/name.pgm`.

use std::fs;
use std::path::{Path, PathBuf};

use super::pnm::{decode_pgm, decode_ppm, dims3, encode_ppm};
use super::transform::resize_bilinear;
use crate::error::{Error, Result};
use crate::evalkit::FrameLabel;
use crate::Tensor;

pub const LABELS_FILE: &str = "labels.csv";
pub const LABELS_HEADER: [&str; 2] = ["frame_path", "label"];

#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub path: PathBuf,
    /// `3 x H x W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: Option<FrameLabel>,
}

pub fn read_frame(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_frame(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_ppm(frame)?).map_err(|e| Error::io(path, e))
}

pub fn mask_path(frame_path: &Path) -> PathBuf {
    let dir = frame_path.parent().unwrap_or(Path::new(""));
    let stem = frame_path.file_stem().unwrap_or_default();
    dir.join("masks").join(stem).with_extension("pgm")
}

/// Binary mask (`true` = anomaly) with its width and height.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.pixels[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let t = decode_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (_, height, width) = dims3(&t)?;
    Ok(Mask {
        width,
        height,
        pixels: t.data().iter().map(|&v| v >= 0.5).collect(),
    })
}

/// Parses labels CSV text. Paths are returned as written.
pub fn parse_labels(text: &str) -> Result<Vec<(String, FrameLabel)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("labels header: {e}")))?;
    if header.iter().collect::<Vec<_>>() != LABELS_HEADER {
        return Err(Error::Data(format!(
            "labels header must be `{}`, found `{}`",
            LABELS_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Data(format!("labels line {}: {e}", i + 2)))?;
        let label = row[1]
            .parse::<FrameLabel>()
            .map_err(|e| Error::Data(format!("labels line {}: {e}", i + 2)))?;
        out.push((row[0].to_string(), label));
    }
    Ok(out)
}

pub fn format_labels<'a>(entries: impl IntoIterator<Item = (&'a str, FrameLabel)>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LABELS_HEADER).expect("in-memory write");
    for (path, label) in entries {
        w.write_record([path, label.as_str()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 input")
}

/// Reads a labels file and resolves its paths against the file's directory.
pub fn read_labels(csv_path: &Path) -> Result<Vec<(PathBuf, FrameLabel)>> {
    let text = fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let base = csv_path.parent().unwrap_or(Path::new(""));
    Ok(parse_labels(&text)?
        .into_iter()
        .map(|(p, l)| (base.join(p), l))
        .collect())
}

/// Loads every frame listed in a labels file, in file order.
pub fn load_labeled(csv_path: &Path) -> Result<Vec<FrameRecord>> {
    read_labels(csv_path)?
        .into_iter()
        .map(|(path, label)| {
            Ok(FrameRecord {
                image: read_frame(&path)?,
                path,
                label: Some(label),
            })
        })
        .collect()
}

/// Loads every `.ppm` in `dir` sorted by file name. Labels are attached when
/// the directory has a labels file.
pub fn load_dir(dir: &Path) -> Result<Vec<FrameRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        read_labels(&labels_path)?
    } else {
        Vec::new()
    };
    paths
        .into_iter()
        .map(|path| {
            let label = labels.iter().find(|(p, _)| *p == path).map(|(_, l)| *l);
            Ok(FrameRecord {
                image: read_frame(&path)?,
                path,
                label,
            })
        })
        .collect()
}

/// Resizes a frame to `height x width` unless it already matches.
pub fn fit_frame(frame: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let (c, h, w) = dims3(frame)?;
    if c != 3 {
        return Err(Error::dim("channels", 3, c));
    }
    if (h, w) == (height, width) {
        Ok(frame.clone())
    } else {
        resize_bilinear(frame, height, width)
    }
}
