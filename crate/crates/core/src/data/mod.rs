//! Dataset manifests, joint-order remapping and synthetic data.
//!
//! A manifest is JSON-lines, one person per line:
//!
//! ```text
//! {"image":"train/img_0000.pgm","joints":[[x,y,v],...14 entries],"height_px":150.0,"split":"train"}
//! ```
//!
//! `image` is relative to the manifest's directory, `v` is 1 for a visible
//! joint and 0 otherwise, `height_px` is the person's height in pixels and
//! `split` is optional. Joints follow [`crate::skeleton::JOINT_NAMES`].

pub mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PoseError, Result};
use crate::image::ImageBuffer;
use crate::skeleton::{Annotation, JointAnnotation, JOINT_NAMES, NUM_JOINTS};

pub use synth::{
    generate_synthetic, render_negative, write_synthetic_dataset, PoseRanges, SynthConfig,
    SynthSample,
};

/// Height every person is rescaled to on load.
pub const TARGET_HEIGHT: f64 = 150.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub joints: Vec<[f64; 3]>,
    pub height_px: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
}

impl ManifestRecord {
    pub fn from_annotation(a: &Annotation, split: Option<&str>) -> Self {
        ManifestRecord {
            image: a.image_id.clone(),
            joints: a
                .joints
                .iter()
                .map(|j| [j.x, j.y, if j.visible { 1.0 } else { 0.0 }])
                .collect(),
            height_px: a.scale,
            split: split.map(str::to_string),
        }
    }

    pub fn to_annotation(&self) -> Annotation {
        Annotation {
            image_id: self.image.clone(),
            joints: self
                .joints
                .iter()
                .map(|j| JointAnnotation {
                    x: j[0],
                    y: j[1],
                    visible: j[2] != 0.0,
                })
                .collect(),
            scale: self.height_px,
        }
    }
}

/// Parses manifest text; `path` only labels errors.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| PoseError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.joints.len() != NUM_JOINTS {
            return Err(err(format!(
                "record {}: {} joints, expected {NUM_JOINTS}",
                rec.image,
                rec.joints.len()
            )));
        }
        if !(rec.height_px.is_finite() && rec.height_px > 0.0) {
            return Err(err(format!(
                "record {}: height_px must be positive",
                rec.image
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path)
}

/// Canonical manifest text: one compact JSON object per line.
pub fn manifest_to_string(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    crate::io::write_atomic(path, manifest_to_string(records).as_bytes())
}

/// Joint order conversion: `map[j]` is the index, in the source ordering,
/// of this crate's joint `j`.
///
/// File format: one `joint_name source_index` pair per line, `#` starts a
/// comment, every joint name listed exactly once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointRemap {
    pub map: [usize; NUM_JOINTS],
}

impl JointRemap {
    pub fn identity() -> Self {
        JointRemap {
            map: std::array::from_fn(|j| j),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut map = [usize::MAX; NUM_JOINTS];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| PoseError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let mut it = line.split_whitespace();
            let (Some(name), Some(idx), None) = (it.next(), it.next(), it.next()) else {
                return Err(err("expected `joint_name source_index`".into()));
            };
            let j = JOINT_NAMES
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| err(format!("unknown joint {name}")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx}")))?;
            if idx >= NUM_JOINTS {
                return Err(err(format!("index {idx} out of range")));
            }
            if map[j] != usize::MAX {
                return Err(err(format!("joint {name} listed twice")));
            }
            map[j] = idx;
        }
        if let Some(j) = map.iter().position(|&m| m == usize::MAX) {
            return Err(PoseError::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!("joint {} not listed", JOINT_NAMES[j]),
            });
        }
        Ok(JointRemap { map })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    pub fn apply(&self, rec: &mut ManifestRecord) {
        let src = rec.joints.clone();
        for (j, &m) in self.map.iter().enumerate() {
            rec.joints[j] = src[m];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub record: ManifestRecord,
    /// Image after rescaling.
    pub image: ImageBuffer,
    /// Annotation in rescaled coordinates.
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a DatasetEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.record.split.as_deref() == Some(name))
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.entries.iter().map(|e| e.annotation.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Person height after rescaling; `None` keeps images as they are.
    pub target_height: Option<f64>,
    pub remap: Option<JointRemap>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            target_height: Some(TARGET_HEIGHT),
            remap: None,
        }
    }
}

/// Rescales an image by `factor` (bicubic) and maps pixel-centre
/// coordinates accordingly.
pub fn rescale(
    image: &ImageBuffer,
    annotation: &Annotation,
    factor: f64,
) -> (ImageBuffer, Annotation) {
    if (factor - 1.0).abs() < 1e-12 {
        return (image.clone(), annotation.clone());
    }
    let w = ((image.width() as f64 * factor).round() as usize).max(1);
    let h = ((image.height() as f64 * factor).round() as usize).max(1);
    let (fx, fy) = (
        w as f64 / image.width() as f64,
        h as f64 / image.height() as f64,
    );
    let mut a = annotation.clone();
    for j in &mut a.joints {
        j.x = (j.x + 0.5) * fx - 0.5;
        j.y = (j.y + 0.5) * fy - 0.5;
    }
    a.scale *= fy;
    (image.resize(w, h), a)
}

/// Loads every image of a manifest, rescaled so each person is
/// `target_height` pixels tall. Annotations outside their image are
/// rejected.
pub fn load_dataset(manifest: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = read_manifest(manifest)?;
    if let Some(remap) = &opts.remap {
        records.iter_mut().for_each(|r| remap.apply(r));
    }
    let entries = records
        .into_par_iter()
        .map(|record| {
            let image = ImageBuffer::read_pnm(&root.join(&record.image))?;
            let annotation = record.to_annotation();
            annotation.validate(image.width(), image.height())?;
            let factor = opts.target_height.map_or(1.0, |t| t / record.height_px);
            let (image, annotation) = rescale(&image, &annotation, factor);
            Ok(DatasetEntry {
                record,
                image,
                annotation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { root, entries })
}

/// Reads every `.pgm`/`.ppm` file of a directory, sorted by name.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, ImageBuffer)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("pgm" | "ppm" | "pnm")
            )
        })
        .collect();
    paths.sort();
    paths
        .into_par_iter()
        .map(|p| {
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((name, ImageBuffer::read_pnm(&p)?))
        })
        .collect()
}
