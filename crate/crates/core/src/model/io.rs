//! Manifest (JSON Lines) and `ALF1` feature-blob reading and writing.
//!
//! Blob layout, little-endian throughout:
//! `b"ALF1"`, `count: u32`, `dim: u32`, then `count * dim` `f32` values,
//! row-major, rows in manifest instance order.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    validate_dataset, Box2D, CameraModel, ClassId, Dataset, GroundTruthObject, ImageId, InstanceId,
    InstanceRecord, ViewSpec,
};
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"ALF1";
pub const MANIFEST_VIEW_BLOB_SUFFIX: &str = ".alf";

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub(crate) enum ManifestLine {
    Header(HeaderLine),
    Instance(InstanceLine),
    Gt(GroundTruthObject),
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct HeaderLine {
    pub views: Vec<HeaderView>,
    pub camera: CameraModel,
}

#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct HeaderView {
    pub name: String,
    pub dim: usize,
    pub lambda: f64,
    /// Blob path relative to the manifest; defaults to `<name>.alf`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
}

impl HeaderView {
    fn blob_name(&self) -> String {
        self.blob
            .clone()
            .unwrap_or_else(|| format!("{}{}", self.name, MANIFEST_VIEW_BLOB_SUFFIX))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct InstanceLine {
    pub instance_id: InstanceId,
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub box2d: Box2D,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pred_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aux_depths: Vec<f64>,
}

impl InstanceLine {
    pub(crate) fn into_record(self, features: BTreeMap<String, Vec<f64>>) -> InstanceRecord {
        InstanceRecord {
            image_id: self.image_id,
            instance_id: self.instance_id,
            class_id: self.class_id,
            box2d: self.box2d,
            pred_depth: self.pred_depth,
            confidence: self.confidence,
            depth_confidence: self.depth_confidence,
            aux_depths: self.aux_depths,
            features,
        }
    }

    fn from_record(r: &InstanceRecord) -> Self {
        Self {
            instance_id: r.instance_id,
            image_id: r.image_id.clone(),
            class_id: r.class_id,
            box2d: r.box2d,
            pred_depth: r.pred_depth,
            confidence: r.confidence,
            depth_confidence: r.depth_confidence,
            aux_depths: r.aux_depths.clone(),
        }
    }
}

/// Reads a blob, returning `(count, dim, values)`.
pub fn read_blob(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Blob {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < 12 {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != BLOB_MAGIC {
        return Err(bad("bad magic, expected ALF1".into()));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad("count * dim overflows".into()))?;
    if body.len() != expected {
        return Err(bad(format!(
            "payload is {} bytes, header implies {}",
            body.len(),
            expected
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, values))
}

pub fn write_blob(path: &Path, dim: usize, rows: &[&[f64]]) -> Result<()> {
    let mut buf = Vec::with_capacity(12 + rows.len() * dim * 4);
    buf.extend_from_slice(BLOB_MAGIC);
    let to_u32 = |n: usize, what: &str| {
        u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
    };
    buf.extend_from_slice(&to_u32(rows.len(), "row count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    for row in rows {
        if row.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "row of length {} in a blob of dim {dim}",
                row.len()
            )));
        }
        for &x in *row {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn manifest_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        msg: msg.into(),
    }
}

/// Loads and validates a dataset from a manifest and its sidecar blobs.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut header: Option<HeaderLine> = None;
    let mut instances: Vec<InstanceLine> = Vec::new();
    let mut gts = Vec::new();

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine =
            serde_json::from_str(&line).map_err(|e| manifest_err(lineno, e.to_string()))?;
        match parsed {
            ManifestLine::Header(h) => {
                if header.is_some() {
                    return Err(manifest_err(lineno, "second header line"));
                }
                if !instances.is_empty() || !gts.is_empty() {
                    return Err(manifest_err(lineno, "header must be the first record"));
                }
                header = Some(h);
            }
            _ if header.is_none() => {
                return Err(manifest_err(lineno, "header must be the first record"))
            }
            ManifestLine::Instance(i) => instances.push(i),
            ManifestLine::Gt(g) => gts.push(g),
        }
    }
    let header = header.ok_or_else(|| manifest_err(0, "missing header"))?;

    let mut seen = HashSet::new();
    let mut dups: Vec<InstanceId> = instances
        .iter()
        .filter(|i| !seen.insert(i.instance_id))
        .map(|i| i.instance_id)
        .collect();
    if !dups.is_empty() {
        dups.sort_unstable();
        dups.dedup();
        return Err(Error::DuplicateInstanceId(dups));
    }

    let mut per_view: Vec<Vec<f32>> = Vec::with_capacity(header.views.len());
    for v in &header.views {
        let blob_path = base.join(v.blob_name());
        let (count, dim, values) = read_blob(&blob_path)?;
        if dim != v.dim {
            return Err(Error::DimensionMismatch {
                view: v.name.clone(),
                expected: v.dim,
                found: dim,
            });
        }
        if count != instances.len() {
            return Err(Error::Blob {
                path: blob_path,
                msg: format!(
                    "{} rows but the manifest lists {} instances",
                    count,
                    instances.len()
                ),
            });
        }
        per_view.push(values);
    }

    let records = instances
        .into_iter()
        .enumerate()
        .map(|(row, line)| {
            let features = header
                .views
                .iter()
                .zip(&per_view)
                .map(|(v, values)| {
                    let slice = &values[row * v.dim..(row + 1) * v.dim];
                    (
                        v.name.clone(),
                        slice.iter().map(|&x| f64::from(x)).collect(),
                    )
                })
                .collect();
            line.into_record(features)
        })
        .collect();

    let views = header
        .views
        .iter()
        .map(|v| ViewSpec::new(v.name.clone(), v.dim, v.lambda))
        .collect();
    let dataset = Dataset::new(header.camera, views, records, gts);
    let violations = validate_dataset(&dataset);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    Ok(dataset)
}

/// Writes a manifest at `path` and one `<view>.alf` blob per view next to it.
/// Returns the written blob paths.
pub fn write_dataset(d: &Dataset, path: &Path) -> Result<Vec<PathBuf>> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if !base.as_os_str().is_empty() {
        fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    }

    let header_views: Vec<HeaderView> = d
        .views
        .iter()
        .map(|v| HeaderView {
            name: v.name.clone(),
            dim: v.dim,
            lambda: v.lambda,
            blob: Some(format!("{}{}", v.name, MANIFEST_VIEW_BLOB_SUFFIX)),
        })
        .collect();

    let mut blobs = Vec::with_capacity(d.views.len());
    for (v, hv) in d.views.iter().zip(&header_views) {
        let rows = d
            .instances
            .iter()
            .map(|r| {
                r.feature(&v.name).ok_or_else(|| Error::MissingView {
                    view: v.name.clone(),
                    instance_id: r.instance_id,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let blob_path = base.join(hv.blob_name());
        write_blob(&blob_path, v.dim, &rows)?;
        blobs.push(blob_path);
    }

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = |line: &ManifestLine| -> Result<()> {
        serde_json::to_writer(&mut w, line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    };
    emit(&ManifestLine::Header(HeaderLine {
        views: header_views,
        camera: d.camera,
    }))?;
    for r in &d.instances {
        emit(&ManifestLine::Instance(InstanceLine::from_record(r)))?;
    }
    for g in &d.ground_truth {
        emit(&ManifestLine::Gt(g.clone()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(blobs)
}
