//! Feature files and manifests.
//!
//! A feature file holds one video:
//!
//! ```text
//! "WSVF" | version u32 | T_raw u32 | D u32 | T_raw·D little-endian f32, row-major
//! ```
//!
//! A manifest lists one video per line, comma separated:
//!
//! ```text
//! id,label,relative/path.wsvf,frame_count,start-end;start-end
//! ```
//!
//! The interval field may be empty. Blank lines and lines starting with `#`
//! are ignored. Paths are resolved against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, VideoSample};
use crate::codec::{put_u32, Reader};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FEATURE_MAGIC: &[u8; 4] = b"WSVF";
pub const FEATURE_VERSION: u32 = 1;

pub fn encode_features(features: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + features.as_slice().len() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut buf, FEATURE_VERSION);
    put_u32(&mut buf, features.rows() as u32);
    put_u32(&mut buf, features.cols() as u32);
    for &v in features.as_slice() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix> {
    let fmt = |msg: String| Error::format(path, msg);
    let mut r = Reader::new(bytes);
    let magic = r.take(4).map_err(|e| fmt(e.0))?;
    if magic != FEATURE_MAGIC {
        return Err(fmt(format!("bad magic {magic:?}, expected \"WSVF\"")));
    }
    let version = r.u32().map_err(|e| fmt(e.0))?;
    if version != FEATURE_VERSION {
        return Err(fmt(format!("unsupported feature file version {version}")));
    }
    let rows = r.u32().map_err(|e| fmt(e.0))? as usize;
    let cols = r.u32().map_err(|e| fmt(e.0))? as usize;
    if rows == 0 || cols == 0 {
        return Err(fmt(format!("empty feature matrix {rows}x{cols}")));
    }
    let values = r.f32s(rows * cols).map_err(|e| fmt(e.0))?;
    if r.remaining() != 0 {
        return Err(fmt(format!("{} trailing bytes", r.remaining())));
    }
    let m = Matrix::new(rows, cols, values.into_iter().map(f64::from).collect())?;
    if !m.is_finite() {
        return Err(fmt("non-finite feature value".into()));
    }
    Ok(m)
}

fn format_intervals(intervals: &[(usize, usize)]) -> String {
    intervals
        .iter()
        .map(|(s, e)| format!("{s}-{e}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_intervals(field: &str) -> Option<Vec<(usize, usize)>> {
    let field = field.trim();
    if field.is_empty() {
        return Some(Vec::new());
    }
    field
        .split(';')
        .map(|part| {
            let (s, e) = part.trim().split_once('-')?;
            Some((s.trim().parse().ok()?, e.trim().parse().ok()?))
        })
        .collect()
}

/// Writes `<dir>/<name>.manifest` and one feature file per video under
/// `<dir>/features/`. Returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut manifest = String::new();
    for v in &dataset.videos {
        if v.id.contains([',', '\n', '/', '\\']) || v.id.is_empty() {
            return Err(Error::InvalidArgument(format!("video id {:?} cannot be stored", v.id)));
        }
        let rel = format!("features/{}.wsvf", v.id);
        let path = dir.join(&rel);
        fs::write(&path, encode_features(&v.features)).map_err(|e| Error::io(&path, e))?;
        manifest.push_str(&format!(
            "{},{},{},{},{}\n",
            v.id,
            v.label,
            rel,
            v.frame_count,
            format_intervals(&v.anomaly_intervals)
        ));
    }
    let path = dir.join(format!("{name}.manifest"));
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut videos = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::format(manifest_path, format!("line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 fields, found {}", fields.len())));
        }
        let id = fields[0].trim().to_string();
        let label: u8 = match fields[1].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(bad(&format!("label must be 0 or 1, got {other:?}"))),
        };
        let frame_count: usize = fields[3]
            .trim()
            .parse()
            .map_err(|_| bad(&format!("bad frame count {:?}", fields[3])))?;
        let anomaly_intervals =
            parse_intervals(fields[4]).ok_or_else(|| bad(&format!("bad intervals {:?}", fields[4])))?;
        let path = base.join(fields[2].trim());
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let features = decode_features(&bytes, &path)?;
        let video = VideoSample {
            id,
            features,
            label,
            frame_count,
            anomaly_intervals,
        };
        video
            .validate()
            .map_err(|e| Error::format(manifest_path, format!("line {}: {e}", lineno + 1)))?;
        videos.push(video);
    }
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = videos[0].features.cols();
    if let Some(v) = videos.iter().find(|v| v.features.cols() != d) {
        return Err(Error::format(
            manifest_path,
            format!("video {} has feature dimension {}, expected {d}", v.id, v.features.cols()),
        ));
    }
    Ok(Dataset { videos })
}
