//! Binary frame files and JSON-lines manifests.
//!
//! Frame file layout (little-endian):
//!
//! | bytes       | content                          |
//! |-------------|----------------------------------|
//! | 0..4        | magic, `CMFT` or `CMRW`          |
//! | 4..8        | `u32` version, currently 1       |
//! | 8..12       | `u32` frame count `T`            |
//! | 12..16      | `u32` dimension `D`              |
//! | 16..        | `T * D` `f32`, frame-major       |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;
use crate::sequence::{FeatureSequence, Label, LabeledSequence, RawSequence};

pub const FRAME_FILE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameKind {
    Features,
    Raw,
}

impl FrameKind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            FrameKind::Features => b"CMFT",
            FrameKind::Raw => b"CMRW",
        }
    }

    fn magic_str(self) -> &'static str {
        match self {
            FrameKind::Features => "CMFT",
            FrameKind::Raw => "CMRW",
        }
    }
}

pub fn encode_frames(kind: FrameKind, frames: &Tensor2) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * frames.len());
    out.extend_from_slice(kind.magic());
    out.extend_from_slice(&FRAME_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for &v in frames.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses a frame file image; `path` is only used in error messages.
pub fn decode_frames(kind: FrameKind, bytes: &[u8], path: &Path) -> Result<FeatureSequence> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} of {HEADER_LEN} bytes)", bytes.len())));
    }
    if &bytes[0..4] != kind.magic() {
        return Err(fail(
            0,
            format!(
                "bad magic {:?}, expected \"{}\"",
                String::from_utf8_lossy(&bytes[0..4]),
                kind.magic_str()
            ),
        ));
    }
    let version = read_u32(bytes, 4);
    if version != FRAME_FILE_VERSION {
        return Err(fail(4, format!("unsupported version {version}, expected {FRAME_FILE_VERSION}")));
    }
    let t = read_u32(bytes, 8) as usize;
    let d = read_u32(bytes, 12) as usize;
    if t == 0 || d == 0 {
        return Err(fail(8, format!("empty frame block {t}x{d}")));
    }
    let payload = t
        .checked_mul(d)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fail(8, format!("frame block {t}x{d} overflows")))?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: {available} of {payload} bytes"),
        ));
    }
    if available > payload {
        return Err(fail(HEADER_LEN + payload, "trailing bytes after payload".into()));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    FeatureSequence::new(Tensor2::from_vec(t, d, data)?).map_err(|e| fail(HEADER_LEN, e.to_string()))
}

pub fn write_frames(path: &Path, kind: FrameKind, frames: &Tensor2) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_frames(kind, frames)).map_err(|e| Error::io(path, e))
}

pub fn read_frames(path: &Path, kind: FrameKind) -> Result<FeatureSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frames(kind, &bytes, path)
}

/// One line of a manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub action: String,
    pub label: Label,
    pub tau: Option<usize>,
    /// Path of the frame file, relative to the manifest's directory.
    pub features: String,
}

/// Records plus the directory their relative paths resolve against.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Result<Self> {
        let m = Manifest {
            base_dir: base_dir.into(),
            records,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::config("manifest has no records"));
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::config(format!("duplicate id {}", r.id)));
            }
            match (r.tau, r.label) {
                (Some(0), _) => return Err(Error::config(format!("{}: tau is 1-based", r.id))),
                (Some(_), Label::Incomplete) => {
                    return Err(Error::config(format!("{}: tau given for an incomplete sequence", r.id)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() {
                let rec: ManifestRecord = serde_json::from_str(body).map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    message: e.to_string(),
                })?;
                records.push(rec);
            }
            offset += line.len() as u64;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::new(base, records)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn path_of(&self, r: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&r.features)
    }

    /// Fails listing every id whose frame file is missing.
    pub fn resolve(&self) -> Result<()> {
        let missing: Vec<String> = self
            .records
            .iter()
            .filter(|r| !self.path_of(r).is_file())
            .map(|r| r.id.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Resolution { ids: missing })
        }
    }

    pub fn actions(&self) -> Vec<String> {
        let mut actions: Vec<String> = self.records.iter().map(|r| r.action.clone()).collect();
        actions.sort();
        actions.dedup();
        actions
    }

    /// Records of one action; an empty selection is an error.
    pub fn filter_action(&self, action: &str) -> Result<Manifest> {
        let records: Vec<ManifestRecord> = self
            .records
            .iter()
            .filter(|r| r.action == action)
            .cloned()
            .collect();
        if records.is_empty() {
            return Err(Error::config(format!("no sequences for action {action:?}")));
        }
        Manifest::new(self.base_dir.clone(), records)
    }

    /// Weak training needs both labels in every action.
    pub fn check_weak_ready(&self) -> Result<()> {
        for action in self.actions() {
            let has = |label| self.records.iter().any(|r| r.action == action && r.label == label);
            if !has(Label::Complete) || !has(Label::Incomplete) {
                return Err(Error::config(format!(
                    "action {action:?} needs both complete and incomplete sequences for weak training"
                )));
            }
        }
        Ok(())
    }

    pub fn load_features(&self) -> Result<Vec<LabeledSequence>> {
        self.resolve()?;
        self.records
            .iter()
            .map(|r| {
                let features = read_frames(&self.path_of(r), FrameKind::Features)?;
                LabeledSequence::new(r.id.clone(), r.action.clone(), r.label, r.tau, features)
            })
            .collect()
    }

    pub fn load_raw(&self) -> Result<Vec<RawSequence>> {
        self.resolve()?;
        self.records
            .iter()
            .map(|r| {
                Ok(RawSequence {
                    id: r.id.clone(),
                    frames: read_frames(&self.path_of(r), FrameKind::Raw)?,
                })
            })
            .collect()
    }
}
