use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Herlev,
    Hemlbc,
    #[default]
    Other,
}

/// One annotated cell. Classes 1-3 are normal, 4-7 abnormal.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    /// Position in the manifest; also keys the cell's RNG stream.
    pub id: usize,
    pub image_path: PathBuf,
    /// Nucleus centroid `(x, y)` in image pixel coordinates.
    pub nucleus: (f64, f64),
    pub class_label: u8,
    pub fold: Option<usize>,
    pub dataset: DatasetTag,
}

impl CellRecord {
    pub fn is_abnormal(&self) -> bool {
        self.class_label >= 4
    }

    /// 0 = normal, 1 = abnormal.
    pub fn binary_label(&self) -> usize {
        usize::from(self.is_abnormal())
    }

    /// Zero-based 7-class index.
    pub fn class_index(&self) -> usize {
        usize::from(self.class_label - 1)
    }

    /// Training target for a `num_classes`-way head.
    pub fn target(&self, num_classes: usize) -> usize {
        if num_classes == 2 {
            self.binary_label()
        } else {
            self.class_index()
        }
    }

    /// Centroid rounded to the nearest pixel.
    pub fn center_px(&self) -> (i64, i64) {
        (self.nucleus.0.round() as i64, self.nucleus.1.round() as i64)
    }
}

impl fmt::Display for CellRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cell {} ({}, class {})",
            self.id,
            self.image_path.display(),
            self.class_label
        )
    }
}

/// Read a tab-separated manifest: `image_path  x  y  class  [fold]`.
///
/// Blank lines and lines starting with `#` are skipped. Relative image paths
/// are resolved against the manifest's directory.
pub fn load_manifest(path: &Path, dataset: DatasetTag) -> Result<Vec<CellRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, path, base, dataset)
}

pub fn parse_manifest(
    text: &str,
    source: &Path,
    base: &Path,
    dataset: DatasetTag,
) -> Result<Vec<CellRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Manifest {
            path: source.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(err(format!(
                "expected 4 or 5 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let coord = |s: &str, name: &str| -> Result<f64> {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| err(format!("{name} `{s}` is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(err(format!(
                    "{name} {v} must be a finite, non-negative pixel coordinate"
                )));
            }
            Ok(v)
        };
        let x = coord(fields[1], "nucleus_x")?;
        let y = coord(fields[2], "nucleus_y")?;
        let class_label: u8 = fields[3]
            .trim()
            .parse()
            .map_err(|_| err(format!("class `{}` is not an integer", fields[3])))?;
        if !(1..=7).contains(&class_label) {
            return Err(err(format!("class {class_label} outside 1-7")));
        }
        let fold = match fields.get(4).map(|s| s.trim()) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse()
                    .map_err(|_| err(format!("fold `{s}` is not an integer")))?,
            ),
        };
        let raw = Path::new(fields[0].trim());
        if raw.as_os_str().is_empty() {
            return Err(err("empty image path".into()));
        }
        let image_path = if raw.is_absolute() {
            raw.to_path_buf()
        } else {
            base.join(raw)
        };
        records.push(CellRecord {
            id: records.len(),
            image_path,
            nucleus: (x, y),
            class_label,
            fold,
            dataset,
        });
    }
    Ok(records)
}

/// Serialize records back to manifest lines, with paths relative to `base` when possible.
pub fn format_manifest(records: &[CellRecord], base: &Path) -> String {
    let mut out = String::new();
    for r in records {
        let path = r.image_path.strip_prefix(base).unwrap_or(&r.image_path);
        out.push_str(&format!(
            "{}\t{}\t{}\t{}",
            path.display(),
            r.nucleus.0,
            r.nucleus.1,
            r.class_label
        ));
        if let Some(f) = r.fold {
            out.push_str(&format!("\t{f}"));
        }
        out.push('\n');
    }
    out
}
