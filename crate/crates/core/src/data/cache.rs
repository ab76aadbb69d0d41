//! Materialized patch cache: one raw little-endian f32 blob per patch plus an index.

use std::fs;
use std::path::{Path, PathBuf};

use super::augment::{PatchSample, Provenance};
use crate::error::{Error, Result};
use crate::Tensor;

pub const INDEX_NAME: &str = "index.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub file: String,
    pub provenance: Provenance,
    pub class_label: u8,
}

#[derive(Debug, Clone)]
pub struct PatchCache {
    dir: PathBuf,
    size: usize,
    entries: Vec<CacheEntry>,
}

impl PatchCache {
    pub fn create(dir: &Path, size: usize) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            size,
            entries: Vec::new(),
        })
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn push(&mut self, patch: &PatchSample) -> Result<()> {
        if patch.pixels.dims() != [self.size, self.size, 3] {
            return Err(Error::shape(format!(
                "cache holds {0}x{0} patches, got {1}",
                self.size,
                patch.pixels.shape()
            )));
        }
        let p = patch.provenance;
        let file = format!(
            "c{}_r{}_t{}.f32",
            p.cell_id, p.rotation_index, p.translation_index
        );
        let bytes: Vec<u8> = patch
            .pixels
            .data()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let path = self.dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.entries.push(CacheEntry {
            file,
            provenance: p,
            class_label: patch.class_label,
        });
        Ok(())
    }

    /// Write the index; call once after the last `push`.
    pub fn finish(&self) -> Result<PathBuf> {
        let mut text = format!("# size {}\n", self.size);
        for e in &self.entries {
            let p = e.provenance;
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.file, p.cell_id, p.rotation_index, p.translation_index, e.class_label
            ));
        }
        let path = self.dir.join(INDEX_NAME);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Manifest {
            path: path.clone(),
            line: line + 1,
            msg: msg.to_string(),
        };
        let size = lines
            .next()
            .and_then(|(_, l)| l.strip_prefix("# size "))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(0, "missing `# size N` header"))?;
        let mut entries = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            let num = |i: usize| -> Result<usize> {
                f.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad(n, "bad index row"))
            };
            if f.len() != 5 {
                return Err(bad(n, "expected 5 fields"));
            }
            entries.push(CacheEntry {
                file: f[0].to_string(),
                provenance: Provenance {
                    cell_id: num(1)?,
                    rotation_index: num(2)?,
                    translation_index: num(3)?,
                },
                class_label: u8::try_from(num(4)?).map_err(|_| bad(n, "bad class"))?,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            size,
            entries,
        })
    }

    pub fn load(&self, index: usize) -> Result<PatchSample> {
        let e = self
            .entries
            .get(index)
            .ok_or_else(|| Error::invalid(format!("cache entry {index} out of range")))?;
        let path = self.dir.join(&e.file);
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        let expect = self.size * self.size * 3 * 4;
        if bytes.len() != expect {
            return Err(Error::shape(format!(
                "{}: {} bytes, expected {expect}",
                path.display(),
                bytes.len()
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(PatchSample {
            pixels: Tensor::from_vec(&[self.size, self.size, 3], data)?,
            class_label: e.class_label,
            abnormal: e.class_label >= 4,
            provenance: e.provenance,
        })
    }
}
