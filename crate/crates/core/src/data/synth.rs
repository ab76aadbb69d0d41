//! Synthetic cell images: a pale cytoplasm disc with a nucleus whose radius and
//! darkness depend on the class.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{save_png, Image};
use super::manifest::{format_manifest, CellRecord, DatasetTag};
use crate::error::{Error, Result};
use crate::{stream_rng, Tensor};

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthClasses {
    /// Labels drawn from 1-3 (normal) and 4-7 (abnormal), alternating.
    Binary,
    /// Labels 1, 3, 5, 7 with distinct nucleus radii.
    FourClass,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub cells: usize,
    pub seed: u64,
    pub image_size: usize,
    pub classes: SynthClasses,
}

impl SynthConfig {
    pub fn new(cells: usize, seed: u64) -> Self {
        Self {
            cells,
            seed,
            image_size: 96,
            classes: SynthClasses::Binary,
        }
    }
}

const NORMAL_LABELS: [u8; 3] = [1, 2, 3];
const ABNORMAL_LABELS: [u8; 4] = [4, 5, 6, 7];

fn label_for(i: usize, classes: SynthClasses) -> u8 {
    match classes {
        SynthClasses::Binary if i.is_multiple_of(2) => NORMAL_LABELS[(i / 2) % 3],
        SynthClasses::Binary => ABNORMAL_LABELS[(i / 2) % 4],
        SynthClasses::FourClass => [1, 3, 5, 7][i % 4],
    }
}

/// Nucleus radius range and RGB colour for a class.
fn nucleus_style(label: u8, classes: SynthClasses) -> ((f64, f64), [f64; 3]) {
    match classes {
        SynthClasses::Binary if label < 4 => ((3.0, 5.0), [110.0, 80.0, 140.0]),
        SynthClasses::Binary => ((9.0, 13.0), [55.0, 30.0, 85.0]),
        SynthClasses::FourClass => match label {
            1 => ((2.5, 3.5), [120.0, 90.0, 150.0]),
            3 => ((5.5, 6.5), [100.0, 70.0, 130.0]),
            5 => ((8.5, 9.5), [70.0, 45.0, 100.0]),
            _ => ((11.5, 13.0), [45.0, 25.0, 75.0]),
        },
    }
}

/// Render cell `i`; returns the image and nucleus centroid.
pub fn render_cell(cfg: &SynthConfig, i: usize, label: u8) -> Result<(Image, (f64, f64))> {
    let s = cfg.image_size;
    if s < 32 {
        return Err(Error::invalid(
            "synthetic images must be at least 32 pixels",
        ));
    }
    let mut rng = stream_rng(cfg.seed, i as u64);
    let half = s as f64 / 2.0;
    let jitter = s as f64 / 12.0;
    let nx = (half + rng.random_range(-jitter..=jitter)).round();
    let ny = (half + rng.random_range(-jitter..=jitter)).round();
    let ((rmin, rmax), ncolor) = nucleus_style(label, cfg.classes);
    let nr = rng.random_range(rmin..=rmax);
    let cr = nr + rng.random_range(s as f64 * 0.12..=s as f64 * 0.2);
    let (cx, cy) = (
        nx + rng.random_range(-2.0..=2.0),
        ny + rng.random_range(-2.0..=2.0),
    );
    let background = [225.0, 215.0, 220.0];
    let cytoplasm = [195.0, 165.0, 190.0];
    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64, y as f64);
            let dn = ((xf - nx).powi(2) + (yf - ny).powi(2)).sqrt();
            let dc = ((xf - cx).powi(2) + (yf - cy).powi(2)).sqrt();
            let base = if dn <= nr {
                ncolor
            } else if dc <= cr {
                cytoplasm
            } else {
                background
            };
            for b in base {
                let v: f64 = b + rng.random_range(-8.0..=8.0);
                data.push(v.round().clamp(0.0, 255.0) as f32);
            }
        }
    }
    Ok((Tensor::from_vec(&[s, s, 3], data)?, (nx, ny)))
}

/// Write `cells` PNGs plus a manifest into `dir`; returns the manifest path.
pub fn generate(dir: &Path, cfg: &SynthConfig) -> Result<PathBuf> {
    if cfg.cells == 0 {
        return Err(Error::invalid("synthetic dataset needs at least one cell"));
    }
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut records = Vec::with_capacity(cfg.cells);
    for i in 0..cfg.cells {
        let label = label_for(i, cfg.classes);
        let (img, nucleus) = render_cell(cfg, i, label)?;
        let path = images.join(format!("cell_{i:05}.png"));
        save_png(&img, &path)?;
        records.push(CellRecord {
            id: i,
            image_path: path,
            nucleus,
            class_label: label,
            fold: None,
            dataset: DatasetTag::Other,
        });
    }
    let manifest = dir.join(MANIFEST_NAME);
    let text = format!(
        "# synthetic cells: seed {}, {} images\n{}",
        cfg.seed,
        cfg.cells,
        format_manifest(&records, dir)
    );
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
