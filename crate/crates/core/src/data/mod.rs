//! Dataset ingestion, patch augmentation and batch assembly.

pub mod augment;
pub mod batch;
pub mod cache;
pub mod image;
pub mod manifest;
pub mod mean;
pub mod synth;

use std::collections::HashMap;

use rand::RngCore;
use rayon::prelude::*;

pub use augment::{
    augment_cell, plan_views, render_view, AugmentPlan, PatchSample, Provenance, ViewSpec,
};
pub use batch::{balance_and_batch, BalanceReport, Batch};
pub use cache::PatchCache;
pub use image::{CropMode, Image};
pub use manifest::{load_manifest, CellRecord, DatasetTag};
pub use mean::{compute_mean_image, MeanAccumulator, MeanImage};

use crate::error::Result;
use crate::{stream_rng, Rng, Tensor};

/// What a per-cell random stream is used for; keeps train and test draws independent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    TrainViews = 0,
    TestViews = 1,
    Perturb = 2,
}

/// RNG for one cell and purpose, independent of processing order.
pub fn cell_rng(seed: u64, cell_id: usize, purpose: Purpose) -> Rng {
    stream_rng(seed, ((cell_id as u64) << 2) | purpose as u64)
}

/// Decode every record's image, in parallel, preserving order.
pub fn load_images(records: &[CellRecord]) -> Result<Vec<Image>> {
    records
        .par_iter()
        .map(|r| image::load_rgb(&r.image_path))
        .collect()
}

/// Stack crops into a `[N, 3, H, W]` tensor.
pub fn stack_chw(crops: &[Image]) -> Result<Tensor<f32>> {
    let first = crops
        .first()
        .ok_or_else(|| crate::Error::invalid("cannot stack zero crops"))?;
    let (h, w) = image::hw(first)?;
    let per = h * w * 3;
    let mut data = vec![0.0f32; crops.len() * per];
    for (c, chunk) in crops.iter().zip(data.chunks_mut(per)) {
        image::hwc_to_chw(c, chunk)?;
    }
    Tensor::from_vec(&[crops.len(), 3, h, w], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PatchRef {
    cell: usize,
    view: usize,
}

/// Lazily rendered training patches for a set of cells.
///
/// Each cell's translation offsets come from its own stream, so the patch set
/// depends only on the cells it contains, never on which others are present.
pub struct PatchSet<'a> {
    cells: Vec<(&'a CellRecord, &'a Image)>,
    plans: Vec<AugmentPlan>,
    views: Vec<Vec<ViewSpec>>,
    index: Vec<PatchRef>,
    starts: Vec<usize>,
    cache: Option<(PatchCache, HashMap<Provenance, usize>)>,
}

/// Cells processed per ordered reduction step when computing means.
const MEAN_CHUNK: usize = 8;

impl<'a> PatchSet<'a> {
    pub fn new<F>(
        cells: Vec<(&'a CellRecord, &'a Image)>,
        plan_for: F,
        seed: u64,
        purpose: Purpose,
    ) -> Result<Self>
    where
        F: Fn(&CellRecord) -> AugmentPlan,
    {
        let plans: Vec<AugmentPlan> = cells.iter().map(|(r, _)| plan_for(r)).collect();
        let views = cells
            .iter()
            .zip(&plans)
            .map(|((r, _), p)| plan_views(p, &mut cell_rng(seed, r.id, purpose)))
            .collect::<Result<Vec<_>>>()?;
        let index = views
            .iter()
            .enumerate()
            .flat_map(|(cell, v)| (0..v.len()).map(move |view| PatchRef { cell, view }))
            .collect();
        let starts = views
            .iter()
            .scan(0, |acc, v: &Vec<ViewSpec>| {
                let s = *acc;
                *acc += v.len();
                Some(s)
            })
            .collect();
        Ok(Self {
            cells,
            plans,
            views,
            index,
            starts,
            cache: None,
        })
    }

    /// Read patches from a materialized cache instead of rendering them.
    /// Every patch of the set must be present in the cache.
    pub fn with_cache(mut self, cache: PatchCache) -> Result<Self> {
        let lookup: HashMap<Provenance, usize> = cache
            .entries()
            .iter()
            .enumerate()
            .map(|(i, e)| (e.provenance, i))
            .collect();
        for i in 0..self.len() {
            let p = self.provenance(i);
            if !lookup.contains_key(&p) {
                return Err(crate::Error::invalid(format!(
                    "patch cache lacks cell {} rotation {} translation {}",
                    p.cell_id, p.rotation_index, p.translation_index
                )));
            }
        }
        self.cache = Some((cache, lookup));
        Ok(self)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_record(&self, cell: usize) -> &CellRecord {
        self.cells[cell].0
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn abnormal_flags(&self) -> Vec<bool> {
        self.index
            .iter()
            .map(|p| self.cells[p.cell].0.is_abnormal())
            .collect()
    }

    pub fn record(&self, i: usize) -> &CellRecord {
        self.cells[self.index[i].cell].0
    }

    pub fn provenance(&self, i: usize) -> Provenance {
        let p = self.index[i];
        let v = &self.views[p.cell][p.view];
        Provenance {
            cell_id: self.cells[p.cell].0.id,
            rotation_index: v.rotation_index,
            translation_index: v.translation_index,
        }
    }

    pub fn render(&self, i: usize) -> Result<Image> {
        if let Some((cache, lookup)) = &self.cache {
            return Ok(cache.load(lookup[&self.provenance(i)])?.pixels);
        }
        let p = self.index[i];
        let (rec, img) = self.cells[p.cell];
        render_view(
            img,
            rec.center_px(),
            &self.plans[p.cell],
            &self.views[p.cell][p.view],
        )
    }

    pub fn sample(&self, i: usize) -> Result<PatchSample> {
        let rec = self.record(i);
        Ok(PatchSample {
            pixels: self.render(i)?,
            class_label: rec.class_label,
            abnormal: rec.is_abnormal(),
            provenance: self.provenance(i),
        })
    }

    /// Sum of one cell's patches.
    pub fn cell_accumulator(&self, cell: usize) -> Result<MeanAccumulator> {
        let size = self.plans[cell].resize_to;
        let mut acc = MeanAccumulator::new(&[size, size, 3]);
        for k in 0..self.views[cell].len() {
            acc.add(&self.render(self.starts[cell] + k)?)?;
        }
        Ok(acc)
    }

    /// Per-cell partial sums, computed in parallel within fixed-size chunks
    /// and handed to `sink` in cell order.
    pub fn for_each_cell_accumulator<F>(&self, mut sink: F) -> Result<()>
    where
        F: FnMut(usize, &MeanAccumulator) -> Result<()>,
    {
        let cells: Vec<usize> = (0..self.cells.len()).collect();
        for chunk in cells.chunks(MEAN_CHUNK) {
            let partials = chunk
                .par_iter()
                .map(|&c| self.cell_accumulator(c))
                .collect::<Result<Vec<_>>>()?;
            for (&c, p) in chunk.iter().zip(&partials) {
                sink(c, p)?;
            }
        }
        Ok(())
    }

    /// Mean over every patch; the reduction order is fixed, so the result does
    /// not depend on the thread count.
    pub fn mean_image(&self) -> Result<MeanImage> {
        let size = self
            .plans
            .first()
            .ok_or_else(|| crate::Error::invalid("mean of an empty patch set"))?
            .resize_to;
        let mut total = MeanAccumulator::new(&[size, size, 3]);
        self.for_each_cell_accumulator(|_, p| total.merge(p))?;
        total.finish()
    }

    /// Render, mean-subtract and crop the given patches into a batch.
    ///
    /// Crop windows are drawn sequentially from `rng` before parallel rendering.
    pub fn batch(
        &self,
        indices: &[usize],
        mean: &MeanImage,
        crop: usize,
        num_classes: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Batch<f32>> {
        let windows = indices
            .iter()
            .map(|&i| {
                let size = self.plans[self.index[i].cell].resize_to;
                image::crop_windows(size, crop, CropMode::RandomMirror, rng).map(|w| w[0])
            })
            .collect::<Result<Vec<_>>>()?;
        let crops = indices
            .par_iter()
            .zip(&windows)
            .map(|(&i, w)| {
                let centred = mean.subtract(&self.render(i)?)?;
                image::crop(&centred, w.top, w.left, crop, w.mirror)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            inputs: stack_chw(&crops)?,
            labels: indices
                .iter()
                .map(|&i| self.record(i).target(num_classes))
                .collect(),
        })
    }
}
