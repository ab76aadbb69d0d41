//! Rotation x translation augmentation around the nucleus centroid.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::image::{bilinear_resize, rotated_patch, Image};
use super::manifest::CellRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPlan {
    pub rotations: usize,
    /// Degrees between successive rotations.
    pub rotation_step: f64,
    pub translations: usize,
    /// Largest per-axis centroid offset in pixels.
    pub max_offset: u32,
    pub patch_size: usize,
    pub resize_to: usize,
}

impl AugmentPlan {
    pub const fn new(
        rotations: usize,
        rotation_step: f64,
        translations: usize,
        max_offset: u32,
    ) -> Self {
        Self {
            rotations,
            rotation_step,
            translations,
            max_offset,
            patch_size: 128,
            resize_to: 256,
        }
    }

    pub const fn with_sizes(mut self, patch_size: usize, resize_to: usize) -> Self {
        self.patch_size = patch_size;
        self.resize_to = resize_to;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotations == 0 || self.translations == 0 {
            return Err(Error::invalid(
                "augmentation needs at least one rotation and one translation",
            ));
        }
        if self.patch_size == 0 || self.resize_to == 0 {
            return Err(Error::invalid("patch and resize sizes must be positive"));
        }
        if !self.rotation_step.is_finite() || self.rotation_step < 0.0 {
            return Err(Error::invalid(format!(
                "rotation step {} must be non-negative",
                self.rotation_step
            )));
        }
        let sweep = self.rotations as f64 * self.rotation_step;
        if sweep > 360.0 + 1e-9 {
            return Err(Error::invalid(format!(
                "{} rotations of {} degrees sweep {sweep} > 360",
                self.rotations, self.rotation_step
            )));
        }
        Ok(())
    }

    pub fn patches_per_cell(&self) -> usize {
        self.rotations * self.translations
    }
}

/// One augmented view: a rotation angle and a centroid offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSpec {
    pub rotation_index: usize,
    pub translation_index: usize,
    pub angle: f64,
    pub offset: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Provenance {
    pub cell_id: usize,
    pub rotation_index: usize,
    pub translation_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    /// `[resize_to, resize_to, 3]` in `[0, 255]`.
    pub pixels: Image,
    pub class_label: u8,
    pub abnormal: bool,
    pub provenance: Provenance,
}

/// Draw the `Nt` offsets once, slot 0 pinned to zero, and pair each with every rotation.
///
/// Views are ordered rotation-major.
pub fn plan_views(plan: &AugmentPlan, rng: &mut dyn RngCore) -> Result<Vec<ViewSpec>> {
    plan.validate()?;
    let d = i64::from(plan.max_offset);
    let offsets: Vec<(i64, i64)> = (0..plan.translations)
        .map(|t| {
            if t == 0 {
                (0, 0)
            } else {
                (rng.random_range(-d..=d), rng.random_range(-d..=d))
            }
        })
        .collect();
    let mut views = Vec::with_capacity(plan.patches_per_cell());
    for r in 0..plan.rotations {
        for (t, &offset) in offsets.iter().enumerate() {
            views.push(ViewSpec {
                rotation_index: r,
                translation_index: t,
                angle: r as f64 * plan.rotation_step,
                offset,
            });
        }
    }
    Ok(views)
}

/// Rotate about the translated centre, cut the `m`-patch and upsample it.
pub fn render_view(
    image: &Image,
    center: (i64, i64),
    plan: &AugmentPlan,
    view: &ViewSpec,
) -> Result<Image> {
    let c = (center.0 + view.offset.0, center.1 + view.offset.1);
    let patch = rotated_patch(image, c, view.angle, plan.patch_size)?;
    if plan.resize_to == plan.patch_size {
        return Ok(patch);
    }
    bilinear_resize(&patch, plan.resize_to, plan.resize_to)
}

pub fn augment_cell(
    record: &CellRecord,
    image: &Image,
    plan: &AugmentPlan,
    rng: &mut dyn RngCore,
) -> Result<Vec<PatchSample>> {
    plan_views(plan, rng)?
        .iter()
        .map(|v| {
            Ok(PatchSample {
                pixels: render_view(image, record.center_px(), plan, v)?,
                class_label: record.class_label,
                abnormal: record.is_abnormal(),
                provenance: Provenance {
                    cell_id: record.id,
                    rotation_index: v.rotation_index,
                    translation_index: v.translation_index,
                },
            })
        })
        .collect()
}
