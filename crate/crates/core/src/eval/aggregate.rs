//! Test-time scoring: average the abnormal probability over many views and crops.

use rand::Rng as _;

use crate::data::image::{crop_views, CropMode, Image};
use crate::data::{
    cell_rng, plan_views, render_view, stack_chw, AugmentPlan, CellRecord, MeanImage, Purpose,
};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// Anything that maps a `[N, 3, H, W]` batch to per-class probabilities `[N, K]`.
pub trait ProbabilityModel {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl ProbabilityModel for Network<f32> {
    fn num_classes(&self) -> usize {
        self.spec().num_classes
    }

    fn probabilities(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.predict_proba(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestPlan {
    pub views: AugmentPlan,
    pub crops: CropMode,
    pub crop_size: usize,
}

impl TestPlan {
    pub fn predictions_per_cell(&self) -> usize {
        self.views.patches_per_cell() * self.crops.count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScore {
    pub cell_id: usize,
    /// Mean abnormal-class probability over all predictions.
    pub score: f64,
    pub n_predictions: usize,
    pub class_label: u8,
    pub abnormal: bool,
    /// Zero-based argmax of the mean class probabilities.
    pub predicted_class: usize,
}

/// Abnormal probability of one prediction: class 1 of a binary head, or the
/// summed probability of classes 4-7 of a seven-class head.
pub fn abnormal_probability(row: &[f32]) -> Result<f64> {
    match row.len() {
        2 => Ok(f64::from(row[1])),
        7 => Ok(row[3..].iter().map(|&p| f64::from(p)).sum()),
        k => Err(Error::invalid(format!(
            "cannot derive an abnormal score from {k} classes"
        ))),
    }
}

/// Crops per forward pass.
const EVAL_BATCH: usize = 100;

/// Score one cell; also returns every individual abnormal probability in prediction order.
pub fn aggregate_cell_score<M: ProbabilityModel + ?Sized>(
    model: &M,
    record: &CellRecord,
    image: &Image,
    center: (i64, i64),
    plan: &TestPlan,
    mean: &MeanImage,
    seed: u64,
) -> Result<(CellScore, Vec<f64>)> {
    let k = model.num_classes();
    let mut rng = cell_rng(seed, record.id, Purpose::TestViews);
    let views = plan_views(&plan.views, &mut rng)?;
    let mut pending: Vec<Image> = Vec::with_capacity(EVAL_BATCH);
    let mut probs: Vec<f64> = Vec::with_capacity(plan.predictions_per_cell());
    let mut class_sum = vec![0.0f64; k];
    let mut flush = |pending: &mut Vec<Image>| -> Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        let out = model.probabilities(&stack_chw(pending)?)?;
        if out.dims() != [pending.len(), k] {
            return Err(Error::shape(format!(
                "model returned {} for {} crops",
                out.shape(),
                pending.len()
            )));
        }
        for row in out.data().chunks(k) {
            probs.push(abnormal_probability(row)?);
            for (s, &p) in class_sum.iter_mut().zip(row) {
                *s += f64::from(p);
            }
        }
        pending.clear();
        Ok(())
    };
    for view in &views {
        let patch = mean.subtract(&render_view(image, center, &plan.views, view)?)?;
        for c in crop_views(&patch, plan.crop_size, plan.crops, &mut rng)? {
            pending.push(c);
            if pending.len() == EVAL_BATCH {
                flush(&mut pending)?;
            }
        }
    }
    flush(&mut pending)?;
    let n = probs.len();
    let score = probs.iter().sum::<f64>() / n as f64;
    let predicted_class = crate::tensor::argmax(&class_sum);
    Ok((
        CellScore {
            cell_id: record.id,
            score,
            n_predictions: n,
            class_label: record.class_label,
            abnormal: record.is_abnormal(),
            predicted_class,
        },
        probs,
    ))
}

/// Nucleus centre used for testing, displaced uniformly on `[-d, d]^2` when `d > 0`.
pub fn test_center(record: &CellRecord, perturb: u32, seed: u64) -> (i64, i64) {
    let (x, y) = record.center_px();
    if perturb == 0 {
        return (x, y);
    }
    let d = i64::from(perturb);
    let mut rng = cell_rng(seed, record.id, Purpose::Perturb);
    (x + rng.random_range(-d..=d), y + rng.random_range(-d..=d))
}

/// Score a list of cells (optionally with perturbed centres).
pub fn score_cells<M: ProbabilityModel + ?Sized>(
    model: &M,
    cells: &[(&CellRecord, &Image)],
    plan: &TestPlan,
    mean: &MeanImage,
    seed: u64,
    perturb: u32,
) -> Result<Vec<CellScore>> {
    cells
        .iter()
        .map(|(r, img)| {
            let center = test_center(r, perturb, seed);
            aggregate_cell_score(model, r, img, center, plan, mean, seed).map(|(s, _)| s)
        })
        .collect()
}
