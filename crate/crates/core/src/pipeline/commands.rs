use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::config::{InitMethod, PipelineConfig, ValidationMode};
use crate::checkpoint::{Checkpoint, Metadata};
use crate::data::image::{crop_views, load_rgb, Image};
use crate::data::synth::{self, SynthConfig};
use crate::data::{
    balance_and_batch, cell_rng, load_images, load_manifest, plan_views, render_view, stack_chw,
    AugmentPlan, BalanceReport, CellRecord, MeanAccumulator, MeanImage, PatchCache, PatchSet,
    Purpose,
};
use crate::error::{Error, Result};
use crate::eval::aggregate::abnormal_probability;
use crate::eval::{
    aggregate_cell_score, classify, make_folds, score_cells, EvaluationReport, FoldPlan, TestPlan,
    THRESHOLD,
};
use crate::nn::{Init, Network};
use crate::optim::{curve_from_csv, curve_to_csv, train_epoch, CurvePoint, OptimState};
use crate::transfer::{make_pretrained_stub, transfer_init, TransferOptions};
use crate::{stream_rng, Rng};

pub const OUTPUTS_NAME: &str = "outputs.txt";

/// File layout under the output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn prepare_dir(&self) -> PathBuf {
        self.root.join("prepare")
    }

    pub fn folds_file(&self) -> PathBuf {
        self.prepare_dir().join("folds.tsv")
    }

    pub fn mean_file(&self, fold: usize) -> PathBuf {
        self.prepare_dir().join(format!("mean_fold{fold}.ckpt"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.prepare_dir().join("cache")
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold{fold}"))
    }

    pub fn best_checkpoint(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("best.ckpt")
    }

    pub fn last_checkpoint(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("last.ckpt")
    }

    pub fn curve_file(&self, fold: usize) -> PathBuf {
        self.fold_dir(fold).join("curve.csv")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    /// Add paths to `outputs.txt` (sorted, relative to the root, no duplicates).
    pub fn record_outputs(&self, paths: &[PathBuf]) -> Result<()> {
        let list = self.root.join(OUTPUTS_NAME);
        let mut set: BTreeSet<String> = match std::fs::read_to_string(&list) {
            Ok(text) => text.lines().map(str::to_string).collect(),
            Err(_) => BTreeSet::new(),
        };
        for p in paths {
            let rel = p.strip_prefix(&self.root).unwrap_or(p);
            set.insert(rel.display().to_string());
        }
        let body: String = set.into_iter().map(|s| s + "\n").collect();
        write_file(&list, body)
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Manifest records with their decoded images.
pub struct Dataset {
    pub records: Vec<CellRecord>,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let records = load_manifest(&cfg.manifest, cfg.dataset)?;
        if records.is_empty() {
            return Err(Error::invalid(format!(
                "manifest {} lists no cells",
                cfg.manifest.display()
            )));
        }
        let images = load_images(&records)?;
        Ok(Self { records, images })
    }

    pub fn cells(&self, indices: &[usize]) -> Vec<(&CellRecord, &Image)> {
        indices
            .iter()
            .map(|&i| (&self.records[i], &self.images[i]))
            .collect()
    }
}

/// RNG for one training run step, disjoint from the per-cell streams.
fn run_rng(seed: u64, fold: usize, epoch: usize, lane: u64) -> Rng {
    stream_rng(
        seed ^ 0x9E37_79B9_7F4A_7C15,
        ((fold as u64) << 40) | ((epoch as u64) << 8) | lane,
    )
}

const LANE_BATCHES: u64 = 0;
const LANE_DROPOUT: u64 = 1;
const LANE_INIT: u64 = 2;

fn fold_plan(cfg: &PipelineConfig, records: &[CellRecord]) -> Result<FoldPlan> {
    match FoldPlan::from_records(records)? {
        Some(plan) => {
            if plan.k != cfg.folds {
                warn!(
                    "manifest defines {} folds; config asks for {}; using the manifest",
                    plan.k, cfg.folds
                );
            }
            Ok(plan)
        }
        None => make_folds(records, cfg.folds, cfg.seed),
    }
}

fn load_fold_plan(ws: &Workspace, n: usize) -> Result<FoldPlan> {
    let path = ws.folds_file();
    if !path.exists() {
        return Err(Error::invalid(format!(
            "{} not found; run `prepare` first",
            path.display()
        )));
    }
    FoldPlan::load(&path, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub cells_per_class: [usize; 7],
    pub fold_sizes: Vec<usize>,
    /// Training patch counts per fold.
    pub training_patches: Vec<BalanceReport>,
    pub total_patches: BalanceReport,
}

impl PrepareSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let normal: usize = self.cells_per_class[..3].iter().sum();
        let abnormal: usize = self.cells_per_class[3..].iter().sum();
        let _ = writeln!(
            s,
            "cells: {} ({normal} normal, {abnormal} abnormal)",
            normal + abnormal
        );
        for (i, n) in self.cells_per_class.iter().enumerate() {
            let _ = writeln!(s, "class {}: {n}", i + 1);
        }
        let t = self.total_patches;
        let _ = writeln!(
            s,
            "all patches: {} abnormal / {} normal (ratio {:.3})",
            t.abnormal,
            t.normal,
            t.ratio()
        );
        for (f, (size, r)) in self
            .fold_sizes
            .iter()
            .zip(&self.training_patches)
            .enumerate()
        {
            let _ = writeln!(
                s,
                "fold {f}: {size} test cells; training patches {} abnormal / {} normal (ratio {:.3})",
                r.abnormal,
                r.normal,
                r.ratio()
            );
        }
        s
    }
}

fn patch_counts(cfg: &PipelineConfig, records: &[&CellRecord]) -> BalanceReport {
    let mut r = BalanceReport {
        normal: 0,
        abnormal: 0,
    };
    for rec in records {
        let n = cfg.train.for_record(rec).patches_per_cell();
        if rec.is_abnormal() {
            r.abnormal += n;
        } else {
            r.normal += n;
        }
    }
    r
}

/// Patch counts for a config, from the manifest alone.
pub fn plan_summary(
    cfg: &PipelineConfig,
    records: &[CellRecord],
    folds: &FoldPlan,
) -> PrepareSummary {
    let mut cells_per_class = [0; 7];
    for r in records {
        cells_per_class[r.class_index()] += 1;
    }
    let training_patches = (0..folds.k)
        .map(|f| {
            let train: Vec<&CellRecord> = folds
                .train_indices(f)
                .into_iter()
                .map(|i| &records[i])
                .collect();
            patch_counts(cfg, &train)
        })
        .collect();
    PrepareSummary {
        cells_per_class,
        fold_sizes: folds.fold_sizes(),
        training_patches,
        total_patches: patch_counts(cfg, &records.iter().collect::<Vec<_>>()),
    }
}

/// Fold plan, per-fold training means, optional patch cache and a summary.
pub fn cmd_prepare(cfg: &PipelineConfig, ws: &Workspace) -> Result<PrepareSummary> {
    let data = Dataset::load(cfg)?;
    let folds = fold_plan(cfg, &data.records)?;
    let dir = ws.prepare_dir();
    mkdir(&dir)?;
    let mut produced = vec![ws.folds_file()];
    folds.save(&ws.folds_file(), &data.records)?;

    let all: Vec<usize> = (0..data.records.len()).collect();
    let set = PatchSet::new(
        data.cells(&all),
        |r| cfg.train.for_record(r),
        cfg.seed,
        Purpose::TrainViews,
    )?;
    let size = cfg.resized_patch_size();
    let mut fold_acc: Vec<MeanAccumulator> = (0..folds.k)
        .map(|_| MeanAccumulator::new(&[size, size, 3]))
        .collect();
    set.for_each_cell_accumulator(|cell, partial| {
        let home = folds.fold_of(cell);
        for (f, acc) in fold_acc.iter_mut().enumerate() {
            if f != home {
                acc.merge(partial)?;
            }
        }
        Ok(())
    })?;
    for (f, acc) in fold_acc.iter().enumerate() {
        let path = ws.mean_file(f);
        mean_checkpoint(cfg, &acc.finish()?).save(&path)?;
        produced.push(path);
    }

    if cfg.materialize_cache {
        let mut cache = PatchCache::create(&ws.cache_dir(), size)?;
        for i in 0..set.len() {
            cache.push(&set.sample(i)?)?;
        }
        produced.push(cache.finish()?);
        info!(
            "cached {} patches in {}",
            set.len(),
            ws.cache_dir().display()
        );
    }

    let summary = plan_summary(cfg, &data.records, &folds);
    let summary_path = dir.join("summary.txt");
    write_file(&summary_path, summary.to_text())?;
    produced.push(summary_path);
    ws.record_outputs(&produced)?;
    info!("prepared {} cells in {} folds", data.records.len(), folds.k);
    Ok(summary)
}

fn mean_checkpoint(cfg: &PipelineConfig, mean: &MeanImage) -> Checkpoint {
    Checkpoint::from_network(
        &Network::new(cfg.network_spec().expect("validated config")).expect("valid spec"),
        meta(cfg, 0),
    )
    .with_mean(mean)
}

fn meta(cfg: &PipelineConfig, epoch: usize) -> Metadata {
    Metadata {
        num_classes: cfg.num_classes as u32,
        epoch: epoch as u32,
        seed: cfg.seed,
    }
}

fn load_mean(path: &Path) -> Result<MeanImage> {
    Checkpoint::load(path)?
        .mean()?
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no mean image", path.display())))
}

/// Initial network for a fold according to `cfg.init`.
pub fn initial_network(cfg: &PipelineConfig, fold: usize) -> Result<Network<f32>> {
    let spec = cfg.network_spec()?;
    let mut rng = run_rng(cfg.seed, fold, 0, LANE_INIT);
    match cfg.init.method {
        InitMethod::Msra => Network::initialized(spec, Init::Msra, &mut rng),
        InitMethod::Gaussian => {
            Network::initialized(spec, Init::Gaussian { std: cfg.init.std }, &mut rng)
        }
        InitMethod::Transfer => {
            let source = match &cfg.init.source {
                Some(path) => Checkpoint::load(path)?,
                None => make_pretrained_stub(&spec, cfg.seed)?,
            };
            let mut net = Network::new(spec.clone())?;
            let mut opts = TransferOptions::conv_stack(&spec, cfg.optim.transferred_multiplier());
            opts.fresh_std = cfg.init.std;
            transfer_init(&mut net, &source, &opts, &mut rng)?;
            Ok(net)
        }
    }
}

/// Patch-level cross-entropy and accuracy of `net` on rendered views of `cells`.
pub fn patch_loss_accuracy(
    net: &Network<f32>,
    cells: &[(&CellRecord, &Image)],
    plan: &TestPlan,
    mean: &MeanImage,
    seed: u64,
) -> Result<(f64, f64)> {
    let k = net.spec().num_classes;
    let mut crops = Vec::new();
    let mut targets = Vec::new();
    for (rec, img) in cells {
        let mut rng = cell_rng(seed, rec.id, Purpose::TestViews);
        for view in plan_views(&plan.views, &mut rng)? {
            let patch = mean.subtract(&render_view(img, rec.center_px(), &plan.views, &view)?)?;
            for c in crop_views(&patch, plan.crop_size, plan.crops, &mut rng)? {
                crops.push(c);
                targets.push(rec.target(k));
            }
        }
    }
    if crops.is_empty() {
        return Err(Error::invalid("no patches to validate on"));
    }
    let (mut loss, mut correct) = (0.0f64, 0usize);
    for (chunk, tchunk) in crops.chunks(128).zip(targets.chunks(128)) {
        let probs = net.predict_proba(&stack_chw(chunk)?)?;
        for (row, &t) in probs.data().chunks(k).zip(tchunk) {
            loss -= f64::from(row[t].max(f32::MIN_POSITIVE)).ln();
            correct += usize::from(crate::tensor::argmax(row) == t);
        }
    }
    let n = crops.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub curve: Vec<CurvePoint>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub balance: BalanceReport,
}

/// Split training cells into (fit, validation) for the configured validation mode.
fn split_validation(
    cfg: &PipelineConfig,
    data: &Dataset,
    folds: &FoldPlan,
    fold: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let train = folds.train_indices(fold);
    match cfg.validation.mode {
        ValidationMode::HeldOutFold => Ok((train, folds.test_indices(fold))),
        ValidationMode::InnerHoldout => {
            let subset: Vec<CellRecord> = train.iter().map(|&i| data.records[i].clone()).collect();
            let k = ((1.0 / cfg.validation.inner_fraction).round() as usize).clamp(2, subset.len());
            let inner = make_folds(&subset, k, cfg.seed ^ (fold as u64 + 1))?;
            let fit = inner
                .train_indices(0)
                .into_iter()
                .map(|i| train[i])
                .collect();
            let val = inner
                .test_indices(0)
                .into_iter()
                .map(|i| train[i])
                .collect();
            Ok((fit, val))
        }
    }
}

/// Train one fold, writing `best.ckpt`, `last.ckpt` and `curve.csv`.
pub fn cmd_train(
    cfg: &PipelineConfig,
    ws: &Workspace,
    fold: usize,
    resume: bool,
) -> Result<TrainOutcome> {
    let data = Dataset::load(cfg)?;
    let folds = load_fold_plan(ws, data.records.len())?;
    if fold >= folds.k {
        return Err(Error::invalid(format!(
            "fold {fold} out of range (plan has {} folds)",
            folds.k
        )));
    }
    let (fit, val) = split_validation(cfg, &data, &folds, fold)?;
    let mut set = PatchSet::new(
        data.cells(&fit),
        |r| cfg.train.for_record(r),
        cfg.seed,
        Purpose::TrainViews,
    )?;
    if cfg.materialize_cache && ws.cache_dir().join(crate::data::cache::INDEX_NAME).exists() {
        set = set.with_cache(PatchCache::open(&ws.cache_dir())?)?;
    }
    let mean = match cfg.validation.mode {
        ValidationMode::HeldOutFold => load_mean(&ws.mean_file(fold))?,
        ValidationMode::InnerHoldout => set.mean_image()?,
    };
    let val_cells = data.cells(&val);
    let val_plan = cfg.validation_plan();
    let dir = ws.fold_dir(fold);
    mkdir(&dir)?;

    let mut net = initial_network(cfg, fold)?;
    let mut state = OptimState::new(&net);
    let mut curve: Vec<CurvePoint> = Vec::new();
    if resume && ws.last_checkpoint(fold).exists() {
        let last = Checkpoint::load(&ws.last_checkpoint(fold))?;
        last.apply_to(&mut net)?;
        state.velocities = last.velocities(&net)?;
        state.epoch = last.metadata.epoch as usize;
        let text = std::fs::read_to_string(ws.curve_file(fold))
            .map_err(|e| Error::io(ws.curve_file(fold), e))?;
        curve = curve_from_csv(&text)?;
        curve.retain(|p| p.epoch <= state.epoch);
        if let Some(best) = curve
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        {
            let mut best_net = net.clone();
            Checkpoint::load(&ws.best_checkpoint(fold))?.apply_to(&mut best_net)?;
            state.observe_validation(best.epoch, best.val_loss, &best_net);
        }
        info!("fold {fold}: resuming after epoch {}", state.epoch);
    } else if resume {
        warn!("fold {fold}: nothing to resume, starting from scratch");
    }

    let flags = set.abnormal_flags();
    let mut balance = None;
    let k = cfg.num_classes;
    while state.epoch < cfg.optim.epochs {
        let epoch = state.epoch;
        let mut batch_rng = run_rng(cfg.seed, fold, epoch, LANE_BATCHES);
        let mut dropout_rng = run_rng(cfg.seed, fold, epoch, LANE_DROPOUT);
        let (batches, report) = balance_and_batch(&flags, cfg.optim.batch_size, &mut batch_rng)?;
        if balance.is_none() {
            info!(
                "fold {fold}: {} abnormal / {} normal training patches (ratio {:.3})",
                report.abnormal,
                report.normal,
                report.ratio()
            );
            balance = Some(report);
        }
        let iter = batches
            .iter()
            .map(|idx| set.batch(idx, &mean, cfg.crop_size, k, &mut batch_rng));
        let train_loss = train_epoch(&mut net, iter, &mut state, &cfg.optim, &mut dropout_rng)?;
        let (val_loss, val_accuracy) =
            patch_loss_accuracy(&net, &val_cells, &val_plan, &mean, cfg.seed)?;
        let done = state.epoch;
        curve.push(CurvePoint {
            epoch: done,
            train_loss,
            val_loss,
            val_accuracy,
        });
        info!("fold {fold} epoch {done}: train loss {train_loss:.4}, val loss {val_loss:.4}, val acc {val_accuracy:.4}");
        if state.observe_validation(done, val_loss, &net) {
            Checkpoint::from_network(&net, meta(cfg, done))
                .with_mean(&mean)
                .save(&ws.best_checkpoint(fold))?;
        }
        Checkpoint::from_network(&net, meta(cfg, done))
            .with_velocities(&net, &state.velocities)?
            .with_mean(&mean)
            .save(&ws.last_checkpoint(fold))?;
        write_file(&ws.curve_file(fold), curve_to_csv(&curve))?;
    }
    let best = state.best.as_ref().ok_or_else(|| {
        Error::invalid(format!(
            "fold {fold}: no epochs were trained (epochs = {})",
            cfg.optim.epochs
        ))
    })?;
    ws.record_outputs(&[
        ws.best_checkpoint(fold),
        ws.last_checkpoint(fold),
        ws.curve_file(fold),
    ])?;
    let balance = match balance {
        Some(b) => b,
        None => {
            balance_and_batch(
                &flags,
                cfg.optim.batch_size,
                &mut run_rng(cfg.seed, fold, 0, LANE_BATCHES),
            )?
            .1
        }
    };
    Ok(TrainOutcome {
        best_epoch: best.epoch,
        best_validation_loss: best.validation_loss,
        curve,
        balance,
    })
}

/// Load the selected model of a fold together with its mean image.
pub fn load_fold_model(
    cfg: &PipelineConfig,
    ws: &Workspace,
    fold: usize,
) -> Result<(Network<f32>, MeanImage)> {
    let path = ws.best_checkpoint(fold);
    if !path.exists() {
        return Err(Error::invalid(format!(
            "no trained checkpoint for fold {fold} (expected {})",
            path.display()
        )));
    }
    load_model(cfg, &path)
}

pub fn load_model(cfg: &PipelineConfig, path: &Path) -> Result<(Network<f32>, MeanImage)> {
    let ck = Checkpoint::load(path)?;
    let mut net = Network::new(cfg.network_spec()?)?;
    ck.apply_to(&mut net)?;
    let mean = ck
        .mean()?
        .ok_or_else(|| Error::Checkpoint(format!("{} holds no mean image", path.display())))?;
    Ok((net, mean))
}

/// Score every fold's test cells with that fold's model and write the reports.
pub fn cmd_evaluate(
    cfg: &PipelineConfig,
    ws: &Workspace,
    perturb: u32,
) -> Result<EvaluationReport> {
    let data = Dataset::load(cfg)?;
    let folds = load_fold_plan(ws, data.records.len())?;
    let plan = cfg.test_plan();
    let mut fold_scores = Vec::with_capacity(folds.k);
    for fold in 0..folds.k {
        let (net, mean) = load_fold_model(cfg, ws, fold)?;
        let cells = data.cells(&folds.test_indices(fold));
        fold_scores.push((
            fold,
            score_cells(&net, &cells, &plan, &mean, cfg.seed, perturb)?,
        ));
        info!("fold {fold}: scored {} cells", cells.len());
    }
    let report = EvaluationReport::build(fold_scores, perturb, cfg.num_classes == 7)?;
    let dir = ws.eval_dir();
    mkdir(&dir)?;
    let stem = if perturb == 0 {
        "metrics".to_string()
    } else {
        format!("metrics_perturb{perturb}")
    };
    let written = report.write(&dir, &stem)?;
    ws.record_outputs(&written)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub abnormal: bool,
    pub n_predictions: usize,
    /// One-based predicted class of a seven-class model.
    pub predicted_class: Option<usize>,
}

impl Prediction {
    pub fn label(&self) -> &'static str {
        if self.abnormal {
            "abnormal"
        } else {
            "normal"
        }
    }
}

/// Score a single image around `(x, y)`; `single_view` uses one centred, unrotated crop.
pub fn cmd_predict(
    cfg: &PipelineConfig,
    checkpoint: &Path,
    image: &Path,
    center: (f64, f64),
    single_view: bool,
) -> Result<Prediction> {
    let (net, mean) = load_model(cfg, checkpoint)?;
    let img = load_rgb(image)?;
    let record = CellRecord {
        id: 0,
        image_path: image.to_path_buf(),
        nucleus: center,
        class_label: 1,
        fold: None,
        dataset: cfg.dataset,
    };
    let plan = if single_view {
        let v = cfg.test.views;
        TestPlan {
            views: AugmentPlan::new(1, 0.0, 1, 0).with_sizes(v.patch_size, v.resize_to),
            crops: crate::data::CropMode::Center,
            crop_size: cfg.crop_size,
        }
    } else {
        cfg.test_plan()
    };
    let (score, _) = aggregate_cell_score(
        &net,
        &record,
        &img,
        record.center_px(),
        &plan,
        &mean,
        cfg.seed,
    )?;
    Ok(Prediction {
        score: score.score,
        abnormal: classify(score.score, THRESHOLD),
        n_predictions: score.n_predictions,
        predicted_class: (cfg.num_classes == 7).then_some(score.predicted_class + 1),
    })
}

/// Probability of the abnormal class from a single forward pass on a prepared crop.
pub fn single_crop_score(net: &Network<f32>, crop: &Image) -> Result<f64> {
    let probs = net.predict_proba(&stack_chw(std::slice::from_ref(crop))?)?;
    abnormal_probability(probs.data())
}

/// Generate the synthetic dataset into `dir`; returns the manifest path.
pub fn cmd_synth(cfg: &PipelineConfig, dir: &Path, cells: usize, seed: u64) -> Result<PathBuf> {
    let sc = SynthConfig {
        cells,
        seed,
        image_size: cfg.synth.image_size,
        classes: cfg.synth.classes,
    };
    let manifest = synth::generate(dir, &sc)?;
    info!("wrote {cells} synthetic cells to {}", dir.display());
    Ok(manifest)
}
