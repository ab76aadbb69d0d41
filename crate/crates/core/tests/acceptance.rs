//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any fail.

mod common;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng as _, RngCore};
use tempfile::TempDir;

use cytonet::checkpoint::{Checkpoint, Metadata};
use cytonet::data::image::{bilinear_resize, crop_views, extract_patch};
use cytonet::data::synth::SynthClasses;
use cytonet::data::{
    augment_cell, cell_rng, plan_views, render_view, AugmentPlan, CellRecord, CropMode, DatasetTag,
    MeanImage, PatchSet, Purpose,
};
use cytonet::eval::{
    aggregate_cell_score, binary_metrics, make_folds, roc_auc, seven_class_overall_error,
    Confusion, FoldPlan, ProbabilityModel, TestPlan,
};
use cytonet::nn::conv::{conv_forward, conv_forward_direct};
use cytonet::nn::{Init, Mode, Network, NetworkSpec};
use cytonet::optim::{sgd_step, OptimConfig, OptimState};
use cytonet::pipeline::commands::single_crop_score;
use cytonet::pipeline::{
    cmd_evaluate, cmd_prepare, cmd_train, load_fold_model, Dataset, PipelineConfig, Workspace,
};
use cytonet::transfer::{make_pretrained_stub, transfer_init, TransferOptions};
use cytonet::{stream_rng, Tensor};

type Outcome = Result<String, String>;
type Check = fn(&mut dyn RngCore) -> f64;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let checks: [(&str, Check); 7] = [
        ("conv", common::check_conv),
        ("maxpool", common::check_maxpool),
        ("relu", common::check_relu),
        ("lrn", common::check_lrn),
        ("fc", common::check_fc),
        ("dropout", common::check_dropout),
        ("softmax-ce", common::check_softmax_ce),
    ];
    let mut worst = 0.0f64;
    for (name, check) in checks {
        for case in 0..20 {
            let err = check(&mut stream_rng(0xACCE, case));
            ensure(
                err < 1e-4,
                format!("{name} case {case}: relative error {err:e}"),
            )?;
            worst = worst.max(err);
        }
    }
    for case in 0..3 {
        let err = common::check_network(&mut stream_rng(0xACCF, case));
        ensure(
            err < 1e-4,
            format!("network case {case}: relative error {err:e}"),
        )?;
        worst = worst.max(err);
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!(
        "max relative error {worst:.2e} over 143 cases in {:.2}s",
        took.as_secs_f64()
    ))
}

fn conv_oracle() -> Outcome {
    let mut rng = stream_rng(0xC0, 0);
    let mut worst = 0.0f32;
    for case in 0..50 {
        let k = rng.random_range(1..=5);
        let stride = rng.random_range(1..=4);
        let pad = rng.random_range(0..=2);
        let hw = k + rng.random_range(0..=9);
        let dims = [
            rng.random_range(1..=3),
            rng.random_range(1..=4),
            hw,
            hw + rng.random_range(0..=3),
        ];
        let cout = rng.random_range(1..=6);
        let mut uniform =
            |d: &[usize]| Tensor::<f32>::from_fn(d, |_| rng.random::<f32>() * 2.0 - 1.0).unwrap();
        let x = uniform(&dims);
        let w = uniform(&[cout, dims[1], k, k]);
        let b = uniform(&[cout]);
        let fast = conv_forward(&x, &w, &b, stride, pad).map_err(|e| e.to_string())?;
        let slow = conv_forward_direct(&x, &w, &b, stride, pad).map_err(|e| e.to_string())?;
        ensure(
            fast.dims() == slow.dims(),
            format!("case {case}: shapes differ"),
        )?;
        let diff = fast.max_abs_diff(&slow).unwrap();
        ensure(
            diff <= 1e-5,
            format!("case {case}: max difference {diff:e}"),
        )?;
        worst = worst.max(diff);
    }
    Ok(format!("50 cases, max elementwise difference {worst:.2e}"))
}

fn architecture_trace() -> Outcome {
    let expected: Vec<(&str, Vec<usize>)> = vec![
        ("conv1", vec![96, 55, 55]),
        ("relu1", vec![96, 55, 55]),
        ("pool1", vec![96, 27, 27]),
        ("norm1", vec![96, 27, 27]),
        ("conv2", vec![256, 27, 27]),
        ("relu2", vec![256, 27, 27]),
        ("pool2", vec![256, 13, 13]),
        ("norm2", vec![256, 13, 13]),
        ("conv3", vec![384, 13, 13]),
        ("relu3", vec![384, 13, 13]),
        ("conv4", vec![384, 13, 13]),
        ("relu4", vec![384, 13, 13]),
        ("conv5", vec![256, 13, 13]),
        ("relu5", vec![256, 13, 13]),
        ("pool5", vec![256, 6, 6]),
        ("fc6", vec![1024]),
        ("relu6", vec![1024]),
        ("drop6", vec![1024]),
        ("fc7", vec![256]),
        ("relu7", vec![256]),
        ("drop7", vec![256]),
        ("fc8", vec![2]),
        ("prob", vec![2]),
    ];
    let spec = NetworkSpec::convnet_t(2);
    ensure(spec.input_shape == [3, 227, 227], "input is not 227x227x3")?;
    let trace = spec.shape_trace().map_err(|e| e.to_string())?;
    ensure(
        trace.len() == expected.len(),
        format!("{} layers, expected {}", trace.len(), expected.len()),
    )?;
    for ((name, shape), (want_name, want_shape)) in trace.iter().zip(&expected) {
        ensure(
            name == want_name && shape == want_shape,
            format!("{name} {shape:?}, expected {want_name} {want_shape:?}"),
        )?;
    }
    Ok(format!("{} layers match", trace.len()))
}

fn test_image(size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = stream_rng(seed, 0);
    Tensor::from_fn(&[size, size, 3], |_| rng.random_range(0..=255) as f32).unwrap()
}

fn record(id: usize, nucleus: (f64, f64), class_label: u8) -> CellRecord {
    CellRecord {
        id,
        image_path: "unused.png".into(),
        nucleus,
        class_label,
        fold: None,
        dataset: DatasetTag::Herlev,
    }
}

fn augmentation() -> Outcome {
    let cfg = PipelineConfig::preset("herlev").map_err(|e| e.to_string())?;
    let img = test_image(80, 1);
    let mut counts = Vec::new();
    for (label, want) in [(5u8, 100usize), (1, 280)] {
        let rec = record(0, (40.0, 38.0), label);
        let plan = cfg.train.for_record(&rec);
        ensure(
            plan.patches_per_cell() == want,
            format!("class {label}: plan gives {}", plan.patches_per_cell()),
        )?;
        let views = plan_views(&plan, &mut cell_rng(1, 0, Purpose::TrainViews))
            .map_err(|e| e.to_string())?;
        ensure(
            views.len() == want,
            format!("class {label}: {} views", views.len()),
        )?;
        // Rendering at full size is memory-heavy; the count does not depend on the sizes.
        let small = plan.with_sizes(8, 8);
        let patches = augment_cell(&rec, &img, &small, &mut cell_rng(1, 0, Purpose::TrainViews))
            .map_err(|e| e.to_string())?;
        ensure(
            patches.len() == want,
            format!("class {label}: {} patches rendered", patches.len()),
        )?;
        counts.push(patches.len());
    }

    let rec = record(0, (33.0, 47.0), 1);
    let degenerate = AugmentPlan::new(1, 0.0, 1, 0);
    let out = augment_cell(
        &rec,
        &img,
        &degenerate,
        &mut cell_rng(2, 0, Purpose::TrainViews),
    )
    .map_err(|e| e.to_string())?;
    ensure(out.len() == 1, "degenerate plan must give one patch")?;
    let plain = bilinear_resize(
        &extract_patch(&img, rec.center_px(), 128).unwrap(),
        256,
        256,
    )
    .unwrap();
    ensure(
        out[0].pixels.data() == plain.data(),
        "degenerate patch differs from the plain crop",
    )?;
    let unscaled = degenerate.with_sizes(64, 64);
    let out = augment_cell(
        &rec,
        &img,
        &unscaled,
        &mut cell_rng(2, 0, Purpose::TrainViews),
    )
    .map_err(|e| e.to_string())?;
    let plain = extract_patch(&img, rec.center_px(), 64).unwrap();
    ensure(
        out[0].pixels.data() == plain.data(),
        "unscaled degenerate patch differs from the plain crop",
    )?;
    Ok(format!(
        "abnormal {} / normal {} patches per cell; degenerate plan bit-exact",
        counts[0], counts[1]
    ))
}

struct Constant(Vec<f32>);

impl ProbabilityModel for Constant {
    fn num_classes(&self) -> usize {
        self.0.len()
    }

    fn probabilities(&self, x: &Tensor<f32>) -> cytonet::Result<Tensor<f32>> {
        let n = x.dims()[0];
        Tensor::from_vec(&[n, self.0.len()], self.0.repeat(n))
    }
}

fn aggregation() -> Outcome {
    let img = test_image(72, 3);
    let rec = record(4, (36.0, 35.0), 6);
    let plan = TestPlan {
        views: AugmentPlan::new(4, 90.0, 3, 4).with_sizes(40, 36),
        crops: CropMode::TenCrop,
        crop_size: 32,
    };
    let mean = MeanImage::zeros(36).unwrap();
    for (row, want) in [
        (vec![0.625f32, 0.375], 0.375),
        (vec![0.1, 0.1, 0.05, 0.25, 0.25, 0.125, 0.125], 0.75),
    ] {
        let (score, logged) =
            aggregate_cell_score(&Constant(row), &rec, &img, rec.center_px(), &plan, &mean, 9)
                .map_err(|e| e.to_string())?;
        ensure(
            (score.score - want).abs() <= 1e-9,
            format!("constant {want}: aggregate {}", score.score),
        )?;
        ensure(
            logged.len() == plan.predictions_per_cell(),
            "wrong number of logged predictions",
        )?;
    }

    // Independent route: render each crop separately and score it with its own forward pass.
    let net: Network<f32> =
        Network::initialized(NetworkSpec::tiny(32, 2), Init::Msra, &mut stream_rng(5, 5))
            .map_err(|e| e.to_string())?;
    let mean = MeanImage(Tensor::full(&[36, 36, 3], 120.0).unwrap());
    let (score, logged) = aggregate_cell_score(&net, &rec, &img, rec.center_px(), &plan, &mean, 9)
        .map_err(|e| e.to_string())?;
    let mut rng = cell_rng(9, rec.id, Purpose::TestViews);
    let mut singles = Vec::new();
    for view in plan_views(&plan.views, &mut rng).unwrap() {
        let patch = mean
            .subtract(&render_view(&img, rec.center_px(), &plan.views, &view).unwrap())
            .unwrap();
        for c in crop_views(&patch, plan.crop_size, plan.crops, &mut rng).unwrap() {
            singles.push(single_crop_score(&net, &c).unwrap());
        }
    }
    ensure(singles.len() == logged.len(), "prediction counts differ")?;
    let per_crop = singles
        .iter()
        .zip(&logged)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(
        per_crop <= 1e-6,
        format!("logged probabilities differ by {per_crop:e}"),
    )?;
    let remean = logged.iter().sum::<f64>() / logged.len() as f64;
    let independent = singles.iter().sum::<f64>() / singles.len() as f64;
    let gap = (score.score - remean)
        .abs()
        .max((score.score - independent).abs());
    ensure(
        gap <= 1e-6,
        format!(
            "aggregate {} vs re-mean {remean} / {independent}",
            score.score
        ),
    )?;
    let spread = logged.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - logged.iter().cloned().fold(f64::INFINITY, f64::min);
    ensure(
        spread > 0.0,
        "network outputs are constant; the re-mean check would be vacuous",
    )?;
    Ok(format!(
        "constant within 1e-9; re-mean gap {gap:.1e} over {} crops",
        logged.len()
    ))
}

/// Probability that a random abnormal score beats a random normal one, ties counting half.
fn mann_whitney(scores: &[f64], abnormal: &[bool]) -> f64 {
    let pos: Vec<f64> = scores
        .iter()
        .zip(abnormal)
        .filter(|(_, &a)| a)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(abnormal)
        .filter(|(_, &a)| !a)
        .map(|(&s, _)| s)
        .collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Threshold metrics from raw counts, written out longhand.
fn count_script(scores: &[f64], abnormal: &[bool]) -> [f64; 5] {
    let (mut tp, mut fn_, mut tn, mut fp) = (0u32, 0u32, 0u32, 0u32);
    for (&s, &a) in scores.iter().zip(abnormal) {
        let flagged = s >= 0.5;
        if a && flagged {
            tp += 1;
        } else if a {
            fn_ += 1;
        } else if flagged {
            fp += 1;
        } else {
            tn += 1;
        }
    }
    let sens = f64::from(tp) / f64::from(tp + fn_);
    let spec = f64::from(tn) / f64::from(tn + fp);
    let acc = f64::from(tp + tn) / f64::from(tp + tn + fp + fn_);
    let prec = if tp + fp == 0 {
        0.0
    } else {
        f64::from(tp) / f64::from(tp + fp)
    };
    let h = if sens + spec == 0.0 {
        0.0
    } else {
        2.0 * sens * spec / (sens + spec)
    };
    let f = if prec + sens == 0.0 {
        0.0
    } else {
        2.0 * prec * sens / (prec + sens)
    };
    [
        100.0 * sens,
        100.0 * spec,
        100.0 * acc,
        100.0 * h,
        100.0 * f,
    ]
}

fn metrics_oracle() -> Outcome {
    let mut rng = stream_rng(0xA0C, 0);
    let mut worst = 0.0f64;
    for set in 0..100 {
        let n = rng.random_range(4..=80);
        // Coarse levels on half the sets so ties are common.
        let levels = if set % 2 == 0 { 7 } else { 1 << 20 };
        let mut abnormal: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        abnormal[0] = true;
        abnormal[1] = false;
        let scores: Vec<f64> = abnormal
            .iter()
            .map(|&a| {
                let bump = if a { 0.15 } else { 0.0 };
                (((rng.random::<f64>() * 0.85 + bump) * levels as f64).floor()) / levels as f64
            })
            .collect();
        let (_, auc) = roc_auc(&scores, &abnormal).map_err(|e| e.to_string())?;
        let brute = mann_whitney(&scores, &abnormal);
        ensure(
            (auc - brute).abs() <= 1e-12,
            format!("set {set}: auc {auc} vs {brute}"),
        )?;
        worst = worst.max((auc - brute).abs());

        let (_, m) = binary_metrics(&scores, &abnormal, 0.5).map_err(|e| e.to_string())?;
        let got = [m.sens, m.spec, m.acc, m.h_mean, m.f_measure];
        ensure(
            got == count_script(&scores, &abnormal),
            format!("set {set}: {got:?} vs count script"),
        )?;
    }
    for (tp, fn_, tn, fp) in [
        (3usize, 1usize, 6usize, 2usize),
        (9, 1, 9, 1),
        (1, 1, 1, 1),
        (7, 0, 5, 0),
    ] {
        let m = Confusion { tp, fn_, tn, fp }
            .metrics()
            .map_err(|e| e.to_string())?;
        if m.sens == m.spec {
            ensure(
                m.h_mean == m.sens,
                format!("Sens = Spec = {} but H-mean {}", m.sens, m.h_mean),
            )?;
        }
    }
    Ok(format!(
        "100 sets, max AUC gap {worst:.1e}; counts exact; Sens = Spec gives H-mean = s"
    ))
}

fn fold_hygiene() -> Outcome {
    let sizes = [74usize, 70, 98, 182, 146, 197, 150];
    let mut records = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            records.push(record(records.len(), (20.0, 20.0), c as u8 + 1));
        }
    }
    ensure(records.len() == 917, "manifest size")?;
    let plan = make_folds(&records, 5, 11).map_err(|e| e.to_string())?;
    let mut sizes = plan.fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    ensure(
        sizes == vec![184, 184, 183, 183, 183],
        format!("fold sizes {sizes:?}"),
    )?;

    let mut seen = HashSet::new();
    for f in 0..5 {
        for i in plan.test_indices(f) {
            ensure(seen.insert(i), format!("record {i} in two folds"))?;
        }
    }
    ensure(seen.len() == 917, "folds do not cover every record")?;
    for (class, counts) in plan.class_counts(&records) {
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        ensure(spread <= 1, format!("class {class} spread {counts:?}"))?;
    }

    let cfg = PipelineConfig::preset("herlev").map_err(|e| e.to_string())?;
    let img = Tensor::zeros(&[4, 4, 3]).unwrap();
    let mut crossings = 0usize;
    for f in 0..5 {
        let train = plan.train_indices(f);
        let cells: Vec<(&CellRecord, &Tensor<f32>)> =
            train.iter().map(|&i| (&records[i], &img)).collect();
        let set = PatchSet::new(cells, |r| cfg.train.for_record(r), 1, Purpose::TrainViews)
            .map_err(|e| e.to_string())?;
        let held: HashSet<usize> = plan
            .test_indices(f)
            .into_iter()
            .map(|i| records[i].id)
            .collect();
        crossings += (0..set.len())
            .filter(|&i| held.contains(&set.provenance(i).cell_id))
            .count();
    }
    ensure(
        crossings == 0,
        format!("{crossings} training patches come from held-out cells"),
    )?;
    Ok(format!(
        "sizes {sizes:?}, disjoint, per-class spread <= 1, no patch crosses folds"
    ))
}

struct DeskRun {
    ws: Workspace,
    acc: f64,
    auc: f64,
    perturbed_acc: f64,
    elapsed: Duration,
}

fn desk_run(root: &Path, data: &Path) -> Result<DeskRun, String> {
    let cfg = common::synth_config(data, 200, 1, SynthClasses::Binary);
    let ws = Workspace::new(root);
    let start = Instant::now();
    cmd_prepare(&cfg, &ws).map_err(|e| e.to_string())?;
    for fold in 0..cfg.folds {
        cmd_train(&cfg, &ws, fold, false).map_err(|e| e.to_string())?;
    }
    let report = cmd_evaluate(&cfg, &ws, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let perturbed = cmd_evaluate(&cfg, &ws, 5).map_err(|e| e.to_string())?;
    Ok(DeskRun {
        ws,
        acc: report.summary.acc.mean,
        auc: report.summary.auc.mean,
        perturbed_acc: perturbed.summary.acc.mean,
        elapsed,
    })
}

fn desk_end_to_end(run: &DeskRun) -> Outcome {
    let drop = run.acc - run.perturbed_acc;
    let detail = format!(
        "acc {:.2}%, auc {:.4}, {:.1}s, acc under 5 px perturbation {:.2}% (drop {drop:.2})",
        run.acc,
        run.auc,
        run.elapsed.as_secs_f64(),
        run.perturbed_acc
    );
    ensure(run.acc >= 95.0, format!("accuracy below 95: {detail}"))?;
    ensure(run.auc >= 0.98, format!("AUC below 0.98: {detail}"))?;
    ensure(
        run.elapsed < Duration::from_secs(600),
        format!("slower than 10 minutes: {detail}"),
    )?;
    ensure(
        drop < 3.0,
        format!("perturbation drop not below 3 points: {detail}"),
    )?;
    Ok(detail)
}

fn files_under(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism(a: &DeskRun, b: &DeskRun) -> Outcome {
    let fa = files_under(a.ws.root());
    let fb = files_under(b.ws.root());
    let names_a: Vec<&String> = fa.keys().collect();
    let names_b: Vec<&String> = fb.keys().collect();
    ensure(names_a == names_b, "the two runs wrote different file sets")?;
    let compared: Vec<&String> = fa
        .keys()
        .filter(|n| n.ends_with(".ckpt") || n.starts_with("eval") || n.ends_with(".csv"))
        .collect();
    ensure(
        compared.iter().any(|n| n.ends_with("best.ckpt")),
        "no checkpoints were written",
    )?;
    ensure(
        compared.iter().any(|n| n.contains("metrics")),
        "no metric files were written",
    )?;
    for name in &compared {
        ensure(
            fa[*name] == fb[*name],
            format!("{name} differs between runs"),
        )?;
    }
    Ok(format!(
        "{} metric, curve and checkpoint files byte-identical",
        compared.len()
    ))
}

fn checkpoint_and_transfer() -> Outcome {
    let spec = NetworkSpec::tiny(16, 2);
    let net: Network<f32> =
        Network::initialized(spec.clone(), Init::Msra, &mut stream_rng(7, 0)).unwrap();
    let mut state = OptimState::new(&net);
    for v in state.velocities.iter_mut().flatten() {
        v.weights
            .data_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = i as f32 * 1e-3);
    }
    let meta = Metadata {
        num_classes: 2,
        epoch: 4,
        seed: u64::MAX - 3,
    };
    let mean = MeanImage(test_image(20, 8));
    let ck = Checkpoint::from_network(&net, meta)
        .with_velocities(&net, &state.velocities)
        .map_err(|e| e.to_string())?
        .with_mean(&mean);
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).map_err(|e| e.to_string())?;
    let first = fs::read(&path).unwrap();
    let again = dir.path().join("b.ckpt");
    Checkpoint::load(&path)
        .map_err(|e| e.to_string())?
        .save(&again)
        .map_err(|e| e.to_string())?;
    ensure(
        first == fs::read(&again).unwrap(),
        "save -> load -> save changed the bytes",
    )?;

    let source = make_pretrained_stub(&spec, 21).map_err(|e| e.to_string())?;
    let mut target: Network<f32> = Network::new(spec.clone()).unwrap();
    let opts = TransferOptions::conv_stack(&spec, 0.0);
    transfer_init(&mut target, &source, &opts, &mut stream_rng(3, 3)).map_err(|e| e.to_string())?;
    for name in &opts.layers {
        let want = source
            .params(name)
            .map_err(|e| e.to_string())?
            .ok_or("missing source layer")?;
        let got = target.layer(name).and_then(|l| l.params.as_ref()).unwrap();
        ensure(
            got.weights.data() == want.weights.data() && got.biases.data() == want.biases.data(),
            format!("{name} not copied bit-exactly"),
        )?;
    }
    let before = target.clone();
    let x = Tensor::from_fn(&[4, 3, 16, 16], |i| ((i * 37) % 255) as f32 - 127.0).unwrap();
    let (_, grads) = target
        .loss_and_gradients(&x, &[0, 1, 1, 0], Mode::Train, &mut stream_rng(1, 1))
        .unwrap();
    let cfg = OptimConfig {
        base_lr_new: 0.01,
        base_lr_transferred: 0.0,
        ..OptimConfig::default()
    };
    let mut st = OptimState::new(&target);
    sgd_step(&mut target, &grads, &mut st, &cfg, 0).map_err(|e| e.to_string())?;
    for (a, b) in before.layers().iter().zip(target.layers()) {
        let (Some(pa), Some(pb)) = (&a.params, &b.params) else {
            continue;
        };
        let frozen = opts.layers.contains(&a.spec.name);
        let same = pa.weights.data() == pb.weights.data() && pa.biases.data() == pb.biases.data();
        ensure(
            same == frozen,
            format!("{}: frozen {frozen}, unchanged {same}", a.spec.name),
        )?;
    }
    Ok(format!(
        "{} bytes round-trip; {} transferred layers exact and frozen",
        first.len(),
        opts.layers.len()
    ))
}

fn seven_class() -> Outcome {
    let hand = seven_class_overall_error(&[0, 2, 4, 6, 6, 3, 1, 5], &[0, 2, 4, 6, 5, 3, 0, 5])
        .map_err(|e| e.to_string())?;
    ensure(
        hand == 25.0,
        format!("2 of 8 wrong should be 25%, got {hand}"),
    )?;

    let dir = TempDir::new().unwrap();
    let mut cfg = common::synth_config(&dir.path().join("data"), 80, 2, SynthClasses::FourClass);
    cfg.folds = 2;
    cfg.optim.epochs = 6;
    cfg.optim.base_lr_new = 0.01;
    let ws = Workspace::new(&dir.path().join("out"));
    cmd_prepare(&cfg, &ws).map_err(|e| e.to_string())?;
    for fold in 0..cfg.folds {
        cmd_train(&cfg, &ws, fold, false).map_err(|e| e.to_string())?;
    }
    let report = cmd_evaluate(&cfg, &ws, 0).map_err(|e| e.to_string())?;

    // Hand count: rerun every test crop through the fold's model, sum class probabilities, compare argmax to the label.
    let data = Dataset::load(&cfg).map_err(|e| e.to_string())?;
    let folds = FoldPlan::load(&ws.folds_file(), data.records.len()).map_err(|e| e.to_string())?;
    let plan = cfg.test_plan();
    let mut per_fold = Vec::new();
    let mut total_wrong = 0usize;
    for fold in 0..folds.k {
        let (net, mean) = load_fold_model(&cfg, &ws, fold).map_err(|e| e.to_string())?;
        let test = folds.test_indices(fold);
        let mut wrong = 0usize;
        for &i in &test {
            let (rec, img) = (&data.records[i], &data.images[i]);
            let mut rng = cell_rng(cfg.seed, rec.id, Purpose::TestViews);
            let mut sums = [0.0f64; 7];
            for view in plan_views(&plan.views, &mut rng).unwrap() {
                let patch = mean
                    .subtract(&render_view(img, rec.center_px(), &plan.views, &view).unwrap())
                    .unwrap();
                for c in crop_views(&patch, plan.crop_size, plan.crops, &mut rng).unwrap() {
                    let probs = net
                        .predict_proba(&cytonet::data::stack_chw(&[c]).unwrap())
                        .unwrap();
                    for (s, &p) in sums.iter_mut().zip(probs.data()) {
                        *s += f64::from(p);
                    }
                }
            }
            let best = (0..7).fold(0, |b, k| if sums[k] > sums[b] { k } else { b });
            wrong += usize::from(best + 1 != usize::from(rec.class_label));
        }
        total_wrong += wrong;
        per_fold.push(100.0 * wrong as f64 / test.len() as f64);
    }
    let reported: Vec<f64> = report
        .folds
        .iter()
        .map(|f| f.overall_error.unwrap_or(f64::NAN))
        .collect();
    ensure(
        reported == per_fold,
        format!("per-fold OE {reported:?} vs hand count {per_fold:?}"),
    )?;
    let mean_oe = report
        .summary
        .overall_error
        .ok_or("no overall error reported")?
        .mean;
    ensure(
        mean_oe == per_fold.iter().sum::<f64>() / per_fold.len() as f64,
        format!("mean OE {mean_oe} vs hand count"),
    )?;
    Ok(format!(
        "OE {mean_oe:.2}% ({total_wrong} misclassified of {}) matches the hand count",
        data.records.len()
    ))
}

/// Optional name filters from the command line; flags are ignored.
fn selected(name: &str) -> bool {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    if !selected(name) {
        return true;
    }
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS  {name}: {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("FAIL  {name}: {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= run("gradient correctness", gradients);
    ok &= run("convolution oracle", conv_oracle);
    ok &= run("architecture trace", architecture_trace);
    ok &= run("augmentation exactness", augmentation);
    ok &= run("aggregation", aggregation);
    ok &= run("metrics oracle", metrics_oracle);
    ok &= run("fold hygiene", fold_hygiene);

    if selected("end-to-end desk scale") || selected("determinism") {
        let scratch = TempDir::new().expect("temp dir");
        let first = desk_run(
            &scratch.path().join("run_a"),
            &scratch.path().join("data_a"),
        );
        ok &= run("end-to-end desk scale", || {
            desk_end_to_end(first.as_ref().map_err(Clone::clone)?)
        });
        if selected("determinism") {
            let second = desk_run(
                &scratch.path().join("run_b"),
                &scratch.path().join("data_b"),
            );
            ok &= run("determinism", || {
                determinism(
                    first.as_ref().map_err(Clone::clone)?,
                    second.as_ref().map_err(Clone::clone)?,
                )
            });
        }
    }

    ok &= run("checkpoint roundtrip and transfer", checkpoint_and_transfer);
    ok &= run("seven-class overall error", seven_class);
    if !ok {
        std::process::exit(1);
    }
}
