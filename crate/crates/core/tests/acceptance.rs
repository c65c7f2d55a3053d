//! Acceptance run: one PASS/FAIL line per criterion with the measured value
//! and its pinned tolerance. Criteria 4 to 8 share one pretrained model.
//!
//! The process exits 0 after printing every line so the rest of the
//! workspace suite still runs; set `RELMAP_ACCEPTANCE_STRICT=1` to turn any
//! FAIL into a nonzero exit.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relmap::cli::{dispatch, CONFIG_FILE, REPORT_FILE};
use relmap::evaluator::{
    ablation_suite, robustness_report, segmentation_eval, AblationSetting, RobustnessReport,
    SegReport, SplitSuite, IN_DISTRIBUTION,
};
use relmap::image::Mask;
use relmap::objectives::{
    argmax, loss_bg, loss_confidence, loss_fg, loss_gradmask, loss_relevance, loss_rrr,
    loss_total, LossWeights, PatchMask,
};
use relmap::relevance::{aggregate_relevance, cls_patch_relevance, layer_relevance};
use relmap::sis::{find_sis, replay, SisConfig, SisOutcome};
use relmap::synthdata::{generate_dataset, DatasetConfig, Sample, ShiftKind};
use relmap::tensor::{Tape, Tensor};
use relmap::trainer::{
    finetune_objective, finetune_relevance, lr_grid_search, pretrain, select_finetune_samples,
    FinetuneConfig, LossToggles, Method, PretrainConfig, TargetClassMode,
};
use relmap::vit::{ViTConfig, ViTModel};

const LR_GRID: [f32; 4] = [1e-5, 3e-5, 1e-4, 3e-4];


struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, limit: Duration, started: Instant, outcome: Outcome, failures: &mut u32) {
    let elapsed = started.elapsed();
    let in_time = elapsed <= limit;
    let pass = outcome.pass && in_time;
    if !pass {
        *failures += 1;
    }
    println!(
        "{} criterion {id} ({name}): {} [{:.1}s, limit {}s]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
}

// ---------------------------------------------------------------- criterion 1

fn matmul64(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            for j in 0..n {
                out[i * n + j] += a[i * n + k] * b[k * n + j];
            }
        }
    }
    out
}

fn random_attention(rng: &mut ChaCha8Rng, heads: usize, t: usize) -> Tensor {
    let mut data = Vec::with_capacity(heads * t * t);
    for _ in 0..heads * t {
        let row: Vec<f32> = (0..t).map(|_| rng.random_range(0.05f32..1.0)).collect();
        let sum: f32 = row.iter().sum();
        data.extend(row.iter().map(|v| v / sum));
    }
    Tensor::new(&[heads, t, t], data).unwrap()
}

fn criterion_gae() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let t = rng.random_range(2..=8);
        let depth = rng.random_range(1..=4);
        let heads = rng.random_range(1..=4);
        let tape = Tape::new();
        let mut layers = Vec::new();
        // closed form: (I + A_L) ... (I + A_1), with each A_l recomputed in f64
        let mut product: Vec<f64> = (0..t * t).map(|i| if i % (t + 1) == 0 { 1.0 } else { 0.0 }).collect();
        for _ in 0..depth {
            let a = random_attention(&mut rng, heads, t);
            let g: Vec<f32> = (0..heads * t * t).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            let g = Tensor::new(&[heads, t, t], g).unwrap();
            layers.push(layer_relevance(tape.constant(a.clone()), &g).unwrap());
            let mut step = vec![0.0f64; t * t];
            for (i, (av, gv)) in a.data().iter().zip(g.data()).enumerate() {
                step[i % (t * t)] += (*av as f64 * *gv as f64).max(0.0) / heads as f64;
            }
            for i in 0..t {
                step[i * t + i] += 1.0;
            }
            product = matmul64(&step, &product, t);
        }
        let r = aggregate_relevance(&tape, &layers, t).unwrap();
        for (x, y) in r.value().data().iter().zip(&product) {
            worst = worst.max((*x as f64 - y).abs());
        }
    }

    let tape = Tape::new();
    let a = tape.constant(Tensor::new(&[1, 2, 2], vec![0.7, 0.3, 0.4, 0.6]).unwrap());
    let g = Tensor::new(&[1, 2, 2], vec![1.0, -1.0, 0.5, 2.0]).unwrap();
    let abar = layer_relevance(a, &g).unwrap();
    let r = aggregate_relevance(&tape, &[abar], 2).unwrap();
    let abar_ok = abar.value().data() == [0.7f32, 0.0, 0.2, 1.2];
    let hand_ok = r.value().data() == [1.7f32, 0.0, 0.2, 2.2];
    Outcome {
        pass: worst <= 1e-5 && abar_ok && hand_ok,
        detail: format!(
            "max |iterative - closed form| {worst:.2e} (tol 1e-5) over 50 instances; hand example Abar {} R {}",
            if abar_ok { "exact" } else { "MISMATCH" },
            if hand_ok { "exact" } else { "MISMATCH" }
        ),
    }
}

// ---------------------------------------------------------------- criterion 2

/// The finetuning objective rebuilt from public pieces, with the attention
/// gradients (and so the explained class) held at the unperturbed model.
fn frozen_objective(
    model: &ViTModel,
    sample: &Sample,
    grads: &[Tensor],
    w: &LossWeights,
) -> f64 {
    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(sample.image.clone()), false).unwrap();
    let layers: Vec<_> = f.attention.iter().zip(grads).map(|(&a, g)| layer_relevance(a, g).unwrap()).collect();
    let t = f.attention[0].shape()[1];
    let rel = cls_patch_relevance(aggregate_relevance(&tape, &layers, t).unwrap()).unwrap();
    let pm = PatchMask::from_pixels(sample.mask.as_ref().unwrap(), model.config().patch_size).unwrap();
    let bg = loss_bg(rel, &pm).unwrap().value().item() as f64;
    let fg = loss_fg(rel, &pm).unwrap().value().item() as f64;
    let cls = loss_confidence(f.logits).unwrap().value().item() as f64;
    w.relevance as f64 * (w.bg as f64 * bg + w.fg as f64 * fg) + w.classification as f64 * cls
}

fn attention_grads(model: &ViTModel, sample: &Sample) -> Vec<Tensor> {
    let tape = Tape::new();
    let f = model.forward_on(&tape, tape.constant(sample.image.clone()), false).unwrap();
    let target = argmax(f.logits.value().data());
    let logit = f.logits.slice(0, target, 1).unwrap();
    let g = tape.backward_for(logit, &f.attention).unwrap();
    f.attention.iter().map(|&a| g.wrt(a)).collect()
}

fn criterion_gradients() -> Outcome {
    let data = generate_dataset(&DatasetConfig { per_class: 1, seed: 5, ..Default::default() }).unwrap();
    let cfg = FinetuneConfig::default();
    let h = 1e-2f32;
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut tensors = 0usize;
    for seed in 0..5u64 {
        let model = ViTModel::init(ViTConfig::default(), seed).unwrap();
        let sample = &data[seed as usize];
        let analytic = finetune_objective(&model, sample, &cfg).unwrap().grads.unwrap();
        let grads = attention_grads(&model, sample);
        tensors = analytic.len();
        for (p, g) in analytic.iter().enumerate() {
            // the three largest-magnitude coordinates of every weight tensor
            let mut order: Vec<usize> = (0..g.numel()).collect();
            order.sort_by(|&a, &b| g.data()[b].abs().total_cmp(&g.data()[a].abs()));
            for &j in order.iter().take(3) {
                let mut plus = model.clone();
                plus.params_mut()[p].data_mut()[j] += h;
                let mut minus = model.clone();
                minus.params_mut()[p].data_mut()[j] -= h;
                let fd = (frozen_objective(&plus, sample, &grads, &cfg.weights)
                    - frozen_objective(&minus, sample, &grads, &cfg.weights))
                    / (2.0 * h as f64);
                let a = g.data()[j] as f64;
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    Outcome {
        pass: worst < 1e-2,
        detail: format!(
            "max relative error {worst:.2e} (tol 1e-2) over {checked} coordinates: top-3 of each of {tensors} weight tensors, 5 seeds, central differences h={h}"
        ),
    }
}

// ---------------------------------------------------------------- criterion 3

fn criterion_losses() -> Outcome {
    let tape = Tape::new();
    let r = tape.constant(Tensor::new(&[4], vec![1.0, 0.2, 0.4, 0.0]).unwrap());
    let mask = PatchMask { grid: 2, values: vec![1.0, 0.0, 0.0, 0.0] };
    let w = LossWeights::default();
    let bg = loss_bg(r, &mask).unwrap().value().item();
    let fg = loss_fg(r, &mask).unwrap().value().item();
    let rel = loss_relevance(bg, fg, &w);
    let cls = loss_confidence(tape.constant(Tensor::new(&[2], vec![0.0, 0.0]).unwrap())).unwrap().value().item();
    let total = loss_total(rel, cls, &w);
    // oracles from the closed forms in f64
    let e_bg = (0.2f64 * 0.2 + 0.4 * 0.4) / 4.0;
    let e_fg = 3.0 / 4.0;
    let e_rel = 2.0 * e_bg + 0.3 * e_fg;
    let e_total = 0.8 * e_rel + 0.2 * 2f64.ln();
    let errs = [
        (bg as f64 - e_bg).abs(),
        (fg as f64 - e_fg).abs(),
        (rel as f64 - e_rel).abs(),
        (total as f64 - e_total).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-6,
        detail: format!(
            "L_bg {bg} L_fg {fg} L_rel {rel} L_total {total:.6} (expected {e_total:.6}); max error {worst:.1e} (tol 1e-6)"
        ),
    }
}

// ------------------------------------------------------------ criteria 4 to 7

struct Bench {
    base: ViTModel,
    train: Vec<Sample>,
    validation: Vec<Sample>,
    eval: Vec<Sample>,
    suite: SplitSuite,
    config: FinetuneConfig,
    pretrain_accuracy: f32,
}

fn bench() -> Bench {
    let train_cfg = DatasetConfig::default();
    let test_cfg = DatasetConfig { per_class: 50, seed: 1, ..Default::default() };
    let train = generate_dataset(&train_cfg).unwrap();
    let mut test = generate_dataset(&test_cfg).unwrap();
    let eval = test.split_off(test.len() / 10);
    let validation = test;
    let (base, _) = pretrain(&ViTConfig::default(), &train, &PretrainConfig::default(), Some(&validation)).unwrap();
    let suite = SplitSuite::build(&eval, &test_cfg, 7).unwrap();
    let pretrain_accuracy = relmap::evaluator::topk_accuracy(&base, &eval, 1).unwrap();
    Bench { base, train, validation, eval, suite, config: FinetuneConfig::default(), pretrain_accuracy }
}

fn split_delta(r: &RobustnessReport, name: &str) -> f32 {
    r.split(name).unwrap().delta_top1
}

fn criterion_end_to_end(b: &mut Bench) -> (Outcome, Option<ViTModel>) {
    let subset = b.config.class_subset(8);
    let samples = select_finetune_samples(&b.train, &subset, 3).unwrap();
    let search = lr_grid_search(&b.base, &LR_GRID, &b.config, &samples, &b.validation).unwrap();
    b.config.learning_rate = search.chosen;
    let (model, _) = finetune_relevance(&b.base, &samples, &b.config, None).unwrap();
    let r = robustness_report(&model, &b.base, &b.suite, &subset).unwrap();
    let bg = r.split(ShiftKind::BackgroundSwap.name()).unwrap();
    let id = split_delta(&r, IN_DISTRIBUTION);
    let held = bg.heldout_classes_delta.unwrap_or(f32::NAN);
    let pass = bg.delta_top1 >= 0.10 && id >= -0.03 && held > 0.0;
    let detail = format!(
        "pretrained in-dist top-1 {:.3}, background_swap {:.3}; lr {} (grid {:?}{}); background_swap delta {:+.3} (need >= +0.100), in-dist delta {:+.3} (need >= -0.030), held-out background_swap delta {:+.3} (need > 0), train-class delta {:+.3}",
        b.pretrain_accuracy,
        bg.reference_top1,
        search.chosen,
        LR_GRID,
        if search.fallback { ", fallback" } else { "" },
        bg.delta_top1,
        id,
        held,
        bg.train_classes_delta.unwrap_or(f32::NAN),
    );
    (Outcome { pass, detail }, Some(model))
}

fn criterion_segmentation(b: &Bench, finetuned: &ViTModel) -> Outcome {
    let before: SegReport = segmentation_eval(&b.base, &b.eval, TargetClassMode::GroundTruth).unwrap();
    let after = segmentation_eval(finetuned, &b.eval, TargetClassMode::GroundTruth).unwrap();
    let pass = after.pixel_accuracy > before.pixel_accuracy && after.miou > before.miou && after.map > before.map;
    Outcome {
        pass,
        detail: format!(
            "pixel acc {:.4} -> {:.4}, mIoU {:.4} -> {:.4}, mAP {:.4} -> {:.4} (all must strictly increase)",
            before.pixel_accuracy, after.pixel_accuracy, before.miou, after.miou, before.map, after.map
        ),
    }
}

fn criterion_ablation(b: &Bench) -> Outcome {
    let subset = b.config.class_subset(8);
    let samples = select_finetune_samples(&b.train, &subset, 3).unwrap();
    let mut rows = AblationSetting::standard_rows();
    let mut off = rows[1].clone();
    off.name = "all_off".into();
    off.loss_toggles = LossToggles::all_off();
    rows.push(off);
    let report = ablation_suite(&b.base, &samples, &b.config, &rows, &b.suite).unwrap();
    let row = |n: &str| report.rows.iter().find(|r| r.setting.name == n).unwrap();
    let full = row("full").background_swap_delta;
    let no_bg = row("without_bg").background_swap_delta;
    let identical = row("all_off").weights_hash == report.base_weights_hash;
    let table: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {:+.3}/{:+.3}", r.setting.name, r.in_distribution_delta, r.background_swap_delta))
        .collect();
    Outcome {
        pass: no_bg < full && identical,
        detail: format!(
            "background_swap gain full {full:+.3} vs w/o L_bg {no_bg:+.3} (need strictly smaller); all-off weights {}; rows (in-dist/bg-swap delta): {}",
            if identical { "bit-identical" } else { "CHANGED" },
            table.join(", ")
        ),
    }
}

fn criterion_baselines(b: &Bench) -> Outcome {
    let subset = b.config.class_subset(8);
    let samples = select_finetune_samples(&b.train, &subset, 3).unwrap();
    let mut parts = Vec::new();
    let mut ran = true;
    for method in [Method::Gradmask, Method::Rrr] {
        let cfg = FinetuneConfig { method, ..b.config.clone() };
        match finetune_relevance(&b.base, &samples, &cfg, None)
            .and_then(|(m, t)| Ok((robustness_report(&m, &b.base, &b.suite, &subset)?, t)))
        {
            Ok((r, t)) => parts.push(format!(
                "{method:?}: {} epochs, in-dist {:+.3}, background_swap {:+.3}, {} splits",
                t.epochs.len(),
                split_delta(&r, IN_DISTRIBUTION),
                split_delta(&r, ShiftKind::BackgroundSwap.name()),
                r.splits.len()
            )),
            Err(e) => {
                ran = false;
                parts.push(format!("{method:?}: error {e}"));
            }
        }
    }
    // unit gradient on the first channel of a 2x2 image with one foreground pixel
    let mut g3 = Tensor::zeros(&[2, 2, 3]);
    for p in 0..4 {
        g3.data_mut()[3 * p] = 1.0;
    }
    let mask = Mask::new(2, 2, vec![1, 0, 0, 0]).unwrap();
    let gm = loss_gradmask(&g3, &mask).unwrap() as f64;
    let rrr = loss_rrr(&g3, &mask).unwrap() as f64;
    let hand = (gm - 3f64.sqrt()).abs() <= 1e-6 && (rrr - 3.0).abs() <= 1e-6;
    Outcome {
        pass: ran && hand,
        detail: format!("{}; hand cases gradmask {gm:.7} (sqrt 3), rrr {rrr:.7} (3), tol 1e-6", parts.join("; ")),
    }
}

// ---------------------------------------------------------------- criterion 8

fn criterion_sis(b: &Bench) -> Outcome {
    let cfg = SisConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut searched, mut succeeded, mut sparse, mut skipped) = (0, 0, 0, 0);
    let mut problems = Vec::new();
    let mut worst_replay = 0.0f32;
    for (i, s) in b.eval.iter().take(9).enumerate() {
        // the predicted label plus one random label per image
        let predicted = argmax(b.base.logits(&s.image).unwrap().data());
        for target in [predicted, rng.random_range(0..8)] {
            match find_sis(&b.base, &s.image, target, &cfg).unwrap() {
                SisOutcome::Insufficient { .. } => skipped += 1,
                SisOutcome::Found(r) => {
                    searched += 1;
                    let monotone = r.retained_trace.windows(2).all(|w| w[1] < w[0]);
                    let above = r.final_confidence >= cfg.threshold
                        && r.confidence_trace.last() == Some(&r.final_confidence);
                    let replayed = replay(&b.base, &s.image, &r).unwrap();
                    worst_replay = worst_replay.max((replayed - r.final_confidence).abs());
                    if monotone && above && (replayed - r.final_confidence).abs() <= 1e-5 {
                        succeeded += 1;
                    } else {
                        problems.push(format!("image {i} class {target}"));
                    }
                    if r.retained_fraction <= 0.2 {
                        sparse += 1;
                    }
                }
            }
        }
    }
    Outcome {
        pass: searched > 0 && succeeded == searched,
        detail: format!(
            "{succeeded}/{searched} searches end >= 0.9 with a strictly shrinking retained set, max replay error {worst_replay:.1e} (tol 1e-5); {skipped} image/label pairs below threshold on the full image; {sparse}/{searched} retained <= 20% of pixels{}",
            if problems.is_empty() { String::new() } else { format!("; violations: {}", problems.join(", ")) }
        ),
    }
}

// ---------------------------------------------------------------- criterion 9

fn run_cli(args: &[String]) -> i32 {
    dispatch(args)
}

fn criterion_determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let dir = |name: &str| root.path().join(name).to_string_lossy().into_owned();
    let small = [
        "--dataset.per_class", "12", "--test.per_class", "5", "--pretrain.epochs", "2",
        "--finetune.epochs", "2", "--finetune.samples_per_class", "2",
        "--lr_search.candidates", "[0.0,0.0001]", "--sweep.samples_per_class", "[1]",
        "--sweep.class_counts", "[2]",
    ];
    let first_dir = dir("pretrain");
    let mut args: Vec<String> = vec!["pretrain".into(), "--out".into(), first_dir.clone()];
    args.extend(small.iter().map(|s| s.to_string()));
    if run_cli(&args) != 0 {
        return Outcome { pass: false, detail: "pretrain run failed".into() };
    }
    let checkpoint = format!("{first_dir}/model.ckpt");

    let commands = [
        "gen-data", "pretrain", "finetune", "lr-search", "eval", "seg-eval", "ablate", "sweep",
        "relevance", "sis",
    ];
    let mut mismatched = Vec::new();
    for (i, command) in commands.iter().enumerate() {
        let a = dir(&format!("{command}-a"));
        let b = dir(&format!("{command}-b"));
        let mut args: Vec<String> = vec![command.to_string(), "--out".into(), a.clone(), "--checkpoint".into(), checkpoint.clone()];
        args.extend(small.iter().map(|s| s.to_string()));
        if *command == "eval" {
            args.extend(["--reference".into(), format!("{first_dir}/model.ckpt")]);
        }
        let code = run_cli(&args);
        // the re-run reads only the resolved config, with a different thread count
        let rerun: Vec<String> = vec![
            command.to_string(),
            "--config".into(),
            format!("{a}/{CONFIG_FILE}"),
            "--out".into(),
            b.clone(),
            "--threads".into(),
            (1 + i % 2).to_string(),
        ];
        let code_b = run_cli(&rerun);
        let ra = std::fs::read(Path::new(&a).join(REPORT_FILE)).ok();
        let rb = std::fs::read(Path::new(&b).join(REPORT_FILE)).ok();
        if code != 0 || code_b != 0 || ra.is_none() || ra != rb {
            mismatched.push(format!("{command} (exit {code}/{code_b})"));
        }
    }
    Outcome {
        pass: mismatched.is_empty(),
        detail: if mismatched.is_empty() {
            format!("{} subcommands re-run from their resolved config give byte-identical reports", commands.len())
        } else {
            format!("differences in: {}", mismatched.join(", "))
        },
    }
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut failures = 0u32;
    let secs = Duration::from_secs;

    let t = Instant::now();
    report(1, "relevance aggregation oracle", secs(5), t, criterion_gae(), &mut failures);
    let t = Instant::now();
    report(2, "gradient correctness", secs(120), t, criterion_gradients(), &mut failures);
    let t = Instant::now();
    report(3, "loss arithmetic", secs(1), t, criterion_losses(), &mut failures);

    let t = Instant::now();
    let mut b = bench();
    let (outcome, finetuned) = criterion_end_to_end(&mut b);
    report(4, "end-to-end robustness direction", secs(600), t, outcome, &mut failures);
    let t = Instant::now();
    let outcome = match &finetuned {
        Some(m) => criterion_segmentation(&b, m),
        None => Outcome { pass: false, detail: "no finetuned model".into() },
    };
    report(5, "segmentation improvement direction", secs(600), t, outcome, &mut failures);
    let t = Instant::now();
    report(6, "ablation direction", secs(1200), t, criterion_ablation(&b), &mut failures);
    let t = Instant::now();
    report(7, "baseline parity harness", secs(600), t, criterion_baselines(&b), &mut failures);
    let t = Instant::now();
    report(8, "sufficient input subsets", secs(300), t, criterion_sis(&b), &mut failures);
    let t = Instant::now();
    report(9, "CLI determinism", secs(600), t, criterion_determinism(), &mut failures);

    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 && std::env::var("RELMAP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
