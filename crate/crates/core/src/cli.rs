//! Command-line front end.
//!
//! Every subcommand resolves one [`RunConfig`] from defaults, an optional
//! `--config` JSON file and dotted `--key value` overrides, writes it to
//! `<out_dir>/config.json`, runs, and writes `<out_dir>/report.json`.
//! Running the same subcommand with `--config <out_dir>/config.json`
//! reproduces the report byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::evaluator::{
    ablation_suite, robustness_report, segmentation_eval, sensitivity_sweep, AblationSetting,
    SplitSuite,
};
use crate::objectives::argmax;
use crate::relevance::{encode_heatmap_ppm, encode_pgm, relevance_map, upsample_map, RelevanceMap};
use crate::sis::{find_sis, write_subset_ppm, FillMode, SisConfig, SisOutcome};
use crate::synthdata::{
    generate_dataset, manifest_hash, read_dataset, read_ppm, write_dataset, DatasetConfig, Sample,
};
use crate::tensor::Tensor;
use crate::trainer::{
    finetune_relevance, lr_grid_search, pretrain, select_finetune_samples, FinetuneConfig,
    PretrainConfig, TargetClassMode,
};
use crate::vit::{ViTConfig, ViTModel};

pub const CONFIG_FILE: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const THREADS_ENV: &str = "RELMAP_THREADS";

/// Test split generation and the validation slice taken from its front.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Seed for the shifted copies of the test split.
    pub shift_seed: u64,
    /// Fraction of the in-distribution test split held out for validation.
    pub validation_fraction: f32,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig { per_class: 50, seed: 1, shift_seed: 7, validation_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSearchConfig {
    pub candidates: Vec<f32>,
}

impl Default for LrSearchConfig {
    fn default() -> Self {
        LrSearchConfig { candidates: vec![1e-5, 3e-5, 1e-4, 3e-4] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub samples_per_class: Vec<usize>,
    pub class_counts: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { samples_per_class: vec![1, 2, 3], class_counts: vec![2, 4, 6] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegEvalConfig {
    /// Class whose relevance map is scored against the mask.
    pub target_class_mode: TargetClassMode,
}

impl Default for SegEvalConfig {
    fn default() -> Self {
        SegEvalConfig { target_class_mode: TargetClassMode::GroundTruth }
    }
}

/// Which image a single-image command looks at.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSelector {
    /// PPM file; when unset, `index` picks from the in-distribution test split.
    pub image: Option<String>,
    pub index: usize,
    /// Class to explain or search for; the model's prediction when unset.
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SisRunConfig {
    pub image: Option<String>,
    pub index: usize,
    pub class: Option<usize>,
    pub threshold: f32,
    pub batch_eliminate_fraction: f32,
    pub fill: FillMode,
}

impl Default for SisRunConfig {
    fn default() -> Self {
        let c = SisConfig::default();
        SisRunConfig {
            image: None,
            index: 0,
            class: None,
            threshold: c.threshold,
            batch_eliminate_fraction: c.batch_eliminate_fraction,
            fill: c.fill,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: String,
    /// Dataset directory to read training samples from instead of generating.
    pub train_dir: Option<String>,
    /// Model the command starts from.
    pub checkpoint: Option<String>,
    /// Model that `eval` compares against; the checkpoint itself when unset.
    pub reference_checkpoint: Option<String>,
    pub model: ViTConfig,
    pub dataset: DatasetConfig,
    pub test: TestConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub lr_search: LrSearchConfig,
    pub sweep: SweepConfig,
    pub seg_eval: SegEvalConfig,
    pub relevance: ImageSelector,
    pub sis: SisRunConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: "runs/latest".into(),
            train_dir: None,
            checkpoint: None,
            reference_checkpoint: None,
            model: ViTConfig::default(),
            dataset: DatasetConfig::default(),
            test: TestConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
            lr_search: LrSearchConfig::default(),
            sweep: SweepConfig::default(),
            seg_eval: SegEvalConfig::default(),
            relevance: ImageSelector::default(),
            sis: SisRunConfig::default(),
        }
    }
}

const COMMANDS: [(&str, &str); 10] = [
    ("gen-data", "write the training and test splits as PPM/PGM plus manifest"),
    ("pretrain", "train a fresh model on the training split"),
    ("finetune", "finetune a checkpoint (--method ours|gradmask|rrr)"),
    ("lr-search", "pick the finetuning learning rate on the validation slice"),
    ("eval", "accuracy on every shift split, with deltas against a reference"),
    ("seg-eval", "pixel accuracy, mIoU and mAP of relevance maps against masks"),
    ("ablate", "finetune once per loss configuration and compare"),
    ("sweep", "finetune over samples-per-class and class-count grids"),
    ("relevance", "dump the relevance map of one image as PGM, PPM and JSON"),
    ("sis", "search a sufficient input subset for one image and class"),
];

/// Flags that stand for a longer dotted key.
fn alias(command: &str, flag: &str) -> Option<&'static str> {
    Some(match (command, flag) {
        (_, "out") => "out_dir",
        (_, "seed") => "dataset.seed",
        (_, "method") => "finetune.method",
        (_, "reference") => "reference_checkpoint",
        ("sis", "class") => "sis.class",
        (_, "class") => "relevance.class",
        ("sis", "image") => "sis.image",
        (_, "image") => "relevance.image",
        _ => return None,
    })
}

fn usage() -> String {
    let mut s = String::from("usage: relmap <command> [--config FILE] [--threads N] [--key value ...]\n\ncommands:\n");
    for (name, about) in COMMANDS {
        s.push_str(&format!("  {name:<10} {about}\n"));
    }
    s.push_str("\nrun `relmap <command> --help` for every config key and its default\n");
    s
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        v => out.push((prefix.to_string(), v.to_string())),
    }
}

// Going through text keeps f32 fields at their shortest decimal form
// instead of their widened f64 expansion.
fn default_value() -> Value {
    let text = serde_json::to_string(&RunConfig::default()).expect("config serializes");
    serde_json::from_str(&text).expect("config parses")
}

/// Every dotted config key with its default value.
pub fn config_keys() -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten("", &default_value(), &mut out);
    out
}

fn help(command: &str) -> String {
    let about = COMMANDS.iter().find(|(n, _)| *n == command).map(|(_, a)| *a).unwrap_or("");
    let mut s = format!(
        "relmap {command}: {about}\n\nflags:\n  --config FILE   JSON run config; missing keys keep their defaults\n  --threads N     worker threads (default: ${THREADS_ENV} or all cores)\n\nconfig keys (--key value):\n"
    );
    let keys = config_keys();
    let width = keys.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in keys {
        s.push_str(&format!("  --{k:<width$}  {v}\n"));
    }
    s
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let unknown = || Error::Config(format!("unknown config key `{key}`"));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(unknown)?;
        let slot = map.get_mut(*part).ok_or_else(unknown)?;
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    Err(unknown())
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b
                    .get_mut(&k)
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
                merge(slot, v, &key)?;
            }
            Ok(())
        }
        (b, p) => {
            *b = p;
            Ok(())
        }
    }
}

/// Serializes through text so f32 fields keep their shortest form instead
/// of being widened to f64.
fn to_json<T: Serialize>(value: &T) -> Result<Value> {
    Ok(serde_json::from_str(&serde_json::to_string(value)?)?)
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

struct Invocation {
    command: String,
    config: RunConfig,
    threads: Option<usize>,
}

enum Parsed {
    Run(Box<Invocation>),
    Help(String),
}

fn parse(args: &[String]) -> Result<Parsed> {
    let Some(command) = args.first() else {
        return Err(Error::Config(format!("missing command\n\n{}", usage())));
    };
    if command == "--help" || command == "-h" || command == "help" {
        return Ok(Parsed::Help(usage()));
    }
    if !COMMANDS.iter().any(|(n, _)| n == command) {
        return Err(Error::Config(format!("unknown command `{command}`\n\n{}", usage())));
    }

    let mut config_file = None;
    let mut threads = None;
    let mut overrides = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--help" || arg == "-h" {
            return Ok(Parsed::Help(help(command)));
        }
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(Error::Config(format!("unexpected argument `{arg}`")));
        };
        let (name, value) = match flag.split_once('=') {
            Some((n, v)) => (n.to_string(), v.to_string()),
            None => {
                i += 1;
                let v = args
                    .get(i)
                    .ok_or_else(|| Error::Config(format!("flag --{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        i += 1;
        match name.as_str() {
            "config" => config_file = Some(PathBuf::from(value)),
            "threads" => {
                threads = Some(value.parse().map_err(|_| {
                    Error::Config(format!("--threads expects a positive integer, got `{value}`"))
                })?)
            }
            _ => {
                let key = alias(command, &name).map(str::to_string).unwrap_or(name);
                overrides.push((key, parse_value(&value)));
            }
        }
    }

    let mut value = default_value();
    if let Some(path) = config_file {
        let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::Io(e),
        })?;
        merge(&mut value, serde_json::from_str(&text)?, "")?;
    }
    for (key, v) in overrides {
        set_path(&mut value, &key, v)?;
    }
    let config: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    Ok(Parsed::Run(Box::new(Invocation { command: command.clone(), config, threads })))
}

fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
}

/// Runs `args` (subcommand first, program name excluded) and returns the
/// process exit code: 0 on success, 2 for I/O and format failures, 1 for
/// everything else.
pub fn dispatch<S: AsRef<str>>(args: &[S]) -> i32 {
    let args: Vec<String> = args.iter().map(|a| a.as_ref().to_string()).collect();
    let result = parse(&args).and_then(|parsed| match parsed {
        Parsed::Help(text) => {
            print!("{text}");
            Ok(())
        }
        Parsed::Run(inv) => {
            let threads = inv.threads.or_else(threads_from_env).filter(|&n| n > 0);
            let mut builder = rayon::ThreadPoolBuilder::new();
            if let Some(n) = threads {
                builder = builder.num_threads(n);
            }
            let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| run(&inv.command, &inv.config))
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                2
            } else {
                1
            }
        }
    }
}

/// Executes one subcommand with an already resolved config.
pub fn run(command: &str, config: &RunConfig) -> Result<()> {
    // round-trip through text so a re-run from config.json sees identical values
    let text = serde_json::to_string_pretty(config)?;
    let config: RunConfig = serde_json::from_str(&text)?;
    let out = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&out)?;
    fs::write(out.join(CONFIG_FILE), format!("{text}\n"))?;
    let ctx = Context { config: &config, out: &out };
    let start = std::time::Instant::now();
    let report = match command {
        "gen-data" => ctx.gen_data(),
        "pretrain" => ctx.pretrain(),
        "finetune" => ctx.finetune(),
        "lr-search" => ctx.lr_search(),
        "eval" => ctx.eval(),
        "seg-eval" => ctx.seg_eval(),
        "ablate" => ctx.ablate(),
        "sweep" => ctx.sweep(),
        "relevance" => ctx.relevance(),
        "sis" => ctx.sis(),
        other => Err(Error::Config(format!("unknown command `{other}`"))),
    }?;
    let mut body = serde_json::to_string_pretty(&report)?;
    body.push('\n');
    fs::write(out.join(REPORT_FILE), body)?;
    log::info!("{command} finished in {:.1}s; report in {}", start.elapsed().as_secs_f64(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GenDataReport {
    train_samples: usize,
    train_manifest_hash: String,
    test_samples: usize,
    test_manifest_hash: String,
}

#[derive(Serialize)]
struct SegEvalReport {
    target_class_mode: TargetClassMode,
    samples: usize,
    segmentation: crate::evaluator::SegReport,
}

#[derive(Serialize)]
struct RelevanceReport {
    image: String,
    predicted_class: usize,
    map: RelevanceMap,
}

#[derive(Serialize)]
struct SisReport {
    image: String,
    predicted_class: usize,
    #[serde(flatten)]
    outcome: SisOutcome,
}

struct Context<'a> {
    config: &'a RunConfig,
    out: &'a Path,
}

impl Context<'_> {
    fn train_samples(&self) -> Result<Vec<Sample>> {
        match &self.config.train_dir {
            Some(dir) => read_dataset(Path::new(dir)),
            None => generate_dataset(&self.config.dataset),
        }
    }

    fn test_config(&self) -> DatasetConfig {
        DatasetConfig {
            per_class: self.config.test.per_class,
            seed: self.config.test.seed,
            ..self.config.dataset.clone()
        }
    }

    /// (validation slice, evaluation split). Classes are interleaved, so the
    /// front slice is class-balanced.
    fn test_split(&self) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let fraction = self.config.test.validation_fraction;
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("validation_fraction {fraction} outside [0, 1)")));
        }
        let mut test = generate_dataset(&self.test_config())?;
        let n_val = (test.len() as f32 * fraction).ceil() as usize;
        let eval = test.split_off(n_val);
        Ok((test, eval))
    }

    fn suite(&self, eval: &[Sample]) -> Result<SplitSuite> {
        SplitSuite::build(eval, &self.test_config(), self.config.test.shift_seed)
    }

    fn checkpoint(&self) -> Result<ViTModel> {
        let path = self.config.checkpoint.as_ref().ok_or_else(|| {
            Error::contract("this command needs --checkpoint pointing at a model file")
        })?;
        ViTModel::load_checkpoint(Path::new(path))
    }

    fn finetune_samples(&self, model: &ViTModel) -> Result<Vec<Sample>> {
        let subset = self.config.finetune.class_subset(model.config().num_classes);
        select_finetune_samples(&self.train_samples()?, &subset, self.config.finetune.samples_per_class)
    }

    fn gen_data(&self) -> Result<Value> {
        let train = self.train_samples()?;
        let test = generate_dataset(&self.test_config())?;
        write_dataset(&train, &self.out.join("train"))?;
        write_dataset(&test, &self.out.join("test"))?;
        to_json(&GenDataReport {
            train_samples: train.len(),
            train_manifest_hash: manifest_hash(&train),
            test_samples: test.len(),
            test_manifest_hash: manifest_hash(&test),
        })
    }

    fn pretrain(&self) -> Result<Value> {
        let train = self.train_samples()?;
        let (validation, _) = self.test_split()?;
        let (model, mut report) =
            pretrain(&self.config.model, &train, &self.config.pretrain, Some(&validation))?;
        model.save_checkpoint(&self.out.join(CHECKPOINT_FILE))?;
        report.checkpoint = Some(CHECKPOINT_FILE.into());
        to_json(&report)
    }

    fn finetune(&self) -> Result<Value> {
        let base = self.checkpoint()?;
        let samples = self.finetune_samples(&base)?;
        let (validation, _) = self.test_split()?;
        let (model, mut report) =
            finetune_relevance(&base, &samples, &self.config.finetune, Some(&validation))?;
        model.save_checkpoint(&self.out.join(CHECKPOINT_FILE))?;
        report.checkpoint = Some(CHECKPOINT_FILE.into());
        to_json(&report)
    }

    fn lr_search(&self) -> Result<Value> {
        let base = self.checkpoint()?;
        let samples = self.finetune_samples(&base)?;
        let (validation, _) = self.test_split()?;
        let report = lr_grid_search(
            &base,
            &self.config.lr_search.candidates,
            &self.config.finetune,
            &samples,
            &validation,
        )?;
        to_json(&report)
    }

    fn eval(&self) -> Result<Value> {
        let model = self.checkpoint()?;
        let reference = match &self.config.reference_checkpoint {
            Some(p) => ViTModel::load_checkpoint(Path::new(p))?,
            None => model.clone(),
        };
        let (_, eval) = self.test_split()?;
        let subset = self.config.finetune.class_subset(model.config().num_classes);
        let report = robustness_report(&model, &reference, &self.suite(&eval)?, &subset)?;
        to_json(&report)
    }

    fn seg_eval(&self) -> Result<Value> {
        let model = self.checkpoint()?;
        let (_, eval) = self.test_split()?;
        let mode = self.config.seg_eval.target_class_mode;
        let segmentation = segmentation_eval(&model, &eval, mode)?;
        to_json(&SegEvalReport { target_class_mode: mode, samples: eval.len(), segmentation })
    }

    fn ablate(&self) -> Result<Value> {
        let base = self.checkpoint()?;
        let samples = self.finetune_samples(&base)?;
        let (_, eval) = self.test_split()?;
        let report = ablation_suite(
            &base,
            &samples,
            &self.config.finetune,
            &AblationSetting::standard_rows(),
            &self.suite(&eval)?,
        )?;
        to_json(&report)
    }

    fn sweep(&self) -> Result<Value> {
        let base = self.checkpoint()?;
        let pool = self.train_samples()?;
        let (_, eval) = self.test_split()?;
        let s = &self.config.sweep;
        let report = sensitivity_sweep(
            &base,
            &pool,
            &s.samples_per_class,
            &s.class_counts,
            &self.config.finetune,
            &self.suite(&eval)?,
        )?;
        fs::write(self.out.join("sweep.csv"), report.to_csv())?;
        to_json(&report)
    }

    /// The selected image, a label for it in reports, and the model's prediction.
    fn select_image(&self, model: &ViTModel, sel: &ImageSelector) -> Result<(Tensor, String, usize)> {
        let (image, name) = match &sel.image {
            Some(path) => (read_ppm(Path::new(path))?, path.clone()),
            None => {
                let test = generate_dataset(&self.test_config())?;
                let sample = test.get(sel.index).ok_or_else(|| {
                    Error::contract(format!("test index {} outside 0..{}", sel.index, test.len()))
                })?;
                (sample.image.clone(), format!("test[{}]", sel.index))
            }
        };
        crate::image::check_image(&image, model.config().image_size)?;
        let predicted = argmax(model.logits(&image)?.data());
        Ok((image, name, predicted))
    }

    fn relevance(&self) -> Result<Value> {
        let model = self.checkpoint()?;
        let sel = &self.config.relevance;
        let (image, name, predicted) = self.select_image(&model, sel)?;
        let map = relevance_map(&model, &image, sel.class.unwrap_or(predicted))?;
        let size = model.config().image_size;
        let pixels = upsample_map(&map, size, size)?;
        fs::write(self.out.join("relevance.pgm"), encode_pgm(pixels.data(), size, size)?)?;
        fs::write(self.out.join("relevance.ppm"), encode_heatmap_ppm(pixels.data(), size, size)?)?;
        to_json(&RelevanceReport { image: name, predicted_class: predicted, map })
    }

    fn sis(&self) -> Result<Value> {
        let model = self.checkpoint()?;
        let s = &self.config.sis;
        let sel = ImageSelector { image: s.image.clone(), index: s.index, class: s.class };
        let (image, name, predicted) = self.select_image(&model, &sel)?;
        let cfg = SisConfig {
            threshold: s.threshold,
            batch_eliminate_fraction: s.batch_eliminate_fraction,
            fill: s.fill,
        };
        let outcome = find_sis(&model, &image, s.class.unwrap_or(predicted), &cfg)?;
        if let Some(found) = outcome.found() {
            write_subset_ppm(&image, found, &self.out.join("subset.ppm"))?;
        }
        to_json(&SisReport { image: name, predicted_class: predicted, outcome })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_and_aliases_resolve() {
        let Parsed::Run(inv) = parse(&args(&[
            "finetune",
            "--finetune.learning_rate",
            "3e-5",
            "--method=rrr",
            "--seed",
            "4",
            "--finetune.train_class_subset",
            "[1,2]",
            "--out",
            "x",
        ]))
        .unwrap() else {
            panic!("expected a run")
        };
        assert_eq!(inv.config.finetune.learning_rate, 3e-5);
        assert_eq!(inv.config.finetune.method, crate::trainer::Method::Rrr);
        assert_eq!(inv.config.dataset.seed, 4);
        assert_eq!(inv.config.finetune.train_class_subset, Some(vec![1, 2]));
        assert_eq!(inv.config.out_dir, "x");
    }

    #[test]
    fn unknown_keys_and_commands_are_rejected() {
        assert!(matches!(parse(&args(&["eval", "--finetune.nope", "1"])), Err(Error::Config(_))));
        assert!(matches!(parse(&args(&["eval", "--bogus", "1"])), Err(Error::Config(_))));
        assert!(matches!(parse(&args(&["frobnicate"])), Err(Error::Config(_))));
        assert!(matches!(parse(&args(&[])), Err(Error::Config(_))));
        assert!(matches!(parse(&args(&["eval", "--pretrain.epochs", "many"])), Err(Error::Config(_))));
    }

    #[test]
    fn help_lists_every_key() {
        let text = help("pretrain");
        for (k, v) in config_keys() {
            assert!(text.contains(&format!("--{k}")), "{k} missing");
            assert!(text.contains(&v));
        }
        assert!(config_keys().iter().any(|(k, _)| k == "finetune.weights.bg"));
    }
}
