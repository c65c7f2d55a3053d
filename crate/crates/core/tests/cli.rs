use relmap::cli::{dispatch, CONFIG_FILE, REPORT_FILE};
use relmap::synthdata::{generate_dataset, write_dataset, DatasetConfig, MANIFEST_FILE};

const SMALL: [&str; 8] =
    ["--dataset.per_class", "3", "--test.per_class", "2", "--pretrain.epochs", "1", "--finetune.epochs", "1"];

fn run(command: &str, out: &std::path::Path, extra: &[&str]) -> i32 {
    let mut args = vec![command.to_string(), "--out".into(), out.to_string_lossy().into_owned()];
    args.extend(SMALL.iter().chain(extra).map(|s| s.to_string()));
    dispatch(&args)
}

fn pretrained(root: &std::path::Path) -> String {
    let dir = root.join("pre");
    assert_eq!(run("pretrain", &dir, &[]), 0);
    dir.join("model.ckpt").to_string_lossy().into_owned()
}

#[test]
fn gen_data_is_deterministic() {
    let root = tempfile::tempdir().unwrap();
    assert_eq!(run("gen-data", &root.path().join("a"), &[]), 0);
    assert_eq!(run("gen-data", &root.path().join("b"), &["--threads", "2"]), 0);
    let read = |d: &str, f: &str| std::fs::read(root.path().join(d).join(f)).unwrap();
    assert_eq!(read("a", REPORT_FILE), read("b", REPORT_FILE));
    assert_eq!(read("a", &format!("train/{MANIFEST_FILE}")), read("b", &format!("train/{MANIFEST_FILE}")));
    assert!(root.path().join("a").join(CONFIG_FILE).exists());
}

#[test]
fn finetune_without_masks_fails_with_contract_code() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = pretrained(root.path());
    let mut samples = generate_dataset(&DatasetConfig { per_class: 3, ..Default::default() }).unwrap();
    for s in &mut samples {
        s.mask = None;
    }
    let train = root.path().join("unmasked");
    write_dataset(&samples, &train).unwrap();
    let train = train.to_string_lossy().into_owned();
    let code = run("finetune", &root.path().join("ft"), &["--checkpoint", &ckpt, "--train_dir", &train]);
    assert_eq!(code, 1);
}

#[test]
fn relevance_writes_images_and_report() {
    let root = tempfile::tempdir().unwrap();
    let ckpt = pretrained(root.path());
    let out = root.path().join("rel");
    assert_eq!(run("relevance", &out, &["--checkpoint", &ckpt, "--relevance.index", "1"]), 0);
    let pgm = std::fs::read(out.join("relevance.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    let ppm = std::fs::read(out.join("relevance.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
    assert_eq!(report["map"]["values"].as_array().unwrap().len(), 16);
}

#[test]
fn missing_checkpoint_is_an_io_failure() {
    let root = tempfile::tempdir().unwrap();
    let absent = root.path().join("absent.ckpt");
    assert_eq!(run("eval", &root.path().join("e"), &["--checkpoint", &absent.to_string_lossy()]), 2);
    // no checkpoint configured at all is a usage error
    assert_eq!(run("eval", &root.path().join("e2"), &[]), 1);
}

#[test]
fn usage_errors() {
    assert_eq!(dispatch(&["frobnicate".to_string()]), 1);
    assert_eq!(dispatch(&["gen-data".to_string(), "--no.such.key".into(), "1".into()]), 1);
    assert_eq!(dispatch::<String>(&[]), 1);
    assert_eq!(dispatch(&["pretrain".to_string(), "--help".into()]), 0);
}
