//! Drives the command-line entry point from code: generate data, pretrain,
//! then evaluate, all into one run directory.

use relmap::cli::dispatch;

fn main() {
    let out = std::env::temp_dir().join("relmap_cli_example");
    let out = out.to_string_lossy();
    let small = ["--dataset.per_class", "20", "--test.per_class", "5", "--pretrain.epochs", "2"];
    for command in ["gen-data", "pretrain"] {
        let mut args = vec![command, "--out", &out];
        args.extend(small);
        println!("{command}: exit {}", dispatch(&args));
    }
    let checkpoint = format!("{out}/model.ckpt");
    let eval_out = format!("{out}/eval");
    let mut args = vec!["eval", "--out", &eval_out, "--checkpoint", &checkpoint];
    args.extend(small);
    println!("eval: exit {}", dispatch(&args));
    println!("reports under {out}");
}
