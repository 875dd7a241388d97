use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use femlab::oracle::suites::{self, Suite};
use femlab::seqmodel::{read_checkpoint, TaskShape};
use femlab::taskgen::{generate_dataset, read_dataset_dir, write_dataset_dir};
use femlab::trainer::evaluate;

use crate::args::{Command, EvaluateArgs, GenerateArgs, SweepArgs, TrainArgs, VerifyArgs};
use crate::config::{RunConfigFile, RunConfig};
use crate::failure::{usage, CheckFailed};
use crate::output_root;
use crate::run::train_run;
use crate::sweep::{run_sweep, GridConfig};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenerateData(a) => generate_data(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Verify(a) => verify(a),
        Command::Evaluate(a) => evaluate_checkpoint(a),
    }
}

pub fn generate_data(a: GenerateArgs) -> Result<()> {
    if a.train_n == 0 || a.test_n == 0 {
        return Err(usage("--train-n and --test-n must be >= 1"));
    }
    // the dataset does not depend on the rationale length
    let shape = TaskShape::new(a.vocab, a.qlen, 1, true).map_err(|e| usage(e.to_string()))?;
    let data = generate_dataset(&shape, a.train_n, a.test_n, a.seed)?;
    write_dataset_dir(&a.out, &shape, &data).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} train and {} test points (v={} n={} seed={}) to {}",
        a.train_n,
        a.test_n,
        a.vocab,
        a.qlen,
        a.seed,
        a.out.display()
    );
    Ok(())
}

/// Defaults, then the `--config` file, then explicit flags.
pub fn resolve_train_config(a: &TrainArgs) -> Result<RunConfig> {
    let file = match &a.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let flags = RunConfigFile {
        data: a.data.clone(),
        scheme: a.scheme.clone(),
        iterations: a.iters,
        lr_start: a.lr_start,
        lr_end: a.lr_end,
        seed: a.seed,
        shuffle_updates: a.no_shuffle.then_some(false),
        freeze_grad_point: a.freeze_grad_point.then_some(true),
        max_len: a.max_len,
        variable_length: a.fixed_length.then_some(false),
        init: a.init.clone(),
        init_checkpoint: a.init_checkpoint.clone(),
    };
    file.merge(flags).resolve()
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| output_root().join(format!("{}_s{}", cfg.scheme.replace(':', "-"), cfg.seed)));
    let manifest = train_run(&cfg, &out_dir)?;
    println!(
        "{} seed={}: test accuracy {:.4} -> {:.4} over {} iterations; run directory {}",
        manifest.scheme,
        manifest.seed,
        manifest.base_accuracy,
        manifest.final_accuracy,
        cfg.iterations,
        out_dir.display()
    );
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let grid = GridConfig::load(&a.grid)?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| {
        let stem = a.grid.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "grid".into());
        output_root().join(format!("sweep-{stem}"))
    });
    let outcome = run_sweep(&grid, &out_dir)?;
    println!(
        "{} cells, {} failed; results in {}",
        outcome.cells,
        outcome.failed.len(),
        out_dir.display()
    );
    if !outcome.failed.is_empty() {
        let names: Vec<&str> = outcome.failed.iter().map(|(n, _)| n.as_str()).collect();
        bail!("{} sweep cells failed: {}", names.len(), names.join(", "));
    }
    Ok(())
}

pub fn verify(a: VerifyArgs) -> Result<()> {
    if a.draws < 2 {
        return Err(usage("--draws must be >= 2"));
    }
    let lines = match a.suite {
        Suite::Unbiasedness => suites::unbiasedness(a.seed, a.draws)?,
        Suite::All => {
            let mut all = Vec::new();
            for s in [Suite::Normalization, Suite::Gradients, Suite::Posterior, Suite::Lemma1, Suite::Em] {
                all.extend(suites::run_suite(s, a.seed)?);
            }
            all.extend(suites::unbiasedness(a.seed, a.draws)?);
            all
        }
        s => suites::run_suite(s, a.seed)?,
    };
    let failed = lines.iter().filter(|l| !l.passed()).count();
    for line in &lines {
        println!("{line}");
    }
    println!("{} checks, {failed} failed", lines.len());
    if failed > 0 {
        return Err(CheckFailed(format!("{failed} of {} checks failed", lines.len())).into());
    }
    Ok(())
}

pub fn evaluate_checkpoint(a: EvaluateArgs) -> Result<()> {
    let (shape, params) = read_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data_dir: PathBuf = a.data.clone();
    let (vocab, question_len, data) =
        read_dataset_dir(&data_dir).with_context(|| format!("loading dataset {}", data_dir.display()))?;
    if (vocab, question_len) != (shape.vocab, shape.question_len) {
        bail!(
            "checkpoint shape v={} n={} does not match data shape v={vocab} n={question_len}",
            shape.vocab,
            shape.question_len
        );
    }
    let (acc, len) = evaluate(&params, &shape, &data.test)?;
    println!("accuracy={acc:.3} mean_rationale_len={len:.3} test_n={}", data.test.len());
    Ok(())
}
