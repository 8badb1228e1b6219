//! Command-line surface: `train`, `eval`, `predict`, `selftest`.
//!
//! Exit codes: 0 success, 1 verification or training failure, 2 usage or
//! input error. All commands are deterministic given `--seed`.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{self, netpbm, synth, Sample};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate_dataset};
use crate::model::{Model, ModelConfig};
use crate::selftest;
use crate::tensor::{no_grad, ops};
use crate::train::{checkpoint, Trainer, TrainOptions};
use crate::uaca;

const USAGE: &str = "\
usage: uacanet <train|eval|predict|selftest> [options]

options:
  --config PATH        TOML run configuration
  --seed N             RNG seed (init, data, augmentation)
  --checkpoint PATH    checkpoint to resume from / evaluate / predict with
  --data ROOT          dataset root (images/ + masks/)
  --out DIR            output directory
  --debug-maps         predict: also write each stage's area maps
  --schedule KIND      literal | conventional learning-rate decay
  --width N            channel width (32 small, 256 large)
  --side N             input side length (multiple of 32)
  --no-paa             disable parallel axial attention blocks
  --no-uncertainty     disable the uncertainty branch (two-area attention)
  --KEY.PATH=VALUE     override any config field, e.g. --train.epochs=240

commands:
  train      train a model, writing checkpoints and a JSON-lines log
  eval       score a checkpoint on a dataset (report JSON + per-image CSV)
  predict    run one image through a checkpoint, write the probability map
  selftest   run the built-in verification suite
";

struct Parsed {
    config_path: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    out_flag: Option<String>,
    debug_maps: bool,
    overrides: Vec<(String, String)>,
    positional: Vec<String>,
}

fn parse_args(args: &[String]) -> Result<Parsed> {
    let mut p = Parsed {
        config_path: None,
        checkpoint: None,
        data: None,
        out_flag: None,
        debug_maps: false,
        overrides: Vec::new(),
        positional: Vec::new(),
    };
    let usage_err = |msg: String| Error::InvalidArg(format!("{msg}\n\n{USAGE}"));
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let (flag, inline): (&str, Option<String>) = match arg.split_once('=') {
            Some((f, v)) => (f, Some(v.to_string())),
            None => (arg.as_str(), None),
        };
        let value = |p_i: &mut usize| -> Result<String> {
            if let Some(v) = inline.clone() {
                return Ok(v);
            }
            *p_i += 1;
            args.get(*p_i)
                .cloned()
                .ok_or_else(|| usage_err(format!("{flag} requires a value")))
        };
        match flag {
            "--config" => p.config_path = Some(PathBuf::from(value(&mut i)?)),
            "--checkpoint" => p.checkpoint = Some(PathBuf::from(value(&mut i)?)),
            "--data" => p.data = Some(PathBuf::from(value(&mut i)?)),
            "--out" => p.out_flag = Some(value(&mut i)?),
            "--seed" => p.overrides.push(("train.seed".into(), value(&mut i)?)),
            "--width" => p.overrides.push(("model.width".into(), value(&mut i)?)),
            "--side" => p.overrides.push(("model.side".into(), value(&mut i)?)),
            "--schedule" => p.overrides.push(("train.schedule".into(), value(&mut i)?)),
            "--no-paa" => p.overrides.push(("model.disable_paa".into(), "true".into())),
            "--no-uncertainty" => {
                p.overrides.push(("model.disable_uncertainty".into(), "true".into()))
            }
            "--debug-maps" => p.debug_maps = true,
            _ if flag.starts_with("--") && flag.contains('.') => {
                let v = inline
                    .clone()
                    .ok_or_else(|| usage_err(format!("override {flag} needs --key.path=value")))?;
                p.overrides.push((flag[2..].to_string(), v));
            }
            _ if flag.starts_with('-') => {
                return Err(usage_err(format!("unknown flag {flag}")));
            }
            _ => p.positional.push(arg.clone()),
        }
        i += 1;
    }
    Ok(p)
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NanLoss { .. } => 1,
        _ => 2,
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32> {
    let Some(cmd) = args.first() else {
        eprint!("{USAGE}");
        return Ok(2);
    };
    match cmd.as_str() {
        "-h" | "--help" | "help" => {
            print!("{USAGE}");
            Ok(0)
        }
        "train" => cmd_train(parse_args(&args[1..])?),
        "eval" => cmd_eval(parse_args(&args[1..])?),
        "predict" => cmd_predict(parse_args(&args[1..])?),
        "selftest" => cmd_selftest(parse_args(&args[1..])?),
        other => {
            eprintln!("unknown command '{other}'\n\n{USAGE}");
            Ok(2)
        }
    }
}

fn load_config(p: &Parsed, data_key: Option<&str>) -> Result<RunConfig> {
    let mut overrides = p.overrides.clone();
    if let (Some(root), Some(key)) = (&p.data, data_key) {
        overrides.push((key.into(), root.display().to_string()));
    }
    if let Some(out) = &p.out_flag {
        overrides.push(("output.dir".into(), out.clone()));
    }
    RunConfig::load(p.config_path.as_deref(), &overrides)
}

fn training_samples(cfg: &RunConfig) -> Result<Vec<Sample>> {
    if cfg.data.synth_train > 0 {
        let samples =
            synth::synth_blobs(cfg.data.synth_train, cfg.model.side, cfg.train.seed)?;
        let root = cfg.output.dir.join("synth_train");
        data::write_dataset(&root, &samples)?;
        // reload from disk so training consumes the materialized layout
        data::load_samples(&root)
    } else {
        let root = cfg.data.train_root.as_ref().ok_or_else(|| {
            Error::Config("no training data: set data.train_root or data.synth_train".into())
        })?;
        data::load_samples(root)
    }
}

/// Seed offset for held-out synthetic evaluation sets.
const EVAL_SEED_SALT: u64 = 0x45564143;

fn cmd_train(p: Parsed) -> Result<i32> {
    let cfg = load_config(&p, Some("data.train_root"))?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    let samples = training_samples(&cfg)?;
    let model = Model::<f32>::new(&cfg.model, cfg.train.seed)?;

    let opts = TrainOptions {
        epochs: cfg.train.epochs,
        batch: cfg.train.batch,
        seed: cfg.train.seed,
        base_lr: cfg.train.base_lr,
        schedule: cfg.train.schedule,
        bce: cfg.train.bce,
        augment: cfg.train.augment.then(Default::default),
    };
    let spe = Trainer::steps_per_epoch(samples.len(), opts.batch);
    let mut trainer = Trainer::new(opts, spe);
    if let Some(ck) = &p.checkpoint {
        let ckpt = checkpoint::load_checkpoint(ck)?;
        let step = checkpoint::apply_checkpoint(&ckpt, &model, &mut trainer.adam)?;
        trainer.resume_at(step);
        println!("resumed from {} at iter {step}", ck.display());
    }

    let log_path = cfg.output.dir.join("train_log.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;
    let total = trainer.sched.iter_max;
    let print_every = (total / 10).max(1);
    let params = model.parameters();
    let every = cfg.train.checkpoint_every;
    let out_dir = cfg.output.dir.clone();
    let model_cfg = cfg.model.clone();
    let mut written = 0usize;
    trainer.run(&model, &samples, |stats, adam| {
        serde_json::to_writer(&mut log, stats)
            .map_err(|e| Error::InvalidArg(format!("log write: {e}")))?;
        log.write_all(b"\n")?;
        if stats.iter % print_every == 0 || stats.iter + 1 == total {
            println!(
                "iter {:>6}/{}  lr {:.3e}  loss {:.4}",
                stats.iter + 1,
                total,
                stats.lr,
                stats.loss
            );
        }
        if every > 0 && (stats.iter + 1) % every == 0 && stats.iter + 1 != total {
            let path = out_dir.join(format!("checkpoint_{:06}.uack", stats.iter + 1));
            checkpoint::save_checkpoint(&path, &params, adam, stats.iter + 1, &model_cfg)?;
            written += 1;
        }
        Ok(())
    })?;
    let final_path = out_dir.join("checkpoint_final.uack");
    checkpoint::save_checkpoint(
        &final_path,
        &params,
        &trainer.adam,
        trainer.iter(),
        &model_cfg,
    )?;
    written += 1;
    println!(
        "trained {} iters; wrote {written} checkpoint(s); final: {}",
        trainer.iter(),
        final_path.display()
    );
    Ok(0)
}

fn eval_samples(cfg: &RunConfig) -> Result<(Vec<Sample>, usize)> {
    if let Some(root) = &cfg.data.eval_root {
        let entries = data::load_dataset(root)?;
        let mut samples = Vec::new();
        let mut skipped = 0usize;
        for e in &entries {
            match e.read() {
                Ok(s) => samples.push(s),
                Err(err) => {
                    log::warn!("skipping '{}': {err}", e.stem);
                    skipped += 1;
                }
            }
        }
        Ok((samples, skipped))
    } else if cfg.data.synth_eval > 0 {
        Ok((
            synth::synth_blobs(
                cfg.data.synth_eval,
                cfg.model.side,
                cfg.train.seed ^ EVAL_SEED_SALT,
            )?,
            0,
        ))
    } else {
        Err(Error::Config(
            "no evaluation data: set data.eval_root or data.synth_eval".into(),
        ))
    }
}

fn cmd_eval(p: Parsed) -> Result<i32> {
    let cfg = load_config(&p, Some("data.eval_root"))?;
    let ck = p
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArg("eval requires --checkpoint".into()))?;
    let model = Model::<f32>::new(&cfg.model, cfg.train.seed)?;
    let ckpt = checkpoint::load_checkpoint(ck)?;
    checkpoint::apply_checkpoint(&ckpt, &model, &mut crate::train::Adam::new())?;

    let (samples, skipped) = eval_samples(&cfg)?;
    if samples.is_empty() {
        return Err(Error::Dataset("evaluation set is empty".into()));
    }
    let report = evaluate_dataset(&model, &samples, skipped)?;
    std::fs::create_dir_all(&cfg.output.dir)?;
    report.write_json(&cfg.output.dir.join("eval_report.json"))?;
    report.write_csv(&cfg.output.dir.join("eval_per_image.csv"))?;
    println!(
        "mDice {:.4}  mIoU {:.4}  MAE {:.4}  ({} images, {} skipped)",
        report.mdice, report.miou, report.mae, report.count, report.skipped
    );
    Ok(0)
}

fn cmd_predict(p: Parsed) -> Result<i32> {
    let ck = p
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidArg("predict requires --checkpoint".into()))?;
    let image_path = p
        .positional
        .first()
        .map(PathBuf::from)
        .ok_or_else(|| Error::InvalidArg("predict requires an input image (PPM)".into()))?;
    let out_dir = PathBuf::from(p.out_flag.clone().unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out_dir)?;

    let ckpt = checkpoint::load_checkpoint(ck)?;
    let config: ModelConfig = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
    let model = Model::<f32>::new(&config, 0)?;
    checkpoint::apply_checkpoint(&ckpt, &model, &mut crate::train::Adam::new())?;

    let image = netpbm::read_ppm(&image_path)?;
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let stem = image_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();

    let (prob, maps) = no_grad(|| -> Result<_> {
        let batched = ops::reshape(&image, &[1, 3, h, w])?;
        let resized = ops::bilinear_resize(&batched, config.side, config.side)?;
        let out = model.forward_full(&resized, p.debug_maps)?;
        let native = ops::bilinear_resize(&out.probability(), h, w)?;
        Ok((ops::reshape(&native, &[1, h, w])?, out.stage_maps))
    })?;

    let prob_path = out_dir.join(format!("{stem}_prob.pgm"));
    netpbm::write_pgm(&prob_path, &prob)?;
    println!("wrote {}", prob_path.display());
    if let Some(stage_maps) = maps {
        let mut count = 0;
        for (i, sm) in stage_maps.iter().enumerate() {
            count += uaca::write_area_map_images(&out_dir, i + 1, None, &sm.maps)?.len();
        }
        println!("wrote {count} area maps to {}", out_dir.display());
    }
    Ok(0)
}

fn cmd_selftest(p: Parsed) -> Result<i32> {
    let seed = p
        .overrides
        .iter()
        .rev()
        .find(|(k, _)| k == "train.seed")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(1234u64);
    let results = selftest::run_all(seed);
    print!("{}", selftest::format_table(&results));
    let failures: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.name.as_str())
        .collect();
    if failures.is_empty() {
        println!("all {} checks passed", results.len());
        Ok(0)
    } else {
        println!("{} of {} checks failed: {}", failures.len(), results.len(), failures.join(", "));
        Ok(1)
    }
}

/// Writes the probability map for a sample (test helper for the eval
/// pipeline; mirrors what `predict` does without the checkpoint plumbing).
pub fn predict_to_pgm(model: &Model<f32>, sample: &Sample, path: &Path) -> Result<()> {
    let prob = metrics::predict_sample(model, sample)?;
    netpbm::write_pgm(path, &prob)
}
