use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ffa_core::haze::{self, read_ppm, write_ppm, DepthMode, HazeRanges, SynthOptions};
use ffa_core::metrics::{psnr, ssim, MetricReport};
use ffa_core::model::{export_attention_maps, ffa_forward, ModelConfig};
use ffa_core::train::{self, Checkpoint, TrainConfig, TrainOutputs};
use ffa_core::Error as CoreError;

use crate::{CliError, DehazeArgs, EvalArgs, SynthArgs, TrainArgs};

type CmdResult = Result<(), CliError>;

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

/// Errors raised mid-run: validation-shaped ones still map to exit 2, real
/// failures (NaN abort, I/O) to exit 3.
fn classify(e: CoreError) -> CliError {
    match e {
        CoreError::Abort(_) | CoreError::Io { .. } => runtime(e),
        other => usage(other),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), CliError> {
    let (h, w) = s
        .split_once('x')
        .ok_or_else(|| usage(format!("--size must be HxW, got {s:?}")))?;
    let parse = |v: &str| {
        v.parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| usage(format!("bad --size component {v:?}")))
    };
    Ok((parse(h)?, parse(w)?))
}

pub fn synth(args: SynthArgs) -> CmdResult {
    let (height, width) = parse_size(&args.size)?;
    let depth_mode = match args.depth.as_str() {
        "linear" => DepthMode::Linear,
        "radial" => DepthMode::Radial,
        "mixed" => DepthMode::Mixed,
        other => return Err(usage(format!("--depth must be linear|radial|mixed, got {other:?}"))),
    };
    let ranges = HazeRanges {
        a_min: args.a_min,
        a_max: args.a_max,
        beta_min: args.beta_min,
        beta_max: args.beta_max,
        depth_kind: None,
        depth_scale: args.depth_scale,
    };
    ranges.validate().map_err(usage)?;
    if args.count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    if let Some(src) = &args.source {
        if !src.is_dir() {
            return Err(usage(format!("--source {} is not a directory", src.display())));
        }
    }
    let opts = SynthOptions {
        count: args.count,
        height,
        width,
        seed: args.seed,
        ranges,
        depth_mode,
        source: args.source.clone(),
    };
    let names = haze::generate_dataset(&args.out, &opts).map_err(classify)?;
    println!("wrote {} samples under {}", names.len(), args.out.display());
    Ok(())
}

fn model_config_from(args: &TrainArgs) -> ModelConfig {
    ModelConfig {
        groups: args.groups,
        blocks_per_group: args.blocks,
        channels: args.channels,
        reduction: args.reduction,
        pa_kernel: args.pa_kernel,
        use_fa: !args.no_fa,
        use_lrl: !args.no_lrl,
        use_ffa: !args.no_ffa,
    }
}

fn train_config_from(args: &TrainArgs) -> TrainConfig {
    TrainConfig {
        steps: args.steps,
        lr0: args.lr,
        batch: args.batch,
        patch: args.patch,
        beta1: args.beta1,
        beta2: args.beta2,
        eps: args.eps,
        seed: args.seed,
        checkpoint_every: args.checkpoint_every,
        augment: !args.no_augment,
    }
}

/// On resume the stored configs win; a flag that differs from both its
/// default and the stored value is a conflict.
fn check_resume_conflicts(args: &TrainArgs, ckpt: &Checkpoint) -> CmdResult {
    let defaults = (model_config_from_defaults(), TrainConfig::default());
    let flags = (model_config_from(args), train_config_from(args));
    let stored = (ckpt.model.clone(), ckpt.train.clone());
    macro_rules! check {
        ($field:ident, $side:tt) => {
            if flags.$side.$field != defaults.$side.$field
                && flags.$side.$field != stored.$side.$field
            {
                return Err(usage(format!(
                    "--resume conflict: flag sets {} = {:?}, checkpoint has {:?}",
                    stringify!($field),
                    flags.$side.$field,
                    stored.$side.$field
                )));
            }
        };
    }
    check!(groups, 0);
    check!(blocks_per_group, 0);
    check!(channels, 0);
    check!(reduction, 0);
    check!(pa_kernel, 0);
    check!(use_fa, 0);
    check!(use_lrl, 0);
    check!(use_ffa, 0);
    check!(steps, 1);
    check!(lr0, 1);
    check!(batch, 1);
    check!(patch, 1);
    check!(beta1, 1);
    check!(beta2, 1);
    check!(eps, 1);
    check!(seed, 1);
    check!(augment, 1);
    Ok(())
}

fn model_config_from_defaults() -> ModelConfig {
    ModelConfig::default()
}

pub fn train(args: TrainArgs) -> CmdResult {
    if !args.data.is_dir() {
        return Err(usage(format!("--data {} is not a directory", args.data.display())));
    }
    haze::load_dataset(&args.data).map_err(usage)?;
    let loss_csv = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", args.out.display())));
    let outputs = TrainOutputs { checkpoint: args.out.clone(), loss_csv };

    let result = if let Some(resume_path) = &args.resume {
        let ckpt = Checkpoint::load(resume_path).map_err(usage)?;
        check_resume_conflicts(&args, &ckpt)?;
        if ckpt.step >= ckpt.train.steps {
            return Err(usage(format!(
                "checkpoint already completed its {} steps",
                ckpt.train.steps
            )));
        }
        train::resume(ckpt, &args.data, &outputs).map_err(classify)?
    } else {
        let model_cfg = model_config_from(&args);
        let train_cfg = train_config_from(&args);
        model_cfg.validate().map_err(usage)?;
        train_cfg.validate().map_err(usage)?;
        train::train(&model_cfg, &train_cfg, &args.data, &outputs).map_err(classify)?
    };
    println!(
        "trained to step {} (final l1 {}); checkpoint at {}",
        result.checkpoint.step,
        result.final_loss,
        args.out.display()
    );
    Ok(())
}

pub fn dehaze(args: DehazeArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&args.ckpt).map_err(usage)?;
    let hazy = read_ppm(&args.input).map_err(usage)?;
    let batch = hazy.unsqueeze_batch().map_err(usage)?;
    let (out, maps) = ffa_forward(&ckpt.model, &ckpt.params, &batch).map_err(usage)?;
    let image = out.batch_item(0).map_err(runtime)?;
    write_ppm(&image, &args.out).map_err(classify)?;
    println!("wrote {}", args.out.display());
    if let Some(attn_dir) = &args.attn {
        let files = export_attention_maps(&maps, attn_dir).map_err(classify)?;
        println!("wrote {} attention files under {}", files.len(), attn_dir.display());
    }
    Ok(())
}

fn ppm_names(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    Ok(entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&args.ckpt).map_err(usage)?;
    let hazy_names = ppm_names(&args.hazy)?;
    let gt_names = ppm_names(&args.gt)?;
    if hazy_names.is_empty() {
        return Err(usage(format!("no .ppm files under {}", args.hazy.display())));
    }
    let orphans: Vec<&String> = hazy_names.symmetric_difference(&gt_names).collect();
    if !orphans.is_empty() {
        return Err(usage(format!(
            "unpaired files between {} and {}: {}",
            args.hazy.display(),
            args.gt.display(),
            orphans.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        )));
    }

    let mut dehazed_report = MetricReport::default();
    let mut baseline_report = MetricReport::default();
    for name in &hazy_names {
        let hazy = read_ppm(&args.hazy.join(name)).map_err(usage)?;
        let gt = read_ppm(&args.gt.join(name)).map_err(usage)?;
        if hazy.dims() != gt.dims() {
            return Err(usage(format!(
                "{name}: hazy {:?} and ground truth {:?} differ",
                hazy.dims(),
                gt.dims()
            )));
        }
        let batch = hazy.unsqueeze_batch().map_err(usage)?;
        let (out, _) = ffa_forward(&ckpt.model, &ckpt.params, &batch).map_err(usage)?;
        let out = out.batch_item(0).map_err(runtime)?;
        dehazed_report.push(
            name.clone(),
            psnr(&out, &gt).map_err(usage)?,
            ssim(&out, &gt).map_err(usage)?,
        );
        baseline_report.push(
            name.clone(),
            psnr(&hazy, &gt).map_err(usage)?,
            ssim(&hazy, &gt).map_err(usage)?,
        );
    }

    dehazed_report.write_csv(&args.report).map_err(classify)?;
    let baseline_path = PathBuf::from(format!("{}.baseline.csv", args.report.display()));
    baseline_report.write_csv(&baseline_path).map_err(classify)?;

    println!("dehazed vs ground truth:");
    print!("{}", dehazed_report.to_table());
    println!();
    println!("hazy input vs ground truth (baseline):");
    print!("{}", baseline_report.to_table());
    println!(
        "improvement: {:+.4} dB PSNR, {:+.4} SSIM",
        dehazed_report.mean_psnr() - baseline_report.mean_psnr(),
        dehazed_report.mean_ssim() - baseline_report.mean_ssim()
    );
    Ok(())
}
