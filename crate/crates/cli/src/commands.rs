use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use spikedistill::analysis::risk::{variance_experiment, ToyDistribution};
use spikedistill::analysis::sfr::write_sfr;
use spikedistill::analysis::{early_exit_eval, sfr_map};
use spikedistill::checkpoint;
use spikedistill::config::KvConfig;
use spikedistill::data::events::{integrate_events, read_evst, write_evst};
use spikedistill::data::idx::write_idx;
use spikedistill::data::synth::{synth_dataset, SynthData, SynthKind};
use spikedistill::data::Dataset;
use spikedistill::diagnostics::gradient_suite;
use spikedistill::model::{build_network, Network};
use spikedistill::train::{evaluate, fit, MetricsRow};
use spikedistill::{Error, Result};

use crate::datasets::{self, with_splits, Splits};
use crate::run_config::{parse_overrides, RunConfig};
use crate::{ConfigArgs, EvalArgs, TrainArgs, Tool};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// File named by `--config` (or `fallback`), then `--set` pairs.
fn merged(args: &ConfigArgs, fallback: Option<PathBuf>) -> Result<KvConfig> {
    let mut kv = match args.config.clone().or(fallback) {
        Some(p) if p.exists() || args.config.is_some() => KvConfig::load(&p)?,
        _ => KvConfig::default(),
    };
    kv.merge(&parse_overrides(&args.set)?);
    Ok(kv)
}

fn check_input(net: &Network<f32>, splits: &Splits) -> Result<()> {
    let ([c, h, w], classes) = splits.geometry();
    let spec = net.spec();
    if (spec.input_channels, spec.input_size, spec.input_size, spec.num_classes) != (c, h, w, classes) {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{}x{} inputs and {} classes, data are {c}x{h}x{w} with {classes} classes",
            spec.input_channels, spec.input_size, spec.input_size, spec.num_classes
        )));
    }
    Ok(())
}

fn check_frames(splits: &Splits, steps: usize) -> Result<()> {
    match splits.frames_available() {
        Some(f) if f < steps => Err(Error::Config(format!(
            "event samples provide {f} frames but {steps} timesteps were requested"
        ))),
        _ => Ok(()),
    }
}

pub fn train(args: &TrainArgs) -> Result<ExitCode> {
    let mut kv = merged(&args.cfg, None)?;
    let flags: [(&str, Option<String>); 7] = [
        ("distill.alpha", args.alpha.map(|v| v.to_string())),
        ("distill.beta", args.beta.map(|v| v.to_string())),
        ("distill.student_steps", args.ts.map(|v| v.to_string())),
        ("distill.teacher_steps", args.tt.map(|v| v.to_string())),
        ("train.seed", args.seed.map(|v| v.to_string())),
        ("train.epochs", args.epochs.map(|v| v.to_string())),
        ("output.dir", args.out.as_ref().map(|p| p.display().to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            kv.set(key, v);
        }
    }
    let rc = RunConfig::from_kv(&kv)?;
    let splits = datasets::load(&rc.data)?;
    check_frames(&splits, rc.distill.teacher_steps)?;
    let ([c, h, w], classes) = splits.geometry();
    if h != w {
        return Err(Error::Config(format!("inputs must be square, got {h}x{w}")));
    }
    let spec = rc.network.spec(c, h, classes)?;
    let mut net = build_network::<f32>(&spec, &rc.neuron, rc.train.seed)?;

    let out = &rc.out_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    write_file(&out.join("resolved.cfg"), rc.to_kv().to_text())?;
    let metrics_path = out.join("metrics.csv");
    write_file(&metrics_path, format!("{}\n", MetricsRow::CSV_HEADER))?;
    let mut metrics = OpenOptions::new()
        .append(true)
        .open(&metrics_path)
        .map_err(io_err(&metrics_path))?;

    let report = with_splits!(&splits, |train, test| fit(
        &mut net,
        train,
        test,
        &rc.distill,
        &rc.train,
        |e| {
            writeln!(metrics, "{}\n{}", e.train.to_csv(), e.test.to_csv()).map_err(io_err(&metrics_path))?;
            eprintln!(
                "epoch {:>3}  loss {:.4}  train {:.4}  test {:.4}{}",
                e.epoch,
                e.train.total_loss,
                e.train.accuracy,
                e.test.accuracy,
                if e.is_best { "  best" } else { "" }
            );
            if e.is_best {
                e.network.save(&out.join("best"))?;
            }
            Ok(())
        }
    ))?;
    net.save(&out.join("final"))?;
    println!("accuracy={}", report.final_accuracy);
    if let Some(w) = report.final_weak_accuracy {
        println!("weak_accuracy={w}");
    }
    println!("best_accuracy={}", report.best_accuracy);
    println!("best_epoch={}", report.best_epoch);
    Ok(ExitCode::SUCCESS)
}

/// Checkpoint, run config and test data for the commands that inspect a
/// trained network.
fn load_trained(checkpoint: &Path, cfg: &ConfigArgs) -> Result<(Network<f32>, RunConfig, Splits)> {
    if !checkpoint.is_dir() {
        return Err(Error::Io {
            path: checkpoint.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint directory not found"),
        });
    }
    let net = Network::<f32>::load(checkpoint)?;
    let fallback = checkpoint.parent().map(|p| p.join("resolved.cfg"));
    let rc = RunConfig::from_kv(&merged(cfg, fallback)?)?;
    let splits = datasets::load(&rc.data)?;
    check_input(&net, &splits)?;
    Ok((net, rc, splits))
}

pub fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let (mut net, rc, splits) = load_trained(&args.checkpoint, &args.cfg)?;
    let steps = args.ts.unwrap_or(rc.distill.student_steps);
    if steps == 0 {
        return Err(Error::Config("--ts must be positive".into()));
    }
    check_frames(&splits, steps)?;
    if steps > rc.distill.teacher_steps {
        eprintln!(
            "note: evaluating at {steps} timesteps, more than the {} used in training",
            rc.distill.teacher_steps
        );
    }
    let report = with_splits!(&splits, |_train, test| evaluate(&mut net, test, steps, rc.train.batch_size))?;
    println!("accuracy={}", report.accuracy);
    if let Some(w) = report.weak_accuracy {
        println!("weak_accuracy={w}");
    }
    println!("timesteps={steps}");
    println!("samples={}", report.samples);
    Ok(ExitCode::SUCCESS)
}

fn parse_hw(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--size expects HxW with positive sides, got `{text}`"));
    let (h, w) = text.split_once('x').ok_or_else(bad)?;
    let h: usize = h.parse().map_err(|_| bad())?;
    let w: usize = w.parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn tools(tool: Tool) -> Result<ExitCode> {
    match tool {
        Tool::Gradcheck { seed } => {
            let results = gradient_suite(seed)?;
            let mut worst = 0.0f64;
            let mut ok = true;
            for r in &results {
                println!(
                    "{:<30} {:.3e}  (tolerance {:.0e})  {}",
                    r.name,
                    r.max_relative_error,
                    r.tolerance,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                worst = worst.max(r.max_relative_error);
                ok &= r.passed();
            }
            println!("max_relative_error={worst:e}");
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Tool::Integrate {
            input,
            window_ms,
            size,
            out,
        } => {
            let stream = read_evst(&input)?;
            let target = size.as_deref().map(parse_hw).transpose()?;
            let ft = integrate_events(&stream, window_ms, target)?;
            std::fs::create_dir_all(&out).map_err(io_err(&out))?;
            checkpoint::save(&out, &[("frames", &ft.frames)])?;
            let shape = ft.frames.shape();
            println!("frames={}", shape[0]);
            println!("shape={}", shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x"));
            println!("label={}", stream.label());
            Ok(ExitCode::SUCCESS)
        }
        Tool::Sfr {
            checkpoint,
            cfg,
            ts,
            stage,
            index,
            out,
        } => {
            let (mut net, rc, splits) = load_trained(&checkpoint, &cfg)?;
            let steps = ts.unwrap_or(rc.distill.student_steps);
            check_frames(&splits, steps)?;
            let stage = stage.unwrap_or(net.spec().attach_stage);
            let batch = with_splits!(&splits, |_train, test| {
                if index >= test.len() {
                    return Err(Error::Config(format!("--index {index} but the test split has {} samples", test.len())));
                }
                test.batch::<f32>(&[index], None)
            })?;
            let sfr = sfr_map(&mut net, &batch.input, steps, stage)?;
            write_sfr(&out, "sfr", &sfr)?;
            println!("mean_sfr={}", sfr.mean);
            println!("label={}", batch.labels[0]);
            Ok(ExitCode::SUCCESS)
        }
        Tool::Risk {
            contexts,
            n,
            m,
            seed,
            out,
        } => {
            if contexts != "toy2" {
                return Err(Error::Config(format!("unknown context set `{contexts}` (expected toy2)")));
            }
            let report = variance_experiment(&ToyDistribution::toy2(), &ToyDistribution::toy2_losses(), n, m, seed)?;
            println!("population_risk={}", report.population_risk);
            println!("empirical_mean={} empirical_var={}", report.empirical_mean, report.empirical_var);
            println!("distilled_mean={} distilled_var={}", report.distilled_mean, report.distilled_var);
            println!("variance_ratio={}", report.variance_ratio);
            if let Some(p) = out {
                write_file(&p, format!("{}\n{}\n", spikedistill::analysis::RiskReport::CSV_HEADER, report.to_csv()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Tool::EarlyExit {
            checkpoint,
            cfg,
            ts,
            threshold,
        } => {
            let (mut net, rc, splits) = load_trained(&checkpoint, &cfg)?;
            let steps = ts.unwrap_or(rc.distill.student_steps);
            check_frames(&splits, steps)?;
            let r = with_splits!(&splits, |_train, test| early_exit_eval(
                &mut net,
                test,
                steps,
                Some(threshold),
                rc.train.batch_size
            ))?;
            println!("full_accuracy={}", r.full_accuracy);
            println!("weak_accuracy={}", r.weak_accuracy);
            if let Some(b) = r.blended_accuracy {
                println!("blended_accuracy={b}");
            }
            println!("exit_fraction={}", r.exit_fraction);
            Ok(ExitCode::SUCCESS)
        }
        Tool::Synth {
            kind,
            n,
            noise,
            seed,
            out,
        } => {
            let kind: SynthKind = kind.parse()?;
            std::fs::create_dir_all(&out).map_err(io_err(&out))?;
            match synth_dataset(kind, n, noise, seed)? {
                SynthData::Images(ds) => {
                    let img = ds.images();
                    let bytes: Vec<u8> = img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
                    write_idx(&out.join("images.idx"), img.shape(), &bytes)?;
                    let labels: Vec<u8> = ds.labels().iter().map(|&l| l as u8).collect();
                    write_idx(&out.join("labels.idx"), &[labels.len()], &labels)?;
                }
                SynthData::Events(streams) => {
                    for (i, s) in streams.iter().enumerate() {
                        write_evst(&out.join(format!("{i:05}.evst")), s)?;
                    }
                }
            }
            println!("samples={n}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
