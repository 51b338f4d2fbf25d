//! Workflows behind the command-line subcommands. Each one reads and
//! writes `.vvol` volumes, CSV tables and checkpoints inside a directory.
//!
//! Layout conventions:
//! - dataset: `<case>.image.vvol` + `<case>.label.vvol`
//! - run directory: `config.toml`, `checkpoint.ckpt`, `loss.csv`,
//!   `train_eval.csv`
//! - predictions: `<case>.prob.vvol` + `<case>.pred.vvol`

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::inference::{infer_volume, Prediction};
use crate::loss::{evaluate, EvalReport};
use crate::model::checkpoint::Checkpoint;
use crate::model::YNetr;
use crate::phantom::generate_phantom;
use crate::train::{loss_history_csv, LossRecord, TrainVolume, Trainer};
use crate::volume::{read_vvol, LabelVolume, Volume3D};
use crate::wavelet::split_frequency;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const TRAIN_EVAL_FILE: &str = "train_eval.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_config_echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join(CONFIG_FILE), &cfg.canonical())
}

pub fn read_image(path: &Path) -> Result<Volume3D> {
    read_vvol(path)?.into_volume()
}

pub fn read_label(path: &Path) -> Result<LabelVolume> {
    read_vvol(path)?.into_label()
}

/// File name up to the first `.`.
pub fn case_name(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or_default().to_string()
}

/// Files in `dir` ending in `suffix`, sorted by name.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.to_string_lossy().ends_with(suffix) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Write `phantom.count` image/label pairs into `out`.
pub fn phantom_dataset(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    write_config_echo(cfg, out)?;
    let mut names = Vec::new();
    for i in 0..cfg.phantom.count {
        let mut spec = cfg.phantom.spec.clone();
        spec.seed = spec.seed.wrapping_add(i as u64);
        let (image, label) = generate_phantom(&spec)?;
        let name = format!("case_{i:03}");
        image.write(out.join(format!("{name}.image.vvol")))?;
        label.write(out.join(format!("{name}.label.vvol")))?;
        names.push(name);
    }
    Ok(names)
}

/// Write `<case>.lf.vvol` and `<case>.hf.vvol` next to each other in `out`.
pub fn wavelet_split(input: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let pair = split_frequency(&read_image(input)?)?;
    create_dir(out)?;
    let name = case_name(input);
    let (lf, hf) = (out.join(format!("{name}.lf.vvol")), out.join(format!("{name}.hf.vvol")));
    pair.lf.write(&lf)?;
    pair.hf.write(&hf)?;
    Ok((lf, hf))
}

/// Image/label pairs of a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Volume3D, LabelVolume)>> {
    let images = files_with_suffix(dir, ".image.vvol")?;
    if images.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no *.image.vvol files in {}",
            dir.display()
        )));
    }
    images
        .iter()
        .map(|img| {
            let name = case_name(img);
            let label = read_label(&dir.join(format!("{name}.label.vvol")))?;
            let image = read_image(img)?;
            if !label.matches_grid(&image) {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: image {:?} vs label {:?}",
                    image.shape(),
                    label.shape()
                )));
            }
            Ok((name, image, label))
        })
        .collect()
}

fn parse_loss_csv(text: &str) -> Result<Vec<LossRecord>> {
    let bad = |l: &str| Error::InvalidArgument(format!("malformed loss table row `{l}`"));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(bad(l));
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad(l))?,
                loss: f[1].parse().map_err(|_| bad(l))?,
                dice: f[2].parse().map_err(|_| bad(l))?,
                ce: f[3].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    pub history: Vec<LossRecord>,
    pub eval: EvalReport,
    pub names: Vec<String>,
}

/// Train on a dataset directory into `run_dir`. With `resume`, continue
/// from the run's checkpoint; its model config must match `cfg`.
pub fn train_run(cfg: &RunConfig, data_dir: &Path, run_dir: &Path, resume: bool) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tcfg = cfg.train_config();
    let window = cfg.sampler.window;
    let cases = load_dataset(data_dir)?;
    let data = cases
        .iter()
        .map(|(n, img, lab)| TrainVolume::new(n.clone(), img, lab, tcfg.hu_window, window))
        .collect::<Result<Vec<_>>>()?;

    let ck_path = run_dir.join(CHECKPOINT_FILE);
    let (mut trainer, mut history) = if resume {
        let ck = Checkpoint::load(&ck_path)?;
        ck.to_model(Some(&cfg.model))?;
        let trainer = Trainer::from_checkpoint(&ck, tcfg.clone())?;
        let old = match fs::read_to_string(run_dir.join(LOSS_FILE)) {
            Ok(text) => parse_loss_csv(&text)?,
            Err(_) => Vec::new(),
        };
        let kept = old.into_iter().filter(|r| r.step <= ck.step).collect();
        (trainer, kept)
    } else {
        (Trainer::new(YNetr::new(cfg.model.clone())?, tcfg.clone())?, Vec::new())
    };
    write_config_echo(cfg, run_dir)?;

    let every = tcfg.checkpoint_every as u64;
    let total = tcfg.total_steps();
    log::info!(
        "training {} on {} volume(s) from step {} to {total}",
        cfg.name,
        data.len(),
        trainer.step()
    );
    let new = trainer.run(&data, &cfg.sampler, total, |t, r| {
        if r.step % 10 == 0 || r.step == total {
            log::info!("step {} loss {:.5}", r.step, r.loss);
        }
        if every > 0 && r.step % every == 0 {
            t.checkpoint().save(&ck_path)?;
        }
        Ok(())
    })?;
    history.extend(new);
    trainer.checkpoint().save(&ck_path)?;
    write_text(&run_dir.join(LOSS_FILE), &loss_history_csv(&history))?;

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut names = Vec::new();
    for (name, image, label) in &cases {
        let p = infer_volume(&trainer.model, image, tcfg.hu_window, &cfg.inference)?;
        preds.push(p.mask);
        gts.push(label.clone());
        names.push(name.clone());
    }
    let eval = evaluate(&preds, &gts)?;
    write_text(&run_dir.join(TRAIN_EVAL_FILE), &eval.to_csv(&names))?;
    Ok(TrainOutcome {
        steps: trainer.step(),
        history,
        eval,
        names,
    })
}

/// Predict each input volume with a checkpointed model.
pub fn infer_run(
    cfg: &RunConfig,
    checkpoint: &Path,
    inputs: &[PathBuf],
    out: &Path,
) -> Result<Vec<(String, Prediction)>> {
    let model = Checkpoint::load(checkpoint)?.to_model(None)?;
    create_dir(out)?;
    let mut done = Vec::new();
    for input in inputs {
        let name = case_name(input);
        let p = infer_volume(&model, &read_image(input)?, cfg.train.hu_window, &cfg.inference)?;
        p.prob.write(out.join(format!("{name}.prob.vvol")))?;
        p.mask.write(out.join(format!("{name}.pred.vvol")))?;
        done.push((name, p));
    }
    Ok(done)
}

/// Dice of every `<case>.pred.vvol` in `pred_dir` against
/// `<case>.label.vvol` in `gt_dir`.
pub fn eval_run(pred_dir: &Path, gt_dir: &Path) -> Result<(Vec<String>, EvalReport)> {
    let preds = files_with_suffix(pred_dir, ".pred.vvol")?;
    if preds.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no *.pred.vvol files in {}",
            pred_dir.display()
        )));
    }
    let mut names = Vec::new();
    let mut p = Vec::new();
    let mut g = Vec::new();
    for path in preds {
        let name = case_name(&path);
        p.push(read_label(&path)?);
        g.push(read_label(&gt_dir.join(format!("{name}.label.vvol")))?);
        names.push(name);
    }
    let report = evaluate(&p, &g)?;
    Ok((names, report))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub loss: String,
    pub dice: f64,
}

fn mean_dice(csv: &str) -> Option<f64> {
    csv.lines()
        .find(|l| l.starts_with("mean,"))
        .and_then(|l| l.split(',').nth(1))
        .and_then(|v| v.parse().ok())
}

/// One row per run directory, sorted by Dice descending (ties by name).
pub fn summary(run_dirs: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for dir in run_dirs {
        let cfg = RunConfig::load(dir.join(CONFIG_FILE))?;
        let eval_path = dir.join(TRAIN_EVAL_FILE);
        let dice = mean_dice(&read_text(&eval_path)?).ok_or_else(|| {
            Error::InvalidArgument(format!("{} has no mean row", eval_path.display()))
        })?;
        rows.push(SummaryRow {
            variant: cfg.name.clone(),
            loss: cfg.train.loss.kind.label().to_string(),
            dice,
        });
    }
    rows.sort_by(|a, b| b.dice.total_cmp(&a.dice).then_with(|| a.variant.cmp(&b.variant)));
    Ok(rows)
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::from("variant,loss,dice\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.4}\n", r.variant, r.loss, r.dice));
    }
    s
}
