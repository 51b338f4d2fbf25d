//! Dice and cross-entropy losses, their blend, and the Dice metric.
//!
//! The value-level functions work on plain probability buffers and
//! accumulate in f64; [`segmentation_loss`] builds the same quantities on a
//! tape from logits so they can be differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};
use crate::volume::LabelVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Dice,
    Ce,
    DiceCe,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::Dice => "Dice",
            LossKind::Ce => "CE",
            LossKind::DiceCe => "Dice-CE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight of the Dice term in the blend.
    pub alpha: f64,
    /// Stabilizer added to the Dice denominator only.
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::DiceCe,
            alpha: 0.5,
            dice_eps: 1e-5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.dice_eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "dice eps {} must be positive",
                self.dice_eps
            )));
        }
        Ok(())
    }

    /// Effective Dice weight for the configured kind.
    pub fn dice_weight(&self) -> f64 {
        match self.kind {
            LossKind::Dice => 1.0,
            LossKind::Ce => 0.0,
            LossKind::DiceCe => self.alpha,
        }
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} voxels")));
    }
    Ok(())
}

/// `1 − 2·Σ g·y / (Σ g + Σ y + eps)` over foreground probabilities `y`.
pub fn dice_loss(g: &[f32], y: &[f32], eps: f64) -> Result<f64> {
    same_len(g.len(), y.len(), "dice loss")?;
    let (mut inter, mut sg, mut sy) = (0.0f64, 0.0f64, 0.0f64);
    for (&gi, &yi) in g.iter().zip(y) {
        inter += gi as f64 * yi as f64;
        sg += gi as f64;
        sy += yi as f64;
    }
    Ok(1.0 - 2.0 * inter / (sg + sy + eps))
}

/// Mean over voxels of `−Σ_c g_c log y_c`. Both buffers are
/// (voxels × classes), class-fastest.
pub fn ce_loss(g_onehot: &[f32], y: &[f32], classes: usize) -> Result<f64> {
    same_len(g_onehot.len(), y.len(), "cross-entropy")?;
    if classes == 0 || y.len() % classes != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values is not a multiple of {classes} classes",
            y.len()
        )));
    }
    let voxels = y.len() / classes;
    let total: f64 = g_onehot
        .iter()
        .zip(y)
        .filter(|(&gi, _)| gi != 0.0)
        .map(|(&gi, &yi)| -(gi as f64) * (yi as f64).ln())
        .sum();
    Ok(total / voxels.max(1) as f64)
}

/// `alpha·dice + (1 − alpha)·ce`.
pub fn dice_ce_loss(dice: f64, ce: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(alpha * dice + (1.0 - alpha) * ce)
}

/// Loss value on the tape together with its unweighted components.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub dice: f32,
    pub ce: f32,
}

/// Loss from `(2, d0, d1, d2)` logits against a binary target of the same
/// spatial shape. Dice uses the softmax foreground channel; CE uses the
/// log-softmax of both channels, averaged over voxels.
pub fn segmentation_loss<'t>(
    logits: &Var<'t>,
    target: &Tensor,
    cfg: &LossConfig,
) -> Result<LossParts<'t>> {
    cfg.validate()?;
    let shape = logits.shape().to_vec();
    if shape.len() != 4 || shape[0] != 2 {
        return Err(Error::ShapeMismatch(format!(
            "loss expects (2, d0, d1, d2) logits, got {shape:?}"
        )));
    }
    let spatial = &shape[1..];
    let target_spatial = match target.shape() {
        [1, rest @ ..] | rest => rest,
    };
    if target_spatial != spatial {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} for logits {shape:?}",
            target.shape()
        )));
    }
    let tape = logits.tape();
    let voxels: usize = spatial.iter().product();

    let g_fg = tape.constant(Tensor::new(spatial, target.data().to_vec())?);
    let probs = logits.softmax(0)?;
    let fg = probs.slice(0, 1, 2)?.reshape(spatial)?;
    let inter = fg.mul(&g_fg)?.sum_all();
    let denom = fg.sum_all().add_scalar(g_fg.value().sum() as f32 + cfg.dice_eps as f32);
    let dice = inter.scale(2.0).div(&denom)?.neg().add_scalar(1.0);

    let mut onehot = Vec::with_capacity(2 * voxels);
    onehot.extend(target.data().iter().map(|&t| 1.0 - t));
    onehot.extend_from_slice(target.data());
    let onehot = tape.constant(Tensor::new(&shape, onehot)?);
    let ce = logits
        .log_softmax(0)?
        .mul(&onehot)?
        .sum_all()
        .scale(-1.0 / voxels as f32);

    let w = cfg.dice_weight() as f32;
    let total = match cfg.kind {
        LossKind::Dice => dice.clone(),
        LossKind::Ce => ce.clone(),
        LossKind::DiceCe => dice.scale(w).add(&ce.scale(1.0 - w))?,
    };
    Ok(LossParts {
        total,
        dice: dice.value().item(),
        ce: ce.value().item(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with prediction and ground truth exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            fp: self.fn_,
            fn_: self.fp,
            ..*self
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &LabelVolume, gt: &LabelVolume) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// `2·TP / (2·TP + FP + FN)`; two empty masks score 1.
pub fn dice_coefficient(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return 1.0;
    }
    2.0 * c.tp as f64 / denom as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_volume: Vec<f64>,
    pub counts: Vec<ConfusionCounts>,
    pub mean_dice: f64,
}

impl EvalReport {
    pub fn totals(&self) -> ConfusionCounts {
        self.counts
            .iter()
            .copied()
            .fold(ConfusionCounts::default(), |a, b| a + b)
    }

    /// Comma-separated report: one row per volume, then the mean and totals.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("volume,dice,tp,fp,fn,tn\n");
        for (i, (d, c)) in self.per_volume.iter().zip(&self.counts).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
            out.push_str(&format!("{name},{d:.6},{},{},{},{}\n", c.tp, c.fp, c.fn_, c.tn));
        }
        let t = self.totals();
        out.push_str(&format!(
            "mean,{:.6},{},{},{},{}\n",
            self.mean_dice, t.tp, t.fp, t.fn_, t.tn
        ));
        out
    }
}

/// Per-volume Dice and their unweighted mean.
pub fn evaluate(preds: &[LabelVolume], gts: &[LabelVolume]) -> Result<EvalReport> {
    if preds.len() != gts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} ground truths",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let counts = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| confusion(p, g))
        .collect::<Result<Vec<_>>>()?;
    let per_volume: Vec<f64> = counts.iter().map(dice_coefficient).collect();
    let mean_dice = per_volume.iter().sum::<f64>() / per_volume.len() as f64;
    Ok(EvalReport {
        per_volume,
        counts,
        mean_dice,
    })
}
