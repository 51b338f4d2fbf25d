//! Training loop: balanced windows, Dice/CE loss, AdamW.
//!
//! Draw `k` (counted across steps and batch slots) asks for a positive
//! window when `k` is even and a negative one when odd. Every step seeds its
//! own ChaCha8 stream from `(seed, step)`, so a resumed run continues
//! exactly where an uninterrupted one would be.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{segmentation_loss, LossConfig};
use crate::model::checkpoint::Checkpoint;
use crate::model::YNetr;
use crate::sampler::{pad_to_window, sample_window, Crop, LabelIndex, SamplerConfig};
use crate::tensor::optim::{AdamW, AdamWConfig, AdamWState};
use crate::tensor::{Tape, Tensor};
use crate::volume::{normalize_intensity, LabelVolume, Volume3D, DEFAULT_WINDOW_HU};
use crate::wavelet::split_frequency;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Windows per optimizer step; gradients are averaged.
    pub batch_size: usize,
    pub weight_decay: f32,
    pub loss: LossConfig,
    /// Set from the run's top-level flag.
    #[serde(skip)]
    pub deterministic: bool,
    /// Set from the run's top-level seed.
    #[serde(skip)]
    pub seed: u64,
    /// Stop after this many steps instead of `epochs * steps_per_epoch`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: usize,
    /// Intensity window in HU applied before the frequency split.
    pub hu_window: [f32; 2],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 300,
            steps_per_epoch: 250,
            batch_size: 1,
            weight_decay: 0.01,
            loss: LossConfig::default(),
            deterministic: true,
            seed: 0,
            checkpoint_every: 0,
            max_steps: None,
            hu_window: [DEFAULT_WINDOW_HU.0, DEFAULT_WINDOW_HU.1],
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.max_steps
            .unwrap_or((self.epochs * self.steps_per_epoch) as u64)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be >= 0", self.learning_rate));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 || self.batch_size == 0 {
            return bad("epochs, steps_per_epoch and batch_size must be >= 1".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        if !(self.hu_window[0] < self.hu_window[1]) {
            return bad(format!("hu_window {:?} must be increasing", self.hu_window));
        }
        self.loss
            .validate()
            .map_err(|e| Error::Config(format!("train.loss: {e}")))
    }
}

/// Normalize, pad to the window and split into frequency bands.
pub fn prepare_image(
    image: &Volume3D,
    hu_window: [f32; 2],
    window: [usize; 3],
) -> Result<(Volume3D, Volume3D)> {
    let norm = normalize_intensity(image, hu_window[0], hu_window[1])?.pad_reflect(window);
    let pair = split_frequency(&norm)?;
    Ok((pair.lf, pair.hf))
}

/// One training volume with its frequency pair computed once.
#[derive(Clone, Debug)]
pub struct TrainVolume {
    pub name: String,
    pub lf: Volume3D,
    pub hf: Volume3D,
    pub label: LabelVolume,
    index: LabelIndex,
}

impl TrainVolume {
    pub fn new(
        name: impl Into<String>,
        image: &Volume3D,
        label: &LabelVolume,
        hu_window: [f32; 2],
        window: [usize; 3],
    ) -> Result<Self> {
        if !label.matches_grid(image) {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} and label {:?}",
                image.shape(),
                label.shape()
            )));
        }
        let (lf, hf) = prepare_image(image, hu_window, window)?;
        let (lf, hf, label) = pad_to_window(&lf, &hf, label, window);
        let index = LabelIndex::new(&label);
        Ok(Self {
            name: name.into(),
            lf,
            hf,
            label,
            index,
        })
    }

    /// Draw a window, falling back to the other class when the requested
    /// one does not exist in this volume.
    pub fn draw<R: Rng + ?Sized>(
        &self,
        cfg: &SamplerConfig,
        want_positive: bool,
        rng: &mut R,
    ) -> Result<Crop> {
        let go = |pos: bool, rng: &mut R| {
            sample_window(&self.lf, &self.hf, &self.label, &self.index, cfg, pos, rng)
        };
        match go(want_positive, rng) {
            Err(Error::NoForeground) => {
                log::warn!("{}: no tumor voxels, drawing a negative window", self.name);
                go(false, rng)
            }
            Err(Error::NoBackground) => {
                log::warn!("{}: no tumor-free window, drawing a positive window", self.name);
                go(true, rng)
            }
            r => r,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f32,
    pub dice: f32,
    pub ce: f32,
}

pub fn loss_history_csv(records: &[LossRecord]) -> String {
    let mut s = String::from("step,loss,dice,ce\n");
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.dice, r.ce));
    }
    s
}

/// Model, optimizer and step counter.
pub struct Trainer {
    pub model: YNetr,
    pub optimizer: AdamW,
    pub config: TrainConfig,
    step: u64,
}

fn window_tensor(v: &Volume3D) -> Tensor {
    v.to_tensor()
}

fn label_tensor(l: &LabelVolume) -> Tensor {
    let [nx, ny, nz] = l.shape();
    let data = l.labels().iter().map(|&v| v as f32).collect();
    Tensor::new(&[1, nz, ny, nx], data).expect("label shape")
}

impl Trainer {
    pub fn new(model: YNetr, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params: Vec<Tensor> = model.params().tensors().cloned().collect();
        let optimizer = AdamW::new(config.adamw(), &params);
        Ok(Self {
            model,
            optimizer,
            config,
            step: 0,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ck.to_model(None)?;
        let state = match &ck.optimizer {
            Some(s) => s.clone(),
            None => AdamWState::new(&model.params().tensors().cloned().collect::<Vec<_>>()),
        };
        Ok(Self {
            model,
            optimizer: AdamW::from_state(config.adamw(), state),
            config,
            step: ck.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.step, Some(&self.optimizer.state))
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    fn check_window(&self, sampler: &SamplerConfig) -> Result<()> {
        let [wx, wy, wz] = sampler.window;
        if self.model.config().input_dims != [wz, wy, wx] {
            return Err(Error::Config(format!(
                "sampler window {:?} (x, y, z) does not match model input {:?} (z, y, x)",
                sampler.window,
                self.model.config().input_dims
            )));
        }
        Ok(())
    }

    /// One optimizer step over `batch_size` windows.
    pub fn train_step(&mut self, data: &[TrainVolume], sampler: &SamplerConfig) -> Result<LossRecord> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        self.check_window(sampler)?;
        let step = self.step;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        let batch = self.config.batch_size;
        let mut grads: Vec<Tensor> = Vec::new();
        let (mut loss_sum, mut dice_sum, mut ce_sum) = (0.0f64, 0.0f64, 0.0f64);
        for b in 0..batch {
            let draw = step * batch as u64 + b as u64;
            let vol = &data[rng.random_range(0..data.len())];
            let crop = vol.draw(sampler, draw % 2 == 0, &mut rng)?;
            let tape = Tape::new();
            let p = self.model.params().bind(&tape);
            let lf = tape.constant(window_tensor(&crop.lf));
            let hf = tape.constant(window_tensor(&crop.hf));
            let logits = self.model.forward(&p, &lf, &hf)?;
            let parts = segmentation_loss(&logits, &label_tensor(&crop.label), &self.config.loss)?;
            let value = parts.total.value().item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: step as usize,
                    value,
                });
            }
            let mut g = tape.backward(&parts.total)?;
            if b == 0 {
                grads = p.vars().iter().map(|v| g.take(v)).collect();
            } else {
                for (acc, v) in grads.iter_mut().zip(p.vars()) {
                    acc.add_assign(&g.take(v));
                }
            }
            loss_sum += value as f64;
            dice_sum += parts.dice as f64;
            ce_sum += parts.ce as f64;
        }
        if batch > 1 {
            let k = 1.0 / batch as f32;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
        self.optimizer.step(self.model.params_mut().tensors_mut(), &grads)?;
        self.step += 1;
        let n = batch as f64;
        Ok(LossRecord {
            step: self.step,
            loss: (loss_sum / n) as f32,
            dice: (dice_sum / n) as f32,
            ce: (ce_sum / n) as f32,
        })
    }

    /// Run until `until` completed steps, calling `on_step` after each one.
    pub fn run(
        &mut self,
        data: &[TrainVolume],
        sampler: &SamplerConfig,
        until: u64,
        mut on_step: impl FnMut(&Trainer, &LossRecord) -> Result<()>,
    ) -> Result<Vec<LossRecord>> {
        let mut out = Vec::new();
        while self.step < until {
            let r = self.train_step(data, sampler)?;
            log::debug!("step {} loss {:.5} dice {:.5} ce {:.5}", r.step, r.loss, r.dice, r.ce);
            on_step(self, &r)?;
            out.push(r);
        }
        Ok(out)
    }
}
