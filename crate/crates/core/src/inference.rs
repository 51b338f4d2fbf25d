//! Whole-volume prediction with overlapping windows.
//!
//! Windows are placed on a regular grid per axis (see [`tile_positions`]),
//! each window's foreground probability is accumulated into a sum buffer
//! together with a per-voxel weight, and the blended probability is
//! `sum / weight`. Uniform weights are the default; a centre-weighted
//! Gaussian is available behind a flag.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::YNetr;
use crate::tensor::Tensor;
use crate::train::prepare_image;
use crate::volume::{LabelVolume, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub overlap: f32,
    pub gaussian: bool,
    /// Gaussian sigma as a fraction of the window size.
    pub gaussian_sigma: f32,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            overlap: 0.5,
            gaussian: false,
            gaussian_sigma: 0.125,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(Error::Config(format!(
                "inference: overlap {} outside [0, 1)",
                self.overlap
            )));
        }
        if self.gaussian && !(self.gaussian_sigma > 0.0) {
            return Err(Error::Config("inference: gaussian_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Window start offsets along one axis.
pub fn tile_positions(dim: usize, window: usize, overlap: f32) -> Result<Vec<usize>> {
    if window == 0 || window > dim {
        return Err(Error::InvalidArgument(format!(
            "window {window} does not fit in {dim} voxels; pad first"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = ((window as f64 * (1.0 - overlap as f64)).round() as usize).max(1);
    let last = dim - window;
    let mut starts = Vec::new();
    let mut s = 0;
    loop {
        let clamped = s.min(last);
        if starts.last() != Some(&clamped) {
            starts.push(clamped);
        }
        if s >= last {
            break;
        }
        s += stride;
    }
    Ok(starts)
}

/// Anything that maps an LF/HF window pair to `(2, wz, wy, wx)` logits.
pub trait WindowModel {
    /// Window size `(wx, wy, wz)`.
    fn window(&self) -> [usize; 3];
    fn window_logits(&self, lf: &Tensor, hf: &Tensor) -> Result<Tensor>;
}

impl WindowModel for YNetr {
    fn window(&self) -> [usize; 3] {
        let [d0, d1, d2] = self.config().input_dims;
        [d2, d1, d0]
    }

    fn window_logits(&self, lf: &Tensor, hf: &Tensor) -> Result<Tensor> {
        self.predict(lf, hf)
    }
}

/// Per-voxel softmax probability of class 1 from `(2, ...)` logits.
pub fn foreground_probability(logits: &Tensor) -> Result<Vec<f32>> {
    if logits.shape().first() != Some(&2) {
        return Err(Error::ShapeMismatch(format!(
            "expected two-class logits, got {:?}",
            logits.shape()
        )));
    }
    let n = logits.numel() / 2;
    let (l0, l1) = logits.data().split_at(n);
    Ok(l0
        .iter()
        .zip(l1)
        .map(|(&a, &b)| {
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            eb / (ea + eb)
        })
        .collect())
}

fn gaussian_weights(window: [usize; 3], sigma_frac: f32) -> Vec<f32> {
    let axis = |w: usize| -> Vec<f32> {
        let sigma = sigma_frac * w as f32;
        let c = (w as f32 - 1.0) / 2.0;
        (0..w)
            .map(|i| (-((i as f32 - c).powi(2)) / (2.0 * sigma * sigma)).exp().max(1e-6))
            .collect()
    };
    let (gx, gy, gz) = (axis(window[0]), axis(window[1]), axis(window[2]));
    let mut out = Vec::with_capacity(window.iter().product());
    for z in &gz {
        for y in &gy {
            for x in &gx {
                out.push(x * y * z);
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub prob: Volume3D,
    pub mask: LabelVolume,
}

/// Threshold at 0.5, ties to background.
pub fn threshold(prob: &Volume3D) -> Result<LabelVolume> {
    let labels = prob.voxels().iter().map(|&p| u8::from(p > 0.5)).collect();
    LabelVolume::new(prob.shape(), prob.spacing_mm(), labels)
}

/// Blend windows over an LF/HF pair at least one window in size.
pub fn infer_pair<M: WindowModel + ?Sized>(
    model: &M,
    lf: &Volume3D,
    hf: &Volume3D,
    cfg: &InferenceConfig,
) -> Result<Prediction> {
    cfg.validate()?;
    if lf.shape() != hf.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lf {:?} vs hf {:?}",
            lf.shape(),
            hf.shape()
        )));
    }
    let shape = lf.shape();
    let w = model.window();
    let starts = (0..3)
        .map(|a| tile_positions(shape[a], w[a], cfg.overlap))
        .collect::<Result<Vec<_>>>()?;
    let weights = cfg.gaussian.then(|| gaussian_weights(w, cfg.gaussian_sigma));
    let n: usize = shape.iter().product();
    let mut sum = vec![0f32; n];
    let mut count = vec![0f32; n];
    for &oz in &starts[2] {
        for &oy in &starts[1] {
            for &ox in &starts[0] {
                let o = [ox, oy, oz];
                let logits = model.window_logits(
                    &lf.crop(o, w)?.to_tensor(),
                    &hf.crop(o, w)?.to_tensor(),
                )?;
                if logits.shape() != [2, w[2], w[1], w[0]] {
                    return Err(Error::ShapeMismatch(format!(
                        "model returned {:?} for a {w:?} window",
                        logits.shape()
                    )));
                }
                let p = foreground_probability(&logits)?;
                let mut k = 0;
                for z in oz..oz + w[2] {
                    for y in oy..oy + w[1] {
                        let row = shape[0] * (y + shape[1] * z);
                        for x in ox..ox + w[0] {
                            let wt = weights.as_ref().map_or(1.0, |g| g[k]);
                            sum[row + x] += wt * p[k];
                            count[row + x] += wt;
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    let prob: Vec<f32> = sum.iter().zip(&count).map(|(s, c)| s / c).collect();
    let prob = lf.with_voxels(prob)?;
    let mask = threshold(&prob)?;
    Ok(Prediction { prob, mask })
}

/// Full pipeline on a raw HU volume: window, pad, split, tile, crop back.
pub fn infer_volume<M: WindowModel + ?Sized>(
    model: &M,
    image: &Volume3D,
    hu_window: [f32; 2],
    cfg: &InferenceConfig,
) -> Result<Prediction> {
    let window = model.window();
    let (lf, hf) = prepare_image(image, hu_window, window)?;
    let pred = infer_pair(model, &lf, &hf, cfg)?;
    if lf.shape() == image.shape() {
        return Ok(pred);
    }
    let prob = pred.prob.crop([0; 3], image.shape())?;
    let mask = threshold(&prob)?;
    Ok(Prediction { prob, mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant([usize; 3], f32);

    impl WindowModel for Constant {
        fn window(&self) -> [usize; 3] {
            self.0
        }
        fn window_logits(&self, lf: &Tensor, _: &Tensor) -> Result<Tensor> {
            let n = lf.numel();
            let mut d = vec![0.0; n];
            d.extend(std::iter::repeat_n(self.1, n));
            Tensor::new(&[2, self.0[2], self.0[1], self.0[0]], d)
        }
    }

    #[test]
    fn positions() {
        assert_eq!(tile_positions(128, 128, 0.5).unwrap(), vec![0]);
        assert_eq!(tile_positions(192, 128, 0.5).unwrap(), vec![0, 64]);
        assert_eq!(tile_positions(160, 128, 0.5).unwrap(), vec![0, 32]);
        assert_eq!(tile_positions(10, 4, 0.0).unwrap(), vec![0, 4, 6]);
        assert!(tile_positions(100, 128, 0.5).is_err());
        assert!(tile_positions(200, 128, 1.0).is_err());
    }

    #[test]
    fn constant_logits_blend_to_constant() {
        let m = Constant([8, 6, 4], 1.5);
        let v = Volume3D::filled([13, 9, 11], [1.0; 3], 0.0).unwrap();
        let want = 1.0 / (1.0 + (-1.5f32).exp());
        for gaussian in [false, true] {
            let cfg = InferenceConfig { gaussian, ..InferenceConfig::default() };
            let p = infer_pair(&m, &v, &v, &cfg).unwrap();
            assert!(p.prob.voxels().iter().all(|&x| (x - want).abs() < 1e-6));
            assert_eq!(p.mask.foreground_count(), 13 * 9 * 11);
        }
    }

    #[test]
    fn small_volume_is_padded_and_cropped() {
        let m = Constant([8, 8, 8], -2.0);
        let v = Volume3D::filled([5, 8, 3], [1.0; 3], 10.0).unwrap();
        let p = infer_volume(&m, &v, [-175.0, 250.0], &InferenceConfig::default()).unwrap();
        assert_eq!(p.prob.shape(), [5, 8, 3]);
        assert_eq!(p.mask.foreground_count(), 0);
    }

    #[test]
    fn tie_goes_to_background() {
        let m = Constant([4, 4, 4], 0.0);
        let v = Volume3D::filled([4, 4, 4], [1.0; 3], 0.0).unwrap();
        let p = infer_pair(&m, &v, &v, &InferenceConfig::default()).unwrap();
        assert!(p.prob.voxels().iter().all(|&x| x == 0.5));
        assert_eq!(p.mask.foreground_count(), 0);
    }
}
