//! Balanced window sampling for training.
//!
//! Positive windows are centred on a random tumor voxel, negative windows
//! are drawn uniformly among tumor-free windows (found with a summed-area
//! table). Both are then translated by a random offset of up to
//! `jitter_max` voxels per axis and clamped so the window stays inside the
//! volume and keeps its class.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, LabelVolume, Volume3D};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Window size in voxels, `(wx, wy, wz)`.
    pub window: [usize; 3],
    pub jitter_max: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            window: [128, 128, 128],
            jitter_max: 48,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!(
                "sampler: window {:?} has an empty axis",
                self.window
            )));
        }
        Ok(())
    }
}

/// Placement of one crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub origin: [usize; 3],
    /// Offset actually applied to the targeted origin, per axis.
    pub jitter: [i64; 3],
    pub positive: bool,
}

#[derive(Clone, Debug)]
pub struct Crop {
    pub lf: Volume3D,
    pub hf: Volume3D,
    pub label: LabelVolume,
    pub window: Window,
}

/// Inclusive 3-D prefix sums of the label, `(nx+1)(ny+1)(nz+1)` entries.
#[derive(Clone, Debug)]
pub struct SummedArea {
    dims: [usize; 3],
    table: Vec<u32>,
}

impl SummedArea {
    pub fn new(label: &LabelVolume) -> Self {
        let [nx, ny, nz] = label.shape();
        let dims = [nx + 1, ny + 1, nz + 1];
        let mut table = vec![0u32; dims.iter().product()];
        let at = |x: usize, y: usize, z: usize| x + dims[0] * (y + dims[1] * z);
        for z in 1..=nz {
            for y in 1..=ny {
                for x in 1..=nx {
                    let v = label.get(x - 1, y - 1, z - 1) as i64;
                    let s = v + table[at(x - 1, y, z)] as i64 + table[at(x, y - 1, z)] as i64
                        + table[at(x, y, z - 1)] as i64
                        - table[at(x - 1, y - 1, z)] as i64
                        - table[at(x - 1, y, z - 1)] as i64
                        - table[at(x, y - 1, z - 1)] as i64
                        + table[at(x - 1, y - 1, z - 1)] as i64;
                    table[at(x, y, z)] = s as u32;
                }
            }
        }
        Self { dims, table }
    }

    /// Foreground voxels in the box `[o, o + size)`.
    pub fn count(&self, o: [usize; 3], size: [usize; 3]) -> u64 {
        let d = self.dims;
        let t = |x: usize, y: usize, z: usize| self.table[x + d[0] * (y + d[1] * z)] as i64;
        let (x0, y0, z0) = (o[0], o[1], o[2]);
        let (x1, y1, z1) = (o[0] + size[0], o[1] + size[1], o[2] + size[2]);
        let s = t(x1, y1, z1) - t(x0, y1, z1) - t(x1, y0, z1) - t(x1, y1, z0)
            + t(x0, y0, z1)
            + t(x0, y1, z0)
            + t(x1, y0, z0)
            - t(x0, y0, z0);
        s as u64
    }
}

/// Reflect-pad all three volumes up to at least the window.
pub fn pad_to_window(
    lf: &Volume3D,
    hf: &Volume3D,
    label: &LabelVolume,
    window: [usize; 3],
) -> (Volume3D, Volume3D, LabelVolume) {
    (
        lf.pad_reflect(window),
        hf.pad_reflect(window),
        label.pad_reflect(window),
    )
}

/// Label statistics reused across draws on one volume.
#[derive(Clone, Debug)]
pub struct LabelIndex {
    shape: [usize; 3],
    foreground: Vec<usize>,
    sat: SummedArea,
}

impl LabelIndex {
    pub fn new(label: &LabelVolume) -> Self {
        let foreground = label
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 1)
            .map(|(i, _)| i)
            .collect();
        Self {
            shape: label.shape(),
            foreground,
            sat: SummedArea::new(label),
        }
    }

    pub fn sat(&self) -> &SummedArea {
        &self.sat
    }
}

fn jitter_draw<R: Rng + ?Sized>(rng: &mut R, j: usize) -> [i64; 3] {
    let j = j as i64;
    [0; 3].map(|_| rng.random_range(-j..=j))
}

fn clamp_axis(v: i64, lo: usize, hi: usize) -> usize {
    v.clamp(lo as i64, hi as i64) as usize
}

/// Choose a window origin of the requested class.
pub fn choose_window<R: Rng + ?Sized>(
    index: &LabelIndex,
    cfg: &SamplerConfig,
    want_positive: bool,
    rng: &mut R,
) -> Result<Window> {
    let shape = index.shape;
    let w = cfg.window;
    if (0..3).any(|a| w[a] > shape[a]) {
        return Err(Error::InvalidArgument(format!(
            "window {w:?} exceeds volume {shape:?}; pad first"
        )));
    }
    let max_origin = [0, 1, 2].map(|a| shape[a] - w[a]);
    if want_positive {
        if index.foreground.is_empty() {
            return Err(Error::NoForeground);
        }
        let i = index.foreground[rng.random_range(0..index.foreground.len())];
        let v = [i % shape[0], (i / shape[0]) % shape[1], i / (shape[0] * shape[1])];
        // origins whose window still contains v
        let lo = [0, 1, 2].map(|a| (v[a] + 1).saturating_sub(w[a]));
        let hi = [0, 1, 2].map(|a| v[a].min(max_origin[a]));
        let centre = [0, 1, 2].map(|a| clamp_axis(v[a] as i64 - (w[a] / 2) as i64, lo[a], hi[a]));
        let j = jitter_draw(rng, cfg.jitter_max);
        let origin = [0, 1, 2].map(|a| clamp_axis(centre[a] as i64 + j[a], lo[a], hi[a]));
        let jitter = [0, 1, 2].map(|a| origin[a] as i64 - centre[a] as i64);
        return Ok(Window {
            origin,
            jitter,
            positive: true,
        });
    }
    let is_clear = |o: [usize; 3]| index.sat.count(o, w) == 0;
    let mut base = None;
    for _ in 0..64 {
        let o = [0, 1, 2].map(|a| rng.random_range(0..=max_origin[a]));
        if is_clear(o) {
            base = Some(o);
            break;
        }
    }
    let base = match base {
        Some(o) => o,
        None => {
            let mut clear = Vec::new();
            for z in 0..=max_origin[2] {
                for y in 0..=max_origin[1] {
                    for x in 0..=max_origin[0] {
                        if is_clear([x, y, z]) {
                            clear.push([x, y, z]);
                        }
                    }
                }
            }
            if clear.is_empty() {
                return Err(Error::NoBackground);
            }
            clear[rng.random_range(0..clear.len())]
        }
    };
    for _ in 0..8 {
        let j = jitter_draw(rng, cfg.jitter_max);
        let o = [0, 1, 2].map(|a| clamp_axis(base[a] as i64 + j[a], 0, max_origin[a]));
        if is_clear(o) {
            return Ok(Window {
                origin: o,
                jitter: [0, 1, 2].map(|a| o[a] as i64 - base[a] as i64),
                positive: false,
            });
        }
    }
    Ok(Window {
        origin: base,
        jitter: [0; 3],
        positive: false,
    })
}

/// Crop aligned LF/HF/label windows of the requested class.
pub fn sample_window<R: Rng + ?Sized>(
    lf: &Volume3D,
    hf: &Volume3D,
    label: &LabelVolume,
    index: &LabelIndex,
    cfg: &SamplerConfig,
    want_positive: bool,
    rng: &mut R,
) -> Result<Crop> {
    if !label.matches_grid(lf) || !label.matches_grid(hf) || index.shape != label.shape() {
        return Err(Error::ShapeMismatch(format!(
            "lf {:?}, hf {:?}, label {:?} are not aligned",
            lf.shape(),
            hf.shape(),
            label.shape()
        )));
    }
    let window = choose_window(index, cfg, want_positive, rng)?;
    Ok(Crop {
        lf: lf.crop(window.origin, cfg.window)?,
        hf: hf.crop(window.origin, cfg.window)?,
        label: label.crop(window.origin, cfg.window)?,
        window,
    })
}

/// Tumor voxels inside a window, counted directly.
pub fn count_in_window(label: &LabelVolume, origin: [usize; 3], size: [usize; 3]) -> usize {
    let s = label.shape();
    let mut n = 0;
    for z in origin[2]..origin[2] + size[2] {
        for y in origin[1]..origin[1] + size[1] {
            for x in origin[0]..origin[0] + size[0] {
                n += label.labels()[linear_index(s, x, y, z)] as usize;
            }
        }
    }
    n
}
