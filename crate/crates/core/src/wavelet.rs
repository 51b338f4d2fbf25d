//! Single-level orthonormal 2-D Haar transform and the low/high frequency
//! split of a volume.
//!
//! Each axial slice (fixed z) is analysed independently. The low-frequency
//! volume is the synthesis of the approximation band alone; the
//! high-frequency volume is the synthesis of the three detail bands
//! (horizontal, vertical, diagonal) with the approximation zeroed. The two
//! always add back to the input.
//!
//! Band naming is (x filter, y filter): `hl` is high-pass along x and
//! low-pass along y. For the 2×2 block `[a b; c d]` (x across, y down):
//!
//! ```text
//! ll = (a + b + c + d) / 2     lh = (a + b - c - d) / 2
//! hl = (a - b + c - d) / 2     hh = (a - b - c + d) / 2
//! ```

use crate::error::{Error, Result};
use crate::volume::{reflect_index, Volume3D};

/// A 2-D plane, x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(nx: usize, ny: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::ShapeMismatch(format!(
                "plane {nx}x{ny} with {} values",
                data.len()
            )));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            data: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[x + self.nx * y]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet2D {
    pub ll: Plane,
    pub lh: Plane,
    pub hl: Plane,
    pub hh: Plane,
    /// Size of the analysed plane before any reflect padding.
    pub source_nx: usize,
    pub source_ny: usize,
}

impl SubbandSet2D {
    pub fn was_padded(&self) -> bool {
        self.source_nx % 2 == 1 || self.source_ny % 2 == 1
    }

    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|p| p.data.iter())
            .map(|&v| v as f64 * v as f64)
            .sum()
    }
}

pub fn dwt2_haar(plane: &Plane) -> Result<SubbandSet2D> {
    if plane.nx < 2 || plane.ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "haar analysis needs a plane of at least 2x2, got {}x{}",
            plane.nx, plane.ny
        )));
    }
    let hx = plane.nx.div_ceil(2);
    let hy = plane.ny.div_ceil(2);
    let px = |x: usize| reflect_index(x as isize, plane.nx);
    let py = |y: usize| reflect_index(y as isize, plane.ny);
    let mut ll = Plane::zeros(hx, hy);
    let mut lh = Plane::zeros(hx, hy);
    let mut hl = Plane::zeros(hx, hy);
    let mut hh = Plane::zeros(hx, hy);
    for j in 0..hy {
        for i in 0..hx {
            let (x0, x1) = (px(2 * i), px(2 * i + 1));
            let (y0, y1) = (py(2 * j), py(2 * j + 1));
            let a = plane.at(x0, y0);
            let b = plane.at(x1, y0);
            let c = plane.at(x0, y1);
            let d = plane.at(x1, y1);
            let k = i + hx * j;
            ll.data[k] = ((a + b) + (c + d)) * 0.5;
            lh.data[k] = ((a + b) - (c + d)) * 0.5;
            hl.data[k] = ((a - b) + (c - d)) * 0.5;
            hh.data[k] = ((a - b) - (c - d)) * 0.5;
        }
    }
    Ok(SubbandSet2D {
        ll,
        lh,
        hl,
        hh,
        source_nx: plane.nx,
        source_ny: plane.ny,
    })
}

/// Synthesis; the result is cropped back to the source size.
pub fn idwt2_haar(s: &SubbandSet2D) -> Result<Plane> {
    let (hx, hy) = (s.ll.nx, s.ll.ny);
    let consistent = [&s.lh, &s.hl, &s.hh]
        .iter()
        .all(|p| p.nx == hx && p.ny == hy && p.data.len() == hx * hy)
        && s.ll.data.len() == hx * hy
        && s.source_nx.div_ceil(2) == hx
        && s.source_ny.div_ceil(2) == hy
        && s.source_nx >= 2
        && s.source_ny >= 2;
    if !consistent {
        return Err(Error::ShapeMismatch(format!(
            "subbands {}x{} / {}x{} / {}x{} / {}x{} for a {}x{} source",
            s.ll.nx, s.ll.ny, s.lh.nx, s.lh.ny, s.hl.nx, s.hl.ny, s.hh.nx, s.hh.ny, s.source_nx,
            s.source_ny
        )));
    }
    let (nx, ny) = (s.source_nx, s.source_ny);
    let mut out = Plane::zeros(nx, ny);
    for j in 0..hy {
        for i in 0..hx {
            let k = i + hx * j;
            let (l, v, h, d) = (s.ll.data[k], s.lh.data[k], s.hl.data[k], s.hh.data[k]);
            let vals = [
                ((l + v) + (h + d)) * 0.5,
                ((l + v) - (h + d)) * 0.5,
                ((l - v) + (h - d)) * 0.5,
                ((l - v) - (h - d)) * 0.5,
            ];
            let coords = [
                (2 * i, 2 * j),
                (2 * i + 1, 2 * j),
                (2 * i, 2 * j + 1),
                (2 * i + 1, 2 * j + 1),
            ];
            for ((x, y), val) in coords.into_iter().zip(vals) {
                if x < nx && y < ny {
                    out.data[x + nx * y] = val;
                }
            }
        }
    }
    Ok(out)
}

/// Low- and high-frequency reconstructions of a volume, same grid as the source.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPair {
    pub lf: Volume3D,
    pub hf: Volume3D,
}

pub fn split_frequency(v: &Volume3D) -> Result<FrequencyPair> {
    let [nx, ny, nz] = v.shape();
    if nx < 2 || ny < 2 {
        return Err(Error::InvalidArgument(format!(
            "frequency split needs in-plane dims >= 2, got {nx}x{ny}"
        )));
    }
    let slice_len = nx * ny;
    let mut lf = Vec::with_capacity(v.voxels().len());
    let mut hf = Vec::with_capacity(v.voxels().len());
    for z in 0..nz {
        let slice = Plane::new(nx, ny, v.voxels()[z * slice_len..(z + 1) * slice_len].to_vec())?;
        let bands = dwt2_haar(&slice)?;
        let (hx, hy) = (bands.ll.nx, bands.ll.ny);
        let approx = SubbandSet2D {
            lh: Plane::zeros(hx, hy),
            hl: Plane::zeros(hx, hy),
            hh: Plane::zeros(hx, hy),
            ..bands.clone()
        };
        let detail = SubbandSet2D {
            ll: Plane::zeros(hx, hy),
            ..bands
        };
        lf.extend(idwt2_haar(&approx)?.data);
        hf.extend(idwt2_haar(&detail)?.data);
    }
    Ok(FrequencyPair {
        lf: v.with_voxels(lf)?,
        hf: v.with_voxels(hf)?,
    })
}
