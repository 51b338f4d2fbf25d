//! Synthetic liver/tumor CT phantoms with known ground truth.
//!
//! The liver is an axis-aligned ellipsoid. Each tumor is a superellipsoid
//! with a smooth low-order radial perturbation of its boundary, placed fully
//! inside the liver and kept at least one voxel away from other tumors so
//! every tumor is its own 6-connected component. Tumor volumes are drawn
//! log-uniformly from the configured range (3 to 25 cm³ by default), which
//! puts roughly half of them below 8 cm³.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, LabelVolume, Volume3D};

/// Accepted relative deviation of a rasterized tumor from its target volume.
const VOLUME_TOLERANCE: f64 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiverSpec {
    /// Ellipsoid center as a fraction of the physical extent per axis.
    pub center_frac: [f32; 3],
    pub semi_axes_mm: [f32; 3],
    pub mean_hu: f32,
    pub noise_sigma_hu: f32,
}

impl Default for LiverSpec {
    fn default() -> Self {
        Self {
            center_frac: [0.5, 0.5, 0.5],
            semi_axes_mm: [48.0, 40.0, 36.0],
            mean_hu: 60.0,
            noise_sigma_hu: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TumorSpec {
    pub count_min: usize,
    pub count_max: usize,
    pub volume_cm3_min: f64,
    pub volume_cm3_max: f64,
    /// Added to the liver mean; plain-scan lesions are usually hypodense.
    pub intensity_offset_hu: f32,
    /// Amplitude of the radial boundary perturbation, as a fraction of radius.
    pub boundary_noise: f32,
}

impl Default for TumorSpec {
    fn default() -> Self {
        Self {
            count_min: 1,
            count_max: 2,
            volume_cm3_min: 3.0,
            volume_cm3_max: 25.0,
            intensity_offset_hu: -35.0,
            boundary_noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing_mm: [f32; 3],
    pub background_hu: f32,
    pub background_noise_hu: f32,
    pub liver: LiverSpec,
    pub tumors: TumorSpec,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: [64, 64, 64],
            spacing_mm: [2.0, 2.0, 2.0],
            background_hu: -100.0,
            background_noise_hu: 20.0,
            liver: LiverSpec::default(),
            tumors: TumorSpec::default(),
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("phantom: {msg}")));
        if self.shape.iter().any(|&n| n == 0) {
            return bad(format!("shape {:?} has an empty axis", self.shape));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("spacing {:?} must be positive", self.spacing_mm));
        }
        if self.liver.semi_axes_mm.iter().any(|&a| !(a > 0.0)) {
            return bad("liver semi-axes must be positive".into());
        }
        let t = &self.tumors;
        if t.count_min > t.count_max {
            return bad(format!(
                "tumor count range {}..={} is empty",
                t.count_min, t.count_max
            ));
        }
        if !(t.volume_cm3_min > 0.0) || t.volume_cm3_min > t.volume_cm3_max {
            return bad(format!(
                "tumor volume range [{}, {}] cm³ must be positive and ordered",
                t.volume_cm3_min, t.volume_cm3_max
            ));
        }
        if !(0.0..0.5).contains(&t.boundary_noise) {
            return bad("boundary noise must lie in [0, 0.5)".into());
        }
        if [self.background_noise_hu, self.liver.noise_sigma_hu]
            .iter()
            .any(|&s| !(s >= 0.0))
        {
            return bad("noise sigmas must be nonnegative".into());
        }
        Ok(())
    }
}

/// Ground-truth description of one placed tumor.
#[derive(Clone, Debug, PartialEq)]
pub struct TumorRecord {
    pub center_mm: [f64; 3],
    pub target_cm3: f64,
    pub voxel_count: usize,
    pub volume_cm3: f64,
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub image: Volume3D,
    pub label: LabelVolume,
    pub tumors: Vec<TumorRecord>,
}

/// Analytic tumor shape in physical coordinates.
#[derive(Clone, Debug)]
struct TumorShape {
    center: [f64; 3],
    axes: [f64; 3],
    exponent: f64,
    /// Coefficients of the radial perturbation harmonics.
    harmonics: [f64; 4],
    amplitude: f64,
}

impl TumorShape {
    fn contains(&self, p: [f64; 3], scale: f64) -> bool {
        let d = [0, 1, 2].map(|a| p[a] - self.center[a]);
        let r2 = d.iter().map(|v| v * v).sum::<f64>();
        let radial = if r2 > 0.0 {
            let r = r2.sqrt();
            let u = d.map(|v| v / r);
            let h = &self.harmonics;
            1.0 + self.amplitude
                * (h[0] * u[0] * u[1]
                    + h[1] * u[1] * u[2]
                    + h[2] * u[2] * u[0]
                    + h[3] * (u[0] * u[0] - u[1] * u[1]))
        } else {
            1.0
        };
        let f: f64 = (0..3)
            .map(|a| (d[a] / (self.axes[a] * scale)).abs().powf(self.exponent))
            .sum();
        f <= radial.powf(self.exponent)
    }

    /// Voxel-index bounding box (inclusive) for a given scale.
    fn bounds(&self, scale: f64, shape: [usize; 3], spacing: [f64; 3]) -> [(usize, usize); 3] {
        let reach = scale * self.axes.iter().cloned().fold(0.0, f64::max) * (1.0 + 2.0 * self.amplitude);
        [0, 1, 2].map(|a| {
            let lo = ((self.center[a] - reach) / spacing[a] - 0.5).floor().max(0.0) as usize;
            let hi = (((self.center[a] + reach) / spacing[a] - 0.5).ceil().max(0.0) as usize)
                .min(shape[a] - 1);
            (lo.min(shape[a] - 1), hi)
        })
    }

    fn rasterize(&self, scale: f64, shape: [usize; 3], spacing: [f64; 3]) -> Vec<usize> {
        let b = self.bounds(scale, shape, spacing);
        let mut out = Vec::new();
        for z in b[2].0..=b[2].1 {
            for y in b[1].0..=b[1].1 {
                for x in b[0].0..=b[0].1 {
                    let p = voxel_center([x, y, z], spacing);
                    if self.contains(p, scale) {
                        out.push(linear_index(shape, x, y, z));
                    }
                }
            }
        }
        out
    }
}

fn voxel_center(idx: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| (idx[a] as f64 + 0.5) * spacing[a])
}

struct Liver {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Liver {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.axes[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.axes.iter().product::<f64>()
    }

    fn sample_point<R: Rng>(&self, rng: &mut R) -> [f64; 3] {
        loop {
            let u = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
            if u.iter().map(|v: &f64| v * v).sum::<f64>() <= 1.0 {
                return [0, 1, 2].map(|a| self.center[a] + u[a] * self.axes[a]);
            }
        }
    }
}

/// Find the scale whose rasterization is closest to `target` voxels.
fn fit_scale(
    shape_fn: &TumorShape,
    target: f64,
    grid: [usize; 3],
    spacing: [f64; 3],
) -> (f64, Vec<usize>) {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while (shape_fn.rasterize(hi, grid, spacing).len() as f64) < target && hi < 64.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut best = (hi, shape_fn.rasterize(hi, grid, spacing));
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let voxels = shape_fn.rasterize(mid, grid, spacing);
        let n = voxels.len() as f64;
        if (n - target).abs() < (best.1.len() as f64 - target).abs() {
            best = (mid, voxels);
        }
        if n < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3D, LabelVolume)> {
    let p = generate_phantom_detailed(spec)?;
    Ok((p.image, p.label))
}

pub fn generate_phantom_detailed(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = spec.shape;
    let spacing = spec.spacing_mm.map(|s| s as f64);
    let voxel_mm3: f64 = spacing.iter().product();
    let n: usize = grid.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let liver = Liver {
        center: [0, 1, 2].map(|a| spec.liver.center_frac[a] as f64 * grid[a] as f64 * spacing[a]),
        axes: spec.liver.semi_axes_mm.map(|a| a as f64),
    };

    let t = &spec.tumors;
    let count = rng.random_range(t.count_min..=t.count_max);
    let mut labels = vec![0u8; n];
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let target_cm3 = if t.volume_cm3_max > t.volume_cm3_min {
            (rng.random_range(t.volume_cm3_min.ln()..t.volume_cm3_max.ln())).exp()
        } else {
            t.volume_cm3_min
        };
        let target_voxels = target_cm3 * 1000.0 / voxel_mm3;
        if target_voxels < 1.0 {
            return Err(Error::TumorDoesNotFit(format!(
                "tumor of {target_cm3:.3} cm³ is smaller than one voxel"
            )));
        }
        let exponent = rng.random_range(2.0..3.5);
        let ratios = [0, 1, 2].map(|_| rng.random_range(0.75..1.25));
        let harmonics = [0, 1, 2, 3].map(|_| rng.random_range(-0.5..0.5));

        if target_cm3 * 1000.0 >= liver.volume_mm3() {
            return Err(Error::TumorDoesNotFit(format!(
                "tumor of {target_cm3:.2} cm³ exceeds the liver volume"
            )));
        }

        let within = |n: usize| (n as f64 - target_voxels).abs() <= VOLUME_TOLERANCE * target_voxels;
        let mut scale = None;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = TumorShape {
                center: liver.sample_point(&mut rng),
                axes: ratios,
                exponent,
                harmonics,
                amplitude: t.boundary_noise as f64,
            };
            // The fitted scale barely depends on the sub-voxel position of
            // the center, so reuse it until it misses the tolerance.
            let mut voxels = match scale {
                Some(s) => shape.rasterize(s, grid, spacing),
                None => Vec::new(),
            };
            if !within(voxels.len()) {
                let (s, v) = fit_scale(&shape, target_voxels, grid, spacing);
                scale = Some(s);
                voxels = v;
            }
            if voxels.is_empty() || !within(voxels.len()) {
                continue;
            }
            let fits = voxels.iter().all(|&i| {
                let idx = [i % grid[0], (i / grid[0]) % grid[1], i / (grid[0] * grid[1])];
                liver.contains(voxel_center(idx, spacing)) && !touches_label(&labels, grid, idx)
            });
            if fits {
                placed = Some((shape.center, voxels));
                break;
            }
        }
        let (center, voxels) = placed.ok_or_else(|| {
            Error::TumorDoesNotFit(format!(
                "tumor {k} of {target_cm3:.2} cm³ could not be placed inside the liver"
            ))
        })?;
        for &i in &voxels {
            labels[i] = 1;
        }
        records.push(TumorRecord {
            center_mm: center,
            target_cm3,
            voxel_count: voxels.len(),
            volume_cm3: voxels.len() as f64 * voxel_mm3 / 1000.0,
        });
    }

    let bg = Normal::new(spec.background_hu, spec.background_noise_hu.max(0.0))
        .map_err(|e| Error::Config(format!("phantom background noise: {e}")))?;
    let liver_noise = Normal::new(0.0f32, spec.liver.noise_sigma_hu.max(0.0))
        .map_err(|e| Error::Config(format!("phantom liver noise: {e}")))?;
    let mut voxels = Vec::with_capacity(n);
    for z in 0..grid[2] {
        for y in 0..grid[1] {
            for x in 0..grid[0] {
                let i = linear_index(grid, x, y, z);
                let v = if labels[i] == 1 {
                    spec.liver.mean_hu + t.intensity_offset_hu + liver_noise.sample(&mut rng)
                } else if liver.contains(voxel_center([x, y, z], spacing)) {
                    spec.liver.mean_hu + liver_noise.sample(&mut rng)
                } else {
                    bg.sample(&mut rng)
                };
                voxels.push(v);
            }
        }
    }

    Ok(Phantom {
        image: Volume3D::new(grid, spec.spacing_mm, voxels)?,
        label: LabelVolume::new(grid, spec.spacing_mm, labels)?,
        tumors: records,
    })
}

/// Whether the voxel or any 6-neighbour is already labeled.
fn touches_label(labels: &[u8], grid: [usize; 3], idx: [usize; 3]) -> bool {
    let [x, y, z] = idx;
    let at = |x: usize, y: usize, z: usize| labels[linear_index(grid, x, y, z)] == 1;
    at(x, y, z)
        || (x > 0 && at(x - 1, y, z))
        || (x + 1 < grid[0] && at(x + 1, y, z))
        || (y > 0 && at(x, y - 1, z))
        || (y + 1 < grid[1] && at(x, y + 1, z))
        || (z > 0 && at(x, y, z - 1))
        || (z + 1 < grid[2] && at(x, y, z + 1))
}
