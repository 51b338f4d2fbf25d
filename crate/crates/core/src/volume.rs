//! Voxel grids, the `.vvol` container, intensity windowing and connected
//! components.
//!
//! Buffers are x-fastest: voxel (x, y, z) sits at `x + nx * (y + ny * z)`.
//! As a tensor a volume is `(1, nz, ny, nx)`, which keeps the same memory
//! order.
//!
//! A `.vvol` file is a short UTF-8 header followed by a raw payload:
//!
//! ```text
//! VVOL 1
//! kind: float32            (or label32)
//! shape: <nx> <ny> <nz>
//! spacing: <sx> <sy> <sz>  (millimetres)
//! byte_order: little
//! end
//! <nx*ny*nz little-endian 32-bit values>
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default soft-tissue window in Hounsfield units.
pub const DEFAULT_WINDOW_HU: (f32, f32) = (-175.0, 250.0);

fn validate_grid(shape: [usize; 3], spacing: [f32; 3], len: usize) -> Result<()> {
    if shape.iter().any(|&n| n == 0) {
        return Err(Error::InvalidVolume(format!("shape {shape:?} has an empty axis")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidVolume(format!(
            "spacing {spacing:?} must be positive"
        )));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::InvalidVolume(format!(
            "shape {shape:?} needs {n} voxels, buffer has {len}"
        )));
    }
    Ok(())
}

#[inline]
pub fn linear_index(shape: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + shape[0] * (y + shape[1] * z)
}

/// Mirror an out-of-range index back into `0..n` without repeating the edge.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn pad_buffer<T: Copy>(src: &[T], shape: [usize; 3], target: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(target.iter().product());
    for z in 0..target[2] {
        let sz = reflect_index(z as isize, shape[2]);
        for y in 0..target[1] {
            let sy = reflect_index(y as isize, shape[1]);
            for x in 0..target[0] {
                let sx = reflect_index(x as isize, shape[0]);
                out.push(src[linear_index(shape, sx, sy, sz)]);
            }
        }
    }
    out
}

fn crop_buffer<T: Copy>(
    src: &[T],
    shape: [usize; 3],
    origin: [usize; 3],
    size: [usize; 3],
) -> Result<Vec<T>> {
    if (0..3).any(|a| origin[a] + size[a] > shape[a]) {
        return Err(Error::InvalidArgument(format!(
            "crop {size:?} at {origin:?} exceeds {shape:?}"
        )));
    }
    let mut out = Vec::with_capacity(size.iter().product());
    for z in 0..size[2] {
        for y in 0..size[1] {
            let start = linear_index(shape, origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&src[start..start + size[0]]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    shape: [usize; 3],
    spacing_mm: [f32; 3],
    voxels: Vec<f32>,
}

impl Volume3D {
    pub fn new(shape: [usize; 3], spacing_mm: [f32; 3], voxels: Vec<f32>) -> Result<Self> {
        validate_grid(shape, spacing_mm, voxels.len())?;
        Ok(Self {
            shape,
            spacing_mm,
            voxels,
        })
    }

    pub fn filled(shape: [usize; 3], spacing_mm: [f32; 3], value: f32) -> Result<Self> {
        Self::new(shape, spacing_mm, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f32; 3] {
        self.spacing_mm
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.voxels[linear_index(self.shape, x, y, z)]
    }

    /// Same grid, new values.
    pub fn with_voxels(&self, voxels: Vec<f32>) -> Result<Self> {
        Self::new(self.shape, self.spacing_mm, voxels)
    }

    /// `(1, nz, ny, nx)` tensor sharing the memory order.
    pub fn to_tensor(&self) -> Tensor {
        let [nx, ny, nz] = self.shape;
        Tensor::new(&[1, nz, ny, nx], self.voxels.clone()).expect("shape matches buffer")
    }

    pub fn from_tensor(t: &Tensor, spacing_mm: [f32; 3]) -> Result<Self> {
        match t.shape() {
            [1, nz, ny, nx] => Self::new([*nx, *ny, *nz], spacing_mm, t.data().to_vec()),
            s => Err(Error::ShapeMismatch(format!(
                "expected a (1, nz, ny, nx) tensor, got {s:?}"
            ))),
        }
    }

    /// Reflect-pad at the high end of each axis up to `target`.
    pub fn pad_reflect(&self, target: [usize; 3]) -> Self {
        let target = [0, 1, 2].map(|a| target[a].max(self.shape[a]));
        Self {
            shape: target,
            spacing_mm: self.spacing_mm,
            voxels: pad_buffer(&self.voxels, self.shape, target),
        }
    }

    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Self> {
        Self::new(
            size,
            self.spacing_mm,
            crop_buffer(&self.voxels, self.shape, origin, size)?,
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &encode_float(self))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    shape: [usize; 3],
    spacing_mm: [f32; 3],
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(shape: [usize; 3], spacing_mm: [f32; 3], labels: Vec<u8>) -> Result<Self> {
        validate_grid(shape, spacing_mm, labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidVolume(format!("label value {bad} is not 0 or 1")));
        }
        Ok(Self {
            shape,
            spacing_mm,
            labels,
        })
    }

    pub fn zeros(shape: [usize; 3], spacing_mm: [f32; 3]) -> Result<Self> {
        Self::new(shape, spacing_mm, vec![0; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f32; 3] {
        self.spacing_mm
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.labels[linear_index(self.shape, x, y, z)]
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn matches_grid(&self, v: &Volume3D) -> bool {
        self.shape == v.shape()
    }

    pub fn pad_reflect(&self, target: [usize; 3]) -> Self {
        let target = [0, 1, 2].map(|a| target[a].max(self.shape[a]));
        Self {
            shape: target,
            spacing_mm: self.spacing_mm,
            labels: pad_buffer(&self.labels, self.shape, target),
        }
    }

    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Self> {
        Self::new(
            size,
            self.spacing_mm,
            crop_buffer(&self.labels, self.shape, origin, size)?,
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_bytes(path.as_ref(), &encode_label(self))
    }
}

/// Contents of a `.vvol` file.
#[derive(Clone, Debug, PartialEq)]
pub enum VvolData {
    Float(Volume3D),
    Label(LabelVolume),
}

impl VvolData {
    pub fn kind(&self) -> &'static str {
        match self {
            VvolData::Float(_) => "float32",
            VvolData::Label(_) => "label32",
        }
    }

    pub fn into_volume(self) -> Result<Volume3D> {
        match self {
            VvolData::Float(v) => Ok(v),
            VvolData::Label(_) => Err(Error::InvalidVolume(
                "expected a float32 volume, found label32".into(),
            )),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            VvolData::Label(l) => Ok(l),
            VvolData::Float(_) => Err(Error::InvalidVolume(
                "expected a label32 volume, found float32".into(),
            )),
        }
    }
}

fn header(kind: &str, shape: [usize; 3], spacing: [f32; 3]) -> String {
    format!(
        "VVOL 1\nkind: {kind}\nshape: {} {} {}\nspacing: {} {} {}\nbyte_order: little\nend\n",
        shape[0], shape[1], shape[2], spacing[0], spacing[1], spacing[2]
    )
}

pub fn encode_float(v: &Volume3D) -> Vec<u8> {
    let mut out = header("float32", v.shape, v.spacing_mm).into_bytes();
    out.reserve(v.voxels.len() * 4);
    for x in &v.voxels {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn encode_label(l: &LabelVolume) -> Vec<u8> {
    let mut out = header("label32", l.shape, l.spacing_mm).into_bytes();
    out.reserve(l.labels.len() * 4);
    for &x in &l.labels {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out
}

fn header_field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| Error::MalformedHeader(format!("missing `{key}` line")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(':'))
        .map(str::trim)
        .ok_or_else(|| Error::MalformedHeader(format!("expected `{key}:`, found `{line}`")))
}

fn parse_triple<T: std::str::FromStr>(text: &str, key: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::MalformedHeader(format!(
            "`{key}` needs three values, found `{text}`"
        )));
    }
    let parse = |s: &str| {
        s.parse::<T>()
            .map_err(|_| Error::MalformedHeader(format!("bad `{key}` value `{s}`")))
    };
    Ok([parse(parts[0])?, parse(parts[1])?, parse(parts[2])?])
}

pub fn decode_vvol(bytes: &[u8]) -> Result<VvolData> {
    const END: &[u8] = b"\nend\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::MalformedHeader("no `end` line".into()))?;
    let head = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;
    let payload = &bytes[end + END.len()..];

    let mut lines = head.lines();
    if lines.next() != Some("VVOL 1") {
        return Err(Error::MalformedHeader("missing `VVOL 1` magic".into()));
    }
    let kind = header_field(lines.next(), "kind")?;
    let shape: [usize; 3] = parse_triple(header_field(lines.next(), "shape")?, "shape")?;
    let spacing: [f32; 3] = parse_triple(header_field(lines.next(), "spacing")?, "spacing")?;
    let order = header_field(lines.next(), "byte_order")?;
    if order != "little" {
        return Err(Error::MalformedHeader(format!("unsupported byte order `{order}`")));
    }
    if let Some(extra) = lines.next() {
        return Err(Error::MalformedHeader(format!("unexpected header line `{extra}`")));
    }
    if kind != "float32" && kind != "label32" {
        return Err(Error::UnknownElementKind(kind.to_string()));
    }

    let count = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::MalformedHeader(format!("shape {shape:?} overflows")))?;
    let expected = count * 4;
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let words = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    match kind {
        "float32" => Ok(VvolData::Float(Volume3D::new(
            shape,
            spacing,
            words.map(f32::from_le_bytes).collect(),
        )?)),
        _ => {
            let labels = words
                .map(|w| {
                    let v = u32::from_le_bytes(w);
                    u8::try_from(v)
                        .ok()
                        .filter(|&l| l <= 1)
                        .ok_or_else(|| Error::InvalidVolume(format!("label value {v} is not 0 or 1")))
                })
                .collect::<Result<Vec<u8>>>()?;
            Ok(VvolData::Label(LabelVolume::new(shape, spacing, labels)?))
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_vvol(path: impl AsRef<Path>) -> Result<VvolData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vvol(&bytes)
}

pub fn write_vvol(data: &VvolData, path: impl AsRef<Path>) -> Result<()> {
    match data {
        VvolData::Float(v) => v.write(path),
        VvolData::Label(l) => l.write(path),
    }
}

/// Clip to `[lo, hi]` HU and map affinely onto `[0, 1]`.
pub fn normalize_intensity(v: &Volume3D, lo: f32, hi: f32) -> Result<Volume3D> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "intensity window [{lo}, {hi}] must satisfy lo < hi"
        )));
    }
    let width = hi - lo;
    let voxels = v
        .voxels
        .iter()
        .map(|&x| (x.clamp(lo, hi) - lo) / width)
        .collect();
    v.with_voxels(voxels)
}

/// Foreground components under 6-connectivity, in scan order of their first
/// voxel, as (1-based id, volume in cm³).
pub fn component_volumes_cm3(label: &LabelVolume) -> Vec<(usize, f64)> {
    let sizes = component_sizes(label);
    let voxel_mm3: f64 = label.spacing_mm.iter().map(|&s| s as f64).product();
    sizes
        .into_iter()
        .enumerate()
        .map(|(i, n)| (i + 1, n as f64 * voxel_mm3 / 1000.0))
        .collect()
}

/// Voxel counts of each 6-connected foreground component.
pub fn component_sizes(label: &LabelVolume) -> Vec<usize> {
    let [nx, ny, nz] = label.shape;
    let mut seen = vec![false; label.labels.len()];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..label.labels.len() {
        if label.labels[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let x = i % nx;
            let y = (i / nx) % ny;
            let z = i / (nx * ny);
            let mut visit = |j: usize| {
                if label.labels[j] == 1 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        sizes.push(count);
    }
    sizes
}
