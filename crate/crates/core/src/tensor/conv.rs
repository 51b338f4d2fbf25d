//! 3-D convolution and transposed convolution on (channels, d0, d1, d2)
//! tensors, lowered to matrix products through chunked im2col / col2im.

use std::ops::Range;
use std::rc::Rc;

use super::linalg::{gemm, Layout};
use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Upper bound on im2col buffer elements per chunk.
const COL_BUDGET: usize = 8 << 20;

/// Pairing between an "image" grid and the grid of kernel placements over it.
#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    img: [usize; 3],
    cols: [usize; 3],
    k: [usize; 3],
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn kernel_volume(&self) -> usize {
        self.k.iter().product()
    }

    fn plane(&self) -> usize {
        self.cols[1] * self.cols[2]
    }

    /// Number of leading placement planes per chunk.
    fn chunk_planes(&self, channels: usize) -> usize {
        let per_plane = channels * self.kernel_volume() * self.plane();
        (COL_BUDGET / per_plane.max(1)).clamp(1, self.cols[0].max(1))
    }

    /// Image index hit by placement `o` at kernel offset `kk` along an axis.
    #[inline]
    fn source(&self, o: usize, kk: usize, axis: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.pad as isize;
        (i >= 0 && (i as usize) < self.img[axis]).then_some(i as usize)
    }
}

/// Gather kernel windows for placements with first index in `planes` into
/// `col`, laid out (channels·k³) × (placements) row-major.
fn im2col(img: &[f32], channels: usize, g: &ConvGeom, planes: Range<usize>, col: &mut [f32]) {
    let [i0n, i1n, i2n] = g.img;
    let [_, c1, c2] = g.cols;
    let [k0, k1, k2] = g.k;
    let width = planes.len() * c1 * c2;
    let mut row = 0;
    for ch in 0..channels {
        let src = &img[ch * i0n * i1n * i2n..(ch + 1) * i0n * i1n * i2n];
        for kz in 0..k0 {
            for ky in 0..k1 {
                for kx in 0..k2 {
                    let dst = &mut col[row * width..(row + 1) * width];
                    let mut at = 0;
                    for o0 in planes.clone() {
                        let Some(i0) = g.source(o0, kz, 0) else {
                            dst[at..at + c1 * c2].fill(0.0);
                            at += c1 * c2;
                            continue;
                        };
                        for o1 in 0..c1 {
                            let Some(i1) = g.source(o1, ky, 1) else {
                                dst[at..at + c2].fill(0.0);
                                at += c2;
                                continue;
                            };
                            let line = &src[(i0 * i1n + i1) * i2n..(i0 * i1n + i1 + 1) * i2n];
                            for o2 in 0..c2 {
                                dst[at] = match g.source(o2, kx, 2) {
                                    Some(i2) => line[i2],
                                    None => 0.0,
                                };
                                at += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `col` back onto the image.
fn col2im_add(col: &[f32], channels: usize, g: &ConvGeom, planes: Range<usize>, img: &mut [f32]) {
    let [i0n, i1n, i2n] = g.img;
    let [_, c1, c2] = g.cols;
    let [k0, k1, k2] = g.k;
    let width = planes.len() * c1 * c2;
    let mut row = 0;
    for ch in 0..channels {
        let dst = &mut img[ch * i0n * i1n * i2n..(ch + 1) * i0n * i1n * i2n];
        for kz in 0..k0 {
            for ky in 0..k1 {
                for kx in 0..k2 {
                    let src = &col[row * width..(row + 1) * width];
                    let mut at = 0;
                    for o0 in planes.clone() {
                        let Some(i0) = g.source(o0, kz, 0) else {
                            at += c1 * c2;
                            continue;
                        };
                        for o1 in 0..c1 {
                            let Some(i1) = g.source(o1, ky, 1) else {
                                at += c2;
                                continue;
                            };
                            let base = (i0 * i1n + i1) * i2n;
                            for o2 in 0..c2 {
                                if let Some(i2) = g.source(o2, kx, 2) {
                                    dst[base + i2] += src[at];
                                }
                                at += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn spatial(shape: &[usize], what: &str) -> Result<(usize, [usize; 3])> {
    match shape {
        [c, a, b, d] => Ok((*c, [*a, *b, *d])),
        _ => Err(Error::ShapeMismatch(format!(
            "{what} must be (channels, d0, d1, d2), got {shape:?}"
        ))),
    }
}

fn kernel_dims(shape: &[usize]) -> Result<(usize, usize, [usize; 3])> {
    match shape {
        [a, b, k0, k1, k2] => Ok((*a, *b, [*k0, *k1, *k2])),
        _ => Err(Error::ShapeMismatch(format!(
            "kernel must be 5-D, got {shape:?}"
        ))),
    }
}

/// Output grid of a convolution; errors on zero stride or a kernel larger
/// than the padded input.
pub fn conv3d_output_dims(
    input: [usize; 3],
    kernel: [usize; 3],
    stride: usize,
    padding: usize,
) -> Result<[usize; 3]> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        let padded = input[a] + 2 * padding;
        if kernel[a] == 0 || kernel[a] > padded {
            return Err(Error::InvalidArgument(format!(
                "kernel {kernel:?} larger than padded input {input:?} (padding {padding})"
            )));
        }
        out[a] = (padded - kernel[a]) / stride + 1;
    }
    Ok(out)
}

pub fn conv_transpose3d_output_dims(
    input: [usize; 3],
    kernel: [usize; 3],
    stride: usize,
    padding: usize,
) -> Result<[usize; 3]> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let mut out = [0; 3];
    for a in 0..3 {
        let full = (input[a] - 1) * stride + kernel[a];
        if input[a] == 0 || full <= 2 * padding {
            return Err(Error::InvalidArgument(format!(
                "transposed conv of {input:?} with kernel {kernel:?}, padding {padding} is empty"
            )));
        }
        out[a] = full - 2 * padding;
    }
    Ok(out)
}

fn check_bias(bias: Option<&Var<'_>>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::ShapeMismatch(format!(
            "bias {:?} for {channels} output channels",
            b.shape()
        ))),
        _ => Ok(()),
    }
}

fn add_bias(out: &mut [f32], bias: &Tensor, spatial: usize) {
    for (plane, &b) in out.chunks_exact_mut(spatial).zip(bias.data()) {
        for v in plane {
            *v += b;
        }
    }
}

fn bias_grad(g: &Tensor, channels: usize) -> Tensor {
    let spatial = g.numel() / channels;
    let data = g
        .data()
        .chunks_exact(spatial)
        .map(|plane| plane.iter().sum())
        .collect();
    Tensor {
        shape: vec![channels],
        data,
    }
}

impl<'t> Var<'t> {
    /// Cross-correlation of a (Cin, d0, d1, d2) input with a
    /// (Cout, Cin, k0, k1, k2) kernel, zero padding on every side.
    pub fn conv3d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let (cin, in_dims) = spatial(self.shape(), "conv3d input")?;
        let (cout, wcin, k) = kernel_dims(weight.shape())?;
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv3d kernel expects {wcin} input channels, input has {cin}"
            )));
        }
        check_bias(bias, cout)?;
        let out_dims = conv3d_output_dims(in_dims, k, stride, padding)?;
        let geom = ConvGeom {
            img: in_dims,
            cols: out_dims,
            k,
            stride,
            pad: padding,
        };
        let kk = cin * geom.kernel_volume();
        let plane = geom.plane();
        let total: usize = out_dims.iter().product();
        let step = geom.chunk_planes(cin);

        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        let mut out = vec![0.0f32; cout * total];
        let mut col = vec![0.0f32; kk * step * plane];
        for a in (0..out_dims[0]).step_by(step) {
            let b = (a + step).min(out_dims[0]);
            let nc = (b - a) * plane;
            im2col(x.data(), cin, &geom, a..b, &mut col[..kk * nc]);
            gemm(
                cout,
                kk,
                nc,
                w.data(),
                Layout::row_major(kk),
                &col,
                Layout::row_major(nc),
                0.0,
                &mut out[a * plane..],
                Layout { rs: total, cs: 1 },
            );
        }
        if let Some(b) = bias {
            add_bias(&mut out, b.value(), total);
        }
        let out = Tensor {
            shape: vec![cout, out_dims[0], out_dims[1], out_dims[2]],
            data: out,
        };

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape.op(&inputs, out, move |g, needs| {
            let gy = g.data();
            let mut gx = needs[0].then(|| vec![0.0f32; x.numel()]);
            let mut gw = needs[1].then(|| vec![0.0f32; w.numel()]);
            let mut col = vec![0.0f32; kk * step * plane];
            for a in (0..out_dims[0]).step_by(step) {
                let b = (a + step).min(out_dims[0]);
                let nc = (b - a) * plane;
                let gy_chunk = &gy[a * plane..];
                let gy_layout = Layout { rs: total, cs: 1 };
                if let Some(gw) = gw.as_mut() {
                    im2col(x.data(), cin, &geom, a..b, &mut col[..kk * nc]);
                    gemm(
                        cout,
                        nc,
                        kk,
                        gy_chunk,
                        gy_layout,
                        &col,
                        Layout::row_major(nc).transposed(),
                        1.0,
                        gw,
                        Layout::row_major(kk),
                    );
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(
                        kk,
                        cout,
                        nc,
                        w.data(),
                        Layout::row_major(kk).transposed(),
                        gy_chunk,
                        gy_layout,
                        0.0,
                        &mut col,
                        Layout::row_major(nc),
                    );
                    col2im_add(&col[..kk * nc], cin, &geom, a..b, gx);
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor {
                    shape: x.shape().to_vec(),
                    data: d,
                }),
                gw.map(|d| Tensor {
                    shape: w.shape().to_vec(),
                    data: d,
                }),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g, cout)));
            }
            grads
        }))
    }

    /// Transposed convolution (the adjoint of [`Var::conv3d`] in its input)
    /// with a (Cin, Cout, k0, k1, k2) kernel.
    pub fn conv_transpose3d(
        &self,
        weight: &Var<'t>,
        bias: Option<&Var<'t>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t>> {
        let (cin, in_dims) = spatial(self.shape(), "conv_transpose3d input")?;
        let (wcin, cout, k) = kernel_dims(weight.shape())?;
        if wcin != cin {
            return Err(Error::ShapeMismatch(format!(
                "conv_transpose3d kernel expects {wcin} input channels, input has {cin}"
            )));
        }
        check_bias(bias, cout)?;
        let out_dims = conv_transpose3d_output_dims(in_dims, k, stride, padding)?;
        let geom = ConvGeom {
            img: out_dims,
            cols: in_dims,
            k,
            stride,
            pad: padding,
        };
        let kk = cout * geom.kernel_volume();
        let plane = geom.plane();
        let in_total: usize = in_dims.iter().product();
        let out_total: usize = out_dims.iter().product();
        let step = geom.chunk_planes(cout);

        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        let mut out = vec![0.0f32; cout * out_total];
        let mut col = vec![0.0f32; kk * step * plane];
        for a in (0..in_dims[0]).step_by(step) {
            let b = (a + step).min(in_dims[0]);
            let nc = (b - a) * plane;
            gemm(
                kk,
                cin,
                nc,
                w.data(),
                Layout::row_major(kk).transposed(),
                &x.data()[a * plane..],
                Layout { rs: in_total, cs: 1 },
                0.0,
                &mut col,
                Layout::row_major(nc),
            );
            col2im_add(&col[..kk * nc], cout, &geom, a..b, &mut out);
        }
        if let Some(b) = bias {
            add_bias(&mut out, b.value(), out_total);
        }
        let out = Tensor {
            shape: vec![cout, out_dims[0], out_dims[1], out_dims[2]],
            data: out,
        };

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        Ok(self.tape.op(&inputs, out, move |g, needs| {
            let gy = g.data();
            let mut gx = needs[0].then(|| vec![0.0f32; x.numel()]);
            let mut gw = needs[1].then(|| vec![0.0f32; w.numel()]);
            let mut col = vec![0.0f32; kk * step * plane];
            if gx.is_some() || gw.is_some() {
                for a in (0..in_dims[0]).step_by(step) {
                    let b = (a + step).min(in_dims[0]);
                    let nc = (b - a) * plane;
                    im2col(gy, cout, &geom, a..b, &mut col[..kk * nc]);
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            cin,
                            kk,
                            nc,
                            w.data(),
                            Layout::row_major(kk),
                            &col,
                            Layout::row_major(nc),
                            0.0,
                            &mut gx[a * plane..],
                            Layout { rs: in_total, cs: 1 },
                        );
                    }
                    if let Some(gw) = gw.as_mut() {
                        gemm(
                            cin,
                            nc,
                            kk,
                            &x.data()[a * plane..],
                            Layout { rs: in_total, cs: 1 },
                            &col,
                            Layout::row_major(nc).transposed(),
                            1.0,
                            gw,
                            Layout::row_major(kk),
                        );
                    }
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor {
                    shape: x.shape().to_vec(),
                    data: d,
                }),
                gw.map(|d| Tensor {
                    shape: w.shape().to_vec(),
                    data: d,
                }),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(g, cout)));
            }
            grads
        }))
    }
}
