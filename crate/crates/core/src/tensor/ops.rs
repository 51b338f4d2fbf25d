//! Elementwise, shape, reduction and normalization operations on [`Var`].

use std::rc::Rc;

use super::{axis_split, strides, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// `b` broadcasts against `a` when shapes are equal or `b` is a trailing
/// suffix of `a`.
fn broadcasts(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Sum the leading repeats of `g` down to a tensor of `shape`.
fn reduce_to_suffix(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let n: usize = shape.iter().product();
    let mut out = vec![0.0f32; n];
    for row in g.data().chunks_exact(n) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

fn permute_data(src: &[f32], shape: &[usize], perm: &[usize]) -> (Vec<usize>, Vec<f32>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return (out_shape, out);
    }
    let nd = out_shape.len();
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(src[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out_shape, out)
}

impl<'t> Var<'t> {
    fn binary(&self, other: &Var<'t>, kind: Binary) -> Result<Var<'t>> {
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        if !broadcasts(a.shape(), b.shape()) {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {:?} against {:?}",
                b.shape(),
                a.shape()
            )));
        }
        let bn = b.numel().max(1);
        let f = match kind {
            Binary::Add => |x: f32, y: f32| x + y,
            Binary::Sub => |x: f32, y: f32| x - y,
            Binary::Mul => |x: f32, y: f32| x * y,
            Binary::Div => |x: f32, y: f32| x / y,
        };
        let data: Vec<f32> = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bn]))
            .collect();
        let out = Tensor {
            shape: a.shape().to_vec(),
            data,
        };
        Ok(self.tape.op(&[self, other], out, move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                let data = match kind {
                    Binary::Add | Binary::Sub => gd.to_vec(),
                    Binary::Mul => gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv * b.data()[i % bn])
                        .collect(),
                    Binary::Div => gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gv)| gv / b.data()[i % bn])
                        .collect(),
                };
                Tensor {
                    shape: a.shape().to_vec(),
                    data,
                }
            });
            let gb = needs[1].then(|| {
                let full: Vec<f32> = match kind {
                    Binary::Add => gd.to_vec(),
                    Binary::Sub => gd.iter().map(|v| -v).collect(),
                    Binary::Mul => gd
                        .iter()
                        .zip(a.data())
                        .map(|(&gv, &av)| gv * av)
                        .collect(),
                    Binary::Div => gd
                        .iter()
                        .zip(a.data())
                        .enumerate()
                        .map(|(i, (&gv, &av))| {
                            let bv = b.data()[i % bn];
                            -gv * av / (bv * bv)
                        })
                        .collect(),
                };
                reduce_to_suffix(
                    &Tensor {
                        shape: a.shape().to_vec(),
                        data: full,
                    },
                    b.shape(),
                )
            });
            vec![ga, gb]
        }))
    }

    /// Elementwise sum; `other` may also be a trailing-suffix broadcast.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, Binary::Div)
    }

    fn unary(
        &self,
        f: impl Fn(f32) -> f32,
        df: impl Fn(f32, f32) -> f32 + 'static,
    ) -> Var<'t> {
        let out = self.value.map(f);
        let x = Rc::clone(&self.value);
        let y = Rc::new(out.clone());
        self.tape.op(&[self], out, move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(x.data().iter().zip(y.data()))
                .map(|(&gv, (&xv, &yv))| gv * df(xv, yv))
                .collect();
            vec![Some(Tensor {
                shape: g.shape().to_vec(),
                data,
            })]
        })
    }

    pub fn scale(&self, s: f32) -> Var<'t> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f32) -> Var<'t> {
        self.unary(move |x| x + s, |_, _| 1.0)
    }

    pub fn neg(&self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(f32::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(f32::ln, |x, _| 1.0 / x)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(
            |x| if x > 0.0 { x } else { 0.0 },
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Var<'t> {
        const C: f32 = 0.797_884_6; // sqrt(2/pi)
        const K: f32 = 0.044_715;
        self.unary(
            |x| 0.5 * x * (1.0 + (C * (x + K * x * x * x)).tanh()),
            |x, _| {
                let t = (C * (x + K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x)
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value).clone().reshaped(shape)?;
        let in_shape = self.value.shape().to_vec();
        Ok(self.tape.op(&[self], out, move |g, _| {
            vec![Some(Tensor {
                shape: in_shape.clone(),
                data: g.data().to_vec(),
            })]
        }))
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let nd = self.value.ndim();
        let mut seen = vec![false; nd];
        if perm.len() != nd || perm.iter().any(|&p| p >= nd || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidArgument(format!(
                "{perm:?} is not a permutation of {nd} axes"
            )));
        }
        let (shape, data) = permute_data(self.value.data(), self.value.shape(), perm);
        let mut inverse = vec![0; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Ok(self.tape.op(&[self], Tensor { shape, data }, move |g, _| {
            let (shape, data) = permute_data(g.data(), g.shape(), &inverse);
            vec![Some(Tensor { shape, data })]
        }))
    }

    /// Range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.value.shape().to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&self.value.data()[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = width;
        Ok(self.tape.op(
            &[self],
            Tensor {
                shape: out_shape,
                data,
            },
            move |g, _| {
                let mut full = vec![0.0f32; outer * len * inner];
                for o in 0..outer {
                    let base = o * len * inner;
                    full[base + start * inner..base + end * inner]
                        .copy_from_slice(&g.data()[o * width * inner..(o + 1) * width * inner]);
                }
                vec![Some(Tensor {
                    shape: shape.clone(),
                    data: full,
                })]
            },
        ))
    }

    /// Join along `axis`; all other dims must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let base_shape = first.shape().to_vec();
        if axis >= base_shape.len() {
            return Err(Error::InvalidArgument(format!(
                "concat axis {axis} out of range for {base_shape:?}"
            )));
        }
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch(format!(
                    "concat of {:?} with {base_shape:?} along {axis}",
                    s
                )));
            }
            widths.push(s[axis]);
        }
        let (outer, _, inner) = axis_split(&base_shape, axis);
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value.data()[o * w * inner..(o + 1) * w * inner]);
            }
        }
        let mut shape = base_shape.clone();
        shape[axis] = total;
        let refs: Vec<&Var<'t>> = parts.iter().collect();
        let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        Ok(first.tape.op(&refs, Tensor { shape, data }, move |g, needs| {
            let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(widths.len());
            let mut offset = 0;
            for (k, &w) in widths.iter().enumerate() {
                if needs[k] {
                    let mut d = Vec::with_capacity(outer * w * inner);
                    for o in 0..outer {
                        let base = o * total * inner + offset * inner;
                        d.extend_from_slice(&g.data()[base..base + w * inner]);
                    }
                    grads.push(Some(Tensor {
                        shape: part_shapes[k].clone(),
                        data: d,
                    }));
                } else {
                    grads.push(None);
                }
                offset += w;
            }
            grads
        }))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let s: f32 = self.value.data().iter().sum();
        let shape = self.value.shape().to_vec();
        self.tape.op(&[self], Tensor::scalar(s), move |g, _| {
            vec![Some(Tensor::full(&shape, g.item()))]
        })
    }

    pub fn mean_all(&self) -> Var<'t> {
        let n = self.value.numel().max(1) as f32;
        self.sum_all().scale(1.0 / n)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value.data();
        let mut data = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let row = &src[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok(self.tape.op(
            &[self],
            Tensor {
                shape: out_shape,
                data,
            },
            move |g, _| {
                let mut full = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    for _ in 0..len {
                        full.extend_from_slice(&g.data()[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(Tensor {
                    shape: shape.clone(),
                    data: full,
                })]
            },
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        let len = *self
            .value
            .shape()
            .get(axis)
            .ok_or_else(|| Error::InvalidArgument(format!("axis {axis} out of range")))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len.max(1) as f32))
    }

    fn softmax_impl(&self, axis: usize, log: bool) -> Result<Var<'t>> {
        let shape = self.value.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value.data();
        let mut y = vec![0.0f32; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |a: usize| (o * len + a) * inner + i;
                let m = (0..len).map(|a| x[at(a)]).fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0f32;
                for a in 0..len {
                    z += (x[at(a)] - m).exp();
                }
                let lz = z.ln();
                for a in 0..len {
                    y[at(a)] = if log {
                        x[at(a)] - m - lz
                    } else {
                        (x[at(a)] - m).exp() / z
                    };
                }
            }
        }
        let out = Tensor {
            shape: shape.clone(),
            data: y,
        };
        let saved = Rc::new(out.clone());
        Ok(self.tape.op(&[self], out, move |g, _| {
            let gd = g.data();
            let y = saved.data();
            let mut gx = vec![0.0f32; gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |a: usize| (o * len + a) * inner + i;
                    if log {
                        let gs: f32 = (0..len).map(|a| gd[at(a)]).sum();
                        for a in 0..len {
                            gx[at(a)] = gd[at(a)] - y[at(a)].exp() * gs;
                        }
                    } else {
                        let dot: f32 = (0..len).map(|a| gd[at(a)] * y[at(a)]).sum();
                        for a in 0..len {
                            gx[at(a)] = y[at(a)] * (gd[at(a)] - dot);
                        }
                    }
                }
            }
            vec![Some(Tensor {
                shape: shape.clone(),
                data: gx,
            })]
        }))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        self.softmax_impl(axis, false)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t>> {
        self.softmax_impl(axis, true)
    }

    /// Normalize over the last axis, then apply optional per-feature scale
    /// and shift (both of the last-axis length).
    pub fn layer_norm(
        &self,
        gamma: Option<&Var<'t>>,
        beta: Option<&Var<'t>>,
        eps: f32,
    ) -> Result<Var<'t>> {
        let shape = self.value.shape().to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::InvalidArgument("layer_norm of a scalar".into()))?;
        for p in [gamma, beta].into_iter().flatten() {
            if p.shape() != [n] {
                return Err(Error::ShapeMismatch(format!(
                    "layer_norm affine {:?} for feature size {n}",
                    p.shape()
                )));
            }
        }
        let x = self.value.data();
        let rows = x.len() / n.max(1);
        let mut xhat = vec![0.0f32; x.len()];
        let mut rstd = vec![0.0f32; rows];
        for r in 0..rows {
            let row = &x[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for (h, v) in xhat[r * n..(r + 1) * n].iter_mut().zip(row) {
                *h = (v - mean) * rs;
            }
        }
        let g_vals = gamma.map(|g| Rc::clone(&g.value));
        let b_vals = beta.map(|b| Rc::clone(&b.value));
        let mut y = xhat.clone();
        for row in y.chunks_exact_mut(n) {
            if let Some(gv) = &g_vals {
                for (v, s) in row.iter_mut().zip(gv.data()) {
                    *v *= s;
                }
            }
            if let Some(bv) = &b_vals {
                for (v, s) in row.iter_mut().zip(bv.data()) {
                    *v += s;
                }
            }
        }
        let out = Tensor {
            shape: shape.clone(),
            data: y,
        };
        let mut inputs: Vec<&Var<'t>> = vec![self];
        inputs.extend(gamma);
        inputs.extend(beta);
        let has_gamma = gamma.is_some();
        let has_beta = beta.is_some();
        Ok(self.tape.op(&inputs, out, move |g, needs| {
            let gd = g.data();
            let mut grads = Vec::with_capacity(3);
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0f32; gd.len()];
                for r in 0..rows {
                    let gr = &gd[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let gh: Vec<f32> = match &g_vals {
                        Some(gv) => gr.iter().zip(gv.data()).map(|(a, b)| a * b).collect(),
                        None => gr.to_vec(),
                    };
                    let mean_gh = gh.iter().sum::<f32>() / n as f32;
                    let mean_ghh = gh.iter().zip(hr).map(|(a, b)| a * b).sum::<f32>() / n as f32;
                    for k in 0..n {
                        gx[r * n + k] = rstd[r] * (gh[k] - mean_gh - hr[k] * mean_ghh);
                    }
                }
                Tensor {
                    shape: shape.clone(),
                    data: gx,
                }
            });
            grads.push(gx);
            let mut k = 1;
            if has_gamma {
                grads.push(needs[k].then(|| {
                    let mut gg = vec![0.0f32; n];
                    for (gr, hr) in gd.chunks_exact(n).zip(xhat.chunks_exact(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    Tensor {
                        shape: vec![n],
                        data: gg,
                    }
                }));
                k += 1;
            }
            if has_beta {
                grads.push(needs[k].then(|| {
                    let mut gb = vec![0.0f32; n];
                    for gr in gd.chunks_exact(n) {
                        for j in 0..n {
                            gb[j] += gr[j];
                        }
                    }
                    Tensor {
                        shape: vec![n],
                        data: gb,
                    }
                }));
            }
            grads
        }))
    }
}
