use std::rc::Rc;

use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Strided matrix view: element (i, j) lives at `offset + i*rs + j*cs`.
#[derive(Clone, Copy)]
pub(crate) struct Layout {
    pub rs: usize,
    pub cs: usize,
}

impl Layout {
    pub fn row_major(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }

    pub fn transposed(self) -> Self {
        Self {
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn span(self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.rs + (cols - 1) * self.cs + 1
        }
    }
}

/// `c = a·b + beta·c` for an (m×k)·(k×n) product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    la: Layout,
    b: &[f32],
    lb: Layout,
    beta: f32,
    c: &mut [f32],
    lc: Layout,
) {
    assert!(a.len() >= la.span(m, k), "gemm: lhs buffer too small");
    assert!(b.len() >= lb.span(k, n), "gemm: rhs buffer too small");
    assert!(c.len() >= lc.span(m, n), "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.rs as isize,
            la.cs as isize,
            b.as_ptr(),
            lb.rs as isize,
            lb.cs as isize,
            beta,
            c.as_mut_ptr(),
            lc.rs as isize,
            lc.cs as isize,
        );
    }
}

/// Shapes for a (possibly batched) product: (batch, m, k, n).
fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let dims = match (a, b) {
        ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
        ([ba, m, k], [bb, k2, n]) if ba == bb && k == k2 => (*ba, *m, *k, *n),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "matmul of {a:?} and {b:?}"
            )))
        }
    };
    Ok(dims)
}

impl<'t> Var<'t> {
    /// Matrix product of 2-D operands, or batched product of 3-D operands
    /// with equal batch size.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (batch, m, k, n) = matmul_dims(self.shape(), other.shape())?;
        let a = Rc::clone(&self.value);
        let b = Rc::clone(&other.value);
        let mut out = vec![0.0f32; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..],
                Layout::row_major(k),
                &b.data()[i * k * n..],
                Layout::row_major(n),
                0.0,
                &mut out[i * m * n..],
                Layout::row_major(n),
            );
        }
        let mut shape = self.shape().to_vec();
        let last = shape.len() - 1;
        shape[last] = n;
        let out = Tensor::new(&shape, out)?;
        Ok(self.tape.op(&[self, other], out, move |g, needs| {
            let gd = g.data();
            let ga = needs[0].then(|| {
                let mut ga = vec![0.0f32; batch * m * k];
                for i in 0..batch {
                    // dA = dC · Bᵀ
                    gemm(
                        m,
                        n,
                        k,
                        &gd[i * m * n..],
                        Layout::row_major(n),
                        &b.data()[i * k * n..],
                        Layout::row_major(n).transposed(),
                        0.0,
                        &mut ga[i * m * k..],
                        Layout::row_major(k),
                    );
                }
                Tensor {
                    shape: a.shape().to_vec(),
                    data: ga,
                }
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0.0f32; batch * k * n];
                for i in 0..batch {
                    // dB = Aᵀ · dC
                    gemm(
                        k,
                        m,
                        n,
                        &a.data()[i * m * k..],
                        Layout::row_major(k).transposed(),
                        &gd[i * m * n..],
                        Layout::row_major(n),
                        0.0,
                        &mut gb[i * k * n..],
                        Layout::row_major(n),
                    );
                }
                Tensor {
                    shape: b.shape().to_vec(),
                    data: gb,
                }
            });
            vec![ga, gb]
        }))
    }
}
