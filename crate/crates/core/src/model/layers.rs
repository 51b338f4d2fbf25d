use rand_chacha::ChaCha8Rng;

use super::params::{fan_in_uniform, trunc_normal, Bound, ParamId, ParamStore};
use crate::error::Result;
use crate::tensor::{Tensor, Var};

/// Registers parameters under a name prefix with deterministic init.
pub(crate) struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn linear(&mut self, name: &str, inp: usize, out: usize) -> Linear {
        let w = self
            .store
            .add(format!("{name}.w"), trunc_normal(&[inp, out], 0.02, self.rng));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[out]));
        Linear { w, b }
    }

    pub fn layer_norm(&mut self, name: &str, n: usize) -> LayerNorm {
        let g = self.store.add(format!("{name}.g"), Tensor::ones(&[n]));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[n]));
        LayerNorm { g, b }
    }

    pub fn embedding(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add(name, trunc_normal(shape, 0.02, self.rng))
    }

    pub fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Conv {
        let shape = [cout, cin, kernel, kernel, kernel];
        let w = self.store.add(
            format!("{name}.w"),
            fan_in_uniform(&shape, cin * kernel.pow(3), self.rng),
        );
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv {
            w,
            b,
            stride,
            padding,
            transposed: false,
        }
    }

    /// Kernel-2, stride-2 transposed convolution (doubles each spatial dim).
    pub fn up(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let shape = [cin, cout, 2, 2, 2];
        let w = self
            .store
            .add(format!("{name}.w"), fan_in_uniform(&shape, cin * 8, self.rng));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv {
            w,
            b,
            stride: 2,
            padding: 0,
            transposed: true,
        }
    }

    pub fn zero_conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let w = self
            .store
            .add(format!("{name}.w"), Tensor::zeros(&[cout, cin, 1, 1, 1]));
        let b = self.store.add(format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv {
            w,
            b,
            stride: 1,
            padding: 0,
            transposed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    /// `(rows, in) → (rows, out)`.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.get(self.w))?.add(p.get(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub g: ParamId,
    pub b: ParamId,
}

impl LayerNorm {
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(Some(p.get(self.g)), Some(p.get(self.b)), 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl Conv {
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        if self.transposed {
            x.conv_transpose3d(p.get(self.w), Some(p.get(self.b)), self.stride, self.padding)
        } else {
            x.conv3d(p.get(self.w), Some(p.get(self.b)), self.stride, self.padding)
        }
    }
}

/// Convolutions applied in order, each followed by ReLU.
#[derive(Clone, Debug, Default)]
pub struct ConvStack {
    pub layers: Vec<Conv>,
}

impl ConvStack {
    pub fn forward<'t>(&self, p: &Bound<'t>, x: &Var<'t>) -> Result<Var<'t>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(p, &h)?.relu();
        }
        Ok(h)
    }
}
