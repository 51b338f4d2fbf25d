//! The dual-branch network.
//!
//! Each branch (low- or high-frequency input) produces a five-level skip
//! pyramid at scales /16, /8, /4, /2 and /1. A transformer branch taps four
//! encoder layers, unfolds each tap to its patch grid and projects it to
//! the pyramid scale with transposed convolutions; a convolutional stem on
//! the raw branch input supplies the full-resolution level. A CNN branch
//! builds the same pyramid with strided convolutions. The two pyramids are
//! summed level by level and a single decoder upsamples from /16, adding
//! the fused skip at every scale, and ends in a 1×1×1 classifier.

pub mod checkpoint;
mod config;
mod layers;
mod params;
mod patch;
mod transformer;

pub use config::{BranchKind, ModelConfig, PYRAMID_DIVISORS};
pub use params::{Bound, ParamId, ParamStore};
pub use patch::{patchify, patchify_var, unpatchify, unpatchify_var, PatchSequence};
pub use transformer::{EncoderOutput, TransformerEncoder};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};
use layers::{Builder, Conv, ConvStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Lf,
    Hf,
}

impl Side {
    pub fn prefix(self) -> &'static str {
        match self {
            Side::Lf => "lf",
            Side::Hf => "hf",
        }
    }
}

/// Per-scale features, coarse (/16) to fine (/1).
#[derive(Clone, Debug)]
pub struct SkipPyramid<'t> {
    pub levels: Vec<Var<'t>>,
}

impl<'t> SkipPyramid<'t> {
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.levels.iter().map(|l| l.shape().to_vec()).collect()
    }

    /// Level-wise sum.
    pub fn fuse_add(&self, other: &SkipPyramid<'t>) -> Result<SkipPyramid<'t>> {
        if self.shapes() != other.shapes() {
            return Err(Error::ShapeMismatch(format!(
                "pyramids {:?} and {:?}",
                self.shapes(),
                other.shapes()
            )));
        }
        let levels = self
            .levels
            .iter()
            .zip(&other.levels)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        Ok(SkipPyramid { levels })
    }
}

#[derive(Clone, Debug)]
struct TransformerBranch {
    encoder: TransformerEncoder,
    /// Projections for /16, /8, /4, /2, fed by taps in reverse order.
    projections: Vec<ConvStack>,
    stem: ConvStack,
}

#[derive(Clone, Debug)]
struct CnnBranch {
    stem: ConvStack,
    /// Downsampling stages producing /2, /4, /8, /16.
    downs: Vec<ConvStack>,
}

#[derive(Clone, Debug)]
enum Branch {
    Transformer(TransformerBranch),
    Cnn(CnnBranch),
}

fn build_stem(b: &mut Builder<'_>, name: &str, cin: usize, c: usize) -> ConvStack {
    ConvStack {
        layers: vec![
            b.conv(&format!("{name}.0"), cin, c, 3, 1, 1),
            b.conv(&format!("{name}.1"), c, c, 3, 1, 1),
        ],
    }
}

fn build_transformer_branch(b: &mut Builder<'_>, prefix: &str, cfg: &ModelConfig) -> Branch {
    let encoder = TransformerEncoder::build(b, prefix, cfg);
    let e = cfg.embed_dim;
    let projections = PYRAMID_DIVISORS[..4]
        .iter()
        .zip(&cfg.decoder_channels)
        .map(|(&div, &c)| {
            let name = format!("{prefix}.proj.s{div}");
            let steps = (cfg.patch_size / div).trailing_zeros() as usize;
            let mut layers: Vec<Conv> = Vec::with_capacity(steps + 1);
            for j in 0..steps {
                let cin = if j == 0 { e } else { c };
                layers.push(b.up(&format!("{name}.{j}"), cin, c));
            }
            let cin = if steps == 0 { e } else { c };
            layers.push(b.conv(&format!("{name}.{steps}"), cin, c, 3, 1, 1));
            ConvStack { layers }
        })
        .collect();
    let stem = build_stem(
        b,
        &format!("{prefix}.proj.stem"),
        cfg.in_channels,
        cfg.decoder_channels[4],
    );
    Branch::Transformer(TransformerBranch {
        encoder,
        projections,
        stem,
    })
}

fn build_cnn_branch(b: &mut Builder<'_>, prefix: &str, cfg: &ModelConfig) -> Branch {
    let ch = cfg.decoder_channels;
    let stem = build_stem(b, &format!("{prefix}.proj.stem"), cfg.in_channels, ch[4]);
    // ch is coarse-to-fine; walk it fine-to-coarse.
    let downs = (0..4)
        .map(|k| {
            let (cin, cout) = (ch[4 - k], ch[3 - k]);
            let name = format!("{prefix}.proj.down{}", 2usize << k);
            ConvStack {
                layers: vec![
                    b.conv(&format!("{name}.0"), cin, cout, 3, 2, 1),
                    b.conv(&format!("{name}.1"), cout, cout, 3, 1, 1),
                ],
            }
        })
        .collect();
    Branch::Cnn(CnnBranch { stem, downs })
}

#[derive(Clone, Debug)]
struct Decoder {
    ups: Vec<Conv>,
    blocks: Vec<Conv>,
    head: Conv,
}

impl Decoder {
    fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Self {
        let ch = cfg.decoder_channels;
        let mut ups = Vec::with_capacity(4);
        let mut blocks = Vec::with_capacity(4);
        for i in 1..5 {
            let div = PYRAMID_DIVISORS[i];
            ups.push(b.up(&format!("dec.up{div}"), ch[i - 1], ch[i]));
            blocks.push(b.conv(&format!("dec.block{div}"), ch[i], ch[i], 3, 1, 1));
        }
        let head = b.zero_conv("dec.head", ch[4], cfg.num_classes);
        Self { ups, blocks, head }
    }

    fn forward<'t>(&self, p: &Bound<'t>, fused: &SkipPyramid<'t>) -> Result<Var<'t>> {
        let mut x = fused.levels[0].clone();
        for (i, (up, block)) in self.ups.iter().zip(&self.blocks).enumerate() {
            let merged = up.forward(p, &x)?.add(&fused.levels[i + 1])?;
            x = block.forward(p, &merged)?.relu();
        }
        self.head.forward(p, &x)
    }
}

/// The complete network with its parameters.
#[derive(Clone, Debug)]
pub struct YNetr {
    config: ModelConfig,
    params: ParamStore,
    lf: Branch,
    hf: Branch,
    decoder: Decoder,
}

impl YNetr {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let config = config.normalized();
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let branch = |b: &mut Builder<'_>, side: Side, kind: BranchKind| match kind {
            BranchKind::Transformer => build_transformer_branch(b, side.prefix(), &config),
            BranchKind::Cnn => build_cnn_branch(b, side.prefix(), &config),
        };
        let lf = branch(&mut b, Side::Lf, config.lf_branch);
        let hf = branch(&mut b, Side::Hf, config.hf_branch);
        let decoder = Decoder::build(&mut b, &config);
        Ok(Self {
            config,
            params,
            lf,
            hf,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn branch(&self, side: Side) -> &Branch {
        match side {
            Side::Lf => &self.lf,
            Side::Hf => &self.hf,
        }
    }

    pub fn branch_kind(&self, side: Side) -> BranchKind {
        match self.branch(side) {
            Branch::Transformer(_) => BranchKind::Transformer,
            Branch::Cnn(_) => BranchKind::Cnn,
        }
    }

    /// Zero every projection/stem parameter of one branch (all of a CNN
    /// branch), which removes its contribution to the fused pyramid.
    pub fn zero_projections(&mut self, side: Side) -> usize {
        self.params.zero_prefix(&format!("{}.proj.", side.prefix()))
    }

    fn check_input(&self, x: &Var<'_>) -> Result<()> {
        let mut want = vec![self.config.in_channels];
        want.extend(self.config.input_dims);
        if x.shape() != want.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "model expects input {want:?}, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    /// Transformer taps of one branch.
    pub fn encode<'t>(
        &self,
        side: Side,
        p: &Bound<'t>,
        x: &Var<'t>,
        record_attention: bool,
    ) -> Result<EncoderOutput<'t>> {
        self.check_input(x)?;
        match self.branch(side) {
            Branch::Transformer(t) => t.encoder.encode(p, x, record_attention),
            Branch::Cnn(_) => Err(Error::InvalidArgument(format!(
                "{} branch is convolutional and has no transformer taps",
                side.prefix()
            ))),
        }
    }

    /// Project transformer taps (ordered shallow to deep) plus the raw
    /// branch input into a pyramid.
    pub fn project_skips<'t>(
        &self,
        side: Side,
        p: &Bound<'t>,
        taps: &[Var<'t>],
        input: &Var<'t>,
    ) -> Result<SkipPyramid<'t>> {
        let Branch::Transformer(t) = self.branch(side) else {
            return Err(Error::InvalidArgument(format!(
                "{} branch is convolutional",
                side.prefix()
            )));
        };
        if taps.len() != 4 {
            return Err(Error::InvalidArgument(format!("expected 4 taps, got {}", taps.len())));
        }
        let mut levels = Vec::with_capacity(5);
        for (proj, tap) in t.projections.iter().zip(taps.iter().rev()) {
            levels.push(proj.forward(p, tap)?);
        }
        levels.push(t.stem.forward(p, input)?);
        Ok(SkipPyramid { levels })
    }

    /// Skip pyramid of one branch for a `(C, d0, d1, d2)` input.
    pub fn branch_pyramid<'t>(
        &self,
        side: Side,
        p: &Bound<'t>,
        x: &Var<'t>,
    ) -> Result<SkipPyramid<'t>> {
        self.check_input(x)?;
        match self.branch(side) {
            Branch::Transformer(t) => {
                let out = t.encoder.encode(p, x, false)?;
                self.project_skips(side, p, &out.taps, x)
            }
            Branch::Cnn(c) => {
                let mut levels = vec![c.stem.forward(p, x)?];
                for down in &c.downs {
                    let next = down.forward(p, levels.last().unwrap())?;
                    levels.push(next);
                }
                levels.reverse();
                Ok(SkipPyramid { levels })
            }
        }
    }

    pub fn decode<'t>(&self, p: &Bound<'t>, fused: &SkipPyramid<'t>) -> Result<Var<'t>> {
        if fused.levels.len() != 5 {
            return Err(Error::ShapeMismatch(format!(
                "decoder needs 5 pyramid levels, got {}",
                fused.levels.len()
            )));
        }
        self.decoder.forward(p, fused)
    }

    /// `(num_classes, d0, d1, d2)` logits.
    pub fn forward<'t>(&self, p: &Bound<'t>, lf: &Var<'t>, hf: &Var<'t>) -> Result<Var<'t>> {
        if lf.shape() != hf.shape() {
            return Err(Error::ShapeMismatch(format!(
                "branch inputs differ: {:?} vs {:?}",
                lf.shape(),
                hf.shape()
            )));
        }
        let a = self.branch_pyramid(Side::Lf, p, lf)?;
        let b = self.branch_pyramid(Side::Hf, p, hf)?;
        self.decode(p, &a.fuse_add(&b)?)
    }

    /// Forward pass without gradient recording.
    pub fn predict(&self, lf: &Tensor, hf: &Tensor) -> Result<Tensor> {
        let tape = Tape::no_grad();
        let p = self.params.bind(&tape);
        let out = self.forward(&p, &tape.constant(lf.clone()), &tape.constant(hf.clone()))?;
        Ok(out.value().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dims: [16, 16, 32],
            embed_dim: 16,
            depth: 4,
            num_heads: 2,
            tap_layers: vec![],
            decoder_channels: [8, 8, 4, 4, 2],
            ..ModelConfig::tiny()
        }
    }

    fn input(cfg: &ModelConfig, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = vec![cfg.in_channels];
        shape.extend(cfg.input_dims);
        Tensor::randn(&shape, 1.0, &mut rng)
    }

    fn conv_count(cin: usize, cout: usize, k: usize) -> usize {
        cin * cout * k * k * k + cout
    }

    // Enumerated independently of the builder.
    fn expected_params(cfg: &ModelConfig) -> usize {
        let e = cfg.embed_dim;
        let h = cfg.mlp_ratio * e;
        let ch = cfg.decoder_channels;
        let block = 4 * e + (e * 3 * e + 3 * e) + (e * e + e) + (e * h + h) + (h * e + e);
        let encoder = cfg.token_len() * e + e + cfg.num_tokens() * e + cfg.depth * block;
        let stem = conv_count(cfg.in_channels, ch[4], 3) + conv_count(ch[4], ch[4], 3);
        let mut projections = 0;
        for (i, div) in [16usize, 8, 4, 2].into_iter().enumerate() {
            let steps = (cfg.patch_size / div).ilog2() as usize;
            let c = ch[i];
            projections += if steps == 0 {
                conv_count(e, c, 3)
            } else {
                conv_count(e, c, 2) + (steps - 1) * conv_count(c, c, 2) + conv_count(c, c, 3)
            };
        }
        let cnn = stem
            + (0..4)
                .map(|k| conv_count(ch[4 - k], ch[3 - k], 3) + conv_count(ch[3 - k], ch[3 - k], 3))
                .sum::<usize>();
        let branch = |kind| match kind {
            BranchKind::Transformer => encoder + projections + stem,
            BranchKind::Cnn => cnn,
        };
        let decoder = (1..5)
            .map(|i| conv_count(ch[i - 1], ch[i], 2) + conv_count(ch[i], ch[i], 3))
            .sum::<usize>()
            + conv_count(ch[4], cfg.num_classes, 1);
        branch(cfg.lf_branch) + branch(cfg.hf_branch) + decoder
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut cfgs = vec![small(), ModelConfig::tiny()];
        let mut mixed = small();
        mixed.hf_branch = BranchKind::Cnn;
        cfgs.push(mixed);
        let mut p32 = small();
        p32.patch_size = 32;
        p32.input_dims = [32, 32, 32];
        cfgs.push(p32);
        for cfg in cfgs {
            let m = YNetr::new(cfg.clone()).unwrap();
            assert_eq!(m.params().num_elements(), expected_params(&cfg), "{cfg:?}");
        }
    }

    #[test]
    fn pyramid_and_logit_shapes() {
        let cfg = small();
        let m = YNetr::new(cfg.clone()).unwrap();
        let tape = Tape::no_grad();
        let p = m.params().bind(&tape);
        let x = tape.constant(input(&cfg, 1));
        let pyr = m.branch_pyramid(Side::Lf, &p, &x).unwrap();
        let ch = cfg.decoder_channels;
        let want: Vec<Vec<usize>> = PYRAMID_DIVISORS
            .iter()
            .zip(ch)
            .map(|(&d, c)| vec![c, 16 / d, 16 / d, 32 / d])
            .collect();
        assert_eq!(pyr.shapes(), want);
        let logits = m.forward(&p, &x, &x).unwrap();
        assert_eq!(logits.shape(), &[2, 16, 16, 32]);
        // zero classifier: every logit is 0, so softmax is (0.5, 0.5)
        assert!(logits.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cnn_branch_matches_transformer_pyramid() {
        let mut cfg = small();
        cfg.hf_branch = BranchKind::Cnn;
        let m = YNetr::new(cfg.clone()).unwrap();
        let tape = Tape::no_grad();
        let p = m.params().bind(&tape);
        let x = tape.constant(input(&cfg, 2));
        let a = m.branch_pyramid(Side::Lf, &p, &x).unwrap();
        let b = m.branch_pyramid(Side::Hf, &p, &x).unwrap();
        assert_eq!(a.shapes(), b.shapes());
        assert!(m.encode(Side::Hf, &p, &x, false).is_err());
        assert_eq!(m.forward(&p, &x, &x).unwrap().shape(), &[2, 16, 16, 32]);
    }

    #[test]
    fn fusion_identities() {
        let cfg = small();
        let m = YNetr::new(cfg.clone()).unwrap();
        let tape = Tape::no_grad();
        let p = m.params().bind(&tape);
        let x = tape.constant(input(&cfg, 3));
        let a = m.branch_pyramid(Side::Lf, &p, &x).unwrap();
        let b = m.branch_pyramid(Side::Hf, &p, &x).unwrap();
        let zero = SkipPyramid {
            levels: a.levels.iter().map(|l| tape.constant(Tensor::zeros(l.shape()))).collect(),
        };
        let ab = a.fuse_add(&b).unwrap();
        let ba = b.fuse_add(&a).unwrap();
        let aa = a.fuse_add(&a).unwrap();
        let a0 = a.fuse_add(&zero).unwrap();
        for i in 0..5 {
            assert!(ab.levels[i].value().bitwise_eq(ba.levels[i].value()));
            assert!(a0.levels[i].value().bitwise_eq(a.levels[i].value()));
            let twice = a.levels[i].value().map(|v| 2.0 * v);
            assert!(aa.levels[i].value().bitwise_eq(&twice));
        }
        let short = SkipPyramid { levels: a.levels[..4].to_vec() };
        assert!(a.fuse_add(&short).is_err());
    }

    #[test]
    fn zeroed_projections_give_zero_pyramid_and_neutrality() {
        let cfg = small();
        let mut m = YNetr::new(cfg.clone()).unwrap();
        // a non-zero head so the output actually depends on the pyramid
        let head = m.params().find("dec.head.w").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        m.params_mut().set(head, Tensor::randn(&[2, 2, 1, 1, 1], 1.0, &mut rng)).unwrap();
        let lf = input(&cfg, 4);
        let before = m.predict(&lf, &input(&cfg, 5)).unwrap();
        assert!(!before.bitwise_eq(&m.predict(&lf, &input(&cfg, 6)).unwrap()));
        assert!(m.zero_projections(Side::Hf) > 0);
        let tape = Tape::no_grad();
        let p = m.params().bind(&tape);
        let pyr = m.branch_pyramid(Side::Hf, &p, &tape.constant(input(&cfg, 7))).unwrap();
        assert!(pyr.levels.iter().all(|l| l.value().data().iter().all(|&v| v == 0.0)));
        let reference = m.predict(&lf, &input(&cfg, 5)).unwrap();
        for seed in 10..13 {
            assert!(reference.bitwise_eq(&m.predict(&lf, &input(&cfg, seed)).unwrap()));
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let cfg = small();
        let mut m = YNetr::new(cfg.clone()).unwrap();
        // the zero-initialized head blocks all upstream gradient on the
        // first step; perturb it to see the rest of the graph
        let head = m.params().find("dec.head.w").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        m.params_mut().set(head, Tensor::randn(&[2, 2, 1, 1, 1], 1.0, &mut rng)).unwrap();
        let tape = Tape::new();
        let p = m.params().bind(&tape);
        let lf = tape.constant(input(&cfg, 1));
        let hf = tape.constant(input(&cfg, 2));
        let logits = m.forward(&p, &lf, &hf).unwrap();
        let w = tape.constant(Tensor::randn(logits.shape(), 1.0, &mut rng));
        let loss = logits.mul(&w).unwrap().sum_all();
        let grads = tape.backward(&loss).unwrap();
        for (name, v) in m.params().names().iter().zip(p.vars()) {
            let g = grads.get(v);
            assert!(g.data().iter().any(|&x| x != 0.0), "no gradient reaches {name}");
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let cfg = small();
        let m = YNetr::new(cfg.clone()).unwrap();
        let lf = input(&cfg, 1);
        let other = Tensor::zeros(&[1, 16, 16, 16]);
        assert!(matches!(m.predict(&lf, &other), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.predict(&other, &other), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn same_seed_same_logits() {
        let mut cfg = small();
        cfg.init_seed = 3;
        let a = YNetr::new(cfg.clone()).unwrap();
        let b = YNetr::new(cfg.clone()).unwrap();
        for (x, y) in a.params().tensors().zip(b.params().tensors()) {
            assert!(x.bitwise_eq(y));
        }
    }
}
