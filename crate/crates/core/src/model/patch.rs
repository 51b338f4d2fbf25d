//! Non-overlapping cubic patches to token rows and back.
//!
//! Tokens are ordered row-major over the patch grid; each token lists its
//! voxels channel-major, then d0, d1, d2.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// `(N, P³·C)`.
    pub tokens: Tensor,
    pub grid: [usize; 3],
    pub patch: usize,
    pub channels: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.tokens.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token_len(&self) -> usize {
        self.tokens.shape()[1]
    }
}

fn grid_of(shape: &[usize], patch: usize) -> Result<(usize, [usize; 3])> {
    let [c, d0, d1, d2] = match shape {
        [c, a, b, d] => [*c, *a, *b, *d],
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "patchify expects (C, d0, d1, d2), got {shape:?}"
            )))
        }
    };
    if patch == 0 || [d0, d1, d2].iter().any(|&d| d % patch != 0 || d == 0) {
        return Err(Error::InvalidArgument(format!(
            "dims {:?} not divisible by patch size {patch}",
            [d0, d1, d2]
        )));
    }
    Ok((c, [d0 / patch, d1 / patch, d2 / patch]))
}

/// `(C, d0, d1, d2) → (N, C·P³)` on a tape.
pub fn patchify_var<'t>(x: &Var<'t>, patch: usize) -> Result<Var<'t>> {
    let (c, [g0, g1, g2]) = grid_of(x.shape(), patch)?;
    let p = patch;
    x.reshape(&[c, g0, p, g1, p, g2, p])?
        .permute(&[1, 3, 5, 0, 2, 4, 6])?
        .reshape(&[g0 * g1 * g2, c * p * p * p])
}

/// Inverse of [`patchify_var`].
pub fn unpatchify_var<'t>(
    tokens: &Var<'t>,
    grid: [usize; 3],
    patch: usize,
    channels: usize,
) -> Result<Var<'t>> {
    let [g0, g1, g2] = grid;
    let p = patch;
    if tokens.shape() != [g0 * g1 * g2, channels * p * p * p] {
        return Err(Error::ShapeMismatch(format!(
            "tokens {:?} for grid {grid:?}, patch {p}, {channels} channels",
            tokens.shape()
        )));
    }
    tokens
        .reshape(&[g0, g1, g2, channels, p, p, p])?
        .permute(&[3, 0, 4, 1, 5, 2, 6])?
        .reshape(&[channels, g0 * p, g1 * p, g2 * p])
}

pub fn patchify(x: &Tensor, patch: usize) -> Result<PatchSequence> {
    let (channels, grid) = grid_of(x.shape(), patch)?;
    let tape = Tape::no_grad();
    let v = patchify_var(&tape.constant(x.clone()), patch)?;
    Ok(PatchSequence {
        tokens: v.value().clone(),
        grid,
        patch,
        channels,
    })
}

pub fn unpatchify(seq: &PatchSequence) -> Result<Tensor> {
    let tape = Tape::no_grad();
    let v = unpatchify_var(
        &tape.constant(seq.tokens.clone()),
        seq.grid,
        seq.patch,
        seq.channels,
    )?;
    Ok(v.value().clone())
}
