//! Dihedral patch augmentation and random patch extraction.
//!
//! The eight variants are the four rotations (0/90/180/270 degrees)
//! optionally followed by a horizontal flip. One sampled transform is meant
//! to be applied to both halves of a (clean, hazy) pair.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One of the 8 symmetries of the square: `rot` clockwise quarter-turns,
/// then an optional horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    /// Uniform over the 8 variants.
    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        Dihedral { rot: rng.gen_range(0..4), flip: rng.gen_bool(0.5) }
    }

    /// Applies the transform to a square C×S×S patch.
    pub fn apply<E: Scalar>(&self, patch: &Tensor<E>) -> Result<Tensor<E>> {
        let (c, h, w) = patch.chw()?;
        if h != w {
            return Err(Error::Shape(format!(
                "augmentation needs a square patch, got {h}x{w}"
            )));
        }
        let s = h;
        let src = patch.data();
        let mut out = vec![E::zero(); src.len()];
        for ch in 0..c {
            let plane = &src[ch * s * s..(ch + 1) * s * s];
            let dst = &mut out[ch * s * s..(ch + 1) * s * s];
            for y in 0..s {
                for x in 0..s {
                    // clockwise rotation by 90°: out[y][x] = in[s-1-x][y]
                    let (mut sy, mut sx) = (y, x);
                    for _ in 0..self.rot {
                        let (ny, nx) = (s - 1 - sx, sy);
                        sy = ny;
                        sx = nx;
                    }
                    let v = plane[sy * s + sx];
                    let tx = if self.flip { s - 1 - x } else { x };
                    dst[y * s + tx] = v;
                }
            }
        }
        Tensor::from_vec(patch.dims(), out)
    }
}

/// Applies one uniformly sampled dihedral variant.
pub fn augment<E: Scalar, R: Rng>(patch: &Tensor<E>, rng: &mut R) -> Result<Tensor<E>> {
    Dihedral::sample(rng).apply(patch)
}

/// Copies the S×S window of a C×H×W image at (top, left).
pub fn crop<E: Scalar>(
    image: &Tensor<E>,
    top: usize,
    left: usize,
    size: usize,
) -> Result<Tensor<E>> {
    let (c, h, w) = image.chw()?;
    if top + size > h || left + size > w {
        return Err(Error::Shape(format!(
            "crop {size}x{size} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..size {
            let row = (top + y) * w + left;
            out.extend_from_slice(&plane[row..row + size]);
        }
    }
    Tensor::from_vec(&[c, size, size], out)
}

/// Uniform random S×S patch; returns the patch and its (top, left) offset so
/// the paired ground truth can be cropped identically.
pub fn sample_patch<E: Scalar, R: Rng>(
    image: &Tensor<E>,
    size: usize,
    rng: &mut R,
) -> Result<(Tensor<E>, (usize, usize))> {
    let (_, h, w) = image.chw()?;
    if size == 0 || size > h.min(w) {
        return Err(Error::Shape(format!(
            "patch size {size} does not fit a {h}x{w} image"
        )));
    }
    let top = rng.gen_range(0..=h - size);
    let left = rng.gen_range(0..=w - size);
    Ok((crop(image, top, left, size)?, (top, left)))
}
