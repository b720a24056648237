//! Dense tensors in N×C×H×W layout.
//!
//! A tensor is a flat row-major buffer plus up to four extents. Rank-4
//! tensors are interpreted as N×C×H×W; lower ranks appear for biases and
//! scalars. Tensors are immutable once built; autodiff happens on a
//! [`crate::tape::Tape`], not on the tensor itself.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Scalar = f32> {
    dims: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
}

impl<E: Scalar> Tensor<E> {
    /// Builds a tensor, checking the shape invariants: rank ≤ 4, every
    /// extent ≥ 1, and the element count matching the buffer length.
    pub fn from_vec(dims: &[usize], data: Vec<E>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!(
                "rank must be 1..={MAX_RANK}, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} imply {expected} elements, buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data, requires_grad: false })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::from_vec(dims, vec![E::zero(); n])
    }

    pub fn full(dims: &[usize], value: E) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::from_vec(dims, vec![value; n])
    }

    pub fn scalar(value: E) -> Self {
        Tensor { dims: vec![1], data: vec![value], requires_grad: false }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The extents as N,C,H,W. Lower-rank tensors are padded with leading
    /// 1-extents, so a rank-1 bias of length C reads as 1×1×1×C.
    pub fn dims4(&self) -> [usize; 4] {
        let mut d = [1usize; 4];
        let off = 4 - self.dims.len();
        for (i, &x) in self.dims.iter().enumerate() {
            d[off + i] = x;
        }
        d
    }

    /// Requires rank 4 and returns (N, C, H, W).
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::Shape(format!(
                "expected rank-4 N×C×H×W tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2], self.dims[3]))
    }

    /// Requires rank 3 and returns (C, H, W).
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        if self.rank() != 3 {
            return Err(Error::Shape(format!(
                "expected rank-3 C×H×W tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok((self.dims[0], self.dims[1], self.dims[2]))
    }

    /// Reinterprets a C×H×W image as a 1×C×H×W batch (no copy of semantics,
    /// same buffer).
    pub fn unsqueeze_batch(&self) -> Result<Tensor<E>> {
        let (c, h, w) = self.chw()?;
        Tensor::from_vec(&[1, c, h, w], self.data.clone())
    }

    /// Extracts batch element `n` of an N×C×H×W tensor as C×H×W.
    pub fn batch_item(&self, n: usize) -> Result<Tensor<E>> {
        let (nn, c, h, w) = self.nchw()?;
        if n >= nn {
            return Err(Error::Shape(format!("batch index {n} out of {nn}")));
        }
        let plane = c * h * w;
        Tensor::from_vec(&[c, h, w], self.data[n * plane..(n + 1) * plane].to_vec())
    }

    /// Channels `[offset, offset+count)` of an N×C×H×W tensor.
    pub fn slice_channels(&self, offset: usize, count: usize) -> Result<Tensor<E>> {
        let (n, c, h, w) = self.nchw()?;
        if count == 0 || offset + count > c {
            return Err(Error::Shape(format!(
                "channel slice [{offset}, {}) out of {c} channels",
                offset + count
            )));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * count * hw);
        for b in 0..n {
            let base = (b * c + offset) * hw;
            out.extend_from_slice(&self.data[base..base + count * hw]);
        }
        Tensor::from_vec(&[n, count, h, w], out)
    }

    /// Materializes a broadcast of `self` to `dims`. Supported patterns are
    /// the ones [`crate::tape::Tape::mul_broadcast`] accepts: identical
    /// shapes, N×C×1×1 → N×C×H×W, and N×1×H×W → N×C×H×W.
    pub fn expand_to(&self, dims: &[usize]) -> Result<Tensor<E>> {
        if self.dims == dims {
            return Ok(self.clone());
        }
        if dims.len() != 4 || self.rank() != 4 {
            return Err(Error::Shape(format!(
                "expand_to supports rank-4 only, got {:?} -> {dims:?}",
                self.dims
            )));
        }
        let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
        let s = &self.dims;
        let hw = h * w;
        let mut out = vec![E::zero(); n * c * hw];
        if s[0] == n && s[1] == c && s[2] == 1 && s[3] == 1 {
            // channel weights
            for b in 0..n {
                for ch in 0..c {
                    let v = self.data[b * c + ch];
                    let base = (b * c + ch) * hw;
                    out[base..base + hw].fill(v);
                }
            }
        } else if s[0] == n && s[1] == 1 && s[2] == h && s[3] == w {
            // pixel map
            for b in 0..n {
                let src = &self.data[b * hw..(b + 1) * hw];
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    out[base..base + hw].copy_from_slice(src);
                }
            }
        } else {
            return Err(Error::Shape(format!(
                "cannot broadcast {:?} to {dims:?}",
                self.dims
            )));
        }
        Tensor::from_vec(dims, out)
    }

    /// Stacks C×H×W images into an N×C×H×W batch.
    pub fn stack_batch(parts: &[Tensor<E>]) -> Result<Tensor<E>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("stack_batch needs at least one image".into()))?;
        let (c, h, w) = first.chw()?;
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            if p.chw()? != (c, h, w) {
                return Err(Error::Shape(format!(
                    "stack_batch mismatch: {:?} vs {:?}",
                    first.dims(),
                    p.dims()
                )));
            }
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(&[parts.len(), c, h, w], data)
    }

    /// Converts element precision (f32 ↔ f64 via f64).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| T::from_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor<E>) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "max_abs_diff on {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Debug-mode invariant: primitive outputs stay finite for finite inputs.
    #[track_caller]
    pub(crate) fn debug_assert_finite(&self, context: &str) {
        if cfg!(debug_assertions) {
            if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
                panic!(
                    "non-finite value {:?} at index {pos} after {context} (dims {:?})",
                    self.data[pos], self.dims
                );
            }
        }
    }
}

impl<E: Scalar> Tensor<E> {
    /// Uniform values in [lo, hi) from `rng`; used by initializers and tests.
    pub fn rand_uniform<R: rand::Rng>(
        dims: &[usize],
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| E::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Self::from_vec(dims, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_invariants_enforced() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::from_vec(&[1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(Tensor::<f32>::from_vec(&[], vec![]).is_err());
    }

    #[test]
    fn slice_channels_roundtrip() {
        let t = Tensor::<f32>::from_vec(&[1, 3, 2, 2], (0..12).map(|v| v as f32).collect())
            .unwrap();
        let s = t.slice_channels(1, 2).unwrap();
        assert_eq!(s.dims(), &[1, 2, 2, 2]);
        assert_eq!(s.data(), &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert!(t.slice_channels(2, 2).is_err());
    }

    #[test]
    fn expand_channel_weights() {
        let w = Tensor::<f32>::from_vec(&[1, 2, 1, 1], vec![0.5, 2.0]).unwrap();
        let e = w.expand_to(&[1, 2, 2, 2]).unwrap();
        assert_eq!(e.data(), &[0.5, 0.5, 0.5, 0.5, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn expand_pixel_map() {
        let m = Tensor::<f32>::from_vec(&[1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = m.expand_to(&[1, 3, 2, 2]).unwrap();
        for c in 0..3 {
            assert_eq!(&e.data()[c * 4..(c + 1) * 4], &[0.0, 1.0, 1.0, 0.0]);
        }
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    #[cfg(debug_assertions)]
    fn finite_check_fires() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).unwrap();
        t.debug_assert_finite("test");
    }
}
