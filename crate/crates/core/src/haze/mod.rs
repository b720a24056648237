//! Synthetic haze from the atmospheric scattering model.
//!
//! A hazy observation I is produced from a clean image J, a global
//! atmospheric light A and a per-pixel transmission t as
//! I = J·t + A·(1−t), with t = exp(−β·d) for scattering coefficient β and
//! scene depth d. The exact algebraic inverse J = (I−A)/t + A doubles as a
//! correctness oracle for the generator.

mod augment;
mod ppm;
mod synth;

pub use augment::{augment, crop, sample_patch, Dihedral};
pub use ppm::{read_pgm, read_ppm, write_pgm, write_ppm};
pub use synth::{
    generate_clean_image, generate_dataset, load_dataset, load_sample, read_meta,
    DatasetSample, DepthMode, SynthOptions,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Division guard for the inversion: Eq. J=(I−A)/t+A blows up as t→0.
pub const DEFAULT_T_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthKind {
    /// Depth grows top-to-bottom from 0 to `depth_scale`.
    Linear,
    /// Depth grows with distance from the image center, 0 at the center and
    /// `depth_scale` at the farthest corner.
    Radial,
}

impl DepthKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DepthKind::Linear => "linear",
            DepthKind::Radial => "radial",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(DepthKind::Linear),
            "radial" => Ok(DepthKind::Radial),
            other => Err(Error::Parse(format!("unknown depth kind {other:?}"))),
        }
    }
}

/// Per-sample haze generation record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    /// Atmospheric light, applied equally to all RGB channels.
    pub a: f64,
    /// Scattering coefficient per unit depth.
    pub beta: f64,
    pub depth_kind: DepthKind,
    /// Maximum scene depth in arbitrary units.
    pub depth_scale: f64,
}

/// Sampling ranges for [`sample_haze_params`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HazeRanges {
    pub a_min: f64,
    pub a_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// `None` draws the kind uniformly; `Some` pins it.
    pub depth_kind: Option<DepthKind>,
    pub depth_scale: f64,
}

impl Default for HazeRanges {
    fn default() -> Self {
        HazeRanges {
            a_min: 0.8,
            a_max: 1.0,
            beta_min: 0.04,
            beta_max: 0.2,
            depth_kind: None,
            depth_scale: 10.0,
        }
    }
}

impl HazeRanges {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_min <= self.a_max) || !(0.0..=1.0).contains(&self.a_min) || self.a_max > 1.0 {
            return Err(Error::Domain(format!(
                "atmospheric light range [{}, {}] invalid (need 0 <= min <= max <= 1)",
                self.a_min, self.a_max
            )));
        }
        if !(self.beta_min <= self.beta_max) || self.beta_min <= 0.0 {
            return Err(Error::Domain(format!(
                "scattering range [{}, {}] invalid (need 0 < min <= max)",
                self.beta_min, self.beta_max
            )));
        }
        if self.depth_scale <= 0.0 {
            return Err(Error::Domain(format!(
                "depth_scale {} must be positive",
                self.depth_scale
            )));
        }
        Ok(())
    }
}

/// An H×W grid of nonnegative scene depths.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<E: Scalar = f32> {
    h: usize,
    w: usize,
    data: Vec<E>,
}

impl<E: Scalar> DepthMap<E> {
    pub fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }
}

/// A generated (clean, hazy) pair with its generation record.
#[derive(Clone, Debug)]
pub struct HazeSample<E: Scalar = f32> {
    pub clean: Tensor<E>,
    pub hazy: Tensor<E>,
    pub params: HazeParams,
    /// Per-pixel transmission used to produce `hazy`.
    pub transmission: Vec<E>,
}

/// Analytic depth map: `linear` ramps top-to-bottom, `radial` grows from the
/// center outwards. All depths lie in [0, depth_scale].
pub fn make_depth_map<E: Scalar>(
    kind: DepthKind,
    h: usize,
    w: usize,
    depth_scale: f64,
) -> Result<DepthMap<E>> {
    if h == 0 || w == 0 {
        return Err(Error::Domain(format!("depth map needs H,W >= 1, got {h}x{w}")));
    }
    let mut data = Vec::with_capacity(h * w);
    match kind {
        DepthKind::Linear => {
            for y in 0..h {
                let frac = if h == 1 { 0.0 } else { y as f64 / (h - 1) as f64 };
                let d = E::from_f64(frac * depth_scale);
                data.extend(std::iter::repeat(d).take(w));
            }
        }
        DepthKind::Radial => {
            let cy = (h as f64 - 1.0) / 2.0;
            let cx = (w as f64 - 1.0) / 2.0;
            // the farthest corner sits at distance hypot(cy, cx) from center
            let r_max = (cy * cy + cx * cx).sqrt();
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    let r = (dy * dy + dx * dx).sqrt();
                    let frac = if r_max == 0.0 { 0.0 } else { r / r_max };
                    data.push(E::from_f64(frac * depth_scale));
                }
            }
        }
    }
    Ok(DepthMap { h, w, data })
}

/// t = exp(−β·d), elementwise; values in (0, 1].
pub fn transmission<E: Scalar>(depth: &DepthMap<E>, beta: f64) -> Result<Vec<E>> {
    if beta <= 0.0 {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let b = E::from_f64(beta);
    Ok(depth.data.iter().map(|&d| (-b * d).exp()).collect())
}

/// I = J·t + A·(1−t), clamped into [0,1] against rounding at the boundary.
/// `clean` is C×H×W; `t` has length H·W and is shared across channels.
pub fn apply_haze<E: Scalar>(clean: &Tensor<E>, a: f64, t: &[E]) -> Result<Tensor<E>> {
    let (c, h, w) = clean.chw()?;
    if t.len() != h * w {
        return Err(Error::Shape(format!(
            "transmission has {} entries, image plane is {h}x{w}",
            t.len()
        )));
    }
    let av = E::from_f64(a);
    let one = E::one();
    let mut out = Vec::with_capacity(clean.len());
    for ch in 0..c {
        let plane = &clean.data()[ch * h * w..(ch + 1) * h * w];
        for (&j, &tv) in plane.iter().zip(t) {
            let i = j * tv + av * (one - tv);
            out.push(i.max(E::zero()).min(one));
        }
    }
    Tensor::from_vec(clean.dims(), out)
}

/// Exact inversion J = (I−A)/t + A. Any transmission below `t_floor` is a
/// domain error (the inversion is singular at t = 0).
pub fn invert_haze<E: Scalar>(
    hazy: &Tensor<E>,
    a: f64,
    t: &[E],
    t_floor: f64,
) -> Result<Tensor<E>> {
    let (c, h, w) = hazy.chw()?;
    if t.len() != h * w {
        return Err(Error::Shape(format!(
            "transmission has {} entries, image plane is {h}x{w}",
            t.len()
        )));
    }
    let floor = E::from_f64(t_floor);
    let below = t.iter().filter(|&&tv| tv < floor).count();
    if below > 0 {
        return Err(Error::Domain(format!(
            "{below} of {} transmission values below floor {t_floor}",
            t.len()
        )));
    }
    let av = E::from_f64(a);
    let mut out = Vec::with_capacity(hazy.len());
    for ch in 0..c {
        let plane = &hazy.data()[ch * h * w..(ch + 1) * h * w];
        for (&i, &tv) in plane.iter().zip(t) {
            out.push((i - av) / tv + av);
        }
    }
    Tensor::from_vec(hazy.dims(), out)
}

/// Draws A and β uniformly from their ranges and the depth kind uniformly
/// from {linear, radial} unless the ranges pin it.
pub fn sample_haze_params<R: Rng>(rng: &mut R, ranges: &HazeRanges) -> Result<HazeParams> {
    ranges.validate()?;
    let a = if ranges.a_min == ranges.a_max {
        ranges.a_min
    } else {
        rng.gen_range(ranges.a_min..ranges.a_max)
    };
    let beta = if ranges.beta_min == ranges.beta_max {
        ranges.beta_min
    } else {
        rng.gen_range(ranges.beta_min..ranges.beta_max)
    };
    let depth_kind = match ranges.depth_kind {
        Some(k) => k,
        None => {
            if rng.gen_bool(0.5) {
                DepthKind::Linear
            } else {
                DepthKind::Radial
            }
        }
    };
    Ok(HazeParams { a, beta, depth_kind, depth_scale: ranges.depth_scale })
}

/// Produces the full sample for a clean image: depth, transmission, hazy.
pub fn hazify<E: Scalar>(clean: &Tensor<E>, params: &HazeParams) -> Result<HazeSample<E>> {
    let (_, h, w) = clean.chw()?;
    let depth = make_depth_map::<E>(params.depth_kind, h, w, params.depth_scale)?;
    let t = transmission(&depth, params.beta)?;
    let hazy = apply_haze(clean, params.a, &t)?;
    Ok(HazeSample { clean: clean.clone(), hazy, params: *params, transmission: t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn linear_depth_ramp() {
        let d = make_depth_map::<f64>(DepthKind::Linear, 3, 2, 10.0).unwrap();
        assert_eq!(d.data(), &[0.0, 0.0, 5.0, 5.0, 10.0, 10.0]);
    }

    #[test]
    fn radial_depth_zero_at_center() {
        let d = make_depth_map::<f64>(DepthKind::Radial, 5, 5, 8.0).unwrap();
        assert_eq!(d.data()[2 * 5 + 2], 0.0);
        assert!((d.data()[0] - 8.0).abs() < 1e-12); // corner
        assert!(d.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn transmission_values() {
        let d = make_depth_map::<f64>(DepthKind::Linear, 2, 1, 5.0).unwrap();
        let t = transmission(&d, 0.2).unwrap();
        assert_eq!(t[0], 1.0); // d = 0
        assert!((t[1] - (-1.0f64).exp()).abs() < 1e-12); // beta*d = 1
        assert!(transmission(&d, 0.0).is_err());
    }

    #[test]
    fn transmission_monotone_in_depth() {
        let d = make_depth_map::<f64>(DepthKind::Linear, 7, 1, 12.0).unwrap();
        let t = transmission(&d, 0.13).unwrap();
        for pair in t.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }

    #[test]
    fn apply_haze_identities() {
        let j = Tensor::<f64>::from_vec(&[3, 1, 2], vec![0.1, 0.9, 0.4, 0.5, 0.0, 1.0]).unwrap();
        // t = 1 everywhere → I = J
        let i = apply_haze(&j, 0.9, &[1.0, 1.0]).unwrap();
        assert_eq!(i.data(), j.data());
        // J = A constant → I = A for any t
        let a = 0.85;
        let ja = Tensor::<f64>::full(&[3, 1, 2], a).unwrap();
        let i = apply_haze(&ja, a, &[0.3, 0.7]).unwrap();
        for &v in i.data() {
            assert!((v - a).abs() < 1e-15);
        }
        // t → 0 limit → I → A
        let i = apply_haze(&j, a, &[1e-12, 1e-12]).unwrap();
        for &v in i.data() {
            assert!((v - a).abs() < 1e-9);
        }
    }

    #[test]
    fn invert_haze_is_exact_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let j = Tensor::<f64>::rand_uniform(&[3, 4, 5], 0.0, 1.0, &mut rng).unwrap();
        let d = make_depth_map::<f64>(DepthKind::Radial, 4, 5, 10.0).unwrap();
        let t = transmission(&d, 0.15).unwrap();
        let i = apply_haze(&j, 0.92, &t).unwrap();
        let back = invert_haze(&i, 0.92, &t, DEFAULT_T_FLOOR).unwrap();
        assert!(j.max_abs_diff(&back).unwrap() < 1e-6);
    }

    #[test]
    fn invert_haze_at_airlight_returns_airlight() {
        let a = 0.8;
        let i = Tensor::<f64>::full(&[3, 2, 2], a).unwrap();
        let j = invert_haze(&i, a, &[0.5, 0.2, 0.9, 1.0], DEFAULT_T_FLOOR).unwrap();
        for &v in j.data() {
            assert!((v - a).abs() < 1e-15);
        }
    }

    #[test]
    fn invert_haze_rejects_tiny_transmission() {
        let i = Tensor::<f64>::full(&[3, 1, 2], 0.5).unwrap();
        let err = invert_haze(&i, 0.9, &[0.5, 1e-5], DEFAULT_T_FLOOR).unwrap_err();
        match err {
            Error::Domain(msg) => assert!(msg.contains("1 of 2"), "{msg}"),
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn sampled_params_respect_ranges() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let ranges = HazeRanges::default();
        for _ in 0..1000 {
            let p = sample_haze_params(&mut rng, &ranges).unwrap();
            assert!(p.a >= 0.8 && p.a <= 1.0);
            assert!(p.beta >= 0.04 && p.beta <= 0.2);
        }
        // degenerate range pins the value
        let degenerate = HazeRanges { a_min: 0.9, a_max: 0.9, ..Default::default() };
        for _ in 0..10 {
            assert_eq!(sample_haze_params(&mut rng, &degenerate).unwrap().a, 0.9);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let ranges = HazeRanges::default();
        let draw = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_haze_params(&mut rng, &ranges).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn invalid_ranges_rejected() {
        let bad = HazeRanges { beta_min: 0.3, beta_max: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HazeRanges { a_min: 0.9, a_max: 0.8, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HazeRanges { beta_min: 0.0, beta_max: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
