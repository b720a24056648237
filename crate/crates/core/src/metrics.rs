//! Reference PSNR and SSIM for images in [0,1].
//!
//! Both metrics clamp their inputs to [0,1] first and accumulate in f64.
//! SSIM is the single-scale form: an 11×11 Gaussian window with σ = 1.5,
//! constants C1 = 0.01² and C2 = 0.03² for unit dynamic range, evaluated at
//! every fully-interior window position, per channel, then averaged.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn clamped_f64<E: Scalar>(t: &Tensor<E>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64().clamp(0.0, 1.0)).collect()
}

fn check_same_shape<E: Scalar>(x: &Tensor<E>, y: &Tensor<E>) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "metric inputs differ: {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

/// 10·log10(1/MSE) with peak 1, over all channels and pixels. Identical
/// images report +∞.
pub fn psnr<E: Scalar>(x: &Tensor<E>, y: &Tensor<E>) -> Result<f64> {
    check_same_shape(x, y)?;
    let xv = clamped_f64(x);
    let yv = clamped_f64(y);
    let mse = xv
        .iter()
        .zip(&yv)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / xv.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -half..=half {
        for x in -half..=half {
            let r2 = (y * y + x * x) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean single-scale SSIM; inputs must be C×H×W (or rank-4 with N=1) with
/// min(H, W) >= 11.
pub fn ssim<E: Scalar>(x: &Tensor<E>, y: &Tensor<E>) -> Result<f64> {
    check_same_shape(x, y)?;
    let (c, h, w) = match x.rank() {
        3 => x.chw()?,
        4 => {
            let (n, c, h, w) = x.nchw()?;
            if n != 1 {
                return Err(Error::Shape("ssim expects a single image".into()));
            }
            (c, h, w)
        }
        r => return Err(Error::Shape(format!("ssim needs rank 3 or 4, got {r}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    let window = gaussian_window();
    let xv = clamped_f64(x);
    let yv = clamped_f64(y);
    let plane = h * w;

    let mut channel_sum = 0.0;
    for ch in 0..c {
        let xp = &xv[ch * plane..(ch + 1) * plane];
        let yp = &yv[ch * plane..(ch + 1) * plane];
        let mut acc = 0.0;
        let mut count = 0usize;
        for top in 0..=h - SSIM_WINDOW {
            for left in 0..=w - SSIM_WINDOW {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                let mut wi = 0usize;
                for dy in 0..SSIM_WINDOW {
                    let row = (top + dy) * w + left;
                    for dx in 0..SSIM_WINDOW {
                        let g = window[wi];
                        wi += 1;
                        let a = xp[row + dx];
                        let b = yp[row + dx];
                        mx += g * a;
                        my += g * b;
                        mxx += g * a * a;
                        myy += g * b * b;
                        mxy += g * a * b;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let s = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                acc += s;
                count += 1;
            }
        }
        channel_sum += acc / count as f64;
    }
    Ok(channel_sum / c as f64)
}

/// Per-image scores plus their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.rows.push(MetricRow { name: name.into(), psnr_db, ssim });
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr_db).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    /// CSV with columns name,psnr_db,ssim and a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.name, r.psnr_db, r.ssim);
        }
        let _ = writeln!(out, "mean,{},{}", self.mean_psnr(), self.mean_ssim());
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width text table for terminal output.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>10} {:>8}", "name", "psnr_db", "ssim");
        for r in &self.rows {
            let _ = writeln!(out, "{:<12} {:>10.4} {:>8.4}", r.name, r.psnr_db, r.ssim);
        }
        let _ = writeln!(
            out,
            "{:<12} {:>10.4} {:>8.4}",
            "mean",
            self.mean_psnr(),
            self.mean_ssim()
        );
        out
    }
}
