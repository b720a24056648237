//! Deterministic synthetic dataset generation and loading.
//!
//! Directory layout: `clean/NNNN.ppm`, `hazy/NNNN.ppm`, `meta/NNNN.txt`
//! (one `key=value` per line: A, beta, depth_kind, depth_scale, seed).
//!
//! Every sample derives its own ChaCha stream from (seed, index), so the
//! dataset bytes depend only on the generation options, never on iteration
//! order or timing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{hazify, sample_haze_params, write_ppm, DepthKind, HazeParams, HazeRanges};
use crate::error::{Error, Result};
use crate::haze::{augment::crop, read_ppm};
use crate::tensor::Tensor;

/// How the depth family is chosen per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Linear,
    Radial,
    /// Alternates linear/radial by sample index.
    Mixed,
}

#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub ranges: HazeRanges,
    pub depth_mode: DepthMode,
    /// Optional directory of user PPMs used as clean sources (cycled by
    /// index, randomly cropped to size). Without it a procedural texture
    /// generator supplies the clean images.
    pub source: Option<PathBuf>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            count: 1,
            height: 64,
            width: 64,
            seed: 0,
            ranges: HazeRanges::default(),
            depth_mode: DepthMode::Mixed,
            source: None,
        }
    }
}

/// One loaded (clean, hazy) pair.
#[derive(Clone, Debug)]
pub struct DatasetSample {
    pub name: String,
    pub clean: Tensor<f32>,
    pub hazy: Tensor<f32>,
    pub params: Option<HazeParams>,
}

/// Procedural clean image: a bilinear blend of four random corner colors
/// with a handful of alpha-blended rectangles on top.
pub fn generate_clean_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> Result<Tensor<f32>> {
    if h == 0 || w == 0 {
        return Err(Error::Domain(format!("image needs H,W >= 1, got {h}x{w}")));
    }
    let corners: Vec<[f32; 3]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            ]
        })
        .collect();
    let plane = h * w;
    let mut data = vec![0.0f32; 3 * plane];
    for y in 0..h {
        let fy = if h == 1 { 0.0 } else { y as f32 / (h - 1) as f32 };
        for x in 0..w {
            let fx = if w == 1 { 0.0 } else { x as f32 / (w - 1) as f32 };
            for ch in 0..3 {
                let top = corners[0][ch] * (1.0 - fx) + corners[1][ch] * fx;
                let bottom = corners[2][ch] * (1.0 - fx) + corners[3][ch] * fx;
                data[ch * plane + y * w + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }

    let rects = rng.gen_range(3..=8);
    for _ in 0..rects {
        let y0 = rng.gen_range(0..h);
        let x0 = rng.gen_range(0..w);
        let y1 = (y0 + rng.gen_range(1..=h.max(2) / 2 + 1)).min(h);
        let x1 = (x0 + rng.gen_range(1..=w.max(2) / 2 + 1)).min(w);
        let color: [f32; 3] = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        let alpha: f32 = rng.gen_range(0.4..1.0);
        for ch in 0..3 {
            for y in y0..y1 {
                for x in x0..x1 {
                    let v = &mut data[ch * plane + y * w + x];
                    *v = (1.0 - alpha) * *v + alpha * color[ch];
                }
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

fn sample_name(index: usize) -> String {
    format!("{index:04}")
}

fn per_sample_rng(seed: u64, index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn meta_text(params: &HazeParams, seed: u64) -> String {
    format!(
        "A={}\nbeta={}\ndepth_kind={}\ndepth_scale={}\nseed={}\n",
        params.a,
        params.beta,
        params.depth_kind.as_str(),
        params.depth_scale,
        seed
    )
}

/// Parses a `meta/NNNN.txt` file back into its haze parameters and seed.
pub fn read_meta(path: &Path) -> Result<(HazeParams, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut a = None;
    let mut beta = None;
    let mut kind = None;
    let mut scale = None;
    let mut seed = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse(format!("{}: bad meta line {line:?}", path.display())));
        };
        let bad = |what: &str| Error::Parse(format!("{}: bad {what} {value:?}", path.display()));
        match key {
            "A" => a = Some(value.parse::<f64>().map_err(|_| bad("A"))?),
            "beta" => beta = Some(value.parse::<f64>().map_err(|_| bad("beta"))?),
            "depth_kind" => kind = Some(DepthKind::parse(value)?),
            "depth_scale" => scale = Some(value.parse::<f64>().map_err(|_| bad("depth_scale"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
            other => return Err(Error::Parse(format!("{}: unknown meta key {other:?}", path.display()))),
        }
    }
    match (a, beta, kind, scale, seed) {
        (Some(a), Some(beta), Some(depth_kind), Some(depth_scale), Some(seed)) => {
            Ok((HazeParams { a, beta, depth_kind, depth_scale }, seed))
        }
        _ => Err(Error::Parse(format!("{}: incomplete meta file", path.display()))),
    }
}

fn source_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "source directory {} holds no .ppm files",
            dir.display()
        )));
    }
    Ok(files)
}

/// Generates `count` samples under `dir`. Returns the sample names.
pub fn generate_dataset(dir: &Path, opts: &SynthOptions) -> Result<Vec<String>> {
    opts.ranges.validate()?;
    if opts.count == 0 {
        return Err(Error::Domain("dataset count must be >= 1".into()));
    }
    if opts.height == 0 || opts.width == 0 {
        return Err(Error::Domain(format!(
            "sample size {}x{} invalid",
            opts.height, opts.width
        )));
    }
    let sources = match &opts.source {
        Some(src) => Some(source_images(src)?),
        None => None,
    };
    for sub in ["clean", "hazy", "meta"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let mut names = Vec::with_capacity(opts.count);
    for index in 0..opts.count {
        let mut rng = per_sample_rng(opts.seed, index);
        let kind = match opts.depth_mode {
            DepthMode::Linear => DepthKind::Linear,
            DepthMode::Radial => DepthKind::Radial,
            DepthMode::Mixed => {
                if index % 2 == 0 {
                    DepthKind::Linear
                } else {
                    DepthKind::Radial
                }
            }
        };
        let ranges = HazeRanges { depth_kind: Some(kind), ..opts.ranges.clone() };
        let params = sample_haze_params(&mut rng, &ranges)?;

        let clean = match &sources {
            Some(files) => {
                let img = read_ppm(&files[index % files.len()])?;
                let (_, h, w) = img.chw()?;
                if h < opts.height || w < opts.width {
                    return Err(Error::Dataset(format!(
                        "source image {} is {h}x{w}, smaller than requested {}x{}",
                        files[index % files.len()].display(),
                        opts.height,
                        opts.width
                    )));
                }
                let top = rng.gen_range(0..=h - opts.height);
                let left = rng.gen_range(0..=w - opts.width);
                crop_rect(&img, top, left, opts.height, opts.width)?
            }
            None => generate_clean_image(&mut rng, opts.height, opts.width)?,
        };

        let sample = hazify(&clean, &params)?;
        let name = sample_name(index);
        write_ppm(&sample.clean, &dir.join("clean").join(format!("{name}.ppm")))?;
        write_ppm(&sample.hazy, &dir.join("hazy").join(format!("{name}.ppm")))?;
        let meta_path = dir.join("meta").join(format!("{name}.txt"));
        fs::write(&meta_path, meta_text(&params, opts.seed))
            .map_err(|e| Error::io(&meta_path, e))?;
        names.push(name);
    }
    Ok(names)
}

/// Rectangular crop (general H×W window, unlike the square training crop).
fn crop_rect(
    image: &Tensor<f32>,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<Tensor<f32>> {
    if height == width {
        return crop(image, top, left, height);
    }
    let (c, h, w) = image.chw()?;
    if top + height > h || left + width > w {
        return Err(Error::Shape(format!(
            "crop {height}x{width} at ({top},{left}) exceeds {h}x{w}"
        )));
    }
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..height {
            let row = (top + y) * w + left;
            out.extend_from_slice(&plane[row..row + width]);
        }
    }
    Tensor::from_vec(&[c, height, width], out)
}

/// Loads one sample by name.
pub fn load_sample(dir: &Path, name: &str) -> Result<DatasetSample> {
    let clean = read_ppm(&dir.join("clean").join(format!("{name}.ppm")))?;
    let hazy = read_ppm(&dir.join("hazy").join(format!("{name}.ppm")))?;
    if clean.dims() != hazy.dims() {
        return Err(Error::Dataset(format!(
            "sample {name}: clean {:?} and hazy {:?} disagree",
            clean.dims(),
            hazy.dims()
        )));
    }
    let meta_path = dir.join("meta").join(format!("{name}.txt"));
    let params = if meta_path.exists() {
        Some(read_meta(&meta_path)?.0)
    } else {
        None
    };
    Ok(DatasetSample { name: name.to_string(), clean, hazy, params })
}

/// Loads every pair in the directory, sorted by name. Errors on an empty or
/// unpaired layout.
pub fn load_dataset(dir: &Path) -> Result<Vec<DatasetSample>> {
    let clean_dir = dir.join("clean");
    let mut names: Vec<String> = fs::read_dir(&clean_dir)
        .map_err(|e| Error::io(&clean_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!(
            "no samples under {}",
            clean_dir.display()
        )));
    }
    names.iter().map(|name| load_sample(dir, name)).collect()
}
