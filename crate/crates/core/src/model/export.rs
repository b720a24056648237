//! Attention-map export: pixel maps as grayscale PGMs, channel weights as a
//! G×C grayscale strip plus a plain-text table.

use std::fs;
use std::path::{Path, PathBuf};

use super::AttentionMaps;
use crate::error::{Error, Result};
use crate::haze::write_pgm;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Writes, for a G-group model: `pa_group{g}.pgm` per group (values scaled
/// from (0,1) to 0–255), `ca_weights.pgm` (G×C strip) and `ca_weights.txt`
/// (4-decimal table). Maps are taken from the first batch element. Returns
/// the created paths.
pub fn export_attention_maps<E: Scalar>(
    maps: &AttentionMaps<E>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if !maps.is_populated() {
        return Err(Error::Domain(
            "attention maps are empty (was the model built without feature attention?)".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    for (g, pa) in maps.group_pa.iter().enumerate() {
        let (_, c, h, w) = pa.nchw()?;
        if c != 1 {
            return Err(Error::Shape(format!(
                "pixel map for group {g} has {c} channels"
            )));
        }
        let plane: Vec<f32> = pa.data()[..h * w].iter().map(|v| v.as_f64() as f32).collect();
        let img = Tensor::<f32>::from_vec(&[1, h, w], plane)?;
        let path = dir.join(format!("pa_group{g}.pgm"));
        write_pgm(&img, &path)?;
        written.push(path);
    }

    let groups = maps.group_ca.len();
    let channels = maps.group_ca[0].dims()[1];
    let mut strip = Vec::with_capacity(groups * channels);
    let mut table = String::new();
    for (g, ca) in maps.group_ca.iter().enumerate() {
        let (_, c, _, _) = ca.nchw()?;
        if c != channels {
            return Err(Error::Shape(format!(
                "group {g} has {c} channel weights, group 0 has {channels}"
            )));
        }
        let row: Vec<f32> = ca.data()[..c].iter().map(|v| v.as_f64() as f32).collect();
        table.push_str(&format!("group{g}:"));
        for v in &row {
            table.push_str(&format!(" {v:.4}"));
        }
        table.push('\n');
        strip.extend(row);
    }

    let strip_img = Tensor::<f32>::from_vec(&[groups, channels], strip)?;
    let strip_path = dir.join("ca_weights.pgm");
    write_pgm(&strip_img, &strip_path)?;
    written.push(strip_path);

    let table_path = dir.join("ca_weights.txt");
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;
    written.push(table_path);
    Ok(written)
}

/// Parses `ca_weights.txt` back into per-group weight rows.
pub fn read_ca_table(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let Some((_, values)) = line.split_once(':') else {
            return Err(Error::Parse(format!("{}: bad table line {line:?}", path.display())));
        };
        let row: std::result::Result<Vec<f64>, _> =
            values.split_whitespace().map(str::parse::<f64>).collect();
        rows.push(row.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haze::read_pgm;
    use tempfile::tempdir;

    fn maps(groups: usize, channels: usize, value: f32) -> AttentionMaps<f32> {
        AttentionMaps {
            group_ca: (0..groups)
                .map(|_| Tensor::full(&[1, channels, 1, 1], value).unwrap())
                .collect(),
            group_pa: (0..groups)
                .map(|_| Tensor::full(&[1, 1, 4, 4], value).unwrap())
                .collect(),
            fusion_ca: None,
        }
    }

    #[test]
    fn file_count_matches_contract() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("attn");
        let written = export_attention_maps(&maps(3, 8, 0.5), &out).unwrap();
        // G pixel maps + 1 channel strip + 1 text table
        assert_eq!(written.len(), 3 + 2);
        assert_eq!(fs::read_dir(&out).unwrap().count(), 5);
    }

    #[test]
    fn constant_half_map_is_mid_gray() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("attn");
        export_attention_maps(&maps(1, 4, 0.5), &out).unwrap();
        let img = read_pgm(&out.join("pa_group0.pgm")).unwrap();
        // 0.5*255 rounds half away from zero to 128
        for &v in img.data() {
            assert_eq!(v, 128.0 / 255.0);
        }
    }

    #[test]
    fn table_roundtrips_to_four_decimals() {
        let dir = tempdir().unwrap();
        let out = dir.path().join("attn");
        let m = AttentionMaps {
            group_ca: vec![
                Tensor::from_vec(&[1, 3, 1, 1], vec![0.12345f32, 0.5, 0.98765]).unwrap(),
                Tensor::from_vec(&[1, 3, 1, 1], vec![0.25, 0.75, 0.33333]).unwrap(),
            ],
            group_pa: vec![
                Tensor::full(&[1, 1, 4, 4], 0.5).unwrap(),
                Tensor::full(&[1, 1, 4, 4], 0.5).unwrap(),
            ],
            fusion_ca: None,
        };
        export_attention_maps(&m, &out).unwrap();
        let rows = read_ca_table(&out.join("ca_weights.txt")).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, ca) in rows.iter().zip(&m.group_ca) {
            for (parsed, orig) in row.iter().zip(ca.data()) {
                assert!((parsed - *orig as f64).abs() <= 5e-5, "{parsed} vs {orig}");
            }
        }
    }

    #[test]
    fn empty_maps_rejected() {
        let dir = tempdir().unwrap();
        let empty = AttentionMaps::<f32>::empty();
        assert!(export_attention_maps(&empty, dir.path()).is_err());
    }
}
