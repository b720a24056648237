use ffa_core::haze::{generate_dataset, load_dataset, SynthOptions};
use ffa_core::metrics::{psnr, ssim};
use ffa_core::model::{ffa_forward, ModelConfig};
use ffa_core::train::{train, TrainConfig, TrainOutputs};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200);
    let patch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(48);

    let dir = std::env::temp_dir().join("pilot_desk");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    // 60 images at 64x64; first 50 train, last 10 held out
    let opts = SynthOptions { count: 60, height: 64, width: 64, seed: 20, ..Default::default() };
    generate_dataset(&dir, &opts).unwrap();
    let train_dir = dir.join("train");
    let held_dir = dir.join("held");
    for sub in ["clean", "hazy", "meta"] {
        std::fs::create_dir_all(train_dir.join(sub)).unwrap();
        std::fs::create_dir_all(held_dir.join(sub)).unwrap();
    }
    for i in 0..60 {
        let target = if i < 50 { &train_dir } else { &held_dir };
        for (sub, ext) in [("clean", "ppm"), ("hazy", "ppm"), ("meta", "txt")] {
            let name = format!("{sub}/{i:04}.{ext}");
            std::fs::copy(dir.join(&name), target.join(&name)).unwrap();
        }
    }

    let model_cfg = ModelConfig {
        groups: 1, blocks_per_group: 4, channels: 16, reduction: 4,
        pa_kernel: 3, use_fa: true, use_lrl: true, use_ffa: true,
    };
    let train_cfg = TrainConfig {
        steps, lr0: 1e-3, batch: 2, patch, seed: 2, ..Default::default()
    };
    let outputs = TrainOutputs { checkpoint: dir.join("d.ckpt"), loss_csv: dir.join("d.csv") };
    let t0 = Instant::now();
    let res = train(&model_cfg, &train_cfg, &train_dir, &outputs).unwrap();
    let dt = t0.elapsed();
    println!("steps={steps} patch={patch} final_l1={:.5} time={dt:?} ({:.1} ms/step)",
        res.final_loss, dt.as_millis() as f64 / steps as f64);

    let mut base_p = 0.0;
    let mut out_p = 0.0;
    let mut out_s = 0.0;
    let held = load_dataset(&held_dir).unwrap();
    for s in &held {
        let (out, _) = ffa_forward(&model_cfg, &res.checkpoint.params, &s.hazy.unsqueeze_batch().unwrap()).unwrap();
        let out3 = out.batch_item(0).unwrap();
        base_p += psnr(&s.hazy, &s.clean).unwrap();
        out_p += psnr(&out3, &s.clean).unwrap();
        out_s += ssim(&out3, &s.clean).unwrap();
    }
    let n = held.len() as f64;
    println!("held-out: baseline_psnr={:.2} dehazed_psnr={:.2} (delta {:+.2} dB) ssim={:.4}",
        base_p / n, out_p / n, (out_p - base_p) / n, out_s / n);
}
