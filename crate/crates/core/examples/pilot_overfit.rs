use ffa_core::haze::{generate_dataset, load_dataset, SynthOptions};
use ffa_core::metrics::psnr;
use ffa_core::model::{ffa_forward, ModelConfig};
use ffa_core::train::{train, TrainConfig, TrainOutputs};
use std::time::Instant;

fn main() {
    let dir = std::env::temp_dir().join("pilot_overfit");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let opts = SynthOptions { count: 1, height: 32, width: 32, seed: 7, ..Default::default() };
    generate_dataset(&dir, &opts).unwrap();

    let model_cfg = ModelConfig {
        groups: 1, blocks_per_group: 2, channels: 16, reduction: 4,
        pa_kernel: 3, use_fa: true, use_lrl: true, use_ffa: true,
    };
    for augment in [true, false] {
        let train_cfg = TrainConfig {
            steps: 500, lr0: 1e-3, batch: 2, patch: 32, seed: 1,
            augment, ..Default::default()
        };
        let outputs = TrainOutputs {
            checkpoint: dir.join("o.ckpt"),
            loss_csv: dir.join("o.csv"),
        };
        let t0 = Instant::now();
        let res = train(&model_cfg, &train_cfg, &dir, &outputs).unwrap();
        let dt = t0.elapsed();
        let sample = &load_dataset(&dir).unwrap()[0];
        let (out, _) = ffa_forward(&model_cfg, &res.checkpoint.params, &sample.hazy.unsqueeze_batch().unwrap()).unwrap();
        let out3 = out.batch_item(0).unwrap();
        let p = psnr(&out3, &sample.clean).unwrap();
        let base = psnr(&sample.hazy, &sample.clean).unwrap();
        println!("augment={augment}: final_l1={:.5} psnr={p:.2} baseline={base:.2} time={dt:?}", res.final_loss);
    }
}
