//! Scratch probe: statistical power of the MI numerator on untrained codes
//! as a function of sample count, net width, and training steps.
//! Not part of the test suite.

use smd_core::datagen::{build_dataset, GenConfig};
use smd_core::graph::Graph;
use smd_core::mi::{pool_anatomy_batch, probe_independence_accuracy, ratio_ri, EntropyMode, MineOptions, RatioOptions};
use smd_core::nets::{anatomy_encoder, contrast_encoder, init_model, ModelParams};
use smd_core::nn::bind;
use smd_core::tensor::Tensor;
use smd_core::training::TrainConfig;

fn encode_all(
    model: &ModelParams<f32>,
    cfg: &TrainConfig,
    data: &smd_core::datagen::Dataset,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let net_cfg = cfg.net_config();
    let mut a_rows = Vec::new();
    let mut c_rows = Vec::new();
    let grids: Vec<&smd_core::datagen::ImageGrid> = data.grids.iter().collect();
    for chunk in grids.chunks(64) {
        let x: Tensor<f32> = smd_core::datagen::batch_to_tensor(chunk);
        let mut g = Graph::new();
        let bea = bind(&mut g, &model.anatomy_enc, false);
        let bec = bind(&mut g, &model.contrast_enc, false);
        let xv = g.constant(x);
        let a = anatomy_encoder(&mut g, &bea, &net_cfg, xv, false);
        let c = contrast_encoder(&mut g, &bec, &net_cfg, xv);
        for row in pool_anatomy_batch(g.value(a)) {
            a_rows.push(row.iter().map(|v| *v as f64).collect());
        }
        let cv = g.value(c);
        let n = cv.dim(0);
        for i in 0..n {
            c_rows.push(vec![cv.data()[i * 2] as f64, cv.data()[i * 2 + 1] as f64]);
        }
    }
    (a_rows, c_rows)
}

fn main() {
    let cfg = TrainConfig::default();
    let model: ModelParams<f32> = init_model(&cfg.net_config(), cfg.seed);

    for subjects in [150usize, 400] {
        let eval_cfg = GenConfig { subjects_per_site: subjects, seed: 9090, ..GenConfig::default() };
        let eval = build_dataset(&eval_cfg).unwrap();
        let t0 = std::time::Instant::now();
        let (a_rows, c_rows) = encode_all(&model, &cfg, &eval);
        println!("== {} images (encode {:.1}s) ==", eval.len(), t0.elapsed().as_secs_f64());
        for width in [32usize, 64, 128] {
            for steps in [200usize, 400, 800] {
                let mopts = MineOptions { train_steps: steps, hidden_width: width, seed: 1234, ..MineOptions::default() };
                let t = std::time::Instant::now();
                let r = ratio_ri(&a_rows, &c_rows, &RatioOptions { mine: mopts, entropy: EntropyMode::Estimated });
                match &r {
                    Ok(rep) => println!(
                        "w{width:>4} s{steps:>4}: I = {:+.4}  ratio = {:.4}{}  ({:.1}s)",
                        rep.mi_nats, rep.ratio, if rep.clamped { " (clamped)" } else { "" }, t.elapsed().as_secs_f64()
                    ),
                    Err(e) => println!("w{width:>4} s{steps:>4}: error: {e}"),
                }
            }
        }
        let acc = probe_independence_accuracy(&a_rows, &c_rows, &MineOptions { seed: 1234, ..MineOptions::default() });
        println!("probe accuracy: {acc:?}");
    }
}
