//! Scratch convergence probe: trains the default model, then measures code
//! disentanglement (soft- and hard-pooled anatomy), probe accuracy, and
//! per-site-pair harmonization quality. Not part of the test suite.
//! Usage: bench_step [disc_steps_per_gen] [total_steps]

use smd_core::datagen::{build_dataset, render_ground_truth, GenConfig, ImageGrid};
use smd_core::graph::Graph;
use smd_core::mi::{pool_anatomy_batch, probe_independence_accuracy, ratio_ri, EntropyMode, MineOptions, RatioOptions};
use smd_core::nets::{anatomy_encoder, contrast_encoder, ModelParams};
use smd_core::nn::bind;
use smd_core::tensor::Tensor;
use smd_core::training::{train, TrainConfig};
use smd_core::translate::{harmonize, ssim, ContrastSource, TranslationJob};

fn encode_all(
    model: &ModelParams<f32>,
    cfg: &TrainConfig,
    data: &smd_core::datagen::Dataset,
    hard: bool,
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
        let a = anatomy_encoder(&mut g, &bea, &net_cfg, xv, hard);
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

fn measure(tag: &str, model: &ModelParams<f32>, cfg: &TrainConfig, eval: &smd_core::datagen::Dataset) {
    for hard in [false, true] {
        let (a_rows, c_rows) = encode_all(model, cfg, eval, hard);
        let mopts = MineOptions { train_steps: 400, hidden_width: 32, seed: 1234, ..MineOptions::default() };
        let r = ratio_ri(&a_rows, &c_rows, &RatioOptions { mine: mopts, entropy: EntropyMode::Estimated });
        let which = if hard { "hard" } else { "soft" };
        match &r {
            Ok(rep) => println!("[{tag}/{which}] {}", rep.summary()),
            Err(e) => println!("[{tag}/{which}] ratio error: {e}"),
        }
        let acc = probe_independence_accuracy(&a_rows, &c_rows, &mopts);
        println!("[{tag}/{which}] probe accuracy: {acc:?}");
    }
}

fn harmonization_sweep(model: &ModelParams<f32>, cfg: &TrainConfig, data: &smd_core::datagen::Dataset) {
    let net = cfg.net_config();
    let sites: Vec<u32> = {
        let mut s: Vec<u32> = data.records.iter().map(|r| r.site_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let mut worst = f64::INFINITY;
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for &t in &sites {
        let ref_idx = (0..data.records.len()).find(|&i| data.records[i].site_id == t).unwrap();
        for &s in &sites {
            if s == t {
                continue;
            }
            let src_idx: Vec<usize> =
                (0..data.records.len()).filter(|&i| data.records[i].site_id == s).collect();
            let sources: Vec<ImageGrid> = src_idx.iter().map(|&i| data.grids[i].clone()).collect();
            let out = harmonize(&TranslationJob {
                sources: &sources,
                reference: ContrastSource::Reference(data.grids[ref_idx].clone()),
                model,
                net: net.clone(),
                hard_anatomy: true,
            })
            .unwrap();
            let mut before = 0.0;
            let mut after = 0.0;
            for (k, &i) in src_idx.iter().enumerate() {
                let rec = &data.records[i];
                let gt = render_ground_truth(&data.config, rec.subject_id, t, rec.view_index as usize).unwrap();
                before += ssim(&data.grids[i], &gt).unwrap() / src_idx.len() as f64;
                after += ssim(&out[k], &gt).unwrap() / src_idx.len() as f64;
            }
            let imp = after - before;
            worst = worst.min(imp);
            sum += imp;
            cnt += 1;
            println!("  {s}->{t}: ssim {before:.4} -> {after:.4} (imp {imp:+.4})");
        }
    }
    println!("  harmonization: mean improvement {:+.4}, worst pair {worst:+.4}", sum / cnt as f64);
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let disc: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let t_all = std::time::Instant::now();
    let gcfg = GenConfig { seed: 17, ..GenConfig::default() };
    let data = build_dataset(&gcfg).unwrap();
    let eval_cfg = GenConfig { subjects_per_site: 400, seed: 9090, ..gcfg.clone() };
    let eval = build_dataset(&eval_cfg).unwrap();
    println!("datasets built at {:.1}s (train {} images, eval {})", t_all.elapsed().as_secs_f64(), data.len(), eval.len());

    let cfg = TrainConfig { total_steps: steps, disc_steps_per_gen: disc, ..TrainConfig::default() };
    println!("disc_steps_per_gen = {disc}, total_steps = {steps}");
    let untrained: ModelParams<f32> = smd_core::nets::init_model(&cfg.net_config(), cfg.seed);
    measure("untrained", &untrained, &cfg, &eval);
    println!("untrained measured at {:.1}s", t_all.elapsed().as_secs_f64());

    let out = train::<f32>(&cfg, &data, None).unwrap();
    println!("trained at {:.1}s, saturation events {}", t_all.elapsed().as_secs_f64(), out.saturation_events);
    for r in out.reports.iter().step_by(250) {
        println!(
            "step {:4}  recon {:.4}  bound {:+.4}  disc {:.4}  gen {:.4}",
            r.step, r.recon_l1, r.infomax_bound, r.disc_loss, r.gen_adv_loss
        );
    }
    let last = &out.reports[out.reports.len() - 50..];
    let recon: f64 = last.iter().map(|r| r.recon_l1).sum::<f64>() / last.len() as f64;
    let bound: f64 = last.iter().map(|r| r.infomax_bound).sum::<f64>() / last.len() as f64;
    let dloss: f64 = last.iter().map(|r| r.disc_loss).sum::<f64>() / last.len() as f64;
    println!("tail means: recon {recon:.4}  bound {bound:+.4}  disc {dloss:.4} (floor {:+.4})", -2.0 * std::f64::consts::LN_2);

    measure("trained", &out.model, &cfg, &eval);
    harmonization_sweep(&out.model, &cfg, &data);
    let ckpt = format!("/tmp/bench_d{disc}_{steps}.ckpt");
    smd_core::training::save_checkpoint(std::path::Path::new(&ckpt), &out.model, &cfg).unwrap();
    println!("saved {ckpt}");
    println!("total {:.1}s", t_all.elapsed().as_secs_f64());
}
