//! Scratch diagnostic: loads a checkpoint and dissects translation quality.
//! Usage: probe_ckpt <checkpoint>

use smd_core::datagen::{batch_to_tensor, build_dataset, render_ground_truth, GenConfig, ImageGrid};
use smd_core::graph::Graph;
use smd_core::nets::{anatomy_encoder, contrast_encoder, decoder, ModelParams};
use smd_core::nn::bind;
use smd_core::training::{load_checkpoint, TrainConfig};
use smd_core::translate::{extract_contrast, harmonize, ssim, ContrastSource, TranslationJob};

fn peakedness(model: &ModelParams<f32>, cfg: &TrainConfig, grids: &[&ImageGrid]) {
    let net = cfg.net_config();
    let mut sum_max = 0.0f64;
    let mut sharp = 0usize;
    let mut total = 0usize;
    let mut usage = vec![0usize; net.anatomy_channels];
    for chunk in grids.chunks(32) {
        let mut g = Graph::new();
        let bea = bind(&mut g, &model.anatomy_enc, false);
        let x = g.constant(batch_to_tensor::<f32>(chunk));
        let a = anatomy_encoder(&mut g, &bea, &net, x, false);
        let av = g.value(a);
        let (n, m, h, w) = (av.dim(0), av.dim(1), av.dim(2), av.dim(3));
        let hw = h * w;
        for i in 0..n {
            for p in 0..hw {
                let mut best = 0.0f64;
                let mut arg = 0;
                for ch in 0..m {
                    let v = av.data()[i * m * hw + ch * hw + p] as f64;
                    if v > best {
                        best = v;
                        arg = ch;
                    }
                }
                sum_max += best;
                if best > 0.9 {
                    sharp += 1;
                }
                usage[arg] += 1;
                total += 1;
            }
        }
    }
    println!(
        "peakedness: mean max-prob {:.4}, frac>0.9 {:.4}, argmax usage {:?}",
        sum_max / total as f64,
        sharp as f64 / total as f64,
        usage.iter().map(|&u| (u as f64 / total as f64 * 100.0).round() as i64).collect::<Vec<_>>()
    );
}

fn recon_quality(
    model: &ModelParams<f32>,
    cfg: &TrainConfig,
    data: &smd_core::datagen::Dataset,
    hard: bool,
) -> (f64, f64, f64) {
    let net = cfg.net_config();
    let grids: Vec<&ImageGrid> = data.grids.iter().collect();
    let mut l1 = 0.0f64;
    let mut ss = 0.0f64;
    let mut ss_clean = 0.0f64;
    let mut n_img = 0usize;
    for (c0, chunk) in grids.chunks(32).enumerate() {
        let mut g = Graph::new();
        let bea = bind(&mut g, &model.anatomy_enc, false);
        let bec = bind(&mut g, &model.contrast_enc, false);
        let bd = bind(&mut g, &model.decoder, false);
        let x = g.constant(batch_to_tensor::<f32>(chunk));
        let a = anatomy_encoder(&mut g, &bea, &net, x, hard);
        let c = contrast_encoder(&mut g, &bec, &net, x);
        let xh = decoder(&mut g, &bd, &net, a, c);
        let xv = g.value(xh);
        let sz = net.image_size;
        for (i, src) in chunk.iter().enumerate() {
            let px: Vec<f32> = xv.data()[i * sz * sz..(i + 1) * sz * sz].to_vec();
            let img = ImageGrid::new(sz, sz, px).unwrap();
            l1 += src.data.iter().zip(&img.data).map(|(a, b)| (a - b).abs() as f64).sum::<f64>()
                / (sz * sz) as f64;
            ss += ssim(src, &img).unwrap();
            let rec = &data.records[c0 * 32 + i];
            let gt = render_ground_truth(&data.config, rec.subject_id, rec.site_id, rec.view_index as usize).unwrap();
            ss_clean += ssim(&gt, &img).unwrap();
            n_img += 1;
        }
    }
    (l1 / n_img as f64, ss / n_img as f64, ss_clean / n_img as f64)
}

fn contrast_clusters(model: &ModelParams<f32>, cfg: &TrainConfig, data: &smd_core::datagen::Dataset) {
    let net = cfg.net_config();
    let mut by_site: std::collections::BTreeMap<u32, Vec<Vec<f64>>> = Default::default();
    for (rec, grid) in data.records.iter().zip(&data.grids) {
        let c = extract_contrast(model, &net, grid).unwrap();
        by_site.entry(rec.site_id).or_default().push(c);
    }
    for (site, rows) in &by_site {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        println!(
            "  c cluster site {site}: mean [{:+.3} {:+.3}]  std [{:.3} {:.3}]",
            mean[0], mean[1], std[0], std[1]
        );
    }
}

/// How well the hard argmax map aligns with the generative tissue labels:
/// majority-class purity per used channel, weighted over pixels.
fn hard_map_purity(model: &ModelParams<f32>, cfg: &TrainConfig, data: &smd_core::datagen::Dataset) {
    let net = cfg.net_config();
    let mut joint = vec![vec![0usize; data.config.tissue_classes]; net.anatomy_channels];
    for (rec, grid) in data.records.iter().zip(&data.grids) {
        let pred = smd_core::translate::anatomy_label_map(model, &net, grid).unwrap();
        let spec = smd_core::datagen::subject_spec(&data.config, rec.subject_id);
        let truth = smd_core::datagen::render_label_map(&spec, rec.view_index as usize);
        for (p, t) in pred.iter().zip(&truth) {
            joint[*p as usize][*t as usize] += 1;
        }
    }
    let total: usize = joint.iter().flatten().sum();
    let pure: usize = joint.iter().map(|row| row.iter().max().copied().unwrap_or(0)).sum();
    println!("hard-map purity vs true tissue labels: {:.4}", pure as f64 / total as f64);
}

fn sweep(model: &ModelParams<f32>, cfg: &TrainConfig, data: &smd_core::datagen::Dataset, hard: bool, oracle_ref: bool) {
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
        let reference = if oracle_ref {
            // noise-free render of the target site: removes reference noise
            let rec = data.records.iter().find(|r| r.site_id == t).unwrap();
            let gt = render_ground_truth(&data.config, rec.subject_id, t, rec.view_index as usize).unwrap();
            ContrastSource::Code(extract_contrast(model, &net, &gt).unwrap())
        } else {
            let i = (0..data.records.len()).find(|&i| data.records[i].site_id == t).unwrap();
            ContrastSource::Reference(data.grids[i].clone())
        };
        for &s in &sites {
            if s == t {
                continue;
            }
            let src_idx: Vec<usize> =
                (0..data.records.len()).filter(|&i| data.records[i].site_id == s).collect();
            let sources: Vec<ImageGrid> = src_idx.iter().map(|&i| data.grids[i].clone()).collect();
            let out = harmonize(&TranslationJob {
                sources: &sources,
                reference: reference.clone(),
                model,
                net: net.clone(),
                hard_anatomy: hard,
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
        }
    }
    let mode = format!("{}{}", if hard { "hard" } else { "soft" }, if oracle_ref { "/clean-ref" } else { "" });
    println!("sweep[{mode}]: mean imp {:+.4}, worst {:+.4}", sum / cnt as f64, worst);
}

fn main() {
    let path = std::env::args().nth(1).expect("usage: probe_ckpt <checkpoint>");
    let (model, cfg) = load_checkpoint::<f32>(std::path::Path::new(&path)).unwrap();
    println!("loaded {path}: {} steps, temp {}", cfg.total_steps, cfg.temperature);
    let gcfg = GenConfig { seed: 17, ..GenConfig::default() };
    let data = build_dataset(&gcfg).unwrap();
    let grids: Vec<&ImageGrid> = data.grids.iter().collect();

    peakedness(&model, &cfg, &grids);
    let (l1s, sss, scs) = recon_quality(&model, &cfg, &data, false);
    println!("recon soft: L1 {l1s:.4}, ssim {sss:.4}, ssim-vs-clean {scs:.4}");
    let (l1h, ssh, sch) = recon_quality(&model, &cfg, &data, true);
    println!("recon hard: L1 {l1h:.4}, ssim {ssh:.4}, ssim-vs-clean {sch:.4}");
    contrast_clusters(&model, &cfg, &data);
    hard_map_purity(&model, &cfg, &data);
    sweep(&model, &cfg, &data, false, false);
    sweep(&model, &cfg, &data, true, false);
    sweep(&model, &cfg, &data, false, true);
    sweep(&model, &cfg, &data, true, true);
}
