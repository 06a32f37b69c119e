use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{batch_to_tensor, Dataset};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nets::{
    anatomy_encoder, contrast_encoder, decoder, dist_disc, init_model, pair_critic, ModelParams,
    NetConfig,
};
use crate::nn::{bind, grads_for, Adam, AdamConfig, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything a run needs. `lambda1..3` weight the composite objective
/// (reconstruction, infomax ascent, adversarial independence); the rest is
/// schedule and architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Weight of the anatomy-consistency term on paired batches.
    pub lambda_pair: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_steps: usize,
    pub temperature: f64,
    pub disc_steps_per_gen: usize,
    pub seed: u64,
    /// Fraction of batches that add the paired-anatomy term (needs
    /// traveling subjects in the dataset).
    pub paired_fraction: f64,
    pub grad_clip: f64,
    pub checkpoint_every: usize,
    pub image_size: usize,
    pub anatomy_channels: usize,
    pub width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 1.0,
            lambda2: 0.1,
            lambda3: 0.1,
            lambda_pair: 0.1,
            batch_size: 16,
            learning_rate: 1e-4,
            total_steps: 3000,
            temperature: 0.5,
            disc_steps_per_gen: 1,
            seed: 0,
            paired_fraction: 0.0,
            grad_clip: 10.0,
            checkpoint_every: 1000,
            image_size: 32,
            anatomy_channels: 8,
            width: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 || self.lambda_pair < 0.0
        {
            return Err(Error::validation("loss weights must be non-negative"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation("learning_rate must be non-negative"));
        }
        if self.disc_steps_per_gen == 0 {
            return Err(Error::validation("disc_steps_per_gen must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return Err(Error::validation("paired_fraction must lie in [0, 1]"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::validation("grad_clip must be positive"));
        }
        self.net_config().validate()
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            image_size: self.image_size,
            anatomy_channels: self.anatomy_channels,
            width: self.width,
            temperature: self.temperature,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "lambda1 = {}\nlambda2 = {}\nlambda3 = {}\nlambda_pair = {}\n\
             batch_size = {}\nlearning_rate = {}\ntotal_steps = {}\ntemperature = {}\n\
             disc_steps_per_gen = {}\nseed = {}\npaired_fraction = {}\ngrad_clip = {}\n\
             checkpoint_every = {}\nimage_size = {}\nanatomy_channels = {}\nwidth = {}\n",
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda_pair,
            self.batch_size,
            self.learning_rate,
            self.total_steps,
            self.temperature,
            self.disc_steps_per_gen,
            self.seed,
            self.paired_fraction,
            self.grad_clip,
            self.checkpoint_every,
            self.image_size,
            self.anatomy_channels,
            self.width,
        )
    }

    /// `key = value` lines; `#` comments and blank lines allowed; unknown
    /// keys are an error rather than silently ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("line {}: expected key = value", ln + 1)))?;
            let (key, val) = (key.trim(), val.trim());
            let bad =
                |e: &dyn std::fmt::Display| Error::format(format!("line {}: {key}: {e}", ln + 1));
            macro_rules! parse {
                ($field:ident) => {
                    cfg.$field = val.parse().map_err(|e| bad(&e))?
                };
            }
            match key {
                "lambda1" => parse!(lambda1),
                "lambda2" => parse!(lambda2),
                "lambda3" => parse!(lambda3),
                "lambda_pair" => parse!(lambda_pair),
                "batch_size" => parse!(batch_size),
                "learning_rate" => parse!(learning_rate),
                "total_steps" => parse!(total_steps),
                "temperature" => parse!(temperature),
                "disc_steps_per_gen" => parse!(disc_steps_per_gen),
                "seed" => parse!(seed),
                "paired_fraction" => parse!(paired_fraction),
                "grad_clip" => parse!(grad_clip),
                "checkpoint_every" => parse!(checkpoint_every),
                "image_size" => parse!(image_size),
                "anatomy_channels" => parse!(anatomy_channels),
                "width" => parse!(width),
                other => {
                    return Err(Error::format(format!(
                        "line {}: unknown config key \"{other}\"",
                        ln + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: usize,
    pub recon_l1: f64,
    pub infomax_bound: f64,
    pub disc_loss: f64,
    pub gen_adv_loss: f64,
    pub paired_l1: f64,
    /// Pre-clip global gradient norms, one per network; the anatomy encoder
    /// reports its reconstruction-phase and adversarial-phase norms
    /// separately.
    pub gn_anatomy: f64,
    pub gn_anatomy_adv: f64,
    pub gn_contrast: f64,
    pub gn_decoder: f64,
    pub gn_critic: f64,
    pub gn_disc: f64,
    /// Discriminator was fully confident on every pair in the batch.
    pub disc_saturated: bool,
}

impl StepReport {
    pub fn tsv_header() -> &'static str {
        "step\trecon_l1\tinfomax_bound\tdisc_loss\tgen_adv_loss\tpaired_l1\t\
         gn_anatomy\tgn_anatomy_adv\tgn_contrast\tgn_decoder\tgn_critic\tgn_disc\tdisc_sat"
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            self.step,
            self.recon_l1,
            self.infomax_bound,
            self.disc_loss,
            self.gen_adv_loss,
            self.paired_l1,
            self.gn_anatomy,
            self.gn_anatomy_adv,
            self.gn_contrast,
            self.gn_decoder,
            self.gn_critic,
            self.gn_disc,
            self.disc_saturated as u8,
        )
    }

    pub fn all_finite(&self) -> bool {
        [
            self.recon_l1,
            self.infomax_bound,
            self.disc_loss,
            self.gen_adv_loss,
            self.paired_l1,
            self.gn_anatomy,
            self.gn_anatomy_adv,
            self.gn_contrast,
            self.gn_decoder,
            self.gn_critic,
            self.gn_disc,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One optimizer per network so moment state never mixes across parameter
/// groups. The adversarial pair runs on beta1 = 0.5.
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    pub model: ModelParams<T>,
    net_cfg: NetConfig,
    opt_anatomy: Adam<T>,
    opt_contrast: Adam<T>,
    opt_decoder: Adam<T>,
    opt_critic: Adam<T>,
    opt_disc: Adam<T>,
    rng: ChaCha8Rng,
    subjects: Vec<u64>,
    recent: Vec<StepReport>,
    pub saturation_events: usize,
}

fn derangement(n: usize) -> Vec<usize> {
    (0..n).map(|i| (i + 1) % n).collect()
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let net_cfg = cfg.net_config();
        if data.is_empty() {
            return Err(Error::validation("dataset is empty"));
        }
        if data.config.image_size as usize != cfg.image_size {
            return Err(Error::validation(format!(
                "dataset images are {}x{0} but the model expects {}x{1}",
                data.config.image_size, cfg.image_size
            )));
        }
        if cfg.paired_fraction > 0.0 {
            let mut probe = ChaCha8Rng::seed_from_u64(cfg.seed);
            if data.sample_cross_site_pair(&mut probe).is_none() {
                return Err(Error::validation(
                    "paired_fraction > 0 needs traveling subjects (cross_site_fraction > 0 at generation time)",
                ));
            }
        }
        let model: ModelParams<T> = init_model(&net_cfg, cfg.seed);
        let lr = cfg.learning_rate;
        let trainer = Trainer {
            opt_anatomy: Adam::new(&model.anatomy_enc, AdamConfig::with_lr(lr)),
            opt_contrast: Adam::new(&model.contrast_enc, AdamConfig::with_lr(lr)),
            opt_decoder: Adam::new(&model.decoder, AdamConfig::with_lr(lr)),
            opt_critic: Adam::new(&model.pair_critic, AdamConfig::adversarial(lr)),
            opt_disc: Adam::new(&model.dist_disc, AdamConfig::adversarial(lr)),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7281),
            subjects: data.subjects(),
            recent: Vec::new(),
            model,
            net_cfg,
            cfg,
            saturation_events: 0,
        };
        Ok(trainer)
    }

    /// Same-subject same-site view pairs: `x` is reconstructed, `x'`
    /// supplies the contrast code.
    fn sample_batch(&mut self, data: &Dataset) -> Result<(Tensor<T>, Tensor<T>)> {
        let n = self.cfg.batch_size;
        let mut xs = Vec::with_capacity(n);
        let mut xps = Vec::with_capacity(n);
        for _ in 0..n {
            let u = self.subjects[self.rng.gen_range(0..self.subjects.len())];
            let (i, j) = data.sample_pair(u, &mut self.rng)?;
            xs.push(&data.grids[i]);
            xps.push(&data.grids[j]);
        }
        Ok((batch_to_tensor(&xs), batch_to_tensor(&xps)))
    }

    /// Traveling-subject triples: `x` and `x2` share the anatomy (same
    /// view, different sites), `x'` is another view at x's site.
    fn sample_paired_batch(&mut self, data: &Dataset) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let n = self.cfg.batch_size;
        let mut xs = Vec::with_capacity(n);
        let mut xps = Vec::with_capacity(n);
        let mut x2s = Vec::with_capacity(n);
        let mut misses = 0usize;
        while xs.len() < n {
            let pair = data
                .sample_cross_site_pair(&mut self.rng)
                .ok_or_else(|| Error::validation("no cross-site pairs available"))?;
            match data.other_view_at(pair.0, &mut self.rng) {
                Some(j) => {
                    xs.push(&data.grids[pair.0]);
                    x2s.push(&data.grids[pair.1]);
                    xps.push(&data.grids[j]);
                }
                None => {
                    misses += 1;
                    if misses > 100 * n {
                        return Err(Error::validation(
                            "traveling subjects never have a second view at the paired site",
                        ));
                    }
                }
            }
        }
        Ok((batch_to_tensor(&xs), batch_to_tensor(&xps), batch_to_tensor(&x2s)))
    }

    fn check_finite(&self, what: &str, v: f64, step: usize) -> Result<()> {
        if v.is_finite() {
            return Ok(());
        }
        let mut msg = format!("{what} is not finite at step {step}; last reports:\n");
        msg.push_str(StepReport::tsv_header());
        for r in &self.recent {
            msg.push('\n');
            msg.push_str(&r.to_tsv());
        }
        Err(Error::numerical(msg))
    }

    /// Phase 1: minimize lambda1 * L1(x, D(E_A(x), E_C(x'))), plus the
    /// paired-anatomy term when `x2` is given. Updates E_A, E_C, D.
    fn recon_phase(
        &mut self,
        step: usize,
        x: &Tensor<T>,
        xp: &Tensor<T>,
        x2: Option<&Tensor<T>>,
    ) -> Result<(f64, f64, [f64; 3])> {
        let clip = Some(self.cfg.grad_clip);
        let mut g = Graph::new();
        let bea = bind(&mut g, &self.model.anatomy_enc, true);
        let bec = bind(&mut g, &self.model.contrast_enc, true);
        let bd = bind(&mut g, &self.model.decoder, true);
        let xv = g.constant(x.clone());
        let xpv = g.constant(xp.clone());
        let a = anatomy_encoder(&mut g, &bea, &self.net_cfg, xv, false);
        let c = contrast_encoder(&mut g, &bec, &self.net_cfg, xpv);
        let xhat = decoder(&mut g, &bd, &self.net_cfg, a, c);
        let l1 = g.l1_loss(xhat, xv);
        let recon_val = g.value(l1).item().as_f64();
        let mut loss = g.scale(l1, T::of(self.cfg.lambda1));
        // Same recon term evaluated at the quantized code. Translation hands
        // the decoder exact one-hot maps, so it must learn to paint them; the
        // frozen rebind keeps this branch away from E_A, whose training signal
        // stays the soft pathway.
        let bea_frozen = bind(&mut g, &self.model.anatomy_enc, false);
        let a_hard = anatomy_encoder(&mut g, &bea_frozen, &self.net_cfg, xv, true);
        let xhat_hard = decoder(&mut g, &bd, &self.net_cfg, a_hard, c);
        let l1_hard = g.l1_loss(xhat_hard, xv);
        self.check_finite("quantized reconstruction loss", g.value(l1_hard).item().as_f64(), step)?;
        let hard_term = g.scale(l1_hard, T::of(self.cfg.lambda1));
        loss = g.add(loss, hard_term);
        let mut paired_val = 0.0;
        if let Some(x2) = x2 {
            let x2v = g.constant(x2.clone());
            let a2 = anatomy_encoder(&mut g, &bea, &self.net_cfg, x2v, false);
            let pl = g.l1_loss(a, a2);
            paired_val = g.value(pl).item().as_f64();
            let weighted = g.scale(pl, T::of(self.cfg.lambda_pair));
            loss = g.add(loss, weighted);
        }
        self.check_finite("reconstruction loss", recon_val, step)?;
        self.check_finite("paired consistency loss", paired_val, step)?;
        let mut grads = g.backward(loss);
        let gea = grads_for(&mut grads, &bea, &self.model.anatomy_enc);
        let gec = grads_for(&mut grads, &bec, &self.model.contrast_enc);
        let gd = grads_for(&mut grads, &bd, &self.model.decoder);
        let n1 = self.opt_anatomy.step(&mut self.model.anatomy_enc, &gea, clip);
        let n2 = self.opt_contrast.step(&mut self.model.contrast_enc, &gec, clip);
        let n3 = self.opt_decoder.step(&mut self.model.decoder, &gd, clip);
        for (what, v) in [("anatomy grad norm", n1), ("contrast grad norm", n2), ("decoder grad norm", n3)] {
            self.check_finite(what, v, step)?;
        }
        Ok((recon_val, paired_val, [n1, n2, n3]))
    }

    /// Phase 2: one ascent step on the softplus bound, scored between
    /// c = E_C(x') and x (joint) vs cyclically shifted x (product). Updates
    /// the critic and E_C only.
    pub fn infomax_phase(&mut self, step: usize, x: &Tensor<T>, xp: &Tensor<T>) -> Result<(f64, [f64; 2])> {
        let clip = Some(self.cfg.grad_clip);
        let n = x.dim(0);
        let mut g = Graph::new();
        let bec = bind(&mut g, &self.model.contrast_enc, true);
        let bt = bind(&mut g, &self.model.pair_critic, true);
        let xv = g.constant(x.clone());
        let xpv = g.constant(xp.clone());
        let c = contrast_encoder(&mut g, &bec, &self.net_cfg, xpv);
        let t_joint = pair_critic(&mut g, &bt, &self.net_cfg, c, xv);
        let x_shuf = g.gather_rows(xv, &derangement(n));
        let t_prod = pair_critic(&mut g, &bt, &self.net_cfg, c, x_shuf);
        // minimizing sp(-t_joint) + sp(t_prod) maximizes the bound
        let ntj = g.neg(t_joint);
        let sj = g.softplus(ntj);
        let mj = g.mean_all(sj);
        let sp = g.softplus(t_prod);
        let mp = g.mean_all(sp);
        let neg_bound = g.add(mj, mp);
        let bound_val = -g.value(neg_bound).item().as_f64();
        self.check_finite("infomax bound", bound_val, step)?;
        let loss = g.scale(neg_bound, T::of(self.cfg.lambda2));
        let mut grads = g.backward(loss);
        let gec = grads_for(&mut grads, &bec, &self.model.contrast_enc);
        let gt = grads_for(&mut grads, &bt, &self.model.pair_critic);
        let n_ec = self.opt_contrast.step(&mut self.model.contrast_enc, &gec, clip);
        let n_t = self.opt_critic.step(&mut self.model.pair_critic, &gt, clip);
        self.check_finite("contrast grad norm (infomax)", n_ec, step)?;
        self.check_finite("critic grad norm", n_t, step)?;
        Ok((bound_val, [n_ec, n_t]))
    }

    /// Phase 3a: discriminator update on joint-vs-shuffled (a, c) pairs
    /// with both codes held constant. Returns (loss, grad norm, saturated).
    fn disc_phase(&mut self, step: usize, x: &Tensor<T>, xp: &Tensor<T>) -> Result<(f64, f64, bool)> {
        let clip = Some(self.cfg.grad_clip);
        let n = x.dim(0);
        let mut g = Graph::new();
        let bea = bind(&mut g, &self.model.anatomy_enc, false);
        let bec = bind(&mut g, &self.model.contrast_enc, false);
        let bu = bind(&mut g, &self.model.dist_disc, true);
        let xv = g.constant(x.clone());
        let xpv = g.constant(xp.clone());
        let a = anatomy_encoder(&mut g, &bea, &self.net_cfg, xv, false);
        let c = contrast_encoder(&mut g, &bec, &self.net_cfg, xpv);
        let c_shuf = g.gather_rows(c, &derangement(n));
        let u_joint = dist_disc(&mut g, &bu, &self.net_cfg, a, c);
        let u_shuf = dist_disc(&mut g, &bu, &self.net_cfg, a, c_shuf);
        // joint labeled 1, shuffled labeled 0, cross-entropy on logits
        let nuj = g.neg(u_joint);
        let sj = g.softplus(nuj);
        let mj = g.mean_all(sj);
        let ss = g.softplus(u_shuf);
        let ms = g.mean_all(ss);
        let loss = g.add(mj, ms);
        let loss_val = g.value(loss).item().as_f64();
        self.check_finite("discriminator loss", loss_val, step)?;
        let conf: f64 = 1e-4;
        let saturated = g.value(u_joint).data().iter().all(|&l| l.as_f64() > -(conf.ln()))
            && g.value(u_shuf).data().iter().all(|&l| l.as_f64() < conf.ln());
        let mut grads = g.backward(loss);
        let gu = grads_for(&mut grads, &bu, &self.model.dist_disc);
        let n_u = self.opt_disc.step(&mut self.model.dist_disc, &gu, clip);
        self.check_finite("discriminator grad norm", n_u, step)?;
        Ok((loss_val, n_u, saturated))
    }

    /// Phase 3b: non-saturating generator step, labels swapped, through a
    /// frozen discriminator and a constant contrast code. Updates E_A only.
    fn gen_phase(&mut self, step: usize, x: &Tensor<T>, xp: &Tensor<T>) -> Result<(f64, f64)> {
        let clip = Some(self.cfg.grad_clip);
        let n = x.dim(0);
        let mut g = Graph::new();
        let bea = bind(&mut g, &self.model.anatomy_enc, true);
        let bec = bind(&mut g, &self.model.contrast_enc, false);
        let bu = bind(&mut g, &self.model.dist_disc, false);
        let xv = g.constant(x.clone());
        let xpv = g.constant(xp.clone());
        let a = anatomy_encoder(&mut g, &bea, &self.net_cfg, xv, false);
        let c = contrast_encoder(&mut g, &bec, &self.net_cfg, xpv);
        let c_shuf = g.gather_rows(c, &derangement(n));
        let u_joint = dist_disc(&mut g, &bu, &self.net_cfg, a, c);
        let u_shuf = dist_disc(&mut g, &bu, &self.net_cfg, a, c_shuf);
        let sj = g.softplus(u_joint);
        let mj = g.mean_all(sj);
        let nus = g.neg(u_shuf);
        let ss = g.softplus(nus);
        let ms = g.mean_all(ss);
        let adv = g.add(mj, ms);
        let adv_val = g.value(adv).item().as_f64();
        self.check_finite("generator adversarial loss", adv_val, step)?;
        let loss = g.scale(adv, T::of(self.cfg.lambda3));
        let mut grads = g.backward(loss);
        let gea = grads_for(&mut grads, &bea, &self.model.anatomy_enc);
        let n_ea = self.opt_anatomy.step(&mut self.model.anatomy_enc, &gea, clip);
        self.check_finite("anatomy grad norm (adversarial)", n_ea, step)?;
        Ok((adv_val, n_ea))
    }

    pub fn step(&mut self, step: usize, data: &Dataset) -> Result<StepReport> {
        let paired = self.cfg.paired_fraction > 0.0
            && self.rng.gen_range(0.0..1.0) < self.cfg.paired_fraction;
        let (x, xp, x2) = if paired {
            let (x, xp, x2) = self.sample_paired_batch(data)?;
            (x, xp, Some(x2))
        } else {
            let (x, xp) = self.sample_batch(data)?;
            (x, xp, None)
        };
        let (recon_l1, paired_l1, [gn_a, gn_c, gn_d]) =
            self.recon_phase(step, &x, &xp, x2.as_ref())?;
        let (infomax_bound, [gn_c2, gn_t]) = self.infomax_phase(step, &x, &xp)?;
        let mut disc_loss = 0.0;
        let mut gn_u = 0.0;
        let mut saturated = false;
        for k in 0..self.cfg.disc_steps_per_gen {
            let (x_d, xp_d);
            let (bx, bxp) = if k == 0 {
                (&x, &xp)
            } else {
                let fresh = self.sample_batch(data)?;
                x_d = fresh.0;
                xp_d = fresh.1;
                (&x_d, &xp_d)
            };
            let (l, n, s) = self.disc_phase(step, bx, bxp)?;
            disc_loss = l;
            gn_u = n;
            saturated |= s;
        }
        if saturated {
            self.saturation_events += 1;
        }
        let (gen_adv_loss, gn_a_adv) = self.gen_phase(step, &x, &xp)?;
        if self.model.has_nan() {
            self.check_finite("parameters", f64::NAN, step)?;
        }
        let report = StepReport {
            step,
            recon_l1,
            infomax_bound,
            disc_loss,
            gen_adv_loss,
            paired_l1,
            gn_anatomy: gn_a,
            gn_anatomy_adv: gn_a_adv,
            gn_contrast: (gn_c * gn_c + gn_c2 * gn_c2).sqrt(),
            gn_decoder: gn_d,
            gn_critic: gn_t,
            gn_disc: gn_u,
            disc_saturated: saturated,
        };
        self.recent.push(report.clone());
        if self.recent.len() > 10 {
            self.recent.remove(0);
        }
        Ok(report)
    }

    fn group_checksums(&self) -> [u64; 5] {
        [
            self.model.anatomy_enc.checksum(),
            self.model.contrast_enc.checksum(),
            self.model.decoder.checksum(),
            self.model.pair_critic.checksum(),
            self.model.dist_disc.checksum(),
        ]
    }

    /// Runs each update phase once in isolation and records which parameter
    /// groups it touched. `warmup` full steps run first so that zero-init
    /// output layers (critic, discriminator) have moved off their exact-zero
    /// gradient plateau and every live path is exercised.
    pub fn probe_routing(&mut self, data: &Dataset, warmup: usize) -> Result<RoutingReport> {
        for s in 0..warmup {
            self.step(s, data)?;
        }
        let touched = |before: [u64; 5], after: [u64; 5]| {
            let mut t = [false; 5];
            for i in 0..5 {
                t[i] = before[i] != after[i];
            }
            t
        };
        let (x, xp) = self.sample_batch(data)?;
        let b = self.group_checksums();
        self.recon_phase(warmup, &x, &xp, None)?;
        let recon = touched(b, self.group_checksums());
        let b = self.group_checksums();
        self.infomax_phase(warmup, &x, &xp)?;
        let infomax = touched(b, self.group_checksums());
        let b = self.group_checksums();
        self.disc_phase(warmup, &x, &xp)?;
        let discriminator = touched(b, self.group_checksums());
        let b = self.group_checksums();
        self.gen_phase(warmup, &x, &xp)?;
        let generator = touched(b, self.group_checksums());
        Ok(RoutingReport { recon, infomax, discriminator, generator })
    }
}

/// Which of [E_A, E_C, D, T, U] each phase changed; used to assert the
/// gradient-routing contract through the public surface.
#[derive(Clone, Copy, Debug)]
pub struct RoutingReport {
    pub recon: [bool; 5],
    pub infomax: [bool; 5],
    pub discriminator: [bool; 5],
    pub generator: [bool; 5],
}

pub struct TrainOutcome<T: Scalar> {
    pub model: ModelParams<T>,
    pub config: TrainConfig,
    pub reports: Vec<StepReport>,
    pub saturation_events: usize,
}

/// Full training run. With `out_dir` set, writes `log.tsv` incrementally,
/// `checkpoint-{step}.ckpt` every `checkpoint_every` steps and a final
/// `checkpoint.ckpt`.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let mut trainer: Trainer<T> = Trainer::new(cfg.clone(), data)?;
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("log.tsv"))?;
            writeln!(f, "{}", StepReport::tsv_header())?;
            Some(f)
        }
        None => None,
    };
    let mut reports = Vec::with_capacity(cfg.total_steps);
    for s in 0..cfg.total_steps {
        let r = trainer.step(s, data)?;
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", r.to_tsv())?;
        }
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 {
                save_checkpoint(&dir.join(format!("checkpoint-{}.ckpt", s + 1)), &trainer.model, cfg)?;
            }
        }
        reports.push(r);
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("checkpoint.ckpt"), &trainer.model, cfg)?;
    }
    Ok(TrainOutcome {
        model: trainer.model,
        config: cfg.clone(),
        reports,
        saturation_events: trainer.saturation_events,
    })
}

const CKPT_MAGIC: &[u8; 4] = b"SMDC";

fn write_u32(w: &mut impl std::io::Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl std::io::Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl std::io::Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::format(format!("checkpoint truncated: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl std::io::Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(Error::format("checkpoint string length is implausible"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b).map_err(|e| Error::format(format!("checkpoint truncated: {e}")))?;
    String::from_utf8(b).map_err(|_| Error::format("checkpoint string is not UTF-8"))
}

fn write_group<T: Scalar>(w: &mut impl std::io::Write, name: &str, p: &ParamSet<T>) -> Result<()> {
    write_str(w, name)?;
    write_u32(w, p.len() as u32)?;
    for (pname, t) in p.iter() {
        write_str(w, pname)?;
        write_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            write_u32(w, d as u32)?;
        }
        for v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_group<T: Scalar>(r: &mut impl std::io::Read, expect: &str) -> Result<ParamSet<T>> {
    let name = read_str(r)?;
    if name != expect {
        return Err(Error::format(format!(
            "checkpoint group order: expected {expect}, found {name}"
        )));
    }
    let count = read_u32(r)? as usize;
    let mut p = ParamSet::new();
    for _ in 0..count {
        let pname = read_str(r)?;
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(Error::format("checkpoint tensor rank is implausible"));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > 1 << 28 {
            return Err(Error::format("checkpoint tensor size is implausible"));
        }
        let mut data = Vec::with_capacity(numel);
        let mut b = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut b)
                .map_err(|e| Error::format(format!("checkpoint truncated: {e}")))?;
            data.push(T::of(f64::from_le_bytes(b)));
        }
        p.add(&pname, Tensor::new(&shape, data));
    }
    Ok(p)
}

/// Values are stored as f64 regardless of the training precision, so an
/// f32-trained model round-trips bit-identically.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &ModelParams<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    write_u32(&mut w, 1)?;
    write_str(&mut w, &cfg.to_text())?;
    write_u32(&mut w, 5)?;
    write_group(&mut w, "anatomy_enc", &model.anatomy_enc)?;
    write_group(&mut w, "contrast_enc", &model.contrast_enc)?;
    write_group(&mut w, "decoder", &model.decoder)?;
    write_group(&mut w, "pair_critic", &model.pair_critic)?;
    write_group(&mut w, "dist_disc", &model.dist_disc)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(ModelParams<T>, TrainConfig)> {
    let mut r = std::io::BufReader::new(
        fs::File::open(path).map_err(|e| Error::format(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::format(format!("checkpoint truncated: {e}")))?;
    if &magic != CKPT_MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != 1 {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let cfg = TrainConfig::from_text(&read_str(&mut r)?)?;
    let groups = read_u32(&mut r)?;
    if groups != 5 {
        return Err(Error::format(format!("expected 5 parameter groups, found {groups}")));
    }
    let model = ModelParams {
        anatomy_enc: read_group(&mut r, "anatomy_enc")?,
        contrast_enc: read_group(&mut r, "contrast_enc")?,
        decoder: read_group(&mut r, "decoder")?,
        pair_critic: read_group(&mut r, "pair_critic")?,
        dist_disc: read_group(&mut r, "dist_disc")?,
    };
    Ok((model, cfg))
}

/// Mean absolute error between same-shape tensors.
pub fn reconstruction_loss<T: Scalar>(x: &Tensor<T>, xhat: &Tensor<T>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(Error::validation(format!(
            "shape mismatch: {:?} vs {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let n = x.numel();
    let sum: f64 = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Mean L1 distance between two soft anatomy maps of the same shape.
pub fn paired_consistency_loss<T: Scalar>(a1: &Tensor<T>, a2: &Tensor<T>) -> Result<f64> {
    reconstruction_loss(a1, a2)
}
