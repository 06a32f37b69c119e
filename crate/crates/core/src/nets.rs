use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{kaiming_conv, kaiming_convt, kaiming_linear, Bound, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const IN_EPS: f64 = 1e-5;
/// Dimension of the contrast code.
pub const CONTRAST_DIM: usize = 2;

/// Architecture hyperparameters shared by all five networks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetConfig {
    /// Square input size. Must be a multiple of 16 (four stride-2 stages).
    pub image_size: usize,
    /// Channels of the anatomy code (one-hot depth per pixel).
    pub anatomy_channels: usize,
    /// Base channel width; deeper stages use 2x and 4x.
    pub width: usize,
    /// Softmax temperature for the anatomy code.
    pub temperature: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { image_size: 32, anatomy_channels: 8, width: 8, temperature: 0.5 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::validation(format!(
                "image_size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        if self.anatomy_channels < 2 {
            return Err(Error::validation("anatomy_channels must be at least 2"));
        }
        if self.width == 0 {
            return Err(Error::validation("width must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::validation("temperature must be positive"));
        }
        Ok(())
    }

    /// Spatial size left after the four stride-2 stages of the ladder nets.
    fn ladder_tail(&self) -> usize {
        self.image_size / 16
    }
}

/// Parameters of the full model: anatomy encoder, contrast encoder, decoder,
/// pair critic (mutual-information lower bound) and distribution
/// discriminator (independence adversary).
#[derive(Clone, Debug)]
pub struct ModelParams<T: Scalar> {
    pub anatomy_enc: ParamSet<T>,
    pub contrast_enc: ParamSet<T>,
    pub decoder: ParamSet<T>,
    pub pair_critic: ParamSet<T>,
    pub dist_disc: ParamSet<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn has_nan(&self) -> bool {
        self.anatomy_enc.has_nan()
            || self.contrast_enc.has_nan()
            || self.decoder.has_nan()
            || self.pair_critic.has_nan()
            || self.dist_disc.has_nan()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            anatomy_enc: self.anatomy_enc.cast(),
            contrast_enc: self.contrast_enc.cast(),
            decoder: self.decoder.cast(),
            pair_critic: self.pair_critic.cast(),
            dist_disc: self.dist_disc.cast(),
        }
    }
}

/// Initializes all five networks from one seed. Critic and discriminator
/// output layers start at zero so their scores (and the associated losses)
/// start at the neutral point.
pub fn init_model<T: Scalar>(cfg: &NetConfig, seed: u64) -> ModelParams<T> {
    ModelParams {
        anatomy_enc: init_anatomy_encoder(cfg, seed ^ 0xA1),
        contrast_enc: init_contrast_encoder(cfg, seed ^ 0xC2),
        decoder: init_decoder(cfg, seed ^ 0xD3),
        pair_critic: init_pair_critic(cfg, seed ^ 0x74, 0.0),
        dist_disc: init_dist_disc(cfg, seed ^ 0x55, 0.0),
    }
}

fn add_conv<T: Scalar>(
    p: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    norm: bool,
) {
    p.add(&format!("{name}.w"), kaiming_conv(rng, cout, cin, k));
    p.add(&format!("{name}.b"), Tensor::zeros(&[cout]));
    if norm {
        p.add(&format!("{name}.g"), Tensor::full(&[cout], T::one()));
        p.add(&format!("{name}.be"), Tensor::zeros(&[cout]));
    }
}

fn add_convt<T: Scalar>(
    p: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    p.add(&format!("{name}.w"), kaiming_convt(rng, cin, cout, k));
    p.add(&format!("{name}.b"), Tensor::zeros(&[cout]));
}

/// conv 3x3 + instance norm + leaky relu
fn block<T: Scalar>(g: &mut Graph<T>, b: &Bound, name: &str, x: Var, stride: usize) -> Var {
    let y = g.conv2d(x, b.var(&format!("{name}.w")), Some(b.var(&format!("{name}.b"))), stride, 1);
    let y = g.instance_norm(
        y,
        b.var(&format!("{name}.g")),
        b.var(&format!("{name}.be")),
        T::of(IN_EPS),
    );
    g.leaky_relu(y, T::of(LEAKY_SLOPE))
}

/// strided conv + leaky relu, no norm
fn ladder_step<T: Scalar>(g: &mut Graph<T>, b: &Bound, name: &str, x: Var, s: usize, pad: usize) -> Var {
    let y = g.conv2d(x, b.var(&format!("{name}.w")), Some(b.var(&format!("{name}.b"))), s, pad);
    g.leaky_relu(y, T::of(LEAKY_SLOPE))
}

fn upsample<T: Scalar>(g: &mut Graph<T>, b: &Bound, name: &str, x: Var) -> Var {
    g.conv_transpose2d(x, b.var(&format!("{name}.w")), Some(b.var(&format!("{name}.b"))), 2, 0)
}

fn add_film<T: Scalar>(p: &mut ParamSet<T>, name: &str, cout: usize) {
    p.add(&format!("{name}.cg.w"), Tensor::zeros(&[CONTRAST_DIM, cout]));
    p.add(&format!("{name}.cg.b"), Tensor::zeros(&[cout]));
    p.add(&format!("{name}.cs.w"), Tensor::zeros(&[CONTRAST_DIM, cout]));
    p.add(&format!("{name}.cs.b"), Tensor::zeros(&[cout]));
}

/// Decoder block: conv + instance norm + contrast-driven channel gain and
/// shift + leaky relu. Instance norm strips spatially constant channels
/// before they reach any nonlinearity, so concatenated contrast input alone
/// never survives past the first norm; the code must re-enter every block as
/// a per-channel affine term. Heads start at zero, leaving the plain norm
/// behavior at init.
fn film_block<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    name: &str,
    x: Var,
    c: Var,
    stride: usize,
) -> Var {
    let y = g.conv2d(x, b.var(&format!("{name}.w")), Some(b.var(&format!("{name}.b"))), stride, 1);
    let y = g.instance_norm(
        y,
        b.var(&format!("{name}.g")),
        b.var(&format!("{name}.be")),
        T::of(IN_EPS),
    );
    let gain = g.linear(c, b.var(&format!("{name}.cg.w")), b.var(&format!("{name}.cg.b")));
    let shift = g.linear(c, b.var(&format!("{name}.cs.w")), b.var(&format!("{name}.cs.b")));
    let (h, w) = (g.value(y).dim(2), g.value(y).dim(3));
    let gb = g.broadcast_spatial(gain, h, w);
    let sb = g.broadcast_spatial(shift, h, w);
    let yg = g.mul(y, gb);
    let y = g.add(y, yg);
    let y = g.add(y, sb);
    g.leaky_relu(y, T::of(LEAKY_SLOPE))
}

// ---- anatomy encoder: three-level U-Net, 3x3 convs, softmax head ----

pub fn init_anatomy_encoder<T: Scalar>(cfg: &NetConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, m) = (cfg.width, cfg.anatomy_channels);
    let mut p = ParamSet::new();
    add_conv(&mut p, &mut rng, "enc0", 1, w, 3, true);
    add_conv(&mut p, &mut rng, "down1", w, 2 * w, 3, true);
    add_conv(&mut p, &mut rng, "enc1", 2 * w, 2 * w, 3, true);
    add_conv(&mut p, &mut rng, "down2", 2 * w, 4 * w, 3, true);
    add_conv(&mut p, &mut rng, "enc2", 4 * w, 4 * w, 3, true);
    add_conv(&mut p, &mut rng, "down3", 4 * w, 4 * w, 3, true);
    add_conv(&mut p, &mut rng, "bott", 4 * w, 4 * w, 3, true);
    add_convt(&mut p, &mut rng, "up2", 4 * w, 4 * w, 2);
    add_conv(&mut p, &mut rng, "dec2", 8 * w, 2 * w, 3, true);
    add_convt(&mut p, &mut rng, "up1", 2 * w, 2 * w, 2);
    add_conv(&mut p, &mut rng, "dec1", 4 * w, w, 3, true);
    add_convt(&mut p, &mut rng, "up0", w, w, 2);
    add_conv(&mut p, &mut rng, "dec0", 2 * w, w, 3, true);
    add_conv(&mut p, &mut rng, "head", w, m, 3, false);
    p
}

/// Anatomy code: per-pixel simplex over `anatomy_channels`, optionally
/// snapped to one-hot with straight-through gradients.
pub fn anatomy_encoder<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &NetConfig,
    x: Var,
    hard: bool,
) -> Var {
    let f0 = block(g, b, "enc0", x, 1);
    let d1 = block(g, b, "down1", f0, 2);
    let f1 = block(g, b, "enc1", d1, 1);
    let d2 = block(g, b, "down2", f1, 2);
    let f2 = block(g, b, "enc2", d2, 1);
    let d3 = block(g, b, "down3", f2, 2);
    let bottom = block(g, b, "bott", d3, 1);
    let u2 = upsample(g, b, "up2", bottom);
    let cat2 = g.concat_channels(u2, f2);
    let e2 = block(g, b, "dec2", cat2, 1);
    let u1 = upsample(g, b, "up1", e2);
    let cat1 = g.concat_channels(u1, f1);
    let e1 = block(g, b, "dec1", cat1, 1);
    let u0 = upsample(g, b, "up0", e1);
    let cat0 = g.concat_channels(u0, f0);
    let e0 = block(g, b, "dec0", cat0, 1);
    let logits = g.conv2d(e0, b.var("head.w"), Some(b.var("head.b")), 1, 1);
    let soft = g.softmax_channels(logits, T::of(cfg.temperature));
    if hard {
        g.hard_one_hot_st(soft)
    } else {
        soft
    }
}

// ---- contrast encoder: five-layer strided CNN, no normalization ----
// Normalization layers would strip exactly the appearance statistics this
// branch must keep, so it has none.

pub fn init_contrast_encoder<T: Scalar>(cfg: &NetConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = cfg.width;
    let mut p = ParamSet::new();
    add_conv(&mut p, &mut rng, "c1", 1, w, 4, false);
    add_conv(&mut p, &mut rng, "c2", w, 2 * w, 4, false);
    add_conv(&mut p, &mut rng, "c3", 2 * w, 4 * w, 4, false);
    add_conv(&mut p, &mut rng, "c4", 4 * w, 4 * w, 4, false);
    add_conv(&mut p, &mut rng, "c5", 4 * w, CONTRAST_DIM, cfg.ladder_tail(), false);
    // The head runs hot (x8): the untrained code must already span a
    // unit-scale range, since entropy estimates against N(0,I) degenerate
    // on a sub-unit blob.
    for i in 0..p.len() {
        if p.entry(i).0 == "c5.w" {
            for v in p.entry_mut(i).data_mut() {
                *v = *v * T::of(8.0);
            }
        }
    }
    p
}

/// Contrast code in `R^2`, one vector per image.
pub fn contrast_encoder<T: Scalar>(g: &mut Graph<T>, b: &Bound, _cfg: &NetConfig, x: Var) -> Var {
    let n = g.value(x).dim(0);
    let h = ladder_step(g, b, "c1", x, 2, 1);
    let h = ladder_step(g, b, "c2", h, 2, 1);
    let h = ladder_step(g, b, "c3", h, 2, 1);
    let h = ladder_step(g, b, "c4", h, 2, 1);
    let out = g.conv2d(h, b.var("c5.w"), Some(b.var("c5.b")), 1, 0);
    debug_assert_eq!(g.value(out).shape(), &[n, CONTRAST_DIM, 1, 1]);
    g.reshape(out, &[n, CONTRAST_DIM])
}

// ---- decoder: four-level U-Net over the anatomy code + tiled contrast ----

pub fn init_decoder<T: Scalar>(cfg: &NetConfig, seed: u64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, m) = (cfg.width, cfg.anatomy_channels);
    let cin = m + CONTRAST_DIM;
    let mut p = ParamSet::new();
    let blocks: [(&str, usize, usize); 13] = [
        ("enc0", cin, w),
        ("down1", w, 2 * w),
        ("enc1", 2 * w, 2 * w),
        ("down2", 2 * w, 4 * w),
        ("enc2", 4 * w, 4 * w),
        ("down3", 4 * w, 4 * w),
        ("enc3", 4 * w, 4 * w),
        ("down4", 4 * w, 4 * w),
        ("bott", 4 * w, 4 * w),
        ("dec3", 8 * w, 4 * w),
        ("dec2", 8 * w, 2 * w),
        ("dec1", 4 * w, w),
        ("dec0", 2 * w, w),
    ];
    for (name, ci, co) in blocks {
        add_conv(&mut p, &mut rng, name, ci, co, 3, true);
        add_film(&mut p, name, co);
    }
    add_convt(&mut p, &mut rng, "up3", 4 * w, 4 * w, 2);
    add_convt(&mut p, &mut rng, "up2", 4 * w, 4 * w, 2);
    add_convt(&mut p, &mut rng, "up1", 2 * w, 2 * w, 2);
    add_convt(&mut p, &mut rng, "up0", w, w, 2);
    add_conv(&mut p, &mut rng, "head", w, 1, 3, false);
    p
}

/// Renders an image from an anatomy code `[n, m, h, w]` and a contrast code
/// `[n, 2]`. Output is sigmoid-bounded to `[0, 1]`.
pub fn decoder<T: Scalar>(g: &mut Graph<T>, b: &Bound, _cfg: &NetConfig, a: Var, c: Var) -> Var {
    let (h, w) = (g.value(a).dim(2), g.value(a).dim(3));
    let cb = g.broadcast_spatial(c, h, w);
    let x = g.concat_channels(a, cb);
    let f0 = film_block(g, b, "enc0", x, c, 1);
    let d1 = film_block(g, b, "down1", f0, c, 2);
    let f1 = film_block(g, b, "enc1", d1, c, 1);
    let d2 = film_block(g, b, "down2", f1, c, 2);
    let f2 = film_block(g, b, "enc2", d2, c, 1);
    let d3 = film_block(g, b, "down3", f2, c, 2);
    let f3 = film_block(g, b, "enc3", d3, c, 1);
    let d4 = film_block(g, b, "down4", f3, c, 2);
    let bottom = film_block(g, b, "bott", d4, c, 1);
    let u3 = upsample(g, b, "up3", bottom);
    let cat3 = g.concat_channels(u3, f3);
    let e3 = film_block(g, b, "dec3", cat3, c, 1);
    let u2 = upsample(g, b, "up2", e3);
    let cat2 = g.concat_channels(u2, f2);
    let e2 = film_block(g, b, "dec2", cat2, c, 1);
    let u1 = upsample(g, b, "up1", e2);
    let cat1 = g.concat_channels(u1, f1);
    let e1 = film_block(g, b, "dec1", cat1, c, 1);
    let u0 = upsample(g, b, "up0", e1);
    let cat0 = g.concat_channels(u0, f0);
    let e0 = film_block(g, b, "dec0", cat0, c, 1);
    let logits = g.conv2d(e0, b.var("head.w"), Some(b.var("head.b")), 1, 1);
    g.sigmoid(logits)
}

// ---- pair critic: scores (contrast code, image) pairs ----

pub fn init_pair_critic<T: Scalar>(cfg: &NetConfig, seed: u64, final_std: f64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = cfg.width;
    let cin = 1 + CONTRAST_DIM;
    let mut p = ParamSet::new();
    add_conv(&mut p, &mut rng, "t1", cin, w, 4, false);
    add_conv(&mut p, &mut rng, "t2", w, 2 * w, 4, false);
    add_conv(&mut p, &mut rng, "t3", 2 * w, 4 * w, 4, false);
    add_conv(&mut p, &mut rng, "t4", 4 * w, 4 * w, 4, false);
    let tail = cfg.ladder_tail();
    if final_std > 0.0 {
        p.add("t5.w", Tensor::randn(&[1, 4 * w, tail, tail], final_std, &mut rng));
    } else {
        p.add("t5.w", Tensor::zeros(&[1, 4 * w, tail, tail]));
    }
    p.add("t5.b", Tensor::zeros(&[1]));
    p
}

/// Scalar score per (c, x) pair; `[n]` scores for a batch.
pub fn pair_critic<T: Scalar>(g: &mut Graph<T>, b: &Bound, cfg: &NetConfig, c: Var, x: Var) -> Var {
    let n = g.value(x).dim(0);
    let (h, w) = (g.value(x).dim(2), g.value(x).dim(3));
    debug_assert_eq!(h, cfg.image_size);
    let cb = g.broadcast_spatial(c, h, w);
    let joined = g.concat_channels(cb, x);
    let t = ladder_step(g, b, "t1", joined, 2, 1);
    let t = ladder_step(g, b, "t2", t, 2, 1);
    let t = ladder_step(g, b, "t3", t, 2, 1);
    let t = ladder_step(g, b, "t4", t, 2, 1);
    let out = g.conv2d(t, b.var("t5.w"), Some(b.var("t5.b")), 1, 0);
    g.reshape(out, &[n])
}

// ---- distribution discriminator: joint vs shuffled (a, c) pairs ----

pub fn init_dist_disc<T: Scalar>(cfg: &NetConfig, seed: u64, final_std: f64) -> ParamSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, m) = (cfg.width, cfg.anatomy_channels);
    let cin = m + CONTRAST_DIM;
    let mut p = ParamSet::new();
    add_conv(&mut p, &mut rng, "u1", cin, w, 4, false);
    add_conv(&mut p, &mut rng, "u2", w, 2 * w, 4, false);
    add_conv(&mut p, &mut rng, "u3", 2 * w, 4 * w, 4, false);
    add_conv(&mut p, &mut rng, "u4", 4 * w, 4 * w, 4, false);
    if final_std > 0.0 {
        p.add("u5.w", kaiming_linear::<T, _>(&mut rng, 4 * w, 1).map(|v| v * T::of(final_std)));
    } else {
        p.add("u5.w", Tensor::zeros(&[4 * w, 1]));
    }
    p.add("u5.b", Tensor::zeros(&[1]));
    p
}

/// Logit that an (anatomy code, contrast code) pair came from the joint
/// distribution rather than the product of marginals; `[n]` per batch.
pub fn dist_disc<T: Scalar>(g: &mut Graph<T>, b: &Bound, _cfg: &NetConfig, a: Var, c: Var) -> Var {
    let n = g.value(a).dim(0);
    let (h, w) = (g.value(a).dim(2), g.value(a).dim(3));
    let cb = g.broadcast_spatial(c, h, w);
    let joined = g.concat_channels(a, cb);
    let u = ladder_step(g, b, "u1", joined, 2, 1);
    let u = ladder_step(g, b, "u2", u, 2, 1);
    let u = ladder_step(g, b, "u3", u, 2, 1);
    let u = ladder_step(g, b, "u4", u, 2, 1);
    let pooled = g.global_avg_pool(u);
    let score = g.linear(pooled, b.var("u5.w"), b.var("u5.b"));
    g.reshape(score, &[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::bind;

    fn cfg() -> NetConfig {
        NetConfig::default()
    }

    fn batch<T: Scalar>(n: usize, c: usize, s: usize, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Tensor<T> = Tensor::randn(&[n, c, s, s], 0.5, &mut rng);
        raw.map(|v| (v + T::of(0.5)).max(T::zero()).min(T::one()))
    }

    #[test]
    fn anatomy_code_is_simplex_and_hard_mode_one_hot() {
        let cfg = cfg();
        let params: ParamSet<f32> = init_anatomy_encoder(&cfg, 11);
        let mut g = Graph::new();
        let b = bind(&mut g, &params, false);
        let x = g.constant(batch(2, 1, 32, 1));
        let soft = anatomy_encoder(&mut g, &b, &cfg, x, false);
        assert_eq!(g.value(soft).shape(), &[2, 8, 32, 32]);
        let hw = 32 * 32;
        let sv = g.value(soft).data();
        for i in 0..2 {
            for p in (0..hw).step_by(97) {
                let mut sum = 0.0f32;
                for ch in 0..8 {
                    let v = sv[(i * 8 + ch) * hw + p];
                    assert!((0.0..=1.0).contains(&v));
                    sum += v;
                }
                assert!((sum - 1.0).abs() < 1e-5);
            }
        }
        let hard = anatomy_encoder(&mut g, &b, &cfg, x, true);
        let hv = g.value(hard).data();
        for i in 0..2 {
            for p in (0..hw).step_by(41) {
                let mut ones = 0;
                for ch in 0..8 {
                    let v = hv[(i * 8 + ch) * hw + p];
                    assert!(v == 0.0 || v == 1.0);
                    if v == 1.0 {
                        ones += 1;
                    }
                }
                assert_eq!(ones, 1);
            }
        }
    }

    #[test]
    fn contrast_code_shape_and_decoder_range() {
        let cfg = cfg();
        let ec: ParamSet<f32> = init_contrast_encoder(&cfg, 3);
        let ea: ParamSet<f32> = init_anatomy_encoder(&cfg, 4);
        let de: ParamSet<f32> = init_decoder(&cfg, 5);
        let mut g = Graph::new();
        let bec = bind(&mut g, &ec, false);
        let bea = bind(&mut g, &ea, false);
        let bde = bind(&mut g, &de, false);
        let x = g.constant(batch(3, 1, 32, 2));
        let c = contrast_encoder(&mut g, &bec, &cfg, x);
        assert_eq!(g.value(c).shape(), &[3, 2]);
        let a = anatomy_encoder(&mut g, &bea, &cfg, x, false);
        let y = decoder(&mut g, &bde, &cfg, a, c);
        assert_eq!(g.value(y).shape(), &[3, 1, 32, 32]);
        for &v in g.value(y).data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn zero_initialized_scores_start_neutral() {
        let cfg = cfg();
        let tc: ParamSet<f32> = init_pair_critic(&cfg, 6, 0.0);
        let ud: ParamSet<f32> = init_dist_disc(&cfg, 7, 0.0);
        let ea: ParamSet<f32> = init_anatomy_encoder(&cfg, 8);
        let ec: ParamSet<f32> = init_contrast_encoder(&cfg, 9);
        let mut g = Graph::new();
        let btc = bind(&mut g, &tc, false);
        let bud = bind(&mut g, &ud, false);
        let bea = bind(&mut g, &ea, false);
        let bec = bind(&mut g, &ec, false);
        let x = g.constant(batch(2, 1, 32, 3));
        let c = contrast_encoder(&mut g, &bec, &cfg, x);
        let a = anatomy_encoder(&mut g, &bea, &cfg, x, false);
        let t = pair_critic(&mut g, &btc, &cfg, c, x);
        let u = dist_disc(&mut g, &bud, &cfg, a, c);
        assert_eq!(g.value(t).shape(), &[2]);
        assert_eq!(g.value(u).shape(), &[2]);
        for &v in g.value(t).data() {
            assert_eq!(v, 0.0);
        }
        for &v in g.value(u).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn init_model_is_deterministic_and_validates() {
        let cfg = cfg();
        cfg.validate().unwrap();
        let m1: ModelParams<f32> = init_model(&cfg, 42);
        let m2: ModelParams<f32> = init_model(&cfg, 42);
        assert_eq!(m1.anatomy_enc.checksum(), m2.anatomy_enc.checksum());
        assert_eq!(m1.decoder.checksum(), m2.decoder.checksum());
        let m3: ModelParams<f32> = init_model(&cfg, 43);
        assert_ne!(m1.anatomy_enc.checksum(), m3.anatomy_enc.checksum());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = cfg();
        c.image_size = 20;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.anatomy_channels = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
    }
}
