use crate::datagen::{batch_to_tensor, ImageGrid};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nets::{anatomy_encoder, contrast_encoder, decoder, ModelParams, NetConfig, CONTRAST_DIM};
use crate::nn::bind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Where the output contrast comes from: an image to encode, or an
/// explicit code.
#[derive(Clone, Debug)]
pub enum ContrastSource {
    Reference(ImageGrid),
    Code(Vec<f64>),
}

pub struct TranslationJob<'a, T: Scalar> {
    pub sources: &'a [ImageGrid],
    pub reference: ContrastSource,
    pub model: &'a ModelParams<T>,
    pub net: NetConfig,
    /// Snap anatomy maps to one-hot before decoding.
    pub hard_anatomy: bool,
}

fn check_grid(g: &ImageGrid, size: usize) -> Result<()> {
    if g.height != size || g.width != size {
        return Err(Error::validation(format!(
            "image is {}x{}, model expects {size}x{size}",
            g.height, g.width
        )));
    }
    Ok(())
}

/// A few load-bearing shapes; catches checkpoints from a different
/// architecture before any forward pass panics.
fn check_model<T: Scalar>(model: &ModelParams<T>, net: &NetConfig) -> Result<()> {
    net.validate()?;
    let e0 = model.anatomy_enc.get("enc0.w").shape().to_vec();
    if e0 != [net.width, 1, 3, 3] {
        return Err(Error::validation(format!(
            "checkpoint does not match the configured width: enc0.w is {e0:?}"
        )));
    }
    let head = model.anatomy_enc.get("head.w").shape().to_vec();
    if head[0] != net.anatomy_channels {
        return Err(Error::validation(format!(
            "checkpoint has {} anatomy channels, config says {}",
            head[0], net.anatomy_channels
        )));
    }
    Ok(())
}

/// Encodes the contrast of one image.
pub fn extract_contrast<T: Scalar>(
    model: &ModelParams<T>,
    net: &NetConfig,
    image: &ImageGrid,
) -> Result<Vec<f64>> {
    check_model(model, net)?;
    check_grid(image, net.image_size)?;
    let mut g = Graph::new();
    let bec = bind(&mut g, &model.contrast_enc, false);
    let x = g.constant(batch_to_tensor::<T>(&[image]));
    let c = contrast_encoder(&mut g, &bec, net, x);
    Ok(g.value(c).data().iter().map(|v| v.as_f64()).collect())
}

/// Per-pixel argmax over the anatomy channels.
pub fn anatomy_label_map<T: Scalar>(
    model: &ModelParams<T>,
    net: &NetConfig,
    image: &ImageGrid,
) -> Result<Vec<u8>> {
    check_model(model, net)?;
    check_grid(image, net.image_size)?;
    let mut g = Graph::new();
    let bea = bind(&mut g, &model.anatomy_enc, false);
    let x = g.constant(batch_to_tensor::<T>(&[image]));
    let a = anatomy_encoder(&mut g, &bea, net, x, false);
    let av = g.value(a);
    let (m, h, w) = (av.dim(1), av.dim(2), av.dim(3));
    let hw = h * w;
    let mut labels = vec![0u8; hw];
    for p in 0..hw {
        let mut best = 0usize;
        let mut bv = f64::NEG_INFINITY;
        for ch in 0..m {
            let v = av.data()[ch * hw + p].as_f64();
            if v > bv {
                bv = v;
                best = ch;
            }
        }
        labels[p] = best as u8;
    }
    Ok(labels)
}

pub fn label_agreement(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::validation("label maps must have equal non-zero length"));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Mean contrast code over several reference images. Harmonizing to a
/// site-level aggregate instead of a single image's code smooths out
/// per-acquisition noise in the reference; pass the result as
/// [`ContrastSource::Code`].
pub fn mean_contrast_code<T: Scalar>(
    model: &ModelParams<T>,
    net: &NetConfig,
    refs: &[&ImageGrid],
) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(Error::validation("mean_contrast_code: no reference images"));
    }
    check_model(model, net)?;
    for r in refs {
        check_grid(r, net.image_size)?;
    }
    let mut acc = vec![0.0f64; CONTRAST_DIM];
    for chunk in refs.chunks(32) {
        let mut g = Graph::new();
        let bec = bind(&mut g, &model.contrast_enc, false);
        let x = g.constant(batch_to_tensor::<T>(chunk));
        let c = contrast_encoder(&mut g, &bec, net, x);
        let cv = g.value(c);
        for i in 0..chunk.len() {
            for j in 0..CONTRAST_DIM {
                acc[j] += cv.data()[i * CONTRAST_DIM + j].as_f64();
            }
        }
    }
    for v in &mut acc {
        *v /= refs.len() as f64;
    }
    Ok(acc)
}

/// Re-renders every source with its own anatomy and the reference
/// contrast: x_hat = D(E_A(x_src), c_ref).
pub fn harmonize<T: Scalar>(job: &TranslationJob<'_, T>) -> Result<Vec<ImageGrid>> {
    check_model(job.model, &job.net)?;
    for s in job.sources {
        check_grid(s, job.net.image_size)?;
    }
    let code: Vec<f64> = match &job.reference {
        ContrastSource::Reference(img) => extract_contrast(job.model, &job.net, img)?,
        ContrastSource::Code(c) => {
            if c.len() != CONTRAST_DIM {
                return Err(Error::validation(format!(
                    "contrast code must have {CONTRAST_DIM} components, got {}",
                    c.len()
                )));
            }
            c.clone()
        }
    };
    let size = job.net.image_size;
    let mut out = Vec::with_capacity(job.sources.len());
    for chunk in job.sources.chunks(32) {
        let refs: Vec<&ImageGrid> = chunk.iter().collect();
        let n = refs.len();
        let mut g = Graph::new();
        let bea = bind(&mut g, &job.model.anatomy_enc, false);
        let bd = bind(&mut g, &job.model.decoder, false);
        let x = g.constant(batch_to_tensor::<T>(&refs));
        let a = anatomy_encoder(&mut g, &bea, &job.net, x, job.hard_anatomy);
        let mut cdata = Vec::with_capacity(n * CONTRAST_DIM);
        for _ in 0..n {
            cdata.extend(code.iter().map(|&v| T::of(v)));
        }
        let c = g.constant(Tensor::new(&[n, CONTRAST_DIM], cdata));
        let xhat = decoder(&mut g, &bd, &job.net, a, c);
        let xv = g.value(xhat);
        for i in 0..n {
            let px: Vec<f32> = xv.data()[i * size * size..(i + 1) * size * size]
                .iter()
                .map(|v| v.as_f64() as f32)
                .collect();
            out.push(ImageGrid::new(size, size, px)?);
        }
    }
    Ok(out)
}

const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 1e-4; // (0.01 * data_range)^2
const SSIM_C2: f64 = 9e-4; // (0.03 * data_range)^2

/// Mean local SSIM over all sliding 8x8 windows, uniform weighting,
/// population moments. Images smaller than the window are rejected.
pub fn ssim(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(Error::validation(format!(
            "shape mismatch: {}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let (h, w) = (x.height, x.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::validation(format!(
            "images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=(h - SSIM_WINDOW) {
        for c0 in 0..=(w - SSIM_WINDOW) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + SSIM_WINDOW {
                for c in c0..c0 + SSIM_WINDOW {
                    let a = x.data[r * w + c] as f64;
                    let b = y.data[r * w + c] as f64;
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// 10 log10(peak^2 / MSE), capped at 99 dB for identical images.
pub fn psnr(x: &ImageGrid, y: &ImageGrid) -> Result<f64> {
    if (x.height, x.width) != (y.height, y.width) {
        return Err(Error::validation(format!(
            "shape mismatch: {}x{} vs {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let mse: f64 = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

#[derive(Clone, Debug, Default)]
pub struct QualityReport {
    pub ssim: Vec<f64>,
    pub psnr: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

impl QualityReport {
    pub fn push(&mut self, s: f64, p: f64) {
        self.ssim.push(s);
        self.psnr.push(p);
    }

    pub fn ssim_stats(&self) -> (f64, f64) {
        mean_std(&self.ssim)
    }

    pub fn psnr_stats(&self) -> (f64, f64) {
        mean_std(&self.psnr)
    }

    pub fn summary(&self) -> String {
        let (sm, ss) = self.ssim_stats();
        let (pm, ps) = self.psnr_stats();
        format!(
            "ssim {:.4} +/- {:.4}, psnr {:.2} +/- {:.2} dB over {} images",
            sm,
            ss,
            pm,
            ps,
            self.ssim.len()
        )
    }
}

/// Compares image pairs and collects both metrics.
pub fn quality_report(pairs: &[(&ImageGrid, &ImageGrid)]) -> Result<QualityReport> {
    let mut q = QualityReport::default();
    for (a, b) in pairs {
        q.push(ssim(a, b)?, psnr(a, b)?);
    }
    Ok(q)
}

/// Intensity histogram plus first two moments; enough for a linear site
/// classifier on phantoms.
pub fn site_features(img: &ImageGrid) -> Vec<f64> {
    const BINS: usize = 16;
    let mut hist = vec![0.0f64; BINS];
    let n = img.data.len() as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for &v in &img.data {
        let v = v as f64;
        let b = ((v * BINS as f64) as usize).min(BINS - 1);
        hist[b] += 1.0 / n;
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / n;
    let std = (sumsq / n - mean * mean).max(0.0).sqrt();
    hist.push(mean);
    hist.push(std);
    hist
}

/// Multinomial logistic regression, full-batch gradient descent.
pub struct SiteClassifier {
    w: Vec<f64>, // [classes][dim]
    b: Vec<f64>,
    dim: usize,
    pub classes: usize,
}

impl SiteClassifier {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::validation("classifier needs matching non-empty features and labels"));
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::validation("label out of range"));
        }
        let dim = features[0].len();
        let mut w = vec![0.0; classes * dim];
        let mut b = vec![0.0; classes];
        let n = features.len() as f64;
        let lr = 0.5;
        for _ in 0..400 {
            let mut gw = vec![0.0; classes * dim];
            let mut gb = vec![0.0; classes];
            for (f, &y) in features.iter().zip(labels) {
                let p = Self::softmax(&w, &b, f, classes, dim);
                for k in 0..classes {
                    let d = p[k] - if k == y { 1.0 } else { 0.0 };
                    gb[k] += d / n;
                    for j in 0..dim {
                        gw[k * dim + j] += d * f[j] / n;
                    }
                }
            }
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= lr * g;
            }
            for (bv, g) in b.iter_mut().zip(&gb) {
                *bv -= lr * g;
            }
        }
        Ok(SiteClassifier { w, b, dim, classes })
    }

    fn softmax(w: &[f64], b: &[f64], f: &[f64], classes: usize, dim: usize) -> Vec<f64> {
        let mut z: Vec<f64> = (0..classes)
            .map(|k| b[k] + (0..dim).map(|j| w[k * dim + j] * f[j]).sum::<f64>())
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in z.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        z.iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, f: &[f64]) -> usize {
        let p = Self::softmax(&self.w, &self.b, f, self.classes, self.dim);
        p.iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> f64 {
        let hits = features
            .iter()
            .zip(labels)
            .filter(|(f, y)| self.predict(f) == **y)
            .count();
        hits as f64 / features.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_dataset, GenConfig};
    use crate::nets::init_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_from(vals: &[f32], h: usize, w: usize) -> ImageGrid {
        ImageGrid::new(h, w, vals.to_vec()).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid {
        let d: Vec<f32> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        grid_from(&d, h, w)
    }

    /// SSIM recomputed the long way: explicit means first, then centered
    /// moments, a different arithmetic route than the running-sum
    /// implementation.
    fn ssim_brute(x: &ImageGrid, y: &ImageGrid) -> f64 {
        let (h, w) = (x.height, x.width);
        let win = 8;
        let mut vals = Vec::new();
        for r0 in 0..=(h - win) {
            for c0 in 0..=(w - win) {
                let pix = |img: &ImageGrid, r: usize, c: usize| img.data[r * w + c] as f64;
                let mut mx = 0.0;
                let mut my = 0.0;
                for r in r0..r0 + win {
                    for c in c0..c0 + win {
                        mx += pix(x, r, c);
                        my += pix(y, r, c);
                    }
                }
                mx /= (win * win) as f64;
                my /= (win * win) as f64;
                let (mut vx, mut vy, mut cv) = (0.0, 0.0, 0.0);
                for r in r0..r0 + win {
                    for c in c0..c0 + win {
                        let dx = pix(x, r, c) - mx;
                        let dy = pix(y, r, c) - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cv += dx * dy;
                    }
                }
                vx /= (win * win) as f64;
                vy /= (win * win) as f64;
                cv /= (win * win) as f64;
                vals.push(
                    ((2.0 * mx * my + 1e-4) * (2.0 * cv + 9e-4))
                        / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4)),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_identity_symmetry_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = random_grid(&mut rng, 16, 16);
            let y = random_grid(&mut rng, 16, 16);
            assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
            let xy = ssim(&x, &y).unwrap();
            let yx = ssim(&y, &x).unwrap();
            assert_eq!(xy, yx);
            assert!((-1.0..=1.0).contains(&xy));
            assert!((xy - ssim_brute(&x, &y)).abs() < 1e-9);
        }
        let a = grid_from(&vec![0.5; 256], 16, 16);
        let b = grid_from(&vec![0.25; 256], 16, 16);
        assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-9);
        let small = grid_from(&vec![0.5; 16], 4, 4);
        assert!(ssim(&small, &small).is_err());
        let tall = grid_from(&vec![0.5; 128], 16, 8);
        assert!(ssim(&a, &tall).is_err());
    }

    #[test]
    fn psnr_oracles() {
        let z = grid_from(&vec![0.0; 64], 8, 8);
        let h = grid_from(&vec![0.5; 64], 8, 8);
        assert_eq!(psnr(&z, &z).unwrap(), 99.0);
        let v = psnr(&z, &h).unwrap();
        assert!((v - 10.0 * 4.0f64.log10()).abs() < 1e-9, "{v}");
        assert!((v - 6.0206).abs() < 1e-3);

        // halving the noise raises PSNR by 20 log10(2)
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise: Vec<f32> = (0..64).map(|_| rng.gen_range(-0.1..0.1f32)).collect();
        let base = grid_from(&vec![0.5; 64], 8, 8);
        let full = grid_from(
            &noise.iter().map(|n| 0.5 + n).collect::<Vec<f32>>(),
            8,
            8,
        );
        let half = grid_from(
            &noise.iter().map(|n| 0.5 + n / 2.0).collect::<Vec<f32>>(),
            8,
            8,
        );
        let gain = psnr(&base, &half).unwrap() - psnr(&base, &full).unwrap();
        assert!((gain - 20.0 * 2.0f64.log10()).abs() < 1e-6, "{gain}");
    }

    #[test]
    fn quality_report_aggregates() {
        let mut q = QualityReport::default();
        q.push(0.8, 20.0);
        q.push(1.0, 30.0);
        let (m, s) = q.ssim_stats();
        assert!((m - 0.9).abs() < 1e-12);
        assert!((s - 0.1).abs() < 1e-12);
        let (pm, _) = q.psnr_stats();
        assert!((pm - 25.0).abs() < 1e-12);
        assert!(q.summary().contains("2 images"));
    }

    #[test]
    fn harmonize_reference_equals_explicit_code() {
        let gcfg = GenConfig { sites: 2, subjects_per_site: 2, image_size: 16, seed: 3, ..GenConfig::default() };
        let data = build_dataset(&gcfg).unwrap();
        let net = NetConfig { image_size: 16, anatomy_channels: 4, width: 4, ..NetConfig::default() };
        let model: ModelParams<f32> = init_model(&net, 11);
        let sources = &data.grids[0..3];
        let reference = data.grids[4].clone();
        let code = extract_contrast(&model, &net, &reference).unwrap();
        let via_ref = harmonize(&TranslationJob {
            sources,
            reference: ContrastSource::Reference(reference),
            model: &model,
            net: net.clone(),
            hard_anatomy: false,
        })
        .unwrap();
        let via_code = harmonize(&TranslationJob {
            sources,
            reference: ContrastSource::Code(code),
            model: &model,
            net: net.clone(),
            hard_anatomy: false,
        })
        .unwrap();
        assert_eq!(via_ref.len(), 3);
        for (a, b) in via_ref.iter().zip(&via_code) {
            let d: f32 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(d < 1e-5, "max abs diff {d}");
        }

        // architecture mismatch is caught
        let wrong = NetConfig { anatomy_channels: 8, ..net.clone() };
        assert!(extract_contrast(&model, &wrong, &data.grids[0]).is_err());
        let bad_code = harmonize(&TranslationJob {
            sources,
            reference: ContrastSource::Code(vec![0.0; 3]),
            model: &model,
            net,
            hard_anatomy: false,
        });
        assert!(bad_code.is_err());
    }

    #[test]
    fn mean_contrast_code_averages_per_image_codes() {
        let gcfg = GenConfig { sites: 2, subjects_per_site: 2, image_size: 16, seed: 5, ..GenConfig::default() };
        let data = build_dataset(&gcfg).unwrap();
        let net = NetConfig { image_size: 16, anatomy_channels: 4, width: 4, ..NetConfig::default() };
        let model: ModelParams<f32> = init_model(&net, 13);

        let single = mean_contrast_code(&model, &net, &[&data.grids[0]]).unwrap();
        let direct = extract_contrast(&model, &net, &data.grids[0]).unwrap();
        for (a, b) in single.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9);
        }

        let refs: Vec<&ImageGrid> = data.grids.iter().take(5).collect();
        let mean = mean_contrast_code(&model, &net, &refs).unwrap();
        let mut expect = vec![0.0f64; mean.len()];
        for r in &refs {
            for (j, v) in extract_contrast(&model, &net, r).unwrap().iter().enumerate() {
                expect[j] += v / refs.len() as f64;
            }
        }
        for (a, b) in mean.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-5);
        }

        assert!(mean_contrast_code(&model, &net, &[]).is_err());
    }

    #[test]
    fn label_maps_and_agreement() {
        assert_eq!(label_agreement(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(label_agreement(&[1, 2, 3, 4], &[1, 2, 0, 0]).unwrap(), 0.5);
        assert!(label_agreement(&[1], &[1, 2]).is_err());

        let gcfg = GenConfig { sites: 1, subjects_per_site: 1, image_size: 16, seed: 3, ..GenConfig::default() };
        let data = build_dataset(&gcfg).unwrap();
        let net = NetConfig { image_size: 16, anatomy_channels: 4, width: 4, ..NetConfig::default() };
        let model: ModelParams<f32> = init_model(&net, 11);
        let l = anatomy_label_map(&model, &net, &data.grids[0]).unwrap();
        assert_eq!(l.len(), 256);
        assert!(l.iter().all(|&v| v < 4));
    }

    #[test]
    fn site_classifier_separates_synthetic_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..300 {
            let k = i % 3;
            let center = k as f64;
            feats.push(vec![
                center + 0.1 * rng.gen_range(-1.0..1.0),
                -center + 0.1 * rng.gen_range(-1.0..1.0),
            ]);
            labels.push(k);
        }
        let clf = SiteClassifier::fit(&feats, &labels, 3).unwrap();
        assert!(clf.accuracy(&feats, &labels) > 0.95);
        assert!(SiteClassifier::fit(&feats, &labels, 2).is_err());
    }

    #[test]
    fn site_features_shape_and_mass() {
        let g = grid_from(&vec![0.25; 64], 8, 8);
        let f = site_features(&g);
        assert_eq!(f.len(), 18);
        let mass: f64 = f[..16].iter().sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!((f[16] - 0.25).abs() < 1e-6);
        assert!(f[17].abs() < 1e-6);
    }
}
