use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAX_SITES: usize = 8;
const MANIFEST_HEADER: &str = "# smd-manifest\t1";
const SMDG_MAGIC: &[u8; 4] = b"SMDG";

/// Filled ellipse in anatomy space. Units are pixels of the base grid;
/// later shapes paint over earlier ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub center_x: f64,
    pub center_y: f64,
    pub axis_a: f64,
    pub axis_b: f64,
    pub rotation: f64,
    pub tissue_class: usize,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.axis_a).powi(2) + (v / self.axis_b).powi(2) <= 1.0
    }
}

/// Subject anatomy: a stack of ellipses plus the viewing geometry. Every
/// view of the same spec shows the same tissue layout re-sliced by a fixed
/// per-view rotation (odd views also mirrored).
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub shapes: Vec<Shape>,
    pub grid: usize,
    pub num_views: usize,
    /// Rotation step between consecutive views, radians.
    pub view_rotation: f64,
}

impl PhantomSpec {
    /// Deterministic random anatomy. The first `num_classes - 1` shapes
    /// cycle through every foreground class so each class is present.
    pub fn sample(
        seed: u64,
        grid: usize,
        num_views: usize,
        num_classes: usize,
        shapes_min: usize,
        shapes_max: usize,
        view_rotation: f64,
    ) -> Self {
        assert!(num_classes >= 2 && shapes_min >= 1 && shapes_max >= shapes_min);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(shapes_min..=shapes_max);
        let g = grid as f64;
        let shapes = (0..n)
            .map(|i| {
                let tissue_class = if i < num_classes - 1 {
                    i + 1
                } else {
                    rng.gen_range(1..num_classes)
                };
                Shape {
                    center_x: g * rng.gen_range(0.30..0.70),
                    center_y: g * rng.gen_range(0.30..0.70),
                    axis_a: g * rng.gen_range(0.08..0.18),
                    axis_b: g * rng.gen_range(0.08..0.18),
                    rotation: rng.gen_range(0.0..std::f64::consts::PI),
                    tissue_class,
                }
            })
            .collect();
        PhantomSpec { shapes, grid, num_views, view_rotation }
    }

    /// Inverse of the view transform: maps a view-space point back to
    /// anatomy space. Odd views mirror horizontally before rotating back.
    fn to_anatomy(&self, view: usize, px: f64, py: f64) -> (f64, f64) {
        let c = self.grid as f64 / 2.0;
        let px = if view % 2 == 1 { self.grid as f64 - px } else { px };
        let theta = -(view as f64) * self.view_rotation;
        let (s, co) = theta.sin_cos();
        let dx = px - c;
        let dy = py - c;
        (c + co * dx - s * dy, c + s * dx + co * dy)
    }

    fn class_at(&self, view: usize, px: f64, py: f64) -> usize {
        let (qx, qy) = self.to_anatomy(view, px, py);
        for shape in self.shapes.iter().rev() {
            if shape.contains(qx, qy) {
                return shape.tissue_class;
            }
        }
        0
    }
}

/// Acquisition profile of one site: how tissue classes map to intensities,
/// plus smooth shading and per-pixel noise levels.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteParams {
    pub site_id: u32,
    /// Intensity per tissue class; index 0 is background.
    pub tissue_intensity: Vec<f64>,
    /// Exponent applied to the class intensity before shading.
    pub gamma: f64,
    /// Peak relative deviation of the multiplicative bias field.
    pub bias_amplitude: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
}

/// (scale, gamma) pairs giving each site a distinct appearance along a
/// two-parameter family (global brightness and tone curve).
const SITE_FAMILY: [(f64, f64); MAX_SITES] = [
    (1.00, 1.00),
    (0.80, 1.50),
    (1.15, 0.70),
    (0.90, 1.25),
    (0.70, 0.90),
    (1.10, 1.40),
    (0.85, 0.65),
    (1.05, 1.15),
];

impl SiteParams {
    /// Standard profile for `site_id`: scaled evenly spaced intensities with
    /// a zero background.
    pub fn standard(
        site_id: u32,
        num_classes: usize,
        bias_amplitude: f64,
        noise_sigma: f64,
    ) -> Result<Self> {
        if site_id as usize >= MAX_SITES {
            return Err(Error::validation(format!(
                "site {site_id} beyond the {MAX_SITES} built-in profiles"
            )));
        }
        if num_classes < 2 {
            return Err(Error::validation("need at least 2 tissue classes"));
        }
        let (scale, gamma) = SITE_FAMILY[site_id as usize];
        let mut tissue_intensity = vec![0.0];
        for k in 1..num_classes {
            let base = 0.25 + 0.6 * (k - 1) as f64 / (num_classes - 1).max(1) as f64;
            tissue_intensity.push((scale * base).clamp(0.0, 1.0));
        }
        let p = SiteParams { site_id, tissue_intensity, gamma, bias_amplitude, noise_sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tissue_intensity.len() < 2 {
            return Err(Error::validation("tissue_intensity needs at least 2 entries"));
        }
        if self.tissue_intensity.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::validation("tissue intensities must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma < 4.0) {
            return Err(Error::validation("gamma must lie in (0, 4)"));
        }
        if !(0.0..0.5).contains(&self.bias_amplitude) {
            return Err(Error::validation("bias_amplitude must lie in [0, 0.5)"));
        }
        if !(0.0..0.2).contains(&self.noise_sigma) {
            return Err(Error::validation("noise_sigma must lie in [0, 0.2)"));
        }
        Ok(())
    }

    /// Smooth multiplicative shading, unit mean over the field of view.
    /// Coefficients depend only on the site, and the field is evaluated at
    /// anatomy-space coordinates so that a tissue region keeps the same
    /// shading statistics in every view.
    fn bias_at(&self, grid: usize, qx: f64, qy: f64) -> f64 {
        if self.bias_amplitude == 0.0 {
            return 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xB1A5 ^ ((self.site_id as u64) << 8));
        let coef: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let half = grid as f64 / 2.0;
        let u = (qx - half) / half;
        let v = (qy - half) / half;
        let basis = [u, v, u * v, u * u - 1.0 / 3.0, v * v - 1.0 / 3.0];
        let norm: f64 = coef.iter().map(|c| c.abs()).sum::<f64>().max(1e-9);
        let poly: f64 = coef.iter().zip(&basis).map(|(c, b)| c * b).sum();
        (1.0 + self.bias_amplitude * poly / norm).max(0.0)
    }
}

/// True when every pair of sites is visibly different: intensity vectors at
/// least 0.05 apart in max norm, or tone curves at least 0.1 apart.
pub fn sites_distinct(sites: &[SiteParams]) -> bool {
    for (i, a) in sites.iter().enumerate() {
        for b in sites.iter().skip(i + 1) {
            let li = a
                .tissue_intensity
                .iter()
                .zip(&b.tissue_intensity)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            if li < 0.05 && (a.gamma - b.gamma).abs() < 0.1 {
                return false;
            }
        }
    }
    true
}

/// Single-channel image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "image data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        let g = ImageGrid { height, width, data };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.len() != self.height * self.width {
            return Err(Error::validation("image dimensions inconsistent with payload"));
        }
        if self.data.iter().any(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("pixel values must be finite and in [0, 1]"));
        }
        Ok(())
    }

    /// Binary layout: magic "SMDG", then u32 height, width, channels
    /// (little endian), then f32 row-major pixels.
    pub fn write_smdg(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(SMDG_MAGIC);
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_smdg(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(Error::format(format!("{}: header truncated", path.display())));
        }
        if &bytes[0..4] != SMDG_MAGIC {
            return Err(Error::format(format!("{}: bad magic", path.display())));
        }
        let rd = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (h, w, c) = (rd(4), rd(8), rd(12));
        if c != 1 {
            return Err(Error::format(format!("{}: expected 1 channel, got {c}", path.display())));
        }
        let need = 16 + h * w * 4;
        if bytes.len() != need {
            return Err(Error::format(format!(
                "{}: payload is {} bytes, expected {need}",
                path.display(),
                bytes.len()
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        ImageGrid::new(h, w, data)
    }
}

/// Stacks grids into a `[n, 1, h, w]` batch tensor.
pub fn batch_to_tensor<T: Scalar>(grids: &[&ImageGrid]) -> Tensor<T> {
    assert!(!grids.is_empty());
    let (h, w) = (grids[0].height, grids[0].width);
    let mut data = Vec::with_capacity(grids.len() * h * w);
    for g in grids {
        assert_eq!((g.height, g.width), (h, w), "mixed image sizes in batch");
        data.extend(g.data.iter().map(|&v| T::of(v as f64)));
    }
    Tensor::new(&[grids.len(), 1, h, w], data)
}

/// Renders one view of a phantom at a site. `noise_seed` drives only the
/// additive pixel noise; everything else is a pure function of its inputs.
pub fn render_phantom(
    spec: &PhantomSpec,
    site: &SiteParams,
    view_index: usize,
    noise_seed: u64,
) -> Result<ImageGrid> {
    if view_index >= spec.num_views {
        return Err(Error::validation(format!(
            "view {view_index} out of range for {} views",
            spec.num_views
        )));
    }
    if spec.shapes.iter().any(|s| s.tissue_class >= site.tissue_intensity.len()) {
        return Err(Error::validation("tissue class without an intensity entry"));
    }
    site.validate()?;
    let g = spec.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut data = Vec::with_capacity(g * g);
    for y in 0..g {
        for x in 0..g {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (qx, qy) = spec.to_anatomy(view_index, px, py);
            let mut class = 0;
            for shape in spec.shapes.iter().rev() {
                if shape.contains(qx, qy) {
                    class = shape.tissue_class;
                    break;
                }
            }
            let base = site.tissue_intensity[class].powf(site.gamma);
            let bias = site.bias_at(g, qx, qy);
            let noise: f64 = if site.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                z * site.noise_sigma
            } else {
                0.0
            };
            data.push((bias * base + noise).clamp(0.0, 1.0) as f32);
        }
    }
    ImageGrid::new(g, g, data)
}

/// Tissue class of every pixel for one view, row-major.
pub fn render_label_map(spec: &PhantomSpec, view_index: usize) -> Vec<u8> {
    let g = spec.grid;
    let mut out = Vec::with_capacity(g * g);
    for y in 0..g {
        for x in 0..g {
            out.push(spec.class_at(view_index, x as f64 + 0.5, y as f64 + 0.5) as u8);
        }
    }
    out
}

/// Everything needed to (re)build a dataset deterministically.
#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub sites: usize,
    pub subjects_per_site: usize,
    pub views: usize,
    pub image_size: usize,
    pub tissue_classes: usize,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub view_rotation: f64,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    /// Fraction of each site's subjects that are additionally imaged at
    /// every other site (traveling subjects, used for paired training).
    pub cross_site_fraction: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            sites: 4,
            subjects_per_site: 20,
            views: 2,
            image_size: 32,
            tissue_classes: 4,
            shapes_min: 3,
            shapes_max: 8,
            view_rotation: 0.9,
            noise_sigma: 0.01,
            bias_amplitude: 0.1,
            cross_site_fraction: 0.0,
            seed: 17,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sites == 0 || self.sites > MAX_SITES {
            return Err(Error::validation(format!("sites must be 1..={MAX_SITES}")));
        }
        if self.subjects_per_site == 0 {
            return Err(Error::validation("subjects_per_site must be positive"));
        }
        if self.views == 0 {
            return Err(Error::validation("views must be positive"));
        }
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::validation("image_size must be a positive multiple of 16"));
        }
        if self.tissue_classes < 2 {
            return Err(Error::validation("tissue_classes must be at least 2"));
        }
        if self.shapes_min == 0 || self.shapes_max < self.shapes_min {
            return Err(Error::validation("shape count range must satisfy 1 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.cross_site_fraction) {
            return Err(Error::validation("cross_site_fraction must lie in [0, 1]"));
        }
        if !self.view_rotation.is_finite() || self.view_rotation.abs() > std::f64::consts::PI {
            return Err(Error::validation("view_rotation must lie in [-pi, pi]"));
        }
        SiteParams::standard(
            (self.sites - 1) as u32,
            self.tissue_classes,
            self.bias_amplitude,
            self.noise_sigma,
        )?;
        Ok(())
    }

    pub fn total_subjects(&self) -> u64 {
        (self.sites * self.subjects_per_site) as u64
    }

    pub fn home_site(&self, subject: u64) -> u32 {
        (subject as usize / self.subjects_per_site) as u32
    }

    /// Traveling subjects are the leading ones within each site's block.
    pub fn is_traveling(&self, subject: u64) -> bool {
        let within = subject as usize % self.subjects_per_site;
        within < (self.cross_site_fraction * self.subjects_per_site as f64).ceil() as usize
    }

    pub fn sites_of(&self, subject: u64) -> Vec<u32> {
        if self.is_traveling(subject) {
            (0..self.sites as u32).collect()
        } else {
            vec![self.home_site(subject)]
        }
    }

    pub fn to_meta(&self) -> String {
        format!(
            "format_version = 1\nsites = {}\nsubjects_per_site = {}\nviews = {}\n\
             image_size = {}\ntissue_classes = {}\nshapes_min = {}\nshapes_max = {}\n\
             view_rotation = {}\nnoise_sigma = {}\nbias_amplitude = {}\n\
             cross_site_fraction = {}\nseed = {}\n",
            self.sites,
            self.subjects_per_site,
            self.views,
            self.image_size,
            self.tissue_classes,
            self.shapes_min,
            self.shapes_max,
            self.view_rotation,
            self.noise_sigma,
            self.bias_amplitude,
            self.cross_site_fraction,
            self.seed
        )
    }

    pub fn from_meta(text: &str) -> Result<Self> {
        let mut cfg = GenConfig::default();
        let mut saw_version = false;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("meta line {}: expected key = value", ln + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |e: &dyn std::fmt::Display| Error::format(format!("meta {k}: {e}"));
            match k {
                "format_version" => {
                    let ver: u32 = v.parse().map_err(|e| bad(&e))?;
                    if ver != 1 {
                        return Err(Error::format(format!("unsupported meta version {ver}")));
                    }
                    saw_version = true;
                }
                "sites" => cfg.sites = v.parse().map_err(|e| bad(&e))?,
                "subjects_per_site" => cfg.subjects_per_site = v.parse().map_err(|e| bad(&e))?,
                "views" => cfg.views = v.parse().map_err(|e| bad(&e))?,
                "image_size" => cfg.image_size = v.parse().map_err(|e| bad(&e))?,
                "tissue_classes" => cfg.tissue_classes = v.parse().map_err(|e| bad(&e))?,
                "shapes_min" => cfg.shapes_min = v.parse().map_err(|e| bad(&e))?,
                "shapes_max" => cfg.shapes_max = v.parse().map_err(|e| bad(&e))?,
                "view_rotation" => cfg.view_rotation = v.parse().map_err(|e| bad(&e))?,
                "noise_sigma" => cfg.noise_sigma = v.parse().map_err(|e| bad(&e))?,
                "bias_amplitude" => cfg.bias_amplitude = v.parse().map_err(|e| bad(&e))?,
                "cross_site_fraction" => cfg.cross_site_fraction = v.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = v.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::format(format!("unknown meta key {other}"))),
            }
        }
        if !saw_version {
            return Err(Error::format("meta missing format_version"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Anatomy of one subject, regenerable from the dataset config alone.
pub fn subject_spec(cfg: &GenConfig, subject: u64) -> PhantomSpec {
    PhantomSpec::sample(
        splitmix64(cfg.seed.wrapping_add(subject.wrapping_mul(0x5157))),
        cfg.image_size,
        cfg.views,
        cfg.tissue_classes,
        cfg.shapes_min,
        cfg.shapes_max,
        cfg.view_rotation,
    )
}

pub fn site_params(cfg: &GenConfig, site: u32) -> Result<SiteParams> {
    SiteParams::standard(site, cfg.tissue_classes, cfg.bias_amplitude, cfg.noise_sigma)
}

fn noise_seed(cfg: &GenConfig, subject: u64, site: u32, view: usize) -> u64 {
    splitmix64(
        cfg.seed ^ 0x4E01_5EED ^ (subject << 20) ^ ((site as u64) << 8) ^ view as u64,
    )
}

/// Noise-free rendering, the reference target for translation metrics.
pub fn render_ground_truth(cfg: &GenConfig, subject: u64, site: u32, view: usize) -> Result<ImageGrid> {
    let spec = subject_spec(cfg, subject);
    let mut sp = site_params(cfg, site)?;
    sp.noise_sigma = 0.0;
    render_phantom(&spec, &sp, view, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub sample_id: u64,
    pub subject_id: u64,
    pub site_id: u32,
    pub view_index: u32,
    pub path: String,
    pub height: u32,
    pub width: u32,
}

/// Loaded dataset: manifest records plus their pixel grids, with the
/// generation config for ground-truth regeneration.
pub struct Dataset {
    pub config: GenConfig,
    pub records: Vec<ManifestRecord>,
    pub grids: Vec<ImageGrid>,
    by_subject_site: HashMap<(u64, u32), Vec<usize>>,
}

impl Dataset {
    fn index(config: GenConfig, records: Vec<ManifestRecord>, grids: Vec<ImageGrid>) -> Result<Self> {
        if records.len() != grids.len() {
            return Err(Error::validation("manifest and image count differ"));
        }
        let mut seen = std::collections::HashSet::new();
        let mut by_subject_site: HashMap<(u64, u32), Vec<usize>> = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.sample_id) {
                return Err(Error::format(format!("duplicate sample_id {}", r.sample_id)));
            }
            if (grids[i].height, grids[i].width) != (r.height as usize, r.width as usize) {
                return Err(Error::format(format!(
                    "sample {}: image is {}x{}, manifest says {}x{}",
                    r.sample_id, grids[i].height, grids[i].width, r.height, r.width
                )));
            }
            by_subject_site.entry((r.subject_id, r.site_id)).or_default().push(i);
        }
        Ok(Dataset { config, records, grids, by_subject_site })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subjects(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.records.iter().map(|r| r.subject_id).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Two images of the same subject at the same site with distinct views,
    /// uniform over ordered (view, view') pairs. Subjects imaged at several
    /// sites first pick the site uniformly among those with two or more
    /// views.
    pub fn sample_pair<R: Rng>(&self, subject: u64, rng: &mut R) -> Result<(usize, usize)> {
        let mut eligible: Vec<&Vec<usize>> = Vec::new();
        for site in 0..self.config.sites as u32 {
            if let Some(v) = self.by_subject_site.get(&(subject, site)) {
                if v.len() >= 2 {
                    eligible.push(v);
                }
            }
        }
        if eligible.is_empty() {
            return Err(Error::validation(format!(
                "subject {subject} has no site with two or more views"
            )));
        }
        let group = eligible[rng.gen_range(0..eligible.len())];
        let i = rng.gen_range(0..group.len());
        let mut j = rng.gen_range(0..group.len() - 1);
        if j >= i {
            j += 1;
        }
        Ok((group[i], group[j]))
    }

    /// Another record of the same subject at the same site with a
    /// different view, if one exists.
    pub fn other_view_at<R: Rng>(&self, idx: usize, rng: &mut R) -> Option<usize> {
        let r = &self.records[idx];
        let group = self.by_subject_site.get(&(r.subject_id, r.site_id))?;
        let alts: Vec<usize> = group
            .iter()
            .copied()
            .filter(|&i| self.records[i].view_index != r.view_index)
            .collect();
        if alts.is_empty() {
            None
        } else {
            Some(alts[rng.gen_range(0..alts.len())])
        }
    }

    /// Same subject, same view, two distinct sites (traveling subjects
    /// only): the anatomy is pixel-identical, only the contrast differs.
    pub fn sample_cross_site_pair<R: Rng>(&self, rng: &mut R) -> Option<(usize, usize)> {
        let travelers: Vec<u64> = self
            .subjects()
            .into_iter()
            .filter(|&u| self.config.is_traveling(u) && self.config.sites > 1)
            .collect();
        if travelers.is_empty() {
            return None;
        }
        let u = travelers[rng.gen_range(0..travelers.len())];
        let s1 = rng.gen_range(0..self.config.sites as u32);
        let mut s2 = rng.gen_range(0..self.config.sites as u32 - 1);
        if s2 >= s1 {
            s2 += 1;
        }
        let v = rng.gen_range(0..self.config.views as u32);
        let find = |site: u32| {
            self.by_subject_site.get(&(u, site)).and_then(|g| {
                g.iter().find(|&&i| self.records[i].view_index == v).copied()
            })
        };
        Some((find(s1)?, find(s2)?))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = fs::read_to_string(dir.join("dataset.meta"))
            .map_err(|e| Error::format(format!("dataset.meta: {e}")))?;
        let config = GenConfig::from_meta(&meta)?;
        let manifest = fs::read_to_string(dir.join("manifest.tsv"))
            .map_err(|e| Error::format(format!("manifest.tsv: {e}")))?;
        let mut lines = manifest.lines();
        match lines.next() {
            Some(h) if h == MANIFEST_HEADER => {}
            _ => return Err(Error::format("manifest.tsv: missing header line")),
        }
        let mut records = Vec::new();
        let mut grids = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(Error::format(format!(
                    "manifest.tsv line {}: expected 7 columns, got {}",
                    ln + 2,
                    f.len()
                )));
            }
            let bad = |what: &str| Error::format(format!("manifest.tsv line {}: bad {what}", ln + 2));
            let rec = ManifestRecord {
                sample_id: f[0].parse().map_err(|_| bad("sample_id"))?,
                subject_id: f[1].parse().map_err(|_| bad("subject_id"))?,
                site_id: f[2].parse().map_err(|_| bad("site_id"))?,
                view_index: f[3].parse().map_err(|_| bad("view_index"))?,
                path: f[4].to_string(),
                height: f[5].parse().map_err(|_| bad("height"))?,
                width: f[6].parse().map_err(|_| bad("width"))?,
            };
            grids.push(ImageGrid::read_smdg(&dir.join(&rec.path))?);
            records.push(rec);
        }
        Dataset::index(config, records, grids)
    }
}

/// Renders every record of `cfg` in memory.
pub fn build_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut grids = Vec::new();
    let mut sample_id = 0u64;
    for subject in 0..cfg.total_subjects() {
        let spec = subject_spec(cfg, subject);
        for site in cfg.sites_of(subject) {
            let sp = site_params(cfg, site)?;
            for view in 0..cfg.views {
                let grid = render_phantom(&spec, &sp, view, noise_seed(cfg, subject, site, view))?;
                records.push(ManifestRecord {
                    sample_id,
                    subject_id: subject,
                    site_id: site,
                    view_index: view as u32,
                    path: format!("images/u{subject:04}_s{site}_v{view}.smdg"),
                    height: grid.height as u32,
                    width: grid.width as u32,
                });
                grids.push(grid);
                sample_id += 1;
            }
        }
    }
    Dataset::index(cfg.clone(), records, grids)
}

/// Renders the dataset and writes images, manifest.tsv and dataset.meta.
pub fn generate_dataset(cfg: &GenConfig, dir: &Path) -> Result<Dataset> {
    let ds = build_dataset(cfg)?;
    fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    for (r, g) in ds.records.iter().zip(&ds.grids) {
        g.write_smdg(&dir.join(&r.path))?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.sample_id, r.subject_id, r.site_id, r.view_index, r.path, r.height, r.width
        ));
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    fs::write(dir.join("dataset.meta"), ds.config.to_meta())?;
    Ok(ds)
}

/// Two-sample Kolmogorov-Smirnov statistic (max CDF gap).
pub fn ks_statistic(a: &[f32], b: &[f32]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut a: Vec<f32> = a.to_vec();
    let mut b: Vec<f32> = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        // advance both past the smaller value, consuming ties together so
        // heavy point masses (clamped zeros) do not inflate the gap
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// PGM (P5, 8-bit) export for quick visual inspection.
pub fn write_pgm(grid: &ImageGrid, path: &Path) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    buf.extend(grid.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, buf)?;
    Ok(())
}

pub fn dataset_dir_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("manifest.tsv"), dir.join("dataset.meta"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> GenConfig {
        GenConfig {
            sites: 3,
            subjects_per_site: 4,
            views: 2,
            image_size: 32,
            seed: 7,
            ..GenConfig::default()
        }
    }

    #[test]
    fn gamma_curve_matches_hand_computed_pixel() {
        // one ellipse of class 1 with intensity 0.5 and gamma 2, no bias,
        // no noise: interior pixels must equal 0.25 exactly
        let spec = PhantomSpec {
            shapes: vec![Shape {
                center_x: 16.0,
                center_y: 16.0,
                axis_a: 10.0,
                axis_b: 10.0,
                rotation: 0.0,
                tissue_class: 1,
            }],
            grid: 32,
            num_views: 1,
            view_rotation: 0.0,
        };
        let site = SiteParams {
            site_id: 0,
            tissue_intensity: vec![0.0, 0.5],
            gamma: 2.0,
            bias_amplitude: 0.0,
            noise_sigma: 0.0,
        };
        let img = render_phantom(&spec, &site, 0, 1).unwrap();
        let center = img.data[16 * 32 + 16];
        assert!((center - 0.25).abs() < 1e-7, "center pixel {center}");
        assert_eq!(img.data[0], 0.0); // background stays zero
    }

    #[test]
    fn label_map_matches_rendered_structure() {
        let cfg = small_cfg();
        let spec = subject_spec(&cfg, 0);
        let labels = render_label_map(&spec, 0);
        assert_eq!(labels.len(), 32 * 32);
        let foreground = labels.iter().filter(|&&c| c > 0).count();
        assert!(foreground > 30, "phantom nearly empty: {foreground} foreground pixels");
        assert!(labels.iter().all(|&c| (c as usize) < cfg.tissue_classes));
    }

    #[test]
    fn views_share_class_conditional_histograms() {
        // bias is evaluated in anatomy space, so per-class intensity
        // distributions must agree across views of the same site
        let n_subjects = 60;
        let cfg = GenConfig {
            subjects_per_site: n_subjects as usize,
            sites: 1,
            seed: 5,
            ..GenConfig::default()
        };
        let site = site_params(&cfg, 0).unwrap();
        let mut per_view: Vec<HashMap<u8, Vec<f32>>> = vec![HashMap::new(), HashMap::new()];
        for subject in 0..n_subjects {
            let spec = subject_spec(&cfg, subject);
            for view in 0..2 {
                let img = render_phantom(&spec, &site, view, 100 + subject * 2 + view as u64)
                    .unwrap();
                let labels = render_label_map(&spec, view);
                for (&v, &c) in img.data.iter().zip(&labels) {
                    per_view[view].entry(c).or_default().push(v);
                }
            }
        }
        for class in 0..cfg.tissue_classes as u8 {
            let a = per_view[0].get(&class).unwrap();
            let b = per_view[1].get(&class).unwrap();
            assert!(a.len() > 2000 && b.len() > 2000, "class {class} too rare: {}", a.len());
            let ks = ks_statistic(a, b);
            assert!(ks < 0.05, "class {class}: KS {ks:.4} across views (n={})", a.len());
        }
    }

    #[test]
    fn standard_sites_are_pairwise_distinct() {
        let sites: Vec<SiteParams> = (0..MAX_SITES as u32)
            .map(|s| SiteParams::standard(s, 4, 0.1, 0.01).unwrap())
            .collect();
        assert!(sites_distinct(&sites));
        // sanity: a duplicated profile trips the check
        let dup = vec![sites[0].clone(), sites[0].clone()];
        assert!(!sites_distinct(&dup));
    }

    #[test]
    fn bias_field_has_unit_mean_and_bounded_swing() {
        let site = SiteParams::standard(2, 4, 0.1, 0.0).unwrap();
        let g = 64;
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..g {
            for x in 0..g {
                let b = site.bias_at(g, x as f64 + 0.5, y as f64 + 0.5);
                sum += b;
                lo = lo.min(b);
                hi = hi.max(b);
            }
        }
        let mean = sum / (g * g) as f64;
        assert!((mean - 1.0).abs() < 0.02, "bias mean {mean}");
        assert!(lo >= 0.9 - 1e-9 && hi <= 1.1 + 1e-9, "bias range [{lo}, {hi}]");
    }

    #[test]
    fn smdg_round_trip_and_corruption_detection() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageGrid::new(4, 6, (0..24).map(|i| i as f32 / 24.0).collect()).unwrap();
        let p = dir.path().join("a.smdg");
        img.write_smdg(&p).unwrap();
        let back = ImageGrid::read_smdg(&p).unwrap();
        assert_eq!(img, back);

        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad_magic.smdg");
        fs::write(&bad, &bytes).unwrap();
        let err = ImageGrid::read_smdg(&bad).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");

        let mut short = fs::read(&p).unwrap();
        short.truncate(short.len() - 3);
        let trunc = dir.path().join("trunc.smdg");
        fs::write(&trunc, &short).unwrap();
        let err = ImageGrid::read_smdg(&trunc).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn dataset_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let ds = generate_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(ds.len(), 3 * 4 * 2);
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(loaded.config, cfg);
        for (a, b) in ds.grids.iter().zip(&loaded.grids) {
            assert_eq!(a, b);
        }
        for (a, b) in ds.records.iter().zip(&loaded.records) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = build_dataset(&cfg).unwrap();
        let b = build_dataset(&cfg).unwrap();
        for (x, y) in a.grids.iter().zip(&b.grids) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn pair_sampling_is_uniform_over_ordered_view_pairs() {
        let cfg = GenConfig {
            sites: 1,
            subjects_per_site: 1,
            views: 3,
            seed: 11,
            ..GenConfig::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            let (i, j) = ds.sample_pair(0, &mut rng).unwrap();
            assert_ne!(i, j);
            *counts
                .entry((ds.records[i].view_index, ds.records[j].view_index))
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (&pair, &n) in &counts {
            let f = n as f64 / draws as f64;
            assert!(
                (f - 1.0 / 6.0).abs() < 0.02,
                "ordered pair {pair:?} frequency {f:.4}"
            );
        }
    }

    #[test]
    fn cross_site_pairs_share_anatomy() {
        let cfg = GenConfig {
            cross_site_fraction: 0.5,
            sites: 3,
            subjects_per_site: 4,
            seed: 21,
            ..GenConfig::default()
        };
        let ds = build_dataset(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (i, j) = ds.sample_cross_site_pair(&mut rng).unwrap();
        let (ri, rj) = (&ds.records[i], &ds.records[j]);
        assert_eq!(ri.subject_id, rj.subject_id);
        assert_eq!(ri.view_index, rj.view_index);
        assert_ne!(ri.site_id, rj.site_id);
        // identical label maps since anatomy and view coincide
        let spec = subject_spec(&cfg, ri.subject_id);
        let la = render_label_map(&spec, ri.view_index as usize);
        let lb = render_label_map(&spec, rj.view_index as usize);
        assert_eq!(la, lb);
    }

    #[test]
    fn sample_pair_rejects_subject_without_two_views() {
        let cfg = GenConfig { views: 1, ..small_cfg() };
        let ds = build_dataset(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(ds.sample_pair(0, &mut rng), Err(Error::Validation(_))));
    }

    #[test]
    fn meta_round_trip_and_unknown_key_rejection() {
        let cfg = small_cfg();
        let meta = cfg.to_meta();
        let back = GenConfig::from_meta(&meta).unwrap();
        assert_eq!(cfg, back);
        let err = GenConfig::from_meta("format_version = 1\nbogus = 3\n").unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn ks_statistic_basics() {
        let a: Vec<f32> = (0..1000).map(|i| i as f32 / 1000.0).collect();
        assert!(ks_statistic(&a, &a) < 1e-9);
        let b: Vec<f32> = a.iter().map(|v| v + 0.5).collect();
        assert!(ks_statistic(&a, &b) > 0.45);
    }
}
