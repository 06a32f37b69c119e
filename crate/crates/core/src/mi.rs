use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{softplus_scalar, Graph, Var};
use crate::nn::{bind, grads_for, Adam, AdamConfig, Bound, ParamSet};
use crate::nn::{kaiming_linear};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TWO_LN_2: f64 = 2.0 * std::f64::consts::LN_2;

/// Numerically stable `log(1 + exp(r))`.
pub fn softplus<T: Scalar>(r: T) -> T {
    softplus_scalar(r)
}

/// Matched samples from a joint distribution plus a fixed-point-free
/// permutation that turns them into product-of-marginals samples.
#[derive(Clone, Debug)]
pub struct PairBatch<T: Scalar> {
    pub us: Vec<Vec<T>>,
    pub vs: Vec<Vec<T>>,
    /// Shuffled pair `i` is `(us[i], vs[perm[i]])`.
    pub perm: Vec<usize>,
}

impl<T: Scalar> PairBatch<T> {
    /// Default derangement: cyclic shift by one. Any permutation without
    /// fixed points works; fixed points would silently turn negatives into
    /// positives.
    pub fn from_joint(us: Vec<Vec<T>>, vs: Vec<Vec<T>>) -> Result<Self> {
        let n = us.len();
        let perm = (0..n).map(|i| (i + 1) % n).collect();
        Self::with_permutation(us, vs, perm)
    }

    pub fn with_permutation(us: Vec<Vec<T>>, vs: Vec<Vec<T>>, perm: Vec<usize>) -> Result<Self> {
        if us.len() < 2 {
            return Err(Error::validation("pair batch needs at least 2 samples to shuffle"));
        }
        if us.len() != vs.len() || us.len() != perm.len() {
            return Err(Error::validation("pair batch sides must have equal length"));
        }
        let mut seen = vec![false; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || seen[p] {
                return Err(Error::validation("shuffle is not a permutation"));
            }
            if p == i {
                return Err(Error::validation(format!("shuffle has a fixed point at {i}")));
            }
            seen[p] = true;
        }
        Ok(PairBatch { us, vs, perm })
    }

    pub fn len(&self) -> usize {
        self.us.len()
    }

    pub fn is_empty(&self) -> bool {
        self.us.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    DeepInfomaxBound,
    MineDv,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::DeepInfomaxBound => write!(f, "deep_infomax_bound"),
            EstimatorKind::MineDv => write!(f, "mine_dv"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MIEstimate {
    /// Nats. For the infomax bound this is the raw batch value of the
    /// objective, whose supremum at independence is `-2 ln 2`; add
    /// [`TWO_LN_2`] to measure dependence above that floor.
    pub value: f64,
    pub n_samples: usize,
    pub estimator: EstimatorKind,
}

/// Empirical softplus bound over a batch:
/// `mean[-sp(-T(u_i, v_i))] - mean[sp(T(u_i, v_perm(i)))]`.
pub fn deep_infomax_bound<T: Scalar>(
    critic: impl Fn(&[T], &[T]) -> T,
    batch: &PairBatch<T>,
) -> Result<MIEstimate> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::validation("deep_infomax_bound needs at least 2 pairs"));
    }
    let mut pos = 0.0f64;
    let mut neg = 0.0f64;
    for i in 0..n {
        pos -= softplus(-critic(&batch.us[i], &batch.vs[i])).as_f64();
        neg += softplus(critic(&batch.us[i], &batch.vs[batch.perm[i]])).as_f64();
    }
    let value = (pos - neg) / n as f64;
    if !value.is_finite() {
        return Err(Error::numerical("infomax bound is not finite"));
    }
    Ok(MIEstimate { value, n_samples: n, estimator: EstimatorKind::DeepInfomaxBound })
}

/// Options shared by the trainable estimators. A fresh statistics network
/// and a fresh optimizer are created per estimation call.
#[derive(Clone, Copy, Debug)]
pub struct MineOptions {
    pub train_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Decay of the moving average that debiases the `log E_q[e^T]`
    /// gradient.
    pub ema_decay: f64,
    pub hidden_width: usize,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions {
            train_steps: 400,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            ema_decay: 0.99,
            hidden_width: 128,
        }
    }
}

/// Three-layer fully connected scorer for vector inputs. The output layer
/// starts at zero, so an untrained net scores everything 0.
pub struct StatNet<T: Scalar> {
    pub params: ParamSet<T>,
    din: usize,
}

impl<T: Scalar> StatNet<T> {
    pub fn init(din: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        p.add("m1.w", kaiming_linear(&mut rng, din, width));
        p.add("m1.b", Tensor::zeros(&[width]));
        p.add("m2.w", kaiming_linear(&mut rng, width, width));
        p.add("m2.b", Tensor::zeros(&[width]));
        p.add("m3.w", Tensor::zeros(&[width, 1]));
        p.add("m3.b", Tensor::zeros(&[1]));
        StatNet { params: p, din }
    }

    pub fn input_dim(&self) -> usize {
        self.din
    }

    fn forward(&self, g: &mut Graph<T>, b: &Bound, x: Var) -> Var {
        let n = g.value(x).dim(0);
        let slope = T::of(0.2);
        let h = g.linear(x, b.var("m1.w"), b.var("m1.b"));
        let h = g.leaky_relu(h, slope);
        let h = g.linear(h, b.var("m2.w"), b.var("m2.b"));
        let h = g.leaky_relu(h, slope);
        let out = g.linear(h, b.var("m3.w"), b.var("m3.b"));
        g.reshape(out, &[n])
    }

    /// Scores without recording gradients.
    pub fn score_rows(&self, rows: &[Vec<T>]) -> Vec<T> {
        let mut g = Graph::new();
        let b = bind(&mut g, &self.params, false);
        let x = g.constant(rows_to_tensor(rows, self.din));
        let s = self.forward(&mut g, &b, x);
        g.value(s).data().to_vec()
    }

    pub fn score_pair(&self, u: &[T], v: &[T]) -> T {
        let mut row = Vec::with_capacity(u.len() + v.len());
        row.extend_from_slice(u);
        row.extend_from_slice(v);
        self.score_rows(&[row])[0]
    }
}

fn rows_to_tensor<T: Scalar>(rows: &[Vec<T>], dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        assert_eq!(r.len(), dim, "row dimension mismatch");
        data.extend_from_slice(r);
    }
    Tensor::new(&[rows.len(), dim], data)
}

fn gather<'a, T>(rows: &'a [Vec<T>], idx: &[usize]) -> Vec<Vec<T>>
where
    T: Scalar,
{
    idx.iter().map(|&i| rows[i].clone()).collect()
}

/// Even indices train the critic, odd indices evaluate the bound; the
/// held-out value avoids the optimism of scoring the training samples.
fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    if n < 8 {
        let all: Vec<usize> = (0..n).collect();
        return (all.clone(), all);
    }
    ((0..n).step_by(2).collect(), (1..n).step_by(2).collect())
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dv_value<T: Scalar>(net: &StatNet<T>, p: &[Vec<T>], q: &[Vec<T>]) -> f64 {
    let tp = net.score_rows(p);
    let tq = net.score_rows(q);
    let mp: f64 = tp.iter().map(|v| v.as_f64()).sum::<f64>() / tp.len() as f64;
    let mx = tq.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lme = mx
        + (tq.iter().map(|v| (v.as_f64() - mx).exp()).sum::<f64>() / tq.len() as f64).ln();
    mp - lme
}

/// Donsker-Varadhan KL lower bound `sup_T E_p[T] - log E_q[e^T]`, trained
/// with the moving-average gradient correction and evaluated on a held-out
/// split. With `train_steps = 0` and the zero-initialized net this returns
/// exactly 0.
pub fn mine_dv_kl<T: Scalar>(
    net: &mut StatNet<T>,
    samples_p: &[Vec<T>],
    samples_q: &[Vec<T>],
    opts: &MineOptions,
) -> Result<f64> {
    if samples_p.is_empty() || samples_q.is_empty() {
        return Err(Error::validation("mine_dv_kl: empty sample set"));
    }
    let din = net.input_dim();
    if samples_p[0].len() != din || samples_q[0].len() != din {
        return Err(Error::validation(format!(
            "mine_dv_kl: sample dimensions p={} q={} do not match net input {}",
            samples_p[0].len(),
            samples_q[0].len(),
            din
        )));
    }
    let (p_train, p_eval) = split_indices(samples_p.len());
    let (q_train, q_eval) = split_indices(samples_q.len());
    dv_fit_fold(net, samples_p, samples_q, opts, opts.seed, (&p_train, &p_eval), (&q_train, &q_eval))
}

/// Trains `net` on the given train indices and returns the bound evaluated
/// on the eval indices.
fn dv_fit_fold<T: Scalar>(
    net: &mut StatNet<T>,
    samples_p: &[Vec<T>],
    samples_q: &[Vec<T>],
    opts: &MineOptions,
    rng_seed: u64,
    (p_train, p_eval): (&[usize], &[usize]),
    (q_train, q_eval): (&[usize], &[usize]),
) -> Result<f64> {
    let din = net.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut opt = Adam::new(&net.params, AdamConfig::with_lr(opts.learning_rate));
    let mut ema_log: Option<f64> = None;
    for step in 0..opts.train_steps {
        // anneal to a tenth of the initial rate so the estimate settles
        let frac = step as f64 / opts.train_steps.max(1) as f64;
        opt.set_lr(opts.learning_rate * (1.0 - 0.9 * frac));
        let bs = opts.batch_size.min(p_train.len()).min(q_train.len());
        let bp: Vec<usize> = (0..bs).map(|_| p_train[rng.gen_range(0..p_train.len())]).collect();
        let bq: Vec<usize> = (0..bs).map(|_| q_train[rng.gen_range(0..q_train.len())]).collect();
        let mut g = Graph::new();
        let b = bind(&mut g, &net.params, true);
        let xp = g.constant(rows_to_tensor(&gather(samples_p, &bp), din));
        let xq = g.constant(rows_to_tensor(&gather(samples_q, &bq), din));
        let tp = net.forward(&mut g, &b, xp);
        let tq = net.forward(&mut g, &b, xq);
        let mean_p = g.mean_all(tp);
        let lme = g.log_mean_exp(tq);
        let lme_val = g.value(lme).item().as_f64();
        if !lme_val.is_finite() || !g.value(mean_p).item().as_f64().is_finite() {
            return Err(Error::numerical(format!(
                "NaN in MINE optimization at step {step}"
            )));
        }
        let ema = match ema_log {
            None => lme_val,
            Some(prev) => log_add_exp(
                prev + opts.ema_decay.ln(),
                lme_val + (1.0 - opts.ema_decay).ln(),
            ),
        };
        ema_log = Some(ema);
        // surrogate whose gradient uses the moving-average denominator:
        // detach(exp(lme - ema)) * lme has gradient E_q[e^T dT] / ema
        let corr = T::of((lme_val - ema).exp());
        let neg_mp = g.neg(mean_p);
        let scaled = g.scale(lme, corr);
        let loss = g.add(neg_mp, scaled);
        let mut grads = g.backward(loss);
        let gv = grads_for(&mut grads, &b, &net.params);
        opt.step(&mut net.params, &gv, Some(5.0));
        if net.params.has_nan() {
            return Err(Error::numerical(format!(
                "NaN in MINE parameters after step {step}"
            )));
        }
    }
    let v = dv_value(net, &gather(samples_p, p_eval), &gather(samples_q, q_eval));
    if !v.is_finite() {
        return Err(Error::numerical("MINE estimate is not finite"));
    }
    Ok(v)
}

/// Cross-fitted fresh-net estimate: two nets, each trained on one half of
/// the data and evaluated on the other, averaged. Any fixed statistic gives
/// a valid lower bound, so the mean of the two held-out bounds is one too,
/// at roughly half the variance of a single split.
pub fn mine_dv_kl_fresh<T: Scalar>(
    samples_p: &[Vec<T>],
    samples_q: &[Vec<T>],
    opts: &MineOptions,
) -> Result<f64> {
    if samples_p.is_empty() {
        return Err(Error::validation("mine_dv_kl: empty sample set"));
    }
    let din = samples_p[0].len();
    if samples_q.is_empty() || samples_q[0].len() != din {
        return Err(Error::validation("mine_dv_kl: empty or mismatched q sample set"));
    }
    let (pa, pb) = split_indices(samples_p.len());
    let (qa, qb) = split_indices(samples_q.len());
    let mut n1 = StatNet::init(din, opts.hidden_width, opts.seed ^ 0x57A7);
    let v1 = dv_fit_fold(&mut n1, samples_p, samples_q, opts, opts.seed, (&pa, &pb), (&qa, &qb))?;
    let mut n2 = StatNet::init(din, opts.hidden_width, opts.seed ^ 0x57A8);
    let v2 =
        dv_fit_fold(&mut n2, samples_p, samples_q, opts, opts.seed ^ 0xF01D, (&pb, &pa), (&qb, &qa))?;
    Ok(0.5 * (v1 + v2))
}

/// Trains an MLP critic to maximize the softplus bound on (u, v) pairs and
/// returns the raw bound on a held-out split.
pub fn fit_deep_infomax<T: Scalar>(
    us: &[Vec<T>],
    vs: &[Vec<T>],
    opts: &MineOptions,
) -> Result<MIEstimate> {
    if us.len() != vs.len() {
        return Err(Error::validation("fit_deep_infomax: mismatched pair counts"));
    }
    if us.len() < 4 {
        return Err(Error::validation("fit_deep_infomax: need at least 4 pairs"));
    }
    let (du, dv) = (us[0].len(), vs[0].len());
    let din = du + dv;
    let mut net = StatNet::init(din, opts.hidden_width, opts.seed ^ 0xD1);
    let (train, eval) = split_indices(us.len());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = Adam::new(&net.params, AdamConfig::with_lr(opts.learning_rate));
    let joined = |i: usize, j: usize| -> Vec<T> {
        let mut r = Vec::with_capacity(din);
        r.extend_from_slice(&us[i]);
        r.extend_from_slice(&vs[j]);
        r
    };
    for step in 0..opts.train_steps {
        let frac = step as f64 / opts.train_steps.max(1) as f64;
        opt.set_lr(opts.learning_rate * (1.0 - 0.9 * frac));
        let bs = opts.batch_size.min(train.len()).max(2);
        let idx: Vec<usize> = (0..bs).map(|_| train[rng.gen_range(0..train.len())]).collect();
        let joint: Vec<Vec<T>> = idx.iter().map(|&i| joined(i, i)).collect();
        let shuf: Vec<Vec<T>> =
            (0..bs).map(|k| joined(idx[k], idx[(k + 1) % bs])).collect();
        let mut g = Graph::new();
        let b = bind(&mut g, &net.params, true);
        let xj = g.constant(rows_to_tensor(&joint, din));
        let xs = g.constant(rows_to_tensor(&shuf, din));
        let tj = net.forward(&mut g, &b, xj);
        let ts = net.forward(&mut g, &b, xs);
        // minimize sp(-t_joint) + sp(t_shuffled), i.e. maximize the bound
        let ntj = g.neg(tj);
        let a = g.softplus(ntj);
        let am = g.mean_all(a);
        let c = g.softplus(ts);
        let cm = g.mean_all(c);
        let loss = g.add(am, cm);
        if !g.value(loss).item().as_f64().is_finite() {
            return Err(Error::numerical(format!(
                "NaN in infomax critic optimization at step {step}"
            )));
        }
        let mut grads = g.backward(loss);
        let gv = grads_for(&mut grads, &b, &net.params);
        opt.step(&mut net.params, &gv, Some(5.0));
    }
    let eu: Vec<Vec<T>> = eval.iter().map(|&i| us[i].clone()).collect();
    let ev: Vec<Vec<T>> = eval.iter().map(|&i| vs[i].clone()).collect();
    let batch = PairBatch::from_joint(eu, ev)?;
    deep_infomax_bound(|u: &[T], v: &[T]| net.score_pair(u, v), &batch)
}

#[derive(Clone, Copy, Debug)]
pub struct EntropyEstimate {
    /// `cross_entropy_term - kl_correction + sum_j ln sigma_j`, nats.
    pub value: f64,
    /// `-mean log q(z_i)` of the standardized samples against the standard
    /// normal reference.
    pub cross_entropy_term: f64,
    /// `D_KL[p(z) || N(0, I)]` of the standardized samples per MINE.
    pub kl_correction: f64,
    /// `sum_j ln sigma_j` of the standardization, added back to `value`.
    pub log_jacobian: f64,
    pub dim: usize,
    pub n_samples: usize,
}

/// Differential entropy via a standard-normal reference:
/// `H(c) = -E[log q(c)] - D_KL[p(c) || q]` with `q = N(0, I_d)`.
///
/// Samples are standardized per coordinate first and the exact Jacobian term
/// `sum_j ln sigma_j` added back, so the estimate is affine-equivariant and
/// the KL correction stays in the regime a short MINE fit can actually
/// measure. Far-from-unit-scale codes would otherwise inflate the
/// cross-entropy term with nothing to cancel it.
pub fn estimate_entropy<T: Scalar>(
    c_samples: &[Vec<T>],
    opts: &MineOptions,
) -> Result<EntropyEstimate> {
    if c_samples.len() < 100 {
        return Err(Error::validation(format!(
            "insufficient samples: {} < 100",
            c_samples.len()
        )));
    }
    let d = c_samples[0].len();
    if d == 0 || c_samples.iter().any(|r| r.len() != d) {
        return Err(Error::validation("entropy samples must share a positive dimension"));
    }
    let n = c_samples.len() as f64;
    // a (near-)deterministic coordinate has -inf differential entropy and
    // breaks the KL reference; refuse instead of returning garbage
    let mut means = vec![0.0f64; d];
    let mut stds = vec![0.0f64; d];
    let mut log_jacobian = 0.0f64;
    for j in 0..d {
        let m: f64 = c_samples.iter().map(|r| r[j].as_f64()).sum::<f64>() / n;
        let var: f64 = c_samples.iter().map(|r| (r[j].as_f64() - m).powi(2)).sum::<f64>() / n;
        if var < 1e-10 {
            return Err(Error::validation(format!("degenerate p(c): coordinate {j} is constant")));
        }
        means[j] = m;
        stds[j] = var.sqrt();
        log_jacobian += stds[j].ln();
    }
    let standardized: Vec<Vec<T>> = c_samples
        .iter()
        .map(|r| {
            (0..d)
                .map(|j| T::of((r[j].as_f64() - means[j]) / stds[j]))
                .collect()
        })
        .collect();
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let cross_entropy_term: f64 = standardized
        .iter()
        .map(|r| {
            let sq: f64 = r.iter().map(|v| v.as_f64().powi(2)).sum();
            0.5 * (d as f64 * ln_2pi + sq)
        })
        .sum::<f64>()
        / n;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5A17);
    let z: Vec<Vec<T>> = (0..c_samples.len())
        .map(|_| {
            (0..d)
                .map(|_| {
                    let g: f64 = rng.sample(StandardNormal);
                    T::of(g)
                })
                .collect()
        })
        .collect();
    let kl_correction = mine_dv_kl_fresh(&standardized, &z, opts)?;
    let value = cross_entropy_term - kl_correction + log_jacobian;
    if !value.is_finite() {
        return Err(Error::numerical("entropy estimate is not finite"));
    }
    Ok(EntropyEstimate { value, cross_entropy_term, kl_correction, dim: d, n_samples: c_samples.len() })
}

/// How the denominator `H(c)` of the ratio is obtained.
#[derive(Clone, Copy, Debug)]
pub enum EntropyMode {
    /// Estimate from the same contrast samples.
    Estimated,
    /// Use a closed-form entropy (nats) when `p(c)` is known by
    /// construction, e.g. a discrete uniform code.
    Known(f64),
}

#[derive(Clone, Debug)]
pub struct RatioOptions {
    pub mine: MineOptions,
    pub entropy: EntropyMode,
}

impl Default for RatioOptions {
    fn default() -> Self {
        RatioOptions { mine: MineOptions::default(), entropy: EntropyMode::Estimated }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RatioReport {
    /// `I(a;c) / H(c)` clamped to `[0, 1]`.
    pub ratio: f64,
    /// Unclamped ratio, for diagnostics.
    pub raw: f64,
    pub mi_nats: f64,
    pub entropy_nats: f64,
    pub clamped: bool,
    pub n_samples: usize,
    pub seed: u64,
}

impl RatioReport {
    pub fn summary(&self) -> String {
        format!(
            "ratio = {:.4} (raw {:.4}, I = {:.4} nats, H = {:.4} nats, n = {}, seed = {}{})",
            self.ratio,
            self.raw,
            self.mi_nats,
            self.entropy_nats,
            self.n_samples,
            self.seed,
            if self.clamped { ", clamped" } else { "" }
        )
    }
}

fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Per-coordinate affine standardization. MI is invariant to it, but the
/// statistics networks are not: a coordinate three orders of magnitude
/// smaller than its neighbours gets no gradient in a few hundred steps.
/// Coordinates with vanishing spread are centered and left unscaled.
fn standardize_rows<T: Scalar>(rows: &[Vec<T>]) -> Vec<Vec<T>> {
    let n = rows.len();
    let m = rows[0].len();
    let mut mean = vec![0.0f64; m];
    let mut var = vec![0.0f64; m];
    for r in rows {
        for j in 0..m {
            mean[j] += r[j].as_f64() / n as f64;
        }
    }
    for r in rows {
        for j in 0..m {
            var[j] += (r[j].as_f64() - mean[j]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = var.iter().map(|v| if *v > 1e-24 { v.sqrt().recip() } else { 1.0 }).collect();
    rows.iter()
        .map(|r| {
            (0..m).map(|j| T::of((r[j].as_f64() - mean[j]) * scale[j])).collect()
        })
        .collect()
}

/// MI lower bound between two paired code sample sets: the numerator of
/// [`ratio_ri`], usable on its own when the denominator is degenerate.
/// Coordinates are standardized (MI-invariant), and the product-of-marginals
/// set pairs rows in a shuffled order: callers often pass rows grouped by
/// site or subject, and a cyclic shift over such an order pairs each row
/// with a near-duplicate instead of an independent draw. Shuffling first
/// keeps the shift fixed-point-free while making the pairing unstructured.
pub fn code_mi_lower_bound<T: Scalar>(
    a_samples: &[Vec<T>],
    c_samples: &[Vec<T>],
    opts: &MineOptions,
) -> Result<f64> {
    if a_samples.len() != c_samples.len() {
        return Err(Error::validation("code_mi_lower_bound: mismatched sample counts"));
    }
    let n = a_samples.len();
    if n < 100 {
        return Err(Error::validation(format!("insufficient samples: {n} < 100")));
    }
    let a_std = standardize_rows(a_samples);
    let c_std = standardize_rows(c_samples);
    let order = shuffled_order(n, opts.seed ^ 0x0D0E);
    let joint: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut r = a_std[order[i]].clone();
            r.extend_from_slice(&c_std[order[i]]);
            r
        })
        .collect();
    let product: Vec<Vec<T>> = (0..n)
        .map(|i| {
            let mut r = a_std[order[i]].clone();
            r.extend_from_slice(&c_std[order[(i + 1) % n]]);
            r
        })
        .collect();
    mine_dv_kl_fresh(&joint, &product, opts)
}

/// Share of the contrast code's information that leaks into the anatomy
/// summary: `I(a;c) / H(c)`, clamped to `[0, 1]`. `a_samples` should be a
/// fixed-length summary (see [`pool_anatomy_batch`]); since a summary is a
/// deterministic function of the full map, the measured value lower-bounds
/// the full-map quantity. The numerator is estimated on standardized
/// coordinates; the denominator on the raw contrast samples, since entropy,
/// unlike MI, is not reparameterization-invariant.
pub fn ratio_ri<T: Scalar>(
    a_samples: &[Vec<T>],
    c_samples: &[Vec<T>],
    opts: &RatioOptions,
) -> Result<RatioReport> {
    let n = a_samples.len();
    let mi_nats = code_mi_lower_bound(a_samples, c_samples, &opts.mine)?;
    let entropy_nats = match opts.entropy {
        EntropyMode::Known(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::validation("known entropy must be positive and finite"));
            }
            h
        }
        EntropyMode::Estimated => {
            let mut eo = opts.mine;
            eo.seed ^= 0xE47;
            estimate_entropy(c_samples, &eo)?.value
        }
    };
    if entropy_nats <= 1e-6 {
        return Err(Error::validation("degenerate p(c): entropy is not positive"));
    }
    let raw = mi_nats / entropy_nats;
    let ratio = raw.clamp(0.0, 1.0);
    Ok(RatioReport {
        ratio,
        raw,
        mi_nats,
        entropy_nats,
        clamped: raw != ratio,
        n_samples: n,
        seed: opts.mine.seed,
    })
}

/// Trains a fresh classifier to tell matched (a, c) rows from cyclically
/// shuffled ones and reports its held-out accuracy. Near 0.5 means the
/// codes carry no detectable joint structure.
pub fn probe_independence_accuracy<T: Scalar>(
    a_samples: &[Vec<T>],
    c_samples: &[Vec<T>],
    opts: &MineOptions,
) -> Result<f64> {
    if a_samples.len() != c_samples.len() {
        return Err(Error::validation("probe: mismatched sample counts"));
    }
    let n = a_samples.len();
    if n < 16 {
        return Err(Error::validation("probe: need at least 16 samples"));
    }
    let a_std = standardize_rows(a_samples);
    let c_std = standardize_rows(c_samples);
    // Same shuffled pairing as in `ratio_ri`: grouped caller order would
    // otherwise make the "shuffled" class a near-copy of the joint one.
    let order = shuffled_order(n, opts.seed ^ 0x0D0E);
    let join = |i: usize, j: usize| -> Vec<T> {
        let mut r = a_std[order[i]].clone();
        r.extend_from_slice(&c_std[order[j]]);
        r
    };
    let joint: Vec<Vec<T>> = (0..n).map(|i| join(i, i)).collect();
    let shuf: Vec<Vec<T>> = (0..n).map(|i| join(i, (i + 1) % n)).collect();
    let din = joint[0].len();
    let mut net = StatNet::init(din, opts.hidden_width, opts.seed ^ 0x9B0B);
    let (train, eval) = split_indices(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut opt = Adam::new(&net.params, AdamConfig::with_lr(opts.learning_rate));
    for step in 0..opts.train_steps {
        let frac = step as f64 / opts.train_steps.max(1) as f64;
        opt.set_lr(opts.learning_rate * (1.0 - 0.9 * frac));
        let bs = opts.batch_size.min(train.len()).max(2);
        let idx: Vec<usize> = (0..bs).map(|_| train[rng.gen_range(0..train.len())]).collect();
        let mut g = Graph::new();
        let b = bind(&mut g, &net.params, true);
        let xj = g.constant(rows_to_tensor(&gather(&joint, &idx), din));
        let xs = g.constant(rows_to_tensor(&gather(&shuf, &idx), din));
        let tj = net.forward(&mut g, &b, xj);
        let ts = net.forward(&mut g, &b, xs);
        let ntj = g.neg(tj);
        let a1 = g.softplus(ntj);
        let m1 = g.mean_all(a1);
        let a2 = g.softplus(ts);
        let m2 = g.mean_all(a2);
        let loss = g.add(m1, m2);
        if !g.value(loss).item().as_f64().is_finite() {
            return Err(Error::numerical(format!("NaN in probe training at step {step}")));
        }
        let mut grads = g.backward(loss);
        let gv = grads_for(&mut grads, &b, &net.params);
        opt.step(&mut net.params, &gv, Some(5.0));
    }
    let jr = net.score_rows(&gather(&joint, &eval));
    let sr = net.score_rows(&gather(&shuf, &eval));
    let correct = jr.iter().filter(|v| v.as_f64() > 0.0).count()
        + sr.iter().filter(|v| v.as_f64() <= 0.0).count();
    Ok(correct as f64 / (jr.len() + sr.len()) as f64)
}

/// Channel-wise spatial means of an anatomy batch `[n, m, h, w]`, one
/// M-vector per sample.
pub fn pool_anatomy_batch<T: Scalar>(a: &Tensor<T>) -> Vec<Vec<T>> {
    assert_eq!(a.shape().len(), 4, "expected [n, m, h, w]");
    let (n, m, h, w) = (a.dim(0), a.dim(1), a.dim(2), a.dim(3));
    let hw = h * w;
    let inv = T::one() / T::of(hw as f64);
    (0..n)
        .map(|i| {
            (0..m)
                .map(|ch| {
                    let base = (i * m + ch) * hw;
                    a.data()[base..base + hw].iter().fold(T::zero(), |acc, &v| acc + v) * inv
                })
                .collect()
        })
        .collect()
}
