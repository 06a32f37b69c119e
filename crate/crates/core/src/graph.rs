use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<T> =
    Box<dyn Fn(&Tensor<T>, &Tensor<T>, &[&Tensor<T>], &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    backward: Option<BackFn<T>>,
    needs_grad: bool,
}

/// Per-node gradients produced by [`Graph::backward`]. Only leaves created
/// with [`Graph::param`] keep their gradient; intermediates are freed as the
/// sweep passes them.
pub struct Grads<T: Scalar> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_node.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Reverse-mode tape. Forward values are computed eagerly as ops are
/// recorded; `backward` replays the tape once from a scalar loss.
///
/// Gradient routing contract: only nodes created with `param` receive
/// gradients, and subgraphs hanging off `constant` leaves are skipped
/// entirely during the sweep. Detaching a quantity from a phase is done by
/// feeding its value in as a constant.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None, false)
    }

    /// Leaf that accumulates a gradient during `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        backward: Option<BackFn<T>>,
        leaf_grad: bool,
    ) -> Var {
        let needs_grad = leaf_grad
            || (backward.is_some() && parents.iter().any(|p| self.nodes[p.0].needs_grad));
        self.nodes.push(Node { value, parents, backward, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Accumulates d(loss)/d(leaf) for every `param` leaf reachable from
    /// `loss`, which must hold exactly one element.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward from non-scalar of shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        let mut by_node: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Grads { by_node };
        }
        by_node[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if self.nodes[i].backward.is_none() {
                continue; // leaf: keep accumulated gradient for the caller
            }
            let Some(gy) = by_node[i].take() else { continue };
            let node = &self.nodes[i];
            let parent_vals: Vec<&Tensor<T>> =
                node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> =
                node.parents.iter().map(|p| self.nodes[p.0].needs_grad).collect();
            let back = node.backward.as_ref().unwrap();
            let contribs = back(&gy, &node.value, &parent_vals, &needs);
            debug_assert_eq!(contribs.len(), node.parents.len());
            for (p, c) in node.parents.iter().zip(contribs) {
                if !self.nodes[p.0].needs_grad {
                    continue;
                }
                let Some(c) = c else { continue };
                match &mut by_node[p.0] {
                    Some(g) => g.acc(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Grads { by_node }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|gy, _, _, _| vec![Some(gy.clone()), Some(gy.clone())])),
            false,
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|gy, _, _, _| {
                vec![Some(gy.clone()), Some(gy.map(|g| -g))]
            })),
            false,
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        self.push(
            v,
            vec![a, b],
            Some(Box::new(|gy, _, xs, _| {
                vec![Some(gy.zip(xs[1], |g, y| g * y)), Some(gy.zip(xs[0], |g, x| g * x))]
            })),
            false,
        )
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.push(
            v,
            vec![a],
            Some(Box::new(|gy, _, _, _| vec![Some(gy.map(|g| -g))])),
            false,
        )
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(
            v,
            vec![a],
            Some(Box::new(move |gy, _, _, _| vec![Some(gy.map(|g| g * s))])),
            false,
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        self.push(
            v,
            vec![a],
            Some(Box::new(|gy, _, xs, _| {
                vec![Some(gy.zip(xs[0], |g, x| {
                    if x > T::zero() {
                        g
                    } else if x < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                }))]
            })),
            false,
        )
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: T) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { x * alpha });
        self.push(
            v,
            vec![a],
            Some(Box::new(move |gy, _, xs, _| {
                vec![Some(gy.zip(xs[0], |g, x| if x > T::zero() { g } else { g * alpha }))]
            })),
            false,
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid_scalar);
        self.push(
            v,
            vec![a],
            Some(Box::new(|gy, y, _, _| {
                vec![Some(gy.zip(y, |g, s| g * s * (T::one() - s)))]
            })),
            false,
        )
    }

    /// Numerically stable `log(1 + exp(x))`.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus_scalar);
        self.push(
            v,
            vec![a],
            Some(Box::new(|gy, _, xs, _| {
                vec![Some(gy.zip(xs[0], |g, x| g * sigmoid_scalar(x)))]
            })),
            false,
        )
    }

    // ---- reductions ----

    /// Mean over all elements, yielding a single-element tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = T::of(x.numel() as f64);
        let v = Tensor::scalar(x.sum() / n);
        self.push(
            v,
            vec![a],
            Some(Box::new(move |gy, _, xs, _| {
                vec![Some(Tensor::full(xs[0].shape(), gy.item() / n))]
            })),
            false,
        )
    }

    /// `log(mean(exp(x)))` over all elements, computed against the running
    /// maximum so large scores do not overflow.
    pub fn log_mean_exp(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.data().iter().cloned().fold(T::neg_infinity(), T::max);
        let n = T::of(x.numel() as f64);
        let mean_shifted =
            x.data().iter().fold(T::zero(), |acc, &v| acc + (v - m).exp()) / n;
        let v = Tensor::scalar(m + mean_shifted.ln());
        self.push(
            v,
            vec![a],
            Some(Box::new(|gy, y, xs, _| {
                // d/dx_i = exp(x_i - y) / n
                let yv = y.item();
                let n = T::of(xs[0].numel() as f64);
                let g = gy.item();
                vec![Some(xs[0].map(|x| g * (x - yv).exp() / n))]
            })),
            false,
        )
    }

    /// Mean absolute difference, the reconstruction loss.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    // ---- shape ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).reshaped(shape);
        let orig: Vec<usize> = self.value(a).shape().to_vec();
        self.push(
            v,
            vec![a],
            Some(Box::new(move |gy, _, _, _| vec![Some(gy.reshaped(&orig))])),
            false,
        )
    }

    /// Concatenation along the channel axis of `[n, c, h, w]` tensors.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (xa, xb) = (self.value(a), self.value(b));
        assert_eq!(xa.shape().len(), 4);
        assert_eq!(xb.shape().len(), 4);
        let (n, ca, h, w) = dims4(xa);
        let (nb, cb, hb, wb) = dims4(xb);
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels spatial mismatch");
        let hw = h * w;
        let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
        {
            let (da, db, o) = (xa.data(), xb.data(), out.data_mut());
            for i in 0..n {
                let dst = &mut o[i * (ca + cb) * hw..];
                dst[..ca * hw].copy_from_slice(&da[i * ca * hw..(i + 1) * ca * hw]);
                dst[ca * hw..(ca + cb) * hw]
                    .copy_from_slice(&db[i * cb * hw..(i + 1) * cb * hw]);
            }
        }
        self.push(
            out,
            vec![a, b],
            Some(Box::new(move |gy, _, _, needs| {
                let g = gy.data();
                let mut ga = Tensor::zeros(&[n, ca, h, w]);
                let mut gb = Tensor::zeros(&[n, cb, h, w]);
                for i in 0..n {
                    let src = &g[i * (ca + cb) * hw..];
                    if needs[0] {
                        ga.data_mut()[i * ca * hw..(i + 1) * ca * hw]
                            .copy_from_slice(&src[..ca * hw]);
                    }
                    if needs[1] {
                        gb.data_mut()[i * cb * hw..(i + 1) * cb * hw]
                            .copy_from_slice(&src[ca * hw..(ca + cb) * hw]);
                    }
                }
                vec![Some(ga), Some(gb)]
            })),
            false,
        )
    }

    /// Tiles per-sample vectors `[n, d]` across space into `[n, d, h, w]`.
    pub fn broadcast_spatial(&mut self, a: Var, h: usize, w: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape().len(), 2);
        let (n, d) = (x.dim(0), x.dim(1));
        let mut out = Tensor::zeros(&[n, d, h, w]);
        {
            let (src, dst) = (x.data(), out.data_mut());
            for i in 0..n {
                for j in 0..d {
                    let v = src[i * d + j];
                    let base = (i * d + j) * h * w;
                    dst[base..base + h * w].fill(v);
                }
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |gy, _, _, _| {
                let g = gy.data();
                let mut ga = Tensor::zeros(&[n, d]);
                for i in 0..n {
                    for j in 0..d {
                        let base = (i * d + j) * h * w;
                        let s = g[base..base + h * w]
                            .iter()
                            .fold(T::zero(), |acc, &v| acc + v);
                        ga.data_mut()[i * d + j] = s;
                    }
                }
                vec![Some(ga)]
            })),
            false,
        )
    }

    /// Spatial mean per channel: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let mut out = Tensor::zeros(&[n, c]);
        for i in 0..n * c {
            let s = x.data()[i * hw..(i + 1) * hw]
                .iter()
                .fold(T::zero(), |acc, &v| acc + v);
            out.data_mut()[i] = s * inv;
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |gy, _, _, _| {
                let mut ga = Tensor::zeros(&[n, c, h, w]);
                for i in 0..n * c {
                    ga.data_mut()[i * hw..(i + 1) * hw].fill(gy.data()[i] * inv);
                }
                vec![Some(ga)]
            })),
            false,
        )
    }

    /// Row selection along the first axis; rows may repeat. The backward
    /// pass scatter-adds, so this is the derangement primitive for building
    /// product-of-marginals batches inside the tape.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let n = x.dim(0);
        let row: usize = x.shape()[1..].iter().product();
        for &i in idx {
            assert!(i < n, "gather_rows index {} out of {}", i, n);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = idx.len();
        let mut out = Tensor::zeros(&shape);
        for (o, &i) in idx.iter().enumerate() {
            out.data_mut()[o * row..(o + 1) * row]
                .copy_from_slice(&x.data()[i * row..(i + 1) * row]);
        }
        let idx = idx.to_vec();
        let in_shape: Vec<usize> = x.shape().to_vec();
        self.push(
            out,
            vec![a],
            Some(Box::new(move |gy, _, _, _| {
                let mut ga = Tensor::zeros(&in_shape);
                for (o, &i) in idx.iter().enumerate() {
                    let dst = &mut ga.data_mut()[i * row..(i + 1) * row];
                    for (d, &g) in dst.iter_mut().zip(&gy.data()[o * row..(o + 1) * row]) {
                        *d += g;
                    }
                }
                vec![Some(ga)]
            })),
            false,
        )
    }

    // ---- activations over channels ----

    /// Per-pixel softmax over channels with temperature: rows of
    /// `[n, :, h, w]` become simplex points, sharper as `tau` shrinks.
    pub fn softmax_channels(&mut self, a: Var, tau: T) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        let mut out = Tensor::zeros(x.shape());
        {
            let (src, dst) = (x.data(), out.data_mut());
            for i in 0..n {
                for p in 0..hw {
                    let base = i * c * hw + p;
                    let mut m = T::neg_infinity();
                    for ch in 0..c {
                        m = m.max(src[base + ch * hw] / tau);
                    }
                    let mut z = T::zero();
                    for ch in 0..c {
                        let e = (src[base + ch * hw] / tau - m).exp();
                        dst[base + ch * hw] = e;
                        z = z + e;
                    }
                    for ch in 0..c {
                        dst[base + ch * hw] = dst[base + ch * hw] / z;
                    }
                }
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(move |gy, y, _, _| {
                let (g, s) = (gy.data(), y.data());
                let mut ga = Tensor::zeros(y.shape());
                let dst = ga.data_mut();
                for i in 0..n {
                    for p in 0..hw {
                        let base = i * c * hw + p;
                        let mut dot = T::zero();
                        for ch in 0..c {
                            dot = dot + g[base + ch * hw] * s[base + ch * hw];
                        }
                        for ch in 0..c {
                            dst[base + ch * hw] =
                                s[base + ch * hw] * (g[base + ch * hw] - dot) / tau;
                        }
                    }
                }
                vec![Some(ga)]
            })),
            false,
        )
    }

    /// Straight-through channel argmax: forward snaps each pixel of a soft
    /// simplex tensor to a one-hot vector, backward passes gradients through
    /// unchanged. Ties resolve to the lowest channel index.
    pub fn hard_one_hot_st(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        let mut out = Tensor::zeros(x.shape());
        {
            let (src, dst) = (x.data(), out.data_mut());
            for i in 0..n {
                for p in 0..hw {
                    let base = i * c * hw + p;
                    let mut best = 0;
                    let mut bv = src[base];
                    for ch in 1..c {
                        let v = src[base + ch * hw];
                        if v > bv {
                            bv = v;
                            best = ch;
                        }
                    }
                    dst[base + best * hw] = T::one();
                }
            }
        }
        self.push(
            out,
            vec![a],
            Some(Box::new(|gy, _, _, _| vec![Some(gy.clone())])),
            false,
        )
    }

    /// Instance normalization: per-sample, per-channel standardization with
    /// learned affine. `gamma` and `beta` have shape `[c]`.
    pub fn instance_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let x = self.value(a);
        let (n, c, h, w) = dims4(x);
        let hw = h * w;
        assert_eq!(self.value(gamma).shape(), &[c]);
        assert_eq!(self.value(beta).shape(), &[c]);
        let gm = self.value(gamma).data().to_vec();
        let bt = self.value(beta).data().to_vec();
        let mut out = Tensor::zeros(x.shape());
        {
            let (src, dst) = (x.data(), out.data_mut());
            for i in 0..n {
                for ch in 0..c {
                    let base = (i * c + ch) * hw;
                    let sl = &src[base..base + hw];
                    let (mu, inv_std) = moments(sl, eps);
                    for (d, &v) in dst[base..base + hw].iter_mut().zip(sl) {
                        *d = gm[ch] * (v - mu) * inv_std + bt[ch];
                    }
                }
            }
        }
        self.push(
            out,
            vec![a, gamma, beta],
            Some(Box::new(move |gy, _, xs, needs| {
                let x = xs[0];
                let gm = xs[1].data();
                let g = gy.data();
                let mut gx = Tensor::zeros(x.shape());
                let mut gg = Tensor::zeros(&[c]);
                let mut gb = Tensor::zeros(&[c]);
                let inv_hw = T::one() / T::of(hw as f64);
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        let sl = &x.data()[base..base + hw];
                        let gsl = &g[base..base + hw];
                        let (mu, inv_std) = moments(sl, eps);
                        let mut sum_g = T::zero();
                        let mut sum_gx = T::zero();
                        for (&gv, &xv) in gsl.iter().zip(sl) {
                            let xh = (xv - mu) * inv_std;
                            sum_g = sum_g + gv;
                            sum_gx = sum_gx + gv * xh;
                        }
                        gb.data_mut()[ch] += sum_g;
                        gg.data_mut()[ch] += sum_gx;
                        if needs[0] {
                            let mean_g = sum_g * inv_hw;
                            let mean_gx = sum_gx * inv_hw;
                            let dst = &mut gx.data_mut()[base..base + hw];
                            for ((d, &gv), &xv) in dst.iter_mut().zip(gsl).zip(sl) {
                                let xh = (xv - mu) * inv_std;
                                *d = gm[ch] * inv_std * (gv - mean_g - xh * mean_gx);
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            })),
            false,
        )
    }

    // ---- linear / conv ----

    /// `y[n, dout] = x[n, din] * w[din, dout] + b[dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, din) = (xv.dim(0), xv.dim(1));
        let dout = wv.dim(1);
        assert_eq!(wv.dim(0), din, "linear weight shape");
        assert_eq!(self.value(b).shape(), &[dout]);
        let mut out = Tensor::zeros(&[n, dout]);
        gemm(n, din, dout, T::one(), xv.data(), false, wv.data(), false, T::zero(), out.data_mut());
        {
            let bd = self.value(b).data().to_vec();
            for row in out.data_mut().chunks_mut(dout) {
                for (v, &bb) in row.iter_mut().zip(&bd) {
                    *v += bb;
                }
            }
        }
        self.push(
            out,
            vec![x, w, b],
            Some(Box::new(move |gy, _, xs, needs| {
                let gx = needs[0].then(|| {
                    let mut t = Tensor::zeros(&[n, din]);
                    gemm(n, dout, din, T::one(), gy.data(), false, xs[1].data(), true, T::zero(), t.data_mut());
                    t
                });
                let gw = needs[1].then(|| {
                    let mut t = Tensor::zeros(&[din, dout]);
                    gemm(din, n, dout, T::one(), xs[0].data(), true, gy.data(), false, T::zero(), t.data_mut());
                    t
                });
                let gb = needs[2].then(|| {
                    let mut t = Tensor::zeros(&[dout]);
                    for row in gy.data().chunks(dout) {
                        for (acc, &g) in t.data_mut().iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    t
                });
                vec![gx, gw, gb]
            })),
            false,
        )
    }

    /// 2-d convolution, weight layout `[cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let out = conv_fwd(
            self.value(x),
            self.value(w),
            b.map(|bb| self.value(bb).data().to_vec()),
            stride,
            pad,
        );
        let mut parents = vec![x, w];
        if let Some(bb) = b {
            parents.push(bb);
        }
        let has_bias = b.is_some();
        self.push(
            out,
            parents,
            Some(Box::new(move |gy, _, xs, needs| {
                let mut out = Vec::with_capacity(3);
                out.push(
                    needs[0]
                        .then(|| conv_bwd_data(gy, xs[1], xs[0].shape(), stride, pad)),
                );
                out.push(needs[1].then(|| conv_bwd_weights(gy, xs[0], xs[1].shape(), stride, pad)));
                if has_bias {
                    out.push(needs[2].then(|| conv_bwd_bias(gy)));
                }
                out
            })),
            false,
        )
    }

    /// Transposed 2-d convolution (fractionally strided upsampling), weight
    /// layout `[cin, cout, k, k]`. Output spatial size is
    /// `(in - 1) * stride + k - 2 * pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let (n, cin, hin, win) = dims4(xv);
        assert_eq!(wv.dim(0), cin, "conv_transpose weight in-channels");
        let cout = wv.dim(1);
        let k = wv.dim(2);
        let hout = (hin - 1) * stride + k - 2 * pad;
        let wout = (win - 1) * stride + k - 2 * pad;
        let mut out = conv_bwd_data(xv, wv, &[n, cout, hout, wout], stride, pad);
        if let Some(bb) = b {
            let bd = self.value(bb).data();
            let hw = hout * wout;
            for i in 0..n {
                for ch in 0..cout {
                    let base = (i * cout + ch) * hw;
                    let bv = bd[ch];
                    for v in &mut out.data_mut()[base..base + hw] {
                        *v += bv;
                    }
                }
            }
        }
        let mut parents = vec![x, w];
        if let Some(bb) = b {
            parents.push(bb);
        }
        let has_bias = b.is_some();
        self.push(
            out,
            parents,
            Some(Box::new(move |gy, _, xs, needs| {
                let mut res = Vec::with_capacity(3);
                res.push(needs[0].then(|| conv_fwd(gy, xs[1], None, stride, pad)));
                res.push(needs[1].then(|| conv_bwd_weights(xs[0], gy, xs[1].shape(), stride, pad)));
                if has_bias {
                    res.push(needs[2].then(|| conv_bwd_bias(gy)));
                }
                res
            })),
            false,
        )
    }
}

fn dims4<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert_eq!(t.shape().len(), 4, "expected rank-4, got {:?}", t.shape());
    (t.dim(0), t.dim(1), t.dim(2), t.dim(3))
}

fn moments<T: Scalar>(sl: &[T], eps: T) -> (T, T) {
    let n = T::of(sl.len() as f64);
    let mu = sl.iter().fold(T::zero(), |a, &v| a + v) / n;
    let var = sl.iter().fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / n;
    (mu, T::one() / (var + eps).sqrt())
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(x))` that stays finite for very positive and very negative
/// inputs: `max(x, 0) + log1p(exp(-|x|))`.
pub(crate) fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn conv_out(i: usize, k: usize, s: usize, p: usize) -> usize {
    assert!(i + 2 * p >= k, "conv: kernel {} larger than padded input {}", k, i + 2 * p);
    (i + 2 * p - k) / s + 1
}

/// Valid output positions for kernel offset `koff`: those with
/// `0 <= o * s + koff - p < in_dim`.
fn valid_out_range(koff: usize, p: usize, s: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    let lo = if koff >= p { 0 } else { (p - koff).div_ceil(s) };
    let hi = if in_dim + p > koff {
        ((in_dim + p - koff - 1) / s + 1).min(out_dim)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unrolls `x[n, cin, h, w]` into `col[cin*k*k, n*ho*wo]` so convolution
/// becomes one matrix multiply for the whole batch.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let (n, cin, h, w) = dims4(x);
    let cols = n * ho * wo;
    let mut col = vec![T::zero(); cin * k * k * cols];
    let src = x.data();
    for i in 0..n {
        for ci in 0..cin {
            let x_base = (i * cin + ci) * h * w;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(ky, p, s, h, ho);
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let (ox_lo, ox_hi) = valid_out_range(kx, p, s, w, wo);
                    let row = &mut col[r * cols..(r + 1) * cols];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let q0 = (i * ho + oy) * wo;
                        let src_row = &src[x_base + iy * w..x_base + (iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            row[q0 + ox] = src_row[ox * s + kx - p];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add inverse of [`im2col`]: folds `col` back into image layout.
fn col2im<T: Scalar>(
    col: &[T],
    out: &mut Tensor<T>,
    k: usize,
    s: usize,
    p: usize,
    ho: usize,
    wo: usize,
) {
    let (n, cin, h, w) = dims4(out);
    let cols = n * ho * wo;
    let dst = out.data_mut();
    for i in 0..n {
        for ci in 0..cin {
            let x_base = (i * cin + ci) * h * w;
            for ky in 0..k {
                let (oy_lo, oy_hi) = valid_out_range(ky, p, s, h, ho);
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let (ox_lo, ox_hi) = valid_out_range(kx, p, s, w, wo);
                    let row = &col[r * cols..(r + 1) * cols];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ky - p;
                        let q0 = (i * ho + oy) * wo;
                        let dst_row = &mut dst[x_base + iy * w..x_base + (iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * s + kx - p] += row[q0 + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `[n, cout, ho, wo] -> [cout, n*ho*wo]` (and back when `reverse`).
fn flat_by_channel<T: Scalar>(y: &Tensor<T>) -> Vec<T> {
    let (n, c, h, w) = dims4(y);
    let hw = h * w;
    let mut flat = vec![T::zero(); y.numel()];
    for co in 0..c {
        for i in 0..n {
            flat[(co * n + i) * hw..(co * n + i + 1) * hw]
                .copy_from_slice(&y.data()[(i * c + co) * hw..(i * c + co) * hw + hw]);
        }
    }
    flat
}

fn conv_fwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<Vec<T>>,
    s: usize,
    p: usize,
) -> Tensor<T> {
    let (n, cin, h, win) = dims4(x);
    let (cout, wcin, k, k2) = dims4(w);
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(cin, wcin, "conv in-channels: input {} weight {}", cin, wcin);
    let ho = conv_out(h, k, s, p);
    let wo = conv_out(win, k, s, p);
    let cols = n * ho * wo;
    let col = im2col(x, k, s, p, ho, wo);
    let mut flat = vec![T::zero(); cout * cols];
    gemm(cout, cin * k * k, cols, T::one(), w.data(), false, &col, false, T::zero(), &mut flat);
    let mut out = Tensor::zeros(&[n, cout, ho, wo]);
    let hw = ho * wo;
    for i in 0..n {
        for co in 0..cout {
            let dst = &mut out.data_mut()[(i * cout + co) * hw..(i * cout + co + 1) * hw];
            dst.copy_from_slice(&flat[(co * n + i) * hw..(co * n + i + 1) * hw]);
            if let Some(b) = &bias {
                let bv = b[co];
                for v in dst.iter_mut() {
                    *v += bv;
                }
            }
        }
    }
    out
}

fn conv_bwd_data<T: Scalar>(
    gy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    s: usize,
    p: usize,
) -> Tensor<T> {
    let (_, cout, ho, wo) = dims4(gy);
    let (wcout, cin, k, _) = dims4(w);
    assert_eq!(cout, wcout);
    let n = x_shape[0];
    let cols = n * ho * wo;
    let gy_flat = flat_by_channel(gy);
    let mut dcol = vec![T::zero(); cin * k * k * cols];
    gemm(cin * k * k, cout, cols, T::one(), w.data(), true, &gy_flat, false, T::zero(), &mut dcol);
    let mut gx = Tensor::zeros(x_shape);
    col2im(&dcol, &mut gx, k, s, p, ho, wo);
    gx
}

fn conv_bwd_weights<T: Scalar>(
    gy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    s: usize,
    p: usize,
) -> Tensor<T> {
    let (n, cout, ho, wo) = dims4(gy);
    let cin = w_shape[1];
    let k = w_shape[2];
    assert_eq!(w_shape[0], cout);
    assert_eq!(x.dim(0), n);
    let cols = n * ho * wo;
    let col = im2col(x, k, s, p, ho, wo);
    let gy_flat = flat_by_channel(gy);
    let mut gw = Tensor::zeros(w_shape);
    gemm(cout, cols, cin * k * k, T::one(), &gy_flat, false, &col, true, T::zero(), gw.data_mut());
    gw
}

fn conv_bwd_bias<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let (n, cout, ho, wo) = dims4(gy);
    let hw = ho * wo;
    let mut gb = Tensor::zeros(&[cout]);
    for i in 0..n {
        for co in 0..cout {
            let s = gy.data()[(i * cout + co) * hw..(i * cout + co + 1) * hw]
                .iter()
                .fold(T::zero(), |a, &v| a + v);
            gb.data_mut()[co] += s;
        }
    }
    gb
}
