use rand::Rng;

use super::{NnError, Real, Tensor};
use crate::render::{CompactObservation, DepthObservation, CHANNEL_LEN, IMAGE_SIZE};
use crate::world::stream_rng;

pub const INPUT_CHANNELS: usize = 2;
pub const CONV1_FILTERS: usize = 4;
pub const CONV2_FILTERS: usize = 8;
pub const KERNEL: usize = 3;
pub const CONV1_OUT: usize = IMAGE_SIZE - KERNEL + 1;
pub const POOL1_OUT: usize = CONV1_OUT / 2;
pub const CONV2_OUT: usize = POOL1_OUT - KERNEL + 1;
pub const POOL2_OUT: usize = CONV2_OUT / 2;
pub const FLAT_LEN: usize = CONV2_FILTERS * POOL2_OUT * POOL2_OUT;
pub const FEATURE_LEN: usize = 3;
pub const HIDDEN: usize = 50;
pub const HIDDEN_LAYERS: usize = 4;
pub const OUTPUTS: usize = 5;

pub(crate) const K2: usize = KERNEL * KERNEL;
pub(crate) const C1_AREA: usize = CONV1_OUT * CONV1_OUT;
pub(crate) const P1_AREA: usize = POOL1_OUT * POOL1_OUT;
pub(crate) const C2_AREA: usize = CONV2_OUT * CONV2_OUT;
pub(crate) const P2_AREA: usize = POOL2_OUT * POOL2_OUT;

/// 3x3 valid convolution; weights `[cout, cin, 3, 3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// Fully connected layer; weights `[nout, nin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T = f32> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Conv<T> {
    fn zeros(cout: usize, cin: usize) -> Self {
        Conv {
            w: Tensor::zeros(&[cout, cin, KERNEL, KERNEL]),
            b: Tensor::zeros(&[cout]),
        }
    }
}

impl<T: Real> Dense<T> {
    fn zeros(nout: usize, nin: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[nout, nin]),
            b: Tensor::zeros(&[nout]),
        }
    }

    pub fn nin(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn nout(&self) -> usize {
        self.w.shape()[0]
    }
}

/// conv(2->4) -> pool -> conv(4->8) -> pool -> flatten ++ feature ->
/// 4 x dense(50, ReLU) -> dense(5, sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct NfcModel<T = f32> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    /// fc1..fc4 then the output layer.
    pub dense: Vec<Dense<T>>,
}

/// Nonzero input pixels plus the feature vector. Height maps are mostly
/// empty, so the first convolution scatters from these alone.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseInput<T = f32> {
    /// (channel, row, col, value)
    pub pixels: Vec<(u8, u8, u8, T)>,
    pub feature: [T; FEATURE_LEN],
}

impl<T: Real> SparseInput<T> {
    pub fn from_observation(obs: &DepthObservation) -> Result<Self, NnError> {
        if obs.channels.len() != INPUT_CHANNELS * CHANNEL_LEN {
            return Err(NnError::ShapeMismatch(format!(
                "observation has {} values, expected {}",
                obs.channels.len(),
                INPUT_CHANNELS * CHANNEL_LEN
            )));
        }
        let mut pixels = Vec::new();
        for (i, &v) in obs.channels.iter().enumerate() {
            if v != 0.0 {
                let (ch, p) = (i / CHANNEL_LEN, i % CHANNEL_LEN);
                pixels.push((ch as u8, (p / IMAGE_SIZE) as u8, (p % IMAGE_SIZE) as u8, cast(v)));
            }
        }
        Ok(SparseInput {
            pixels,
            feature: obs.feature.map(cast),
        })
    }

    pub fn from_compact(obs: &CompactObservation) -> Self {
        let mut pixels = Vec::new();
        for (ch, runs) in obs.runs.iter().enumerate() {
            for r in runs {
                let v = cast(r.value);
                for p in r.start as usize..(r.start + r.len) as usize {
                    pixels.push((ch as u8, (p / IMAGE_SIZE) as u8, (p % IMAGE_SIZE) as u8, v));
                }
            }
        }
        SparseInput {
            pixels,
            feature: obs.feature.map(cast),
        }
    }

    pub fn cast<U: Real>(&self) -> SparseInput<U> {
        SparseInput {
            pixels: self.pixels.iter().map(|&(c, r, k, v)| (c, r, k, cast(v))).collect(),
            feature: self.feature.map(cast),
        }
    }
}

fn cast<A: Real, B: Real>(v: A) -> B {
    B::from(v).expect("finite conversion between float types")
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace<T = f32> {
    z1: Vec<T>,
    /// Pooled ReLU outputs and the flat index of each window's maximum.
    p1: Vec<T>,
    arg1: Vec<u32>,
    z2: Vec<T>,
    arg2: Vec<u32>,
    /// Input of each dense layer; `h[0]` is the flattened maps plus feature.
    h: Vec<Vec<T>>,
    pub logits: [T; OUTPUTS],
    pub probs: [T; OUTPUTS],
    // Backward scratch.
    dp1: Vec<T>,
    dz1: Vec<T>,
    dh: Vec<T>,
}

impl<T: Real> Default for Trace<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Trace<T> {
    pub fn new() -> Self {
        let mut h = vec![vec![T::zero(); FLAT_LEN + FEATURE_LEN]];
        h.extend((0..HIDDEN_LAYERS).map(|_| vec![T::zero(); HIDDEN]));
        Trace {
            z1: vec![T::zero(); CONV1_FILTERS * C1_AREA],
            p1: vec![T::zero(); CONV1_FILTERS * P1_AREA],
            arg1: vec![0; CONV1_FILTERS * P1_AREA],
            z2: vec![T::zero(); CONV2_FILTERS * C2_AREA],
            arg2: vec![0; CONV2_FILTERS * P2_AREA],
            h,
            logits: [T::zero(); OUTPUTS],
            probs: [T::zero(); OUTPUTS],
            dp1: vec![T::zero(); CONV1_FILTERS * P1_AREA],
            dz1: vec![T::zero(); CONV1_FILTERS * C1_AREA],
            dh: vec![T::zero(); FLAT_LEN + FEATURE_LEN],
        }
    }
}

impl<T: Real> Trace<T> {
    /// Hash of every piecewise-linear branch taken in the last forward pass:
    /// which pool inputs won and which ReLUs were active. Two passes with the
    /// same signature lie on the same smooth piece of the network.
    pub fn activation_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        for (&a, &p) in self.arg1.iter().zip(&self.p1) {
            mix(((a as u64) << 1) | (p > T::zero()) as u64);
        }
        for (&a, &p) in self.arg2.iter().zip(&self.h[0]) {
            mix(((a as u64) << 1) | (p > T::zero()) as u64);
        }
        for layer in &self.h[1..] {
            for &v in layer {
                mix((v > T::zero()) as u64);
            }
        }
        h
    }
}

/// Dot product with eight independent accumulators.
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for k in 0..chunks {
        let (x, y) = (&a[8 * k..8 * k + 8], &b[8 * k..8 * k + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = T::zero();
    for i in 8 * chunks..n {
        s += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + s
}

fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn sigmoid<T: Real>(z: T) -> T {
    let one = T::one();
    let p = if z >= T::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    };
    // Keep outputs strictly inside the open interval even when saturated.
    p.max(T::min_positive_value()).min(one - T::epsilon())
}

/// 2x2 stride-2 max pool of `relu(z)`; odd trailing rows/cols are dropped.
fn pool_relu<T: Real>(z: &[T], channels: usize, n_in: usize, out: &mut [T], arg: &mut [u32]) {
    let n_out = n_in / 2;
    for c in 0..channels {
        let base = c * n_in * n_in;
        for i in 0..n_out {
            for j in 0..n_out {
                let r0 = base + 2 * i * n_in + 2 * j;
                let cand = [r0, r0 + 1, r0 + n_in, r0 + n_in + 1];
                let mut best = cand[0];
                for &k in &cand[1..] {
                    if z[k] > z[best] {
                        best = k;
                    }
                }
                let o = c * n_out * n_out + i * n_out + j;
                out[o] = z[best].max(T::zero());
                arg[o] = best as u32;
            }
        }
    }
}

impl<T: Real> NfcModel<T> {
    pub fn zeros() -> Self {
        let mut dense = vec![Dense::zeros(HIDDEN, FLAT_LEN + FEATURE_LEN)];
        dense.extend((1..HIDDEN_LAYERS).map(|_| Dense::zeros(HIDDEN, HIDDEN)));
        dense.push(Dense::zeros(OUTPUTS, HIDDEN));
        NfcModel {
            conv1: Conv::zeros(CONV1_FILTERS, INPUT_CHANNELS),
            conv2: Conv::zeros(CONV2_FILTERS, CONV1_FILTERS),
            dense,
        }
    }

    /// Weights uniform in +-sqrt(6 / fan_in), biases zero.
    pub fn init(seed: u64) -> Self {
        let mut m = Self::zeros();
        let mut rng = stream_rng(seed, 0x4E4643);
        let mut fill = |w: &mut Tensor<T>, fan_in: usize| {
            let a = (6.0 / fan_in as f64).sqrt();
            for v in w.data_mut() {
                *v = cast::<f64, T>(rng.gen_range(-a..a));
            }
        };
        fill(&mut m.conv1.w, INPUT_CHANNELS * K2);
        fill(&mut m.conv2.w, CONV1_FILTERS * K2);
        for d in &mut m.dense {
            let fan_in = d.nin();
            fill(&mut d.w, fan_in);
        }
        m
    }

    pub fn cast<U: Real>(&self) -> NfcModel<U> {
        let conv = |c: &Conv<T>| Conv {
            w: c.w.map(cast),
            b: c.b.map(cast),
        };
        NfcModel {
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    w: d.w.map(cast),
                    b: d.b.map(cast),
                })
                .collect(),
        }
    }

    /// Every parameter tensor in a fixed order: conv1 w, b, conv2 w, b,
    /// then w, b of each dense layer.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.conv1.w, &self.conv1.b, &self.conv2.w, &self.conv2.b];
        for d in &self.dense {
            out.push(&d.w);
            out.push(&d.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.conv1.w,
            &mut self.conv1.b,
            &mut self.conv2.w,
            &mut self.conv2.b,
        ];
        for d in &mut self.dense {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter `i` in the order of [`NfcModel::tensors`].
    pub fn param(&self, mut i: usize) -> T {
        for t in self.tensors() {
            if i < t.len() {
                return t.data()[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param_mut(&mut self, mut i: usize) -> &mut T {
        for t in self.tensors_mut() {
            if i < t.len() {
                return &mut t.data_mut()[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().fill(T::zero());
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn forward(&self, obs: &DepthObservation) -> Result<[T; OUTPUTS], NnError> {
        let input = SparseInput::from_observation(obs)?;
        let mut trace = Trace::new();
        Ok(self.forward_sparse(&input, &mut trace))
    }

    /// Forward pass recording activations into `trace`.
    pub fn forward_sparse(&self, input: &SparseInput<T>, trace: &mut Trace<T>) -> [T; OUTPUTS] {
        // conv1: scatter each nonzero pixel into the outputs it touches.
        let w1 = self.conv1.w.data();
        let b1 = self.conv1.b.data();
        for o in 0..CONV1_FILTERS {
            trace.z1[o * C1_AREA..(o + 1) * C1_AREA].fill(b1[o]);
        }
        for &(c, y, x, v) in &input.pixels {
            let (c, y, x) = (c as usize, y as usize, x as usize);
            for di in 0..KERNEL {
                if y < di || y - di >= CONV1_OUT {
                    continue;
                }
                let i = y - di;
                for dj in 0..KERNEL {
                    if x < dj || x - dj >= CONV1_OUT {
                        continue;
                    }
                    let at = i * CONV1_OUT + (x - dj);
                    for o in 0..CONV1_FILTERS {
                        trace.z1[o * C1_AREA + at] += w1[(o * INPUT_CHANNELS + c) * K2 + di * KERNEL + dj] * v;
                    }
                }
            }
        }
        pool_relu(&trace.z1, CONV1_FILTERS, CONV1_OUT, &mut trace.p1, &mut trace.arg1);

        // conv2: dense row axpy.
        let w2 = self.conv2.w.data();
        let b2 = self.conv2.b.data();
        for o in 0..CONV2_FILTERS {
            let out = &mut trace.z2[o * C2_AREA..(o + 1) * C2_AREA];
            out.fill(b2[o]);
            for c in 0..CONV1_FILTERS {
                let inp = &trace.p1[c * P1_AREA..(c + 1) * P1_AREA];
                for di in 0..KERNEL {
                    for dj in 0..KERNEL {
                        let w = w2[(o * CONV1_FILTERS + c) * K2 + di * KERNEL + dj];
                        for i in 0..CONV2_OUT {
                            let src = &inp[(i + di) * POOL1_OUT + dj..(i + di) * POOL1_OUT + dj + CONV2_OUT];
                            axpy(w, src, &mut out[i * CONV2_OUT..(i + 1) * CONV2_OUT]);
                        }
                    }
                }
            }
        }
        {
            let h0 = &mut trace.h[0];
            pool_relu(&trace.z2, CONV2_FILTERS, CONV2_OUT, &mut h0[..FLAT_LEN], &mut trace.arg2);
            h0[FLAT_LEN..].copy_from_slice(&input.feature);
        }

        let last = self.dense.len() - 1;
        for (l, d) in self.dense.iter().enumerate() {
            let (nin, nout) = (d.nin(), d.nout());
            let (w, b) = (d.w.data(), d.b.data());
            if l < last {
                let (head, tail) = trace.h.split_at_mut(l + 1);
                let x = &head[l];
                let y = &mut tail[0];
                for o in 0..nout {
                    y[o] = (dot(&w[o * nin..(o + 1) * nin], x) + b[o]).max(T::zero());
                }
            } else {
                let x = &trace.h[l];
                for o in 0..nout {
                    let z = dot(&w[o * nin..(o + 1) * nin], x) + b[o];
                    trace.logits[o] = z;
                    trace.probs[o] = sigmoid(z);
                }
            }
        }
        trace.probs
    }

    /// Accumulates parameter gradients of the pass recorded in `trace`
    /// into `grads`, given the gradient of the loss w.r.t. the logits.
    pub fn backward(&self, input: &SparseInput<T>, trace: &mut Trace<T>, dlogits: &[T; OUTPUTS], grads: &mut NfcModel<T>) {
        let mut g: Vec<T> = dlogits.to_vec();
        for l in (0..self.dense.len()).rev() {
            let d = &self.dense[l];
            let gd = &mut grads.dense[l];
            let (nin, nout) = (d.nin(), d.nout());
            let x = &trace.h[l];
            {
                let gb = gd.b.data_mut();
                for o in 0..nout {
                    gb[o] += g[o];
                }
            }
            let gw = gd.w.data_mut();
            for o in 0..nout {
                if g[o] != T::zero() {
                    axpy(g[o], x, &mut gw[o * nin..(o + 1) * nin]);
                }
            }
            let dh = &mut trace.dh[..nin];
            dh.fill(T::zero());
            let w = d.w.data();
            for o in 0..nout {
                if g[o] != T::zero() {
                    axpy(g[o], &w[o * nin..(o + 1) * nin], dh);
                }
            }
            if l > 0 {
                // ReLU gate of the previous layer's output.
                g = dh.iter().zip(x).map(|(&v, &a)| if a > T::zero() { v } else { T::zero() }).collect();
            }
        }

        // trace.dh[..FLAT_LEN] now holds the gradient w.r.t. pool2 output.
        let p2 = &trace.h[0];
        let w2 = self.conv2.w.data();
        trace.dp1.fill(T::zero());
        {
            let gw2 = grads.conv2.w.data_mut();
            let gb2 = grads.conv2.b.data_mut();
            for k in 0..FLAT_LEN {
                let gk = trace.dh[k];
                if p2[k] <= T::zero() || gk == T::zero() {
                    continue;
                }
                let idx = trace.arg2[k] as usize;
                let (o, pos) = (idx / C2_AREA, idx % C2_AREA);
                let (i, j) = (pos / CONV2_OUT, pos % CONV2_OUT);
                gb2[o] += gk;
                for c in 0..CONV1_FILTERS {
                    let inp = &trace.p1[c * P1_AREA..];
                    let dinp = &mut trace.dp1[c * P1_AREA..];
                    let wb = (o * CONV1_FILTERS + c) * K2;
                    for di in 0..KERNEL {
                        let row = (i + di) * POOL1_OUT + j;
                        for dj in 0..KERNEL {
                            gw2[wb + di * KERNEL + dj] += gk * inp[row + dj];
                            dinp[row + dj] += gk * w2[wb + di * KERNEL + dj];
                        }
                    }
                }
            }
        }

        // Route through pool1 into a sparse set of conv1 outputs.
        let gb1 = grads.conv1.b.data_mut();
        let mut touched = false;
        for k in 0..CONV1_FILTERS * P1_AREA {
            let gk = trace.dp1[k];
            if trace.p1[k] <= T::zero() || gk == T::zero() {
                continue;
            }
            let idx = trace.arg1[k] as usize;
            trace.dz1[idx] += gk;
            gb1[idx / C1_AREA] += gk;
            touched = true;
        }
        if !touched {
            return;
        }
        let gw1 = grads.conv1.w.data_mut();
        for &(c, y, x, v) in &input.pixels {
            let (c, y, x) = (c as usize, y as usize, x as usize);
            for di in 0..KERNEL {
                if y < di || y - di >= CONV1_OUT {
                    continue;
                }
                let i = y - di;
                for dj in 0..KERNEL {
                    if x < dj || x - dj >= CONV1_OUT {
                        continue;
                    }
                    let at = i * CONV1_OUT + (x - dj);
                    for o in 0..CONV1_FILTERS {
                        gw1[(o * INPUT_CHANNELS + c) * K2 + di * KERNEL + dj] += v * trace.dz1[o * C1_AREA + at];
                    }
                }
            }
        }
        // Clear only what was written.
        for k in 0..CONV1_FILTERS * P1_AREA {
            trace.dz1[trace.arg1[k] as usize] = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_shapes() {
        assert_eq!((CONV1_OUT, POOL1_OUT, CONV2_OUT, POOL2_OUT), (98, 49, 47, 23));
        assert_eq!(FLAT_LEN, 4232);
        let m = NfcModel::<f32>::zeros();
        assert_eq!(m.dense.len(), 5);
        assert_eq!(m.dense[0].nin(), 4235);
        assert_eq!(
            m.param_count(),
            72 + 4 + 288 + 8 + 4235 * 50 + 50 + 3 * (50 * 50 + 50) + 5 * 50 + 5
        );
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = NfcModel::<f32>::zeros();
        let mut obs = DepthObservation::zeros();
        obs.channels[123] = 0.3;
        obs.feature = [0.5, -0.2, 0.3];
        assert_eq!(m.forward(&obs).unwrap(), [0.5; 5]);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let m = NfcModel::<f32>::init(7);
        let mut obs = DepthObservation::zeros();
        for i in (0..obs.channels.len()).step_by(7) {
            obs.channels[i] = (i % 13) as f32 * 0.02;
        }
        obs.feature = [0.6, 0.1, 0.25];
        let a = m.forward(&obs).unwrap();
        assert_eq!(a, m.forward(&obs).unwrap());
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        let compact = CompactObservation::encode(&obs);
        let mut t = Trace::new();
        assert_eq!(m.forward_sparse(&SparseInput::from_compact(&compact), &mut t), a);

        let bad = DepthObservation {
            channels: vec![0.0; 10],
            feature: [0.0; 3],
        };
        assert!(matches!(m.forward(&bad), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn saturated_sigmoid_stays_open() {
        assert!(sigmoid(80.0f32) < 1.0);
        assert!(sigmoid(-200.0f32) > 0.0);
        assert_eq!(sigmoid(0.0f64), 0.5);
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }
}
