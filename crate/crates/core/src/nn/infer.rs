//! Inference that skips the background.
//!
//! Away from any nonzero pixel every activation equals a per-channel
//! constant fixed by the biases. The predictor computes those constants
//! once, evaluates the second convolution only where its receptive field
//! touches the foreground, and folds the background's contribution to the
//! first dense layer into a precomputed bias.

use std::cell::RefCell;

use super::model::{dot, sigmoid, C1_AREA, C2_AREA, K2, KERNEL, P1_AREA, P2_AREA};
use super::{
    NfcModel, SparseInput, CONV1_FILTERS, CONV1_OUT, CONV2_FILTERS, CONV2_OUT, FEATURE_LEN, FLAT_LEN, HIDDEN, INPUT_CHANNELS, OUTPUTS, POOL1_OUT,
    POOL2_OUT,
};

#[derive(Debug, Clone)]
pub struct Predictor {
    model: NfcModel<f32>,
    /// Background value of each pooled first-layer map.
    bg1: [f32; CONV1_FILTERS],
    /// Background value of each second-layer pre-activation.
    bg_z2: [f32; CONV2_FILTERS],
    /// First dense layer evaluated on an all-background input, bias included.
    base: Vec<f32>,
    /// First dense layer weights, column-major: `[FLAT_LEN + FEATURE_LEN][HIDDEN]`.
    w_cols: Vec<f32>,
}

struct Scratch {
    z1: Vec<f32>,
    p1: Vec<f32>,
    dirty1: Vec<bool>,
    dirty_p1: Vec<bool>,
    dirty2: Vec<bool>,
    z2: Vec<f32>,
    h: Vec<f32>,
    next: Vec<f32>,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch {
        z1: vec![0.0; CONV1_FILTERS * C1_AREA],
        p1: vec![0.0; CONV1_FILTERS * P1_AREA],
        dirty1: vec![false; C1_AREA],
        dirty_p1: vec![false; P1_AREA],
        dirty2: vec![false; C2_AREA],
        z2: vec![0.0; CONV2_FILTERS * C2_AREA],
        h: vec![0.0; HIDDEN],
        next: vec![0.0; HIDDEN],
    });
}

impl Predictor {
    pub fn new(model: NfcModel<f32>) -> Self {
        let b1 = model.conv1.b.data();
        let mut bg1 = [0.0f32; CONV1_FILTERS];
        for (k, v) in bg1.iter_mut().enumerate() {
            *v = b1[k].max(0.0);
        }
        // Same accumulation order as the dense pass.
        let (w2, b2) = (model.conv2.w.data(), model.conv2.b.data());
        let mut bg_z2 = [0.0f32; CONV2_FILTERS];
        for o in 0..CONV2_FILTERS {
            let mut z = b2[o];
            for c in 0..CONV1_FILTERS {
                for t in 0..K2 {
                    z += w2[(o * CONV1_FILTERS + c) * K2 + t] * bg1[c];
                }
            }
            bg_z2[o] = z;
        }
        let fc1 = &model.dense[0];
        let nin = fc1.nin();
        let (w, b) = (fc1.w.data(), fc1.b.data());
        let mut w_cols = vec![0.0f32; nin * HIDDEN];
        for o in 0..HIDDEN {
            for j in 0..nin {
                w_cols[j * HIDDEN + o] = w[o * nin + j];
            }
        }
        let mut bg_flat = vec![0.0f32; FLAT_LEN];
        for o in 0..CONV2_FILTERS {
            bg_flat[o * P2_AREA..(o + 1) * P2_AREA].fill(bg_z2[o].max(0.0));
        }
        let base = (0..HIDDEN)
            .map(|o| dot(&w[o * nin..o * nin + FLAT_LEN], &bg_flat) + b[o])
            .collect();
        Predictor {
            model,
            bg1,
            bg_z2,
            base,
            w_cols,
        }
    }

    pub fn model(&self) -> &NfcModel<f32> {
        &self.model
    }

    pub fn predict_sparse(&self, input: &SparseInput<f32>) -> [f32; OUTPUTS] {
        SCRATCH.with(|s| self.run(input, &mut s.borrow_mut()))
    }

    fn run(&self, input: &SparseInput<f32>, s: &mut Scratch) -> [f32; OUTPUTS] {
        let m = &self.model;
        let (w1, b1) = (m.conv1.w.data(), m.conv1.b.data());
        for o in 0..CONV1_FILTERS {
            s.z1[o * C1_AREA..(o + 1) * C1_AREA].fill(b1[o]);
            s.p1[o * P1_AREA..(o + 1) * P1_AREA].fill(self.bg1[o]);
        }
        s.dirty1.fill(false);
        for &(c, y, x, v) in &input.pixels {
            let (c, y, x) = (c as usize, y as usize, x as usize);
            debug_assert!(c < INPUT_CHANNELS);
            for di in 0..KERNEL {
                if y < di || y - di >= CONV1_OUT {
                    continue;
                }
                for dj in 0..KERNEL {
                    if x < dj || x - dj >= CONV1_OUT {
                        continue;
                    }
                    let at = (y - di) * CONV1_OUT + (x - dj);
                    s.dirty1[at] = true;
                    for o in 0..CONV1_FILTERS {
                        s.z1[o * C1_AREA + at] += w1[(o * INPUT_CHANNELS + c) * K2 + di * KERNEL + dj] * v;
                    }
                }
            }
        }

        // Pool the touched cells; the rest keep their background value.
        s.dirty_p1.fill(false);
        for i in 0..POOL1_OUT {
            for j in 0..POOL1_OUT {
                let r0 = 2 * i * CONV1_OUT + 2 * j;
                let cells = [r0, r0 + 1, r0 + CONV1_OUT, r0 + CONV1_OUT + 1];
                if !cells.iter().any(|&k| s.dirty1[k]) {
                    continue;
                }
                s.dirty_p1[i * POOL1_OUT + j] = true;
                for c in 0..CONV1_FILTERS {
                    let z = &s.z1[c * C1_AREA..];
                    let mut best = z[cells[0]];
                    for &k in &cells[1..] {
                        if z[k] > best {
                            best = z[k];
                        }
                    }
                    s.p1[c * P1_AREA + i * POOL1_OUT + j] = best.max(0.0);
                }
            }
        }

        s.dirty2.fill(false);
        for p in 0..POOL1_OUT {
            for q in 0..POOL1_OUT {
                if !s.dirty_p1[p * POOL1_OUT + q] {
                    continue;
                }
                for i in p.saturating_sub(KERNEL - 1)..=p.min(CONV2_OUT - 1) {
                    for j in q.saturating_sub(KERNEL - 1)..=q.min(CONV2_OUT - 1) {
                        s.dirty2[i * CONV2_OUT + j] = true;
                    }
                }
            }
        }
        let (w2, b2) = (m.conv2.w.data(), m.conv2.b.data());
        for i in 0..CONV2_OUT {
            for j in 0..CONV2_OUT {
                if !s.dirty2[i * CONV2_OUT + j] {
                    continue;
                }
                for o in 0..CONV2_FILTERS {
                    let mut z = b2[o];
                    for c in 0..CONV1_FILTERS {
                        let inp = &s.p1[c * P1_AREA..];
                        let w = &w2[(o * CONV1_FILTERS + c) * K2..];
                        for di in 0..KERNEL {
                            let row = (i + di) * POOL1_OUT + j;
                            for dj in 0..KERNEL {
                                z += w[di * KERNEL + dj] * inp[row + dj];
                            }
                        }
                    }
                    s.z2[o * C2_AREA + i * CONV2_OUT + j] = z;
                }
            }
        }

        // First dense layer: background sum plus the foreground deltas.
        s.h.copy_from_slice(&self.base);
        let add_col = |h: &mut [f32], j: usize, delta: f32| {
            if delta != 0.0 {
                let col = &self.w_cols[j * HIDDEN..(j + 1) * HIDDEN];
                for (hv, &wv) in h.iter_mut().zip(col) {
                    *hv += delta * wv;
                }
            }
        };
        for i in 0..POOL2_OUT {
            for j in 0..POOL2_OUT {
                let r0 = 2 * i * CONV2_OUT + 2 * j;
                let cells = [r0, r0 + 1, r0 + CONV2_OUT, r0 + CONV2_OUT + 1];
                if !cells.iter().any(|&k| s.dirty2[k]) {
                    continue;
                }
                for o in 0..CONV2_FILTERS {
                    let z = |k: usize| {
                        if s.dirty2[k] {
                            s.z2[o * C2_AREA + k]
                        } else {
                            self.bg_z2[o]
                        }
                    };
                    let mut best = z(cells[0]);
                    for &k in &cells[1..] {
                        best = best.max(z(k));
                    }
                    let bg = self.bg_z2[o].max(0.0);
                    add_col(&mut s.h, o * P2_AREA + i * POOL2_OUT + j, best.max(0.0) - bg);
                }
            }
        }
        for k in 0..FEATURE_LEN {
            add_col(&mut s.h, FLAT_LEN + k, input.feature[k]);
        }
        for v in s.h.iter_mut() {
            *v = v.max(0.0);
        }

        let last = m.dense.len() - 1;
        let mut probs = [0.0f32; OUTPUTS];
        for (l, d) in m.dense.iter().enumerate().skip(1) {
            let (nin, w, b) = (d.nin(), d.w.data(), d.b.data());
            if l < last {
                for o in 0..d.nout() {
                    s.next[o] = (dot(&w[o * nin..(o + 1) * nin], &s.h) + b[o]).max(0.0);
                }
                std::mem::swap(&mut s.h, &mut s.next);
            } else {
                for (o, p) in probs.iter_mut().enumerate() {
                    *p = sigmoid(dot(&w[o * nin..(o + 1) * nin], &s.h) + b[o]);
                }
            }
        }
        probs
    }
}
