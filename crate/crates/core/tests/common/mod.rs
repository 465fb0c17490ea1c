//! Independent oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tampkit::nn::{batch_gradients, loss, NfcModel, SparseInput, Trace, DEFAULT_POS_WEIGHTS};
use tampkit::oracle::GRASP_DEPTH;
use tampkit::planner::Lit;
use tampkit::render::DepthObservation;
use tampkit::world::{Scene, CONTACT_EPS};

// ---- gradients ----

pub const FD_EPS: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-3;

pub type Batch<T> = Vec<(SparseInput<T>, [bool; 5])>;

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Batch<f32> {
    (0..n)
        .map(|_| {
            let mut obs = DepthObservation::zeros();
            for ch in 0..2 {
                for _ in 0..rng.gen_range(1..4) {
                    let (r0, c0) = (rng.gen_range(0..90), rng.gen_range(0..90));
                    let (h, w) = (rng.gen_range(3..25), rng.gen_range(3..25));
                    let v: f32 = rng.gen_range(0.02..0.3);
                    for r in r0..(r0 + h).min(100) {
                        for c in c0..(c0 + w).min(100) {
                            obs.channels[ch * 10_000 + r * 100 + c] = v;
                        }
                    }
                }
            }
            obs.feature = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(0.05..0.6)];
            let label = [(); 5].map(|_| rng.gen_bool(0.4));
            (SparseInput::from_observation(&obs).unwrap(), label)
        })
        .collect()
}

/// Mean loss and the branch signatures of every sample.
fn shadow_loss(model: &NfcModel<f64>, batch: &Batch<f64>, w: &[f64; 5]) -> (f64, Vec<u64>) {
    let mut t = Trace::new();
    let mut sig = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for (x, y) in batch {
        total += loss(&model.forward_sparse(x, &mut t), y, w);
        sig.push(t.activation_signature());
    }
    (total / batch.len() as f64, sig)
}

/// Index of a random parameter, picking the tensor first so that the small
/// convolution layers get checked as often as the large dense ones.
pub fn random_param(model: &NfcModel<f32>, rng: &mut ChaCha8Rng) -> usize {
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
    let k = rng.gen_range(0..sizes.len());
    sizes[..k].iter().sum::<usize>() + rng.gen_range(0..sizes[k])
}

/// A model with nonzero biases, a random batch and the analytic gradients.
pub fn gradient_setup(round: u64, rng: &mut ChaCha8Rng) -> (NfcModel<f32>, Batch<f32>, NfcModel<f32>) {
    let mut model = NfcModel::<f32>::init(100 + round);
    // Nonzero biases so the empty background is not sitting on a ReLU kink.
    for t in model.tensors_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v = rng.gen_range(0.01..0.1);
            }
        }
    }
    let batch = random_batch(rng, 4);
    let mut grads = NfcModel::zeros();
    let mut trace = Trace::new();
    batch_gradients(&model, &batch, &DEFAULT_POS_WEIGHTS, &mut grads, &mut trace);
    (model, batch, grads)
}

/// Central difference at `eps`, or None when the perturbation moves some
/// sample across a ReLU or max-pool branch, where the loss is not smooth
/// and a finite difference says nothing about the derivative.
pub fn central_difference(shadow: &NfcModel<f64>, batch: &Batch<f64>, i: usize, eps: f64) -> Option<f64> {
    let w = DEFAULT_POS_WEIGHTS.map(|v| v as f64);
    let (_, base) = shadow_loss(shadow, batch, &w);
    let mut plus = shadow.clone();
    *plus.param_mut(i) += eps;
    let mut minus = shadow.clone();
    *minus.param_mut(i) -= eps;
    let (lp, sp) = shadow_loss(&plus, batch, &w);
    let (lm, sm) = shadow_loss(&minus, batch, &w);
    (sp == base && sm == base).then(|| (lp - lm) / (2.0 * eps))
}

pub fn gradient_close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale <= FD_REL_TOL
}

/// `params` random parameters on each of `rounds` random batches.
pub fn finite_difference_check(rounds: u64, params: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for round in 0..rounds {
        let (model, batch, grads) = gradient_setup(round, &mut rng);
        let shadow = model.cast::<f64>();
        let batch64: Batch<f64> = batch.iter().map(|(x, y)| (x.cast(), *y)).collect();
        let (mut checked, mut draws) = (0, 0);
        while checked < params {
            draws += 1;
            if draws >= 50 * params {
                return Err("too many draws landed on kinks".into());
            }
            let i = random_param(&model, &mut rng);
            if let Some(numeric) = central_difference(&shadow, &batch64, i, FD_EPS) {
                let analytic = grads.param(i) as f64;
                if !gradient_close(analytic, numeric) {
                    return Err(format!("round {round} param {i}: analytic {analytic:e} numeric {numeric:e}"));
                }
                checked += 1;
            }
        }
    }
    Ok(())
}

// ---- oracle ----

/// Overlap depth of two closed intervals.
fn depth(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.1.min(b.1) - a.0.max(b.0)
}

/// PZ feasibility of a lone body, derived by hand: the face center must be
/// in the reach shell, and the fingers must not cut into the table. The
/// finger tips reach `GRASP_DEPTH` below the top face on both sides of
/// the closing axis, which is the shorter horizontal one (ties go to x).
pub fn lone_pz(scene: &Scene) -> bool {
    let b = &scene.bodies[0];
    let r = &scene.regions[0];
    let g = &scene.gripper;
    let (h, c) = (b.half_extents, b.center);
    let face = (c.x, c.y, c.z + h.z);
    let rs = &scene.reach;
    let reach = (face.0 - rs.shoulder.x).hypot(face.1 - rs.shoulder.y).hypot(face.2 - rs.shoulder.z);
    let reachable = reach >= rs.r_min && reach <= rs.r_max && face.2 >= rs.z_min && face.2 <= rs.z_max;

    let below_top = r.center.z - (face.2 - GRASP_DEPTH) > CONTACT_EPS;
    let along_x = h.x <= h.y;
    let (bc, bw, hc) = if along_x { (c.x, c.y, h.x) } else { (c.y, c.x, h.y) };
    let (rc, rw, rhc, rhw) = if along_x {
        (r.center.x, r.center.y, r.half_x, r.half_y)
    } else {
        (r.center.y, r.center.x, r.half_y, r.half_x)
    };
    let inner = hc + g.finger_clearance;
    let outer = inner + 2.0 * g.finger_half.x;
    let across = depth((bw - g.finger_half.y, bw + g.finger_half.y), (rw - rhw, rw + rhw)) > CONTACT_EPS;
    let table = (rc - rhc, rc + rhc);
    let plus = depth((bc + inner, bc + outer), table) > CONTACT_EPS;
    let minus = depth((bc - outer, bc - inner), table) > CONTACT_EPS;
    reachable && !(below_top && across && (plus || minus))
}

// ---- satisfiability ----

/// Clause as (positive mask, negative mask) over bit `v - 1`.
pub fn masks(c: &[Lit]) -> (u32, u32) {
    let mut pos = 0;
    let mut neg = 0;
    for &l in c {
        let bit = 1u32 << (l.unsigned_abs() - 1);
        if l > 0 {
            pos |= bit;
        } else {
            neg |= bit;
        }
    }
    (pos, neg)
}

pub fn satisfies(a: u32, cnf: &[(u32, u32)]) -> bool {
    cnf.iter().all(|&(p, n)| a & p != 0 || !a & n != 0)
}

/// Every model, ordered the way the solver walks them: variable 1 first,
/// `true` before `false`.
pub fn truth_table(n: usize, cnf: &[(u32, u32)]) -> Vec<u32> {
    let mut out: Vec<u32> = (0..1u32 << n).filter(|&a| satisfies(a, cnf)).collect();
    let key = |a: &u32| (0..n).map(|v| a >> v & 1 == 0).collect::<Vec<bool>>();
    out.sort_by_key(key);
    out
}

pub fn bits(model: &[bool]) -> u32 {
    model[1..].iter().enumerate().map(|(i, &b)| u32::from(b) << i).sum()
}
