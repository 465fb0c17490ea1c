use super::{Real, OUTPUTS};

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the loss.
pub const PROB_CLIP: f64 = 1e-7;

/// Weighted binary cross-entropy of one sample, averaged over directions.
/// The weight multiplies the positive (feasible) term.
pub fn loss<T: Real>(probs: &[T; OUTPUTS], labels: &[bool; OUTPUTS], pos_weights: &[T; OUTPUTS]) -> T {
    let lo = T::from(PROB_CLIP).expect("clip");
    let hi = T::one() - lo;
    let mut total = T::zero();
    for k in 0..OUTPUTS {
        let p = probs[k].max(lo).min(hi);
        total += if labels[k] {
            -pos_weights[k] * p.ln()
        } else {
            -(T::one() - p).ln()
        };
    }
    total / T::from(OUTPUTS).expect("count")
}

/// Gradient of `loss / batch` w.r.t. the pre-sigmoid logits.
pub fn loss_grad<T: Real>(
    probs: &[T; OUTPUTS],
    labels: &[bool; OUTPUTS],
    pos_weights: &[T; OUTPUTS],
    batch: usize,
) -> [T; OUTPUTS] {
    let scale = T::one() / T::from(OUTPUTS * batch).expect("count");
    let mut g = [T::zero(); OUTPUTS];
    for k in 0..OUTPUTS {
        let p = probs[k];
        // d/dz of -(w y ln p + (1-y) ln(1-p)) with p = sigmoid(z).
        g[k] = if labels[k] {
            pos_weights[k] * (p - T::one())
        } else {
            p
        } * scale;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: [f64; 5] = [4.7, 5.0, 4.8, 4.6, 1.6];

    #[test]
    fn reference_values() {
        let half = [0.5; 5];
        assert!((loss(&half, &[false; 5], &W) - std::f64::consts::LN_2).abs() < 1e-12);
        let expect = std::f64::consts::LN_2 * W.iter().sum::<f64>() / 5.0;
        assert!((loss(&half, &[true; 5], &W) - expect).abs() < 1e-12);
        assert!((expect - 2.8697).abs() < 1e-3);
        let labels = [true, false, true, false, true];
        let exact = labels.map(|l| if l { 1.0 } else { 0.0 });
        assert!(loss(&exact, &labels, &W) < 1e-5);
    }

    #[test]
    fn unit_weights_give_plain_bce() {
        let p: [f64; 5] = [0.1, 0.4, 0.7, 0.9, 0.55];
        let y = [true, false, false, true, true];
        let plain: f64 = p
            .iter()
            .zip(&y)
            .map(|(&p, &y)| if y { -p.ln() } else { -(1.0 - p).ln() })
            .sum::<f64>()
            / 5.0;
        assert!((loss(&p, &y, &[1.0; 5]) - plain).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_logit_difference() {
        let z = [0.3f64, -1.2, 2.0, 0.0, -0.4];
        let y = [true, false, true, false, true];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let g = loss_grad(&z.map(sig), &y, &W, 1);
        for k in 0..5 {
            let eps = 1e-6;
            let (mut a, mut b) = (z, z);
            a[k] += eps;
            b[k] -= eps;
            let num = (loss(&a.map(sig), &y, &W) - loss(&b.map(sig), &y, &W)) / (2.0 * eps);
            assert!((num - g[k]).abs() < 1e-7, "{k}: {num} vs {}", g[k]);
        }
    }
}
