use super::NfcModel;

/// Bias-corrected Adam over every model parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub t: u32,
    m: NfcModel<f32>,
    v: NfcModel<f32>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: NfcModel::zeros(),
            v: NfcModel::zeros(),
        }
    }

    pub fn step(&mut self, params: &mut NfcModel<f32>, grads: &NfcModel<f32>) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr / c1;
        let c2_sqrt = c2.sqrt();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / ((*v).sqrt() / c2_sqrt + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = NfcModel::<f32>::init(1);
        let before = p.clone();
        let mut g = NfcModel::<f32>::zeros();
        for (k, v) in g.dense[4].w.data_mut().iter_mut().enumerate() {
            *v = if k % 2 == 0 { 0.3 } else { -2.0 };
        }
        let mut opt = Adam::new(0.001);
        opt.step(&mut p, &g);
        assert_eq!(opt.t, 1);
        for (a, b) in p.dense[4].w.data().iter().zip(before.dense[4].w.data()) {
            assert!(((a - b).abs() - 0.001).abs() < 1e-6);
        }
        // Zero gradients leave everything else put.
        assert_eq!(p.dense[0], before.dense[0]);
        assert_eq!(p.conv1, before.conv1);
    }

    #[test]
    fn zero_gradient_forever() {
        let mut p = NfcModel::<f32>::init(2);
        let before = p.clone();
        let g = NfcModel::<f32>::zeros();
        let mut opt = Adam::new(0.01);
        for _ in 0..10 {
            opt.step(&mut p, &g);
        }
        assert_eq!(p, before);
    }
}
