use rand::seq::SliceRandom;

use super::{loss, loss_grad, Adam, NfcModel, NnError, Real, SparseInput, Trace, OUTPUTS};
use crate::dataset::Sample;
use crate::world::stream_rng;

pub const DEFAULT_POS_WEIGHTS: [f32; 5] = [4.7, 5.0, 4.8, 4.6, 1.6];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub pos_weights: [f32; 5],
    pub epochs: usize,
    /// Feasibility threshold: predicted feasible iff p > threshold.
    pub threshold: f32,
    pub seed: u64,
    /// Share of the training data held back to pick the best epoch.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch: 32,
            pos_weights: DEFAULT_POS_WEIGHTS,
            epochs: 10,
            threshold: 0.5,
            seed: 0,
            val_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !self.pos_weights.iter().all(|&w| w > 0.0 && w.is_finite()) {
            return bad("weights must be positive");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NfcModel<f32>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights were kept; 0 when no epoch ran.
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_accuracy\n");
        for r in &self.history {
            out += &format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_accuracy);
        }
        out
    }
}

/// Mean loss over `batch` and its parameter gradients (written to `grads`,
/// which is zeroed first).
pub fn batch_gradients<T: Real>(
    model: &NfcModel<T>,
    batch: &[(SparseInput<T>, [bool; OUTPUTS])],
    pos_weights: &[T; OUTPUTS],
    grads: &mut NfcModel<T>,
    trace: &mut Trace<T>,
) -> T {
    grads.fill_zero();
    let mut total = T::zero();
    for (x, y) in batch {
        let p = model.forward_sparse(x, trace);
        total += loss(&p, y, pos_weights);
        let g = loss_grad(&p, y, pos_weights, batch.len());
        model.backward(x, trace, &g, grads);
    }
    total / T::from(batch.len()).expect("count")
}

fn input_of(s: &Sample) -> (SparseInput<f32>, [bool; OUTPUTS]) {
    (SparseInput::from_compact(&s.observation), s.label.0)
}

fn accuracy(model: &NfcModel<f32>, samples: &[Sample], threshold: f32, trace: &mut Trace<f32>) -> f64 {
    let mut right = 0usize;
    for s in samples {
        let p = model.forward_sparse(&SparseInput::from_compact(&s.observation), trace);
        right += (0..OUTPUTS).filter(|&k| (p[k] > threshold) == s.label.0[k]).count();
    }
    right as f64 / (OUTPUTS * samples.len()).max(1) as f64
}

/// Trains on `data`, holding out `config.val_fraction` of it for choosing
/// the best epoch.
pub fn train(data: &[Sample], config: &TrainConfig) -> Result<TrainOutcome, NnError> {
    train_observed(data, config, &mut |_| {})
}

pub fn train_observed(
    data: &[Sample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, NnError> {
    config.check()?;
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut stream_rng(config.seed, 0x56414C));
    let n_val = ((data.len() as f64 * config.val_fraction).round() as usize).clamp(1, data.len() - 1);
    let val: Vec<Sample> = order[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train: Vec<Sample> = order[n_val..].iter().map(|&i| data[i].clone()).collect();
    train_with_validation(&train, &val, config, on_epoch)
}

pub fn train_with_validation(
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, NnError> {
    config.check()?;
    if train.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    if train.len() < 2 * config.batch {
        return Err(NnError::DatasetTooSmall {
            n: train.len(),
            need: 2 * config.batch,
        });
    }
    let mut model = NfcModel::<f32>::init(config.seed);
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut opt = Adam::new(config.lr);
    let mut grads = NfcModel::<f32>::zeros();
    let mut trace = Trace::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, epoch as u64));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<_> = chunk.iter().map(|&i| input_of(&train[i])).collect();
            let l = batch_gradients(&model, &batch, &config.pos_weights, &mut grads, &mut trace);
            opt.step(&mut model, &grads);
            loss_sum += l as f64;
            batches += 1;
        }
        let val_accuracy = if val.is_empty() {
            accuracy(&model, train, config.threshold, &mut trace)
        } else {
            accuracy(&model, val, config.threshold, &mut trace)
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        };
        on_epoch(&rec);
        if val_accuracy > best_acc {
            best_acc = val_accuracy;
            best = model.clone();
            best_epoch = epoch;
        }
        history.push(rec);
    }
    if config.epochs == 0 {
        best = model;
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
    })
}

/// Confusion counts for one direction, "feasible" being positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub true_feasible: u64,
    pub false_feasible: u64,
    pub true_infeasible: u64,
    pub false_infeasible: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.true_feasible + self.false_feasible + self.true_infeasible + self.false_infeasible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub false_feasible_rate: f64,
    pub false_infeasible_rate: f64,
    pub per_direction: [Confusion; 5],
}

impl EvalReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "# tampkit eval v1\ndirection,true_feasible,false_feasible,true_infeasible,false_infeasible\n",
        );
        for (d, c) in crate::world::GraspDirection::ALL.iter().zip(&self.per_direction) {
            out += &format!(
                "{},{},{},{},{}\n",
                d, c.true_feasible, c.false_feasible, c.true_infeasible, c.false_infeasible
            );
        }
        out += &format!(
            "all,accuracy={:.6},false_feasible={:.6},false_infeasible={:.6}\n",
            self.accuracy, self.false_feasible_rate, self.false_infeasible_rate
        );
        out
    }
}

pub fn evaluate(model: &NfcModel<f32>, samples: &[Sample], threshold: f32) -> Result<EvalReport, NnError> {
    let mut trace = Trace::new();
    evaluate_with(samples, threshold, |s| {
        model.forward_sparse(&SparseInput::from_compact(&s.observation), &mut trace)
    })
}

/// Scores any predictor; prediction feasible iff p > threshold.
pub fn evaluate_with(
    samples: &[Sample],
    threshold: f32,
    mut predict: impl FnMut(&Sample) -> [f32; OUTPUTS],
) -> Result<EvalReport, NnError> {
    if samples.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut per = [Confusion::default(); 5];
    for s in samples {
        let p = predict(s);
        for k in 0..OUTPUTS {
            let c = &mut per[k];
            match (p[k] > threshold, s.label.0[k]) {
                (true, true) => c.true_feasible += 1,
                (true, false) => c.false_feasible += 1,
                (false, false) => c.true_infeasible += 1,
                (false, true) => c.false_infeasible += 1,
            }
        }
    }
    let total = (OUTPUTS * samples.len()) as f64;
    let sum = |f: fn(&Confusion) -> u64| per.iter().map(f).sum::<u64>() as f64 / total;
    Ok(EvalReport {
        n_samples: samples.len(),
        accuracy: sum(|c| c.true_feasible + c.true_infeasible),
        false_feasible_rate: sum(|c| c.false_feasible),
        false_infeasible_rate: sum(|c| c.false_infeasible),
        per_direction: per,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FeasibilityLabel;
    use crate::render::{CompactObservation, DepthObservation};

    fn sample(seed: usize, bits: u8) -> Sample {
        let mut obs = DepthObservation::zeros();
        for r in 40..60 {
            for c in (30 + seed)..(50 + seed) {
                obs.channels[r * 100 + c] = 0.05 + 0.01 * seed as f32;
            }
        }
        obs.feature = [0.5, 0.1 * seed as f32, 0.2];
        Sample {
            observation: CompactObservation::encode(&obs),
            label: FeasibilityLabel::from_bits(bits),
        }
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let data: Vec<Sample> = (0..10).map(|i| sample(i, (i as u8 * 7) % 32)).collect();
        let r = evaluate_with(&data, 0.5, |s| s.label.0.map(|f| if f { 1.0 } else { 0.0 })).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.false_feasible_rate + r.false_infeasible_rate, 0.0);

        let r = evaluate_with(&data, 0.5, |_| [0.5; 5]).unwrap();
        let feasible = crate::dataset::stats(&data).unwrap().overall_feasible_rate;
        assert!((r.false_infeasible_rate - feasible).abs() < 1e-12);
        assert_eq!(r.false_feasible_rate, 0.0);
        assert!((r.accuracy + r.false_feasible_rate + r.false_infeasible_rate - 1.0).abs() < 1e-12);
        assert!(r.per_direction.iter().all(|c| c.total() == 10));
        assert!(evaluate_with(&[], 0.5, |_| [0.5; 5]).is_err());
    }

    #[test]
    fn zero_epochs_returns_init() {
        let data: Vec<Sample> = (0..80).map(|i| sample(i % 10, 1)).collect();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let out = train(&data, &cfg).unwrap();
        assert_eq!(out.model, NfcModel::init(9));
        assert!(out.history.is_empty());
        assert!(matches!(train(&data[..10], &cfg), Err(NnError::DatasetTooSmall { .. })));
        assert!(matches!(train(&[], &cfg), Err(NnError::EmptyDataset)));
    }

    #[test]
    fn memorizes_one_sample() {
        let s = sample(3, 0b10110);
        let batch: Vec<_> = (0..100).map(|_| input_of(&s)).collect();
        let mut model = NfcModel::<f32>::init(1);
        let mut grads = NfcModel::zeros();
        let mut trace = Trace::new();
        let mut opt = Adam::new(0.001);
        let mut last = f32::INFINITY;
        for _ in 0..200 {
            last = batch_gradients(&model, &batch[..32], &DEFAULT_POS_WEIGHTS, &mut grads, &mut trace);
            if last < 0.01 {
                break;
            }
            opt.step(&mut model, &grads);
        }
        assert!(last < 0.01, "loss stayed at {last}");
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let a = input_of(&sample(1, 0b00011));
        let b = input_of(&sample(2, 0b10000));
        let model = NfcModel::<f64>::init(4);
        let cast = |x: &(SparseInput<f32>, [bool; 5])| (x.0.cast::<f64>(), x.1);
        let one = vec![cast(&a), cast(&b)];
        let two = vec![cast(&a), cast(&b), cast(&a), cast(&b)];
        let (mut g1, mut g2) = (NfcModel::zeros(), NfcModel::zeros());
        let mut t = Trace::new();
        let w = DEFAULT_POS_WEIGHTS.map(|v| v as f64);
        let l1 = batch_gradients(&model, &one, &w, &mut g1, &mut t);
        let l2 = batch_gradients(&model, &two, &w, &mut g2, &mut t);
        assert!((l1 - l2).abs() < 1e-12);
        for i in (0..g1.param_count()).step_by(97) {
            assert!((g1.param(i) - g2.param(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_kills_conv_gradients() {
        let mut obs = DepthObservation::zeros();
        obs.feature = [0.0; 3];
        let x = (SparseInput::<f32>::from_observation(&obs).unwrap(), [false; 5]);
        let model = NfcModel::<f32>::zeros();
        let mut g = NfcModel::zeros();
        let mut t = Trace::new();
        batch_gradients(&model, &[x], &[1.0; 5], &mut g, &mut t);
        assert!(g.conv1.w.data().iter().chain(g.conv2.w.data()).all(|&v| v == 0.0));
        // sigmoid(0) / 5 on every output bias.
        assert!(g.dense[4].b.data().iter().all(|&v| (v - 0.1).abs() < 1e-7));
    }
}
