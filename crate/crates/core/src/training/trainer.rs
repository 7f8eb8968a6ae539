use serde::{Deserialize, Serialize};

use crate::backbone::Model;
use crate::clock::Clock;
use crate::peft::AdapterSet;
use crate::tensor::{Matrix, Rng, Scalar};

use super::{
    backward, dlogits, evaluate, forward_example, AdamW, AdamWConfig, Example, GradMode, Grads,
    LrSchedule, TaskDataset, TrainError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_fraction: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Steps between dev evaluations; `None` uses `max(10, steps_per_epoch / 5)`.
    pub eval_every: Option<usize>,
    pub patience: usize,
    pub seed: u64,
    pub adamw: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup_fraction: 0.06,
            batch_size: 16,
            max_epochs: 10,
            eval_every: None,
            patience: 10,
            seed: 0,
            adamw: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1");
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be at least 1");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }

    pub fn eval_interval(&self, n_train: usize) -> usize {
        self.eval_every
            .unwrap_or_else(|| (self.steps_per_epoch(n_train) / 5).max(10))
    }
}

/// One dev evaluation, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub lr: f64,
    /// Mean batch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_accuracy: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

impl HistoryRecord {
    pub fn to_jsonl(records: &[HistoryRecord]) -> String {
        records
            .iter()
            .map(|r| serde_json::to_string(r).expect("history serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    /// Parameters at the best dev evaluation.
    pub trained: S,
    pub history: Vec<HistoryRecord>,
    pub best_step: usize,
    pub best_dev_loss: f64,
    /// Dev loss before the first update.
    pub initial_dev_loss: f64,
    pub steps_run: usize,
    pub stopped_early: bool,
}

/// Mean target loss over `batch` and its gradients.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    adapter: &AdapterSet<T>,
    batch: &[Example],
    mode: GradMode,
) -> Result<(f64, Grads<T>), TrainError> {
    let tokens: usize = batch.iter().map(|e| e.target.len()).sum();
    if tokens == 0 {
        return Err(TrainError::EmptyTargets);
    }
    let weight = 1.0 / tokens as f64;
    let mut grads = Grads::zeros(model, adapter, mode);
    let mut loss = 0.0;
    for ex in batch {
        let f = forward_example(model, adapter, ex, true)?;
        loss += f.loss_sum;
        let d = dlogits(&f.output.logits, ex, weight);
        backward(model, adapter, &f.output, &d, &mut grads)?;
    }
    Ok((loss * weight, grads))
}

/// What the optimizer updates.
trait Target<T: Scalar>: Clone {
    fn model(&self) -> &Model<T>;
    fn adapter(&self) -> &AdapterSet<T>;
    fn mode(&self) -> GradMode;
    fn blocks(&self) -> Vec<(usize, bool)>;
    fn step(&mut self, opt: &mut AdamW, grads: &Grads<T>, lr: f64);
}

#[derive(Clone)]
struct AdapterTarget<'a, T> {
    model: &'a Model<T>,
    adapter: AdapterSet<T>,
}

impl<T: Scalar> Target<T> for AdapterTarget<'_, T> {
    fn model(&self) -> &Model<T> {
        self.model
    }
    fn adapter(&self) -> &AdapterSet<T> {
        &self.adapter
    }
    fn mode(&self) -> GradMode {
        GradMode::Adapter
    }
    fn blocks(&self) -> Vec<(usize, bool)> {
        self.adapter
            .blocks()
            .iter()
            .map(|b| (b.value.len(), !(b.name.ends_with("b_up") || b.name.contains(".ia3."))))
            .collect()
    }
    fn step(&mut self, opt: &mut AdamW, grads: &Grads<T>, lr: f64) {
        let g = grads.adapter.blocks();
        let refs: Vec<&Matrix<T>> = g.iter().map(|b| b.value).collect();
        opt.step(self.adapter.blocks_mut(), &refs, lr);
    }
}

#[derive(Clone)]
struct BackboneTarget<T> {
    model: Model<T>,
    none: AdapterSet<T>,
}

impl<T: Scalar> Target<T> for BackboneTarget<T> {
    fn model(&self) -> &Model<T> {
        &self.model
    }
    fn adapter(&self) -> &AdapterSet<T> {
        &self.none
    }
    fn mode(&self) -> GradMode {
        GradMode::Full
    }
    fn blocks(&self) -> Vec<(usize, bool)> {
        self.model
            .weights()
            .named()
            .iter()
            .map(|(n, m)| (m.len(), !n.contains("norm")))
            .collect()
    }
    fn step(&mut self, opt: &mut AdamW, grads: &Grads<T>, lr: f64) {
        let g = grads.backbone.as_ref().expect("full mode");
        let gn = g.named();
        let refs: Vec<&Matrix<T>> = gn.iter().map(|(_, m)| *m).collect();
        let params = self.model.weights_mut().named_mut().into_iter().map(|(_, m)| m).collect();
        opt.step(params, &refs, lr);
    }
}

fn run<T: Scalar, G: Target<T>>(
    mut target: G,
    data: &TaskDataset,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainOutcome<G>, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() || data.dev.is_empty() {
        return Err(TrainError::InvalidConfig("train and dev splits must be non-empty".into()));
    }
    let spe = cfg.steps_per_epoch(data.train.len());
    let total = spe * cfg.max_epochs;
    let eval_every = cfg.eval_interval(data.train.len());
    let schedule = LrSchedule::new(cfg.lr, cfg.warmup_fraction, total);
    let mut opt = AdamW::new(cfg.adamw, &target.blocks());
    let rng = Rng::new(cfg.seed).fork(0x5eed);
    let start = clock.now();

    let initial = evaluate(target.model(), target.adapter(), &data.dev)?.loss;
    let mut best = (initial, 0usize, target.clone());
    let mut history = Vec::new();
    let mut bad_evals = 0;
    let (mut run_loss, mut run_batches) = (0.0, 0usize);
    let mut step = 0;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        rng.fork(epoch as u64).shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let lr = schedule.at(step);
            let (loss, grads) = batch_gradients(target.model(), target.adapter(), &batch, target.mode())?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence { step, loss });
            }
            target.step(&mut opt, &grads, lr);
            run_loss += loss;
            run_batches += 1;
            step += 1;

            if step % eval_every == 0 || step == total {
                let dev = evaluate(target.model(), target.adapter(), &data.dev)?;
                if !dev.loss.is_finite() {
                    return Err(TrainError::Divergence { step, loss: dev.loss });
                }
                history.push(HistoryRecord {
                    step,
                    lr,
                    train_loss: run_loss / run_batches as f64,
                    dev_loss: dev.loss,
                    dev_accuracy: dev.accuracy,
                    wall_time: (clock.now() - start).as_secs_f64(),
                });
                (run_loss, run_batches) = (0.0, 0);
                if dev.loss < best.0 {
                    best = (dev.loss, step, target.clone());
                    bad_evals = 0;
                } else {
                    bad_evals += 1;
                    if bad_evals >= cfg.patience {
                        stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
    }
    Ok(TrainOutcome {
        trained: best.2,
        history,
        best_step: best.1,
        best_dev_loss: best.0,
        initial_dev_loss: initial,
        steps_run: step,
        stopped_early,
    })
}

fn map_outcome<A, B>(o: TrainOutcome<A>, f: impl FnOnce(A) -> B) -> TrainOutcome<B> {
    TrainOutcome {
        trained: f(o.trained),
        history: o.history,
        best_step: o.best_step,
        best_dev_loss: o.best_dev_loss,
        initial_dev_loss: o.initial_dev_loss,
        steps_run: o.steps_run,
        stopped_early: o.stopped_early,
    }
}

/// Trains `adapter` on `data` against the frozen `model` and returns the
/// best-dev checkpoint.
pub fn train<T: Scalar>(
    model: &Model<T>,
    adapter: AdapterSet<T>,
    data: &TaskDataset,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainOutcome<AdapterSet<T>>, TrainError> {
    adapter.check_compatible(model.config())?;
    let out = run(AdapterTarget { model, adapter }, data, cfg, clock)?;
    Ok(map_outcome(out, |t| t.adapter))
}

/// Full training of every backbone weight, used once to give adapters a
/// meaningful frozen base.
pub fn pretrain_backbone<T: Scalar>(
    model: Model<T>,
    data: &TaskDataset,
    cfg: &TrainConfig,
    clock: &dyn Clock,
) -> Result<TrainOutcome<Model<T>>, TrainError> {
    let none = AdapterSet::none(model.config());
    let out = run(BackboneTarget { model, none }, data, cfg, clock)?;
    Ok(map_outcome(out, |t| t.model))
}
