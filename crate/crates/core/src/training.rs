//! Regularized empirical risk minimization with ADAM, prediction, and the
//! held-out hyperparameter search.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{accuracy, hamming_decomposition};
use crate::conjugate::{conjugate, SolverConfig};
use crate::data::{split, MultilabelDataset};
use crate::error::{Error, Result};
use crate::losses::{evaluate, loss_grad_finite_difference, loss_value, LossKind};
use crate::models::{Model, ModelSpec};
use crate::numerics::{logspace, seeded_rng, Matrix, Vector};
use crate::regularizers::Regularizer;

/// How the loss gradient in `v` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRoute {
    /// Envelope theorem at the computed argmax.
    #[default]
    Envelope,
    /// Central differences of the loss value, re-solving the argmax per probe.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of `(λ/2)‖θ‖²`.
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    pub gradient: GradientRoute,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-4,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 200,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            solver: SolverConfig::loose(),
            gradient: GradientRoute::Envelope,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            bad.push("lambda must be finite and ≥ 0");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            bad.push("learning_rate must be finite and > 0");
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be ≥ 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bad.push("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            bad.push("epsilon must be > 0");
        }
        if !bad.is_empty() {
            return Err(Error::contract(bad.join("; ")));
        }
        self.solver.validate()
    }
}

/// What is trained: architecture, regularizer and loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub spec: ModelSpec,
    pub reg: Regularizer,
    pub loss: LossKind,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.reg.dim() != self.spec.output_dim {
            return Err(Error::contract("regularizer dimension differs from the number of labels"));
        }
        if !self.reg.domain().is_within_unit_box() {
            return Err(Error::contract("multilabel training needs an output set inside [0, 1]^k"));
        }
        Ok(())
    }

    /// Regularizer used at prediction time.
    pub fn inference_regularizer(&self) -> Regularizer {
        self.loss.inference_regularizer(&self.reg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches (before each update).
    pub loss: f64,
    pub dev_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub model: Model,
    pub wall_time_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

fn check_data(data: &MultilabelDataset, task: &Task) -> Result<()> {
    if data.is_empty() {
        return Err(Error::contract("dataset is empty"));
    }
    if data.n_features() != task.spec.input_dim || data.n_labels() != task.spec.output_dim {
        return Err(Error::contract(format!(
            "dataset is {}×{} (features×labels), model expects {}×{}",
            data.n_features(),
            data.n_labels(),
            task.spec.input_dim,
            task.spec.output_dim
        )));
    }
    Ok(())
}

/// Loss and parameter gradient for one sample.
pub fn sample_gradient(
    model: &Model,
    task: &Task,
    x: &Vector,
    y: &Vector,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let energy = model.energy();
    let v = model.forward(x)?;
    let (value, grad_v) = match cfg.gradient {
        GradientRoute::Envelope => {
            let l = evaluate(task.loss, &energy, &task.reg, &v, y, &cfg.solver)?;
            (l.value, l.grad_v)
        }
        GradientRoute::FiniteDifference => {
            let value = loss_value(task.loss, &energy, &task.reg, &v, y, &cfg.solver)?;
            (value, loss_grad_finite_difference(task.loss, &energy, &task.reg, &v, y, &cfg.solver)?)
        }
    };
    Ok((value, model.vjp(x, &grad_v)?))
}

/// Mean loss and gradient over `rows`, reduced in row order.
fn batch_gradient(
    model: &Model,
    task: &Task,
    data: &MultilabelDataset,
    rows: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, Vec<f64>)> {
    let per_item: Vec<Result<(f64, Vec<f64>)>> =
        rows.par_iter().map(|&i| sample_gradient(model, task, &data.features(i), &data.labels(i), cfg)).collect();
    let mut total = 0.0;
    let mut grad = vec![0.0; model.theta.len()];
    for (&i, item) in rows.iter().zip(per_item) {
        let (value, g) = match item {
            Ok(r) => r,
            Err(e) if e.is_numerical() => return Err(Error::NonFiniteLoss { epoch, sample: i }),
            Err(e) => return Err(e),
        };
        if !value.is_finite() || !g.iter().all(|z| z.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch, sample: i });
        }
        total += value;
        for (acc, z) in grad.iter_mut().zip(&g) {
            *acc += z;
        }
    }
    let n = rows.len() as f64;
    grad.iter_mut().for_each(|z| *z /= n);
    Ok((total / n, grad))
}

/// `(1/n) Σ L(g_θ(x_i), y_i) + (λ/2)‖θ‖²` and its gradient.
pub fn objective(model: &Model, task: &Task, data: &MultilabelDataset, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    check_data(data, task)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let (loss, mut grad) = batch_gradient(model, task, data, &rows, cfg, 0)?;
    let reg: f64 = 0.5 * cfg.lambda * model.theta.iter().map(|t| t * t).sum::<f64>();
    for (g, t) in grad.iter_mut().zip(&model.theta) {
        *g += cfg.lambda * t;
    }
    Ok((loss + reg, grad))
}

/// ADAM state.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains from a seeded initialization.
pub fn train(
    data: &MultilabelDataset,
    dev: Option<&MultilabelDataset>,
    task: &Task,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let model = Model::init(task.spec.clone(), cfg.seed)?;
    train_from(model, data, dev, task, cfg, |_, _| {})
}

/// Trains from the given parameters. `observe` is called after every update
/// with the global step index and the current model.
pub fn train_from<F>(
    mut model: Model,
    data: &MultilabelDataset,
    dev: Option<&MultilabelDataset>,
    task: &Task,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Model),
{
    let started = Instant::now();
    task.validate()?;
    cfg.validate()?;
    check_data(data, task)?;
    if model.spec != task.spec {
        return Err(Error::contract("model architecture differs from the task"));
    }
    if let Some(dev) = dev {
        check_data(dev, task)?;
    }
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed_5eed);
    let mut adam = Adam::new(model.theta.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let (loss, mut grad) = batch_gradient(&model, task, data, rows, cfg, epoch)?;
            for (g, t) in grad.iter_mut().zip(&model.theta) {
                *g += cfg.lambda * t;
            }
            adam.step(&mut model.theta, &grad, cfg);
            if !model.theta.iter().all(|t| t.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, sample: rows[0] });
            }
            epoch_loss += loss * rows.len() as f64;
            observe(step, &model);
            step += 1;
        }
        let dev_accuracy = match dev {
            Some(d) => Some(evaluate_accuracy(&model, task, d, &cfg.solver)?),
            None => None,
        };
        records.push(EpochRecord { epoch, loss: epoch_loss / data.len() as f64, dev_accuracy });
    }
    Ok(TrainReport { epochs: records, model, wall_time_secs: started.elapsed().as_secs_f64() })
}

/// Soft prediction `p^Φ_Ω(g_θ(x))` with the task's inference regularizer.
pub fn predict_marginals(model: &Model, task: &Task, x: &Vector, solver: &SolverConfig) -> Result<Vector> {
    let v = model.forward(x)?;
    Ok(conjugate(&model.energy(), &task.inference_regularizer(), &v, solver)?.argmax)
}

/// Hamming-calibrated hard predictions for every row.
pub fn predict(model: &Model, task: &Task, data: &MultilabelDataset, solver: &SolverConfig) -> Result<Matrix> {
    let decomp = hamming_decomposition(task.spec.output_dim)?;
    let rows: Vec<Result<Vector>> = (0..data.len())
        .into_par_iter()
        .map(|i| Ok(decomp.decode(&predict_marginals(model, task, &data.features(i), solver)?)))
        .collect();
    let mut out = Matrix::zeros(data.len(), task.spec.output_dim);
    for (i, row) in rows.into_iter().enumerate() {
        out.set_row(i, &row?.transpose());
    }
    Ok(out)
}

pub fn evaluate_accuracy(model: &Model, task: &Task, data: &MultilabelDataset, solver: &SolverConfig) -> Result<f64> {
    check_data(data, task)?;
    accuracy(&predict(model, task, data, solver)?, &data.y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub lambdas: Vec<f64>,
    pub learning_rates: Vec<f64>,
}

impl Default for SearchGrid {
    /// Five `λ` in `[1e-4, 1e1]` and ten learning rates in `[1e-5, 1e-1]`, log-spaced.
    fn default() -> Self {
        SearchGrid { lambdas: logspace(1e-4, 1e1, 5), learning_rates: logspace(1e-5, 1e-1, 10) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub lambda: f64,
    pub learning_rate: f64,
    /// Dev accuracy per seed; `None` where training diverged.
    pub dev_accuracy: Vec<Option<f64>>,
}

impl SearchCell {
    /// Mean dev accuracy, `None` if any seed diverged.
    pub fn score(&self) -> Option<f64> {
        let accs: Option<Vec<f64>> = self.dev_accuracy.iter().copied().collect();
        accs.filter(|a| !a.is_empty()).map(|a| a.iter().sum::<f64>() / a.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub cells: Vec<SearchCell>,
    pub best: usize,
    /// One refit on the full training set per seed.
    pub refits: Vec<TrainReport>,
}

impl SearchReport {
    pub fn best_cell(&self) -> &SearchCell {
        &self.cells[self.best]
    }
}

/// Index of the best-scoring cell. Ties go to the smaller `λ`, then the
/// smaller learning rate.
pub fn select_best(cells: &[SearchCell]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in cells.iter().enumerate() {
        let Some(s) = c.score() else { continue };
        let better = match best {
            None => true,
            Some((j, bs)) => {
                let b = &cells[j];
                s > bs
                    || (s == bs && (c.lambda < b.lambda || (c.lambda == b.lambda && c.learning_rate < b.learning_rate)))
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Trains every grid cell on a `1 − holdout` split for each seed, selects by
/// mean dev accuracy, then refits the winner on all of `data` per seed.
pub fn hyperparam_search(
    data: &MultilabelDataset,
    task: &Task,
    grid: &SearchGrid,
    base: &TrainConfig,
    seeds: &[u64],
    holdout: f64,
    split_seed: u64,
) -> Result<SearchReport> {
    if grid.lambdas.is_empty() || grid.learning_rates.is_empty() || seeds.is_empty() {
        return Err(Error::contract("search grid and seed list must be nonempty"));
    }
    let parts = split(data, &[1.0 - holdout, holdout], split_seed)?;
    let (fit, dev) = (&parts[0], &parts[1]);
    let settings: Vec<(f64, f64)> =
        grid.lambdas.iter().flat_map(|&l| grid.learning_rates.iter().map(move |&r| (l, r))).collect();
    let cells: Vec<Result<SearchCell>> = settings
        .par_iter()
        .map(|&(lambda, learning_rate)| {
            let mut dev_accuracy = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let cfg = TrainConfig { lambda, learning_rate, seed, ..base.clone() };
                let acc = match train(fit, None, task, &cfg) {
                    Ok(r) => Some(evaluate_accuracy(&r.model, task, dev, &cfg.solver)?),
                    Err(e) if e.is_numerical() => None,
                    Err(e) => return Err(e),
                };
                dev_accuracy.push(acc);
            }
            Ok(SearchCell { lambda, learning_rate, dev_accuracy })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>>>()?;
    let best = select_best(&cells)
        .ok_or_else(|| Error::AllCellsDiverged(format!("{} cells × {} seeds", cells.len(), seeds.len())))?;
    let refits = seeds
        .iter()
        .map(|&seed| {
            let cfg = TrainConfig {
                lambda: cells[best].lambda,
                learning_rate: cells[best].learning_rate,
                seed,
                ..base.clone()
            };
            train(data, None, task, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchReport { cells, best, refits })
}
