//! Mini-batch training over the risk objective.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, PolarGrid};
use crate::diffmath::Matrix;
use crate::network::{init, ArchSpec, Autoencoder, Net, NetError};
use crate::risks::{objective_gradient, total_objective, BatchStats, RiskError, RiskSpec};
use crate::rng::CounterRng;
use crate::table::{fmt_num, Table};

const STREAM_BATCHES: u64 = 0xba7c;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset has dimension {got}, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize, record: Box<RunRecord> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub risk: RiskSpec,
    pub arch: ArchSpec,
}

impl TrainConfig {
    pub fn new(arch: ArchSpec, risk: RiskSpec) -> Self {
        Self {
            optimizer: Optimizer::default(),
            iterations: 20_000,
            batch_size: 100,
            eval_every: 200,
            seed: 0,
            risk,
            arch,
        }
    }

    /// A learning rate of zero is accepted (it freezes the parameters).
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let lr = self.optimizer.lr();
        if !(lr >= 0.0 && lr.is_finite()) {
            return bad(format!("learning rate {lr}"));
        }
        if let Optimizer::Adam { beta1, beta2, eps, .. } = self.optimizer {
            if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                return bad(format!("adam parameters beta1={beta1}, beta2={beta2}, eps={eps}"));
            }
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        self.risk.validate().map_err(TrainError::from)
    }
}

struct OptimizerState {
    config: Optimizer,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl OptimizerState {
    fn new(config: Optimizer, n: usize) -> Self {
        let moments = matches!(config, Optimizer::Adam { .. });
        Self {
            config,
            first: if moments { vec![0.0; n] } else { Vec::new() },
            second: if moments { vec![0.0; n] } else { Vec::new() },
            steps: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps = self.steps.saturating_add(1);
        match self.config {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m = self.first[i] / c1;
                    let v = self.second[i] / c2;
                    params[i] -= lr * m / (v.sqrt() + eps);
                }
            }
        }
    }
}

/// Full-split evaluation after `iteration` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub iteration: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
    /// Unweighted penalty values on the training split.
    pub penalties: Vec<f64>,
    /// Weighted objective on the (uncorrupted) training split.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rows: Vec<EvalRow>,
    pub penalty_names: Vec<String>,
    /// Last parameters with a finite objective.
    pub net: Net,
    pub wall_clock: Duration,
}

/// Equality ignores wall-clock time.
impl PartialEq for RunRecord {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.penalty_names == other.penalty_names && self.net == other.net
    }
}

impl RunRecord {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["iteration", "train_rmse", "test_rmse"].map(String::from).to_vec();
        h.extend(self.penalty_names.iter().cloned());
        h.push("objective".into());
        h
    }

    pub fn to_table(&self, meta: serde_json::Value) -> Table {
        let mut t = Table::new(meta, self.header());
        for r in &self.rows {
            let mut row = vec![r.iteration.to_string(), fmt_num(r.train_rmse), fmt_num(r.test_rmse)];
            row.extend(r.penalties.iter().map(|&v| fmt_num(v)));
            row.push(fmt_num(r.objective));
            t.push_row(row);
        }
        t
    }

    pub fn last(&self) -> Option<&EvalRow> {
        self.rows.last()
    }
}

/// Column names for the penalties of `spec`, suffixed when a kind repeats.
pub fn penalty_columns(spec: &RiskSpec) -> Vec<String> {
    let names: Vec<&str> = spec.penalties.iter().map(|p| p.kind.name()).collect();
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            if names.iter().filter(|m| *m == n).count() > 1 {
                format!("{n}_{i}")
            } else {
                n.to_string()
            }
        })
        .collect()
}

fn check_dims<M: Autoencoder + ?Sized>(model: &M, data: &Dataset) -> Result<(), TrainError> {
    if data.dim() != model.input_dim() {
        return Err(TrainError::Dimension {
            expected: model.input_dim(),
            got: data.dim(),
        });
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(TrainError::Config("train and test splits must both be nonempty".into()));
    }
    Ok(())
}

/// Train/test statistics with penalty weights at `iteration`, without input
/// corruption.
pub fn evaluate_at<M: Autoencoder + ?Sized>(
    model: &M,
    data: &Dataset,
    risk: &RiskSpec,
    iteration: usize,
) -> Result<(BatchStats, BatchStats), TrainError> {
    check_dims(model, data)?;
    let clean = risk.clean();
    let (_, train) = total_objective(model, &data.train_points(), &clean, iteration)?;
    let (_, test) = total_objective(model, &data.test_points(), &clean, iteration)?;
    Ok((train, test))
}

/// [`evaluate_at`] with every schedule at its final weight.
pub fn evaluate<M: Autoencoder + ?Sized>(
    model: &M,
    data: &Dataset,
    risk: &RiskSpec,
) -> Result<(BatchStats, BatchStats), TrainError> {
    evaluate_at(model, data, risk, usize::MAX)
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let net = init(&config.arch, config.seed);
    train_from(config, data, net)
}

/// Trains starting from `net` instead of a fresh initialization.
pub fn train_from(config: &TrainConfig, data: &Dataset, mut net: Net) -> Result<RunRecord, TrainError> {
    config.validate()?;
    check_dims(&net, data)?;
    let started = Instant::now();
    let train_points = data.train_points();
    let n_train = train_points.cols();
    let batch_size = config.batch_size.min(n_train);
    let mut rng = CounterRng::new(config.seed).stream(STREAM_BATCHES);
    let mut order: Vec<usize> = (0..n_train).collect();
    rng.shuffle(&mut order);
    let mut cursor = 0;
    let mut opt = OptimizerState::new(config.optimizer, net.params().len());
    let mut record = RunRecord {
        rows: Vec::new(),
        penalty_names: penalty_columns(&config.risk),
        net: net.clone(),
        wall_clock: Duration::ZERO,
    };
    let mut params = net.params().to_vec();
    for it in 0..config.iterations {
        if cursor + batch_size > n_train {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let batch: Matrix = train_points.select_columns(&order[cursor..cursor + batch_size]);
        cursor += batch_size;
        let step = objective_gradient(&net, &batch, &config.risk, it);
        let grad = match step {
            Ok((stats, grad)) if stats.objective.is_finite() && grad.iter().all(|g| g.is_finite()) => grad,
            Ok(_) | Err(RiskError::Diff(crate::diffmath::DiffError::NonFinite { .. })) => {
                return Err(diverged(record, net, it, started));
            }
            Err(e) => return Err(e.into()),
        };
        opt.step(&mut params, &grad);
        if !params.iter().all(|p| p.is_finite()) {
            return Err(diverged(record, net, it, started));
        }
        net.params_mut().copy_from_slice(&params);
        let done = it + 1;
        if done % config.eval_every == 0 || done == config.iterations {
            let (tr, te) = match evaluate_at(&net, data, &config.risk, done) {
                Ok(s) => s,
                Err(TrainError::Risk(RiskError::Diff(_))) => return Err(diverged(record, net, done, started)),
                Err(e) => return Err(e),
            };
            if !(tr.objective.is_finite() && te.rmse.is_finite()) {
                return Err(diverged(record, net, done, started));
            }
            record.rows.push(EvalRow {
                iteration: done,
                train_rmse: tr.rmse,
                test_rmse: te.rmse,
                penalties: tr.penalties,
                objective: tr.objective,
            });
        }
    }
    record.net = net;
    record.wall_clock = started.elapsed();
    Ok(record)
}

fn diverged(mut record: RunRecord, last_good: Net, iteration: usize, started: Instant) -> TrainError {
    record.net = last_good;
    record.wall_clock = started.elapsed();
    TrainError::Diverged {
        iteration,
        record: Box::new(record),
    }
}

/// Replaces every polyline vertex by its reconstruction.
pub fn map_grid<M: Autoencoder + ?Sized>(model: &M, grid: &PolarGrid) -> Result<PolarGrid, NetError> {
    let mut err = None;
    let mapped = grid.map_lines(|line| match model.reconstruct_batch(line) {
        Ok(m) => m,
        Err(e) => {
            err.get_or_insert(e);
            line.clone()
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(mapped),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_fixture, gen_polar_grid, FixtureKind};
    use crate::network::{parse_arch, Activation, LatentRule};

    fn small_config(iterations: usize) -> TrainConfig {
        let arch = parse_arch("8-1-8", 2, LatentRule::Auto).unwrap();
        let mut c = TrainConfig::new(arch, RiskSpec::default());
        c.iterations = iterations;
        c.batch_size = 16;
        c.eval_every = 10;
        c
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let data = gen_fixture(FixtureKind::Line, 60, 0.01, 1).unwrap();
        let mut c = small_config(1);
        c.optimizer = Optimizer::Sgd { lr: 0.0 };
        let rec = train(&c, &data).unwrap();
        assert_eq!(rec.net, init(&c.arch, c.seed));
        assert_eq!(rec.rows.len(), 1);
        let (tr, _) = evaluate_at(&rec.net, &data, &c.risk, 1).unwrap();
        assert_eq!(rec.rows[0].train_rmse, tr.rmse);
    }

    #[test]
    fn eval_rows_at_multiples_and_end() {
        let data = gen_fixture(FixtureKind::Line, 60, 0.01, 1).unwrap();
        let rec = train(&small_config(25), &data).unwrap();
        let its: Vec<usize> = rec.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(its, vec![10, 20, 25]);
    }

    #[test]
    fn runs_are_reproducible() {
        let data = gen_fixture(FixtureKind::Circle, 80, 0.05, 2).unwrap();
        let c = small_config(30);
        assert_eq!(train(&c, &data).unwrap(), train(&c, &data).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut c = small_config(0);
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
        c.iterations = 1;
        c.optimizer = Optimizer::Sgd { lr: -1.0 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let arch = parse_arch("3-1-3", 3, LatentRule::Auto).unwrap();
        let c = TrainConfig::new(arch, RiskSpec::default());
        let data = gen_fixture(FixtureKind::Line, 20, 0.0, 0).unwrap();
        assert!(matches!(train(&c, &data), Err(TrainError::Dimension { expected: 3, got: 2 })));
    }

    #[test]
    fn huge_learning_rate_diverges_and_keeps_finite_state() {
        let data = gen_fixture(FixtureKind::Line, 60, 0.01, 1).unwrap();
        let mut c = small_config(200);
        c.arch = c.arch.with_activation(Activation::Identity);
        c.optimizer = Optimizer::Sgd { lr: 1e6 };
        match train(&c, &data) {
            Err(TrainError::Diverged { record, .. }) => {
                assert!(record.net.params().iter().all(|p| p.is_finite()))
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.rows.len())),
        }
    }

    #[test]
    fn grid_mapping_preserves_structure() {
        let grid = gen_polar_grid(6, 3, 1.5, 11).unwrap();
        let arch = parse_arch("4-1-4", 2, LatentRule::Auto).unwrap();
        let net = init(&arch, 3);
        let mapped = map_grid(&net, &grid).unwrap();
        assert_eq!(mapped.vertex_count(), grid.vertex_count());
        assert_eq!(mapped.rays.len(), 6);
        assert_eq!(mapped.circles.len(), 3);
    }

    #[test]
    fn constant_net_collapses_grid() {
        let arch = parse_arch("1", 2, LatentRule::Auto).unwrap();
        let mut net = init(&arch, 0);
        net.set_layer(0, &Matrix::zeros(1, 2), &[0.0]);
        net.set_layer(1, &Matrix::zeros(2, 1), &[0.25, -1.0]);
        let grid = gen_polar_grid(3, 2, 1.0, 5).unwrap();
        for line in map_grid(&net, &grid).unwrap().polylines() {
            for v in 0..line.cols() {
                assert_eq!((line[(0, v)], line[(1, v)]), (0.25, -1.0));
            }
        }
    }
}
