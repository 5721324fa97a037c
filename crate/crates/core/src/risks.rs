//! Autoencoder risks and penalties as differentiable tape expressions.
//!
//! All functions take a batch as a `d x n` matrix whose columns are points.
//! With `r(x) = g(λ(x)) - x` the residual and `J_g` the decoder Jacobian at
//! `λ(x)`:
//!
//! | term                          | per-point value                       |
//! |-------------------------------|---------------------------------------|
//! | unsupervised least squares    | `½ |r|²`                              |
//! | contractive                   | `|J_λ(x)|_F²`                         |
//! | orthogonal contractive        | `|J_gᵀ r|²`                           |
//! | normalized orthogonal         | `|J_gᵀ r|² / max(|r|², ε)`            |
//!
//! Each risk is the batch mean of its per-point value.
//!
//! The orthogonal penalty reads the product of the squared residual and the
//! squared decoder Jacobian as the squared inner products of the residual
//! with every decoder tangent column, i.e. `|J_gᵀ r|²`. That is the squared
//! pointwise first variation of the least-squares risk with respect to the
//! encoder; it vanishes exactly when the residual is orthogonal to the
//! decoded manifold, which is the condition the penalty exists to enforce.
//! It is computed with one vector-Jacobian product through the decoder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{BinnedDecoder, DiagnosticsError, DEFAULT_BINS};
use crate::diffmath::{DiffError, Matrix, Tape, Var};
use crate::network::{Autoencoder, NetError};
use crate::rng::CounterRng;

pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid risk specification: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Shape(#[from] NetError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("only {found} nonempty latent bins, need at least 3")]
    InsufficientBins { found: usize },
    #[error("latent dimension {0} not supported here (needs 1)")]
    LatentDim(usize),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaseRisk {
    Uls,
    /// Reconstruct a corrupted input, compare against the clean one. The
    /// corruption of batch `k` is drawn from stream `k` of `seed`.
    UlsDenoising { sigma: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenaltyKind {
    Contractive,
    OrthoContractive,
    NormalizedOrthoContractive,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Contractive => "contractive",
            PenaltyKind::OrthoContractive => "ortho_contractive",
            PenaltyKind::NormalizedOrthoContractive => "normalized_ortho",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant(f64),
    /// `from` at iteration 0, `to` from `iterations` on, linear in between.
    LinearRamp { from: f64, to: f64, iterations: usize },
}

impl Schedule {
    pub fn weight_at(&self, iteration: usize) -> f64 {
        match *self {
            Schedule::Constant(w) => w,
            Schedule::LinearRamp { from, to, iterations } => {
                if iterations == 0 || iteration >= iterations {
                    to
                } else {
                    from + (to - from) * (iteration as f64 / iterations as f64)
                }
            }
        }
    }

    fn is_nonnegative(&self) -> bool {
        match *self {
            Schedule::Constant(w) => w >= 0.0,
            Schedule::LinearRamp { from, to, .. } => from >= 0.0 && to >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub schedule: Schedule,
}

impl Penalty {
    pub fn constant(kind: PenaltyKind, weight: f64) -> Self {
        Self {
            kind,
            schedule: Schedule::Constant(weight),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub base: BaseRisk,
    pub penalties: Vec<Penalty>,
    pub epsilon_floor: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self {
            base: BaseRisk::Uls,
            penalties: Vec::new(),
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

impl RiskSpec {
    pub fn with_penalty(mut self, p: Penalty) -> Self {
        self.penalties.push(p);
        self
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        if let BaseRisk::UlsDenoising { sigma, .. } = self.base {
            if !(sigma >= 0.0) {
                return Err(RiskError::InvalidSpec(format!("noise sigma {sigma} < 0")));
            }
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(RiskError::InvalidSpec(format!(
                "epsilon_floor {} must be positive",
                self.epsilon_floor
            )));
        }
        if let Some(p) = self.penalties.iter().find(|p| !p.schedule.is_nonnegative()) {
            return Err(RiskError::InvalidSpec(format!(
                "negative weight for {} penalty",
                p.kind.name()
            )));
        }
        Ok(())
    }

    /// The same spec without input corruption.
    pub fn clean(&self) -> Self {
        Self {
            base: BaseRisk::Uls,
            ..self.clone()
        }
    }
}

/// Per-term breakdown of an objective evaluation on one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    /// `½ mean |r|²`
    pub base_risk: f64,
    /// Unweighted penalty values, in `RiskSpec::penalties` order.
    pub penalties: Vec<f64>,
    /// Weights in effect at the evaluated iteration.
    pub weights: Vec<f64>,
    /// `sqrt(mean |r|² / d)`
    pub rmse: f64,
    pub objective: f64,
}

/// Nodes of one recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Recorded {
    pub input: Var,
    pub latent: Var,
    pub output: Var,
    pub residual: Var,
    pub batch_size: usize,
}

/// Records `r = g(λ(input)) - target`.
pub fn record_residual<M: Autoencoder + ?Sized>(
    model: &M,
    tape: &mut Tape,
    params: Var,
    input: &Matrix,
    target: &Matrix,
) -> Recorded {
    let x = tape.constant(input.clone());
    let z = model.record_encoder(tape, params, x);
    let y = model.record_decoder(tape, params, z);
    let t = tape.constant(target.clone());
    let r = tape.sub(y, t);
    Recorded {
        input: x,
        latent: z,
        output: y,
        residual: r,
        batch_size: input.cols(),
    }
}

fn batch_mean(tape: &mut Tape, per_point: Var, n: usize) -> Var {
    let s = tape.sorted_sum(per_point);
    tape.scale(s, 1.0 / n as f64)
}

/// `1 x n` row of squared column norms.
fn col_norm_sq(tape: &mut Tape, m: Var) -> Var {
    let sq = tape.mul(m, m);
    tape.col_sum(sq)
}

pub fn record_uls(tape: &mut Tape, rec: &Recorded) -> Var {
    let q = col_norm_sq(tape, rec.residual);
    let m = batch_mean(tape, q, rec.batch_size);
    tape.scale(m, 0.5)
}

/// Mean squared Frobenius norm of the encoder Jacobian, one forward-mode
/// sweep per input coordinate.
pub fn record_contractive(tape: &mut Tape, rec: &Recorded) -> Var {
    let (d, n) = tape.shape(rec.input);
    let mut per_point: Option<Var> = None;
    for j in 0..d {
        let mut e = Matrix::zeros(d, n);
        e.as_mut_slice()[j * n..(j + 1) * n].fill(1.0);
        let e = tape.constant(e);
        let col = tape.jvp(rec.input, rec.latent, e);
        let q = col_norm_sq(tape, col);
        per_point = Some(match per_point {
            Some(acc) => tape.add(acc, q),
            None => q,
        });
    }
    match per_point {
        Some(q) => batch_mean(tape, q, n),
        None => tape.constant(Matrix::scalar(0.0)),
    }
}

/// `1 x n` row of `|J_gᵀ r|²`.
pub fn record_ortho_per_point(tape: &mut Tape, rec: &Recorded) -> Var {
    let u = tape.vjp(rec.latent, rec.output, rec.residual);
    col_norm_sq(tape, u)
}

pub fn record_ortho(tape: &mut Tape, rec: &Recorded) -> Var {
    let q = record_ortho_per_point(tape, rec);
    batch_mean(tape, q, rec.batch_size)
}

pub fn record_normalized_ortho(tape: &mut Tape, rec: &Recorded, epsilon_floor: f64) -> Var {
    let q = record_ortho_per_point(tape, rec);
    let r2 = col_norm_sq(tape, rec.residual);
    let den = tape.floor_at(r2, epsilon_floor);
    let ratio = tape.div(q, den);
    batch_mean(tape, ratio, rec.batch_size)
}

fn check_batch<M: Autoencoder + ?Sized>(model: &M, batch: &Matrix) -> Result<(), RiskError> {
    if batch.cols() == 0 {
        return Err(RiskError::EmptyBatch);
    }
    if batch.rows() != model.input_dim() {
        return Err(NetError::Shape {
            expected: model.input_dim(),
            got: batch.rows(),
        }
        .into());
    }
    Ok(())
}

fn evaluate_term<M, F>(model: &M, batch: &Matrix, term: F) -> Result<f64, RiskError>
where
    M: Autoencoder + ?Sized,
    F: FnOnce(&mut Tape, &Recorded) -> Var,
{
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let p = tape.constant(Matrix::column_vector(model.params().to_vec()));
    let rec = record_residual(model, &mut tape, p, batch, batch);
    let out = term(&mut tape, &rec);
    tape.check()?;
    Ok(tape.scalar(out))
}

/// `½ mean |g(λ(x)) - x|²`
pub fn uls_risk<M: Autoencoder + ?Sized>(model: &M, batch: &Matrix) -> Result<f64, RiskError> {
    evaluate_term(model, batch, record_uls)
}

pub fn contractive_penalty<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
) -> Result<f64, RiskError> {
    evaluate_term(model, batch, record_contractive)
}

pub fn ortho_contractive_penalty<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
) -> Result<f64, RiskError> {
    evaluate_term(model, batch, record_ortho)
}

pub fn normalized_ortho_penalty<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
    epsilon_floor: f64,
) -> Result<f64, RiskError> {
    if !(epsilon_floor > 0.0) {
        return Err(RiskError::InvalidSpec(format!(
            "epsilon_floor {epsilon_floor} must be positive"
        )));
    }
    evaluate_term(model, batch, |t, r| record_normalized_ortho(t, r, epsilon_floor))
}

/// Adds isotropic Gaussian noise of standard deviation `sigma`. Column `j`
/// always receives the same noise for a given seed.
pub fn denoise_corrupt(batch: &Matrix, sigma: f64, seed: u64) -> Matrix {
    if sigma == 0.0 {
        return batch.clone();
    }
    let mut rng = CounterRng::new(seed);
    let mut out = batch.clone();
    let (d, n) = batch.shape();
    for j in 0..n {
        for i in 0..d {
            out[(i, j)] += sigma * rng.normal();
        }
    }
    out
}

/// Orthogonality risk of the conditional-expectation decoder induced by the
/// model's (1-D) encoder.
pub fn cem_orthogonality_risk<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
) -> Result<f64, RiskError> {
    check_batch(model, batch)?;
    if model.latent_dim() != 1 {
        return Err(RiskError::LatentDim(model.latent_dim()));
    }
    let latents = model.encode_batch(batch)?.into_vec();
    cem_orthogonality_from_latents(&latents, batch, DEFAULT_BINS)
}

/// `mean <g_λ(λ(x)) - x, g_λ'(λ(x))>²` where `g_λ` is the binned
/// conditional expectation: the piecewise-linear curve through the per-bin
/// (mean latent, mean point) knots, with tangents from central differences
/// between neighbouring nonempty bins.
pub fn cem_orthogonality_from_latents(
    latents: &[f64],
    batch: &Matrix,
    n_bins: usize,
) -> Result<f64, RiskError> {
    if batch.cols() == 0 {
        return Err(RiskError::EmptyBatch);
    }
    let dec = BinnedDecoder::fit(latents, batch, n_bins)?;
    let knots = dec.knots();
    if knots.len() < 3 {
        return Err(RiskError::InsufficientBins { found: knots.len() });
    }
    let mut terms = Vec::with_capacity(batch.cols());
    for (j, &z) in latents.iter().enumerate() {
        let g = dec.interpolate(z);
        let t = dec.tangent_at(dec.bin_of(z));
        let dot: f64 = (0..batch.rows()).map(|i| (g[i] - batch[(i, j)]) * t[i]).sum();
        terms.push(dot * dot);
    }
    Ok(crate::diffmath::sorted_sum(&terms) / terms.len() as f64)
}

/// Records the full objective `base + Σ α_k(iteration) penalty_k`.
///
/// Returns the objective node and the base/penalty nodes.
pub fn record_objective<M: Autoencoder + ?Sized>(
    model: &M,
    tape: &mut Tape,
    params: Var,
    batch: &Matrix,
    spec: &RiskSpec,
    iteration: usize,
) -> (Var, Var, Vec<Var>) {
    let input = match spec.base {
        BaseRisk::Uls => batch.clone(),
        BaseRisk::UlsDenoising { sigma, seed } => {
            let stream = CounterRng::new(seed).stream(iteration as u64).next_u64();
            denoise_corrupt(batch, sigma, stream)
        }
    };
    let rec = record_residual(model, tape, params, &input, batch);
    let base = record_uls(tape, &rec);
    let mut total = base;
    let mut terms = Vec::with_capacity(spec.penalties.len());
    for p in &spec.penalties {
        let v = match p.kind {
            PenaltyKind::Contractive => record_contractive(tape, &rec),
            PenaltyKind::OrthoContractive => record_ortho(tape, &rec),
            PenaltyKind::NormalizedOrthoContractive => {
                record_normalized_ortho(tape, &rec, spec.epsilon_floor)
            }
        };
        terms.push(v);
        let w = p.schedule.weight_at(iteration);
        if w != 0.0 {
            let wv = tape.scale(v, w);
            total = tape.add(total, wv);
        }
    }
    (total, base, terms)
}

fn stats_from(tape: &Tape, spec: &RiskSpec, iteration: usize, dim: usize, nodes: (Var, Var, &[Var])) -> BatchStats {
    let (total, base, terms) = nodes;
    let base_risk = tape.scalar(base);
    BatchStats {
        base_risk,
        penalties: terms.iter().map(|&v| tape.scalar(v)).collect(),
        weights: spec.penalties.iter().map(|p| p.schedule.weight_at(iteration)).collect(),
        rmse: (2.0 * base_risk / dim as f64).sqrt(),
        objective: tape.scalar(total),
    }
}

/// Objective value and its breakdown on one batch.
pub fn total_objective<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
    spec: &RiskSpec,
    iteration: usize,
) -> Result<(f64, BatchStats), RiskError> {
    spec.validate()?;
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let p = tape.constant(Matrix::column_vector(model.params().to_vec()));
    let (total, base, terms) = record_objective(model, &mut tape, p, batch, spec, iteration);
    tape.check()?;
    let stats = stats_from(&tape, spec, iteration, batch.rows(), (total, base, &terms));
    Ok((stats.objective, stats))
}

/// Objective breakdown plus its gradient with respect to the flat
/// parameter vector.
pub fn objective_gradient<M: Autoencoder + ?Sized>(
    model: &M,
    batch: &Matrix,
    spec: &RiskSpec,
    iteration: usize,
) -> Result<(BatchStats, Vec<f64>), RiskError> {
    spec.validate()?;
    check_batch(model, batch)?;
    let mut tape = Tape::new();
    let p = tape.variable(Matrix::column_vector(model.params().to_vec()));
    let (total, base, terms) = record_objective(model, &mut tape, p, batch, spec, iteration);
    let grad = tape.gradient(total, p)?;
    let stats = stats_from(&tape, spec, iteration, batch.rows(), (total, base, &terms));
    Ok((stats, grad.into_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init, parse_arch, Activation, CircleProjection, LatentRule, Net};

    fn linear_net(spec: &str) -> Net {
        let arch = parse_arch(spec, 2, LatentRule::Auto)
            .unwrap()
            .with_activation(Activation::Identity);
        init(&arch, 0)
    }

    fn identity_net() -> Net {
        let mut n = linear_net("2");
        n.set_layer(0, &Matrix::identity(2), &[0.0, 0.0]);
        n.set_layer(1, &Matrix::identity(2), &[0.0, 0.0]);
        n
    }

    fn batch() -> Matrix {
        Matrix::from_columns(&[
            vec![0.5, -1.0],
            vec![2.0, 0.25],
            vec![-1.5, 1.5],
            vec![0.1, 0.3],
        ])
    }

    #[test]
    fn identity_network_has_zero_risk_and_penalties() {
        let n = identity_net();
        assert_eq!(uls_risk(&n, &batch()).unwrap(), 0.0);
        assert_eq!(ortho_contractive_penalty(&n, &batch()).unwrap(), 0.0);
        assert_eq!(normalized_ortho_penalty(&n, &batch(), 1e-8).unwrap(), 0.0);
    }

    #[test]
    fn constant_decoder_gives_half_mean_squared_distance() {
        // Zero decoder weights: g ≡ c.
        let mut n = linear_net("1");
        n.set_layer(1, &Matrix::zeros(2, 1), &[0.3, -0.2]);
        let b = batch();
        let expect: f64 = b
            .columns()
            .iter()
            .map(|x| (0.3 - x[0]).powi(2) + (-0.2 - x[1]).powi(2))
            .sum::<f64>()
            / 8.0;
        assert!((uls_risk(&n, &b).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn linear_encoder_contractive_is_frobenius_norm() {
        let mut n = linear_net("1");
        let w = Matrix::from_vec(1, 2, vec![0.6, -2.0]);
        n.set_layer(0, &w, &[0.7]);
        let v = contractive_penalty(&n, &batch()).unwrap();
        assert!((v - w.frobenius_sq()).abs() < 1e-14);
        // Constant encoder.
        n.set_layer(0, &Matrix::zeros(1, 2), &[0.7]);
        assert_eq!(contractive_penalty(&n, &batch()).unwrap(), 0.0);
    }

    #[test]
    fn line_decoder_ortho_closed_form() {
        // g(z) = z u, λ(x) = <a, x> + c: penalty = <u, z u - x>².
        let mut n = linear_net("1");
        let u = [0.8, 0.6];
        n.set_layer(0, &Matrix::from_vec(1, 2, vec![0.3, -1.1]), &[0.25]);
        n.set_layer(1, &Matrix::from_vec(2, 1, u.to_vec()), &[0.0, 0.0]);
        let b = batch();
        let mut expect = 0.0;
        for x in b.columns() {
            let z = 0.3 * x[0] - 1.1 * x[1] + 0.25;
            let dot = u[0] * (z * u[0] - x[0]) + u[1] * (z * u[1] - x[1]);
            expect += dot * dot;
        }
        expect /= 4.0;
        assert!((ortho_contractive_penalty(&n, &b).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn circle_projection_has_orthogonal_residuals() {
        let c = CircleProjection::new(1.0);
        let b = Matrix::from_columns(&[vec![1.3, 0.0], vec![0.0, 0.4], vec![-0.9, 0.9], vec![2.0, -1.0]]);
        assert!(ortho_contractive_penalty(&c, &b).unwrap() < 1e-28);
        assert!(normalized_ortho_penalty(&c, &b, 1e-8).unwrap() < 1e-28);
    }

    #[test]
    fn normalized_is_one_for_aligned_unit_residual() {
        // Decoder g(z) = (z, 0) with unit tangent e1; encoder λ(x) = x1 + 1 so r = e1.
        let mut n = linear_net("1");
        n.set_layer(0, &Matrix::from_vec(1, 2, vec![1.0, 0.0]), &[1.0]);
        n.set_layer(1, &Matrix::from_vec(2, 1, vec![1.0, 0.0]), &[0.0, 0.0]);
        let b = Matrix::from_columns(&[vec![0.5, 0.0], vec![-2.0, 0.0]]);
        let v = normalized_ortho_penalty(&n, &b, 1e-8).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let n = identity_net();
        let empty = Matrix::zeros(2, 0);
        assert_eq!(uls_risk(&n, &empty), Err(RiskError::EmptyBatch));
        assert_eq!(contractive_penalty(&n, &empty), Err(RiskError::EmptyBatch));
        assert_eq!(ortho_contractive_penalty(&n, &empty), Err(RiskError::EmptyBatch));
        assert_eq!(normalized_ortho_penalty(&n, &empty, 1e-8), Err(RiskError::EmptyBatch));
    }

    #[test]
    fn corruption_properties() {
        let b = batch();
        assert_eq!(denoise_corrupt(&b, 0.0, 5), b);
        assert_eq!(denoise_corrupt(&b, 0.3, 5), denoise_corrupt(&b, 0.3, 5));
        assert_ne!(denoise_corrupt(&b, 0.3, 5), denoise_corrupt(&b, 0.3, 6));
    }

    #[test]
    fn ramp_schedule_interpolates() {
        let s = Schedule::LinearRamp {
            from: 0.0,
            to: 0.04,
            iterations: 20000,
        };
        assert_eq!(s.weight_at(0), 0.0);
        assert!((s.weight_at(10000) - 0.02).abs() < 1e-18);
        assert_eq!(s.weight_at(20000), 0.04);
        assert_eq!(s.weight_at(30000), 0.04);
    }

    #[test]
    fn spec_validation() {
        let bad = RiskSpec::default().with_penalty(Penalty::constant(PenaltyKind::Contractive, -1.0));
        assert!(matches!(bad.validate(), Err(RiskError::InvalidSpec(_))));
        let bad = RiskSpec {
            epsilon_floor: 0.0,
            ..RiskSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = RiskSpec {
            base: BaseRisk::UlsDenoising { sigma: -0.1, seed: 0 },
            ..RiskSpec::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn objective_without_penalties_is_uls() {
        let arch = parse_arch("4-1-4", 2, LatentRule::Auto).unwrap();
        let n = init(&arch, 3);
        let (obj, stats) = total_objective(&n, &batch(), &RiskSpec::default(), 0).unwrap();
        assert_eq!(obj, uls_risk(&n, &batch()).unwrap());
        assert!(stats.penalties.is_empty());
        let rmse = (2.0 * obj / 2.0f64).sqrt();
        assert_eq!(stats.rmse, rmse);
    }
}
