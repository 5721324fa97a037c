//! MLP autoencoders `r = g ∘ λ` with an explicit latent layer.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::{Elementwise, Matrix, Tape, Var};
use crate::rng::CounterRng;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("architecture spec is empty")]
    Empty,
    #[error("invalid layer width {0:?}: expected a positive integer")]
    BadToken(String),
    #[error("latent index {index} is outside the {layers} hidden layers")]
    LatentOutOfRange { index: usize, layers: usize },
    #[error("input dimension must be at least 1")]
    ZeroInputDim,
    #[error("unknown activation {0:?}")]
    UnknownActivation(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("parameter vector has length {got}, architecture needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

/// Hidden-layer activation. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    pub fn elementwise(self) -> Elementwise {
        match self {
            Activation::Tanh => Elementwise::Tanh,
            Activation::Softplus => Elementwise::Softplus,
            Activation::Identity => Elementwise::Identity,
        }
    }

    pub fn name(self) -> &'static str {
        self.elementwise().name()
    }
}

impl FromStr for Activation {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "identity" => Ok(Activation::Identity),
            other => Err(ParseError::UnknownActivation(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentRule {
    /// The unique narrowest hidden layer, else the middle one (earlier of
    /// the middle pair for an even count).
    Auto,
    Explicit(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layer_widths: Vec<usize>,
    pub latent_index: usize,
    pub input_dim: usize,
    pub activation: Activation,
}

/// Parses a width chain such as `"50-100-1-100-50"` (`--` separators are
/// accepted too).
pub fn parse_arch(spec: &str, input_dim: usize, latent: LatentRule) -> Result<ArchSpec, ParseError> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(ParseError::Empty);
    }
    if input_dim == 0 {
        return Err(ParseError::ZeroInputDim);
    }
    let widths = spec
        .replace("--", "-")
        .split('-')
        .map(|tok| match tok.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(ParseError::BadToken(tok.to_string())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let latent_index = match latent {
        LatentRule::Explicit(i) if i < widths.len() => i,
        LatentRule::Explicit(i) => {
            return Err(ParseError::LatentOutOfRange {
                index: i,
                layers: widths.len(),
            })
        }
        LatentRule::Auto => auto_latent(&widths),
    };
    Ok(ArchSpec {
        layer_widths: widths,
        latent_index,
        input_dim,
        activation: Activation::default(),
    })
}

fn auto_latent(widths: &[usize]) -> usize {
    let min = *widths.iter().min().expect("nonempty");
    let mut at_min = widths.iter().enumerate().filter(|(_, &w)| w == min);
    match (at_min.next(), at_min.next()) {
        (Some((i, _)), None) => i,
        _ => (widths.len() - 1) / 2,
    }
}

impl ArchSpec {
    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Normalized width chain, e.g. `"50-100-1-100-50"`.
    pub fn spec_string(&self) -> String {
        self.layer_widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn latent_dim(&self) -> usize {
        self.layer_widths[self.latent_index]
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layer_widths.len() + 1);
        let mut prev = self.input_dim;
        for &w in self.layer_widths.iter().chain(std::iter::once(&self.input_dim)) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn encoder_layers(&self) -> Range<usize> {
        0..self.latent_index + 1
    }

    fn decoder_layers(&self) -> Range<usize> {
        self.latent_index + 1..self.layer_widths.len() + 1
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec_string())
    }
}

/// Location of one affine layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out x fan_in` weight block.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Something that can be recorded on a tape as an encoder/decoder pair.
///
/// Parameters are one flat vector; the `params` node passed to the record
/// functions is that vector as an `n x 1` tape node. Inputs are batches of
/// points stored as columns.
pub trait Autoencoder {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn params(&self) -> &[f64];
    fn record_encoder(&self, tape: &mut Tape, params: Var, x: Var) -> Var;
    fn record_decoder(&self, tape: &mut Tape, params: Var, z: Var) -> Var;

    fn encode_batch(&self, x: &Matrix) -> Result<Matrix, NetError> {
        check_rows(x, self.input_dim())?;
        let mut t = Tape::new();
        let p = t.constant(Matrix::column_vector(self.params().to_vec()));
        let xv = t.constant(x.clone());
        let z = self.record_encoder(&mut t, p, xv);
        Ok(t.value(z).clone())
    }

    fn decode_batch(&self, z: &Matrix) -> Result<Matrix, NetError> {
        check_rows(z, self.latent_dim())?;
        let mut t = Tape::new();
        let p = t.constant(Matrix::column_vector(self.params().to_vec()));
        let zv = t.constant(z.clone());
        let y = self.record_decoder(&mut t, p, zv);
        Ok(t.value(y).clone())
    }

    fn reconstruct_batch(&self, x: &Matrix) -> Result<Matrix, NetError> {
        let z = self.encode_batch(x)?;
        self.decode_batch(&z)
    }
}

fn check_rows(m: &Matrix, expected: usize) -> Result<(), NetError> {
    if m.rows() != expected {
        Err(NetError::Shape {
            expected,
            got: m.rows(),
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    arch: ArchSpec,
    layout: Vec<LayerLayout>,
    params: Vec<f64>,
    seed: u64,
}

fn layout_for(arch: &ArchSpec) -> Vec<LayerLayout> {
    let mut offset = 0;
    arch.layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let l = LayerLayout {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            };
            offset += fan_in * fan_out + fan_out;
            l
        })
        .collect()
}

/// Weights `N(0, 1/fan_in)`, biases zero.
pub fn init(arch: &ArchSpec, seed: u64) -> Net {
    let layout = layout_for(arch);
    let mut params = vec![0.0; arch.param_count()];
    let root = CounterRng::new(seed);
    for (l, lay) in layout.iter().enumerate() {
        let mut rng = root.stream(l as u64);
        let scale = 1.0 / (lay.fan_in as f64).sqrt();
        for w in &mut params[lay.weight_offset..lay.bias_offset] {
            *w = scale * rng.normal();
        }
    }
    Net {
        arch: arch.clone(),
        layout,
        params,
        seed,
    }
}

impl Net {
    pub fn from_params(arch: ArchSpec, params: Vec<f64>, seed: u64) -> Result<Net, NetError> {
        if params.len() != arch.param_count() {
            return Err(NetError::ParamCount {
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(Net {
            layout: layout_for(&arch),
            arch,
            params,
            seed,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn layout(&self) -> &[LayerLayout] {
        &self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Net, NetError> {
        Net::from_params(self.arch.clone(), params, self.seed)
    }

    /// `(weights, bias)` of layer `l` as matrices.
    pub fn layer(&self, l: usize) -> (Matrix, Matrix) {
        let lay = self.layout[l];
        let w = self.params[lay.weight_offset..lay.bias_offset].to_vec();
        let b = self.params[lay.bias_offset..lay.bias_offset + lay.fan_out].to_vec();
        (
            Matrix::from_vec(lay.fan_out, lay.fan_in, w),
            Matrix::column_vector(b),
        )
    }

    pub fn set_layer(&mut self, l: usize, weights: &Matrix, bias: &[f64]) {
        let lay = self.layout[l];
        assert_eq!(weights.shape(), (lay.fan_out, lay.fan_in));
        assert_eq!(bias.len(), lay.fan_out);
        self.params[lay.weight_offset..lay.bias_offset].copy_from_slice(weights.as_slice());
        self.params[lay.bias_offset..lay.bias_offset + lay.fan_out].copy_from_slice(bias);
    }

    fn is_output_layer(&self, l: usize) -> bool {
        l + 1 == self.layout.len()
    }

    fn forward(&self, input: &Matrix, layers: Range<usize>) -> Matrix {
        let act = self.arch.activation.elementwise();
        let mut a = input.clone();
        for l in layers {
            let (w, b) = self.layer(l);
            let z = w.matmul(&a);
            let n = z.cols();
            let bias = Matrix::from_vec(
                b.rows(),
                n,
                b.as_slice().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect(),
            );
            let z = z.zip_map(&bias, |x, y| x + y);
            a = if self.is_output_layer(l) || act == Elementwise::Identity {
                z
            } else {
                z.map(|v| act.eval(0, v))
            };
        }
        a
    }

    fn record(&self, tape: &mut Tape, params: Var, input: Var, layers: Range<usize>) -> Var {
        let act = self.arch.activation.elementwise();
        let n = tape.shape(input).1;
        let mut a = input;
        for l in layers {
            let lay = self.layout[l];
            let w = tape.slice(params, lay.weight_offset, lay.fan_out, lay.fan_in);
            let b = tape.slice(params, lay.bias_offset, lay.fan_out, 1);
            let z = tape.matmul(w, a);
            let bb = tape.broadcast_cols(b, n);
            let z = tape.add(z, bb);
            a = if self.is_output_layer(l) || act == Elementwise::Identity {
                z
            } else {
                tape.apply(act, z)
            };
        }
        a
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.encode_batch(&Matrix::column_vector(x.to_vec()))?.into_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, NetError> {
        Ok(self.decode_batch(&Matrix::column_vector(z.to_vec()))?.into_vec())
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        let z = self.encode(x)?;
        self.decode(&z)
    }
}

impl Autoencoder for Net {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn record_encoder(&self, tape: &mut Tape, params: Var, x: Var) -> Var {
        self.record(tape, params, x, self.arch.encoder_layers())
    }

    fn record_decoder(&self, tape: &mut Tape, params: Var, z: Var) -> Var {
        self.record(tape, params, z, self.arch.decoder_layers())
    }

    fn encode_batch(&self, x: &Matrix) -> Result<Matrix, NetError> {
        check_rows(x, self.input_dim())?;
        Ok(self.forward(x, self.arch.encoder_layers()))
    }

    fn decode_batch(&self, z: &Matrix) -> Result<Matrix, NetError> {
        check_rows(z, self.latent_dim())?;
        Ok(self.forward(z, self.arch.decoder_layers()))
    }
}

/// Exact projection onto a circle of radius `ρ` in the plane: the encoder
/// is the polar angle, the decoder `z ↦ ρ (cos z, sin z)`.
///
/// Not an MLP; it is the reference model at which the principal-curve
/// conditions hold exactly. Its only parameter is `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleProjection {
    params: [f64; 1],
}

impl CircleProjection {
    pub fn new(radius: f64) -> Self {
        Self { params: [radius] }
    }

    pub fn radius(&self) -> f64 {
        self.params[0]
    }
}

impl Autoencoder for CircleProjection {
    fn input_dim(&self) -> usize {
        2
    }

    fn latent_dim(&self) -> usize {
        1
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn record_encoder(&self, tape: &mut Tape, _params: Var, x: Var) -> Var {
        let x1 = tape.select_rows(x, 0, 1);
        let x2 = tape.select_rows(x, 1, 1);
        tape.atan2(x2, x1)
    }

    fn record_decoder(&self, tape: &mut Tape, params: Var, z: Var) -> Var {
        let n = tape.shape(z).1;
        // (cos z, sin z) = sin(z + (π/2, 0))
        let ones = tape.constant(Matrix::filled(2, 1, 1.0));
        let phase = tape.constant(Matrix::column_vector(vec![std::f64::consts::FRAC_PI_2, 0.0]));
        let zz = tape.matmul(ones, z);
        let ph = tape.broadcast_cols(phase, n);
        let arg = tape.add(zz, ph);
        let unit = tape.apply(Elementwise::Sin, arg);
        let rho = tape.slice(params, 0, 1, 1);
        let rho = tape.broadcast_cols(rho, n);
        let rho = tape.broadcast_rows(rho, 2);
        tape.mul(rho, unit)
    }
}

/// Any model that can be stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Mlp(Net),
    Circle(CircleProjection),
}

impl Model {
    fn inner(&self) -> &dyn Autoencoder {
        match self {
            Model::Mlp(n) => n,
            Model::Circle(c) => c,
        }
    }
}

impl Autoencoder for Model {
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }

    fn latent_dim(&self) -> usize {
        self.inner().latent_dim()
    }

    fn params(&self) -> &[f64] {
        self.inner().params()
    }

    fn record_encoder(&self, tape: &mut Tape, params: Var, x: Var) -> Var {
        self.inner().record_encoder(tape, params, x)
    }

    fn record_decoder(&self, tape: &mut Tape, params: Var, z: Var) -> Var {
        self.inner().record_decoder(tape, params, z)
    }

    fn encode_batch(&self, x: &Matrix) -> Result<Matrix, NetError> {
        self.inner().encode_batch(x)
    }

    fn decode_batch(&self, z: &Matrix) -> Result<Matrix, NetError> {
        self.inner().decode_batch(z)
    }
}

impl From<Net> for Model {
    fn from(n: Net) -> Self {
        Model::Mlp(n)
    }
}

impl From<CircleProjection> for Model {
    fn from(c: CircleProjection) -> Self {
        Model::Circle(c)
    }
}
