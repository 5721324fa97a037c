//! Synthetic datasets, evaluation grids and deterministic splits.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffmath::Matrix;
use crate::rng::CounterRng;
use crate::table::{fmt_num, Table, TableError};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

const STREAM_LAYOUT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SPLIT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid dataset configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("file content differs from regenerated dataset: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Radius grows linearly from `r0` to `r1` over `turns` revolutions.
    Spiral { turns: f64, r0: f64, r1: f64 },
    /// Segment `t (0.8, 0.6)`, `t` uniform on `[-1, 1]`.
    Line,
    /// Circle of the given radius; noise is radial.
    Circle { radius: f64 },
    /// `x1` uniform on `[-1, 1]`, `x2` pure noise, in mirrored `(x1, ±x2)` pairs.
    Strip,
    /// Zero-mean Gaussian with the given principal variances, axes rotated
    /// by `angle` radians. `sigma` is ignored.
    Gaussian { variances: [f64; 2], angle: f64 },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Spiral { .. } => "spiral",
            Generator::Line => "line",
            Generator::Circle { .. } => "circle",
            Generator::Strip => "strip",
            Generator::Gaussian { .. } => "gaussian",
        }
    }

    pub fn default_spiral() -> Self {
        Generator::Spiral {
            turns: 2.0,
            r0: 0.3,
            r1: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: Generator,
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

impl DatasetMeta {
    pub fn spiral_default(seed: u64) -> Self {
        Self {
            generator: Generator::default_spiral(),
            n: 1000,
            sigma: 0.05,
            seed,
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `d x n`, one point per column.
    pub points: Matrix,
    /// Ascending indices.
    pub train: Vec<usize>,
    /// Ascending indices, disjoint from `train`.
    pub test: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn generate(meta: &DatasetMeta) -> Result<Self, DataError> {
        validate(meta)?;
        let root = CounterRng::new(meta.seed);
        let mut layout = root.stream(STREAM_LAYOUT);
        let mut noise = root.stream(STREAM_NOISE);
        let n = meta.n;
        let s = meta.sigma;
        let mut cols: Vec<[f64; 2]> = Vec::with_capacity(n);
        match meta.generator {
            Generator::Spiral { turns, r0, r1 } => {
                for _ in 0..n {
                    let t = layout.uniform();
                    let r = r0 + (r1 - r0) * t;
                    let a = 2.0 * PI * turns * t;
                    cols.push([r * a.cos() + s * noise.normal(), r * a.sin() + s * noise.normal()]);
                }
            }
            Generator::Line => {
                for _ in 0..n {
                    let t = 2.0 * layout.uniform() - 1.0;
                    cols.push([0.8 * t + s * noise.normal(), 0.6 * t + s * noise.normal()]);
                }
            }
            Generator::Circle { radius } => {
                for _ in 0..n {
                    let a = 2.0 * PI * layout.uniform();
                    let r = radius + s * noise.normal();
                    cols.push([r * a.cos(), r * a.sin()]);
                }
            }
            Generator::Strip => {
                let mut pending: Option<[f64; 2]> = None;
                for _ in 0..n {
                    let p = match pending.take() {
                        Some([x, y]) => [x, -y],
                        None => {
                            let p = [2.0 * layout.uniform() - 1.0, s * noise.normal()];
                            pending = Some(p);
                            p
                        }
                    };
                    cols.push(p);
                }
            }
            Generator::Gaussian { variances, angle } => {
                let (c, sn) = (angle.cos(), angle.sin());
                for _ in 0..n {
                    let u = variances[0].sqrt() * noise.normal();
                    let v = variances[1].sqrt() * noise.normal();
                    cols.push([c * u - sn * v, sn * u + c * v]);
                }
            }
        }
        let points = Matrix::from_columns(&cols);
        let (train, test) = split(n, meta.test_fraction, &mut root.stream(STREAM_SPLIT));
        Ok(Self {
            points,
            train,
            test,
            meta: meta.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.points.rows()
    }

    pub fn len(&self) -> usize {
        self.points.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn train_points(&self) -> Matrix {
        self.points.select_columns(&self.train)
    }

    pub fn test_points(&self) -> Matrix {
        self.points.select_columns(&self.test)
    }

    pub fn to_table(&self) -> Table {
        let meta = serde_json::json!({ "dataset": self.meta });
        let mut header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        header.push("split".into());
        let mut t = Table::new(meta, header);
        let mut is_test = vec![false; self.len()];
        for &i in &self.test {
            is_test[i] = true;
        }
        for (j, flag) in is_test.iter().enumerate() {
            let mut row: Vec<String> = (0..self.dim()).map(|i| fmt_num(self.points[(i, j)])).collect();
            row.push(if *flag { "test" } else { "train" }.into());
            t.push_row(row);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        self.to_table().to_csv()
    }

    /// Parses a dataset CSV, regenerates it from its meta line and requires
    /// the two to agree exactly.
    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let table = Table::parse(text)?;
        let meta: DatasetMeta = serde_json::from_value(table.meta["dataset"].clone())
            .map_err(|e| TableError::Meta(e.to_string()))?;
        let regenerated = Dataset::generate(&meta)?;
        let expected = regenerated.to_table();
        if expected.header != table.header {
            return Err(DataError::Mismatch("header".into()));
        }
        if expected.rows.len() != table.rows.len() {
            return Err(DataError::Mismatch(format!(
                "{} rows, expected {}",
                table.rows.len(),
                expected.rows.len()
            )));
        }
        for (i, (want, got)) in expected.rows.iter().zip(&table.rows).enumerate() {
            let same = want.iter().zip(got).all(|(w, g)| match (w.parse::<f64>(), g.parse::<f64>()) {
                (Ok(a), Ok(b)) => a.to_bits() == b.to_bits(),
                _ => w == g,
            });
            if !same {
                return Err(DataError::Mismatch(format!("point {i}")));
            }
        }
        Ok(regenerated)
    }
}

fn validate(meta: &DatasetMeta) -> Result<(), DataError> {
    let bad = |m: String| Err(DataError::Config(m));
    if meta.n < 2 {
        return bad(format!("n = {} (need at least 2)", meta.n));
    }
    if !(meta.sigma >= 0.0 && meta.sigma.is_finite()) {
        return bad(format!("sigma = {} (need finite, >= 0)", meta.sigma));
    }
    if !(0.0..1.0).contains(&meta.test_fraction) {
        return bad(format!("test_fraction = {} (need 0 <= f < 1)", meta.test_fraction));
    }
    match meta.generator {
        Generator::Spiral { turns, r0, r1 } => {
            if !(r0 >= 0.0 && r1 >= r0) || !turns.is_finite() || !r1.is_finite() {
                return bad(format!("spiral needs r1 >= r0 >= 0, got r0={r0}, r1={r1}"));
            }
        }
        Generator::Circle { radius } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return bad(format!("circle radius {radius}"));
            }
        }
        Generator::Gaussian { variances, angle } => {
            if !variances.iter().all(|v| *v >= 0.0 && v.is_finite()) || !angle.is_finite() {
                return bad(format!("gaussian variances {variances:?}"));
            }
        }
        Generator::Line | Generator::Strip => {}
    }
    Ok(())
}

/// Seeded partition of `0..n`; `round(n * test_fraction)` indices go to test.
pub fn split(n: usize, test_fraction: f64, rng: &mut CounterRng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[allow(clippy::too_many_arguments)]
pub fn gen_spiral(n: usize, turns: f64, r0: f64, r1: f64, sigma: f64, seed: u64) -> Result<Dataset, DataError> {
    if r1 <= r0 && !(r0 == r1 && turns == 0.0) {
        return Err(DataError::Config(format!("spiral needs r1 > r0, got r0={r0}, r1={r1}")));
    }
    Dataset::generate(&DatasetMeta {
        generator: Generator::Spiral { turns, r0, r1 },
        n,
        sigma,
        seed,
        test_fraction: DEFAULT_TEST_FRACTION,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    Line,
    Circle,
    Strip,
}

pub fn gen_fixture(kind: FixtureKind, n: usize, sigma: f64, seed: u64) -> Result<Dataset, DataError> {
    let generator = match kind {
        FixtureKind::Line => Generator::Line,
        FixtureKind::Circle => Generator::Circle { radius: 1.0 },
        FixtureKind::Strip => Generator::Strip,
    };
    Dataset::generate(&DatasetMeta {
        generator,
        n,
        sigma,
        seed,
        test_fraction: DEFAULT_TEST_FRACTION,
    })
}

/// Rays from the origin and concentric circles; each polyline is a `2 x k`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub rays: Vec<Matrix>,
    pub circles: Vec<Matrix>,
}

impl PolarGrid {
    pub fn polylines(&self) -> impl Iterator<Item = &Matrix> {
        self.rays.iter().chain(&self.circles)
    }

    pub fn vertex_count(&self) -> usize {
        self.polylines().map(Matrix::cols).sum()
    }

    pub fn map_lines(&self, mut f: impl FnMut(&Matrix) -> Matrix) -> PolarGrid {
        PolarGrid {
            rays: self.rays.iter().map(&mut f).collect(),
            circles: self.circles.iter().map(&mut f).collect(),
        }
    }

    /// Long format: one row per vertex, `kind,line,vertex,x1,x2`.
    pub fn to_table(&self, meta: serde_json::Value) -> Table {
        let mut t = Table::new(meta, ["kind", "line", "vertex", "x1", "x2"]);
        for (kind, lines) in [("ray", &self.rays), ("circle", &self.circles)] {
            for (l, m) in lines.iter().enumerate() {
                for v in 0..m.cols() {
                    t.push_row(vec![
                        kind.into(),
                        l.to_string(),
                        v.to_string(),
                        fmt_num(m[(0, v)]),
                        fmt_num(m[(1, v)]),
                    ]);
                }
            }
        }
        t
    }
}

/// `n_rays` rays at angles `2πk / n_rays` and `n_circles` circles at radii
/// `r_max (k + 1) / n_circles`; circles are closed (first vertex repeated).
pub fn gen_polar_grid(
    n_rays: usize,
    n_circles: usize,
    r_max: f64,
    samples_per_line: usize,
) -> Result<PolarGrid, DataError> {
    if n_rays == 0 || n_circles == 0 || samples_per_line < 2 {
        return Err(DataError::Config(format!(
            "polar grid needs rays, circles >= 1 and samples >= 2 (got {n_rays}, {n_circles}, {samples_per_line})"
        )));
    }
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(DataError::Config(format!("r_max = {r_max}")));
    }
    let last = (samples_per_line - 1) as f64;
    let rays = (0..n_rays)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / n_rays as f64;
            let cols: Vec<[f64; 2]> = (0..samples_per_line)
                .map(|i| {
                    let r = r_max * i as f64 / last;
                    [r * a.cos(), r * a.sin()]
                })
                .collect();
            Matrix::from_columns(&cols)
        })
        .collect();
    let circles = (0..n_circles)
        .map(|k| {
            let r = r_max * (k + 1) as f64 / n_circles as f64;
            let cols: Vec<[f64; 2]> = (0..samples_per_line)
                .map(|i| {
                    let a = 2.0 * PI * i as f64 / last;
                    [r * a.cos(), r * a.sin()]
                })
                .collect();
            Matrix::from_columns(&cols)
        })
        .collect();
    Ok(PolarGrid { rays, circles })
}
