//! Subcommand implementations. Each writes its artifacts under `out` and
//! returns an error whose exit code distinguishes config from run failures.

use std::path::{Path, PathBuf};

use aelab_core::checkpoint;
use aelab_core::data::{gen_polar_grid, Dataset, PolarGrid};
use aelab_core::diagnostics::{orthogonality_defect, penalty_shapes, self_consistency_residual, SHAPE_COLUMNS};
use aelab_core::gnorm::{classify_terminal, run_method, GnormError, Run, TestFunction};
use aelab_core::risks::{cem_orthogonality_from_latents, total_objective};
use aelab_core::table::{fmt_num, Table};
use aelab_core::train::{self as trainer, map_grid, penalty_columns, RunRecord, TrainError};
use aelab_core::{Autoencoder, Matrix, Model};
use rayon::prelude::*;

use crate::config::{expand_sweep, value_label, ExperimentConfig, Loaded};
use crate::output::{ensure_dir, meta, write_atomic};
use crate::svg::{Chart, Series};
use crate::CliError;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Final metrics of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSummary {
    /// Iteration of the last evaluation row.
    pub iterations: usize,
    /// Train and test RMSE of the last evaluation row, if any was reached.
    pub final_rmse: Option<(f64, f64)>,
    /// Set when training stopped on a non-finite objective.
    pub diverged_at: Option<usize>,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_table(path: &Path, table: &Table) -> Result<String, CliError> {
    let text = table.to_csv();
    write_atomic(path, &text)?;
    Ok(text)
}

fn reparse(text: &str) -> Result<Table, CliError> {
    Table::parse(text).map_err(runtime)
}

fn dataset(config: &ExperimentConfig) -> Result<Dataset, CliError> {
    let meta = config.dataset_meta()?;
    Dataset::generate(&meta).map_err(|e| CliError::Usage(format!("dataset: {e}")))
}

/// Trains one configuration; divergence still writes every artifact and is
/// reported through [`TrainSummary::diverged_at`].
pub fn run_training(config: &ExperimentConfig, out: &Path) -> Result<TrainSummary, CliError> {
    let data = dataset(config)?;
    let train_config = config.train_config(data.dim())?;
    let grid = gen_polar_grid(config.grid.rays, config.grid.circles, config.grid.r_max, config.grid.samples)
        .map_err(|e| CliError::Usage(format!("grid: {e}")))?;
    ensure_dir(out)?;
    write_atomic(&out.join("dataset.csv"), &data.to_csv())?;

    let (record, diverged_at) = match trainer::train(&train_config, &data) {
        Ok(r) => (r, None),
        Err(TrainError::Diverged { iteration, record }) => (*record, Some(iteration)),
        Err(e @ (TrainError::Config(_) | TrainError::Dimension { .. })) => {
            return Err(CliError::Usage(e.to_string()))
        }
        Err(e) => return Err(runtime(e)),
    };
    let run_csv = write_table(&out.join("run.csv"), &record.to_table(meta("train", "run", config)))?;
    write_atomic(
        &out.join("checkpoint.txt"),
        &checkpoint::to_string(&Model::Mlp(record.net.clone())),
    )?;
    let recon_csv = write_table(
        &out.join("reconstruction.csv"),
        &reconstruction_table(&record, &data, meta("train", "reconstruction", config))?,
    )?;
    let grid_csv = if data.dim() == 2 {
        let mapped = map_grid(&record.net, &grid).map_err(runtime)?;
        Some(write_table(
            &out.join("grid.csv"),
            &grid_table(&grid, &mapped, meta("train", "grid", config)),
        )?)
    } else {
        None
    };

    write_atomic(&out.join("run.svg"), &run_chart(&reparse(&run_csv)?, &config.name)?)?;
    let grid_table = grid_csv.as_deref().map(reparse).transpose()?;
    write_atomic(
        &out.join("fit.svg"),
        &fit_chart(&reparse(&recon_csv)?, grid_table.as_ref(), &config.name)?,
    )?;

    let last = record.last();
    Ok(TrainSummary {
        iterations: last.map_or(0, |r| r.iteration),
        final_rmse: last.map(|r| (r.train_rmse, r.test_rmse)),
        diverged_at,
    })
}

pub fn train(config: &ExperimentConfig, out: &Path) -> Result<TrainSummary, CliError> {
    let summary = run_training(config, out)?;
    match summary.diverged_at {
        Some(i) => Err(CliError::Runtime(format!(
            "training diverged at iteration {i}; partial artifacts written to {}",
            out.display()
        ))),
        None => Ok(summary),
    }
}

fn reconstruction_table(record: &RunRecord, data: &Dataset, meta: serde_json::Value) -> Result<Table, CliError> {
    let d = data.dim();
    let recon = record.net.reconstruct_batch(&data.points).map_err(runtime)?;
    let mut header = vec!["index".to_string(), "split".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=d).map(|i| format!("r{i}")));
    let mut split = vec!["train"; data.len()];
    for &j in &data.test {
        split[j] = "test";
    }
    let mut t = Table::new(meta, header);
    for j in 0..data.len() {
        let mut row = vec![j.to_string(), split[j].to_string()];
        row.extend((0..d).map(|i| fmt_num(data.points[(i, j)])));
        row.extend((0..d).map(|i| fmt_num(recon[(i, j)])));
        t.push_row(row);
    }
    Ok(t)
}

fn grid_table(grid: &PolarGrid, mapped: &PolarGrid, meta: serde_json::Value) -> Table {
    let mut t = Table::new(meta, ["kind", "line", "vertex", "x1", "x2", "r1", "r2"]);
    let kinds = [("ray", &grid.rays, &mapped.rays), ("circle", &grid.circles, &mapped.circles)];
    for (kind, lines, images) in kinds {
        for (l, (m, img)) in lines.iter().zip(images).enumerate() {
            for v in 0..m.cols() {
                t.push_row(vec![
                    kind.into(),
                    l.to_string(),
                    v.to_string(),
                    fmt_num(m[(0, v)]),
                    fmt_num(m[(1, v)]),
                    fmt_num(img[(0, v)]),
                    fmt_num(img[(1, v)]),
                ]);
            }
        }
    }
    t
}

fn zip_columns(table: &Table, x: &str, y: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let xs = table.column(x).map_err(runtime)?;
    let ys = table.column(y).map_err(runtime)?;
    Ok(xs.into_iter().zip(ys).collect())
}

fn run_chart(run: &Table, name: &str) -> Result<String, CliError> {
    Ok(Chart {
        title: format!("{name}: reconstruction error"),
        x_label: "iteration".into(),
        y_label: "RMSE".into(),
        series: vec![
            Series::line("train", COLORS[0], zip_columns(run, "iteration", "train_rmse")?),
            Series::line("test", COLORS[1], zip_columns(run, "iteration", "test_rmse")?),
        ],
        ..Chart::default()
    }
    .render())
}

fn fit_chart(recon: &Table, grid: Option<&Table>, name: &str) -> Result<String, CliError> {
    let mut series = Vec::new();
    if let Some(grid) = grid {
        let kind = grid.column_index("kind").map_err(runtime)?;
        let line = grid.column_index("line").map_err(runtime)?;
        let pts = zip_columns(grid, "r1", "r2")?;
        let mut parts: Vec<Vec<(f64, f64)>> = Vec::new();
        let mut key: Option<(&str, &str)> = None;
        for (row, p) in grid.rows.iter().zip(pts) {
            let k = (row[kind].as_str(), row[line].as_str());
            if key != Some(k) {
                parts.push(Vec::new());
                key = Some(k);
            }
            parts.last_mut().expect("pushed above").push(p);
        }
        series.push(Series {
            parts,
            ..Series::line("mapped grid", "#bbbbbb", Vec::new())
        });
    }
    series.push(Series::dots("data", COLORS[0], zip_columns(recon, "x1", "x2")?));
    series.push(Series::dots("reconstruction", COLORS[1], zip_columns(recon, "r1", "r2")?));
    Ok(Chart {
        title: format!("{name}: fit"),
        x_label: "x1".into(),
        y_label: "x2".into(),
        equal_aspect: true,
        series,
    }
    .render())
}

/// Runs every sweep cell (in parallel when `threads` allows) and writes
/// `summary.csv`. Without axes this is a plain training run.
pub fn sweep(loaded: &Loaded, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<(), CliError> {
    let mut cells = expand_sweep(loaded)?;
    if cells.is_empty() {
        let mut config = loaded.config.clone();
        config.sweep = None;
        if let Some(s) = seed {
            config.override_seed(s);
        }
        return train(&config, out).map(|_| ());
    }
    if let Some(s) = seed {
        for c in &mut cells {
            c.config.override_seed(s);
        }
    }
    ensure_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrainSummary, CliError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_training(&c.config, &out.join(format!("cell-{:03}", c.index))))
            .collect()
    });

    let mut summary_config = loaded.config.clone();
    if let Some(s) = seed {
        summary_config.override_seed(s);
    }
    let mut header = vec!["cell".to_string()];
    header.extend(cells[0].assignments.iter().map(|(f, _)| f.clone()));
    header.extend(["status", "iterations", "final_train_rmse", "final_test_rmse"].map(String::from));
    let mut table = Table::new(meta("sweep", "summary", &summary_config), header);
    let mut failures = Vec::new();
    for (cell, result) in cells.iter().zip(&results) {
        let mut row = vec![format!("{:03}", cell.index)];
        row.extend(cell.assignments.iter().map(|(_, v)| value_label(v)));
        match result {
            Ok(s) => {
                let status = if s.diverged_at.is_some() { "diverged" } else { "ok" };
                if s.diverged_at.is_some() {
                    failures.push(format!("cell {:03} diverged", cell.index));
                }
                let (train, test) = s
                    .final_rmse
                    .map_or((String::new(), String::new()), |(a, b)| (fmt_num(a), fmt_num(b)));
                row.extend([status.to_string(), s.iterations.to_string(), train, test]);
            }
            Err(e) => {
                failures.push(format!("cell {:03}: {e}", cell.index));
                row.extend(["error".to_string(), String::new(), String::new(), String::new()]);
            }
        }
        table.push_row(row);
    }
    write_table(&out.join("summary.csv"), &table)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}

pub fn gnorm(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.gnorm();
    let f = section.function()?;
    let method = section.method()?;
    let (run, failure) = match run_method(method, &f, &section.x0, section.options()) {
        Ok(run) => (run, None),
        Err(e @ (GnormError::Divergence { .. } | GnormError::SingularHessian { .. })) => {
            let (iteration, trajectory) = match &e {
                GnormError::Divergence { iteration, trajectory, .. }
                | GnormError::SingularHessian { iteration, trajectory, .. } => (*iteration, trajectory.clone()),
                _ => unreachable!(),
            };
            let run = Run {
                trajectory,
                iterations: iteration,
                converged: false,
                final_step: section.step,
            };
            (run, Some(e))
        }
        Err(e) => return Err(CliError::Usage(format!("gnorm: {e}"))),
    };
    ensure_dir(out)?;
    let d = f.dim();
    let grad_norm = |x: &[f64]| f.gradient(x).iter().map(|g| g * g).sum::<f64>().sqrt();

    let mut header = vec!["iteration".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend(["value", "grad_norm"].map(String::from));
    let mut traj = Table::new(meta("gnorm", "trajectory", config), header);
    for (k, x) in run.trajectory.iter().enumerate() {
        let mut row = vec![k as f64];
        row.extend(x);
        row.push(f.value(x));
        row.push(grad_norm(x));
        traj.push_numbers(&row);
    }
    let traj_csv = write_table(&out.join("trajectory.csv"), &traj)?;

    let x = run.terminal();
    let status = match &failure {
        None if run.converged => "converged",
        None => "max_iters",
        Some(GnormError::Divergence { .. }) => "diverged",
        Some(_) => "singular_hessian",
    };
    let mut header: Vec<String> = ["function", "method", "status", "iterations", "classification", "value", "grad_norm"]
        .map(String::from)
        .to_vec();
    header.extend((1..=d).map(|i| format!("x{i}")));
    let mut terminal = Table::new(meta("gnorm", "terminal", config), header);
    let mut row = vec![
        f.name().to_string(),
        section.method.clone(),
        status.to_string(),
        run.iterations.to_string(),
        classify_terminal(&f, x, section.classify_tol).name().to_string(),
        fmt_num(f.value(x)),
        fmt_num(grad_norm(x)),
    ];
    row.extend(x.iter().map(|&v| fmt_num(v)));
    terminal.push_row(row);
    write_table(&out.join("terminal.csv"), &terminal)?;

    let parsed = reparse(&traj_csv)?;
    let log_norm: Vec<(f64, f64)> = zip_columns(&parsed, "iteration", "grad_norm")?
        .into_iter()
        .map(|(k, g)| (k, g.log10()))
        .collect();
    let chart = Chart {
        title: format!("{} on {}", section.method, f.name()),
        x_label: "iteration".into(),
        y_label: "log10 |grad f|".into(),
        series: vec![Series::line("gradient norm", COLORS[0], log_norm)],
        ..Chart::default()
    };
    write_atomic(&out.join("trajectory.svg"), &chart.render())?;
    match failure {
        Some(e) => Err(CliError::Runtime(format!(
            "{e}; partial artifacts written to {}",
            out.display()
        ))),
        None => Ok(()),
    }
}

/// Resolves the checkpoint named in `[diagnose]` relative to the config.
pub fn checkpoint_path(loaded: &Loaded) -> Result<PathBuf, CliError> {
    let section = loaded
        .config
        .diagnose
        .as_ref()
        .ok_or(crate::ConfigError::MissingSection("diagnose"))?;
    let p = Path::new(&section.checkpoint);
    Ok(if p.is_absolute() { p.to_path_buf() } else { loaded.dir.join(p) })
}

pub fn diagnose(config: &ExperimentConfig, checkpoint_file: &Path, out: &Path) -> Result<(), CliError> {
    let bins = config
        .diagnose
        .as_ref()
        .map(|d| d.bins)
        .unwrap_or(aelab_core::diagnostics::DEFAULT_BINS);
    let text = std::fs::read_to_string(checkpoint_file)
        .map_err(|e| CliError::Usage(format!("cannot read checkpoint {}: {e}", checkpoint_file.display())))?;
    let model = checkpoint::from_str(&text)
        .map_err(|e| CliError::Usage(format!("checkpoint {}: {e}", checkpoint_file.display())))?;
    let data = dataset(config)?;
    if model.input_dim() != data.dim() {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}-dimensional inputs, dataset has {}",
            model.input_dim(),
            data.dim()
        )));
    }
    let risk = config.risk_spec()?.clean();
    let one_dim = model.latent_dim() == 1;

    let mut header: Vec<String> = ["split", "n", "uls", "rmse"].map(String::from).to_vec();
    header.extend(penalty_columns(&risk));
    header.extend(["objective", "defect", "self_consistency", "cem_orthogonality"].map(String::from));
    let mut table = Table::new(meta("diagnose", "diagnostics", config), header);
    let all: Vec<usize> = (0..data.len()).collect();
    for (name, idx) in [("train", &data.train), ("test", &data.test), ("all", &all)] {
        let batch: Matrix = data.points.select_columns(idx);
        let (_, stats) = total_objective(&model, &batch, &risk, usize::MAX).map_err(runtime)?;
        let defect = orthogonality_defect(&model, &batch).map_err(runtime)?;
        let mut row = vec![name.to_string(), idx.len().to_string(), fmt_num(stats.base_risk), fmt_num(stats.rmse)];
        row.extend(stats.penalties.iter().map(|&v| fmt_num(v)));
        row.push(fmt_num(stats.objective));
        row.push(fmt_num(defect));
        // Curve diagnostics only exist for a 1-D latent; a degenerate
        // encoding leaves them empty as well.
        let (sc, cem) = if one_dim {
            let sc = self_consistency_residual(&model, &batch, bins).ok();
            let cem = model
                .encode_batch(&batch)
                .ok()
                .and_then(|z| cem_orthogonality_from_latents(z.as_slice(), &batch, bins).ok());
            (sc, cem)
        } else {
            (None, None)
        };
        row.push(sc.map(fmt_num).unwrap_or_default());
        row.push(cem.map(fmt_num).unwrap_or_default());
        table.push_row(row);
    }
    ensure_dir(out)?;
    write_table(&out.join("diagnostics.csv"), &table)?;
    Ok(())
}

pub fn shapes(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let section = config.shapes();
    if !(section.alpha.is_finite() && section.alpha >= 0.0) {
        return Err(CliError::Usage(format!("shapes: alpha must be finite and >= 0, got {}", section.alpha)));
    }
    let rows = penalty_shapes(section.alpha, section.samples).map_err(|e| CliError::Usage(format!("shapes: {e}")))?;
    let mut table = Table::new(meta("shapes", "shapes", config), SHAPE_COLUMNS);
    for r in &rows {
        table.push_numbers(&r.values());
    }
    ensure_dir(out)?;
    let csv = write_table(&out.join("shapes.csv"), &table)?;
    let parsed = reparse(&csv)?;
    let series = ["residual_sq", "ortho_total", "normalized_total"]
        .iter()
        .zip(COLORS)
        .map(|(col, color)| Ok(Series::line(col, color, zip_columns(&parsed, "t", col)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let chart = Chart {
        title: format!("penalty shapes, alpha = {}", fmt_num(section.alpha)),
        x_label: "t".into(),
        y_label: "value".into(),
        series,
        ..Chart::default()
    };
    write_atomic(&out.join("shapes.svg"), &chart.render())?;
    Ok(())
}
