//! Latent-factor model fitted by alternating least squares.
//!
//! The model minimises
//!
//! ```text
//! Σ_{(u,i) observed} (r_ui − q_iᵀ p_u)²  +  λ Σ_u ‖p_u‖²  +  λ Σ_i ‖q_i‖²
//! ```
//!
//! where `p_u` are pipeline (row) factors and `q_i` dataset (column) factors.
//! With one side fixed the problem separates into independent k x k ridge
//! systems, one per row, which are solved exactly by Cholesky.

use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, RunMetadata};
use crate::linalg::RidgeSystem;
use crate::matrix::UtilityMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rank: usize,
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once an iteration lowers the objective by less than this
    /// fraction. Zero disables early stopping.
    pub tolerance: f64,
    pub seed: u64,
    /// Upper bound of the uniform initialisation; `None` means `1/√rank`.
    pub init_scale: Option<f64>,
    /// Scale λ by each row's observation count in the row solves (and the
    /// objective), as several ALS libraries do. Off by default.
    #[serde(default)]
    pub weighted_lambda: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rank: 8,
            lambda: 0.1,
            max_iterations: 200,
            tolerance: 1e-6,
            seed: 0,
            init_scale: None,
            weighted_lambda: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) || !self.tolerance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be finite and nonnegative, got {}",
                self.tolerance
            )));
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "init_scale must be finite and positive, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn effective_init_scale(&self) -> f64 {
        self.init_scale
            .unwrap_or_else(|| 1.0 / (self.rank as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    /// n_pipelines x k
    pub p: Array2<f64>,
    /// n_datasets x k
    pub q: Array2<f64>,
    pub lambda: f64,
    pub global_mean: f64,
    pub pipelines: Vec<String>,
    pub datasets: Vec<String>,
    /// Rows/columns with at least one training observation. The others keep
    /// their random initialisation and predict `global_mean`.
    pub pipeline_observed: Vec<bool>,
    pub dataset_observed: Vec<bool>,
    pub config: TrainConfig,
    /// Objective after initialisation and after every half-sweep.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl FactorModel {
    /// Wraps explicit factors for a matrix; every row counts as observed.
    pub fn from_factors(
        p: Array2<f64>,
        q: Array2<f64>,
        lambda: f64,
        matrix: &UtilityMatrix,
    ) -> Result<Self> {
        let model = FactorModel {
            pipeline_observed: vec![true; p.nrows()],
            dataset_observed: vec![true; q.nrows()],
            global_mean: matrix.mean_rating().unwrap_or(0.0),
            config: TrainConfig {
                rank: p.ncols(),
                lambda,
                ..TrainConfig::default()
            },
            p,
            q,
            lambda,
            pipelines: matrix.pipeline_ids().map(String::from).collect(),
            datasets: matrix.dataset_ids().map(String::from).collect(),
            trace: Vec::new(),
            iterations: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn rank(&self) -> usize {
        self.p.ncols()
    }

    pub fn n_pipelines(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_datasets(&self) -> usize {
        self.q.nrows()
    }

    pub fn pipeline_index(&self, id: &str) -> Option<usize> {
        self.pipelines.iter().position(|p| p == id)
    }

    pub fn dataset_index(&self, id: &str) -> Option<usize> {
        self.datasets.iter().position(|d| d == id)
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().copied()
    }

    fn validate(&self) -> Result<()> {
        let k = self.p.ncols();
        if k == 0 || self.q.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "factor ranks {} and {}",
                self.p.ncols(),
                self.q.ncols()
            )));
        }
        if self.p.nrows() != self.pipelines.len()
            || self.q.nrows() != self.datasets.len()
            || self.pipeline_observed.len() != self.pipelines.len()
            || self.dataset_observed.len() != self.datasets.len()
        {
            return Err(Error::DimensionMismatch(
                "factor rows do not match index maps".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {}", self.lambda)));
        }
        if self.p.iter().chain(self.q.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("factor entries".into()));
        }
        Ok(())
    }

    fn check_aligned(&self, matrix: &UtilityMatrix) -> Result<()> {
        if self.p.nrows() != matrix.n_pipelines() || self.q.nrows() != matrix.n_datasets() {
            return Err(Error::DimensionMismatch(format!(
                "model is {}x{} but matrix is {}x{}",
                self.p.nrows(),
                self.q.nrows(),
                matrix.n_pipelines(),
                matrix.n_datasets()
            )));
        }
        if !self.pipelines.iter().map(String::as_str).eq(matrix.pipeline_ids())
            || !self.datasets.iter().map(String::as_str).eq(matrix.dataset_ids())
        {
            return Err(Error::DimensionMismatch(
                "model and matrix index maps differ".into(),
            ));
        }
        Ok(())
    }
}

fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sq_norm(a: ArrayView1<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Regularised squared error of the model on the observed entries.
/// λ applies once to every row of `p` and `q`.
pub fn objective(model: &FactorModel, matrix: &UtilityMatrix) -> Result<f64> {
    model.check_aligned(matrix)?;
    Ok(objective_raw(&model.p, &model.q, matrix, model.lambda, false))
}

/// Like [`objective`], optionally with λ scaled by each row's observation
/// count (the quantity minimised when `weighted_lambda` is set).
pub fn objective_with(model: &FactorModel, matrix: &UtilityMatrix, weighted: bool) -> Result<f64> {
    model.check_aligned(matrix)?;
    Ok(objective_raw(&model.p, &model.q, matrix, model.lambda, weighted))
}

fn objective_raw(
    p: &Array2<f64>,
    q: &Array2<f64>,
    matrix: &UtilityMatrix,
    lambda: f64,
    weighted: bool,
) -> f64 {
    let mut loss = 0.0;
    for e in matrix.entries() {
        let r = e.rating.as_f64() - dot(q.row(e.col), p.row(e.row));
        loss += r * r;
    }
    if lambda == 0.0 {
        return loss;
    }
    let (row_w, col_w) = if weighted {
        let mut rw = vec![0.0; p.nrows()];
        let mut cw = vec![0.0; q.nrows()];
        for e in matrix.entries() {
            rw[e.row] += 1.0;
            cw[e.col] += 1.0;
        }
        (rw, cw)
    } else {
        (vec![1.0; p.nrows()], vec![1.0; q.nrows()])
    };
    let reg_p: f64 = p
        .outer_iter()
        .zip(&row_w)
        .map(|(row, w)| w * sq_norm(row))
        .sum();
    let reg_q: f64 = q
        .outer_iter()
        .zip(&col_w)
        .map(|(row, w)| w * sq_norm(row))
        .sum();
    loss + lambda * (reg_p + reg_q)
}

/// Gradient of the objective with respect to pipeline row `u`:
/// `2(λ p_u − Σ_i (r_ui − q_iᵀ p_u) q_i)`.
pub fn gradient_pipeline(model: &FactorModel, matrix: &UtilityMatrix, u: usize) -> Result<Vec<f64>> {
    model.check_aligned(matrix)?;
    if u >= model.n_pipelines() {
        return Err(Error::OutOfRange {
            kind: "pipeline",
            index: u,
            size: model.n_pipelines(),
        });
    }
    let pu = model.p.row(u);
    let mut g: Vec<f64> = pu.iter().map(|x| model.lambda * x).collect();
    for e in matrix.entries().iter().filter(|e| e.row == u) {
        let qi = model.q.row(e.col);
        let resid = e.rating.as_f64() - dot(qi, pu);
        for (gj, qj) in g.iter_mut().zip(qi.iter()) {
            *gj -= resid * qj;
        }
    }
    Ok(g.into_iter().map(|x| 2.0 * x).collect())
}

/// Gradient of the objective with respect to dataset row `i`.
pub fn gradient_dataset(model: &FactorModel, matrix: &UtilityMatrix, i: usize) -> Result<Vec<f64>> {
    model.check_aligned(matrix)?;
    if i >= model.n_datasets() {
        return Err(Error::OutOfRange {
            kind: "dataset",
            index: i,
            size: model.n_datasets(),
        });
    }
    let qi = model.q.row(i);
    let mut g: Vec<f64> = qi.iter().map(|x| model.lambda * x).collect();
    for e in matrix.entries().iter().filter(|e| e.col == i) {
        let pu = model.p.row(e.row);
        let resid = e.rating.as_f64() - dot(qi, pu);
        for (gj, pj) in g.iter_mut().zip(pu.iter()) {
            *gj -= resid * pj;
        }
    }
    Ok(g.into_iter().map(|x| 2.0 * x).collect())
}

/// Solves for one factor row given the fixed factors of the rows it rates.
pub fn solve_row(
    fixed: &Array2<f64>,
    observed: &[(usize, f64)],
    lambda: f64,
) -> Result<Vec<f64>> {
    let mut sys = RidgeSystem::new(fixed.ncols());
    for &(j, r) in observed {
        let row = fixed.row(j);
        match row.as_slice() {
            Some(s) => sys.add_row(s, r),
            None => sys.add_row(&row.to_vec(), r),
        }
    }
    sys.solve(lambda)
}

/// One half-sweep: re-solve every row of `target` with `fixed` held constant.
fn half_sweep(
    target: &mut Array2<f64>,
    fixed: &Array2<f64>,
    observed: &[Vec<(usize, f64)>],
    lambda: f64,
    weighted: bool,
) -> Result<()> {
    target
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(observed.par_iter())
        .try_for_each(|(mut row, obs)| {
            if obs.is_empty() {
                return Ok(());
            }
            let lam = if weighted {
                lambda * obs.len() as f64
            } else {
                lambda
            };
            let sol = solve_row(fixed, obs, lam)?;
            for (dst, src) in row.iter_mut().zip(sol) {
                *dst = src;
            }
            Ok(())
        })
}

/// Fits the factor model by alternating least squares.
///
/// Each iteration solves all pipeline rows with dataset factors fixed, then
/// all dataset rows with pipeline factors fixed. The objective is recorded
/// after initialisation and after each half-sweep. Iteration stops after
/// `max_iterations` or when an iteration's relative decrease drops below
/// `tolerance`.
pub fn als_fit(matrix: &UtilityMatrix, config: &TrainConfig) -> Result<FactorModel> {
    config.validate()?;
    if matrix.is_empty() {
        return Err(Error::Empty("cannot fit a matrix with no entries".into()));
    }
    let k = config.rank;
    let scale = config.effective_init_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut p = Array2::from_shape_simple_fn((matrix.n_pipelines(), k), || rng.gen::<f64>() * scale);
    let mut q = Array2::from_shape_simple_fn((matrix.n_datasets(), k), || rng.gen::<f64>() * scale);

    let rows = matrix.rows();
    let cols = matrix.cols();
    let lambda = config.lambda;
    let weighted = config.weighted_lambda;

    let mut trace = vec![objective_raw(&p, &q, matrix, lambda, weighted)];
    let mut iterations = 0;
    for _ in 0..config.max_iterations {
        let before = *trace.last().expect("trace is nonempty");
        half_sweep(&mut p, &q, &rows, lambda, weighted)?;
        trace.push(objective_raw(&p, &q, matrix, lambda, weighted));
        half_sweep(&mut q, &p, &cols, lambda, weighted)?;
        let after = objective_raw(&p, &q, matrix, lambda, weighted);
        trace.push(after);
        iterations += 1;
        if !after.is_finite() {
            return Err(Error::NonFinite("objective diverged".into()));
        }
        if config.tolerance > 0.0 {
            let rel = if before > 0.0 {
                (before - after) / before
            } else {
                0.0
            };
            if rel < config.tolerance {
                break;
            }
        }
    }

    let model = FactorModel {
        p,
        q,
        lambda,
        global_mean: matrix.mean_rating().expect("nonempty matrix"),
        pipelines: matrix.pipeline_ids().map(String::from).collect(),
        datasets: matrix.dataset_ids().map(String::from).collect(),
        pipeline_observed: rows.iter().map(|r| !r.is_empty()).collect(),
        dataset_observed: cols.iter().map(|c| !c.is_empty()).collect(),
        config: config.clone(),
        trace,
        iterations,
    };
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub score: f64,
    /// The pipeline or dataset had no training observations and `score` is
    /// the global mean.
    pub cold_start: bool,
}

/// Predicted rating `q_iᵀ p_u`, or the global mean for cold-start rows.
pub fn predict_raw(model: &FactorModel, u: usize, i: usize) -> Result<Prediction> {
    if u >= model.n_pipelines() {
        return Err(Error::OutOfRange {
            kind: "pipeline",
            index: u,
            size: model.n_pipelines(),
        });
    }
    if i >= model.n_datasets() {
        return Err(Error::OutOfRange {
            kind: "dataset",
            index: i,
            size: model.n_datasets(),
        });
    }
    if !model.pipeline_observed[u] || !model.dataset_observed[i] {
        return Ok(Prediction {
            score: model.global_mean,
            cold_start: true,
        });
    }
    Ok(Prediction {
        score: dot(model.q.row(i), model.p.row(u)),
        cold_start: false,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    rank: usize,
    lambda: f64,
    global_mean: f64,
    pipelines: Vec<String>,
    datasets: Vec<String>,
    pipeline_observed: Vec<bool>,
    dataset_observed: Vec<bool>,
    config: TrainConfig,
    iterations: usize,
    trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunMetadata>,
}

const MODEL_FORMAT: &str = "provrec-model/1";

/// Serialises the model: one JSON header line, then one line per factor row
/// (`p <row> v1 v2 ...` or `q <row> ...`) with 17 significant digits.
pub fn write_model<W: Write>(mut w: W, model: &FactorModel, run: Option<RunMetadata>) -> Result<()> {
    let header = ModelHeader {
        format: MODEL_FORMAT.to_string(),
        rank: model.rank(),
        lambda: model.lambda,
        global_mean: model.global_mean,
        pipelines: model.pipelines.clone(),
        datasets: model.datasets.clone(),
        pipeline_observed: model.pipeline_observed.clone(),
        dataset_observed: model.dataset_observed.clone(),
        config: model.config.clone(),
        iterations: model.iterations,
        trace: model.trace.clone(),
        run,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::parse("model header", e.to_string()))?;
    writeln!(w)?;
    for (tag, factors) in [("p", &model.p), ("q", &model.q)] {
        for (idx, row) in factors.outer_iter().enumerate() {
            write!(w, "{tag} {idx}")?;
            for x in row.iter() {
                write!(w, " {}", io::fmt_f64(*x))?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn read_model<R: BufRead>(reader: R) -> Result<FactorModel> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse("model", "empty file"))??;
    let header: ModelHeader =
        serde_json::from_str(&first).map_err(|e| Error::parse("model header", e.to_string()))?;
    if header.format != MODEL_FORMAT {
        return Err(Error::parse("model header", format!("unsupported format {:?}", header.format)));
    }
    let k = header.rank;
    let mut p = Array2::<f64>::zeros((header.pipelines.len(), k));
    let mut q = Array2::<f64>::zeros((header.datasets.len(), k));
    let mut seen_p = vec![false; p.nrows()];
    let mut seen_q = vec![false; q.nrows()];
    for (n, line) in lines.enumerate() {
        let line = line?;
        let ctx = format!("model line {}", n + 2);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let tag = parts.next().unwrap_or_default();
        let idx: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(&ctx, "missing row index"))?;
        let (target, seen) = match tag {
            "p" => (&mut p, &mut seen_p),
            "q" => (&mut q, &mut seen_q),
            other => return Err(Error::parse(&ctx, format!("unknown row tag {other:?}"))),
        };
        if idx >= target.nrows() || seen[idx] {
            return Err(Error::parse(&ctx, format!("bad or repeated row index {idx}")));
        }
        seen[idx] = true;
        let values: Vec<f64> = parts
            .map(|s| io::parse_f64(s).ok_or_else(|| Error::parse(&ctx, format!("bad number {s:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != k {
            return Err(Error::parse(&ctx, format!("expected {k} values, found {}", values.len())));
        }
        for (dst, v) in target.row_mut(idx).iter_mut().zip(values) {
            *dst = v;
        }
    }
    if seen_p.iter().chain(&seen_q).any(|s| !s) {
        return Err(Error::parse("model", "missing factor rows"));
    }
    let model = FactorModel {
        p,
        q,
        lambda: header.lambda,
        global_mean: header.global_mean,
        pipelines: header.pipelines,
        datasets: header.datasets,
        pipeline_observed: header.pipeline_observed,
        dataset_observed: header.dataset_observed,
        config: header.config,
        trace: header.trace,
        iterations: header.iterations,
    };
    model
        .validate()
        .map_err(|e| Error::parse("model", e.to_string()))?;
    Ok(model)
}

pub fn save_model(path: &Path, model: &FactorModel, run: Option<RunMetadata>) -> Result<()> {
    io::write_atomic(path, |w| write_model(w, model, run))
}

pub fn load_model(path: &Path) -> Result<FactorModel> {
    read_model(io::open(path)?).map_err(|e| match e {
        Error::Stream(source) => Error::io(path, source),
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}
