//! Synthetic operator-learning data.
//!
//! Two solution-operator tasks over a class of truncated Fourier forcing
//! functions: a forced pendulum solved with fixed-step RK4, and the
//! antiderivative operator `G(f)(x) = integral of f over [0, x]`, which has
//! a closed form per Fourier term and so doubles as a quadrature oracle.
//!
//! A dataset is a fixed sensor grid plus `m` samples
//! `(x_B = f on the grid, x_T = query point, y = G(f)(x_T))`, serialized as
//! JSON Lines with a leading metadata record. Generation is deterministic
//! per `(config, m, seed)`: each sample derives its own RNG stream, so the
//! result is byte-identical regardless of parallelism.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::iofmt::atomic_write;
use crate::seeds::stream_rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("ODE state became non-finite at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },
    #[error("ODE divergence while generating sample {sample}: {source}")]
    SampleDivergence {
        sample: usize,
        #[source]
        source: Box<DataError>,
    },
    #[error("time grid must be strictly increasing (violated at index {index})")]
    NonMonotonicGrid { index: usize },
    #[error("dataset must be non-empty")]
    Empty,
    #[error("sensor grid must be non-empty and contained in [0, horizon]")]
    BadSensorGrid,
    #[error("solver step must be positive, got {0}")]
    BadStep(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sample {index} has x_B length {got}, expected sensor grid size {expected}")]
    SensorMismatch { index: usize, expected: usize, got: usize },
}

/// Truncated Fourier series
/// `f(t) = a0 + sum_j a_j cos(j w0 t) + b_j sin(j w0 t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForcingFunction {
    pub constant: f64,
    pub cosine: Vec<f64>,
    pub sine: Vec<f64>,
    pub base_freq: f64,
}

impl ForcingFunction {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, cosine: Vec::new(), sine: Vec::new(), base_freq: 1.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = self.constant;
        for (j, (a, b)) in self.cosine.iter().zip(&self.sine).enumerate() {
            let w = (j as f64 + 1.0) * self.base_freq;
            acc += a * (w * t).cos() + b * (w * t).sin();
        }
        acc
    }

    /// Exact `integral of f over [0, x]`, integrating termwise.
    pub fn antiderivative(&self, x: f64) -> f64 {
        let mut acc = self.constant * x;
        for (j, (a, b)) in self.cosine.iter().zip(&self.sine).enumerate() {
            let w = (j as f64 + 1.0) * self.base_freq;
            acc += a * (w * x).sin() / w + b * (1.0 - (w * x).cos()) / w;
        }
        acc
    }

    /// Triangle-inequality bound: `|f(t)| <= a0 + sum(|a_j| + |b_j|)`.
    pub fn amplitude_bound(&self) -> f64 {
        self.constant.abs()
            + self.cosine.iter().map(|a| a.abs()).sum::<f64>()
            + self.sine.iter().map(|b| b.abs()).sum::<f64>()
    }
}

/// Sampling law for forcing functions: `harmonics` Fourier terms with all
/// coefficients i.i.d. uniform in `[-amplitude, amplitude]`; the constant
/// term is additionally centered at `offset` (0 keeps the class symmetric
/// under sign flips, a positive value makes it sign-asymmetric, which is
/// what makes the operator learnable by bias-free nets whose units are
/// even functions of the input).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForcingLaw {
    pub harmonics: usize,
    pub amplitude: f64,
    pub base_freq: f64,
    #[serde(default)]
    pub offset: f64,
}

impl ForcingLaw {
    /// Defaults: 5 harmonics, unit amplitude, zero offset, base frequency
    /// `2 pi / horizon`.
    pub fn for_horizon(horizon: f64) -> Self {
        Self { harmonics: 5, amplitude: 1.0, base_freq: 2.0 * PI / horizon, offset: 0.0 }
    }
}

/// Draws a forcing function from the law; deterministic given the RNG.
pub fn sample_forcing<R: Rng>(law: &ForcingLaw, rng: &mut R) -> ForcingFunction {
    let draw = |rng: &mut R| {
        if law.amplitude == 0.0 {
            0.0
        } else {
            rng.gen_range(-law.amplitude..=law.amplitude)
        }
    };
    let constant = law.offset + draw(rng);
    let cosine = (0..law.harmonics).map(|_| draw(rng)).collect();
    let sine = (0..law.harmonics).map(|_| draw(rng)).collect();
    ForcingFunction { constant, cosine, sine, base_freq: law.base_freq }
}

/// Pointwise evaluation of `f` on the grid, in grid order.
pub fn discretize(f: &ForcingFunction, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&t| f.eval(t)).collect()
}

/// Classical fixed-grid RK4. Returns the state at every grid point,
/// starting with `y0` at `t_grid[0]`.
pub fn rk4_solve<F>(rhs: F, y0: &[f64], t_grid: &[f64]) -> Result<Vec<Vec<f64>>, DataError>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    for (i, w) in t_grid.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(DataError::NonMonotonicGrid { index: i + 1 });
        }
    }
    let dim = y0.len();
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(y0.to_vec());
    let mut y = y0.to_vec();
    for (step, w) in t_grid.windows(2).enumerate() {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = rhs(t, &y);
        let mut tmp = vec![0.0; dim];
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = rhs(t + 0.5 * h, &tmp);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        let k3 = rhs(t + 0.5 * h, &tmp);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        let k4 = rhs(t + h, &tmp);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Divergence { step: step + 1, t: w[1] });
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Uniform grid `0, h, 2h, ..., >= horizon` (last point clamped to the
/// horizon).
pub fn uniform_grid(horizon: f64, h: f64) -> Vec<f64> {
    let n = (horizon / h).ceil() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    if let Some(last) = grid.last_mut() {
        *last = horizon;
    }
    grid
}

/// Forced pendulum `dy/dt = v, dv/dt = -k sin(y) + f(t)` with a fixed
/// initial condition shared by the whole dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendulumConfig {
    pub restoring: f64,
    pub initial: (f64, f64),
    pub horizon: f64,
    pub solver_step: f64,
    pub sensor_grid: Vec<f64>,
    pub forcing: ForcingLaw,
}

impl PendulumConfig {
    /// Restoring coefficient 1, rest state, unit horizon, step `T/1000`,
    /// `d1` evenly spaced sensor points.
    pub fn default_with_sensors(d1: usize) -> Self {
        let horizon = 1.0;
        Self {
            restoring: 1.0,
            initial: (0.0, 0.0),
            horizon,
            solver_step: horizon / 1000.0,
            sensor_grid: even_sensors(d1, horizon),
            forcing: ForcingLaw::for_horizon(horizon),
        }
    }
}

/// `d1` evenly spaced points on `[0, horizon]`.
pub fn even_sensors(d1: usize, horizon: f64) -> Vec<f64> {
    if d1 == 1 {
        return vec![0.0];
    }
    (0..d1).map(|i| horizon * i as f64 / (d1 - 1) as f64).collect()
}

/// Antiderivative task configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AntiderivativeConfig {
    pub horizon: f64,
    pub sensor_grid: Vec<f64>,
    pub forcing: ForcingLaw,
}

impl AntiderivativeConfig {
    pub fn default_with_sensors(d1: usize) -> Self {
        let horizon = 1.0;
        Self {
            horizon,
            sensor_grid: even_sensors(d1, horizon),
            forcing: ForcingLaw::for_horizon(horizon),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Pendulum,
    Antiderivative,
}

/// One training/test triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSample {
    pub x_b: Vec<f64>,
    pub x_t: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub d1: usize,
    pub d2: usize,
    pub grid: Vec<f64>,
    pub task: TaskKind,
    pub seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorDataset {
    pub meta: DatasetMeta,
    pub samples: Vec<OperatorSample>,
}

impl OperatorDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// JSON Lines serialization: a metadata header record, then one record
    /// per sample in index order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        #[derive(Serialize)]
        struct Header<'a> {
            meta: &'a DatasetMeta,
        }
        out.push_str(&serde_json::to_string(&Header { meta: &self.meta }).expect("serializable"));
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Header {
            meta: DatasetMeta,
        }
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header_line) = lines.next().ok_or(DataError::Empty)?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?;
        let mut samples = Vec::new();
        for (idx, line) in lines {
            let s: OperatorSample = serde_json::from_str(line)
                .map_err(|e| DataError::Parse { line: idx + 1, message: e.to_string() })?;
            if s.x_b.len() != header.meta.d1 {
                return Err(DataError::SensorMismatch {
                    index: samples.len(),
                    expected: header.meta.d1,
                    got: s.x_b.len(),
                });
            }
            samples.push(s);
        }
        Ok(Self { meta: header.meta, samples })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        atomic_write(path, self.to_jsonl().as_bytes())
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = fs::File::open(path)
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            let line =
                line.map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
            text.push_str(&line);
            text.push('\n');
        }
        Self::from_jsonl(&text)
    }
}

fn check_sensor_grid(grid: &[f64], horizon: f64) -> Result<(), DataError> {
    if grid.is_empty() || grid.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(DataError::BadSensorGrid);
    }
    Ok(())
}

/// Linear interpolation of a sampled trajectory component at time `t`.
fn interp(grid: &[f64], values: &[f64], t: f64) -> f64 {
    match grid.binary_search_by(|g| g.partial_cmp(&t).expect("finite grid")) {
        Ok(i) => values[i],
        Err(0) => values[0],
        Err(i) if i >= grid.len() => values[grid.len() - 1],
        Err(i) => {
            let (t0, t1) = (grid[i - 1], grid[i]);
            let w = (t - t0) / (t1 - t0);
            values[i - 1] * (1.0 - w) + values[i] * w
        }
    }
}

/// Solves the forced pendulum for one forcing function and reads the
/// angular position at the query time by linear interpolation of the RK4
/// grid. This is exactly the label map used by [`make_pendulum_dataset`].
pub fn pendulum_label(
    cfg: &PendulumConfig,
    f: &ForcingFunction,
    query: f64,
) -> Result<f64, DataError> {
    if !(cfg.solver_step > 0.0) {
        return Err(DataError::BadStep(cfg.solver_step));
    }
    let t_grid = uniform_grid(cfg.horizon, cfg.solver_step);
    let rhs = |t: f64, s: &[f64]| vec![s[1], -cfg.restoring * s[0].sin() + f.eval(t)];
    let traj = rk4_solve(rhs, &[cfg.initial.0, cfg.initial.1], &t_grid)?;
    let angle: Vec<f64> = traj.iter().map(|s| s[0]).collect();
    Ok(interp(&t_grid, &angle, query))
}

/// Generates `m` forced-pendulum samples. Query times are uniform on
/// `[0, horizon]`; labels are linear interpolations of the RK4 angular
/// position.
pub fn make_pendulum_dataset(
    cfg: &PendulumConfig,
    m: usize,
    seed: u64,
) -> Result<OperatorDataset, DataError> {
    if m == 0 {
        return Err(DataError::Empty);
    }
    if !(cfg.solver_step > 0.0) {
        return Err(DataError::BadStep(cfg.solver_step));
    }
    check_sensor_grid(&cfg.sensor_grid, cfg.horizon)?;
    let samples: Vec<Result<OperatorSample, DataError>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, "pendulum-sample", i as u64);
            let f = sample_forcing(&cfg.forcing, &mut rng);
            let query: f64 = rng.gen_range(0.0..=cfg.horizon);
            let y = pendulum_label(cfg, &f, query)
                .map_err(|e| DataError::SampleDivergence { sample: i, source: Box::new(e) })?;
            Ok(OperatorSample { x_b: discretize(&f, &cfg.sensor_grid), x_t: vec![query], y })
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(OperatorDataset {
        meta: DatasetMeta {
            d1: cfg.sensor_grid.len(),
            d2: 1,
            grid: cfg.sensor_grid.clone(),
            task: TaskKind::Pendulum,
            seed,
            config: serde_json::to_value(cfg).expect("serializable"),
        },
        samples,
    })
}

/// Generates `m` antiderivative samples with exact termwise-integrated
/// labels.
pub fn make_antiderivative_dataset(
    cfg: &AntiderivativeConfig,
    m: usize,
    seed: u64,
) -> Result<OperatorDataset, DataError> {
    if m == 0 {
        return Err(DataError::Empty);
    }
    check_sensor_grid(&cfg.sensor_grid, cfg.horizon)?;
    let samples: Vec<OperatorSample> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, "antiderivative-sample", i as u64);
            let f = sample_forcing(&cfg.forcing, &mut rng);
            let query: f64 = rng.gen_range(0.0..=cfg.horizon);
            OperatorSample {
                x_b: discretize(&f, &cfg.sensor_grid),
                x_t: vec![query],
                y: f.antiderivative(query),
            }
        })
        .collect();
    Ok(OperatorDataset {
        meta: DatasetMeta {
            d1: cfg.sensor_grid.len(),
            d2: 1,
            grid: cfg.sensor_grid.clone(),
            task: TaskKind::Antiderivative,
            seed,
            config: serde_json::to_value(cfg).expect("serializable"),
        },
        samples,
    })
}
