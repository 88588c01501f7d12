//! Monte Carlo estimation of empirical Rademacher complexity for
//! constrained DeepONet classes, plus the exact rank-one supremum.
//!
//! The empirical Rademacher complexity of a class `F` on a dataset of size
//! `m` is `E_eps [ sup_{f in F} sum_i eps_i f(x_i) ] / m` over uniform sign
//! vectors. The inner supremum here is approximated by projected gradient
//! ascent over the constrained weights from multiple restarts, so every
//! estimate is a *lower* bound on the true complexity; the certification
//! suites exploit that one-sidedness (estimate above a proven upper bound
//! is a genuine violation, never noise).
//!
//! All constraint kinds are positively homogeneous of degree one in a
//! designated layer, so the solver works on the unit-capacity surface and
//! scales the result by the constraint value. That makes the estimate
//! exactly linear (hence monotone) in the constraint and keeps restarts
//! comparable across constraint values.

pub mod checks;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{self, CapacityError};
use crate::linalg::{spectral_norm_default, LinalgError, Matrix};
use crate::network::{
    weighted_gradient, Activation, DeepONet, Mlp, NetworkError,
};
use crate::operator_data::OperatorSample;
use crate::seeds::stream_rng;
use crate::sphere::{maximize_on_sphere_product, SphereSearchConfig};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Error)]
pub enum RademacherError {
    #[error("infeasible constraint value {0} (must be >= 0)")]
    InfeasibleConstraint(f64),
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("budget parameter {what} must be positive")]
    BadBudget { what: &'static str },
    #[error("sample {index}: {what} has dimension {got}, expected {expected}")]
    SampleDim { index: usize, what: &'static str, expected: usize, got: usize },
    #[error("sign vector length {got} does not match dataset size {expected}")]
    SignsLength { expected: usize, got: usize },
    #[error("sign vectors must have entries +1 or -1, found {0}")]
    BadSign(f64),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A constrained DeepONet class whose empirical Rademacher complexity is
/// to be estimated.
#[derive(Debug, Clone)]
pub enum ClassSpec {
    /// Linear branch/trunk pairs with `|W_B^T W_T|_F <= c`.
    Linear11 { p: usize, d1: usize, d2: usize, c: f64 },
    /// Depth-2 ReLU models with the width-dependent max-entry capacity
    /// bounded by `c`.
    Relu22 { d1: usize, d2: usize, b1: usize, t1: usize, p: usize, c: f64 },
    /// Equal-depth bias-free models with composite measure bounded by `c`.
    Composite {
        branch_widths: Vec<usize>,
        trunk_widths: Vec<usize>,
        activation: Activation,
        c: f64,
    },
    /// Fixed inner nets with free unit vectors as the output layers
    /// (the reduced classes produced by peeling).
    Spheres { branch_inner: Mlp, trunk_inner: Mlp },
}

impl ClassSpec {
    pub fn constraint_value(&self) -> Option<f64> {
        match self {
            ClassSpec::Linear11 { c, .. }
            | ClassSpec::Relu22 { c, .. }
            | ClassSpec::Composite { c, .. } => Some(*c),
            ClassSpec::Spheres { .. } => None,
        }
    }

    pub fn input_dims(&self) -> (usize, usize) {
        match self {
            ClassSpec::Linear11 { d1, d2, .. } | ClassSpec::Relu22 { d1, d2, .. } => (*d1, *d2),
            ClassSpec::Composite { branch_widths, trunk_widths, .. } => {
                (branch_widths[0], trunk_widths[0])
            }
            ClassSpec::Spheres { branch_inner, trunk_inner } => {
                (branch_inner.input_dim(), trunk_inner.input_dim())
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            ClassSpec::Linear11 { p, d1, d2, c } => format!("linear11(p={p},d=({d1},{d2}),c={c})"),
            ClassSpec::Relu22 { b1, t1, p, c, .. } => {
                format!("relu22(b1={b1},t1={t1},p={p},c={c})")
            }
            ClassSpec::Composite { branch_widths, trunk_widths, c, .. } => {
                format!("composite({branch_widths:?},{trunk_widths:?},c={c})")
            }
            ClassSpec::Spheres { branch_inner, trunk_inner } => format!(
                "spheres(inner depths ({},{}))",
                branch_inner.depth(),
                trunk_inner.depth()
            ),
        }
    }
}

/// Budget for the inner supremum solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { restarts: 32, steps: 200, step_size: 0.05 }
    }
}

impl SolverConfig {
    /// Smaller budget for sweeps over many classes.
    pub fn light() -> Self {
        Self { restarts: 8, steps: 80, step_size: 0.05 }
    }
}

/// Outcome of one estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RademacherEstimate {
    /// `mean(per_epsilon_sups) / m`. A lower bound on the truth.
    pub value: f64,
    pub per_epsilon_sups: Vec<f64>,
    pub n_epsilon: usize,
    /// True when all `2^m` sign vectors were enumerated instead of sampled.
    pub enumerated: bool,
    pub seed: u64,
    pub inner_solver: String,
    pub class: String,
    /// Always true: the inner solver under-approximates each supremum.
    pub is_lower_bound: bool,
}

/// All `2^m` sign vectors, in mask order. Capped at `m <= 20`.
pub fn enumerate_sign_vectors(m: usize) -> Vec<Vec<f64>> {
    assert!(m <= 20, "enumeration limited to m <= 20");
    (0..1usize << m)
        .map(|mask| (0..m).map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 }).collect())
        .collect()
}

pub(crate) fn kahan_mean(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let y = x - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum / xs.len() as f64
}

fn validate_samples(
    samples: &[OperatorSample],
    d1: usize,
    d2: usize,
) -> Result<(), RademacherError> {
    if samples.is_empty() {
        return Err(RademacherError::EmptyDataset);
    }
    for (i, s) in samples.iter().enumerate() {
        if s.x_b.len() != d1 {
            return Err(RademacherError::SampleDim {
                index: i,
                what: "x_B",
                expected: d1,
                got: s.x_b.len(),
            });
        }
        if s.x_t.len() != d2 {
            return Err(RademacherError::SampleDim {
                index: i,
                what: "x_T",
                expected: d2,
                got: s.x_t.len(),
            });
        }
    }
    Ok(())
}

/// Exact supremum over unit `(v, w)` of
/// `sum_i eps_i (v . x_B_i)(w . x_T_i)`: the spectral norm of the signed
/// outer-product sum `sum_i eps_i x_B_i x_T_i^T`.
pub fn sup_rank_one_exact(
    samples: &[OperatorSample],
    signs: &[f64],
) -> Result<f64, RademacherError> {
    if samples.is_empty() {
        return Err(RademacherError::EmptyDataset);
    }
    if signs.len() != samples.len() {
        return Err(RademacherError::SignsLength { expected: samples.len(), got: signs.len() });
    }
    let pairs: Vec<(&[f64], &[f64])> =
        samples.iter().map(|s| (s.x_b.as_slice(), s.x_t.as_slice())).collect();
    sup_rank_one_features(&pairs, signs)
}

pub(crate) fn sup_rank_one_features(
    pairs: &[(&[f64], &[f64])],
    signs: &[f64],
) -> Result<f64, RademacherError> {
    for &s in signs {
        if s != 1.0 && s != -1.0 {
            return Err(RademacherError::BadSign(s));
        }
    }
    let (d1, d2) = (pairs[0].0.len(), pairs[0].1.len());
    let mut acc = Matrix::zeros(d1, d2);
    for (&(a, c), &e) in pairs.iter().zip(signs) {
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut acc.entries_mut()[i * d2..(i + 1) * d2];
            for (r, &cj) in row.iter_mut().zip(c) {
                *r += e * ai * cj;
            }
        }
    }
    Ok(spectral_norm_default(&acc)?)
}

/// Which degree-one capacity functional constrains the class.
#[derive(Debug, Clone, Copy)]
pub(crate) enum CapacityKind {
    Linear11,
    Relu22,
    Composite,
    Outer,
}

impl CapacityKind {
    fn eval(self, model: &DeepONet) -> Result<f64, CapacityError> {
        match self {
            CapacityKind::Linear11 => {
                capacity::capacity_11(model.branch().layer(0), model.trunk().layer(0))
            }
            CapacityKind::Relu22 => capacity::capacity_22(model),
            CapacityKind::Composite => capacity::composite_value(model),
            CapacityKind::Outer => capacity::capacity_outer(model),
        }
    }
}

/// Template for the ascent solver: architecture plus constraint kind, at
/// unit capacity.
#[derive(Debug, Clone)]
pub(crate) struct ClassTemplate {
    pub branch_widths: Vec<usize>,
    pub trunk_widths: Vec<usize>,
    pub activation: Activation,
    pub capacity: CapacityKind,
}

fn random_model(template: &ClassTemplate, rng: &mut ChaCha12Rng) -> DeepONet {
    let mut make = |widths: &[usize]| {
        let layers: Vec<Matrix> = widths
            .windows(2)
            .map(|w| {
                Matrix::new(w[1], w[0], (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .expect("finite entries")
            })
            .collect();
        Mlp::new(layers, template.activation).expect("valid widths")
    };
    let branch = make(&template.branch_widths);
    let trunk = make(&template.trunk_widths);
    DeepONet::new(branch, trunk).expect("shared output dim")
}

fn scale_branch_last(model: &DeepONet, s: f64) -> DeepONet {
    let n = model.branch().depth();
    let mut branch_scales = vec![1.0; n];
    branch_scales[n - 1] = s;
    let trunk_scales = vec![1.0; model.trunk().depth()];
    model.with_scaled_layers(&branch_scales, &trunk_scales).expect("same shapes")
}

fn project_unit_capacity(
    model: &DeepONet,
    kind: CapacityKind,
) -> Result<Option<DeepONet>, CapacityError> {
    let cap = kind.eval(model)?;
    if cap <= 1e-12 {
        return Ok(None);
    }
    Ok(Some(scale_branch_last(model, 1.0 / cap)))
}

fn objective(model: &DeepONet, pairs: &[(&[f64], &[f64])], signs: &[f64]) -> f64 {
    pairs
        .iter()
        .zip(signs)
        .map(|(&(a, c), &e)| e * model.forward(a, c).expect("validated dims"))
        .sum()
}

/// Flips the sign of the branch output layer when the objective is
/// negative; every supported capacity functional is invariant under the
/// flip, so the class is closed under negation and suprema are >= 0.
fn orient(model: DeepONet, value: f64) -> (DeepONet, f64) {
    if value < 0.0 {
        (scale_branch_last(&model, -1.0), -value)
    } else {
        (model, value)
    }
}

fn apply_step(model: &DeepONet, grad: &crate::network::ModelGrad, step: f64) -> DeepONet {
    let gn = grad.norm();
    let scale = if gn == 0.0 { 0.0 } else { step / gn };
    let mut branch_layers: Vec<Matrix> = model.branch().layers().to_vec();
    let mut trunk_layers: Vec<Matrix> = model.trunk().layers().to_vec();
    for (layer, g) in branch_layers.iter_mut().zip(&grad.branch) {
        for (v, gv) in layer.entries_mut().iter_mut().zip(g.entries()) {
            *v += scale * gv;
        }
    }
    for (layer, g) in trunk_layers.iter_mut().zip(&grad.trunk) {
        for (v, gv) in layer.entries_mut().iter_mut().zip(g.entries()) {
            *v += scale * gv;
        }
    }
    let branch = Mlp::new(branch_layers, model.branch().activation()).expect("same shapes");
    let trunk = Mlp::new(trunk_layers, model.trunk().activation()).expect("same shapes");
    DeepONet::new(branch, trunk).expect("same output dim")
}

/// Supremum of `sum_i signs_i model(pairs_i)` over the unit-capacity class,
/// from multistart projected ascent with backtracking. Extra starting
/// models (already in the class, any capacity > 0) can be supplied; they
/// are projected onto the unit surface first.
pub(crate) fn class_sup_for_signs(
    template: &ClassTemplate,
    pairs: &[(&[f64], &[f64])],
    signs: &[f64],
    solver: &SolverConfig,
    rng: &mut ChaCha12Rng,
    extra_starts: &[DeepONet],
) -> Result<f64, RademacherError> {
    let mut best = 0.0f64;
    let mut starts: Vec<DeepONet> = Vec::with_capacity(solver.restarts + extra_starts.len());
    for m in extra_starts {
        if let Some(p) = project_unit_capacity(m, template.capacity)? {
            starts.push(p);
        }
    }
    let mut attempts = 0;
    while starts.len() < solver.restarts + extra_starts.len() && attempts < 8 * solver.restarts {
        attempts += 1;
        let candidate = random_model(template, rng);
        if let Some(p) = project_unit_capacity(&candidate, template.capacity)? {
            starts.push(p);
        }
    }
    for start in starts {
        let v0 = objective(&start, pairs, signs);
        let (mut model, mut value) = orient(start, v0);
        let mut step = solver.step_size;
        'outer: for _ in 0..solver.steps {
            let grad = weighted_gradient(&model, pairs, signs)?;
            if grad.norm() == 0.0 {
                break;
            }
            loop {
                if step < 1e-14 {
                    break 'outer;
                }
                let stepped = apply_step(&model, &grad, step);
                let projected = match project_unit_capacity(&stepped, template.capacity)? {
                    Some(p) => p,
                    None => {
                        step *= 0.5;
                        continue;
                    }
                };
                let v = objective(&projected, pairs, signs);
                let (oriented, v) = orient(projected, v);
                if v > value {
                    model = oriented;
                    value = v;
                    step *= 1.2;
                    break;
                }
                step *= 0.5;
            }
        }
        best = best.max(value);
    }
    Ok(best)
}

/// Supremum over unit `(v, w)` of `sum_i signs_i (v . a_i)(w . c_i)` for
/// fixed feature vectors, via grid seeding plus ascent.
pub(crate) fn sphere_sup_for_signs(
    features_b: &[Vec<f64>],
    features_t: &[Vec<f64>],
    signs: &[f64],
    rng: &mut ChaCha12Rng,
) -> f64 {
    let d1 = features_b[0].len();
    let d2 = features_t[0].len();
    // The objective is bilinear: sum_i e_i (v.a_i)(w.c_i) = v^T M w.
    let mut m = Matrix::zeros(d1, d2);
    for ((a, c), &e) in features_b.iter().zip(features_t).zip(signs) {
        for (i, &ai) in a.iter().enumerate() {
            let row = &mut m.entries_mut()[i * d2..(i + 1) * d2];
            for (r, &cj) in row.iter_mut().zip(c) {
                *r += e * ai * cj;
            }
        }
    }
    let obj = |v: &[f64], w: &[f64]| {
        let mut acc = 0.0;
        for i in 0..d1 {
            let mut inner = 0.0;
            for j in 0..d2 {
                inner += m.get(i, j) * w[j];
            }
            acc += v[i] * inner;
        }
        acc
    };
    let grad = |v: &[f64], w: &[f64], gv: &mut [f64], gw: &mut [f64]| {
        for i in 0..d1 {
            gv[i] = (0..d2).map(|j| m.get(i, j) * w[j]).sum();
        }
        for j in 0..d2 {
            gw[j] = (0..d1).map(|i| m.get(i, j) * v[i]).sum();
        }
    };
    let cfg = SphereSearchConfig::default();
    maximize_on_sphere_product(d1, d2, obj, grad, &cfg, rng).value.max(0.0)
}

fn sign_vectors(
    m: usize,
    n_epsilon: usize,
    seed: u64,
) -> (Vec<Vec<f64>>, bool) {
    if m <= 20 && (1usize << m) <= n_epsilon {
        (enumerate_sign_vectors(m), true)
    } else {
        let mut rng = stream_rng(seed, "epsilon", 0);
        let list = (0..n_epsilon)
            .map(|_| (0..m).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        (list, false)
    }
}

/// [`estimate_empirical_rademacher_with`] at the default solver budget.
pub fn estimate_empirical_rademacher(
    spec: &ClassSpec,
    samples: &[OperatorSample],
    n_epsilon: usize,
    seed: u64,
) -> Result<RademacherEstimate, RademacherError> {
    estimate_empirical_rademacher_with(spec, samples, n_epsilon, seed, &SolverConfig::default())
}

/// Estimates the empirical Rademacher complexity of the class on the
/// dataset. Sign vectors are pre-generated from the seed (all `2^m`
/// enumerated when that fits inside `n_epsilon`); each sign vector owns a
/// derived RNG stream, so the result is independent of parallelism.
pub fn estimate_empirical_rademacher_with(
    spec: &ClassSpec,
    samples: &[OperatorSample],
    n_epsilon: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<RademacherEstimate, RademacherError> {
    if n_epsilon == 0 {
        return Err(RademacherError::BadBudget { what: "n_epsilon" });
    }
    if solver.restarts == 0 || solver.steps == 0 || !(solver.step_size > 0.0) {
        return Err(RademacherError::BadBudget { what: "solver budget" });
    }
    let (d1, d2) = spec.input_dims();
    validate_samples(samples, d1, d2)?;
    if let Some(c) = spec.constraint_value() {
        if c < 0.0 || !c.is_finite() {
            return Err(RademacherError::InfeasibleConstraint(c));
        }
    }
    let m = samples.len();
    let (signs_list, enumerated) = sign_vectors(m, n_epsilon, seed);

    let pairs: Vec<(&[f64], &[f64])> =
        samples.iter().map(|s| (s.x_b.as_slice(), s.x_t.as_slice())).collect();

    let sups: Vec<Result<f64, RademacherError>> = match spec {
        ClassSpec::Spheres { branch_inner, trunk_inner } => {
            let features_b: Result<Vec<Vec<f64>>, NetworkError> =
                samples.iter().map(|s| branch_inner.forward(&s.x_b)).collect();
            let features_t: Result<Vec<Vec<f64>>, NetworkError> =
                samples.iter().map(|s| trunk_inner.forward(&s.x_t)).collect();
            let (fb, ft) = (features_b?, features_t?);
            signs_list
                .par_iter()
                .enumerate()
                .map(|(k, signs)| {
                    let mut rng = stream_rng(seed, "inner-solver", k as u64);
                    Ok(sphere_sup_for_signs(&fb, &ft, signs, &mut rng))
                })
                .collect()
        }
        _ => {
            let c = spec.constraint_value().expect("non-sphere class");
            let template = match spec {
                ClassSpec::Linear11 { p, d1, d2, .. } => ClassTemplate {
                    branch_widths: vec![*d1, *p],
                    trunk_widths: vec![*d2, *p],
                    activation: Activation::Identity,
                    capacity: CapacityKind::Linear11,
                },
                ClassSpec::Relu22 { d1, d2, b1, t1, p, .. } => ClassTemplate {
                    branch_widths: vec![*d1, *b1, *p],
                    trunk_widths: vec![*d2, *t1, *p],
                    activation: Activation::Relu,
                    capacity: CapacityKind::Relu22,
                },
                ClassSpec::Composite { branch_widths, trunk_widths, activation, .. } => {
                    if branch_widths.len() != trunk_widths.len() {
                        return Err(RademacherError::Unsupported(
                            "composite class requires equal depths".to_string(),
                        ));
                    }
                    ClassTemplate {
                        branch_widths: branch_widths.clone(),
                        trunk_widths: trunk_widths.clone(),
                        activation: *activation,
                        capacity: CapacityKind::Composite,
                    }
                }
                ClassSpec::Spheres { .. } => unreachable!(),
            };
            signs_list
                .par_iter()
                .enumerate()
                .map(|(k, signs)| {
                    if c == 0.0 {
                        return Ok(0.0);
                    }
                    let mut rng = stream_rng(seed, "inner-solver", k as u64);
                    let unit = class_sup_for_signs(&template, &pairs, signs, solver, &mut rng, &[])?;
                    Ok(c * unit)
                })
                .collect()
        }
    };
    let sups = sups.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let value = kahan_mean(&sups) / m as f64;
    let inner_solver = match spec {
        ClassSpec::Spheres { .. } => "grid+ascent(default sphere search)".to_string(),
        _ => format!(
            "multistart-ascent(restarts={},steps={},step={})",
            solver.restarts, solver.steps, solver.step_size
        ),
    };
    Ok(RademacherEstimate {
        value,
        n_epsilon: sups.len(),
        per_epsilon_sups: sups,
        enumerated,
        seed,
        inner_solver,
        class: spec.describe(),
        is_lower_bound: true,
    })
}

/// The closed-form empirical Rademacher bound matching a class spec on a
/// dataset: the linear, depth-2 and composite bounds respectively, and the
/// rank-one data bound on the transformed features for sphere classes.
pub fn theoretical_bound(
    spec: &ClassSpec,
    samples: &[OperatorSample],
) -> Result<f64, RademacherError> {
    let (d1, d2) = spec.input_dims();
    validate_samples(samples, d1, d2)?;
    let m = samples.len() as f64;
    match spec {
        ClassSpec::Linear11 { c, .. } => Ok(capacity::bound_11(*c, samples)?),
        ClassSpec::Relu22 { b1, t1, c, .. } => Ok(capacity::bound_22(*c, *b1, *t1, samples)?),
        ClassSpec::Composite { branch_widths, activation, c, .. } => {
            let l = activation.contraction_constant().ok_or_else(|| {
                RademacherError::Unsupported(format!(
                    "activation {} admits no product-contraction constant",
                    activation.name()
                ))
            })?;
            let n = branch_widths.len() - 1;
            let data_term = capacity::sum_norm_products(samples).sqrt();
            Ok((2.0 * l).powi(n as i32 - 1) * c / m * data_term)
        }
        ClassSpec::Spheres { branch_inner, trunk_inner } => {
            let mut acc = 0.0;
            for s in samples {
                let a = branch_inner.forward(&s.x_b)?;
                let c = trunk_inner.forward(&s.x_t)?;
                acc += crate::linalg::vec_norm(&a).powi(2) * crate::linalg::vec_norm(&c).powi(2);
            }
            Ok(acc.sqrt() / m)
        }
    }
}
