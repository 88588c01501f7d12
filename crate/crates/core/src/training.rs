//! Training harness: the DeepONet squared loss, exact reverse-mode
//! gradients of loss plus the composite-measure regularizer, SGD/Adam
//! minibatch optimization, and generalization-gap reporting.
//!
//! The regularizer is the composite capacity measure itself; its gradient
//! uses the closed-form Frobenius products for the inner factors and the
//! absolute-value-summed outer term, with subgradient 0 at kinks. The
//! spectral-norm product reported alongside the measure is not
//! regularized.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{
    self, composite_measure, gen_bound, CapacityError, DataBounds, GenBound, OperatorBound,
};
use crate::linalg::{frobenius_norm, row_norms, Matrix};
use crate::network::{weighted_gradient, Activation, DeepONet, Mlp, ModelGrad, NetworkError};
use crate::operator_data::OperatorSample;
use crate::seeds::stream_rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch must be non-empty")]
    EmptyBatch,
    #[error("model input dims ({model_b}, {model_t}) do not match data dims ({data_b}, {data_t})")]
    DimMismatch { model_b: usize, model_t: usize, data_b: usize, data_t: usize },
    #[error("regularized objectives require a bias-free model")]
    BiasedWithRegularizer,
    #[error("training diverged at step {step}; returning last finite state")]
    Diverged { step: usize, run: Box<TrainRun> },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
}

/// First-order optimizer. Constant learning rate only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => *lr,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight on the composite capacity measure; 0 disables the
    /// regularizer.
    pub lambda: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Record a history row every this many epochs.
    pub eval_every: usize,
    /// Confidence level for the per-row gap bound.
    pub gap_delta: f64,
    /// Operator sup constant for the gap bound; defaults to the max |y|
    /// over the training set when absent.
    pub sup_g: Option<f64>,
}

impl TrainConfig {
    pub fn new(
        lambda: f64,
        optimizer: Optimizer,
        epochs: usize,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Self {
            lambda,
            optimizer,
            epochs,
            batch_size,
            seed,
            eval_every: 1,
            gap_delta: 0.1,
            sup_g: None,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.optimizer.learning_rate() >= 0.0) {
            return Err(TrainError::BadConfig("learning rate must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::BadConfig(
                "epochs, batch_size and eval_every must be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::BadConfig("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub composite: Option<f64>,
    pub gap_bound_with_factor: Option<f64>,
    pub gap_bound_without_factor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRun {
    #[serde(skip)]
    pub model: Option<DeepONet>,
    pub history: Vec<HistoryRow>,
    pub config: TrainConfig,
}

impl TrainRun {
    pub fn final_model(&self) -> &DeepONet {
        self.model.as_ref().expect("train() always sets the model")
    }

    /// CSV export: epoch, train_loss, test_loss, composite,
    /// gap_bound_with_factor, gap_bound_without_factor. Missing values
    /// render as empty cells.
    pub fn history_csv(&self) -> String {
        let mut out = String::from(
            "epoch,train_loss,test_loss,composite,gap_bound_with_factor,gap_bound_without_factor\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for row in &self.history {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.epoch,
                row.train_loss,
                row.test_loss,
                opt(row.composite),
                opt(row.gap_bound_with_factor),
                opt(row.gap_bound_without_factor),
            ));
        }
        out
    }
}

fn check_dims(model: &DeepONet, samples: &[OperatorSample]) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let (d1, d2) = (model.branch().input_dim(), model.trunk().input_dim());
    for s in samples {
        if s.x_b.len() != d1 || s.x_t.len() != d2 {
            return Err(TrainError::DimMismatch {
                model_b: d1,
                model_t: d2,
                data_b: s.x_b.len(),
                data_t: s.x_t.len(),
            });
        }
    }
    Ok(())
}

/// Mean squared DeepONet loss `(1/2m) sum (y_i - model(x_i))^2`.
pub fn don_loss(model: &DeepONet, samples: &[OperatorSample]) -> Result<f64, TrainError> {
    check_dims(model, samples)?;
    let mut acc = 0.0;
    for s in samples {
        let r = s.y - model.forward(&s.x_b, &s.x_t)?;
        acc += r * r;
    }
    Ok(acc / (2.0 * samples.len() as f64))
}

/// Value and exact gradient of the composite measure for a bias-free
/// equal-depth model. Kinks (zero entries of the outer cross matrix, zero
/// rows, zero layers) take subgradient 0.
pub fn composite_gradient(model: &DeepONet) -> Result<(f64, ModelGrad), TrainError> {
    if !model.is_bias_free() {
        return Err(TrainError::BiasedWithRegularizer);
    }
    let n = model.branch().depth();
    if model.trunk().depth() != n || n < 2 {
        return Err(TrainError::Capacity(CapacityError::Unsupported(
            "composite gradient needs equal depths >= 2".into(),
        )));
    }
    let b_last = model.branch().layer(n - 1);
    let t_last = model.trunk().layer(n - 1);
    let b_prev = model.branch().layer(n - 2);
    let t_prev = model.trunk().layer(n - 2);
    let r = row_norms(b_prev);
    let s = row_norms(t_prev);
    let cross = b_last.transpose_matmul(t_last);

    let mut outer = 0.0;
    for (k1, rk) in r.iter().enumerate() {
        for (k2, sk) in s.iter().enumerate() {
            outer += cross.get(k1, k2).abs() * rk * sk;
        }
    }
    let inner: Vec<f64> = (2..=n.saturating_sub(1))
        .map(|k| {
            capacity::capacity_inner_exact(
                model.branch().layer(n - k - 1),
                model.trunk().layer(n - k - 1),
            )
        })
        .collect();
    let inner_product: f64 = inner.iter().product();
    let composite = outer * inner_product;

    let mut grad = ModelGrad::zeros_like(model);

    // Outer-term gradients, scaled by the product of inner factors.
    // d outer / d B_last = T_last * G^T with G = sign(cross) .* (r s^T).
    let mut g_signed = Matrix::zeros(cross.rows(), cross.cols());
    for k1 in 0..cross.rows() {
        for k2 in 0..cross.cols() {
            let c = cross.get(k1, k2);
            let sign = if c == 0.0 { 0.0 } else { c.signum() };
            g_signed.set(k1, k2, sign * r[k1] * s[k2]);
        }
    }
    for j in 0..b_last.rows() {
        for k1 in 0..b_last.cols() {
            let mut acc = 0.0;
            for k2 in 0..t_last.cols() {
                acc += g_signed.get(k1, k2) * t_last.get(j, k2);
            }
            grad.branch[n - 1].set(j, k1, acc * inner_product);
        }
    }
    for j in 0..t_last.rows() {
        for k2 in 0..t_last.cols() {
            let mut acc = 0.0;
            for k1 in 0..b_last.cols() {
                acc += g_signed.get(k1, k2) * b_last.get(j, k1);
            }
            grad.trunk[n - 1].set(j, k2, acc * inner_product);
        }
    }
    // d outer / d B_prev row k1 = (sum_k2 |cross| s_k2) * row / |row|.
    for k1 in 0..b_prev.rows() {
        if r[k1] == 0.0 {
            continue;
        }
        let coeff: f64 =
            (0..t_prev.rows()).map(|k2| cross.get(k1, k2).abs() * s[k2]).sum::<f64>() / r[k1];
        for j in 0..b_prev.cols() {
            grad.branch[n - 2].set(k1, j, coeff * b_prev.get(k1, j) * inner_product);
        }
    }
    for k2 in 0..t_prev.rows() {
        if s[k2] == 0.0 {
            continue;
        }
        let coeff: f64 =
            (0..b_prev.rows()).map(|k1| cross.get(k1, k2).abs() * r[k1]).sum::<f64>() / s[k2];
        for j in 0..t_prev.cols() {
            grad.trunk[n - 2].set(k2, j, coeff * t_prev.get(k2, j) * inner_product);
        }
    }
    // Inner factors: d (|B|_F |T|_F) / d B = |T|_F * B / |B|_F, each scaled
    // by composite / own factor.
    for (i, k) in (2..=n.saturating_sub(1)).enumerate() {
        let idx = n - k - 1;
        let fac = inner[i];
        if fac == 0.0 {
            continue; // zero layer zeroes the measure; subgradient 0
        }
        let rest = outer * inner_product / fac;
        let bl = model.branch().layer(idx);
        let tl = model.trunk().layer(idx);
        let (fb, ft) = (frobenius_norm(bl), frobenius_norm(tl));
        if fb > 0.0 {
            let c = rest * ft / fb;
            for (gv, v) in grad.branch[idx].entries_mut().iter_mut().zip(bl.entries()) {
                *gv = c * v;
            }
        }
        if ft > 0.0 {
            let c = rest * fb / ft;
            for (gv, v) in grad.trunk[idx].entries_mut().iter_mut().zip(tl.entries()) {
                *gv = c * v;
            }
        }
    }
    Ok((composite, grad))
}

/// Exact reverse-mode gradient of
/// `don_loss(model, batch) + lambda * composite_measure(model)`.
pub fn objective_grad(
    model: &DeepONet,
    batch: &[OperatorSample],
    lambda: f64,
) -> Result<ModelGrad, TrainError> {
    check_dims(model, batch)?;
    if lambda > 0.0 && !model.is_bias_free() {
        return Err(TrainError::BiasedWithRegularizer);
    }
    let m = batch.len() as f64;
    let coeffs: Vec<f64> = batch
        .iter()
        .map(|s| Ok::<f64, TrainError>((model.forward(&s.x_b, &s.x_t)? - s.y) / m))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(&[f64], &[f64])> =
        batch.iter().map(|s| (s.x_b.as_slice(), s.x_t.as_slice())).collect();
    let mut grad = weighted_gradient(model, &pairs, &coeffs)?;
    if lambda > 0.0 {
        let (_, mut reg) = composite_gradient(model)?;
        reg.scale(lambda);
        grad.add(&reg);
    }
    Ok(grad)
}

/// Worst-case distance to a nondifferentiability of the objective at the
/// current parameters: the smallest pre-activation magnitude over the
/// batch, and with a regularizer also the smallest outer cross-matrix
/// entry, row norm and inner Frobenius norm. Finite-difference audits
/// skip coordinates where this is tiny.
pub fn min_kink_distance(
    model: &DeepONet,
    batch: &[OperatorSample],
    lambda: f64,
) -> Result<f64, TrainError> {
    check_dims(model, batch)?;
    let mut min_gap = f64::INFINITY;
    for s in batch {
        for (mlp, x) in [(model.branch(), &s.x_b), (model.trunk(), &s.x_t)] {
            if mlp.activation() == Activation::Identity || mlp.depth() == 1 {
                continue;
            }
            let trace = mlp.forward_trace(x)?;
            for z in &trace.preacts[..mlp.depth() - 1] {
                for v in z {
                    min_gap = min_gap.min(v.abs());
                }
            }
        }
    }
    if lambda > 0.0 {
        let n = model.branch().depth();
        let cross = model.branch().layer(n - 1).transpose_matmul(model.trunk().layer(n - 1));
        for v in cross.entries() {
            min_gap = min_gap.min(v.abs());
        }
        for layer in [model.branch().layer(n - 2), model.trunk().layer(n - 2)] {
            for rn in row_norms(layer) {
                min_gap = min_gap.min(rn);
            }
        }
        for k in 2..=n.saturating_sub(1) {
            for layer in [model.branch().layer(n - k - 1), model.trunk().layer(n - k - 1)] {
                min_gap = min_gap.min(frobenius_norm(layer));
            }
        }
    }
    Ok(min_gap)
}

/// Glorot-style init: entries i.i.d. uniform
/// `+- sqrt(6 / (fan_in + fan_out))`, bias-free.
pub fn init_model(
    branch_widths: &[usize],
    trunk_widths: &[usize],
    activation: Activation,
    seed: u64,
) -> DeepONet {
    let mut rng = stream_rng(seed, "init", 0);
    let mut make = |widths: &[usize]| {
        let layers: Vec<Matrix> = widths
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Matrix::new(
                    w[1],
                    w[0],
                    (0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)).collect(),
                )
                .expect("finite entries")
            })
            .collect();
        Mlp::new(layers, activation).expect("valid widths")
    };
    let branch = make(branch_widths);
    let trunk = make(trunk_widths);
    DeepONet::new(branch, trunk).expect("shared output dim")
}

struct OptimizerState {
    first: ModelGrad,
    second: ModelGrad,
    t: usize,
}

fn walk_params(
    model: &mut DeepONet,
    grad: &ModelGrad,
    state: &mut OptimizerState,
    mut f: impl FnMut(&mut f64, f64, &mut f64, &mut f64),
) {
    {
        let mlp = model.branch_mut();
        for k in 0..grad.branch.len() {
            let g = &grad.branch[k];
            let m1 = &mut state.first.branch[k];
            let m2 = &mut state.second.branch[k];
            let layer = &mut mlp.layers_mut()[k];
            for i in 0..g.entries().len() {
                f(
                    &mut layer.entries_mut()[i],
                    g.entries()[i],
                    &mut m1.entries_mut()[i],
                    &mut m2.entries_mut()[i],
                );
            }
        }
        if let Some(gb) = grad.branch_biases.as_ref() {
            if let Some(bs) = mlp.biases_mut() {
                let m1s = state.first.branch_biases.as_mut().expect("state mirrors model");
                let m2s = state.second.branch_biases.as_mut().expect("state mirrors model");
                for (k, b) in bs.iter_mut().enumerate() {
                    for i in 0..b.len() {
                        f(&mut b[i], gb[k][i], &mut m1s[k][i], &mut m2s[k][i]);
                    }
                }
            }
        }
    }
    {
        let mlp = model.trunk_mut();
        for k in 0..grad.trunk.len() {
            let g = &grad.trunk[k];
            let m1 = &mut state.first.trunk[k];
            let m2 = &mut state.second.trunk[k];
            let layer = &mut mlp.layers_mut()[k];
            for i in 0..g.entries().len() {
                f(
                    &mut layer.entries_mut()[i],
                    g.entries()[i],
                    &mut m1.entries_mut()[i],
                    &mut m2.entries_mut()[i],
                );
            }
        }
        if let Some(gb) = grad.trunk_biases.as_ref() {
            if let Some(bs) = mlp.biases_mut() {
                let m1s = state.first.trunk_biases.as_mut().expect("state mirrors model");
                let m2s = state.second.trunk_biases.as_mut().expect("state mirrors model");
                for (k, b) in bs.iter_mut().enumerate() {
                    for i in 0..b.len() {
                        f(&mut b[i], gb[k][i], &mut m1s[k][i], &mut m2s[k][i]);
                    }
                }
            }
        }
    }
}

fn optimizer_step(
    model: &mut DeepONet,
    grad: &ModelGrad,
    opt: &Optimizer,
    state: &mut OptimizerState,
) {
    state.t += 1;
    match *opt {
        Optimizer::Sgd { lr, momentum } => {
            walk_params(model, grad, state, |theta, g, m1, _| {
                *m1 = momentum * *m1 + g;
                *theta -= lr * *m1;
            });
        }
        Optimizer::Adam { lr, beta1, beta2, eps } => {
            let bc1 = 1.0 - beta1.powi(state.t as i32);
            let bc2 = 1.0 - beta2.powi(state.t as i32);
            walk_params(model, grad, state, |theta, g, m1, m2| {
                *m1 = beta1 * *m1 + (1.0 - beta1) * g;
                *m2 = beta2 * *m2 + (1.0 - beta2) * g * g;
                *theta -= lr * (*m1 / bc1) / ((*m2 / bc2).sqrt() + eps);
            });
        }
    }
}

fn model_is_finite(model: &DeepONet) -> bool {
    model
        .branch()
        .layers()
        .iter()
        .chain(model.trunk().layers())
        .all(|m| m.entries().iter().all(|v| v.is_finite()))
}

fn gap_bounds_for(
    model: &DeepONet,
    train: &[OperatorSample],
    delta: f64,
    sup_g: f64,
) -> Option<(f64, GenBound)> {
    let report = composite_measure(model).ok()?;
    let bounds = DataBounds::from_samples(train).ok()?;
    let op = OperatorBound::new(sup_g, delta).ok()?;
    let activations = (model.branch().activation(), model.trunk().activation());
    let gb = gen_bound(&report, &bounds, &op, activations).ok()?;
    Some((report.composite, gb))
}

/// Runs minibatch first-order training. Deterministic given the config
/// seed: batch order reshuffles per epoch from a derived stream. On loss
/// divergence the error carries the run up to the last finite state.
pub fn train(
    cfg: &TrainConfig,
    model0: &DeepONet,
    train_set: &[OperatorSample],
    test_set: &[OperatorSample],
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    check_dims(model0, train_set)?;
    check_dims(model0, test_set)?;
    if cfg.lambda > 0.0 && !model0.is_bias_free() {
        return Err(TrainError::BiasedWithRegularizer);
    }
    let sup_g = cfg
        .sup_g
        .unwrap_or_else(|| train_set.iter().map(|s| s.y.abs()).fold(0.0, f64::max).max(1e-12));

    let mut model = model0.clone();
    let mut state = OptimizerState {
        first: ModelGrad::zeros_like(&model),
        second: ModelGrad::zeros_like(&model),
        t: 0,
    };
    let mut history = Vec::new();
    let mut last_good = model.clone();
    let mut step = 0usize;
    let mut indices: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, "shuffle", epoch as u64);
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(cfg.batch_size) {
            let batch: Vec<OperatorSample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let grad = objective_grad(&model, &batch, cfg.lambda)?;
            optimizer_step(&mut model, &grad, &cfg.optimizer, &mut state);
            step += 1;
            if !model_is_finite(&model) {
                let run = TrainRun { model: Some(last_good), history, config: cfg.clone() };
                return Err(TrainError::Diverged { step, run: Box::new(run) });
            }
        }
        let train_loss = don_loss(&model, train_set)?;
        if !train_loss.is_finite() {
            let run = TrainRun { model: Some(last_good), history, config: cfg.clone() };
            return Err(TrainError::Diverged { step, run: Box::new(run) });
        }
        last_good = model.clone();
        if (epoch + 1) % cfg.eval_every == 0 {
            let test_loss = don_loss(&model, test_set)?;
            let gaps = gap_bounds_for(&model, train_set, cfg.gap_delta, sup_g);
            history.push(HistoryRow {
                epoch: epoch + 1,
                train_loss,
                test_loss,
                composite: gaps.as_ref().map(|(c, _)| *c),
                gap_bound_with_factor: gaps.as_ref().map(|(_, g)| g.gap_with_loss_factor),
                gap_bound_without_factor: gaps.as_ref().map(|(_, g)| g.gap_without_loss_factor),
            });
        }
    }
    Ok(TrainRun { model: Some(model), history, config: cfg.clone() })
}

/// Empirical gap (test loss minus train loss) next to the theoretical
/// bound; the bound is often vacuously large and is reported, not
/// asserted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapReport {
    pub train_loss: f64,
    pub test_loss: f64,
    pub empirical_gap: f64,
    pub bound: GenBound,
    /// `empirical_gap / gap_without_loss_factor` when the bound is
    /// positive.
    pub ratio_without_factor: Option<f64>,
}

pub fn gen_gap_report(
    model: &DeepONet,
    train_set: &[OperatorSample],
    test_set: &[OperatorSample],
    bounds: &DataBounds,
    op: &OperatorBound,
) -> Result<GapReport, TrainError> {
    let train_loss = don_loss(model, train_set)?;
    let test_loss = don_loss(model, test_set)?;
    let report = composite_measure(model)?;
    let activations = (model.branch().activation(), model.trunk().activation());
    let bound = gen_bound(&report, bounds, op, activations)?;
    let empirical_gap = test_loss - train_loss;
    let ratio_without_factor = (bound.gap_without_loss_factor > 0.0)
        .then(|| empirical_gap / bound.gap_without_loss_factor);
    Ok(GapReport { train_loss, test_loss, empirical_gap, bound, ratio_without_factor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_data::{make_antiderivative_dataset, AntiderivativeConfig};

    fn toy_samples(n: usize, d1: usize, d2: usize, seed: u64) -> Vec<OperatorSample> {
        let mut rng = stream_rng(seed, "toy", 0);
        (0..n)
            .map(|_| OperatorSample {
                x_b: (0..d1).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                x_t: (0..d2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                y: rng.gen_range(-1.0..1.0),
            })
            .collect()
    }

    #[test]
    fn loss_cases() {
        let model = init_model(&[2, 3, 1], &[1, 3, 1], Activation::Abs, 5);
        let mut samples = toy_samples(6, 2, 1, 9);
        for s in &mut samples {
            s.y = model.forward(&s.x_b, &s.x_t).unwrap();
        }
        assert!(don_loss(&model, &samples).unwrap() < 1e-30);

        let one = OperatorSample { x_b: vec![0.0, 0.0], x_t: vec![0.0], y: 1.0 };
        let loss = don_loss(&model, &[one]).unwrap();
        assert!((loss - 0.5).abs() < 1e-15, "{loss}");

        let samples = toy_samples(6, 2, 1, 10);
        let mut perm = samples.clone();
        perm.reverse();
        assert_eq!(don_loss(&model, &samples).unwrap(), don_loss(&model, &perm).unwrap());
    }

    #[test]
    fn linear_single_layer_gradient_matches_hand_formula() {
        // Single linear layers: pred = <W_B x_B, W_T x_T>, and
        // dLoss/dW_B = (1/m) sum (pred - y) (W_T x_T) x_B^T.
        let wb = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.3, 0.9]]).unwrap();
        let wt = Matrix::from_rows(&[vec![1.1], vec![-0.4]]).unwrap();
        let model = DeepONet::new(
            Mlp::new(vec![wb.clone()], Activation::Identity).unwrap(),
            Mlp::new(vec![wt.clone()], Activation::Identity).unwrap(),
        )
        .unwrap();
        let samples = toy_samples(4, 2, 1, 17);
        let grad = objective_grad(&model, &samples, 0.0).unwrap();
        let m = samples.len() as f64;
        let mut expect = Matrix::zeros(2, 2);
        for s in &samples {
            let pred = model.forward(&s.x_b, &s.x_t).unwrap();
            let tvec = wt.matvec(&s.x_t);
            for i in 0..2 {
                for j in 0..2 {
                    let v = expect.get(i, j) + (pred - s.y) / m * tvec[i] * s.x_b[j];
                    expect.set(i, j, v);
                }
            }
        }
        for (a, b) in grad.branch[0].entries().iter().zip(expect.entries()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_residual_zero_lambda_gives_zero_gradient() {
        let model = init_model(&[2, 4, 2], &[1, 4, 2], Activation::Abs, 3);
        let mut samples = toy_samples(5, 2, 1, 4);
        for s in &mut samples {
            s.y = model.forward(&s.x_b, &s.x_t).unwrap();
        }
        let grad = objective_grad(&model, &samples, 0.0).unwrap();
        assert_eq!(grad.norm(), 0.0);
    }

    fn fd_objective(model: &DeepONet, samples: &[OperatorSample], lambda: f64) -> f64 {
        let mut v = don_loss(model, samples).unwrap();
        if lambda > 0.0 {
            v += lambda * composite_gradient(model).unwrap().0;
        }
        v
    }

    #[test]
    fn gradient_matches_finite_differences_away_from_kinks() {
        let mut rng = stream_rng(77, "fdsel", 0);
        for trial in 0..6u64 {
            let lambda = if trial % 2 == 0 { 0.0 } else { 0.01 };
            let model = init_model(&[3, 4, 4, 2], &[2, 4, 4, 2], Activation::Abs, 100 + trial);
            let samples = toy_samples(4, 3, 2, 200 + trial);
            let grad = objective_grad(&model, &samples, lambda).unwrap();
            let h = 1e-5;
            let mut checked = 0;
            let mut attempts = 0;
            while checked < 20 && attempts < 400 {
                attempts += 1;
                let side = rng.gen_range(0..2usize);
                let layer = rng.gen_range(0..3usize);
                let (rows, cols) = {
                    let l = if side == 0 {
                        model.branch().layer(layer)
                    } else {
                        model.trunk().layer(layer)
                    };
                    (l.rows(), l.cols())
                };
                let i = rng.gen_range(0..rows);
                let j = rng.gen_range(0..cols);
                let perturb = |delta: f64| {
                    let mut m = model.clone();
                    let l = if side == 0 {
                        &mut m.branch_mut().layers_mut()[layer]
                    } else {
                        &mut m.trunk_mut().layers_mut()[layer]
                    };
                    let v = l.get(i, j);
                    l.set(i, j, v + delta);
                    m
                };
                let plus = perturb(h);
                let minus = perturb(-h);
                // Skip coordinates whose neighborhood crosses a kink.
                let gap = min_kink_distance(&model, &samples, lambda)
                    .unwrap()
                    .min(min_kink_distance(&plus, &samples, lambda).unwrap())
                    .min(min_kink_distance(&minus, &samples, lambda).unwrap());
                if gap < 1e-4 {
                    continue;
                }
                let fd = (fd_objective(&plus, &samples, lambda)
                    - fd_objective(&minus, &samples, lambda))
                    / (2.0 * h);
                let an = if side == 0 {
                    grad.branch[layer].get(i, j)
                } else {
                    grad.trunk[layer].get(i, j)
                };
                let denom = fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom <= 1e-5,
                    "trial {trial} side {side} layer {layer} ({i},{j}): fd {fd} vs {an}"
                );
                checked += 1;
            }
            assert!(checked >= 10, "too few checkable coordinates ({checked})");
        }
    }

    #[test]
    fn composite_gradient_value_agrees_with_report() {
        let model = init_model(&[3, 4, 4, 2], &[2, 3, 4, 2], Activation::Abs, 8);
        let (value, _) = composite_gradient(&model).unwrap();
        let report = composite_measure(&model).unwrap();
        assert!((value - report.composite).abs() <= 1e-12 * report.composite.max(1.0));
    }

    #[test]
    fn train_zero_lr_is_identity() {
        let model = init_model(&[3, 4, 2], &[1, 4, 2], Activation::Abs, 1);
        let data = toy_samples(8, 3, 1, 2);
        let cfg = TrainConfig::new(0.0, Optimizer::Sgd { lr: 0.0, momentum: 0.0 }, 3, 4, 7);
        let run = train(&cfg, &model, &data, &data).unwrap();
        assert_eq!(run.final_model(), &model);
        let losses: Vec<f64> = run.history.iter().map(|r| r.train_loss).collect();
        assert!(losses.windows(2).all(|w| w[0] == w[1]), "flat history: {losses:?}");
    }

    #[test]
    fn train_same_seed_identical_history() {
        let model = init_model(&[4, 6, 3], &[1, 6, 3], Activation::Abs, 11);
        let cfg_data = AntiderivativeConfig::default_with_sensors(4);
        let ds = make_antiderivative_dataset(&cfg_data, 32, 5).unwrap();
        let cfg = TrainConfig::new(0.0, Optimizer::adam(1e-2), 5, 8, 13);
        let a = train(&cfg, &model, &ds.samples, &ds.samples).unwrap();
        let b = train(&cfg, &model, &ds.samples, &ds.samples).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
        assert_eq!(a.final_model(), b.final_model());
    }

    #[test]
    fn train_reduces_loss_on_antiderivative() {
        let cfg_data = AntiderivativeConfig::default_with_sensors(8);
        let ds = make_antiderivative_dataset(&cfg_data, 64, 21).unwrap();
        let model = init_model(&[8, 16, 8], &[1, 16, 8], Activation::Abs, 3);
        let cfg = TrainConfig::new(0.0, Optimizer::adam(3e-3), 60, 16, 5);
        let initial = don_loss(&model, &ds.samples).unwrap();
        let run = train(&cfg, &model, &ds.samples, &ds.samples).unwrap();
        let fin = run.history.last().unwrap().train_loss;
        assert!(fin < 0.5 * initial, "loss {initial} -> {fin}");
    }

    #[test]
    fn history_csv_shape() {
        let model = init_model(&[2, 3, 2], &[1, 3, 2], Activation::Abs, 2);
        let data = toy_samples(6, 2, 1, 3);
        let mut cfg = TrainConfig::new(0.0, Optimizer::adam(1e-3), 4, 3, 5);
        cfg.eval_every = 2;
        let run = train(&cfg, &model, &data, &data).unwrap();
        assert_eq!(run.history.len(), 2);
        let csv = run.history_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("epoch,train_loss,test_loss,composite"));
        assert_eq!(lines[1].split(',').count(), 6);
    }

    #[test]
    fn gap_report_identical_sets_zero_gap() {
        let model = init_model(&[3, 4, 2], &[1, 4, 2], Activation::Abs, 6);
        let data = toy_samples(10, 3, 1, 7);
        let bounds = DataBounds::from_samples(&data).unwrap();
        let op = OperatorBound::new(1.0, 0.1).unwrap();
        let report = gen_gap_report(&model, &data, &data, &bounds, &op).unwrap();
        assert_eq!(report.empirical_gap, 0.0);
        assert!(report.bound.gap_without_loss_factor >= 0.0);
    }

    #[test]
    fn gap_bound_monotone_in_composite() {
        // Scaling the branch output layer up scales the composite (and P)
        // without touching the data terms, so the bound must grow.
        let model = init_model(&[3, 4, 2], &[1, 4, 2], Activation::Abs, 9);
        let scaled = model.with_scaled_layers(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        let data = toy_samples(10, 3, 1, 8);
        let bounds = DataBounds::from_samples(&data).unwrap();
        let op = OperatorBound::new(1.0, 0.1).unwrap();
        let a = gen_gap_report(&model, &data, &data, &bounds, &op).unwrap();
        let b = gen_gap_report(&scaled, &data, &data, &bounds, &op).unwrap();
        assert!(
            b.bound.gap_without_loss_factor > a.bound.gap_without_loss_factor,
            "{} vs {}",
            b.bound.gap_without_loss_factor,
            a.bound.gap_without_loss_factor
        );
    }

    #[test]
    fn divergent_training_reports_last_good_state() {
        let model = init_model(&[2, 3, 2], &[1, 3, 2], Activation::Abs, 30);
        let data = toy_samples(8, 2, 1, 31);
        // An absurd learning rate blows the parameters up quickly.
        let cfg = TrainConfig::new(0.0, Optimizer::Sgd { lr: 1e12, momentum: 0.0 }, 50, 4, 1);
        match train(&cfg, &model, &data, &data) {
            Err(TrainError::Diverged { run, .. }) => {
                assert!(model_is_finite(run.final_model()));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn regularizer_shrinks_composite() {
        let cfg_data = AntiderivativeConfig::default_with_sensors(6);
        let ds = make_antiderivative_dataset(&cfg_data, 48, 33).unwrap();
        let model = init_model(&[6, 12, 6], &[1, 12, 6], Activation::Abs, 41);
        let base = TrainConfig::new(0.0, Optimizer::adam(3e-3), 40, 16, 9);
        let reg = TrainConfig { lambda: 1e-2, ..base.clone() };
        let run0 = train(&base, &model, &ds.samples, &ds.samples).unwrap();
        let run1 = train(&reg, &model, &ds.samples, &ds.samples).unwrap();
        let c0 = composite_measure(run0.final_model()).unwrap().composite;
        let c1 = composite_measure(run1.final_model()).unwrap().composite;
        assert!(c1 < c0, "composite with regularizer {c1} vs without {c0}");
    }
}
