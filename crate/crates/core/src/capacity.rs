//! Norm-based capacity measures for DeepONets and the closed-form bound
//! calculators built on them.
//!
//! For a bias-free model with branch layers `B_1..B_n` and trunk layers
//! `T_1..T_n` (equal depth, common output dimension `p`):
//!
//! - the outer measure couples the last two layers of each net,
//!   `C_outer = sum_{k1,k2} |(B_n^T T_n)_{k1,k2}| * |B_{n-1,k1}| * |T_{n-1,k2}|`
//!   (row 2-norms);
//! - each inner measure couples one deeper layer pair through a supremum
//!   over unit directions, which collapses to
//!   `C_inner(B, T) = |B|_F * |T|_F`;
//! - the composite measure `C_outer * prod C_inner` upper-bounds (up to the
//!   `(2L)^{n-1} / m` factor) the empirical Rademacher complexity of the
//!   model class at that capacity, and is the regularizer used by
//!   [`crate::training`].
//!
//! Absolute values are applied to the entries of `B_n^T T_n`: the measure
//! stays a sound upper bound, cannot go negative, and keeps the scaling
//! invariance. The supremum definition of the inner measure is retained as
//! a grid+ascent audit oracle ([`capacity_inner_oracle`]).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    frobenius_norm, row_norms, spectral_norm_default, vec_norm, LinalgError, Matrix,
};
use crate::network::{Activation, DeepONet};
use crate::operator_data::OperatorSample;
use crate::sphere::{maximize_on_sphere_product, SphereSearchConfig};

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("operation requires depth {required}, model has ({branch}, {trunk})")]
    WrongDepth { required: &'static str, branch: usize, trunk: usize },
    #[error("capacity measures are defined only for bias-free models")]
    Biased,
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("argument {name} out of range: {value}")]
    BadArgument { name: &'static str, value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Per-layer inner capacity, both by the closed form and by the rank-one
/// spectral surrogate (they agree to power-iteration tolerance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InnerCapacity {
    /// Offset from the output: `k = 2` is the layer below the outer pair.
    pub k: usize,
    pub exact: f64,
    pub surrogate: f64,
}

/// Full capacity accounting for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapacityReport {
    pub depth: usize,
    pub c_outer: f64,
    pub c_inner: Vec<InnerCapacity>,
    /// `c_outer * prod(exact inner capacities)`; equals `c_outer` at depth 2.
    pub composite: f64,
    /// Product of per-layer spectral norms `prod |B_i| * |T_i|`.
    pub lipschitz_product: f64,
}

impl CapacityReport {
    /// One-row CSV rendering (header + row) with per-depth inner columns.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("depth,c_outer,composite,lipschitz_product");
        let mut row = format!(
            "{},{},{},{}",
            self.depth, self.c_outer, self.composite, self.lipschitz_product
        );
        for inner in &self.c_inner {
            header.push_str(&format!(",c_inner_exact_k{},c_inner_surrogate_k{}", inner.k, inner.k));
            row.push_str(&format!(",{},{}", inner.exact, inner.surrogate));
        }
        header.push('\n');
        header.push_str(&row);
        header.push('\n');
        header
    }
}

/// Data-distribution bounds entering the average Rademacher and
/// generalization bounds: root-mean-square bounds on the input norms and
/// sup-norm bounds, plus the sample count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataBounds {
    /// Bound with `E[|x_B|^2] <= rms_branch^2`.
    pub rms_branch: f64,
    pub rms_trunk: f64,
    /// Bound with `|x_B| <= sup_branch` pointwise.
    pub sup_branch: f64,
    pub sup_trunk: f64,
    pub sample_count: usize,
}

impl DataBounds {
    pub fn new(
        rms_branch: f64,
        rms_trunk: f64,
        sup_branch: f64,
        sup_trunk: f64,
        sample_count: usize,
    ) -> Result<Self, CapacityError> {
        for (name, v) in [
            ("rms_branch", rms_branch),
            ("rms_trunk", rms_trunk),
            ("sup_branch", sup_branch),
            ("sup_trunk", sup_trunk),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CapacityError::BadArgument { name, value: v });
            }
        }
        if sample_count == 0 {
            return Err(CapacityError::BadArgument { name: "sample_count", value: 0.0 });
        }
        Ok(Self { rms_branch, rms_trunk, sup_branch, sup_trunk, sample_count })
    }

    /// Empirical bounds read off a dataset: RMS and max of the sample
    /// input norms.
    pub fn from_samples(samples: &[OperatorSample]) -> Result<Self, CapacityError> {
        if samples.is_empty() {
            return Err(CapacityError::EmptyDataset);
        }
        let m = samples.len() as f64;
        let mut sq_b = 0.0;
        let mut sq_t = 0.0;
        let mut sup_b: f64 = 0.0;
        let mut sup_t: f64 = 0.0;
        for s in samples {
            let nb = vec_norm(&s.x_b);
            let nt = vec_norm(&s.x_t);
            sq_b += nb * nb;
            sq_t += nt * nt;
            sup_b = sup_b.max(nb);
            sup_t = sup_t.max(nt);
        }
        Self::new((sq_b / m).sqrt(), (sq_t / m).sqrt(), sup_b, sup_t, samples.len())
    }
}

/// Bound on the solution operator plus the confidence level for the
/// generalization bound. `sup_g` is user-supplied (the operator growth
/// constants are modelling inputs, not computed quantities).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorBound {
    pub sup_g: f64,
    pub delta: f64,
}

impl OperatorBound {
    pub fn new(sup_g: f64, delta: f64) -> Result<Self, CapacityError> {
        if !(sup_g >= 0.0) || !sup_g.is_finite() {
            return Err(CapacityError::BadArgument { name: "sup_g", value: sup_g });
        }
        // delta = 1 is degenerate but well-defined (the concentration term
        // vanishes); anything outside (0, 1] is rejected.
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(CapacityError::BadArgument { name: "delta", value: delta });
        }
        Ok(Self { sup_g, delta })
    }
}

fn require_bias_free(model: &DeepONet) -> Result<(), CapacityError> {
    if !model.is_bias_free() {
        return Err(CapacityError::Biased);
    }
    Ok(())
}

/// Capacity of a linear branch/trunk pair: `|W_B^T W_T|_F`.
pub fn capacity_11(w_b: &Matrix, w_t: &Matrix) -> Result<f64, CapacityError> {
    if w_b.rows() != w_t.rows() {
        return Err(CapacityError::ShapeMismatch {
            what: "capacity_11 row counts (shared output dimension)",
            expected: w_b.rows(),
            got: w_t.rows(),
        });
    }
    Ok(frobenius_norm(&w_b.transpose_matmul(w_t)))
}

pub(crate) fn sum_norm_products(samples: &[OperatorSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let nb = vec_norm(&s.x_b);
            let nt = vec_norm(&s.x_t);
            nb * nb * nt * nt
        })
        .sum()
}

/// Empirical Rademacher bound for the linear class at capacity `c`:
/// `(c / m) * sqrt(sum_i |x_B_i|^2 |x_T_i|^2)`.
pub fn bound_11(c: f64, samples: &[OperatorSample]) -> Result<f64, CapacityError> {
    if c < 0.0 {
        return Err(CapacityError::BadArgument { name: "c", value: c });
    }
    if samples.is_empty() {
        return Err(CapacityError::EmptyDataset);
    }
    Ok(c / samples.len() as f64 * sum_norm_products(samples).sqrt())
}

/// Average Rademacher bound for spectrally bounded linear pairs:
/// `p * M_B * M_T * M / sqrt(m)`.
pub fn bound_11_alt(
    p: usize,
    m_b: f64,
    m_t: f64,
    m_data: f64,
    m: usize,
) -> Result<f64, CapacityError> {
    if m == 0 {
        return Err(CapacityError::BadArgument { name: "m", value: 0.0 });
    }
    for (name, v) in [("p", p as f64), ("m_b", m_b), ("m_t", m_t), ("m_data", m_data)] {
        if !(v > 0.0) {
            return Err(CapacityError::BadArgument { name, value: v });
        }
    }
    Ok(p as f64 * m_b * m_t * m_data / (m as f64).sqrt())
}

/// Capacity of a depth-2 model:
/// `max_{k1,k2} |B_{1,k1}| * |T_{1,k2}| * |(B_2^T T_2)_{k1,k2}|`.
pub fn capacity_22(model: &DeepONet) -> Result<f64, CapacityError> {
    if model.branch().depth() != 2 || model.trunk().depth() != 2 {
        return Err(CapacityError::WrongDepth {
            required: "2",
            branch: model.branch().depth(),
            trunk: model.trunk().depth(),
        });
    }
    require_bias_free(model)?;
    let r = row_norms(model.branch().layer(0));
    let s = row_norms(model.trunk().layer(0));
    let cross = model.branch().layer(1).transpose_matmul(model.trunk().layer(1));
    let mut best: f64 = 0.0;
    for (k1, rk) in r.iter().enumerate() {
        for (k2, sk) in s.iter().enumerate() {
            best = best.max(rk * sk * cross.get(k1, k2).abs());
        }
    }
    Ok(best)
}

/// Empirical Rademacher bound for the width-(b1, t1) depth-2 class:
/// `(c / m) * b1 * t1 * sqrt(sum |x_B|^2) * sqrt(sum |x_T|^2)`.
pub fn bound_22(
    c: f64,
    b1: usize,
    t1: usize,
    samples: &[OperatorSample],
) -> Result<f64, CapacityError> {
    if c < 0.0 {
        return Err(CapacityError::BadArgument { name: "c", value: c });
    }
    if samples.is_empty() {
        return Err(CapacityError::EmptyDataset);
    }
    let sum_b: f64 = samples.iter().map(|s| vec_norm(&s.x_b).powi(2)).sum();
    let sum_t: f64 = samples.iter().map(|s| vec_norm(&s.x_t).powi(2)).sum();
    Ok(c / samples.len() as f64 * (b1 * t1) as f64 * sum_b.sqrt() * sum_t.sqrt())
}

/// Outer capacity coupling the last two layer pairs; defined for any
/// depths >= 2 on both sides.
pub fn capacity_outer(model: &DeepONet) -> Result<f64, CapacityError> {
    let (qb, qt) = (model.branch().depth(), model.trunk().depth());
    if qb < 2 || qt < 2 {
        return Err(CapacityError::WrongDepth { required: ">= 2", branch: qb, trunk: qt });
    }
    require_bias_free(model)?;
    let r = row_norms(model.branch().layer(qb - 2));
    let s = row_norms(model.trunk().layer(qt - 2));
    let cross = model.branch().layer(qb - 1).transpose_matmul(model.trunk().layer(qt - 1));
    let mut acc = 0.0;
    for (k1, rk) in r.iter().enumerate() {
        for (k2, sk) in s.iter().enumerate() {
            acc += cross.get(k1, k2).abs() * rk * sk;
        }
    }
    Ok(acc)
}

/// Inner capacity of one layer pair, closed form.
///
/// The defining quantity is the supremum over unit `(v, w)` of
/// `sum_{j1,j2} |v_{j1} w_{j2}| * |B_{j1,.}| * |T_{j2,.}|`, which separates
/// into `|row_norms(B)|_2 * |row_norms(T)|_2 = |B|_F * |T|_F`;
/// [`capacity_inner_oracle`] verifies this identity numerically.
pub fn capacity_inner_exact(b_layer: &Matrix, t_layer: &Matrix) -> f64 {
    frobenius_norm(b_layer) * frobenius_norm(t_layer)
}

/// Inner capacity via the spectral norm of the rank-one matrix
/// `X_{j1,j2} = |B_{j1,.}| * |T_{j2,.}|`; agrees with
/// [`capacity_inner_exact`] to power-iteration tolerance.
pub fn capacity_inner_surrogate(b_layer: &Matrix, t_layer: &Matrix) -> Result<f64, CapacityError> {
    let x = Matrix::outer(&row_norms(b_layer), &row_norms(t_layer));
    Ok(spectral_norm_default(&x)?)
}

/// Grid + projected-ascent audit oracle for the inner-capacity supremum.
/// Evaluates the literal double sum, so it is independent of the closed
/// form; the result is a lower bound on the true supremum.
pub fn capacity_inner_oracle(
    b_layer: &Matrix,
    t_layer: &Matrix,
    cfg: &SphereSearchConfig,
    seed: u64,
) -> f64 {
    let r = row_norms(b_layer);
    let s = row_norms(t_layer);
    let objective = |v: &[f64], w: &[f64]| {
        let mut acc = 0.0;
        for (vj, rj) in v.iter().zip(&r) {
            for (wj, sj) in w.iter().zip(&s) {
                acc += (vj * wj).abs() * rj * sj;
            }
        }
        acc
    };
    let gradient = |v: &[f64], w: &[f64], gv: &mut [f64], gw: &mut [f64]| {
        let abs_vr: f64 = v.iter().zip(&r).map(|(vj, rj)| vj.abs() * rj).sum();
        let abs_ws: f64 = w.iter().zip(&s).map(|(wj, sj)| wj.abs() * sj).sum();
        for ((g, vj), rj) in gv.iter_mut().zip(v).zip(&r) {
            *g = vj.signum() * rj * abs_ws;
        }
        for ((g, wj), sj) in gw.iter_mut().zip(w).zip(&s) {
            *g = wj.signum() * sj * abs_vr;
        }
    };
    let mut rng = crate::seeds::stream_rng(seed, "inner-capacity-oracle", 0);
    maximize_on_sphere_product(b_layer.rows(), t_layer.rows(), objective, gradient, cfg, &mut rng)
        .value
}

/// Composite measure value only (outer times exact inner factors),
/// skipping the surrogate and spectral-product computations; the hot path
/// for projections inside iterative solvers.
pub(crate) fn composite_value(model: &DeepONet) -> Result<f64, CapacityError> {
    let n = model.branch().depth();
    if model.trunk().depth() != n {
        return Err(CapacityError::Unsupported(format!(
            "asymmetric depths ({}, {}); symmetrize first",
            n,
            model.trunk().depth()
        )));
    }
    let mut composite = capacity_outer(model)?;
    for k in 2..=n - 1 {
        composite *=
            capacity_inner_exact(model.branch().layer(n - k - 1), model.trunk().layer(n - k - 1));
    }
    Ok(composite)
}

/// Computes the full [`CapacityReport`] for a bias-free, equal-depth model.
/// At depth 2 the inner list is empty and the composite equals the outer
/// measure.
pub fn composite_measure(model: &DeepONet) -> Result<CapacityReport, CapacityError> {
    let n = model.branch().depth();
    if model.trunk().depth() != n {
        return Err(CapacityError::Unsupported(format!(
            "asymmetric depths ({}, {}); symmetrize first",
            n,
            model.trunk().depth()
        )));
    }
    if n < 2 {
        return Err(CapacityError::WrongDepth { required: ">= 2", branch: n, trunk: n });
    }
    require_bias_free(model)?;
    let c_outer = capacity_outer(model)?;
    let mut c_inner = Vec::new();
    let mut composite = c_outer;
    for k in 2..=n - 1 {
        let b_layer = model.branch().layer(n - k - 1);
        let t_layer = model.trunk().layer(n - k - 1);
        let exact = capacity_inner_exact(b_layer, t_layer);
        let surrogate = capacity_inner_surrogate(b_layer, t_layer)?;
        composite *= exact;
        c_inner.push(InnerCapacity { k, exact, surrogate });
    }
    let mut lipschitz_product = 1.0;
    for i in 0..n {
        lipschitz_product *= spectral_norm_default(model.branch().layer(i))?
            * spectral_norm_default(model.trunk().layer(i))?;
    }
    Ok(CapacityReport { depth: n, c_outer, c_inner, composite, lipschitz_product })
}

/// The `(2L)^{n-1} * composite` prefactor shared by both bound variants.
fn bound_prefactor(report: &CapacityReport, l: f64) -> f64 {
    (2.0 * l).powi(report.depth as i32 - 1) * report.composite
}

/// Rademacher complexity bounds derived from a capacity report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RademacherBounds {
    /// `(2L)^{n-1} C / m * sqrt(sum |x_B_i|^2 |x_T_i|^2)`; present only
    /// when a dataset is supplied.
    pub empirical: Option<f64>,
    /// `(2L)^{n-1} C / sqrt(m) * M_B * M_T` with the RMS bounds.
    pub average: f64,
}

/// Evaluates the empirical (dataset-dependent) and average
/// (distribution-bound) Rademacher complexity bounds at contraction
/// constant `l`.
pub fn rademacher_bound(
    report: &CapacityReport,
    l: f64,
    bounds: &DataBounds,
    samples: Option<&[OperatorSample]>,
) -> Result<RademacherBounds, CapacityError> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(CapacityError::BadArgument { name: "l", value: l });
    }
    let factor = bound_prefactor(report, l);
    let empirical = match samples {
        None => None,
        Some(s) if s.is_empty() => return Err(CapacityError::EmptyDataset),
        Some(s) => Some(factor / s.len() as f64 * sum_norm_products(s).sqrt()),
    };
    let average =
        factor / (bounds.sample_count as f64).sqrt() * bounds.rms_branch * bounds.rms_trunk;
    Ok(RademacherBounds { empirical, average })
}

/// Generalization-gap bound. Both Lipschitz-factor conventions for the
/// loss composition are reported: `gap_with_loss_factor` multiplies the
/// Rademacher term by the loss Lipschitz constant `B` once more.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenBound {
    /// `B = sup_G + L1^n L2^n m_B m_T P`.
    pub b_const: f64,
    /// Average Rademacher bound entering the gap.
    pub avg_rademacher: f64,
    /// `2 B (B R) + B^2 sqrt(ln(1/delta) / (2m))`.
    pub gap_with_loss_factor: f64,
    /// `2 B R + B^2 sqrt(ln(1/delta) / (2m))`.
    pub gap_without_loss_factor: f64,
}

/// Computes the generalization bound constant `B` and the two gap values.
/// Both activations must carry a product-contraction constant and agree in
/// kind (the hypothesis under which the Rademacher bound applies).
pub fn gen_bound(
    report: &CapacityReport,
    bounds: &DataBounds,
    op: &OperatorBound,
    activations: (Activation, Activation),
) -> Result<GenBound, CapacityError> {
    if !(op.delta > 0.0 && op.delta <= 1.0) {
        return Err(CapacityError::BadArgument { name: "delta", value: op.delta });
    }
    let (a1, a2) = activations;
    if a1 != a2 {
        return Err(CapacityError::Unsupported(format!(
            "mixed activations ({}, {}) have no joint contraction constant",
            a1.name(),
            a2.name()
        )));
    }
    let l = a1.contraction_constant().ok_or_else(|| {
        CapacityError::Unsupported(format!(
            "activation {} admits no product-contraction constant",
            a1.name()
        ))
    })?;
    let n = report.depth as i32;
    let b_const = op.sup_g
        + a1.lipschitz_constant().powi(n)
            * a2.lipschitz_constant().powi(n)
            * bounds.sup_branch
            * bounds.sup_trunk
            * report.lipschitz_product;
    let r = rademacher_bound(report, l, bounds, None)?.average;
    let concentration =
        b_const * b_const * ((1.0 / op.delta).ln() / (2.0 * bounds.sample_count as f64)).sqrt();
    Ok(GenBound {
        b_const,
        avg_rademacher: r,
        gap_with_loss_factor: 2.0 * b_const * (b_const * r) + concentration,
        gap_without_loss_factor: 2.0 * b_const * r + concentration,
    })
}

/// Deterministic sampler for tiny bias-free models used in audits: entries
/// uniform in `[-scale, scale]`.
pub fn random_bias_free_model(
    branch_widths: &[usize],
    trunk_widths: &[usize],
    activation: Activation,
    scale: f64,
    seed: u64,
) -> DeepONet {
    use rand::Rng;
    let mut rng = crate::seeds::stream_rng(seed, "random-model", 0);
    let mut make = |widths: &[usize]| {
        let layers: Vec<Matrix> = widths
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-scale..scale)).collect();
                Matrix::new(w[1], w[0], data).expect("finite entries")
            })
            .collect();
        crate::network::Mlp::new(layers, activation).expect("composing widths")
    };
    let branch = make(branch_widths);
    let trunk = make(trunk_widths);
    DeepONet::new(branch, trunk).expect("equal output dims")
}

/// Scaling-invariance audit: random per-layer scalings with total product
/// one must leave both the forward map and the composite measure unchanged
/// to relative tolerance `tol`. Returns the worst relative deviation seen
/// over `(model, scaling)` draws; used by the acceptance suite.
pub fn scaling_invariance_max_deviation(
    models: usize,
    seed: u64,
    tol_probe_inputs: usize,
) -> Result<f64, CapacityError> {
    use rand::Rng;
    let deviations: Vec<Result<f64, CapacityError>> = (0..models)
        .into_par_iter()
        .map(|t| {
            let mut rng = crate::seeds::stream_rng(seed, "scaling-audit", t as u64);
            let n = rng.gen_range(2..=4usize);
            let mut branch_widths = vec![rng.gen_range(1..=8usize)];
            let mut trunk_widths = vec![rng.gen_range(1..=8usize)];
            for _ in 0..n - 1 {
                branch_widths.push(rng.gen_range(1..=8));
                trunk_widths.push(rng.gen_range(1..=8));
            }
            let p = rng.gen_range(1..=8);
            branch_widths.push(p);
            trunk_widths.push(p);
            let model = random_bias_free_model(
                &branch_widths,
                &trunk_widths,
                Activation::Abs,
                1.0,
                seed ^ (t as u64) << 1,
            );
            let mut scales: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.25..4.0)).collect();
            let prod: f64 = scales.iter().product();
            scales[2 * n - 1] /= prod;
            let (mu, lambda) = scales.split_at(n);
            let scaled = model.with_scaled_layers(mu, lambda).expect("same shape");

            let mut worst: f64 = 0.0;
            let base = composite_measure(&model)?;
            let after = composite_measure(&scaled)?;
            worst = worst.max(rel_dev(base.composite, after.composite));
            for _ in 0..tol_probe_inputs {
                let xb: Vec<f64> =
                    (0..branch_widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xt: Vec<f64> = (0..trunk_widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let a = model.forward(&xb, &xt).expect("dims match");
                let b = scaled.forward(&xb, &xt).expect("dims match");
                worst = worst.max(rel_dev(a, b));
            }
            Ok(worst)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for d in deviations {
        worst = worst.max(d?);
    }
    Ok(worst)
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::seeds::stream_rng;
    use rand::Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_matrix(rng: &mut rand_chacha::ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
            .unwrap()
    }

    #[test]
    fn capacity_11_identity_and_zero() {
        let id = Matrix::identity(4);
        assert_eq!(capacity_11(&id, &id).unwrap(), 2.0);
        assert_eq!(capacity_11(&id, &Matrix::zeros(4, 3)).unwrap(), 0.0);
        assert!(capacity_11(&Matrix::zeros(3, 2), &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn capacity_11_matches_triple_loop() {
        let mut rng = stream_rng(2, "c11", 0);
        for _ in 0..20 {
            let wb = random_matrix(&mut rng, 3, 2);
            let wt = random_matrix(&mut rng, 3, 2);
            let got = capacity_11(&wb, &wt).unwrap();
            let mut acc = 0.0;
            for k1 in 0..2 {
                for k2 in 0..2 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        s += wb.get(j, k1) * wt.get(j, k2);
                    }
                    acc += s * s;
                }
            }
            let expect = acc.sqrt();
            assert!((got - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn capacity_11_orthogonal_invariance() {
        // Q^T Q = I means (Q W_B)^T (Q W_T) = W_B^T W_T.
        let mut rng = stream_rng(8, "orth", 0);
        for _ in 0..20 {
            // Gram-Schmidt on a random square matrix.
            let raw = random_matrix(&mut rng, 3, 3);
            let mut q_rows: Vec<Vec<f64>> = Vec::new();
            for i in 0..3 {
                let mut v = raw.row(i).to_vec();
                for u in &q_rows {
                    let proj = dot(&v, u);
                    for (vi, ui) in v.iter_mut().zip(u) {
                        *vi -= proj * ui;
                    }
                }
                let n = vec_norm(&v);
                for vi in &mut v {
                    *vi /= n;
                }
                q_rows.push(v);
            }
            let q = Matrix::from_rows(&q_rows).unwrap();
            let wb = random_matrix(&mut rng, 3, 2);
            let wt = random_matrix(&mut rng, 3, 4);
            let qb = {
                let mut m = Matrix::zeros(3, 2);
                for i in 0..3 {
                    for j in 0..2 {
                        m.set(i, j, dot(q.row(i), &(0..3).map(|k| wb.get(k, j)).collect::<Vec<_>>()));
                    }
                }
                m
            };
            let qt = {
                let mut m = Matrix::zeros(3, 4);
                for i in 0..3 {
                    for j in 0..4 {
                        m.set(i, j, dot(q.row(i), &(0..3).map(|k| wt.get(k, j)).collect::<Vec<_>>()));
                    }
                }
                m
            };
            let a = capacity_11(&wb, &wt).unwrap();
            let b = capacity_11(&qb, &qt).unwrap();
            assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn bound_11_cases() {
        let unit = OperatorSample { x_b: vec![1.0], x_t: vec![1.0], y: 0.0 };
        assert_eq!(bound_11(1.0, &[unit.clone()]).unwrap(), 1.0);
        assert_eq!(bound_11(0.0, &[unit.clone()]).unwrap(), 0.0);
        let four = vec![unit; 4];
        assert_eq!(bound_11(2.0, &four).unwrap(), 1.0);
        assert!(matches!(bound_11(1.0, &[]), Err(CapacityError::EmptyDataset)));
    }

    #[test]
    fn bound_11_alt_cases_and_monotonicity() {
        assert_eq!(bound_11_alt(1, 1.0, 1.0, 1.0, 1).unwrap(), 1.0);
        assert_eq!(bound_11_alt(2, 3.0, 1.0, 1.0, 9).unwrap(), 2.0);
        let base = bound_11_alt(2, 1.0, 1.5, 2.0, 4).unwrap();
        assert!(bound_11_alt(3, 1.0, 1.5, 2.0, 4).unwrap() > base);
        assert!(bound_11_alt(2, 1.1, 1.5, 2.0, 4).unwrap() > base);
        assert!(bound_11_alt(2, 1.0, 1.6, 2.0, 4).unwrap() > base);
        assert!(bound_11_alt(2, 1.0, 1.5, 2.1, 4).unwrap() > base);
        assert!(bound_11_alt(0, 1.0, 1.0, 1.0, 1).is_err());
        assert!(matches!(
            bound_11_alt(1, 1.0, 1.0, 1.0, 0),
            Err(CapacityError::BadArgument { name: "m", .. })
        ));
    }

    fn model_22(b1: Matrix, b2: Matrix, t1: Matrix, t2: Matrix) -> DeepONet {
        let branch = crate::network::Mlp::new(vec![b1, b2], Activation::Relu).unwrap();
        let trunk = crate::network::Mlp::new(vec![t1, t2], Activation::Relu).unwrap();
        DeepONet::new(branch, trunk).unwrap()
    }

    #[test]
    fn capacity_22_hand_cases() {
        // Unit-norm first-layer rows, all-ones second layers.
        let b1 = mat(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let t1 = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let b2 = mat(&[&[1.0, 1.0]]);
        let t2 = mat(&[&[1.0, 1.0]]);
        let model = model_22(b1, b2, t1, t2);
        assert_eq!(capacity_22(&model).unwrap(), 1.0);

        let zero_b1 = model_22(
            Matrix::zeros(2, 2),
            mat(&[&[1.0, 1.0]]),
            Matrix::identity(2),
            mat(&[&[1.0, 1.0]]),
        );
        assert_eq!(capacity_22(&zero_b1).unwrap(), 0.0);
    }

    #[test]
    fn capacity_22_matches_exhaustive_loop() {
        let mut rng = stream_rng(5, "c22", 0);
        for _ in 0..20 {
            let b1 = random_matrix(&mut rng, 3, 2);
            let b2 = random_matrix(&mut rng, 2, 3);
            let t1 = random_matrix(&mut rng, 4, 2);
            let t2 = random_matrix(&mut rng, 2, 4);
            let model = model_22(b1.clone(), b2.clone(), t1.clone(), t2.clone());
            let got = capacity_22(&model).unwrap();
            let mut best: f64 = 0.0;
            for k1 in 0..3 {
                for k2 in 0..4 {
                    let mut s = 0.0;
                    for j in 0..2 {
                        s += b2.get(j, k1) * t2.get(j, k2);
                    }
                    best = best
                        .max(vec_norm(b1.row(k1)) * vec_norm(t1.row(k2)) * s.abs());
                }
            }
            assert!((got - best).abs() <= 1e-12 * best.max(1.0), "{got} vs {best}");
        }
    }

    #[test]
    fn capacity_22_wrong_depth_rejected() {
        let model = random_bias_free_model(&[2, 3, 3, 2], &[2, 3, 3, 2], Activation::Abs, 1.0, 1);
        assert!(matches!(capacity_22(&model), Err(CapacityError::WrongDepth { .. })));
    }

    #[test]
    fn bound_22_cases() {
        let unit = OperatorSample { x_b: vec![1.0], x_t: vec![1.0], y: 0.0 };
        assert_eq!(bound_22(1.0, 1, 1, &[unit.clone()]).unwrap(), 1.0);
        let m_units = vec![unit; 7];
        let c = 0.3;
        let v = bound_22(c, 2, 5, &m_units).unwrap();
        assert!((v - c * 10.0).abs() < 1e-12, "{v}");
        assert_eq!(
            bound_22(1.0, 4, 3, &m_units).unwrap(),
            2.0 * bound_22(1.0, 2, 3, &m_units).unwrap()
        );
    }

    #[test]
    fn capacity_outer_hand_cases() {
        // p = 1, all-ones last layers over width 2, unit-norm previous rows.
        let b = crate::network::Mlp::new(
            vec![Matrix::identity(2), mat(&[&[1.0, 1.0]])],
            Activation::Abs,
        )
        .unwrap();
        let t = crate::network::Mlp::new(
            vec![Matrix::identity(2), mat(&[&[1.0, 1.0]])],
            Activation::Abs,
        )
        .unwrap();
        let model = DeepONet::new(b, t).unwrap();
        assert_eq!(capacity_outer(&model).unwrap(), 4.0);

        let zero_last = DeepONet::new(
            crate::network::Mlp::new(vec![Matrix::identity(2), Matrix::zeros(1, 2)], Activation::Abs)
                .unwrap(),
            crate::network::Mlp::new(vec![Matrix::identity(2), mat(&[&[1.0, 1.0]])], Activation::Abs)
                .unwrap(),
        )
        .unwrap();
        assert_eq!(capacity_outer(&zero_last).unwrap(), 0.0);
    }

    #[test]
    fn capacity_outer_matches_brute_force() {
        for trial in 0..20 {
            let model =
                random_bias_free_model(&[2, 3, 2], &[3, 4, 2], Activation::Abs, 1.0, 60 + trial);
            let got = capacity_outer(&model).unwrap();
            let bn = model.branch().layer(1);
            let tn = model.trunk().layer(1);
            let bprev = model.branch().layer(0);
            let tprev = model.trunk().layer(0);
            let mut acc = 0.0;
            for k1 in 0..bn.cols() {
                for k2 in 0..tn.cols() {
                    let mut s = 0.0;
                    for j in 0..bn.rows() {
                        s += bn.get(j, k1) * tn.get(j, k2);
                    }
                    acc += s.abs() * vec_norm(bprev.row(k1)) * vec_norm(tprev.row(k2));
                }
            }
            assert!((got - acc).abs() <= 1e-12 * acc.max(1.0), "{got} vs {acc}");
        }
    }

    #[test]
    fn inner_exact_hand_cases() {
        let v = capacity_inner_exact(&Matrix::identity(2), &Matrix::identity(2));
        assert!((v - 2.0).abs() < 1e-15, "{v}");
        assert_eq!(capacity_inner_exact(&Matrix::zeros(2, 3), &Matrix::identity(2)), 0.0);
    }

    #[test]
    fn inner_surrogate_equals_exact() {
        let mut rng = stream_rng(7, "inner", 0);
        for _ in 0..50 {
            let (br, bc) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let (tr, tc) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
            let b = random_matrix(&mut rng, br, bc);
            let t = random_matrix(&mut rng, tr, tc);
            let exact = capacity_inner_exact(&b, &t);
            let surr = capacity_inner_surrogate(&b, &t).unwrap();
            assert!((exact - surr).abs() <= 1e-8 * exact.max(1.0), "{exact} vs {surr}");
        }
    }

    #[test]
    fn inner_surrogate_zero_row_is_rank_one_still() {
        let mut b = Matrix::identity(3);
        b.set(1, 1, 0.0);
        let t = Matrix::identity(2);
        let exact = capacity_inner_exact(&b, &t);
        let surr = capacity_inner_surrogate(&b, &t).unwrap();
        assert!((exact - surr).abs() <= 1e-10);
    }

    #[test]
    fn inner_oracle_matches_closed_form_small_dims() {
        let mut rng = stream_rng(9, "oracle", 0);
        let cfg = SphereSearchConfig::default();
        for trial in 0..10 {
            let (br, bc) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (tr, tc) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let b = random_matrix(&mut rng, br, bc);
            let t = random_matrix(&mut rng, tr, tc);
            let exact = capacity_inner_exact(&b, &t);
            let oracle = capacity_inner_oracle(&b, &t, &cfg, trial);
            assert!(oracle <= exact * (1.0 + 1e-9), "oracle overshoot {oracle} > {exact}");
            assert!(
                (exact - oracle).abs() <= 1e-3 * exact.max(1.0),
                "trial {trial}: {exact} vs {oracle}"
            );
        }
    }

    #[test]
    fn composite_depth2_is_outer() {
        let model = random_bias_free_model(&[3, 4, 2], &[2, 3, 2], Activation::Abs, 1.0, 11);
        let report = composite_measure(&model).unwrap();
        assert_eq!(report.depth, 2);
        assert!(report.c_inner.is_empty());
        assert_eq!(report.composite, report.c_outer);
    }

    #[test]
    fn composite_depth3_identity_inner() {
        // Identity first layers make the single inner factor |I|_F^2 = d.
        let b = crate::network::Mlp::new(
            vec![Matrix::identity(2), Matrix::identity(2), mat(&[&[1.0, 1.0]])],
            Activation::Abs,
        )
        .unwrap();
        let t = b.clone();
        let model = DeepONet::new(b, t).unwrap();
        let report = composite_measure(&model).unwrap();
        assert_eq!(report.c_inner.len(), 1);
        assert_eq!(report.c_inner[0].k, 2);
        assert!((report.c_inner[0].exact - 2.0).abs() < 1e-15);
        assert!((report.composite - report.c_outer * 2.0).abs() < 1e-12);
    }

    #[test]
    fn composite_scales_linearly_with_total_product() {
        let mut rng = stream_rng(13, "scalecap", 0);
        for trial in 0..20 {
            let model =
                random_bias_free_model(&[3, 4, 3, 2], &[2, 3, 4, 2], Activation::Abs, 1.0, trial);
            let n = 3;
            let scales: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.3..2.5)).collect();
            let total: f64 = scales.iter().product();
            let (mu, lambda) = scales.split_at(n);
            let scaled = model.with_scaled_layers(mu, lambda).unwrap();
            let a = composite_measure(&model).unwrap().composite;
            let b = composite_measure(&scaled).unwrap().composite;
            assert!(
                (b - total * a).abs() <= 1e-10 * (total * a).abs().max(1.0),
                "{b} vs {}",
                total * a
            );
        }
    }

    #[test]
    fn composite_rejects_asymmetric_and_biased() {
        let model = random_bias_free_model(&[2, 3, 2], &[2, 3, 3, 2], Activation::Abs, 1.0, 4);
        assert!(matches!(composite_measure(&model), Err(CapacityError::Unsupported(_))));

        let layers = vec![Matrix::identity(2), Matrix::identity(2)];
        let biases = vec![vec![0.1, 0.2], vec![0.0, 0.0]];
        let biased = DeepONet::new(
            crate::network::Mlp::with_biases(layers.clone(), biases.clone(), Activation::Abs)
                .unwrap(),
            crate::network::Mlp::with_biases(layers, biases, Activation::Abs).unwrap(),
        )
        .unwrap();
        assert!(matches!(composite_measure(&biased), Err(CapacityError::Biased)));
    }

    #[test]
    fn rademacher_bound_arithmetic_cases() {
        let report = CapacityReport {
            depth: 2,
            c_outer: 4.0,
            c_inner: vec![],
            composite: 4.0,
            lipschitz_product: 1.0,
        };
        let bounds = DataBounds::new(1.0, 1.0, 1.0, 1.0, 16).unwrap();
        let rb = rademacher_bound(&report, 1.0, &bounds, None).unwrap();
        assert_eq!(rb.average, 2.0);
        assert!(rb.empirical.is_none());

        let zero = CapacityReport { composite: 0.0, c_outer: 0.0, ..report.clone() };
        let rb = rademacher_bound(&zero, 1.0, &bounds, None).unwrap();
        assert_eq!(rb.average, 0.0);

        // m unit-norm sample pairs: empirical equals average with M = 1.
        let samples: Vec<OperatorSample> =
            (0..16).map(|_| OperatorSample { x_b: vec![1.0], x_t: vec![1.0], y: 0.0 }).collect();
        let rb = rademacher_bound(&report, 1.0, &bounds, Some(&samples)).unwrap();
        assert!((rb.empirical.unwrap() - rb.average).abs() < 1e-12);
        assert!(matches!(
            rademacher_bound(&report, 1.0, &bounds, Some(&[])),
            Err(CapacityError::EmptyDataset)
        ));
    }

    #[test]
    fn gen_bound_arithmetic_cases() {
        let report = CapacityReport {
            depth: 2,
            c_outer: 1.0,
            c_inner: vec![],
            composite: 1.0,
            lipschitz_product: 2.0,
        };
        let bounds = DataBounds::new(1.0, 1.0, 1.0, 1.0, 8).unwrap();
        let op = OperatorBound::new(3.0, 0.5).unwrap();
        let gb = gen_bound(&report, &bounds, &op, (Activation::Abs, Activation::Abs)).unwrap();
        assert_eq!(gb.b_const, 5.0);

        // delta = 1 kills the concentration term.
        let op1 = OperatorBound::new(3.0, 1.0).unwrap();
        let gb1 = gen_bound(&report, &bounds, &op1, (Activation::Abs, Activation::Abs)).unwrap();
        let r = gb1.avg_rademacher;
        assert!((gb1.gap_without_loss_factor - 2.0 * 5.0 * r).abs() < 1e-12);
        assert!((gb1.gap_with_loss_factor - 2.0 * 25.0 * r).abs() < 1e-12);

        // Composite zero means R = 0 and only the concentration term is left.
        let zero = CapacityReport { composite: 0.0, c_outer: 0.0, ..report.clone() };
        let gbz = gen_bound(&zero, &bounds, &op, (Activation::Abs, Activation::Abs)).unwrap();
        let conc = 25.0 * ((1.0 / 0.5f64).ln() / 16.0).sqrt();
        assert!((gbz.gap_without_loss_factor - conc).abs() < 1e-12);

        assert!(gen_bound(&report, &bounds, &op, (Activation::Abs, Activation::Identity)).is_err());
        assert!(gen_bound(&report, &bounds, &op, (Activation::Relu, Activation::Relu)).is_err());
        assert!(OperatorBound::new(3.0, 0.0).is_err());
        assert!(OperatorBound::new(3.0, 1.5).is_err());
    }

    #[test]
    fn report_csv_has_inner_columns() {
        let model = random_bias_free_model(&[2, 3, 3, 2], &[2, 3, 3, 2], Activation::Abs, 1.0, 3);
        let report = composite_measure(&model).unwrap();
        let csv = report.to_csv();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.contains("c_inner_exact_k2"));
        assert_eq!(header.split(',').count(), lines.next().unwrap().split(',').count());
    }

    #[test]
    fn scaling_invariance_audit_runs_clean() {
        let worst = scaling_invariance_max_deviation(10, 99, 5).unwrap();
        assert!(worst <= 1e-10, "worst deviation {worst}");
    }
}
