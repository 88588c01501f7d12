//! DeepONet and plain MLP representations: forward evaluation, depth
//! symmetrization, the ReLU-to-abs conversion, and JSON checkpoints.
//!
//! A DeepONet is a pair of MLPs ("branch" and "trunk") with a common output
//! dimension `p`; its value is the inner product of the two net outputs.
//! The activation is applied between layers but never after the last one.

pub mod checkpoint;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, LinalgError, Matrix};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("{side} input dimension {got} does not match layer {layer} input dimension {expected}")]
    ShapeMismatch { side: &'static str, layer: usize, expected: usize, got: usize },
    #[error("layer {layer} expects input dimension {expected} but previous layer outputs {got}")]
    LayerComposition { layer: usize, expected: usize, got: usize },
    #[error("bias vector {layer} has length {got}, expected {expected}")]
    BiasLength { layer: usize, expected: usize, got: usize },
    #[error("bias count {got} does not match layer count {expected}")]
    BiasCount { expected: usize, got: usize },
    #[error("branch and trunk output dimensions differ: {branch} vs {trunk}")]
    OutputDimMismatch { branch: usize, trunk: usize },
    #[error("operation requires {required}, model has {found}")]
    Unsupported { required: &'static str, found: String },
    #[error("pre-activation bound must be positive and finite, got {0}")]
    BadInputBound(f64),
    #[error("network must have at least one layer")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Pointwise activation. All three kinds are 1-Lipschitz and positively
/// homogeneous; only `Abs` and `Identity` admit a product-contraction
/// constant (the two-net analogue of Talagrand contraction), which is why
/// ReLU models get rewritten via [`relu_to_abs`] before capacity analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Abs,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Abs => z.abs(),
        }
    }

    /// Derivative, with subgradient 0 at the kink of `relu`/`abs`.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Abs => {
                if z > 0.0 {
                    1.0
                } else if z < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn lipschitz_constant(self) -> f64 {
        1.0
    }

    /// Constant `L` for the product contraction
    /// `|phi(f)phi(g) - phi(f')phi(g')| <= L |fg - f'g'|`.
    /// ReLU admits no such constant (counterexample: f=g=1, f'=g'=-1).
    pub fn contraction_constant(self) -> Option<f64> {
        match self {
            Activation::Identity | Activation::Abs => Some(1.0),
            Activation::Relu => None,
        }
    }

    pub fn positively_homogeneous(self) -> bool {
        true
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Abs => "abs",
        }
    }
}

/// A multi-layer perceptron: `layers[k]` is applied as `x -> W x (+ b)`,
/// with the activation between layers and not after the last.
///
/// Biases are all-or-nothing: `None` means a bias-free net, which is the
/// regime in which the capacity measures are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Matrix>,
    biases: Option<Vec<Vec<f64>>>,
    activation: Activation,
}

impl Mlp {
    pub fn new(layers: Vec<Matrix>, activation: Activation) -> Result<Self, NetworkError> {
        Self::build(layers, None, activation)
    }

    pub fn with_biases(
        layers: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self, NetworkError> {
        Self::build(layers, Some(biases), activation)
    }

    fn build(
        layers: Vec<Matrix>,
        biases: Option<Vec<Vec<f64>>>,
        activation: Activation,
    ) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        for k in 1..layers.len() {
            if layers[k].cols() != layers[k - 1].rows() {
                return Err(NetworkError::LayerComposition {
                    layer: k,
                    expected: layers[k].cols(),
                    got: layers[k - 1].rows(),
                });
            }
        }
        if let Some(bs) = &biases {
            if bs.len() != layers.len() {
                return Err(NetworkError::BiasCount { expected: layers.len(), got: bs.len() });
            }
            for (k, b) in bs.iter().enumerate() {
                if b.len() != layers[k].rows() {
                    return Err(NetworkError::BiasLength {
                        layer: k,
                        expected: layers[k].rows(),
                        got: b.len(),
                    });
                }
            }
        }
        Ok(Self { layers, biases, activation })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows()
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &Matrix {
        &self.layers[k]
    }

    pub fn biases(&self) -> Option<&[Vec<f64>]> {
        self.biases.as_deref()
    }

    /// In-crate mutable access for optimizers; shapes must be preserved.
    pub(crate) fn layers_mut(&mut self) -> &mut [Matrix] {
        &mut self.layers
    }

    pub(crate) fn biases_mut(&mut self) -> Option<&mut Vec<Vec<f64>>> {
        self.biases.as_mut()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn is_bias_free(&self) -> bool {
        self.biases.is_none()
    }

    fn check_input(&self, side: &'static str, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::ShapeMismatch {
                side,
                layer: 0,
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Evaluates the net. The final layer output is not passed through the
    /// activation.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_input("net", x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.matvec(&cur);
            if let Some(bs) = &self.biases {
                for (zi, bi) in z.iter_mut().zip(&bs[k]) {
                    *zi += bi;
                }
            }
            if k < last {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            cur = z;
        }
        cur
    }

    /// Forward pass keeping per-layer inputs and pre-activations, for
    /// backpropagation and kink analysis. `inputs[k]` feeds layer `k`;
    /// `preacts[k]` is its affine output before the activation.
    pub fn forward_trace(&self, x: &[f64]) -> Result<MlpTrace, NetworkError> {
        self.check_input("net", x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            inputs.push(cur.clone());
            let mut z = layer.matvec(&cur);
            if let Some(bs) = &self.biases {
                for (zi, bi) in z.iter_mut().zip(&bs[k]) {
                    *zi += bi;
                }
            }
            preacts.push(z.clone());
            if k < last {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            cur = z;
        }
        Ok(MlpTrace { inputs, preacts, output: cur })
    }
}

/// Saved intermediates of one MLP forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub inputs: Vec<Vec<f64>>,
    pub preacts: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Branch/trunk pair with a shared output dimension; the model value is
/// `<branch(x_B), trunk(x_T)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepONet {
    branch: Mlp,
    trunk: Mlp,
}

impl DeepONet {
    pub fn new(branch: Mlp, trunk: Mlp) -> Result<Self, NetworkError> {
        if branch.output_dim() != trunk.output_dim() {
            return Err(NetworkError::OutputDimMismatch {
                branch: branch.output_dim(),
                trunk: trunk.output_dim(),
            });
        }
        Ok(Self { branch, trunk })
    }

    pub fn branch(&self) -> &Mlp {
        &self.branch
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub(crate) fn branch_mut(&mut self) -> &mut Mlp {
        &mut self.branch
    }

    pub(crate) fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    /// Common output dimension `p` of the two nets.
    pub fn output_dim(&self) -> usize {
        self.branch.output_dim()
    }

    pub fn is_bias_free(&self) -> bool {
        self.branch.is_bias_free() && self.trunk.is_bias_free()
    }

    pub fn symmetric_depth(&self) -> bool {
        self.branch.depth() == self.trunk.depth()
    }

    pub fn forward(&self, x_b: &[f64], x_t: &[f64]) -> Result<f64, NetworkError> {
        self.branch.check_input("branch", x_b)?;
        self.trunk.check_input("trunk", x_t)?;
        let b = self.branch.forward_unchecked(x_b);
        let t = self.trunk.forward_unchecked(x_t);
        Ok(dot(&b, &t))
    }

    /// Rebuilds the model with branch layer `i` multiplied by
    /// `branch_scales[i]` and likewise for the trunk. For positively
    /// homogeneous bias-free models the forward map scales by the product
    /// of all factors, so any factor assignment with total product one is a
    /// symmetry of the function.
    pub fn with_scaled_layers(
        &self,
        branch_scales: &[f64],
        trunk_scales: &[f64],
    ) -> Result<DeepONet, NetworkError> {
        let scale =
            |mlp: &Mlp, scales: &[f64]| -> Result<Mlp, NetworkError> {
                assert_eq!(scales.len(), mlp.depth(), "one scale per layer");
                let layers =
                    mlp.layers.iter().zip(scales).map(|(m, &s)| m.scaled(s)).collect::<Vec<_>>();
                match &mlp.biases {
                    None => Mlp::new(layers, mlp.activation),
                    Some(bs) => {
                        let biases = bs
                            .iter()
                            .zip(scales)
                            .map(|(b, &s)| b.iter().map(|v| v * s).collect())
                            .collect();
                        Mlp::with_biases(layers, biases, mlp.activation)
                    }
                }
            };
        DeepONet::new(scale(&self.branch, branch_scales)?, scale(&self.trunk, trunk_scales)?)
    }
}

fn require_relu(mlp: &Mlp) -> Result<(), NetworkError> {
    if mlp.activation != Activation::Relu {
        return Err(NetworkError::Unsupported {
            required: "relu activation",
            found: mlp.activation.name().to_string(),
        });
    }
    Ok(())
}

/// Prefixes one identity-computing ReLU block (`x = relu(x) - relu(-x)`,
/// realized as `[I; -I]` followed by `[W; -W]` merged into the old first
/// layer), adding exactly one to the depth without changing the function.
fn prefix_identity_block(mlp: &Mlp) -> Mlp {
    let d = mlp.input_dim();
    let mut first = Matrix::zeros(2 * d, d);
    for i in 0..d {
        first.set(i, i, 1.0);
        first.set(d + i, i, -1.0);
    }
    let old = &mlp.layers[0];
    let mut merged = Matrix::zeros(old.rows(), 2 * d);
    for i in 0..old.rows() {
        for j in 0..d {
            let v = old.get(i, j);
            merged.set(i, j, v);
            merged.set(i, d + j, -v);
        }
    }
    let mut layers = Vec::with_capacity(mlp.depth() + 1);
    layers.push(first);
    layers.push(merged);
    layers.extend(mlp.layers[1..].iter().cloned());
    match &mlp.biases {
        None => Mlp::new(layers, mlp.activation).expect("valid by construction"),
        Some(bs) => {
            let mut biases = Vec::with_capacity(bs.len() + 1);
            biases.push(vec![0.0; 2 * d]);
            biases.extend(bs.iter().cloned());
            Mlp::with_biases(layers, biases, mlp.activation).expect("valid by construction")
        }
    }
}

/// Equalizes branch and trunk depth of a ReLU model by prefixing identity
/// blocks to the shorter side. The function is preserved exactly.
pub fn symmetrize_depth(model: &DeepONet) -> Result<DeepONet, NetworkError> {
    require_relu(&model.branch)?;
    require_relu(&model.trunk)?;
    let mut branch = model.branch.clone();
    let mut trunk = model.trunk.clone();
    while branch.depth() < trunk.depth() {
        branch = prefix_identity_block(&branch);
    }
    while trunk.depth() < branch.depth() {
        trunk = prefix_identity_block(&trunk);
    }
    DeepONet::new(branch, trunk)
}

/// Rewrites each ReLU gate of a bias-free model as
/// `relu(z) = |z|/2 + |z + bound|/4 - |z - bound|/4`, which is exact while
/// `|z| <= bound`. Every hidden layer becomes three times wider and the
/// result is an abs-activation model with biases, so it is meant for
/// forward-equivalence experiments, not for capacity computation (the
/// measures require bias-free models).
///
/// The caller certifies that `bound` dominates every hidden pre-activation
/// magnitude over the intended input domain; [`preactivation_bound`]
/// computes such a certificate from an input box.
pub fn relu_to_abs(model: &DeepONet, input_bound: f64) -> Result<DeepONet, NetworkError> {
    require_relu(&model.branch)?;
    require_relu(&model.trunk)?;
    if !(input_bound > 0.0) || !input_bound.is_finite() {
        return Err(NetworkError::BadInputBound(input_bound));
    }
    if !model.is_bias_free() {
        return Err(NetworkError::Unsupported {
            required: "bias-free model",
            found: "biased layers".to_string(),
        });
    }
    let convert = |mlp: &Mlp| -> Mlp {
        let q = mlp.depth();
        if q == 1 {
            // No gates to rewrite; only the activation tag changes.
            return Mlp::new(mlp.layers.clone(), Activation::Abs).expect("valid by construction");
        }
        let mut layers = Vec::with_capacity(q);
        let mut biases = Vec::with_capacity(q);
        for (k, w) in mlp.layers.iter().enumerate() {
            // Columns: layer 0 reads the raw input; later layers read the
            // (|z|, |z+B|, |z-B|) triples with mixing (1/2, 1/4, -1/4).
            let expanded = if k == 0 {
                w.clone()
            } else {
                let mut e = Matrix::zeros(w.rows(), 3 * w.cols());
                for i in 0..w.rows() {
                    for j in 0..w.cols() {
                        let v = w.get(i, j);
                        e.set(i, 3 * j, v / 2.0);
                        e.set(i, 3 * j + 1, v / 4.0);
                        e.set(i, 3 * j + 2, -v / 4.0);
                    }
                }
                e
            };
            if k + 1 == q {
                biases.push(vec![0.0; expanded.rows()]);
                layers.push(expanded);
            } else {
                // Rows: each gate becomes the triple z, z+B, z-B.
                let mut tripled = Matrix::zeros(3 * expanded.rows(), expanded.cols());
                let mut bias = vec![0.0; 3 * expanded.rows()];
                for i in 0..expanded.rows() {
                    for j in 0..expanded.cols() {
                        let v = expanded.get(i, j);
                        tripled.set(3 * i, j, v);
                        tripled.set(3 * i + 1, j, v);
                        tripled.set(3 * i + 2, j, v);
                    }
                    bias[3 * i + 1] = input_bound;
                    bias[3 * i + 2] = -input_bound;
                }
                layers.push(tripled);
                biases.push(bias);
            }
        }
        Mlp::with_biases(layers, biases, Activation::Abs).expect("valid by construction")
    };
    DeepONet::new(convert(&model.branch), convert(&model.trunk))
}

fn interval_bound_mlp(mlp: &Mlp, input_box: &[(f64, f64)]) -> Result<f64, NetworkError> {
    if input_box.len() != mlp.input_dim() {
        return Err(NetworkError::ShapeMismatch {
            side: "interval box",
            layer: 0,
            expected: mlp.input_dim(),
            got: input_box.len(),
        });
    }
    let mut lo: Vec<f64> = input_box.iter().map(|&(l, _)| l).collect();
    let mut hi: Vec<f64> = input_box.iter().map(|&(_, h)| h).collect();
    let mut bound: f64 = 0.0;
    let last = mlp.depth() - 1;
    for (k, w) in mlp.layers.iter().enumerate() {
        if k == last {
            break; // no gate after the final layer
        }
        let mut zlo = vec![0.0; w.rows()];
        let mut zhi = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut l = 0.0;
            let mut h = 0.0;
            for j in 0..w.cols() {
                let v = w.get(i, j);
                if v >= 0.0 {
                    l += v * lo[j];
                    h += v * hi[j];
                } else {
                    l += v * hi[j];
                    h += v * lo[j];
                }
            }
            if let Some(bs) = mlp.biases() {
                l += bs[k][i];
                h += bs[k][i];
            }
            zlo[i] = l;
            zhi[i] = h;
            bound = bound.max(l.abs()).max(h.abs());
        }
        for i in 0..w.rows() {
            let (l, h) = (zlo[i], zhi[i]);
            let (al, ah) = match mlp.activation {
                Activation::Identity => (l, h),
                Activation::Relu => (l.max(0.0), h.max(0.0)),
                Activation::Abs => {
                    if l >= 0.0 {
                        (l, h)
                    } else if h <= 0.0 {
                        (-h, -l)
                    } else {
                        (0.0, (-l).max(h))
                    }
                }
            };
            zlo[i] = al;
            zhi[i] = ah;
        }
        lo = zlo;
        hi = zhi;
    }
    Ok(bound)
}

/// Interval propagation of per-coordinate input boxes through both nets;
/// returns a bound on the magnitude of every hidden pre-activation, valid
/// as the `input_bound` certificate for [`relu_to_abs`].
pub fn preactivation_bound(
    model: &DeepONet,
    branch_box: &[(f64, f64)],
    trunk_box: &[(f64, f64)],
) -> Result<f64, NetworkError> {
    let b = interval_bound_mlp(&model.branch, branch_box)?;
    let t = interval_bound_mlp(&model.trunk, trunk_box)?;
    Ok(b.max(t))
}

/// Symmetric box `[-r, r]^d`, the common certificate domain for inputs
/// drawn from a radius-`r` ball.
pub fn centered_box(dim: usize, radius: f64) -> Vec<(f64, f64)> {
    vec![(-radius, radius); dim]
}

/// Per-layer gradients for one model, aligned with its layer/bias layout.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub branch: Vec<Matrix>,
    pub trunk: Vec<Matrix>,
    pub branch_biases: Option<Vec<Vec<f64>>>,
    pub trunk_biases: Option<Vec<Vec<f64>>>,
}

impl ModelGrad {
    pub fn zeros_like(model: &DeepONet) -> Self {
        let zero_layers = |mlp: &Mlp| {
            mlp.layers.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect::<Vec<_>>()
        };
        let zero_biases = |mlp: &Mlp| {
            mlp.biases.as_ref().map(|bs| bs.iter().map(|b| vec![0.0; b.len()]).collect())
        };
        Self {
            branch: zero_layers(&model.branch),
            trunk: zero_layers(&model.trunk),
            branch_biases: zero_biases(&model.branch),
            trunk_biases: zero_biases(&model.trunk),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.branch.iter_mut().chain(&mut self.trunk) {
            for v in m.entries_mut() {
                *v *= s;
            }
        }
        for bs in [&mut self.branch_biases, &mut self.trunk_biases].into_iter().flatten() {
            for b in bs {
                for v in b {
                    *v *= s;
                }
            }
        }
    }

    pub fn add(&mut self, other: &ModelGrad) {
        let add_layers = |a: &mut Vec<Matrix>, b: &[Matrix]| {
            for (x, y) in a.iter_mut().zip(b) {
                for (xv, yv) in x.entries_mut().iter_mut().zip(y.entries()) {
                    *xv += yv;
                }
            }
        };
        add_layers(&mut self.branch, &other.branch);
        add_layers(&mut self.trunk, &other.trunk);
        for (a, b) in [
            (&mut self.branch_biases, &other.branch_biases),
            (&mut self.trunk_biases, &other.trunk_biases),
        ] {
            if let (Some(a), Some(b)) = (a, b) {
                for (x, y) in a.iter_mut().zip(b) {
                    for (xv, yv) in x.iter_mut().zip(y) {
                        *xv += yv;
                    }
                }
            }
        }
    }

    /// Euclidean norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for m in self.branch.iter().chain(&self.trunk) {
            for v in m.entries() {
                acc += v * v;
            }
        }
        for bs in [&self.branch_biases, &self.trunk_biases].into_iter().flatten() {
            for b in bs {
                for v in b {
                    acc += v * v;
                }
            }
        }
        acc.sqrt()
    }
}

/// Backpropagates an upstream output-vector gradient through one MLP,
/// accumulating into `grads`/`bias_grads`.
fn backprop_mlp(
    mlp: &Mlp,
    trace: &MlpTrace,
    upstream: &[f64],
    grads: &mut [Matrix],
    bias_grads: &mut Option<Vec<Vec<f64>>>,
) {
    let last = mlp.layers.len() - 1;
    let mut delta = upstream.to_vec();
    for k in (0..=last).rev() {
        // dObj/dW_k = delta (x) input_k
        let input = &trace.inputs[k];
        let g = &mut grads[k];
        for (i, di) in delta.iter().enumerate() {
            if *di == 0.0 {
                continue;
            }
            let row = &mut g.entries_mut()[i * input.len()..(i + 1) * input.len()];
            for (gv, xv) in row.iter_mut().zip(input) {
                *gv += di * xv;
            }
        }
        if let Some(bg) = bias_grads {
            for (b, d) in bg[k].iter_mut().zip(&delta) {
                *b += d;
            }
        }
        if k > 0 {
            let mut back = mlp.layers[k].transpose_matvec(&delta);
            for (b, z) in back.iter_mut().zip(&trace.preacts[k - 1]) {
                *b *= mlp.activation.derivative(*z);
            }
            delta = back;
        }
    }
}

/// Exact reverse-mode gradient of `sum_i coeffs[i] * model(x_B_i, x_T_i)`
/// with respect to every weight (and bias, when present). The DeepONet
/// loss gradient and the sign-weighted ascent objectives used by the
/// Rademacher estimator are both instances of this map.
pub fn weighted_gradient(
    model: &DeepONet,
    inputs: &[(&[f64], &[f64])],
    coeffs: &[f64],
) -> Result<ModelGrad, NetworkError> {
    assert_eq!(inputs.len(), coeffs.len(), "one coefficient per sample");
    let mut grad = ModelGrad::zeros_like(model);
    for (&(xb, xt), &c) in inputs.iter().zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        let bt = model.branch.forward_trace(xb)?;
        let tt = model.trunk.forward_trace(xt)?;
        // d<b, t>/db = t and vice versa, scaled by the sample coefficient.
        let up_b: Vec<f64> = tt.output.iter().map(|v| c * v).collect();
        let up_t: Vec<f64> = bt.output.iter().map(|v| c * v).collect();
        backprop_mlp(&model.branch, &bt, &up_b, &mut grad.branch, &mut grad.branch_biases);
        backprop_mlp(&model.trunk, &tt, &up_t, &mut grad.trunk, &mut grad.trunk_biases);
    }
    Ok(grad)
}

/// Applies the first `layers` layers with the activation after each
/// (including the last applied one). `layers = 0` returns the input
/// unchanged. This is the sub-net feature map used by the peeling checks.
pub fn partial_forward(mlp: &Mlp, x: &[f64], layers: usize) -> Result<Vec<f64>, NetworkError> {
    assert!(layers < mlp.depth(), "partial_forward must leave at least one layer");
    mlp.check_input("net", x)?;
    let mut cur = x.to_vec();
    for k in 0..layers {
        let mut z = mlp.layers[k].matvec(&cur);
        if let Some(bs) = &mlp.biases {
            for (zi, bi) in z.iter_mut().zip(&bs[k]) {
                *zi += bi;
            }
        }
        for zi in &mut z {
            *zi = mlp.activation.apply(*zi);
        }
        cur = z;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;
    use rand::Rng;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    pub(crate) fn random_mlp(
        seed: u64,
        widths: &[usize],
        activation: Activation,
        scale: f64,
    ) -> Mlp {
        let mut rng = stream_rng(seed, "test-mlp", 0);
        let layers = widths
            .windows(2)
            .map(|w| {
                let data = (0..w[0] * w[1]).map(|_| rng.gen_range(-scale..scale)).collect();
                Matrix::new(w[1], w[0], data).unwrap()
            })
            .collect();
        Mlp::new(layers, activation).unwrap()
    }

    #[test]
    fn forward_single_layer_no_activation() {
        let net = Mlp::new(vec![mat(&[&[-2.0]])], Activation::Abs).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![-2.0]);
    }

    #[test]
    fn forward_two_layers_abs() {
        let net = Mlp::new(vec![mat(&[&[-2.0]]), mat(&[&[1.0]])], Activation::Abs).unwrap();
        assert_eq!(net.forward(&[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn identity_activation_is_matrix_product() {
        let mut rng = stream_rng(11, "test", 0);
        for _ in 0..20 {
            let a_data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b_data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = Matrix::new(3, 2, a_data).unwrap();
            let b = Matrix::new(2, 3, b_data).unwrap();
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let net = Mlp::new(vec![a.clone(), b.clone()], Activation::Identity).unwrap();
            let got = net.forward(&x).unwrap();
            let expect = b.matvec(&a.matvec(&x));
            for (g, e) in got.iter().zip(&expect) {
                assert!((g - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_shape_error_names_layer() {
        let net = Mlp::new(vec![mat(&[&[1.0, 2.0]])], Activation::Abs).unwrap();
        let err = net.forward(&[1.0]).unwrap_err();
        assert!(matches!(err, NetworkError::ShapeMismatch { layer: 0, expected: 2, got: 1, .. }));
    }

    #[test]
    fn deeponet_forward_products() {
        let branch = Mlp::new(vec![mat(&[&[2.0]])], Activation::Abs).unwrap();
        let trunk = Mlp::new(vec![mat(&[&[3.0]])], Activation::Abs).unwrap();
        let model = DeepONet::new(branch, trunk).unwrap();
        assert_eq!(model.forward(&[1.0], &[1.0]).unwrap(), 6.0);
    }

    #[test]
    fn deeponet_zero_trunk_last_layer() {
        let branch = random_mlp(5, &[3, 4, 2], Activation::Abs, 1.0);
        let trunk = Mlp::new(vec![mat(&[&[1.0], &[1.0]]), Matrix::zeros(2, 2)], Activation::Abs)
            .unwrap();
        let model = DeepONet::new(branch, trunk).unwrap();
        let mut rng = stream_rng(6, "t", 0);
        for _ in 0..10 {
            let xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xt: Vec<f64> = (0..1).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(model.forward(&xb, &xt).unwrap(), 0.0);
        }
    }

    #[test]
    fn deeponet_depth2_abs_hand_case() {
        let branch = Mlp::new(vec![mat(&[&[-2.0]]), mat(&[&[1.0]])], Activation::Abs).unwrap();
        let trunk = Mlp::new(vec![mat(&[&[3.0]]), mat(&[&[1.0]])], Activation::Abs).unwrap();
        let model = DeepONet::new(branch, trunk).unwrap();
        assert_eq!(model.forward(&[1.0], &[1.0]).unwrap(), 6.0);
    }

    #[test]
    fn deeponet_rejects_mismatched_output_dims() {
        let branch = random_mlp(1, &[2, 3], Activation::Relu, 1.0);
        let trunk = random_mlp(2, &[2, 2], Activation::Relu, 1.0);
        assert!(matches!(
            DeepONet::new(branch, trunk),
            Err(NetworkError::OutputDimMismatch { branch: 3, trunk: 2 })
        ));
    }

    #[test]
    fn symmetrize_noop_when_symmetric() {
        let branch = random_mlp(3, &[2, 3, 2], Activation::Relu, 1.0);
        let trunk = random_mlp(4, &[3, 4, 2], Activation::Relu, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        let sym = symmetrize_depth(&model).unwrap();
        assert_eq!(sym, model);
    }

    #[test]
    fn symmetrize_preserves_function() {
        let branch = random_mlp(7, &[3, 2], Activation::Relu, 1.5);
        let trunk = random_mlp(8, &[2, 4, 3, 2], Activation::Relu, 1.5);
        let model = DeepONet::new(branch, trunk).unwrap();
        let sym = symmetrize_depth(&model).unwrap();
        assert_eq!(sym.branch().depth(), 3);
        assert_eq!(sym.trunk().depth(), 3);
        // First prefixed block doubles the input width.
        assert_eq!(sym.branch().layer(0).rows(), 2 * 3);
        let mut rng = stream_rng(9, "sym", 0);
        for _ in 0..1000 {
            let xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let xt: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = model.forward(&xb, &xt).unwrap();
            let b = sym.forward(&xb, &xt).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn symmetrize_rejects_non_relu() {
        let branch = random_mlp(3, &[2, 2], Activation::Abs, 1.0);
        let trunk = random_mlp(4, &[2, 3, 2], Activation::Abs, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        assert!(matches!(symmetrize_depth(&model), Err(NetworkError::Unsupported { .. })));
    }

    #[test]
    fn relu_to_abs_gate_values() {
        // relu(z) = |z|/2 + |z+1|/4 - |z-1|/4 on |z| <= 1.
        let gate = |z: f64, b: f64| z.abs() / 2.0 + (z + b).abs() / 4.0 - (z - b).abs() / 4.0;
        assert_eq!(gate(0.5, 1.0), 0.5);
        assert_eq!(gate(-0.5, 1.0), 0.0);
    }

    #[test]
    fn relu_to_abs_matches_on_certified_domain() {
        let branch = random_mlp(21, &[3, 5, 4, 2], Activation::Relu, 1.0);
        let trunk = random_mlp(22, &[2, 4, 2], Activation::Relu, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        let bound =
            preactivation_bound(&model, &centered_box(3, 1.0), &centered_box(2, 1.0)).unwrap();
        let converted = relu_to_abs(&model, bound).unwrap();
        assert_eq!(converted.branch().activation(), Activation::Abs);
        // Hidden widths exactly tripled.
        assert_eq!(converted.branch().layer(0).rows(), 15);
        assert_eq!(converted.branch().layer(1).rows(), 12);
        assert_eq!(converted.branch().layer(2).rows(), 2);
        let mut rng = stream_rng(23, "conv", 0);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            // Points inside the unit ball stay inside the certified box.
            let mut xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nb = crate::linalg::vec_norm(&xb).max(1.0);
            xb.iter_mut().for_each(|v| *v /= nb);
            let mut xt: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nt = crate::linalg::vec_norm(&xt).max(1.0);
            xt.iter_mut().for_each(|v| *v /= nt);
            let a = model.forward(&xb, &xt).unwrap();
            let b = converted.forward(&xb, &xt).unwrap();
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err <= 1e-9, "max discrepancy {max_err}");
    }

    #[test]
    fn relu_to_abs_rejects_bad_inputs() {
        let branch = random_mlp(1, &[2, 2], Activation::Relu, 1.0);
        let trunk = random_mlp(2, &[2, 2], Activation::Relu, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        assert!(matches!(relu_to_abs(&model, 0.0), Err(NetworkError::BadInputBound(_))));
        assert!(matches!(relu_to_abs(&model, -1.0), Err(NetworkError::BadInputBound(_))));

        let abs_model = DeepONet::new(
            random_mlp(3, &[2, 2], Activation::Abs, 1.0),
            random_mlp(4, &[2, 2], Activation::Abs, 1.0),
        )
        .unwrap();
        assert!(matches!(relu_to_abs(&abs_model, 1.0), Err(NetworkError::Unsupported { .. })));
    }

    #[test]
    fn scaling_symmetry_preserves_forward() {
        let mut rng = stream_rng(31, "scale", 0);
        for trial in 0..50 {
            let widths = [3, 4, 3, 2];
            let branch = random_mlp(100 + trial, &widths, Activation::Abs, 1.0);
            let trunk = random_mlp(200 + trial, &widths, Activation::Abs, 1.0);
            let model = DeepONet::new(branch, trunk).unwrap();
            let n = 3;
            let mut scales: Vec<f64> = (0..2 * n).map(|_| rng.gen_range(0.2..3.0)).collect();
            let prod: f64 = scales.iter().product();
            scales[2 * n - 1] /= prod; // force total product to one
            let (mu, lambda) = scales.split_at(n);
            let scaled = model.with_scaled_layers(mu, lambda).unwrap();
            for _ in 0..20 {
                let xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xt: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let a = model.forward(&xb, &xt).unwrap();
                let b = scaled.forward(&xb, &xt).unwrap();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let branch = random_mlp(51, &[3, 4, 2], Activation::Abs, 1.0);
        let trunk = random_mlp(52, &[2, 3, 2], Activation::Abs, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        let mut rng = stream_rng(53, "fd", 0);
        let xb: Vec<Vec<f64>> =
            (0..4).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let xt: Vec<Vec<f64>> =
            (0..4).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pairs: Vec<(&[f64], &[f64])> =
            xb.iter().zip(&xt).map(|(a, b)| (a.as_slice(), b.as_slice())).collect();
        let objective = |m: &DeepONet| -> f64 {
            pairs.iter().zip(&coeffs).map(|(&(a, b), c)| c * m.forward(a, b).unwrap()).sum()
        };
        let grad = weighted_gradient(&model, &pairs, &coeffs).unwrap();
        let h = 1e-6;
        for layer in 0..2 {
            for idx in 0..model.branch().layer(layer).entries().len() {
                let mut plus = model.clone();
                plus.branch.layers[layer].entries_mut()[idx] += h;
                let mut minus = model.clone();
                minus.branch.layers[layer].entries_mut()[idx] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = grad.branch[layer].entries()[idx];
                assert!(
                    (fd - an).abs() <= 1e-6 * fd.abs().max(1.0),
                    "layer {layer} idx {idx}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn partial_forward_prefixes_match_full_forward() {
        let mlp = random_mlp(61, &[3, 4, 5, 2], Activation::Abs, 1.0);
        let x = [0.3, -0.7, 1.1];
        assert_eq!(partial_forward(&mlp, &x, 0).unwrap(), x.to_vec());
        // Applying the remaining layers on top of a prefix reproduces the
        // full forward pass.
        let prefix = partial_forward(&mlp, &x, 2).unwrap();
        let tail =
            Mlp::new(mlp.layers()[2..].to_vec(), mlp.activation()).unwrap();
        let full = mlp.forward(&x).unwrap();
        let via_prefix = tail.forward(&prefix).unwrap();
        for (a, b) in full.iter().zip(&via_prefix) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn interval_bound_dominates_sampled_preactivations() {
        let branch = random_mlp(41, &[3, 4, 2], Activation::Relu, 1.0);
        let trunk = random_mlp(42, &[2, 3, 2], Activation::Relu, 1.0);
        let model = DeepONet::new(branch, trunk).unwrap();
        let bound =
            preactivation_bound(&model, &centered_box(3, 1.0), &centered_box(2, 1.0)).unwrap();
        let mut rng = stream_rng(43, "iv", 0);
        for _ in 0..500 {
            let xb: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let xt: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (mlp, x) in [(model.branch(), &xb), (model.trunk(), &xt)] {
                let trace = mlp.forward_trace(x).unwrap();
                for z in &trace.preacts[..mlp.depth() - 1] {
                    for v in z {
                        assert!(v.abs() <= bound + 1e-12, "{v} exceeds certificate {bound}");
                    }
                }
            }
        }
    }
}
