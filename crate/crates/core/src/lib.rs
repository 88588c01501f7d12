//! Operator-learning toolkit around the DeepONet architecture: branch/trunk
//! networks with an inner-product head, norm-based capacity measures, Monte
//! Carlo estimation of empirical Rademacher complexity, numerical
//! certification of the supporting inequalities, and a small training
//! harness for synthetic ODE solution-operator tasks.
//!
//! Module layout:
//!
//! - [`linalg`]: dense matrices, row/Frobenius norms, power-iteration
//!   spectral norm. The numeric substrate for everything else.
//! - [`network`]: MLPs and DeepONets, forward evaluation, depth
//!   symmetrization, the ReLU-to-abs rewrite, JSON checkpoints.
//! - [`capacity`]: layer-wise capacity measures, the composite measure,
//!   and the closed-form Rademacher / generalization bounds.
//! - [`rademacher`]: sign-vector Monte Carlo estimation of empirical
//!   Rademacher complexity and the certification checks (contraction,
//!   sup-doubling, rank-one supremum, peeling).
//! - [`operator_data`]: forced-pendulum and antiderivative datasets,
//!   Fourier forcing sampling, RK4, JSONL dataset files.
//! - [`training`]: DeepONet loss, exact reverse-mode gradients with the
//!   composite measure as a regularizer, SGD/Adam trainer, gap reports.

pub mod capacity;
pub mod iofmt;
pub mod linalg;
pub mod network;
pub mod operator_data;
pub mod rademacher;
pub mod seeds;
pub mod sphere;
pub mod training;
