//! The simulated system: state dynamics that are affine in the state and in
//! an exogenously generated parameter vector, observed through a delayed
//! output.
//!
//! The model is
//!
//! ```text
//!   x'(t)   = A(u, y, t) x(t) + D(u, y, t) eta(t) + B(u, y, t)
//!   eta(t)  = H(t) xi(t)
//!   xi'(t)  = W(t) xi(t)                 (autonomous generator)
//!   y(t)    = C(phi(t)) x(phi(t)),  phi(t) = max(t0, t - d(t))
//! ```
//!
//! with `u` a known input. The coefficient matrices may depend on the
//! measured (delayed) output, which makes the right-hand side retarded: all
//! integrator stage evaluations fetch `y` from the recorded state history.

use crate::error::{Error, Result};
use crate::history::{delayed_time, DelayFunction, SignalHistory};
use crate::linalg::{rk4_step, Matrix};
use std::sync::Arc;

/// Coefficient matrix as a function of input, measured output, and time.
pub type StateMatrixFn = Arc<dyn Fn(&Matrix, &Matrix, f64) -> Matrix + Send + Sync>;

/// Coefficient matrix (or signal) as a function of time only.
pub type TimeMatrixFn = Arc<dyn Fn(f64) -> Matrix + Send + Sync>;

/// Complete description of a plant to simulate and observe.
#[derive(Clone)]
pub struct SystemModel {
    /// Number of plant states `n`.
    pub state_dim: usize,
    /// Number of input channels `m`.
    pub input_dim: usize,
    /// Number of measured outputs `p`.
    pub output_dim: usize,
    /// Number of time-varying parameters `q`.
    pub param_dim: usize,
    /// Dimension `k` of the parameter generator state.
    pub exo_dim: usize,
    /// State coefficient `A(u, y, t)`, `n x n`.
    pub a_mat: StateMatrixFn,
    /// Affine drift `B(u, y, t)`, `n x 1`.
    pub b_mat: StateMatrixFn,
    /// Parameter input matrix `D(u, y, t)`, `n x q`.
    pub d_mat: StateMatrixFn,
    /// Output matrix `C(t)`, `p x n`, evaluated at the delayed time.
    pub c_mat: TimeMatrixFn,
    /// Parameter map `H(t)`, `q x k`, turning generator states into parameters.
    pub param_map: TimeMatrixFn,
    /// Generator matrix `W(t)`, `k x k`.
    pub exo_mat: TimeMatrixFn,
    /// Known input signal `u(t)`, `m x 1`.
    pub input: TimeMatrixFn,
    /// Measurement delay shared by plant and observer.
    pub delay: DelayFunction,
}

impl std::fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("output_dim", &self.output_dim)
            .field("param_dim", &self.param_dim)
            .field("exo_dim", &self.exo_dim)
            .field("delay", &self.delay)
            .finish()
    }
}

impl SystemModel {
    /// Probes every coefficient closure at time `t` (with zero input and
    /// output) and errors unless all declared dimensions line up.
    pub fn validate_shapes(&self, t: f64) -> Result<()> {
        for (dim, name) in [
            (self.state_dim, "state_dim"),
            (self.input_dim, "input_dim"),
            (self.output_dim, "output_dim"),
            (self.param_dim, "param_dim"),
            (self.exo_dim, "exo_dim"),
        ] {
            if dim == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let u = Matrix::zeros(self.input_dim, 1);
        let y = Matrix::zeros(self.output_dim, 1);
        expect_shape(&(self.a_mat)(&u, &y, t), self.state_dim, self.state_dim, "A")?;
        expect_shape(&(self.b_mat)(&u, &y, t), self.state_dim, 1, "B")?;
        expect_shape(&(self.d_mat)(&u, &y, t), self.state_dim, self.param_dim, "D")?;
        expect_shape(&(self.c_mat)(t), self.output_dim, self.state_dim, "C")?;
        expect_shape(&(self.param_map)(t), self.param_dim, self.exo_dim, "H")?;
        expect_shape(&(self.exo_mat)(t), self.exo_dim, self.exo_dim, "generator matrix")?;
        expect_shape(&(self.input)(t), self.input_dim, 1, "input")?;
        Ok(())
    }
}

/// Plant state: the observed states `x` and the parameter generator state
/// `xi`, integrated together.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// `n x 1` state vector.
    pub x: Matrix,
    /// `k x 1` generator state.
    pub xi: Matrix,
}

impl PlantState {
    /// Builds a plant state from plain slices.
    pub fn from_slices(x: &[f64], xi: &[f64]) -> Self {
        PlantState { x: Matrix::column(x), xi: Matrix::column(xi) }
    }
}

pub(crate) fn expect_shape(m: &Matrix, rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dimension(
            what,
            format!("expected {rows}x{cols}, got {}x{}", m.rows(), m.cols()),
        ));
    }
    Ok(())
}

/// Current parameter vector `eta = H(t) xi`.
pub fn eta_of(model: &SystemModel, t: f64, xi: &Matrix) -> Result<Matrix> {
    expect_shape(xi, model.exo_dim, 1, "generator state")?;
    let h = (model.param_map)(t);
    expect_shape(&h, model.param_dim, model.exo_dim, "H")?;
    Ok(&h * xi)
}

/// Delayed measurement `y(t) = C(phi) x(phi)` with `phi = max(t0, t - d(t))`,
/// `t0` the oldest retained history time. Errors when the delayed time is not
/// covered by the recorded history.
pub fn measure(model: &SystemModel, x_history: &SignalHistory, t: f64) -> Result<Matrix> {
    let t0 = x_history
        .first_time()
        .ok_or(Error::OutOfRange { t, start: f64::NAN, end: f64::NAN })?;
    let phi = delayed_time(t, &model.delay, t0);
    let x_phi = x_history.sample(phi)?;
    Ok(&(model.c_mat)(phi) * &x_phi)
}

/// Variant of [`measure`] for integrator stage times: when the delayed time
/// lies beyond the newest recorded sample (possible while a step is being
/// taken and for sub-step delays) the newest sample stands in for it. Both
/// the plant and the observer evaluate their shared coefficients through this
/// channel so they see bit-identical outputs.
pub fn measure_clamped(model: &SystemModel, x_history: &SignalHistory, t: f64) -> Result<Matrix> {
    let (t0, last) = match (x_history.first_time(), x_history.last_time()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::OutOfRange { t, start: f64::NAN, end: f64::NAN }),
    };
    let phi = delayed_time(t, &model.delay, t0).min(last);
    let x_phi = x_history.sample(phi)?;
    Ok(&(model.c_mat)(phi) * &x_phi)
}

/// Advances plant state and generator state together from `t` to `t + h` with
/// one classical Runge-Kutta step, fetching delayed measurements from
/// `x_history`. The caller appends the returned state to the history.
pub fn plant_step(
    model: &SystemModel,
    state: &PlantState,
    x_history: &SignalHistory,
    t: f64,
    h: f64,
) -> Result<PlantState> {
    let n = model.state_dim;
    let k = model.exo_dim;
    expect_shape(&state.x, n, 1, "plant state")?;
    expect_shape(&state.xi, k, 1, "generator state")?;

    let mut stacked = Vec::with_capacity(n + k);
    stacked.extend_from_slice(state.x.data());
    stacked.extend_from_slice(state.xi.data());

    let field = |s: f64, v: &[f64]| -> Result<Vec<f64>> {
        let x = Matrix::column(&v[..n]);
        let xi = Matrix::column(&v[n..]);
        let y = measure_clamped(model, x_history, s)?;
        let u = (model.input)(s);
        let a = (model.a_mat)(&u, &y, s);
        let b = (model.b_mat)(&u, &y, s);
        let d = (model.d_mat)(&u, &y, s);
        expect_shape(&a, n, n, "A")?;
        expect_shape(&b, n, 1, "B")?;
        expect_shape(&d, n, model.param_dim, "D")?;
        let eta = eta_of(model, s, &xi)?;
        let dx = &(&(&a * &x) + &(&d * &eta)) + &b;
        let dxi = &(model.exo_mat)(s) * &xi;
        let mut out = dx.into_data();
        out.extend(dxi.into_data());
        Ok(out)
    };

    let next = rk4_step(field, t, &stacked, h)?;
    Ok(PlantState {
        x: Matrix::column(&next[..n]),
        xi: Matrix::column(&next[n..]),
    })
}
