//! Regression extension, mixing, and the fixed-time parameter estimator.
//!
//! The delayed regression `z = Psi theta` is averaged through first-order
//! filters into `Y = Omega theta` (extension), decoupled per component with
//! the adjugate trick `adj(Omega) Y = det(Omega) theta` (mixing), and fed to
//! a scalar-gain gradient estimator whose decay is tracked by a weight `w`.
//! Once `w` drops below `1 - mu`, the affine combination
//! `(theta_hat - w_c theta_hat(0)) / (1 - w_c)` returns the parameter vector
//! exactly — convergence in fixed time rather than asymptotically.

use crate::error::{Error, Result};
use crate::linalg::{adjugate, determinant, rk4_step, Matrix};
use crate::pebo::{PeboState, Regression};
use crate::plant::{expect_shape, SystemModel};

/// Decay weights are floored here instead of flushing to zero, so the
/// fixed-time combination stays well defined arbitrarily long after
/// convergence.
pub const W_FLOOR: f64 = 1e-300;

/// Extension filter state: exponentially averaged regressor moments.
#[derive(Debug, Clone)]
pub struct DremState {
    /// `dim x 1` averaged response `Y`, forced by `Psi^T z`.
    pub y_filt: Matrix,
    /// `dim x dim` averaged Gram matrix `Omega`, forced by `Psi^T Psi`.
    pub omega: Matrix,
    /// Filter bandwidth (the forgetting rate).
    pub lambda: f64,
}

impl DremState {
    /// Zero-initialised filters for a `dim`-parameter regression; errors
    /// unless `dim >= 1` and `lambda > 0`.
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("extension filter needs at least one parameter".into()));
        }
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::Config(format!(
                "filter bandwidth must be positive and finite, got {lambda}"
            )));
        }
        Ok(DremState {
            y_filt: Matrix::zeros(dim, 1),
            omega: Matrix::zeros(dim, dim),
            lambda,
        })
    }

    /// Number of parameters the filters average over.
    pub fn dim(&self) -> usize {
        self.y_filt.rows()
    }
}

/// Advances the extension filters by one step of length `h`, holding the
/// regression sample fixed across the step (its value at the left endpoint).
/// Both filters see the same decay polynomial, so `Y = Omega theta` is
/// preserved exactly whenever every held sample satisfies `z = Psi theta`.
pub fn drem_step(d: &mut DremState, reg: &Regression, h: f64) -> Result<()> {
    let dim = d.dim();
    if reg.psi.cols() != dim {
        return Err(Error::dimension(
            "extension step",
            format!("regressor has {} columns, filters expect {dim}", reg.psi.cols()),
        ));
    }
    if reg.z.shape() != (reg.psi.rows(), 1) {
        return Err(Error::dimension(
            "extension step",
            format!(
                "response is {}x{}, regressor has {} rows",
                reg.z.rows(),
                reg.z.cols(),
                reg.psi.rows()
            ),
        ));
    }
    let psi_t = reg.psi.transpose();
    let force_y = (&psi_t * &reg.z).scaled(d.lambda);
    let force_omega = (&psi_t * &reg.psi).scaled(d.lambda);

    let mut stacked = Vec::with_capacity(dim + dim * dim);
    stacked.extend_from_slice(d.y_filt.data());
    stacked.extend_from_slice(d.omega.data());
    let mut forcing = Vec::with_capacity(stacked.len());
    forcing.extend_from_slice(force_y.data());
    forcing.extend_from_slice(force_omega.data());

    let lambda = d.lambda;
    // With the sample held, every component follows v' = -lambda v + const.
    let field = |_s: f64, v: &[f64]| -> Result<Vec<f64>> {
        Ok(v.iter().zip(&forcing).map(|(vi, fi)| -lambda * vi + fi).collect())
    };
    let next = rk4_step(field, 0.0, &stacked, h)?;
    d.y_filt = Matrix::new(dim, 1, next[..dim].to_vec())?;
    d.omega = Matrix::new(dim, dim, next[dim..].to_vec())?;
    Ok(())
}

/// Mixed (per-component) regression `y_mixed = delta * theta`.
#[derive(Debug, Clone)]
pub struct Mixed {
    /// `dim x 1` mixed response `adj(Omega) Y`.
    pub y_mixed: Matrix,
    /// Scalar regressor `det(Omega)`; zero exactly when `Omega` is singular.
    pub delta: f64,
}

/// Applies the adjugate mixing step. Works verbatim for singular `Omega`:
/// `adj(Omega) Omega = det(Omega) I` holds with no rank assumption, so the
/// relation `y_mixed = delta * theta` degrades to `0 = 0` rather than
/// breaking.
pub fn mix(d: &DremState) -> Result<Mixed> {
    let adj = adjugate(&d.omega)?;
    let delta = determinant(&d.omega)?;
    Ok(Mixed { y_mixed: &adj * &d.y_filt, delta })
}

/// Gradient estimator state together with everything the fixed-time
/// combination needs.
#[derive(Debug, Clone)]
pub struct FctState {
    /// Current gradient estimate of the parameter vector.
    pub theta_hat: Matrix,
    /// Estimate at the start time, stored for the fixed-time combination.
    pub theta_hat0: Matrix,
    /// Decay weight: `w(t) = exp(-gamma int delta^2)`, floored at
    /// [`W_FLOOR`].
    pub w: f64,
    /// Adaptation gain.
    pub gamma: f64,
    /// Clipping margin in `(0, 1)`; convergence is declared at
    /// `w <= 1 - mu`.
    pub mu: f64,
    /// Set when a step overflowed the decay exponent and the estimate was
    /// snapped to its instantaneous target instead.
    pub saturated: bool,
}

impl FctState {
    /// Estimator for `dim` parameters; `theta0` defaults to zero. Errors
    /// unless `gamma > 0` and `0 < mu < 1`.
    pub fn new(dim: usize, gamma: f64, mu: f64, theta0: Option<Matrix>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("estimator needs at least one parameter".into()));
        }
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(Error::Config(format!(
                "adaptation gain must be positive and finite, got {gamma}"
            )));
        }
        check_mu(mu)?;
        let theta_hat = match theta0 {
            Some(m) => {
                expect_shape(&m, dim, 1, "estimator initial condition")?;
                m
            }
            None => Matrix::zeros(dim, 1),
        };
        Ok(FctState {
            theta_hat0: theta_hat.clone(),
            theta_hat,
            w: 1.0,
            gamma,
            mu,
            saturated: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_hat.rows()
    }
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Config(format!("clipping margin must lie in (0, 1), got {mu}")));
    }
    Ok(())
}

/// `(1 - e^-a) / a`, continuously extended by 1 at zero.
fn phi1(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        -(-a).exp_m1() / a
    }
}

/// Advances the gradient estimate and its decay weight across one step using
/// the mixed samples at both step endpoints.
///
/// The estimator ODEs `theta_hat' = -gamma delta (delta theta_hat - y_mixed)`
/// and `w' = -gamma delta^2 w` are integrated exactly against the trapezoidal
/// average of their coefficients: with `a = gamma h (dp^2 + dc^2) / 2`,
///
/// ```text
///   theta_hat <- e^-a theta_hat
///                + phi1(a) * gamma h (dp yp + dc yc) / 2
///   w         <- max(e^-a w, W_FLOOR)
/// ```
///
/// This keeps two invariants to round-off regardless of the gain: the error
/// recursion `theta_hat - theta <- e^-a (theta_hat - theta)` whenever the
/// samples satisfy `y_mixed = delta theta`, and the closed form
/// `w = exp(-gamma trapz(delta^2))`. Stiffness is immaterial because the
/// update is an exact exponential, never an explicit Euler-like extrapolation.
/// If the exponent overflows to infinity, the estimate snaps to the
/// instantaneous target `y_mixed / delta` and the step is flagged in
/// [`FctState::saturated`].
pub fn gradient_step(f: &mut FctState, prev: &Mixed, curr: &Mixed, h: f64) -> Result<()> {
    let dim = f.dim();
    expect_shape(&prev.y_mixed, dim, 1, "mixed response")?;
    expect_shape(&curr.y_mixed, dim, 1, "mixed response")?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step size must be positive and finite, got {h}")));
    }
    let half_gh = 0.5 * f.gamma * h;
    let a = half_gh * (prev.delta * prev.delta + curr.delta * curr.delta);
    let drive = (&prev.y_mixed.scaled(prev.delta) + &curr.y_mixed.scaled(curr.delta))
        .scaled(half_gh);
    if !a.is_finite() || !drive.all_finite() {
        let target = if curr.delta != 0.0 && curr.delta.is_finite() {
            curr.y_mixed.scaled(1.0 / curr.delta)
        } else {
            f.theta_hat.clone()
        };
        if !target.all_finite() {
            return Err(Error::NonFinite { what: "gradient update", t: f64::NAN });
        }
        f.theta_hat = target;
        f.w = W_FLOOR;
        f.saturated = true;
        return Ok(());
    }
    let decay = (-a).exp();
    f.theta_hat = &f.theta_hat.scaled(decay) + &drive.scaled(phi1(a));
    f.w = (decay * f.w).max(W_FLOOR);
    Ok(())
}

/// Clips the decay weight away from 1: returns `w` when `w <= 1 - mu` and
/// `1 - mu` otherwise. Errors unless `0 < mu < 1`.
pub fn clip(w: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    Ok(w.min(1.0 - mu))
}

/// The fixed-time estimate `(theta_hat - w_c theta_hat(0)) / (1 - w_c)` with
/// `w_c` the clipped weight. Equals `theta_hat0` while `w = 1` and the exact
/// parameter vector once `w <= 1 - mu` (given exact mixed samples).
pub fn theta_fct(f: &FctState) -> Matrix {
    let w_c = f.w.min(1.0 - f.mu);
    let denom = 1.0 - w_c;
    (&f.theta_hat - &f.theta_hat0.scaled(w_c)).scaled(1.0 / denom)
}

/// Excitation level at which the fixed-time combination becomes exact: the
/// estimate is recovered once `int_0^t delta^2 >= ie_threshold(gamma, mu)`,
/// i.e. once `w` has decayed to `1 - mu`.
pub fn ie_threshold(gamma: f64, mu: f64) -> Result<f64> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::Config(format!(
            "adaptation gain must be positive and finite, got {gamma}"
        )));
    }
    check_mu(mu)?;
    Ok(-(-mu).ln_1p() / gamma)
}

/// Reconstructs the state and parameter estimates at time `t` from the
/// observer filters and the fixed-time parameter estimate:
/// `x_hat = zeta - PhiA theta_e + G theta_w` and
/// `eta_hat = H(t) Phi_w theta_w`, where `theta_e` / `theta_w` are the two
/// blocks of the fixed-time estimate.
pub fn reconstruct(
    model: &SystemModel,
    obs: &PeboState,
    f: &FctState,
    t: f64,
) -> Result<(Matrix, Matrix)> {
    let n = model.state_dim;
    let k = model.exo_dim;
    if f.dim() != n + k {
        return Err(Error::dimension(
            "reconstruction",
            format!("estimator has {} parameters, model needs {}", f.dim(), n + k),
        ));
    }
    expect_shape(&obs.zeta, n, 1, "zeta")?;
    expect_shape(&obs.g, n, k, "G")?;
    expect_shape(&obs.phi_a, n, n, "PhiA")?;
    expect_shape(&obs.phi_w, k, k, "Phi_w")?;
    let theta = theta_fct(f);
    let theta_e = theta.row_block(0, n);
    let theta_w = theta.row_block(n, n + k);
    let x_hat = &(&obs.zeta - &(&obs.phi_a * &theta_e)) + &(&obs.g * &theta_w);
    let h = (model.param_map)(t);
    expect_shape(&h, model.param_dim, k, "H")?;
    let eta_hat = &h * &(&obs.phi_w * &theta_w);
    Ok((x_hat, eta_hat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant_regression(psi: &[f64], z: f64) -> Regression {
        Regression {
            psi: Matrix::new(1, psi.len(), psi.to_vec()).unwrap(),
            z: Matrix::column(&[z]),
        }
    }

    #[test]
    fn extension_filters_match_their_first_order_closed_form() {
        // Constant Psi = [1, 2], z = 3, lambda = 1, zero initial conditions:
        // Y(t) = (1 - e^-t) Psi^T z and Omega(t) = (1 - e^-t) Psi^T Psi.
        let mut d = DremState::new(2, 1.0).unwrap();
        let reg = constant_regression(&[1.0, 2.0], 3.0);
        let h = 1e-3;
        for _ in 0..1000 {
            drem_step(&mut d, &reg, h).unwrap();
        }
        let gain = 1.0 - (-1.0f64).exp();
        let expect_y = [3.0 * gain, 6.0 * gain];
        let expect_omega = [gain, 2.0 * gain, 2.0 * gain, 4.0 * gain];
        for (got, want) in d.y_filt.data().iter().zip(expect_y) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
        for (got, want) in d.omega.data().iter().zip(expect_omega) {
            assert_abs_diff_eq!(got, &want, epsilon = 1e-12);
        }
    }

    #[test]
    fn extension_preserves_the_regression_identity_for_varying_regressors() {
        // Whenever each held sample satisfies z = Psi theta, the filters keep
        // Y = Omega theta exactly, regressor variation notwithstanding.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = Matrix::column(&[0.7, -1.2, 0.4]);
        let mut d = DremState::new(3, 2.0).unwrap();
        for _ in 0..1000 {
            let psi_row: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let psi = Matrix::new(1, 3, psi_row).unwrap();
            let z = &psi * &theta;
            drem_step(&mut d, &Regression { psi, z }, 1e-2).unwrap();
        }
        let defect = (&d.y_filt - &(&d.omega * &theta)).norm_inf();
        assert!(defect < 1e-12, "identity defect {defect}");
    }

    #[test]
    fn mixing_decouples_the_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..100 {
            let n = rng.gen_range(1..=5);
            // Omega = L L^T + shift I is comfortably non-singular.
            let l = Matrix::new(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
            let omega = &(&l * &l.transpose()) + &Matrix::identity(n).scaled(0.3);
            let theta =
                Matrix::column(&(0..n).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>());
            let d = DremState { y_filt: &omega * &theta, omega, lambda: 1.0 };
            let mixed = mix(&d).unwrap();
            let defect = (&mixed.y_mixed - &theta.scaled(mixed.delta)).norm_inf();
            let scale = 1.0 + mixed.delta.abs() * theta.norm_inf();
            assert!(defect <= 1e-10 * scale, "mixing defect {defect} at n = {n}");
        }
    }

    #[test]
    fn mixing_a_singular_gram_matrix_gives_exact_zeros() {
        // Integer rank-1 Omega with consistent Y: delta = 0 and y_mixed = 0,
        // both exactly.
        let omega = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let theta = Matrix::column(&[1.0, 1.0]);
        let d = DremState { y_filt: &omega * &theta, omega, lambda: 1.0 };
        let mixed = mix(&d).unwrap();
        assert_eq!(mixed.delta, 0.0);
        assert!(mixed.y_mixed.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_estimator_matches_its_exponential_closed_form() {
        // Constant delta with consistent y_mixed = delta * target: theta_hat
        // relaxes to the target and w decays as exp(-gamma delta^2 t), both
        // exactly up to round-off accumulation.
        let target = Matrix::column(&[2.0, -1.0]);
        let delta = 0.5;
        let gamma = 2.0;
        let sample = Mixed { y_mixed: target.scaled(delta), delta };
        let mut f = FctState::new(2, gamma, 0.01, None).unwrap();
        let h = 1e-3;
        for _ in 0..1000 {
            gradient_step(&mut f, &sample, &sample, h).unwrap();
        }
        let w_expect = (-gamma * delta * delta).exp();
        assert_abs_diff_eq!(f.w, w_expect, epsilon = 1e-12);
        for (got, want) in f.theta_hat.data().iter().zip(target.data()) {
            assert_abs_diff_eq!(got, &((1.0 - w_expect) * want), epsilon = 1e-12);
        }
    }

    #[test]
    fn clipping_and_the_fixed_time_combination() {
        assert_eq!(clip(0.5, 0.01).unwrap(), 0.5);
        assert_eq!(clip(0.995, 0.01).unwrap(), 0.99);
        assert!(clip(0.5, 0.0).is_err());
        assert!(clip(0.5, 1.0).is_err());

        // Before any excitation (w = 1) the combination returns theta_hat0,
        // up to the round-off of the clip algebra (mu and 1 - mu are not
        // exactly representable).
        let f = FctState::new(2, 1.0, 0.01, Some(Matrix::column(&[3.0, -4.0]))).unwrap();
        for (got, want) in theta_fct(&f).data().iter().zip(&[3.0, -4.0]) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }

        // Once w <= 1 - mu the combination inverts the decay exactly:
        // theta_hat = theta + w (theta_hat0 - theta) maps back to theta.
        let theta = Matrix::column(&[1.5, 0.25]);
        let theta0 = Matrix::column(&[-1.0, 2.0]);
        let w = 0.4;
        let mut f = FctState::new(2, 1.0, 0.01, Some(theta0.clone())).unwrap();
        f.theta_hat = &theta + &(&theta0 - &theta).scaled(w);
        f.w = w;
        for (got, want) in theta_fct(&f).data().iter().zip(theta.data()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn excitation_threshold_values() {
        // gamma = 1e12, mu = 0.01: -ln(0.99) / 1e12.
        let rho = ie_threshold(1e12, 0.01).unwrap();
        assert_abs_diff_eq!(rho, 1.0050335853501441e-14, epsilon = 1e-28);
        // mu = 1 - 1/e makes the threshold exactly 1/gamma.
        let rho = ie_threshold(1.0, 1.0 - (-1.0f64).exp()).unwrap();
        assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-14);
        assert!(ie_threshold(0.0, 0.5).is_err());
        assert!(ie_threshold(1.0, 1.5).is_err());
    }

    #[test]
    fn overflowing_decay_saturates_to_the_instantaneous_target() {
        let theta = Matrix::column(&[4.0, -0.5]);
        let delta = 1e200;
        let sample = Mixed { y_mixed: theta.scaled(delta), delta };
        let mut f = FctState::new(2, 1e12, 0.01, None).unwrap();
        gradient_step(&mut f, &sample, &sample, 1.0).unwrap();
        assert!(f.saturated);
        assert_eq!(f.w, W_FLOOR);
        for (got, want) in f.theta_hat.data().iter().zip(theta.data()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn estimator_parameters_are_validated() {
        assert!(DremState::new(0, 1.0).is_err());
        assert!(DremState::new(2, 0.0).is_err());
        assert!(FctState::new(2, -1.0, 0.01, None).is_err());
        assert!(FctState::new(2, 1.0, 0.0, None).is_err());
        assert!(FctState::new(2, 1.0, 0.01, Some(Matrix::zeros(3, 1))).is_err());
        let mut f = FctState::new(1, 1.0, 0.01, None).unwrap();
        let m = Mixed { y_mixed: Matrix::zeros(1, 1), delta: 0.0 };
        assert!(gradient_step(&mut f, &m, &m, 0.0).is_err());
    }
}
