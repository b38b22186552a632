//! Auxiliary observer filters and the delayed linear regression they induce.
//!
//! The observer integrates four matrix filters alongside the plant:
//!
//! ```text
//!   zeta' = A(u, y, t) zeta + B(u, y, t)            zeta(0) free
//!   G'    = A(u, y, t) G + D(u, y, t) H(t) Phi_w    G(0) free
//!   PhiA' = A(u, y, t) PhiA                         PhiA(0) = I_n
//!   Phi_w'= W(t) Phi_w                              Phi_w(0) = I_k
//! ```
//!
//! With `e(t) = zeta(t) - x(t) + G(t) xi(0)` one gets `e' = A e`, so
//! `e(t) = PhiA(t) e(0)` exactly: the unknown initial conditions
//! `theta = col(e(0), xi(0))` are constants, and the delayed measurement
//! turns into the linear regression built by [`regressor`]. For that identity
//! to survive discretisation at round-off level, the observer must evaluate
//! `A`, `B`, `D` with the same measurement samples as the plant — both sides
//! read `y` through the same clamped history channel at the same stage times.

use crate::error::{Error, Result};
use crate::history::{delayed_time, SignalHistory};
use crate::linalg::{rk4_step, Matrix};
use crate::plant::{expect_shape, SystemModel};

/// Observer filter states plus the history the delayed regression samples.
#[derive(Debug, Clone)]
pub struct PeboState {
    /// `n x 1` input-driven copy of the plant dynamics.
    pub zeta: Matrix,
    /// `n x k` sensitivity of the state to the generator's initial condition.
    pub g: Matrix,
    /// `n x n` transition matrix of the closed measurement-driven dynamics.
    pub phi_a: Matrix,
    /// `k x k` transition matrix of the parameter generator.
    pub phi_w: Matrix,
    /// Past `zeta` values, for delayed lookups.
    pub zeta_history: SignalHistory,
    /// Past `g` values.
    pub g_history: SignalHistory,
    /// Past `phi_a` values.
    pub phi_a_history: SignalHistory,
}

impl PeboState {
    /// Fresh observer at time `t0`: zero `zeta` and `G`, identity transition
    /// matrices, histories seeded with the initial values.
    pub fn new(model: &SystemModel, t0: f64) -> Self {
        let n = model.state_dim;
        let k = model.exo_dim;
        Self::seeded(
            model,
            t0,
            Matrix::zeros(n, 1),
            Matrix::zeros(n, k),
        )
    }

    /// Observer with caller-chosen filter initial conditions (the estimate is
    /// invariant to them once the reconstruction converges).
    pub fn with_initial(model: &SystemModel, t0: f64, zeta0: Matrix, g0: Matrix) -> Result<Self> {
        expect_shape(&zeta0, model.state_dim, 1, "zeta initial condition")?;
        expect_shape(&g0, model.state_dim, model.exo_dim, "G initial condition")?;
        Ok(Self::seeded(model, t0, zeta0, g0))
    }

    fn seeded(model: &SystemModel, t0: f64, zeta0: Matrix, g0: Matrix) -> Self {
        let n = model.state_dim;
        let k = model.exo_dim;
        let mut zeta_history = SignalHistory::new(n, 1);
        let mut g_history = SignalHistory::new(n, k);
        let mut phi_a_history = SignalHistory::new(n, n);
        let phi_a = Matrix::identity(n);
        zeta_history.append(t0, zeta0.clone()).expect("seeding an empty history");
        g_history.append(t0, g0.clone()).expect("seeding an empty history");
        phi_a_history.append(t0, phi_a.clone()).expect("seeding an empty history");
        PeboState {
            zeta: zeta0,
            g: g0,
            phi_a,
            phi_w: Matrix::identity(k),
            zeta_history,
            g_history,
            phi_a_history,
        }
    }

    /// Applies a retention window to every internal history.
    pub fn set_retention(&mut self, window: f64) {
        self.zeta_history.set_retention(window);
        self.g_history.set_retention(window);
        self.phi_a_history.set_retention(window);
    }
}

/// Advances all four filters together from `t` to `t + h` and appends the new
/// values to the histories. `measurement` must return the `p x 1` measured
/// output at any stage time in `[t, t + h]`; pass the same channel the plant
/// integrates with so both sides see identical coefficient samples.
pub fn observer_step<F>(
    model: &SystemModel,
    obs: &mut PeboState,
    measurement: F,
    t: f64,
    h: f64,
) -> Result<()>
where
    F: Fn(f64) -> Result<Matrix>,
{
    let n = model.state_dim;
    let k = model.exo_dim;
    let (zn, gn, an) = (n, n * k, n * n);
    let mut stacked = Vec::with_capacity(zn + gn + an + k * k);
    stacked.extend_from_slice(obs.zeta.data());
    stacked.extend_from_slice(obs.g.data());
    stacked.extend_from_slice(obs.phi_a.data());
    stacked.extend_from_slice(obs.phi_w.data());

    let field = |s: f64, v: &[f64]| -> Result<Vec<f64>> {
        let zeta = Matrix::new(n, 1, v[..zn].to_vec())?;
        let g = Matrix::new(n, k, v[zn..zn + gn].to_vec())?;
        let phi_a = Matrix::new(n, n, v[zn + gn..zn + gn + an].to_vec())?;
        let phi_w = Matrix::new(k, k, v[zn + gn + an..].to_vec())?;
        let y = measurement(s)?;
        expect_shape(&y, model.output_dim, 1, "measurement")?;
        let u = (model.input)(s);
        let a = (model.a_mat)(&u, &y, s);
        let b = (model.b_mat)(&u, &y, s);
        let d = (model.d_mat)(&u, &y, s);
        expect_shape(&a, n, n, "A")?;
        expect_shape(&b, n, 1, "B")?;
        expect_shape(&d, n, model.param_dim, "D")?;
        // The G filter is forced by D H Phi_w with the stage value of Phi_w,
        // so that G tracks the sensitivity to xi(0) rather than to xi(t).
        let forcing = &(&d * &(model.param_map)(s)) * &phi_w;
        let d_zeta = &(&a * &zeta) + &b;
        let d_g = &(&a * &g) + &forcing;
        let d_phi_a = &a * &phi_a;
        let d_phi_w = &(model.exo_mat)(s) * &phi_w;
        let mut out = d_zeta.into_data();
        out.extend(d_g.into_data());
        out.extend(d_phi_a.into_data());
        out.extend(d_phi_w.into_data());
        Ok(out)
    };

    let next = rk4_step(field, t, &stacked, h)?;
    obs.zeta = Matrix::new(n, 1, next[..zn].to_vec())?;
    obs.g = Matrix::new(n, k, next[zn..zn + gn].to_vec())?;
    obs.phi_a = Matrix::new(n, n, next[zn + gn..zn + gn + an].to_vec())?;
    obs.phi_w = Matrix::new(k, k, next[zn + gn + an..].to_vec())?;
    let t_next = t + h;
    obs.zeta_history.append(t_next, obs.zeta.clone())?;
    obs.g_history.append(t_next, obs.g.clone())?;
    obs.phi_a_history.append(t_next, obs.phi_a.clone())?;
    Ok(())
}

/// One sample of the delayed linear regression `z = Psi theta`.
#[derive(Debug, Clone)]
pub struct Regression {
    /// `p x (n + k)` regressor `C(phi) [PhiA(phi) | -G(phi)]`.
    pub psi: Matrix,
    /// `p x 1` response `C(phi) zeta(phi) - y(t)`.
    pub z: Matrix,
}

/// Builds the regression sample at time `t` from the observer histories and
/// the measured output `y(t)`. The unknown vector the regression refers to is
/// `theta = col(e(0), xi(0))` with `e(0) = zeta(0) - x(0) + G(0) xi(0)`.
pub fn regressor(
    model: &SystemModel,
    obs: &PeboState,
    y: &Matrix,
    t: f64,
) -> Result<Regression> {
    expect_shape(y, model.output_dim, 1, "measurement")?;
    let t0 = obs
        .zeta_history
        .first_time()
        .ok_or(Error::OutOfRange { t, start: f64::NAN, end: f64::NAN })?;
    let phi = delayed_time(t, &model.delay, t0);
    let zeta_phi = obs.zeta_history.sample(phi)?;
    let g_phi = obs.g_history.sample(phi)?;
    let phi_a_phi = obs.phi_a_history.sample(phi)?;
    let c = (model.c_mat)(phi);
    expect_shape(&c, model.output_dim, model.state_dim, "C")?;
    let psi = &c * &phi_a_phi.hstack(&(-&g_phi));
    let z = &(&c * &zeta_phi) - y;
    Ok(Regression { psi, z })
}
