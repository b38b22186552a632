//! Scenario configuration, the built-in benchmark model, the co-simulation
//! loop that couples plant and observer, and post-run summaries.
//!
//! One step of the loop, from `t` to `t + h`:
//!
//! 1. advance the observer filters, reading measurements from the state
//!    history recorded so far (plant and observer share the same channel);
//! 2. advance the plant from the same snapshot, then append the new state;
//! 3. measure at `t + h`, build the delayed regression sample;
//! 4. advance the extension filters with the sample held from `t`;
//! 5. mix, update the gradient estimator with the step's endpoint pair;
//! 6. reconstruct the state and parameter estimates, record everything.

use crate::drem::{
    drem_step, gradient_step, ie_threshold, mix, reconstruct, theta_fct, DremState, FctState,
};
use crate::error::{Error, Result};
use crate::history::{DelayFunction, SignalHistory};
use crate::linalg::Matrix;
use crate::pebo::{observer_step, regressor, PeboState};
use crate::plant::{eta_of, measure, measure_clamped, plant_step, PlantState, SystemModel};
use serde::{Deserialize, Serialize};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

/// Which measurement delay profile the scenario runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DelayCase {
    /// Constant one-second delay.
    #[default]
    C1,
    /// Slowly swaying delay `1 + 0.25 sin t`.
    C2,
    /// Fast bounded delay `0.1 + cos^2(3t)`.
    C3,
    /// Caller-provided delay: valid only with a caller-built model.
    #[serde(rename = "custom")]
    Custom,
}

impl std::str::FromStr for DelayCase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" => Ok(DelayCase::C1),
            "c2" => Ok(DelayCase::C2),
            "c3" => Ok(DelayCase::C3),
            "custom" => Ok(DelayCase::Custom),
            other => Err(Error::Config(format!(
                "unknown delay case '{other}': expected C1, C2, C3, or custom"
            ))),
        }
    }
}

impl std::fmt::Display for DelayCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DelayCase::C1 => "C1",
            DelayCase::C2 => "C2",
            DelayCase::C3 => "C3",
            DelayCase::Custom => "custom",
        };
        f.write_str(s)
    }
}

fn default_model_id() -> String {
    "paper".into()
}
fn default_x0() -> Vec<f64> {
    vec![1.0, 2.0]
}
fn default_xi0() -> Vec<f64> {
    vec![0.0, 0.3, 1.0]
}
fn default_step() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    30.0
}
fn default_lambda() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    1e10
}
fn default_mu() -> f64 {
    0.01
}
fn default_out_path() -> String {
    "observer_run.csv".into()
}

/// Everything a run needs besides the model itself. Unknown keys in a config
/// file are rejected rather than ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Which model to build; `"paper"` selects the built-in benchmark.
    #[serde(default = "default_model_id")]
    pub model_id: String,
    /// Plant initial state.
    #[serde(default = "default_x0")]
    pub x0: Vec<f64>,
    /// Generator initial state.
    #[serde(default = "default_xi0")]
    pub xi0: Vec<f64>,
    /// Integration step.
    #[serde(rename = "h", default = "default_step")]
    pub step: f64,
    /// Run length in seconds.
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    /// Extension filter bandwidth.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Adaptation gain.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Clipping margin for the fixed-time combination.
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Delay profile.
    #[serde(default)]
    pub delay_case: DelayCase,
    /// Reserved for future randomised studies; accepted but unused.
    #[serde(default)]
    pub seed: u64,
    /// Where the CSV output goes.
    #[serde(default = "default_out_path")]
    pub out_path: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            model_id: default_model_id(),
            x0: default_x0(),
            xi0: default_xi0(),
            step: default_step(),
            horizon: default_horizon(),
            lambda: default_lambda(),
            gamma: default_gamma(),
            mu: default_mu(),
            delay_case: DelayCase::default(),
            seed: 0,
            out_path: default_out_path(),
        }
    }
}

impl ScenarioConfig {
    /// Checks every numeric invariant the run relies on.
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::Config(format!("h must be positive and finite, got {}", self.step)));
        }
        if !self.horizon.is_finite() || self.horizon < self.step {
            return Err(Error::Config(format!(
                "T must be finite and at least h, got T = {}, h = {}",
                self.horizon, self.step
            )));
        }
        let steps = (self.horizon / self.step).round();
        if steps > 1e7 {
            return Err(Error::Config(format!(
                "T / h = {steps} steps is beyond the supported range (10^7)"
            )));
        }
        if !self.lambda.is_finite() || self.lambda <= 0.0 {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(Error::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::Config(format!("mu must lie in (0, 1), got {}", self.mu)));
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("x0 must be non-empty and finite".into()));
        }
        if self.xi0.is_empty() || self.xi0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("xi0 must be non-empty and finite".into()));
        }
        Ok(())
    }
}

/// Reads and validates a JSON scenario configuration. Missing keys fall back
/// to the benchmark defaults; unknown keys and malformed values are parse
/// errors.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

/// Builds the built-in benchmark plant: a second-order system whose
/// coefficients depend on the delayed output, driven by two sinusoidal
/// parameters generated by a 3 rad/s oscillator plus a constant offset.
/// Returns the model together with the default configuration for it.
pub fn paper_example(case: DelayCase) -> Result<(SystemModel, ScenarioConfig)> {
    let delay = match case {
        DelayCase::C1 => DelayFunction::constant(1.0),
        DelayCase::C2 => DelayFunction::new(|t: f64| 1.0 + 0.25 * t.sin(), 1.25)?,
        DelayCase::C3 => DelayFunction::new(|t: f64| 0.1 + (3.0 * t).cos().powi(2), 1.1)?,
        DelayCase::Custom => {
            return Err(Error::Config(
                "delay case 'custom' needs a caller-built model with its own delay".into(),
            ));
        }
    };
    let model = SystemModel {
        state_dim: 2,
        input_dim: 1,
        output_dim: 1,
        param_dim: 2,
        exo_dim: 3,
        a_mat: Arc::new(|_u, y, t| {
            let y0 = y[(0, 0)];
            Matrix::from_rows(&[&[-y0 * y0, 1.0], &[-t.sin().powi(2), 0.0]])
        }),
        b_mat: Arc::new(|u, y, _t| {
            Matrix::column(&[0.0, y[(0, 0)].powi(3) * u[(0, 0)]])
        }),
        d_mat: Arc::new(|_u, y, t| {
            Matrix::from_rows(&[&[-2.0 * t.sin(), 0.0], &[0.0, -y[(0, 0)].powi(3)]])
        }),
        c_mat: Arc::new(|_t| Matrix::from_rows(&[&[1.0, 0.0]])),
        param_map: Arc::new(|_t| Matrix::from_rows(&[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]])),
        exo_mat: Arc::new(|_t| {
            Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[-9.0, 0.0, 0.0], &[0.0, 0.0, 0.0]])
        }),
        input: Arc::new(|_t| Matrix::column(&[-1.0])),
        delay,
    };
    let config = ScenarioConfig {
        delay_case: case,
        out_path: format!("paper_{case}.csv"),
        ..ScenarioConfig::default()
    };
    Ok((model, config))
}

/// Instantiates the model a configuration refers to. The catalogue currently
/// holds only `"paper"`.
pub fn build_model(config: &ScenarioConfig) -> Result<SystemModel> {
    match config.model_id.as_str() {
        "paper" => Ok(paper_example(config.delay_case)?.0),
        other => Err(Error::Config(format!(
            "unknown model_id '{other}': the built-in catalogue contains only 'paper'"
        ))),
    }
}

/// One output row of a run.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub t: f64,
    /// True plant state.
    pub x: Vec<f64>,
    /// Reconstructed state estimate.
    pub x_hat: Vec<f64>,
    /// True time-varying parameters.
    pub eta: Vec<f64>,
    /// Reconstructed parameter estimate.
    pub eta_hat: Vec<f64>,
    /// Fixed-time estimate of the constant unknowns.
    pub theta_fct: Vec<f64>,
    /// Decay weight of the gradient estimator.
    pub w: f64,
    /// Scalar mixed regressor.
    pub delta: f64,
    /// Whether the decay weight has left the clip band (`w <= 1 - mu`).
    pub converged: bool,
}

/// Numerical health indicators accumulated over a run. The `sup_*` fields are
/// the largest absolute entries seen; the `max_*` fields are worst-case
/// defects of identities that hold exactly in exact arithmetic, so they
/// measure accumulated floating-point error, not model error.
#[derive(Debug, Clone)]
pub struct RunDiagnostics {
    /// Constant unknown vector `col(e(0), xi(0))` the run's regression refers
    /// to (known here because the simulator chose the initial conditions).
    pub theta_true: Vec<f64>,
    pub sup_x: f64,
    pub sup_xi: f64,
    pub sup_zeta: f64,
    pub sup_g: f64,
    pub sup_phi_a: f64,
    pub sup_phi_w: f64,
    pub sup_y_filt: f64,
    pub sup_omega: f64,
    /// Worst defect of the delayed regression `z = Psi theta`.
    pub max_lre_residual: f64,
    /// Worst defect of the mixing identity `y_mixed = delta theta`.
    pub max_mixing_residual: f64,
    /// Worst defect of the decay identity
    /// `theta_hat - theta = w (theta_hat(0) - theta)`.
    pub max_estimator_identity_err: f64,
    /// Worst relative defect of `det PhiA = exp(trapz tr A)`.
    pub max_liouville_rel_err: f64,
    /// Whether any gradient step overflowed and saturated.
    pub saturated: bool,
}

/// Full result of a run.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub records: Vec<EstimateRecord>,
    pub diagnostics: RunDiagnostics,
}

/// Optional non-default initial conditions for the observer side. The
/// reconstruction is invariant to all of them after convergence, which is
/// worth testing, hence the knobs.
#[derive(Debug, Clone, Default)]
pub struct InitialOverrides {
    pub zeta0: Option<Matrix>,
    pub g0: Option<Matrix>,
    pub theta_hat0: Option<Matrix>,
}

/// Runs the coupled plant/observer simulation with default (zero) observer
/// initial conditions.
pub fn run_scenario(model: &SystemModel, config: &ScenarioConfig) -> Result<SimOutput> {
    run_scenario_with(model, config, &InitialOverrides::default())
}

/// Runs the coupled plant/observer simulation.
pub fn run_scenario_with(
    model: &SystemModel,
    config: &ScenarioConfig,
    init: &InitialOverrides,
) -> Result<SimOutput> {
    config.validate()?;
    model.validate_shapes(0.0)?;
    let n = model.state_dim;
    let k = model.exo_dim;
    let dim = n + k;
    if config.x0.len() != n {
        return Err(Error::Config(format!(
            "x0 has {} entries, the model has {n} states",
            config.x0.len()
        )));
    }
    if config.xi0.len() != k {
        return Err(Error::Config(format!(
            "xi0 has {} entries, the generator has {k} states",
            config.xi0.len()
        )));
    }

    let h = config.step;
    let steps = (config.horizon / h).round() as usize;
    let t0 = 0.0;
    // Delayed lookups reach at most max_delay behind the newest sample; the
    // extra slack keeps interpolation anchors through edge-of-window queries.
    let retention = model.delay.max_delay() + 16.0 * h;

    let mut plant = PlantState::from_slices(&config.x0, &config.xi0);
    let mut x_hist = SignalHistory::new(n, 1);
    x_hist.set_retention(retention);
    x_hist.append(t0, plant.x.clone())?;

    let mut obs = PeboState::with_initial(
        model,
        t0,
        init.zeta0.clone().unwrap_or_else(|| Matrix::zeros(n, 1)),
        init.g0.clone().unwrap_or_else(|| Matrix::zeros(n, k)),
    )?;
    obs.set_retention(retention);

    let mut drem = DremState::new(dim, config.lambda)?;
    let mut fct = FctState::new(dim, config.gamma, config.mu, init.theta_hat0.clone())?;

    // The constant unknowns this run's regression refers to.
    let theta_true_m = {
        let theta_e = &(&obs.zeta - &plant.x) + &(&obs.g * &plant.xi);
        let mut v = theta_e.into_data();
        v.extend_from_slice(plant.xi.data());
        Matrix::column(&v)
    };

    let y0 = measure(model, &x_hist, t0)?;
    let mut reg = regressor(model, &obs, &y0, t0)?;
    let mut mixed = mix(&drem)?;

    let mut diag = RunDiagnostics {
        theta_true: theta_true_m.data().to_vec(),
        sup_x: plant.x.norm_inf(),
        sup_xi: plant.xi.norm_inf(),
        sup_zeta: obs.zeta.norm_inf(),
        sup_g: obs.g.norm_inf(),
        sup_phi_a: obs.phi_a.norm_inf(),
        sup_phi_w: obs.phi_w.norm_inf(),
        sup_y_filt: drem.y_filt.norm_inf(),
        sup_omega: drem.omega.norm_inf(),
        max_lre_residual: (&reg.z - &(&reg.psi * &theta_true_m)).norm_inf(),
        max_mixing_residual: 0.0,
        max_estimator_identity_err: 0.0,
        max_liouville_rel_err: 0.0,
        saturated: false,
    };
    // Simpson accumulator for trace(A) along the measured trajectory, fed by
    // the same stage-time measurement samples the integrators see; the
    // volume-law diagnostic compares det PhiA against its exponential.
    let trace_at = |hist: &SignalHistory, s: f64| -> Result<f64> {
        let y = measure_clamped(model, hist, s)?;
        Ok((model.a_mat)(&(model.input)(s), &y, s).trace())
    };
    let mut tr_prev = trace_at(&x_hist, t0)?;
    let mut tr_integral = 0.0;

    let mut records = Vec::with_capacity(steps + 1);
    let push_record = |records: &mut Vec<EstimateRecord>,
                       t: f64,
                       plant: &PlantState,
                       x_hat: &Matrix,
                       eta: &Matrix,
                       eta_hat: &Matrix,
                       fct: &FctState,
                       delta: f64,
                       mu: f64| {
        records.push(EstimateRecord {
            t,
            x: plant.x.data().to_vec(),
            x_hat: x_hat.data().to_vec(),
            eta: eta.data().to_vec(),
            eta_hat: eta_hat.data().to_vec(),
            theta_fct: theta_fct(fct).into_data(),
            w: fct.w,
            delta,
            converged: fct.w <= 1.0 - mu,
        });
    };

    let (x_hat0, eta_hat0) = reconstruct(model, &obs, &fct, t0)?;
    let eta0 = eta_of(model, t0, &plant.xi)?;
    push_record(&mut records, t0, &plant, &x_hat0, &eta0, &eta_hat0, &fct, mixed.delta, config.mu);

    let mut t = t0;
    for _ in 0..steps {
        // Midpoint trace sample, read from the pre-step history snapshot the
        // integrator stages are about to use.
        let tr_mid = trace_at(&x_hist, t + 0.5 * h)?;

        observer_step(model, &mut obs, |s| measure_clamped(model, &x_hist, s), t, h)?;
        plant = plant_step(model, &plant, &x_hist, t, h)?;
        t += h;
        x_hist.append(t, plant.x.clone())?;

        let y = measure(model, &x_hist, t)?;
        let reg_next = regressor(model, &obs, &y, t)?;
        drem_step(&mut drem, &reg, h)?;
        let mixed_next = mix(&drem)?;
        gradient_step(&mut fct, &mixed, &mixed_next, h)?;

        let (x_hat, eta_hat) = reconstruct(model, &obs, &fct, t)?;
        let eta = eta_of(model, t, &plant.xi)?;
        push_record(&mut records, t, &plant, &x_hat, &eta, &eta_hat, &fct, mixed_next.delta, config.mu);

        diag.sup_x = diag.sup_x.max(plant.x.norm_inf());
        diag.sup_xi = diag.sup_xi.max(plant.xi.norm_inf());
        diag.sup_zeta = diag.sup_zeta.max(obs.zeta.norm_inf());
        diag.sup_g = diag.sup_g.max(obs.g.norm_inf());
        diag.sup_phi_a = diag.sup_phi_a.max(obs.phi_a.norm_inf());
        diag.sup_phi_w = diag.sup_phi_w.max(obs.phi_w.norm_inf());
        diag.sup_y_filt = diag.sup_y_filt.max(drem.y_filt.norm_inf());
        diag.sup_omega = diag.sup_omega.max(drem.omega.norm_inf());
        diag.max_lre_residual = diag
            .max_lre_residual
            .max((&reg_next.z - &(&reg_next.psi * &theta_true_m)).norm_inf());
        diag.max_mixing_residual = diag
            .max_mixing_residual
            .max((&mixed_next.y_mixed - &theta_true_m.scaled(mixed_next.delta)).norm_inf());
        let decay_defect = (&(&fct.theta_hat - &theta_true_m)
            - &(&fct.theta_hat0 - &theta_true_m).scaled(fct.w))
            .norm_inf();
        diag.max_estimator_identity_err = diag.max_estimator_identity_err.max(decay_defect);

        let tr_next = trace_at(&x_hist, t)?;
        tr_integral += h / 6.0 * (tr_prev + 4.0 * tr_mid + tr_next);
        tr_prev = tr_next;
        if tr_integral.abs() < 500.0 {
            let det_phi_a = crate::linalg::determinant(&obs.phi_a)?;
            let rel = (det_phi_a * (-tr_integral).exp() - 1.0).abs();
            diag.max_liouville_rel_err = diag.max_liouville_rel_err.max(rel);
        }

        reg = reg_next;
        mixed = mixed_next;
    }
    diag.saturated = fct.saturated;
    Ok(SimOutput { records, diagnostics: diag })
}

/// Post-run convergence summary.
#[derive(Debug, Clone)]
pub struct ConvergenceMetrics {
    /// First time the decay weight left the clip band (`w <= 1 - mu`).
    pub t_convergence: Option<f64>,
    /// First grid time the excitation integral `trapz(delta^2)` reached the
    /// threshold from [`ie_threshold`].
    pub t_excitation: Option<f64>,
    /// The threshold itself.
    pub ie_threshold: f64,
    /// Final value of the excitation integral.
    pub excitation_integral: f64,
    /// Largest `|delta|` seen.
    pub max_delta: f64,
    /// Worst Euclidean state estimation error at and after `t_convergence`.
    pub max_state_err_after_tc: Option<f64>,
    /// Worst Euclidean parameter (`eta`) estimation error at and after
    /// `t_convergence`.
    pub max_param_err_after_tc: Option<f64>,
    /// Worst componentwise error of the fixed-time estimate against the
    /// run's reference unknowns, at and after `t_convergence`.
    pub max_theta_err_after_tc: Option<f64>,
}

/// Summarises a finished run: convergence instant, excitation crossing, and
/// worst-case estimation errors past convergence.
pub fn convergence_metrics(output: &SimOutput, gamma: f64, mu: f64) -> Result<ConvergenceMetrics> {
    let rho = ie_threshold(gamma, mu)?;
    let records = &output.records;
    let t_convergence = records.iter().find(|r| r.converged).map(|r| r.t);

    let mut excitation_integral = 0.0;
    let mut t_excitation = None;
    let mut max_delta = 0.0f64;
    for pair in records.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        excitation_integral += 0.5 * (b.t - a.t) * (a.delta * a.delta + b.delta * b.delta);
        if t_excitation.is_none() && excitation_integral >= rho {
            t_excitation = Some(b.t);
        }
        max_delta = max_delta.max(a.delta.abs()).max(b.delta.abs());
    }

    let mut max_state_err = None;
    let mut max_param_err = None;
    let mut max_theta_err = None;
    if let Some(tc) = t_convergence {
        let theta_true = &output.diagnostics.theta_true;
        let mut se = 0.0f64;
        let mut pe = 0.0f64;
        let mut te = 0.0f64;
        for r in records.iter().filter(|r| r.t >= tc) {
            se = se.max(euclid_err(&r.x, &r.x_hat));
            pe = pe.max(euclid_err(&r.eta, &r.eta_hat));
            te = te.max(
                r.theta_fct
                    .iter()
                    .zip(theta_true)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
        }
        max_state_err = Some(se);
        max_param_err = Some(pe);
        max_theta_err = Some(te);
    }

    Ok(ConvergenceMetrics {
        t_convergence,
        t_excitation,
        ie_threshold: rho,
        excitation_integral,
        max_delta,
        max_state_err_after_tc: max_state_err,
        max_param_err_after_tc: max_param_err,
        max_theta_err_after_tc: max_theta_err,
    })
}

fn euclid_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Writes records as CSV: header row, then one row per record with floats at
/// 17 significant digits (round-trip exact) and `converged` as 0/1.
pub fn write_csv<W: io::Write>(records: &[EstimateRecord], out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    let first = match records.first() {
        Some(r) => r,
        None => return Ok(()),
    };
    let mut header = String::from("t");
    for (count, name) in [
        (first.x.len(), "x"),
        (first.x_hat.len(), "xhat"),
        (first.eta.len(), "eta"),
        (first.eta_hat.len(), "etahat"),
        (first.theta_fct.len(), "thetafct"),
    ] {
        for i in 1..=count {
            header.push_str(&format!(",{name}{i}"));
        }
    }
    header.push_str(",w,Delta,converged\n");
    w.write_all(header.as_bytes())?;
    for r in records {
        let mut line = format!("{:.16e}", r.t);
        for v in r
            .x
            .iter()
            .chain(&r.x_hat)
            .chain(&r.eta)
            .chain(&r.eta_hat)
            .chain(&r.theta_fct)
        {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push_str(&format!(",{:.16e},{:.16e},{}\n", r.w, r.delta, u8::from(r.converged)));
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

/// [`write_csv`] straight to a file path.
pub fn write_csv_path(records: &[EstimateRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(records, file)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_config_round_trips_through_json() {
        let config = ScenarioConfig::default();
        let text = serde_json::to_string(&config).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.model_id, "paper");
        assert_eq!(back.step, 1e-3);
        assert_eq!(back.horizon, 30.0);
        assert_eq!(back.delay_case, DelayCase::C1);
    }

    #[test]
    fn partial_configs_fill_in_defaults_and_unknown_keys_are_rejected() {
        let config: ScenarioConfig =
            serde_json::from_str(r#"{"gamma": 1e12, "delay_case": "C3"}"#).unwrap();
        assert_eq!(config.gamma, 1e12);
        assert_eq!(config.delay_case, DelayCase::C3);
        assert_eq!(config.step, 1e-3);
        assert_eq!(config.x0, vec![1.0, 2.0]);

        let err = serde_json::from_str::<ScenarioConfig>(r#"{"gamna": 1e12}"#);
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_rejects_out_of_range_values() {
        let mut config = ScenarioConfig::default();
        config.mu = 1.0;
        assert!(config.validate().is_err());
        config.mu = 0.01;
        config.step = -1.0;
        assert!(config.validate().is_err());
        config.step = 1e-3;
        config.horizon = 1e-5;
        assert!(config.validate().is_err());
        config.horizon = 30.0;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn the_benchmark_delay_profiles_have_the_advertised_values() {
        let (m1, c1) = paper_example(DelayCase::C1).unwrap();
        assert_eq!(m1.delay.delay(5.0), 1.0);
        assert_eq!(c1.out_path, "paper_C1.csv");
        let (m2, _) = paper_example(DelayCase::C2).unwrap();
        assert_eq!(m2.delay.delay(0.0), 1.0);
        assert_eq!(m2.delay.max_delay(), 1.25);
        let (m3, _) = paper_example(DelayCase::C3).unwrap();
        assert_abs_diff_eq!(m3.delay.delay(0.0), 1.1, epsilon = 1e-15);
        assert!(paper_example(DelayCase::Custom).is_err());
    }

    #[test]
    fn build_model_honours_the_model_id() {
        let mut config = ScenarioConfig::default();
        assert!(build_model(&config).is_ok());
        config.model_id = "something_else".into();
        assert!(matches!(build_model(&config), Err(Error::Config(_))));
    }

    #[test]
    fn short_benchmark_run_produces_consistent_records() {
        let (model, mut config) = paper_example(DelayCase::C1).unwrap();
        config.horizon = 0.5;
        let out = run_scenario(&model, &config).unwrap();
        assert_eq!(out.records.len(), 501);
        let r0 = &out.records[0];
        assert_eq!(r0.t, 0.0);
        assert_eq!(r0.x, vec![1.0, 2.0]);
        assert_eq!(r0.eta, vec![1.0, 1.3]);
        assert_eq!(r0.w, 1.0);
        assert_eq!(r0.delta, 0.0);
        assert!(!r0.converged);
        // Reference unknowns: zero filter initial conditions make
        // e(0) = -x(0).
        assert_eq!(out.diagnostics.theta_true, vec![-1.0, -2.0, 0.0, 0.3, 1.0]);
        // Time marches by h throughout.
        let dt = out.records[1].t - out.records[0].t;
        assert_abs_diff_eq!(dt, 1e-3, epsilon = 1e-15);
        // The regression identity holds at round-off level from the start.
        assert!(out.diagnostics.max_lre_residual < 1e-9);
    }

    #[test]
    fn csv_output_has_the_documented_layout() {
        let (model, mut config) = paper_example(DelayCase::C1).unwrap();
        config.horizon = 0.01;
        let out = run_scenario(&model, &config).unwrap();
        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x1,x2,xhat1,xhat2,eta1,eta2,etahat1,etahat2,\
             thetafct1,thetafct2,thetafct3,thetafct4,thetafct5,w,Delta,converged"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,1.0000000000000000e0"));
        assert!(first.ends_with(",0"));
        assert_eq!(text.lines().count(), 12);
    }

    #[test]
    fn metrics_report_no_convergence_without_excitation() {
        // A record stream with delta identically zero never converges.
        let records = vec![
            EstimateRecord {
                t: 0.0,
                x: vec![0.0],
                x_hat: vec![0.0],
                eta: vec![0.0],
                eta_hat: vec![0.0],
                theta_fct: vec![0.0],
                w: 1.0,
                delta: 0.0,
                converged: false,
            },
            EstimateRecord {
                t: 1.0,
                x: vec![0.0],
                x_hat: vec![0.0],
                eta: vec![0.0],
                eta_hat: vec![0.0],
                theta_fct: vec![0.0],
                w: 1.0,
                delta: 0.0,
                converged: false,
            },
        ];
        let diagnostics = RunDiagnostics {
            theta_true: vec![0.0],
            sup_x: 0.0,
            sup_xi: 0.0,
            sup_zeta: 0.0,
            sup_g: 0.0,
            sup_phi_a: 1.0,
            sup_phi_w: 1.0,
            sup_y_filt: 0.0,
            sup_omega: 0.0,
            max_lre_residual: 0.0,
            max_mixing_residual: 0.0,
            max_estimator_identity_err: 0.0,
            max_liouville_rel_err: 0.0,
            saturated: false,
        };
        let metrics =
            convergence_metrics(&SimOutput { records, diagnostics }, 1e10, 0.01).unwrap();
        assert!(metrics.t_convergence.is_none());
        assert!(metrics.t_excitation.is_none());
        assert_eq!(metrics.excitation_integral, 0.0);
        assert!(metrics.max_state_err_after_tc.is_none());
    }
}
