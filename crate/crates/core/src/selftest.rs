//! Built-in invariant checks, runnable from the command line without the
//! test harness. Each check exercises an identity the estimator's
//! correctness rests on and reports a worst-case defect.

use crate::drem::{drem_step, mix, DremState};
use crate::linalg::{adjugate, determinant, rk4_step, Matrix};
use crate::pebo::Regression;
use crate::scenario::{convergence_metrics, paper_example, run_scenario, write_csv, DelayCase};

/// Result of one check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs every check and reports the outcomes in a fixed order.
pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        adjugate_identity(),
        integrator_order(),
        generator_closed_form(),
        mixing_with_singular_gram(),
        benchmark_invariants(),
        determinism(),
    ]
}

/// Tiny deterministic generator (splitmix64) so the library needs no
/// randomness dependency for its own checks.
struct Splitmix(u64);

impl Splitmix {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}

fn adjugate_identity() -> CheckOutcome {
    let mut rng = Splitmix(0x5eed);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n = 1 + (trial % 6);
        let m = Matrix::new(n, n, (0..n * n).map(|_| rng.uniform()).collect()).unwrap();
        let adj = adjugate(&m).unwrap();
        let det = determinant(&m).unwrap();
        let defect = (&(&adj * &m) - &Matrix::identity(n).scaled(det)).norm_inf();
        let scale = 1.0 + adj.norm_inf() * m.norm_inf();
        worst = worst.max(defect / scale);
    }
    CheckOutcome {
        name: "adjugate identity adj(M) M = det(M) I",
        passed: worst <= 1e-10,
        detail: format!("worst relative defect {worst:.3e} over 200 random matrices"),
    }
}

fn integrator_order() -> CheckOutcome {
    let field = |_t: f64, s: &[f64]| Ok(vec![s[1], -s[0]]);
    let run = |h: f64| -> f64 {
        let steps = (1.0 / h).round() as usize;
        let mut s = vec![1.0, 0.0];
        let mut t = 0.0;
        for _ in 0..steps {
            s = rk4_step(field, t, &s, h).unwrap();
            t += h;
        }
        ((s[0] - 1.0f64.cos()).powi(2) + (s[1] + 1.0f64.sin()).powi(2)).sqrt()
    };
    let ratio = run(0.01) / run(0.005);
    CheckOutcome {
        name: "integrator error halves fourth-order under step halving",
        passed: (12.0..20.0).contains(&ratio),
        detail: format!("error ratio {ratio:.2} (expect about 16)"),
    }
}

fn generator_closed_form() -> CheckOutcome {
    // Phi' = W Phi for the 3 rad/s oscillator-plus-constant generator;
    // closed form has cos/sin blocks and a fixed third axis.
    let w = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[-9.0, 0.0, 0.0], &[0.0, 0.0, 0.0]]);
    let field = |_t: f64, v: &[f64]| {
        let phi = Matrix::new(3, 3, v.to_vec())?;
        Ok((&w * &phi).into_data())
    };
    let mut v = Matrix::identity(3).into_data();
    let mut t = 0.0;
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..3000 {
        v = rk4_step(field, t, &v, h).unwrap();
        t += h;
        let (s, c) = (3.0 * t).sin_cos();
        let expect = [c, s / 3.0, 0.0, -3.0 * s, c, 0.0, 0.0, 0.0, 1.0];
        let defect = v.iter().zip(expect).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        worst = worst.max(defect);
    }
    CheckOutcome {
        name: "generator transition matrix matches its closed form",
        passed: worst <= 1e-8,
        detail: format!("worst entry defect {worst:.3e} over [0, 3]"),
    }
}

fn mixing_with_singular_gram() -> CheckOutcome {
    // Push one rank-deficient sample through the extension filters; delta
    // stays exactly zero and mixing yields exact zeros, not garbage.
    let mut d = DremState::new(2, 1.0).unwrap();
    let reg = Regression {
        psi: Matrix::from_rows(&[&[1.0, 2.0]]),
        z: Matrix::column(&[3.0]),
    };
    for _ in 0..100 {
        drem_step(&mut d, &reg, 1e-2).unwrap();
    }
    let mixed = mix(&d).unwrap();
    let passed = mixed.delta == 0.0 && mixed.y_mixed.data().iter().all(|v| *v == 0.0);
    CheckOutcome {
        name: "mixing of a singular averaged regressor yields exact zeros",
        passed,
        detail: format!("delta = {:.3e}", mixed.delta),
    }
}

fn benchmark_invariants() -> CheckOutcome {
    let (model, mut config) = match paper_example(DelayCase::C1) {
        Ok(v) => v,
        Err(e) => {
            return CheckOutcome {
                name: "benchmark run keeps its identities",
                passed: false,
                detail: e.to_string(),
            };
        }
    };
    config.horizon = 5.0;
    config.gamma = 1e12;
    let out = match run_scenario(&model, &config) {
        Ok(v) => v,
        Err(e) => {
            return CheckOutcome {
                name: "benchmark run keeps its identities",
                passed: false,
                detail: e.to_string(),
            };
        }
    };
    let metrics = convergence_metrics(&out, config.gamma, config.mu).unwrap();
    let d = &out.diagnostics;
    let converged_err = metrics.max_theta_err_after_tc.unwrap_or(f64::INFINITY);
    let passed = d.max_lre_residual <= 1e-5
        && d.max_estimator_identity_err <= 1e-6
        && d.max_liouville_rel_err <= 1e-5
        && metrics.t_convergence.is_some()
        && converged_err <= 1e-3;
    CheckOutcome {
        name: "benchmark run keeps its identities",
        passed,
        detail: format!(
            "regression defect {:.2e}, decay-identity defect {:.2e}, \
             volume-law defect {:.2e}, converged at t = {:?}, \
             worst unknown-vector error {:.2e}",
            d.max_lre_residual,
            d.max_estimator_identity_err,
            d.max_liouville_rel_err,
            metrics.t_convergence,
            converged_err,
        ),
    }
}

fn determinism() -> CheckOutcome {
    let run_once = || -> crate::error::Result<Vec<u8>> {
        let (model, mut config) = paper_example(DelayCase::C1)?;
        config.horizon = 1.0;
        config.gamma = 1e12;
        let out = run_scenario(&model, &config)?;
        let mut buf = Vec::new();
        write_csv(&out.records, &mut buf)?;
        Ok(buf)
    };
    match (run_once(), run_once()) {
        (Ok(a), Ok(b)) => CheckOutcome {
            name: "repeated runs are byte-identical",
            passed: a == b,
            detail: format!("{} bytes compared", a.len()),
        },
        (Err(e), _) | (_, Err(e)) => CheckOutcome {
            name: "repeated runs are byte-identical",
            passed: false,
            detail: e.to_string(),
        },
    }
}
