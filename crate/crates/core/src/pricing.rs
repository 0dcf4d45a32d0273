//! Indifference price, feedback strategies, wealth trajectories, and the
//! Bellman martingale diagnostic.

use std::io::{self, Write};

use thiserror::Error;

use crate::bsde::{BsdeSolution, CD2_EPS};
use crate::filter::{survival_weight, FilterError};
use crate::model::ModelSpec;
use crate::simulate::PathBundle;

#[derive(Debug, Error)]
pub enum PricingError {
    #[error("degenerate bond at node {node}: zero volatility against premium {premium:.3e}")]
    ZeroVol { node: usize, premium: f64 },
    #[error("strategy requires stored integrands; solve with store_integrands = true")]
    MissingIntegrands,
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Per-path, per-node indifference price with cross-path summaries.
#[derive(Debug, Clone)]
pub struct PriceReport {
    pub n_paths: usize,
    pub n_nodes: usize,
    pub times: Vec<f64>,
    /// Node-major `p_alpha` series.
    pub p_alpha: Vec<f64>,
    /// Node-0 cross-path mean: the headline price.
    pub headline: f64,
    /// Node-0 cross-path standard deviation (regression-noise diagnostic).
    pub dispersion: f64,
    /// `E[xi e^{-int lambda}]` from the exact filter weight, the actuarial
    /// reference the small-risk-aversion price should approach.
    pub actuarial_reference: f64,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
}

/// `p_alpha_i = (U_i - U0_i) / alpha * 1{tau > t_i}` per path and node.
pub fn indifference_price(
    spec: &ModelSpec,
    bundle: &PathBundle,
    claim_sol: &BsdeSolution,
    pure_sol: &BsdeSolution,
) -> Result<PriceReport, PricingError> {
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let alpha = spec.risk_aversion;
    let mut p_alpha = vec![0.0; n_nodes * n_paths];
    for i in 0..n_nodes {
        let t = bundle.times[i];
        for p in 0..n_paths {
            if bundle.tau[p] > t {
                p_alpha[i * n_paths + p] =
                    (claim_sol.value(i, p) - pure_sol.value(i, p)) / alpha;
            }
        }
    }

    let headline = p_alpha[..n_paths].iter().sum::<f64>() / n_paths as f64;
    let dispersion = {
        let var = p_alpha[..n_paths]
            .iter()
            .map(|v| (v - headline).powi(2))
            .sum::<f64>()
            / n_paths as f64;
        var.sqrt()
    };

    // Actuarial reference: mean over paths of xi * E[e^{-int lambda} | mu].
    let mut acc = 0.0;
    for p in 0..n_paths {
        let idx = bundle.idx(p, n_nodes - 1);
        let xi = spec.claim.eval(
            bundle.s1[idx],
            bundle.s2[idx],
            bundle.mu[idx],
            bundle.y[idx],
        );
        let weight = survival_weight(
            bundle.path(&bundle.mu, p),
            &bundle.times,
            &spec.chain,
            &spec.lambda,
        )?;
        acc += xi * weight;
    }
    let actuarial_reference = acc / n_paths as f64;

    let mut mean = vec![0.0; n_nodes];
    let mut q05 = vec![0.0; n_nodes];
    let mut q95 = vec![0.0; n_nodes];
    let mut column = vec![0.0; n_paths];
    for i in 0..n_nodes {
        let row = &p_alpha[i * n_paths..(i + 1) * n_paths];
        mean[i] = row.iter().sum::<f64>() / n_paths as f64;
        column.copy_from_slice(row);
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        q05[i] = column[(0.05 * (n_paths - 1) as f64).floor() as usize];
        q95[i] = column[(0.95 * (n_paths - 1) as f64).floor() as usize];
    }

    Ok(PriceReport {
        n_paths,
        n_nodes,
        times: bundle.times.clone(),
        p_alpha,
        headline,
        dispersion,
        actuarial_reference,
        mean,
        q05,
        q95,
    })
}

/// Amounts invested in the risky asset and the longevity bond, node-major,
/// plus the pathwise admissibility integral
/// `int (theta1 sigmaS)^2 + theta2^2 (cB^2 + dB^2) dt`.
#[derive(Debug, Clone)]
pub struct StrategySeries {
    pub n_paths: usize,
    pub n_nodes: usize,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub admissibility: Vec<f64>,
}

impl StrategySeries {
    pub fn node_mean(&self, arr: &[f64], node: usize) -> f64 {
        arr[node * self.n_paths..(node + 1) * self.n_paths]
            .iter()
            .sum::<f64>()
            / self.n_paths as f64
    }
}

/// Feedback optimal strategy from a solved BSDE:
/// `theta1 = (muS/sigmaS + z1) / (alpha sigmaS)`,
/// `theta2 = (muB + cB z2 + dB z3) / (alpha (cB^2 + dB^2))`.
///
/// A vol-less bond admits no position: `theta2 = 0` when the numerator also
/// vanishes, otherwise the bond is degenerate and an error is returned.
pub fn optimal_strategy(
    spec: &ModelSpec,
    bundle: &PathBundle,
    sol: &BsdeSolution,
) -> Result<StrategySeries, PricingError> {
    let (z1, z2, z3) = match (&sol.z1, &sol.z2, &sol.z3) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(PricingError::MissingIntegrands),
    };
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let alpha = spec.risk_aversion;
    let dt = bundle.grid.dt();
    let mut theta1 = vec![0.0; n_nodes * n_paths];
    let mut theta2 = vec![0.0; n_nodes * n_paths];
    let mut admissibility = vec![0.0; n_paths];

    for i in 0..n_nodes {
        let t = bundle.times[i];
        for p in 0..n_paths {
            let idx = bundle.idx(p, i);
            let sigma_s = spec.sigma_s(t, bundle.y[idx]);
            let m = spec.mu_s(t, bundle.y[idx]) / sigma_s;
            let (g1, g2, g3) = (
                z1[i * n_paths + p],
                z2[i * n_paths + p],
                z3[i * n_paths + p],
            );
            let th1 = (m + g1) / (alpha * sigma_s);
            let (c_b, d_b, mu_b) = (bundle.c_b[idx], bundle.d_b[idx], bundle.mu_b[idx]);
            let cd2 = c_b * c_b + d_b * d_b;
            let numer = mu_b + c_b * g2 + d_b * g3;
            let th2 = if cd2 > CD2_EPS {
                numer / (alpha * cd2)
            } else if numer.abs() <= 1e-12 {
                0.0
            } else {
                return Err(PricingError::ZeroVol {
                    node: i,
                    premium: numer,
                });
            };
            theta1[i * n_paths + p] = th1;
            theta2[i * n_paths + p] = th2;
            if i < n_nodes - 1 {
                admissibility[p] += ((th1 * sigma_s).powi(2) + th2 * th2 * cd2) * dt;
            }
        }
    }

    Ok(StrategySeries {
        n_paths,
        n_nodes,
        theta1,
        theta2,
        admissibility,
    })
}

/// Euler wealth from a strategy:
/// `dX = theta1 (muS dt + sigmaS dW1) + theta2 (muB dt + cB dW2 + dB dW3)`.
/// Returns the node-major wealth series.
pub fn wealth_trajectory(
    spec: &ModelSpec,
    bundle: &PathBundle,
    strategy: &StrategySeries,
    x0: f64,
) -> Vec<f64> {
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let n_steps = n_nodes - 1;
    let dt = bundle.grid.dt();
    let mut wealth = vec![0.0; n_nodes * n_paths];
    for p in 0..n_paths {
        wealth[p] = x0;
    }
    for i in 0..n_steps {
        let t = bundle.times[i];
        for p in 0..n_paths {
            let idx = bundle.idx(p, i);
            let th1 = strategy.theta1[i * n_paths + p];
            let th2 = strategy.theta2[i * n_paths + p];
            let mu_s = spec.mu_s(t, bundle.y[idx]);
            let sigma_s = spec.sigma_s(t, bundle.y[idx]);
            let (c_b, d_b, mu_b) = (bundle.c_b[idx], bundle.d_b[idx], bundle.mu_b[idx]);
            let gain = th1 * (mu_s * dt + sigma_s * bundle.dw1[p * n_steps + i])
                + th2
                    * (mu_b * dt
                        + c_b * bundle.dw2[p * n_steps + i]
                        + d_b * bundle.dw3[p * n_steps + i]);
            wealth[(i + 1) * n_paths + p] = wealth[i * n_paths + p] + gain;
        }
    }
    wealth
}

/// Monitor for the exponential admissibility condition: the max over paths
/// and nodes of `e^{-alpha p X}` for `p = 2`. Gross violations show up as
/// astronomically large values.
pub fn exponential_admissibility_monitor(wealth: &[f64], alpha: f64) -> f64 {
    wealth
        .iter()
        .map(|x| (-2.0 * alpha * x).exp())
        .fold(0.0, f64::max)
}

/// Bellman process on the claim side, stopped at the death time:
/// `N_i = e^{-alpha X_i} e^{U_i}` while alive, frozen at
/// `e^{-alpha X_j} e^{U0_j}` from the death node `j` on (the claim dies and
/// the value continues as pure investment).
pub fn bellman_process_claim(
    spec: &ModelSpec,
    bundle: &PathBundle,
    claim_sol: &BsdeSolution,
    pure_sol: &BsdeSolution,
    wealth: &[f64],
) -> Vec<f64> {
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let alpha = spec.risk_aversion;
    let mut out = vec![0.0; n_nodes * n_paths];
    for p in 0..n_paths {
        let death = bundle.death_node(p).unwrap_or(usize::MAX);
        let mut frozen = f64::NAN;
        for i in 0..n_nodes {
            let v = if i < death {
                (-alpha * wealth[i * n_paths + p]).exp() * claim_sol.value(i, p).exp()
            } else {
                if i == death {
                    frozen = (-alpha * wealth[i * n_paths + p]).exp()
                        * pure_sol.value(i, p).exp();
                }
                frozen
            };
            out[i * n_paths + p] = v;
        }
    }
    out
}

/// Bellman process on the pure-investment side: `e^{-alpha X_i} e^{U0_i}`,
/// no death involvement.
pub fn bellman_process_pure(
    spec: &ModelSpec,
    bundle: &PathBundle,
    pure_sol: &BsdeSolution,
    wealth: &[f64],
) -> Vec<f64> {
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let alpha = spec.risk_aversion;
    let mut out = vec![0.0; n_nodes * n_paths];
    for i in 0..n_nodes {
        for p in 0..n_paths {
            out[i * n_paths + p] =
                (-alpha * wealth[i * n_paths + p]).exp() * pure_sol.value(i, p).exp();
        }
    }
    out
}

/// Per-step drift statistics of a candidate martingale series (node-major).
#[derive(Debug, Clone)]
pub struct DriftStats {
    /// Cross-path mean of the increment at each step.
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Fraction of steps whose mean drift is significant at three standard
    /// errors (martingale check: should be small).
    pub frac_significant: f64,
    /// Fraction of steps with significantly positive drift (submartingale
    /// check for suboptimal strategies: should be large).
    pub frac_positive: f64,
}

/// Cross-path conditional-drift test of `N`: for each step, the mean and
/// standard error of `N_{i+1} - N_i`, with significance at three standard
/// errors. A zero standard error counts as significant iff the mean is
/// nonzero (deterministic drift).
pub fn martingale_diagnostic(series: &[f64], n_paths: usize) -> DriftStats {
    let n_nodes = series.len() / n_paths;
    let n_steps = n_nodes - 1;
    let mut mean = vec![0.0; n_steps];
    let mut stderr = vec![0.0; n_steps];
    let mut significant = 0usize;
    let mut positive = 0usize;
    for i in 0..n_steps {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for p in 0..n_paths {
            let d = series[(i + 1) * n_paths + p] - series[i * n_paths + p];
            sum += d;
            sum_sq += d * d;
        }
        let n = n_paths as f64;
        let m = sum / n;
        let var = (sum_sq / n - m * m).max(0.0);
        let se = (var / n).sqrt();
        mean[i] = m;
        stderr[i] = se;
        let sig = if se > 0.0 { m.abs() > 3.0 * se } else { m != 0.0 };
        let pos = if se > 0.0 { m > 3.0 * se } else { m > 0.0 };
        if sig {
            significant += 1;
        }
        if pos {
            positive += 1;
        }
    }
    DriftStats {
        mean,
        stderr,
        frac_significant: significant as f64 / n_steps as f64,
        frac_positive: positive as f64 / n_steps as f64,
    }
}

/// Price series CSV: `t,p_alpha_mean,p_alpha_q05,p_alpha_q95,theta1_mean,theta2_mean`.
pub fn write_price_csv<W: Write>(
    report: &PriceReport,
    strategy: Option<&StrategySeries>,
    out: &mut W,
) -> io::Result<()> {
    writeln!(
        out,
        "t,p_alpha_mean,p_alpha_q05,p_alpha_q95,theta1_mean,theta2_mean"
    )?;
    for i in 0..report.n_nodes {
        let (t1, t2) = match strategy {
            Some(s) => (s.node_mean(&s.theta1, i), s.node_mean(&s.theta2, i)),
            None => (0.0, 0.0),
        };
        writeln!(
            out,
            "{},{},{},{},{},{}",
            report.times[i], report.mean[i], report.q05[i], report.q95[i], t1, t2
        )?;
    }
    Ok(())
}
