//! Backward least-squares Monte Carlo solvers for the two log-value
//! processes, and deterministic ODE oracles for scenarios with
//! state-independent drivers.
//!
//! Both equations march backward on the simulation grid. At each node the
//! integrands are estimated by regressing `U_{i+1} * dW^j` on the observable
//! basis and the value by regressing `U_{i+1}` itself, then one explicit
//! driver step is applied:
//!
//! * pure investment: `U0_i = E_i[U0_{i+1}] - 0.5 * f0(t_i, phi_i) dt` with
//!   the quadratic generator
//!   `f0 = -|phi|^2 + (muS/sigmaS + phi1)^2 + (muB + cB phi2 + dB phi3)^2 / (cB^2 + dB^2)`
//!   and terminal value zero;
//! * claim: terminal `alpha * xi` and driver
//!   `(e^{-(U - U0)} - 1) * hat_pi(lambda) - 0.5 * f0(t_i, gamma_i)`,
//!   equivalently the market terms of the pure driver plus the basis-risk
//!   term `(dB gamma2 - cB gamma3)^2 / (2 (cB^2 + dB^2))` and the exponential
//!   reaction. The reaction acts on the excess over the pure-investment
//!   log-value, which is what makes a null claim price to exactly zero and
//!   keeps the small-risk-aversion limit at the actuarial value.
//!
//! The exponential reaction is evaluated explicitly at the regressed
//! continuation value and refined with one fixed-point sweep per step.
//! Integrands and values are clipped to configured boxes for stability.

use std::io::{self, Write};

use thiserror::Error;

use crate::model::{ClaimSpec, CoefFn, ModelSpec, TimeGrid};
use crate::regression::{NodeRegression, RegressionBasis, RegressionError};
use crate::simulate::PathBundle;

/// Below this squared-volatility threshold the longevity bond is treated as
/// absent: its driver terms vanish and no position is taken in it.
pub const CD2_EPS: f64 = 1e-16;

#[derive(Debug, Error)]
pub enum BsdeError {
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("solver diverged at node {node}: mean |U| = {magnitude:.3e} exceeds bound {bound:.3e}")]
    Diverged {
        node: usize,
        magnitude: f64,
        bound: f64,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct BsdeOptions {
    pub basis: RegressionBasis,
    /// Clip box for the integrand estimates.
    pub clip_integrands: f64,
    /// Clip box for the value process.
    pub clip_value: f64,
    /// Keep full integrand series (needed for strategies and diagnostics).
    pub store_integrands: bool,
}

impl BsdeOptions {
    /// Defaults for a claim bounded by `k` at risk aversion `alpha`.
    pub fn for_claim(alpha: f64, k: f64) -> Self {
        BsdeOptions {
            basis: RegressionBasis::default(),
            clip_integrands: 10.0,
            clip_value: alpha * k + 5.0,
            store_integrands: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NodeDiagnostics {
    pub r2_value: f64,
    pub r2_z1: f64,
    pub r2_z2: f64,
    pub r2_z3: f64,
    pub condition: f64,
}

/// Solution arrays are node-major: entry `(node, path)` sits at
/// `node * n_paths + path`.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub n_paths: usize,
    pub n_nodes: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub z1: Option<Vec<f64>>,
    pub z2: Option<Vec<f64>>,
    pub z3: Option<Vec<f64>>,
    pub diagnostics: Vec<NodeDiagnostics>,
    /// Random-horizon value `U^G_i = U_i 1{t_i < tau}` (filled on assembly).
    pub u_g: Option<Vec<f64>>,
    /// Death-jump integrand `gamma4_i = -U_i 1{t_i <= tau}`.
    pub gamma4: Option<Vec<f64>>,
}

impl BsdeSolution {
    #[inline]
    pub fn value(&self, node: usize, path: usize) -> f64 {
        self.values[node * self.n_paths + path]
    }

    /// Cross-path mean at the initial node (deterministic up to regression
    /// noise).
    pub fn initial_mean(&self) -> f64 {
        self.values[..self.n_paths].iter().sum::<f64>() / self.n_paths as f64
    }

    pub fn node_mean(&self, node: usize) -> f64 {
        self.values[node * self.n_paths..(node + 1) * self.n_paths]
            .iter()
            .sum::<f64>()
            / self.n_paths as f64
    }
}

/// Quadratic generator shared by both drivers, evaluated at one integrand
/// triple. Degenerate bonds contribute nothing.
#[inline]
pub fn quadratic_generator(
    m: f64,
    mu_b: f64,
    c_b: f64,
    d_b: f64,
    z1: f64,
    z2: f64,
    z3: f64,
) -> f64 {
    let cd2 = c_b * c_b + d_b * d_b;
    let bond = if cd2 > CD2_EPS {
        let q = mu_b + c_b * z2 + d_b * z3;
        q * q / cd2
    } else {
        0.0
    };
    -(z1 * z1 + z2 * z2 + z3 * z3) + (m + z1) * (m + z1) + bond
}

enum Mode<'a> {
    Pure,
    Claim {
        pure_values: &'a [f64],
        pi_lambda: &'a [f64],
        claim: &'a ClaimSpec,
    },
}

/// Pure-investment log-value `U0`: terminal zero, quadratic driver. The
/// strategies and filtration carry no death information, so the projected
/// intensity enters only as an optional regression feature.
pub fn solve_pure_investment_bsde(
    spec: &ModelSpec,
    bundle: &PathBundle,
    pi_lambda: Option<&[f64]>,
    opts: &BsdeOptions,
) -> Result<BsdeSolution, BsdeError> {
    backward_solve(spec, bundle, pi_lambda, Mode::Pure, opts)
}

/// Claim-side log-value `U` in the Brownian filtration on the full grid,
/// coupled to the pure-investment solution through the exponential reaction.
pub fn solve_claim_bsde(
    spec: &ModelSpec,
    bundle: &PathBundle,
    pi_lambda: &[f64],
    pure: &BsdeSolution,
    opts: &BsdeOptions,
) -> Result<BsdeSolution, BsdeError> {
    assert_eq!(pure.n_paths, bundle.n_paths);
    assert_eq!(pure.n_nodes, bundle.n_nodes());
    backward_solve(
        spec,
        bundle,
        Some(pi_lambda),
        Mode::Claim {
            pure_values: &pure.values,
            pi_lambda,
            claim: &spec.claim,
        },
        opts,
    )
}

fn backward_solve(
    spec: &ModelSpec,
    bundle: &PathBundle,
    pi_lambda: Option<&[f64]>,
    mode: Mode,
    opts: &BsdeOptions,
) -> Result<BsdeSolution, BsdeError> {
    let n_paths = bundle.n_paths;
    let n_nodes = bundle.n_nodes();
    let n_steps = n_nodes - 1;
    let dt = bundle.grid.dt();
    let gamma_max = opts.clip_integrands;
    let value_max = opts.clip_value;

    let mut values = vec![0.0; n_nodes * n_paths];
    let mut z_store = if opts.store_integrands {
        Some((
            vec![0.0; n_nodes * n_paths],
            vec![0.0; n_nodes * n_paths],
            vec![0.0; n_nodes * n_paths],
        ))
    } else {
        None
    };
    let mut diagnostics = vec![NodeDiagnostics::default(); n_nodes];

    // Terminal condition, exact per path.
    {
        let last = n_steps * n_paths;
        match &mode {
            Mode::Pure => {}
            Mode::Claim { claim, .. } => {
                for p in 0..n_paths {
                    let idx = bundle.idx(p, n_steps);
                    let xi = claim.eval(
                        bundle.s1[idx],
                        bundle.s2[idx],
                        bundle.mu[idx],
                        bundle.y[idx],
                    );
                    values[last + p] = spec.risk_aversion * xi;
                }
            }
        }
    }

    let mut mu_col = vec![0.0; n_paths];
    let mut y_col = vec![0.0; n_paths];
    let mut ls1_col = vec![0.0; n_paths];
    let mut ls2_col = vec![0.0; n_paths];
    let mut pl_col = vec![0.0; n_paths];
    let mut next = vec![0.0; n_paths];
    let mut target = vec![0.0; n_paths];
    let mut z_bufs = (
        vec![0.0; n_paths],
        vec![0.0; n_paths],
        vec![0.0; n_paths],
    );

    for i in (0..n_steps).rev() {
        let t = bundle.times[i];
        for p in 0..n_paths {
            let idx = bundle.idx(p, i);
            mu_col[p] = bundle.mu[idx];
            y_col[p] = bundle.y[idx];
            ls1_col[p] = bundle.s1[idx].ln();
            ls2_col[p] = bundle.s2[idx].ln();
            if let Some(pl) = pi_lambda {
                pl_col[p] = pl[idx];
            }
        }
        let mut cols: Vec<&[f64]> = vec![&mu_col, &y_col, &ls1_col, &ls2_col];
        if pi_lambda.is_some() && opts.basis.include_pi_lambda {
            cols.push(&pl_col);
        }
        let reg = NodeRegression::fit(&cols, &opts.basis)?;

        next.copy_from_slice(&values[(i + 1) * n_paths..(i + 2) * n_paths]);
        let value_proj = reg.project(&next);

        let mut r2_z = [0.0; 3];
        for (j, (dw, zbuf)) in [
            (&bundle.dw1, &mut z_bufs.0),
            (&bundle.dw2, &mut z_bufs.1),
            (&bundle.dw3, &mut z_bufs.2),
        ]
        .into_iter()
        .enumerate()
        {
            // Centred martingale-increment target: subtracting the fitted
            // continuation leaves the conditional expectation unchanged
            // (E_i[dW] = 0) and removes the value-level variance from the
            // integrand estimate.
            for p in 0..n_paths {
                target[p] = (next[p] - value_proj.fitted[p]) * dw[p * n_steps + i];
            }
            let proj = reg.project(&target);
            r2_z[j] = proj.r_squared;
            for p in 0..n_paths {
                zbuf[p] = (proj.fitted[p] / dt).clamp(-gamma_max, gamma_max);
            }
        }

        let mut abs_sum = 0.0;
        for p in 0..n_paths {
            let idx = bundle.idx(p, i);
            let y_p = y_col[p];
            let m = spec.mu_s(t, y_p) / spec.sigma_s(t, y_p);
            let (c_b, d_b, mu_b) = (bundle.c_b[idx], bundle.d_b[idx], bundle.mu_b[idx]);
            let (z1, z2, z3) = (z_bufs.0[p], z_bufs.1[p], z_bufs.2[p]);
            // The continuation estimates a value already confined to the
            // clip box, so regression overshoot is pure estimation error.
            let cont = value_proj.fitted[p].clamp(-value_max, value_max);
            let f0 = quadratic_generator(m, mu_b, c_b, d_b, z1, z2, z3);
            let u = match &mode {
                Mode::Pure => cont - 0.5 * f0 * dt,
                Mode::Claim {
                    pure_values,
                    pi_lambda,
                    ..
                } => {
                    let u0 = pure_values[i * n_paths + p];
                    let pl = pi_lambda[idx];
                    let reaction = |u_eval: f64| {
                        ((-(u_eval.clamp(-value_max, value_max) - u0)).exp() - 1.0) * pl
                    };
                    // Explicit step, then one fixed-point refinement of the
                    // reaction term.
                    let first = cont + (reaction(cont) - 0.5 * f0) * dt;
                    cont + (reaction(first) - 0.5 * f0) * dt
                }
            };
            abs_sum += u.abs();
            values[i * n_paths + p] = u.clamp(-value_max, value_max);
        }
        let mean_abs = abs_sum / n_paths as f64;
        if !mean_abs.is_finite() || mean_abs > value_max {
            return Err(BsdeError::Diverged {
                node: i,
                magnitude: mean_abs,
                bound: value_max,
            });
        }

        diagnostics[i] = NodeDiagnostics {
            r2_value: value_proj.r_squared,
            r2_z1: r2_z[0],
            r2_z2: r2_z[1],
            r2_z3: r2_z[2],
            condition: reg.condition,
        };
        if let Some((s1, s2, s3)) = z_store.as_mut() {
            s1[i * n_paths..(i + 1) * n_paths].copy_from_slice(&z_bufs.0);
            s2[i * n_paths..(i + 1) * n_paths].copy_from_slice(&z_bufs.1);
            s3[i * n_paths..(i + 1) * n_paths].copy_from_slice(&z_bufs.2);
        }
    }

    let (z1, z2, z3) = match z_store {
        Some((a, b, c)) => (Some(a), Some(b), Some(c)),
        None => (None, None, None),
    };
    Ok(BsdeSolution {
        n_paths,
        n_nodes,
        times: bundle.times.clone(),
        values,
        z1,
        z2,
        z3,
        diagnostics,
        u_g: None,
        gamma4: None,
    })
}

/// Populate the random-horizon processes `U^G_i = U_i 1{t_i < tau}` and
/// `gamma4_i = -U_i 1{t_i <= tau}`; the stopped terminal value
/// `U^G_{T and tau}` then equals `alpha xi 1{tau > T}` exactly on every path.
pub fn assemble_random_horizon(solution: &mut BsdeSolution, bundle: &PathBundle) {
    let n_paths = solution.n_paths;
    let mut u_g = vec![0.0; solution.values.len()];
    let mut gamma4 = vec![0.0; solution.values.len()];
    for i in 0..solution.n_nodes {
        let t = solution.times[i];
        for p in 0..n_paths {
            let v = solution.values[i * n_paths + p];
            let tau = bundle.tau[p];
            if t < tau {
                u_g[i * n_paths + p] = v;
            }
            if t <= tau {
                gamma4[i * n_paths + p] = -v;
            }
        }
    }
    solution.u_g = Some(u_g);
    solution.gamma4 = Some(gamma4);
}

/// Scenario reduced to deterministic scalar drivers: the market premium
/// `m(t) = muS/sigmaS`, the squared bond premium `(muB)^2 / (cB^2 + dB^2)`,
/// and the intensity `lambda(t)`.
pub struct DeterministicCoefs {
    times: Vec<f64>,
    m: Vec<f64>,
    bond_premium_sq: Vec<f64>,
    lambda: Vec<f64>,
}

impl DeterministicCoefs {
    fn lookup(table: &[f64], times: &[f64], t: f64) -> f64 {
        let n = times.len();
        let horizon = times[n - 1];
        let x = (t / horizon * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i = (x.floor() as usize).min(n - 2);
        let w = x - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    }

    pub fn m(&self, t: f64) -> f64 {
        Self::lookup(&self.m, &self.times, t)
    }
    pub fn bond_premium_sq(&self, t: f64) -> f64 {
        Self::lookup(&self.bond_premium_sq, &self.times, t)
    }
    pub fn lambda(&self, t: f64) -> f64 {
        Self::lookup(&self.lambda, &self.times, t)
    }

    /// Actuarial discount `exp(-int_0^T lambda)` by trapezoid on the table.
    pub fn survival_discount(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            acc += 0.5 * (self.lambda[i - 1] + self.lambda[i]) * (self.times[i] - self.times[i - 1]);
        }
        (-acc).exp()
    }
}

fn coef_is_zero(c: &CoefFn) -> bool {
    match *c {
        CoefFn::Constant { value } => value == 0.0,
        CoefFn::SqrtOwn { scale, .. } => scale == 0.0,
        CoefFn::Affine {
            intercept,
            slope_t,
            slope_mu,
            slope_y,
        } => intercept == 0.0 && slope_t == 0.0 && slope_mu == 0.0 && slope_y == 0.0,
        CoefFn::MeanRevert { rate, .. } | CoefFn::MeanRevertToFactor { rate } => rate == 0.0,
    }
}

fn time_only(c: &CoefFn) -> bool {
    matches!(
        *c,
        CoefFn::Constant { .. }
            | CoefFn::Affine {
                slope_mu: 0.0,
                slope_y: 0.0,
                ..
            }
    )
}

/// Check whether the scenario has deterministic drivers and build the scalar
/// coefficient tables if so.
///
/// Eligible shapes: the factor diffusion vanishes (so `Y` is deterministic),
/// and either the mortality diffusion also vanishes (then `mu` is
/// deterministic, the bond is flat, and any state-independent intensity
/// works), or the intensity is a state-constant rate and the mortality risk
/// premium depends on time only, in which case `(muB)^2/(cB^2 + dB^2)`
/// collapses to `alpha_mu(t)^2` pointwise even though the paths are random.
pub fn deterministic_reduction(spec: &ModelSpec, grid: &TimeGrid) -> Option<DeterministicCoefs> {
    if !coef_is_zero(&spec.mortality.sigma_y) {
        return None;
    }
    if !spec.lambda.state_independent() {
        return None;
    }
    let substeps = 20usize;
    let n = grid.n_steps * substeps;
    let h = spec.horizon / n as f64;

    // Deterministic factor path.
    let mut y_path = Vec::with_capacity(n + 1);
    let mut y = spec.mortality.y_0;
    y_path.push(y);
    for i in 0..n {
        let t = h * i as f64;
        // RK4 on y' = b_y(t, y).
        let f = |t: f64, y: f64| spec.b_y(t, y);
        let k1 = f(t, y);
        let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
        let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
        let k4 = f(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        y_path.push(y);
    }

    let mu_diffusion_zero = coef_is_zero(&spec.mortality.sigma_mu);
    let mut mu_path = Vec::new();
    if mu_diffusion_zero {
        let mut mu = spec.mortality.mu_0;
        mu_path.push(mu);
        for i in 0..n {
            let t = h * i as f64;
            let y_here = y_path[i];
            let f = |t: f64, mu: f64| spec.b_mu(t, mu.max(0.0), y_here);
            let k1 = f(t, mu);
            let k2 = f(t + 0.5 * h, mu + 0.5 * h * k1);
            let k3 = f(t + 0.5 * h, mu + 0.5 * h * k2);
            let k4 = f(t + h, mu + h * k3);
            mu = (mu + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
            mu_path.push(mu);
        }
    } else {
        // Stochastic mortality: the intensity must not read it, and the bond
        // premium ratio must collapse to a function of time.
        let mu_free_lambda = matches!(
            spec.lambda.form,
            crate::model::LambdaForm::StateConstant { .. }
        );
        if !mu_free_lambda || !time_only(&spec.risk_premia.alpha_mu) {
            return None;
        }
    }

    let mut times = Vec::with_capacity(n + 1);
    let mut m = Vec::with_capacity(n + 1);
    let mut bond_sq = Vec::with_capacity(n + 1);
    let mut lambda = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let t = h * i as f64;
        let y_here = y_path[i];
        times.push(t);
        m.push(spec.mu_s(t, y_here) / spec.sigma_s(t, y_here));
        if mu_diffusion_zero {
            bond_sq.push(0.0);
            lambda.push(spec.lambda.eval(t, mu_path[i], 0));
        } else {
            let a = spec.alpha_mu(t, 0.0, y_here);
            bond_sq.push(a * a);
            lambda.push(spec.lambda.eval(t, 0.0, 0));
        }
    }

    Some(DeterministicCoefs {
        times,
        m,
        bond_premium_sq: bond_sq,
        lambda,
    })
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub times: Vec<f64>,
    pub u0: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub alpha: f64,
}

impl OracleSolution {
    pub fn price0(&self) -> f64 {
        (self.u_hat[0] - self.u0[0]) / self.alpha
    }
}

/// RK4 solution of the coupled deterministic system
/// `u0' = (m^2 + a^2) / 2` with `u0(T) = 0` and
/// `u' = -(e^{-(u - u0)} - 1) lambda + (m^2 + a^2) / 2` with
/// `u(T) = alpha * payoff`, reported on the grid nodes.
pub fn ode_oracle(
    coefs: &DeterministicCoefs,
    alpha: f64,
    payoff: f64,
    grid: &TimeGrid,
    substeps: usize,
) -> OracleSolution {
    let n = grid.n_steps;
    let mut u0 = vec![0.0; n + 1];
    let mut uh = vec![0.0; n + 1];
    u0[n] = 0.0;
    uh[n] = alpha * payoff;

    let deriv = |t: f64, s: (f64, f64)| -> (f64, f64) {
        let rate = 0.5 * (coefs.m(t).powi(2) + coefs.bond_premium_sq(t));
        let du0 = rate;
        let duh = -(((-(s.1 - s.0)).exp() - 1.0) * coefs.lambda(t)) + rate;
        (du0, duh)
    };

    let mut state = (u0[n], uh[n]);
    for i in (0..n).rev() {
        let t_hi = grid.time(i + 1);
        let t_lo = grid.time(i);
        let h = (t_lo - t_hi) / substeps as f64; // negative: backward
        let mut t = t_hi;
        for _ in 0..substeps {
            let k1 = deriv(t, state);
            let k2 = deriv(
                t + 0.5 * h,
                (state.0 + 0.5 * h * k1.0, state.1 + 0.5 * h * k1.1),
            );
            let k3 = deriv(
                t + 0.5 * h,
                (state.0 + 0.5 * h * k2.0, state.1 + 0.5 * h * k2.1),
            );
            let k4 = deriv(t + h, (state.0 + h * k3.0, state.1 + h * k3.1));
            state = (
                state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            );
            t += h;
        }
        u0[i] = state.0;
        uh[i] = state.1;
    }

    OracleSolution {
        times: grid.times(),
        u0,
        u_hat: uh,
        alpha,
    }
}

/// Diagnostics dump: `node,t,U0_mean,Uhat_mean,R2_value,R2_z1,R2_z2,R2_z3,cond`
/// (regression statistics from the claim-side solve).
pub fn write_diagnostics_csv<W: Write>(
    pure: &BsdeSolution,
    claim: &BsdeSolution,
    out: &mut W,
) -> io::Result<()> {
    writeln!(out, "node,t,U0_mean,Uhat_mean,R2_value,R2_z1,R2_z2,R2_z3,cond")?;
    for i in 0..claim.n_nodes {
        let d = claim.diagnostics[i];
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            i,
            claim.times[i],
            pure.node_mean(i),
            claim.node_mean(i),
            d.r2_value,
            d.r2_z1,
            d.r2_z2,
            d.r2_z3,
            d.condition
        )?;
    }
    Ok(())
}
