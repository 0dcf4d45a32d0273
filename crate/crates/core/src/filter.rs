//! Conditional law of the hidden chain given the insurer's information, and
//! the projected mortality intensity.
//!
//! For a finite-state chain the unnormalized filter is a linear ODE system
//! between death observations, so everything here is exactly computable:
//!
//! * before death, the unnormalized weights solve `drho/dt = rho Q - rho *
//!   diag(lambda - 1)` and the filter is `pi = rho / sum(rho)`;
//! * the projected intensity `hat_pi(lambda)` uses the sibling system
//!   `drho/dt = rho Q - rho * diag(lambda)` and stays defined for all `t`,
//!   which is what the claim BSDE consumes;
//! * observing the death reweights the filter by `lambda` and afterwards the
//!   law evolves by `dpi/dt = pi Q`.
//!
//! A bootstrap particle filter doubles as an independent oracle.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ChainSpec, LambdaSpec};
use crate::rng::{stream_rng, StreamKind};
use crate::simulate::PathBundle;

/// Renormalise the unnormalized weights this often; the filter is invariant
/// to the overall scale, so this only prevents underflow.
const RENORM_EVERY: usize = 100;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("degenerate filter: {0}")]
    Degenerate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    PreDeath,
    AtDeath,
    PostDeath,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::PreDeath => "pre",
            Regime::AtDeath => "death",
            Regime::PostDeath => "post",
        }
    }
}

/// Filter trajectory along one simulated path.
#[derive(Debug, Clone)]
pub struct FilterPath {
    pub n_states: usize,
    /// Unnormalized weights per node (node-major). After the death node the
    /// normalized law is stored, since the Zakai weights live pre-death only.
    pub rho: Vec<f64>,
    /// Normalized law per node.
    pub pi: Vec<f64>,
    /// Projected intensity `sum_z pi(z) lambda(t, mu_t, z)` per node.
    pub pi_lambda: Vec<f64>,
    pub regime: Vec<Regime>,
}

impl FilterPath {
    pub fn pi_at(&self, node: usize) -> &[f64] {
        &self.pi[node * self.n_states..(node + 1) * self.n_states]
    }
}

/// One RK4 step of the linear system `dx/dt = x Q - x * diag(rates)` with the
/// rates frozen over the step.
fn rk4_step(chain: &ChainSpec, rates: &[f64], dt: f64, x: &mut [f64]) {
    let n = x.len();
    let deriv = |v: &[f64], out: &mut [f64]| {
        chain.apply_left(v, out);
        for j in 0..n {
            out[j] -= v[j] * rates[j];
        }
    };
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    deriv(x, &mut k1);
    for j in 0..n {
        tmp[j] = x[j] + 0.5 * dt * k1[j];
    }
    deriv(&tmp, &mut k2);
    for j in 0..n {
        tmp[j] = x[j] + 0.5 * dt * k2[j];
    }
    deriv(&tmp, &mut k3);
    for j in 0..n {
        tmp[j] = x[j] + dt * k3[j];
    }
    deriv(&tmp, &mut k4);
    for j in 0..n {
        x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
}

fn clip_small_negatives(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 && *v > -1e-12 {
            *v = 0.0;
        }
    }
}

/// One step of the pre-death unnormalized filter
/// `drho/dt = rho Q - rho * diag(lambda - 1)`, integrated by RK4 with the
/// intensity row frozen at the step's left node.
pub fn propagate_unnormalized(
    rho: &[f64],
    chain: &ChainSpec,
    lambda_row: &[f64],
    dt: f64,
) -> Result<Vec<f64>, FilterError> {
    let rates: Vec<f64> = lambda_row.iter().map(|l| l - 1.0).collect();
    let mut next = rho.to_vec();
    rk4_step(chain, &rates, dt, &mut next);
    clip_small_negatives(&mut next);
    let sum: f64 = next.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(FilterError::Degenerate(format!(
            "weights sum to {sum} after a step of dt = {dt}"
        )));
    }
    Ok(next)
}

/// Kallianpur-Striebel normalisation `pi = rho / sum(rho)`.
pub fn normalized_filter(rho: &[f64]) -> Result<Vec<f64>, FilterError> {
    let sum: f64 = rho.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(FilterError::Degenerate(format!("weight mass {sum}")));
    }
    Ok(rho.iter().map(|r| r / sum).collect())
}

/// Bayes update of the filter on observing the death:
/// `pi_tau(z) = pi(z) lambda(z) / sum(pi lambda)`.
pub fn jump_update(pi_minus: &[f64], lambda_row: &[f64]) -> Result<Vec<f64>, FilterError> {
    let denom: f64 = pi_minus.iter().zip(lambda_row).map(|(p, l)| p * l).sum();
    if !denom.is_finite() || denom <= 0.0 {
        return Err(FilterError::Degenerate(format!(
            "jump denominator {denom}"
        )));
    }
    Ok(pi_minus
        .iter()
        .zip(lambda_row)
        .map(|(p, l)| p * l / denom)
        .collect())
}

/// One RK4 step of the post-death linear equation `dpi/dt = pi Q`; the result
/// stays a probability vector up to rounding.
pub fn post_jump_propagate(pi: &[f64], chain: &ChainSpec, dt: f64) -> Vec<f64> {
    let rates = vec![0.0; pi.len()];
    let mut next = pi.to_vec();
    rk4_step(chain, &rates, dt, &mut next);
    clip_small_negatives(&mut next);
    let sum: f64 = next.iter().sum();
    if sum > 0.0 {
        for v in next.iter_mut() {
            *v /= sum;
        }
    }
    next
}

/// Projected intensity series along one observed `mu` trajectory, defined for
/// every node regardless of the death time:
/// `hat_pi_t(lambda) = E[lambda_t e^{-int lambda}] / E[e^{-int lambda}]`.
pub fn hat_pi_lambda(
    mu_path: &[f64],
    times: &[f64],
    chain: &ChainSpec,
    lambda: &LambdaSpec,
) -> Result<Vec<f64>, FilterError> {
    let n = chain.n_states;
    let mut rho_hat = chain.initial_dist.clone();
    let mut row = vec![0.0; n];
    let mut out = Vec::with_capacity(times.len());

    lambda.row_into(times[0], mu_path[0], &mut row);
    out.push(project(&rho_hat, &row)?);

    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        lambda.row_into(times[i], mu_path[i], &mut row);
        rk4_step(chain, &row, dt, &mut rho_hat);
        clip_small_negatives(&mut rho_hat);
        if (i + 1) % RENORM_EVERY == 0 {
            let sum: f64 = rho_hat.iter().sum();
            if !sum.is_finite() || sum <= 0.0 {
                return Err(FilterError::Degenerate(format!(
                    "hat weights sum to {sum} at node {}",
                    i + 1
                )));
            }
            for v in rho_hat.iter_mut() {
                *v /= sum;
            }
        }
        lambda.row_into(times[i + 1], mu_path[i + 1], &mut row);
        out.push(project(&rho_hat, &row)?);
    }
    Ok(out)
}

fn project(rho: &[f64], lambda_row: &[f64]) -> Result<f64, FilterError> {
    let mass: f64 = rho.iter().sum();
    if !mass.is_finite() || mass <= 0.0 {
        return Err(FilterError::Degenerate(format!("weight mass {mass}")));
    }
    Ok(rho.iter().zip(lambda_row).map(|(r, l)| r * l).sum::<f64>() / mass)
}

/// Projected intensity for every path in a bundle, stored path-major like the
/// bundle arrays.
pub fn hat_pi_lambda_batch(
    bundle: &PathBundle,
    chain: &ChainSpec,
    lambda: &LambdaSpec,
) -> Result<Vec<f64>, FilterError> {
    let n_nodes = bundle.n_nodes();
    let mut out = vec![0.0; bundle.n_paths * n_nodes];
    out.par_chunks_mut(n_nodes)
        .enumerate()
        .try_for_each(|(p, dst)| -> Result<(), FilterError> {
            let series = hat_pi_lambda(bundle.path(&bundle.mu, p), &bundle.times, chain, lambda)?;
            dst.copy_from_slice(&series);
            Ok(())
        })?;
    Ok(out)
}

/// Survival weight `E[e^{-int_0^T lambda} | mu path]`, the total mass of the
/// unnormalized `hat` system at the horizon.
pub fn survival_weight(
    mu_path: &[f64],
    times: &[f64],
    chain: &ChainSpec,
    lambda: &LambdaSpec,
) -> Result<f64, FilterError> {
    let n = chain.n_states;
    let mut rho_hat = chain.initial_dist.clone();
    let mut row = vec![0.0; n];
    let mut log_mass = 0.0;
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        lambda.row_into(times[i], mu_path[i], &mut row);
        rk4_step(chain, &row, dt, &mut rho_hat);
        clip_small_negatives(&mut rho_hat);
        if (i + 1) % RENORM_EVERY == 0 {
            let sum: f64 = rho_hat.iter().sum();
            if !sum.is_finite() || sum <= 0.0 {
                return Err(FilterError::Degenerate(format!(
                    "hat weights sum to {sum} at node {}",
                    i + 1
                )));
            }
            log_mass += sum.ln();
            for v in rho_hat.iter_mut() {
                *v /= sum;
            }
        }
    }
    let sum: f64 = rho_hat.iter().sum();
    if !sum.is_finite() || sum <= 0.0 {
        return Err(FilterError::Degenerate(format!("terminal mass {sum}")));
    }
    Ok((log_mass + sum.ln()).exp())
}

/// Full filter trajectory for one path: Kallianpur-Striebel weights before
/// the death, the Bayes reweighting at the death node, and the linear
/// evolution afterwards.
pub fn filter_path(
    bundle: &PathBundle,
    path: usize,
    chain: &ChainSpec,
    lambda: &LambdaSpec,
) -> Result<FilterPath, FilterError> {
    let n = chain.n_states;
    let n_nodes = bundle.n_nodes();
    let mu_path = bundle.path(&bundle.mu, path);
    let times = &bundle.times;
    let death = bundle.death_node(path);

    let mut rho_store = vec![0.0; n_nodes * n];
    let mut pi_store = vec![0.0; n_nodes * n];
    let mut pi_lambda = vec![0.0; n_nodes];
    let mut regime = vec![Regime::PreDeath; n_nodes];

    let mut rho = chain.initial_dist.clone();
    let mut row = vec![0.0; n];
    let mut pi = normalized_filter(&rho)?;

    for i in 0..n_nodes {
        let reg = match death {
            Some(j) if i == j => Regime::AtDeath,
            Some(j) if i > j => Regime::PostDeath,
            _ => Regime::PreDeath,
        };
        regime[i] = reg;
        lambda.row_into(times[i], mu_path[i], &mut row);
        match reg {
            Regime::PreDeath => {
                pi = normalized_filter(&rho)?;
            }
            Regime::AtDeath => {
                let pi_minus = normalized_filter(&rho)?;
                pi = jump_update(&pi_minus, &row)?;
                rho = pi.clone();
            }
            Regime::PostDeath => {}
        }
        rho_store[i * n..(i + 1) * n].copy_from_slice(&rho);
        pi_store[i * n..(i + 1) * n].copy_from_slice(&pi);
        pi_lambda[i] = pi.iter().zip(&row).map(|(p, l)| p * l).sum();

        if i + 1 < n_nodes {
            let dt = times[i + 1] - times[i];
            match reg {
                Regime::PreDeath => {
                    rho = propagate_unnormalized(&rho, chain, &row, dt)?;
                    if (i + 1) % RENORM_EVERY == 0 {
                        rho = normalized_filter(&rho)?;
                    }
                }
                Regime::AtDeath | Regime::PostDeath => {
                    pi = post_jump_propagate(&pi, chain, dt);
                    rho = pi.clone();
                }
            }
        }
    }

    Ok(FilterPath {
        n_states: n,
        rho: rho_store,
        pi: pi_store,
        pi_lambda,
        regime,
    })
}

/// Bootstrap particle filter for the survival observation: particles carry
/// chain states, weights accumulate pathwise survival likelihood, systematic
/// resampling triggers at half effective sample size. Returns the projected
/// intensity estimate and its standard error per node.
pub fn particle_filter_oracle(
    mu_path: &[f64],
    times: &[f64],
    chain: &ChainSpec,
    lambda: &LambdaSpec,
    n_particles: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let n_states = chain.n_states;
    let n_nodes = times.len();
    let mut rng = stream_rng(seed, StreamKind::Particle, 0);

    let mut states: Vec<usize> = (0..n_particles)
        .map(|_| sample_categorical(&chain.initial_dist, rng.gen()))
        .collect();
    let mut weights = vec![1.0 / n_particles as f64; n_particles];
    let mut est = vec![0.0; n_nodes];
    let mut se = vec![0.0; n_nodes];

    let mut row = vec![0.0; n_states];
    lambda.row_into(times[0], mu_path[0], &mut row);
    let (m, s) = weighted_stats(&states, &weights, &row);
    est[0] = m;
    se[0] = s;

    // Uniform grid: one transition matrix serves every step.
    let transition = chain.transition_matrix(if n_nodes > 1 { times[1] - times[0] } else { 0.0 });
    let mut row_next = vec![0.0; n_states];
    for i in 0..n_nodes - 1 {
        let dt = times[i + 1] - times[i];
        lambda.row_into(times[i], mu_path[i], &mut row);
        lambda.row_into(times[i + 1], mu_path[i + 1], &mut row_next);

        let mut mass = 0.0;
        for (state, w) in states.iter_mut().zip(weights.iter_mut()) {
            let lam_old = row[*state];
            let next = sample_categorical(
                &transition[*state * n_states..(*state + 1) * n_states],
                rng.gen(),
            );
            let lam_new = row_next[next];
            *state = next;
            *w *= (-0.5 * (lam_old + lam_new) * dt).exp();
            mass += *w;
        }
        if mass > 0.0 {
            for w in weights.iter_mut() {
                *w /= mass;
            }
        }
        let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        if ess < n_particles as f64 / 2.0 {
            systematic_resample(&mut states, &mut weights, rng.gen());
        }
        let (m, s) = weighted_stats(&states, &weights, &row_next);
        est[i + 1] = m;
        se[i + 1] = s;
    }
    (est, se)
}

fn weighted_stats(states: &[usize], weights: &[f64], lambda_row: &[f64]) -> (f64, f64) {
    let mean: f64 = states
        .iter()
        .zip(weights)
        .map(|(&z, &w)| w * lambda_row[z])
        .sum();
    let var: f64 = states
        .iter()
        .zip(weights)
        .map(|(&z, &w)| w * (lambda_row[z] - mean).powi(2))
        .sum();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    (mean, (var / ess).sqrt())
}

fn systematic_resample(states: &mut Vec<usize>, weights: &mut [f64], u0: f64) {
    let n = states.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in weights.iter() {
        acc += w;
        cumulative.push(acc);
    }
    let mut new_states = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let target = (k as f64 + u0) / n as f64 * acc;
        while j + 1 < n && cumulative[j] < target {
            j += 1;
        }
        new_states.push(states[j]);
    }
    *states = new_states;
    for w in weights.iter_mut() {
        *w = 1.0 / n as f64;
    }
}

fn sample_categorical(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u * total < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Dump filter trajectories as CSV: `path,node,t,regime,pi_1..pi_n,pi_lambda`.
pub fn write_filter_csv<W: std::io::Write>(
    bundle: &PathBundle,
    filters: &[(usize, FilterPath)],
    out: &mut W,
) -> std::io::Result<()> {
    let n = filters.first().map_or(0, |(_, f)| f.n_states);
    write!(out, "path,node,t,regime")?;
    for z in 1..=n {
        write!(out, ",pi_{z}")?;
    }
    writeln!(out, ",pi_lambda")?;
    for (p, f) in filters {
        for i in 0..bundle.n_nodes() {
            write!(out, "{},{},{},{}", p, i, bundle.times[i], f.regime[i].label())?;
            for z in 0..n {
                write!(out, ",{}", f.pi[i * n + z])?;
            }
            writeln!(out, ",{}", f.pi_lambda[i])?;
        }
    }
    Ok(())
}
