//! Monte Carlo simulation of the state system and the Cox death time.
//!
//! Paths are generated by Euler-Maruyama on the shared time grid. The
//! mortality index uses full truncation (the state is floored at zero each
//! step), asset and bond prices are simulated in log form so positivity is
//! exact, and each path owns its RNG stream so results do not depend on the
//! number of worker threads.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{ModelSpec, TimeGrid};
use crate::rng::{stream_rng, StreamKind};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("numeric overflow on path {path} at node {node}: |{value}| exceeds cap {cap}")]
    NumericOverflow {
        path: usize,
        node: usize,
        value: f64,
        cap: f64,
    },
}

/// Longevity-bond coefficients consumed by the simulator: volatility
/// loadings, drift, and the initial bond price.
pub trait BondCoefs: Sync {
    /// `(c_b, d_b, mu_b)` at `(t, mu, y)`.
    fn loadings(&self, t: f64, mu: f64, y: f64) -> (f64, f64, f64);

    /// Initial discounted bond price `S2_0`.
    fn initial_price(&self) -> f64 {
        1.0
    }
}

/// Synthetic bond with closure-supplied loadings, for tests and reduced
/// models without a PDE surface.
pub struct SyntheticBond<F: Fn(f64, f64, f64) -> (f64, f64, f64) + Sync> {
    pub coefs: F,
    pub s2_0: f64,
}

impl<F: Fn(f64, f64, f64) -> (f64, f64, f64) + Sync> BondCoefs for SyntheticBond<F> {
    fn loadings(&self, t: f64, mu: f64, y: f64) -> (f64, f64, f64) {
        (self.coefs)(t, mu, y)
    }
    fn initial_price(&self) -> f64 {
        self.s2_0
    }
}

/// Simulated trajectories, stored per path and node (row-major with node
/// stride). The chain path is ground truth for oracles only; pricing code
/// must not read it.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub n_paths: usize,
    pub grid: TimeGrid,
    pub times: Vec<f64>,
    pub mu: Vec<f64>,
    pub y: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    /// Survivor index `exp(-int mu)`; filled by [`survivor_index`].
    pub smu: Vec<f64>,
    /// Intensity along the true chain, `lambda(t_i, mu_i, Z_i)`.
    pub lambda: Vec<f64>,
    /// Cumulative hazard (trapezoidal).
    pub hazard: Vec<f64>,
    pub chain: Vec<u16>,
    /// Bond loadings along the path, cached at simulation time.
    pub c_b: Vec<f64>,
    pub d_b: Vec<f64>,
    pub mu_b: Vec<f64>,
    /// Brownian increments over `[t_i, t_{i+1})`, already `sqrt(dt)`-scaled.
    pub dw1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub dw3: Vec<f64>,
    /// Unit exponential draws.
    pub theta_exp: Vec<f64>,
    /// Death times; `INFINITY` when censored past the horizon. Filled by
    /// [`sample_death_time`].
    pub tau: Vec<f64>,
}

impl PathBundle {
    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    #[inline]
    pub fn idx(&self, path: usize, node: usize) -> usize {
        path * self.n_nodes() + node
    }

    pub fn path<'a>(&self, arr: &'a [f64], path: usize) -> &'a [f64] {
        let n = self.n_nodes();
        &arr[path * n..(path + 1) * n]
    }

    /// Death indicator `H_i = 1{tau <= t_i}`.
    #[inline]
    pub fn h(&self, path: usize, node: usize) -> bool {
        self.tau[path] <= self.times[node]
    }

    pub fn censored(&self, path: usize) -> bool {
        !self.tau[path].is_finite()
    }

    /// First node with `t_i >= tau`, i.e. where `H` jumps to one.
    pub fn death_node(&self, path: usize) -> Option<usize> {
        let tau = self.tau[path];
        if !tau.is_finite() {
            return None;
        }
        self.times.iter().position(|&t| t >= tau)
    }
}

struct PathSlices<'a> {
    mu: &'a mut [f64],
    y: &'a mut [f64],
    s1: &'a mut [f64],
    s2: &'a mut [f64],
    lambda: &'a mut [f64],
    hazard: &'a mut [f64],
    chain: &'a mut [u16],
    c_b: &'a mut [f64],
    d_b: &'a mut [f64],
    mu_b: &'a mut [f64],
    dw1: &'a mut [f64],
    dw2: &'a mut [f64],
    dw3: &'a mut [f64],
}

/// Generate `n_paths` Euler-Maruyama trajectories on the grid.
///
/// The returned bundle has hazard and exponential clocks populated;
/// [`sample_death_time`] and [`survivor_index`] complete it.
pub fn simulate_paths<B: BondCoefs + ?Sized>(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bond: &B,
) -> Result<PathBundle, SimulateError> {
    simulate_paths_opts(spec, grid, n_paths, seed, bond, false)
}

/// As [`simulate_paths`] but with caller-supplied Brownian increments
/// (path-major, step stride), for refinement studies on a fixed Brownian
/// path. Chain transitions and death clocks still come from the seeded
/// streams.
pub fn simulate_paths_with_brownians<B: BondCoefs + ?Sized>(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bond: &B,
    dw: (&[f64], &[f64], &[f64]),
) -> Result<PathBundle, SimulateError> {
    let n_steps = grid.n_steps;
    assert_eq!(dw.0.len(), n_paths * n_steps);
    assert_eq!(dw.1.len(), n_paths * n_steps);
    assert_eq!(dw.2.len(), n_paths * n_steps);
    simulate_core(spec, grid, n_paths, seed, bond, false, Some(dw))
}

/// As [`simulate_paths`] with the antithetic death-clock option: odd paths
/// reuse the previous even path's uniform mirrored.
pub fn simulate_paths_opts<B: BondCoefs + ?Sized>(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bond: &B,
    antithetic_theta: bool,
) -> Result<PathBundle, SimulateError> {
    simulate_core(spec, grid, n_paths, seed, bond, antithetic_theta, None)
}

fn simulate_core<B: BondCoefs + ?Sized>(
    spec: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    bond: &B,
    antithetic_theta: bool,
    injected_dw: Option<(&[f64], &[f64], &[f64])>,
) -> Result<PathBundle, SimulateError> {
    let n_nodes = grid.n_nodes();
    let n_steps = grid.n_steps;
    let times = grid.times();

    let mut bundle = PathBundle {
        n_paths,
        grid: *grid,
        times: times.clone(),
        mu: vec![0.0; n_paths * n_nodes],
        y: vec![0.0; n_paths * n_nodes],
        s1: vec![0.0; n_paths * n_nodes],
        s2: vec![0.0; n_paths * n_nodes],
        smu: vec![1.0; n_paths * n_nodes],
        lambda: vec![0.0; n_paths * n_nodes],
        hazard: vec![0.0; n_paths * n_nodes],
        chain: vec![0; n_paths * n_nodes],
        c_b: vec![0.0; n_paths * n_nodes],
        d_b: vec![0.0; n_paths * n_nodes],
        mu_b: vec![0.0; n_paths * n_nodes],
        dw1: vec![0.0; n_paths * n_steps],
        dw2: vec![0.0; n_paths * n_steps],
        dw3: vec![0.0; n_paths * n_steps],
        theta_exp: vec![0.0; n_paths],
        tau: vec![f64::INFINITY; n_paths],
    };

    let transition = spec.chain.transition_matrix(grid.dt());
    let n_states = spec.chain.n_states;
    let use_injected = injected_dw.is_some();
    if let Some((d1, d2, d3)) = injected_dw {
        bundle.dw1.copy_from_slice(d1);
        bundle.dw2.copy_from_slice(d2);
        bundle.dw3.copy_from_slice(d3);
    }

    // Death clocks from their own streams so toggling antithetics does not
    // perturb the Brownian draws.
    for p in 0..n_paths {
        let u = if antithetic_theta && p % 2 == 1 {
            let prev: f64 = stream_rng(seed, StreamKind::DeathClock, (p - 1) as u64).gen();
            1.0 - prev
        } else {
            stream_rng(seed, StreamKind::DeathClock, p as u64).gen()
        };
        let theta = -(1.0 - u).max(f64::MIN_POSITIVE).ln();
        bundle.theta_exp[p] = theta.max(f64::MIN_POSITIVE);
    }

    let slices: Vec<PathSlices> = bundle
        .mu
        .chunks_mut(n_nodes)
        .zip(bundle.y.chunks_mut(n_nodes))
        .zip(bundle.s1.chunks_mut(n_nodes))
        .zip(bundle.s2.chunks_mut(n_nodes))
        .zip(bundle.lambda.chunks_mut(n_nodes))
        .zip(bundle.hazard.chunks_mut(n_nodes))
        .zip(bundle.chain.chunks_mut(n_nodes))
        .zip(bundle.c_b.chunks_mut(n_nodes))
        .zip(bundle.d_b.chunks_mut(n_nodes))
        .zip(bundle.mu_b.chunks_mut(n_nodes))
        .zip(bundle.dw1.chunks_mut(n_steps))
        .zip(bundle.dw2.chunks_mut(n_steps))
        .zip(bundle.dw3.chunks_mut(n_steps))
        .map(
            #[allow(clippy::type_complexity)]
            |((((((((((((mu, y), s1), s2), lambda), hazard), chain), c_b), d_b), mu_b), dw1), dw2), dw3)| {
                PathSlices {
                    mu,
                    y,
                    s1,
                    s2,
                    lambda,
                    hazard,
                    chain,
                    c_b,
                    d_b,
                    mu_b,
                    dw1,
                    dw2,
                    dw3,
                }
            },
        )
        .collect();

    slices
        .into_par_iter()
        .enumerate()
        .try_for_each(|(p, s)| -> Result<(), SimulateError> {
            simulate_one(
                spec,
                grid,
                &times,
                &transition,
                n_states,
                seed,
                p,
                s,
                bond,
                use_injected,
            )
        })?;

    Ok(bundle)
}

#[allow(clippy::too_many_arguments)]
fn simulate_one<B: BondCoefs + ?Sized>(
    spec: &ModelSpec,
    grid: &TimeGrid,
    times: &[f64],
    transition: &[f64],
    n_states: usize,
    seed: u64,
    p: usize,
    s: PathSlices,
    bond: &B,
    use_injected: bool,
) -> Result<(), SimulateError> {
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let cap = spec.magnitude_cap;
    let log_cap = cap.ln();
    let mut rng = stream_rng(seed, StreamKind::PathNoise, p as u64);

    let u0: f64 = rng.gen();
    let mut z = sample_categorical(&spec.chain.initial_dist, u0);
    let mut mu = spec.mortality.mu_0;
    let mut y = spec.mortality.y_0;
    let mut ls1 = spec.market.s1_0.ln();
    let mut ls2 = bond.initial_price().ln();

    s.mu[0] = mu;
    s.y[0] = y;
    s.s1[0] = ls1.exp();
    s.s2[0] = ls2.exp();
    s.chain[0] = z as u16;
    s.lambda[0] = spec.lambda.eval(0.0, mu, z);
    s.hazard[0] = 0.0;
    let (c0, d0, m0) = bond.loadings(0.0, mu, y);
    s.c_b[0] = c0;
    s.d_b[0] = d0;
    s.mu_b[0] = m0;

    for i in 0..grid.n_steps {
        let t = times[i];
        let (dw1, dw2, dw3, u_chain) = if use_injected {
            let u: f64 = rng.gen();
            (s.dw1[i], s.dw2[i], s.dw3[i], u)
        } else {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let z3: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.gen();
            let dw1 = z1 * sqrt_dt;
            let dw2 = z2 * sqrt_dt;
            let dw3 = z3 * sqrt_dt;
            s.dw1[i] = dw1;
            s.dw2[i] = dw2;
            s.dw3[i] = dw3;
            (dw1, dw2, dw3, u)
        };

        let mu_s = spec.mu_s(t, y);
        let sigma_s = spec.sigma_s(t, y);
        ls1 += (mu_s - 0.5 * sigma_s * sigma_s) * dt + sigma_s * dw1;

        let (c_b, d_b, mu_b) = (s.c_b[i], s.d_b[i], s.mu_b[i]);
        ls2 += (mu_b - 0.5 * (c_b * c_b + d_b * d_b)) * dt + c_b * dw2 + d_b * dw3;

        let b_mu = spec.b_mu(t, mu, y);
        let sigma_mu = spec.sigma_mu(t, mu, y);
        let b_y = spec.b_y(t, y);
        let sigma_y = spec.sigma_y(t, y);
        mu = (mu + b_mu * dt + sigma_mu * dw2).max(0.0);
        y += b_y * dt + sigma_y * dw3;

        let offset = z * n_states;
        z = sample_categorical(&transition[offset..offset + n_states], u_chain);

        let t_next = times[i + 1];
        let lam_next = spec.lambda.eval(t_next, mu, z);
        s.mu[i + 1] = mu;
        s.y[i + 1] = y;
        s.s1[i + 1] = ls1.exp();
        s.s2[i + 1] = ls2.exp();
        s.chain[i + 1] = z as u16;
        s.lambda[i + 1] = lam_next;
        s.hazard[i + 1] = s.hazard[i] + 0.5 * (s.lambda[i] + lam_next) * dt;
        let (c_next, d_next, m_next) = bond.loadings(t_next, mu, y);
        s.c_b[i + 1] = c_next;
        s.d_b[i + 1] = d_next;
        s.mu_b[i + 1] = m_next;

        for (value, limit) in [
            (mu.abs(), cap),
            (y.abs(), cap),
            (ls1.abs(), log_cap),
            (ls2.abs(), log_cap),
        ] {
            if !value.is_finite() || value > limit {
                return Err(SimulateError::NumericOverflow {
                    path: p,
                    node: i + 1,
                    value,
                    cap,
                });
            }
        }
    }
    Ok(())
}

fn sample_categorical(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Locate the death time as the linear-interpolation crossing of the
/// cumulative hazard through the exponential clock. Censored paths keep
/// `tau = INFINITY`.
pub fn sample_death_time(bundle: &mut PathBundle) {
    let n_nodes = bundle.n_nodes();
    let times = bundle.times.clone();
    for p in 0..bundle.n_paths {
        let theta = bundle.theta_exp[p];
        let hazard = &bundle.hazard[p * n_nodes..(p + 1) * n_nodes];
        let mut tau = f64::INFINITY;
        for i in 1..n_nodes {
            if hazard[i] >= theta {
                let d = hazard[i] - hazard[i - 1];
                tau = if d > 0.0 {
                    times[i - 1] + (times[i] - times[i - 1]) * (theta - hazard[i - 1]) / d
                } else {
                    times[i]
                };
                break;
            }
        }
        bundle.tau[p] = tau;
    }
}

/// Fill the survivor index `S^mu_i = exp(-trapz mu)` along each path.
pub fn survivor_index(bundle: &mut PathBundle) {
    let n_nodes = bundle.n_nodes();
    let dt = bundle.grid.dt();
    for p in 0..bundle.n_paths {
        let base = p * n_nodes;
        let mut integral = 0.0;
        bundle.smu[base] = 1.0;
        for i in 1..n_nodes {
            integral += 0.5 * (bundle.mu[base + i - 1] + bundle.mu[base + i]) * dt;
            bundle.smu[base + i] = (-integral).exp();
        }
    }
}

/// Dump selected paths as CSV with the pinned column layout.
pub fn write_paths_csv<W: Write>(
    bundle: &PathBundle,
    paths: &[usize],
    out: &mut W,
) -> io::Result<()> {
    writeln!(out, "path,node,t,mu,Y,S1,S2,Smu,Lambda,H")?;
    for &p in paths {
        for i in 0..bundle.n_nodes() {
            let idx = bundle.idx(p, i);
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                p,
                i,
                bundle.times[i],
                bundle.mu[idx],
                bundle.y[idx],
                bundle.s1[idx],
                bundle.s2[idx],
                bundle.smu[idx],
                bundle.hazard[idx],
                u8::from(bundle.h(p, i)),
            )?;
        }
    }
    Ok(())
}
