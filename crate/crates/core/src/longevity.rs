//! Longevity-bond price surface `F(t, mu, y)` and its derived loadings.
//!
//! `F` solves the backward boundary problem `F_t + L^{mu,Y} F - mu F = 0`
//! with `F(T, ., .) = 1`, where `L^{mu,Y}` uses the pricing-measure drifts
//! `b^mu + alpha^mu` and `b^Y + alpha^Y`. The two diffusion directions are
//! driven by independent Brownian motions, so there is no cross-derivative
//! term and an alternating-direction implicit scheme (Peaceman-Rachford)
//! applies directly: one tridiagonal sweep per direction per step.
//!
//! From the surface, Ito's formula gives the bond volatility loadings
//! `c^B = sigma^mu F_mu / F`, `d^B = sigma^Y F_y / F` and the drift
//! `mu^B = c^B alpha^mu + d^B alpha^Y`. The loadings are kept signed:
//! `c^B < 0` wherever `F` decreases in `mu`, and downstream formulas only use
//! squares and linear combinations, so the convention cancels.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::{state_bounds, ModelSpec};
use crate::rng::{stream_rng, StreamKind};
use crate::simulate::BondCoefs;

#[derive(Debug, Error)]
pub enum LongevityError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
}

/// Rectangular grid in `(t, mu, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeGrid {
    pub n_t: usize,
    pub n_mu: usize,
    pub n_y: usize,
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl PdeGrid {
    /// Grid sized to the model's expected state range (roughly six stationary
    /// standard deviations around the means, `mu` floored at zero).
    pub fn from_spec(spec: &ModelSpec, n_t: usize, n_mu: usize, n_y: usize) -> Self {
        let b = state_bounds(spec);
        PdeGrid {
            n_t,
            n_mu,
            n_y,
            mu_lo: b.mu_lo,
            mu_hi: b.mu_hi,
            y_lo: b.y_lo,
            y_hi: b.y_hi,
        }
    }

    pub fn refined(&self) -> Self {
        PdeGrid {
            n_t: self.n_t * 2,
            n_mu: self.n_mu * 2,
            n_y: self.n_y * 2,
            ..*self
        }
    }

    pub fn d_mu(&self) -> f64 {
        (self.mu_hi - self.mu_lo) / self.n_mu as f64
    }

    pub fn d_y(&self) -> f64 {
        (self.y_hi - self.y_lo) / self.n_y as f64
    }

    pub fn mu(&self, i: usize) -> f64 {
        self.mu_lo + (self.mu_hi - self.mu_lo) * i as f64 / self.n_mu as f64
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y_lo + (self.y_hi - self.y_lo) * j as f64 / self.n_y as f64
    }
}

/// Bond price surface with loadings and drift on the full `(t, mu, y)` grid.
#[derive(Debug, Clone)]
pub struct BondSurface {
    pub grid: PdeGrid,
    pub horizon: f64,
    /// `F`, time-major: index `(k, i, j)`.
    pub f: Vec<f64>,
    pub df_dmu: Vec<f64>,
    pub df_dy: Vec<f64>,
    pub c_b: Vec<f64>,
    pub d_b: Vec<f64>,
    pub mu_b: Vec<f64>,
    /// `F(0, mu_0, y_0)`: the initial discounted bond price.
    pub s2_0: f64,
}

impl BondSurface {
    #[inline]
    fn idx(&self, k: usize, i: usize, j: usize) -> usize {
        (k * (self.grid.n_mu + 1) + i) * (self.grid.n_y + 1) + j
    }

    pub fn t(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.grid.n_t as f64
    }

    pub fn value(&self, k: usize, i: usize, j: usize) -> f64 {
        self.f[self.idx(k, i, j)]
    }

    /// Trilinear interpolation (linear in `t`, bilinear in `(mu, y)`) of one
    /// stored field; coordinates are clamped to the grid box.
    fn interp(&self, arr: &[f64], t: f64, mu: f64, y: f64) -> f64 {
        let g = &self.grid;
        let ft = (t / self.horizon * g.n_t as f64).clamp(0.0, g.n_t as f64);
        let fm = ((mu - g.mu_lo) / (g.mu_hi - g.mu_lo) * g.n_mu as f64).clamp(0.0, g.n_mu as f64);
        let fy = ((y - g.y_lo) / (g.y_hi - g.y_lo) * g.n_y as f64).clamp(0.0, g.n_y as f64);
        let (k0, wk) = split_frac(ft, g.n_t);
        let (i0, wi) = split_frac(fm, g.n_mu);
        let (j0, wj) = split_frac(fy, g.n_y);
        let mut out = 0.0;
        for (dk, tw) in [(0, 1.0 - wk), (1, wk)] {
            for (di, mw) in [(0, 1.0 - wi), (1, wi)] {
                for (dj, yw) in [(0, 1.0 - wj), (1, wj)] {
                    let w = tw * mw * yw;
                    if w != 0.0 {
                        out += w * arr[self.idx(k0 + dk, i0 + di, j0 + dj)];
                    }
                }
            }
        }
        out
    }

    pub fn price(&self, t: f64, mu: f64, y: f64) -> f64 {
        self.interp(&self.f, t, mu, y)
    }

    /// Export the surface as CSV: `t,mu,y,F,cB,dB,muB`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,mu,y,F,cB,dB,muB")?;
        for k in 0..=self.grid.n_t {
            for i in 0..=self.grid.n_mu {
                for j in 0..=self.grid.n_y {
                    let idx = self.idx(k, i, j);
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        self.t(k),
                        self.grid.mu(i),
                        self.grid.y(j),
                        self.f[idx],
                        self.c_b[idx],
                        self.d_b[idx],
                        self.mu_b[idx]
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn split_frac(x: f64, n: usize) -> (usize, f64) {
    let i = (x.floor() as usize).min(n.saturating_sub(1));
    (i, x - i as f64)
}

impl BondCoefs for BondSurface {
    fn loadings(&self, t: f64, mu: f64, y: f64) -> (f64, f64, f64) {
        (
            self.interp(&self.c_b, t, mu, y),
            self.interp(&self.d_b, t, mu, y),
            self.interp(&self.mu_b, t, mu, y),
        )
    }

    fn initial_price(&self) -> f64 {
        self.s2_0
    }
}

struct Tridiag {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiag {
    fn new(n: usize) -> Self {
        Tridiag {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
        }
    }

    /// Thomas algorithm; overwrites `rhs` with the solution.
    fn solve(&mut self, rhs: &mut [f64]) {
        let n = rhs.len();
        let mut scratch = vec![0.0; n];
        let mut beta = self.diag[0];
        rhs[0] /= beta;
        for i in 1..n {
            scratch[i] = self.sup[i - 1] / beta;
            beta = self.diag[i] - self.sub[i] * scratch[i];
            rhs[i] = (rhs[i] - self.sub[i] * rhs[i - 1]) / beta;
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= scratch[i + 1] * rhs[i + 1];
        }
    }
}

/// Stencil weights of one spatial operator row:
/// `drift * dF/dx + 0.5 sigma^2 * d2F/dx2 - 0.5 mu * F`, with linear
/// extrapolation ghosts at the boundary (zero second derivative, one-sided
/// first derivative).
#[inline]
fn operator_row(
    i: usize,
    n: usize,
    h: f64,
    drift: f64,
    sigma: f64,
    reaction: f64,
) -> (f64, f64, f64) {
    let half_var = 0.5 * sigma * sigma;
    if i == 0 {
        (0.0, -drift / h - reaction, drift / h)
    } else if i == n {
        (-drift / h, drift / h - reaction, 0.0)
    } else {
        (
            -drift / (2.0 * h) + half_var / (h * h),
            -2.0 * half_var / (h * h) - reaction,
            drift / (2.0 * h) + half_var / (h * h),
        )
    }
}

/// Solve the Feynman-Kac boundary problem backward from `F(T) = 1` with a
/// Peaceman-Rachford ADI scheme; also fills loadings and drift.
pub fn solve_bond_pde(spec: &ModelSpec, grid: &PdeGrid) -> Result<BondSurface, LongevityError> {
    let n_mu = grid.n_mu;
    let n_y = grid.n_y;
    let n_t = grid.n_t;
    let n_slab = (n_mu + 1) * (n_y + 1);
    let dt = spec.horizon / n_t as f64;
    let h_mu = grid.d_mu();
    let h_y = grid.d_y();

    let mut surface = BondSurface {
        grid: *grid,
        horizon: spec.horizon,
        f: vec![1.0; (n_t + 1) * n_slab],
        df_dmu: vec![0.0; (n_t + 1) * n_slab],
        df_dy: vec![0.0; (n_t + 1) * n_slab],
        c_b: vec![0.0; (n_t + 1) * n_slab],
        d_b: vec![0.0; (n_t + 1) * n_slab],
        mu_b: vec![0.0; (n_t + 1) * n_slab],
        s2_0: 1.0,
    };

    let slab = |k: usize| k * n_slab;
    let at = |i: usize, j: usize| i * (n_y + 1) + j;

    let mut current = vec![1.0; n_slab];
    let mut star = vec![0.0; n_slab];
    let mut rhs_mu = vec![0.0; n_mu + 1];
    let mut rhs_y = vec![0.0; n_y + 1];
    let theta = 0.5 * dt;

    for k in (0..n_t).rev() {
        let t_mid = spec.horizon * (k as f64 + 0.5) / n_t as f64;

        // Sweep 1: implicit in mu, explicit in y.
        for i in 0..=n_mu {
            let mu = grid.mu(i);
            for j in 0..=n_y {
                let y = grid.y(j);
                let drift_y = spec.b_y(t_mid, y) + spec.alpha_y(t_mid, mu, y);
                let sigma_y = spec.sigma_y(t_mid, y);
                let (lo, mid, hi) = operator_row(j, n_y, h_y, drift_y, sigma_y, 0.5 * mu);
                let f_lo = if j > 0 { current[at(i, j - 1)] } else { 0.0 };
                let f_hi = if j < n_y { current[at(i, j + 1)] } else { 0.0 };
                star[at(i, j)] = current[at(i, j)]
                    + theta * (lo * f_lo + mid * current[at(i, j)] + hi * f_hi);
            }
        }
        for j in 0..=n_y {
            let y = grid.y(j);
            let mut tri = Tridiag::new(n_mu + 1);
            for i in 0..=n_mu {
                let mu = grid.mu(i);
                let drift_mu = spec.b_mu(t_mid, mu, y) + spec.alpha_mu(t_mid, mu, y);
                let sigma_mu = spec.sigma_mu(t_mid, mu, y);
                let (lo, mid, hi) = operator_row(i, n_mu, h_mu, drift_mu, sigma_mu, 0.5 * mu);
                tri.sub[i] = -theta * lo;
                tri.diag[i] = 1.0 - theta * mid;
                tri.sup[i] = -theta * hi;
                rhs_mu[i] = star[at(i, j)];
            }
            tri.solve(&mut rhs_mu);
            for i in 0..=n_mu {
                star[at(i, j)] = rhs_mu[i];
            }
        }

        // Sweep 2: implicit in y, explicit in mu.
        let mut second = vec![0.0; n_slab];
        for j in 0..=n_y {
            let y = grid.y(j);
            for i in 0..=n_mu {
                let mu = grid.mu(i);
                let drift_mu = spec.b_mu(t_mid, mu, y) + spec.alpha_mu(t_mid, mu, y);
                let sigma_mu = spec.sigma_mu(t_mid, mu, y);
                let (lo, mid, hi) = operator_row(i, n_mu, h_mu, drift_mu, sigma_mu, 0.5 * mu);
                let f_lo = if i > 0 { star[at(i - 1, j)] } else { 0.0 };
                let f_hi = if i < n_mu { star[at(i + 1, j)] } else { 0.0 };
                second[at(i, j)] =
                    star[at(i, j)] + theta * (lo * f_lo + mid * star[at(i, j)] + hi * f_hi);
            }
        }
        for i in 0..=n_mu {
            let mu = grid.mu(i);
            let mut tri = Tridiag::new(n_y + 1);
            for j in 0..=n_y {
                let y = grid.y(j);
                let drift_y = spec.b_y(t_mid, y) + spec.alpha_y(t_mid, mu, y);
                let sigma_y = spec.sigma_y(t_mid, y);
                let (lo, mid, hi) = operator_row(j, n_y, h_y, drift_y, sigma_y, 0.5 * mu);
                tri.sub[j] = -theta * lo;
                tri.diag[j] = 1.0 - theta * mid;
                tri.sup[j] = -theta * hi;
                rhs_y[j] = second[at(i, j)];
            }
            tri.solve(&mut rhs_y);
            for j in 0..=n_y {
                current[at(i, j)] = rhs_y[j].clamp(f64::MIN_POSITIVE, 1.0);
            }
        }

        surface.f[slab(k)..slab(k) + n_slab].copy_from_slice(&current);
    }

    bond_volatilities(&mut surface, spec);
    bond_drift(&mut surface, spec);
    let mu0 = spec.mortality.mu_0;
    let y0 = spec.mortality.y_0;
    surface.s2_0 = surface.price(0.0, mu0, y0);
    Ok(surface)
}

/// Solve with a convergence self-check: the solution is recomputed on a
/// halved-step grid and `F(0, mu_0, y_0)` must move by no more than `tol`.
pub fn solve_bond_pde_checked(
    spec: &ModelSpec,
    grid: &PdeGrid,
    tol: f64,
) -> Result<BondSurface, LongevityError> {
    let coarse = solve_bond_pde(spec, grid)?;
    let fine = solve_bond_pde(spec, &grid.refined())?;
    let delta = (coarse.s2_0 - fine.s2_0).abs();
    if delta > tol {
        return Err(LongevityError::GridTooCoarse(format!(
            "halving the grid moves F(0, mu_0, y_0) by {delta:.3e} > {tol:.3e}"
        )));
    }
    Ok(fine)
}

/// Central-difference partials and the volatility loadings
/// `c^B = sigma^mu F_mu / F`, `d^B = sigma^Y F_y / F` (signed).
pub fn bond_volatilities(surface: &mut BondSurface, spec: &ModelSpec) {
    let g = surface.grid;
    let h_mu = g.d_mu();
    let h_y = g.d_y();
    for k in 0..=g.n_t {
        let t = surface.t(k);
        for i in 0..=g.n_mu {
            let mu = g.mu(i);
            for j in 0..=g.n_y {
                let y = g.y(j);
                let idx = surface.idx(k, i, j);
                let dmu = if i == 0 {
                    (surface.f[surface.idx(k, 1, j)] - surface.f[surface.idx(k, 0, j)]) / h_mu
                } else if i == g.n_mu {
                    (surface.f[surface.idx(k, i, j)] - surface.f[surface.idx(k, i - 1, j)]) / h_mu
                } else {
                    (surface.f[surface.idx(k, i + 1, j)] - surface.f[surface.idx(k, i - 1, j)])
                        / (2.0 * h_mu)
                };
                let dy = if j == 0 {
                    (surface.f[surface.idx(k, i, 1)] - surface.f[surface.idx(k, i, 0)]) / h_y
                } else if j == g.n_y {
                    (surface.f[surface.idx(k, i, j)] - surface.f[surface.idx(k, i, j - 1)]) / h_y
                } else {
                    (surface.f[surface.idx(k, i, j + 1)] - surface.f[surface.idx(k, i, j - 1)])
                        / (2.0 * h_y)
                };
                surface.df_dmu[idx] = dmu;
                surface.df_dy[idx] = dy;
                let f = surface.f[idx];
                surface.c_b[idx] = spec.sigma_mu(t, mu, y) * dmu / f;
                surface.d_b[idx] = spec.sigma_y(t, y) * dy / f;
            }
        }
    }
}

/// Bond drift under the physical measure: `mu^B = c^B alpha^mu + d^B alpha^Y`.
pub fn bond_drift(surface: &mut BondSurface, spec: &ModelSpec) {
    let g = surface.grid;
    for k in 0..=g.n_t {
        let t = surface.t(k);
        for i in 0..=g.n_mu {
            let mu = g.mu(i);
            for j in 0..=g.n_y {
                let y = g.y(j);
                let idx = surface.idx(k, i, j);
                surface.mu_b[idx] = surface.c_b[idx] * spec.alpha_mu(t, mu, y)
                    + surface.d_b[idx] * spec.alpha_y(t, mu, y);
            }
        }
    }
}

/// Nested Monte Carlo bond price: simulate `(mu, Y)` under the pricing-measure
/// drifts from `(t, mu, y)` and average `exp(-int_t^T mu ds)`. Returns the
/// estimate and its standard error.
pub fn nested_mc_bond_price(
    spec: &ModelSpec,
    t: f64,
    mu0: f64,
    y0: f64,
    n_steps: usize,
    n_inner: usize,
    seed: u64,
) -> (f64, f64) {
    let dt = (spec.horizon - t) / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut samples = Vec::with_capacity(n_inner);
    for p in 0..n_inner {
        let mut rng = stream_rng(seed, StreamKind::NestedMc, p as u64);
        let mut mu = mu0;
        let mut y = y0;
        let mut integral = 0.0;
        for i in 0..n_steps {
            let ti = t + dt * i as f64;
            let z2: f64 = rng.sample(StandardNormal);
            let z3: f64 = rng.sample(StandardNormal);
            let drift_mu = spec.b_mu(ti, mu, y) + spec.alpha_mu(ti, mu, y);
            let sigma_mu = spec.sigma_mu(ti, mu, y);
            let drift_y = spec.b_y(ti, y) + spec.alpha_y(ti, mu, y);
            let sigma_y = spec.sigma_y(ti, y);
            let mu_next = (mu + drift_mu * dt + sigma_mu * z2 * sqrt_dt).max(0.0);
            y += drift_y * dt + sigma_y * z3 * sqrt_dt;
            integral += 0.5 * (mu + mu_next) * dt;
            mu = mu_next;
        }
        samples.push((-integral).exp());
    }
    let n = n_inner as f64;
    // Shifted two-pass variance: identical samples give exactly zero spread.
    let shift = samples[0];
    let mean_shifted = samples.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = samples
        .iter()
        .map(|v| (v - shift - mean_shifted).powi(2))
        .sum::<f64>()
        / n;
    (shift + mean_shifted, (var / n).sqrt())
}
