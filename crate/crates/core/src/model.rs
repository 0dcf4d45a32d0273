//! Combined financial-insurance model: coefficient catalog, hidden-factor
//! chain, mortality function, claim payoff, and validation.
//!
//! Coefficient functions are drawn from a closed catalog of parametric
//! families rather than arbitrary code, so a scenario is fully described by a
//! serializable config and can be validated up front.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for generator row sums and distribution normalisation.
pub const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    /// A model invariant failed validation; carries the first violated check.
    #[error("model rejected: {condition} ({detail})")]
    Rejected { condition: String, detail: String },
    /// A square-root coefficient was evaluated at a negative level.
    #[error("domain error: {0}")]
    Domain(String),
}

/// One coefficient function from the closed catalog.
///
/// Families that reference "own" state (mean reversion, square-root
/// diffusions) act on the state variable the coefficient belongs to: `mu` for
/// mortality-index coefficients, `y` for factor coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum CoefFn {
    Constant {
        value: f64,
    },
    /// `intercept + slope_t*t + slope_mu*mu + slope_y*y`
    Affine {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        slope_t: f64,
        #[serde(default)]
        slope_mu: f64,
        #[serde(default)]
        slope_y: f64,
    },
    /// `rate * (y - mu)`: mean reversion of the mortality index toward the factor.
    MeanRevertToFactor { rate: f64 },
    /// `rate * (target - own)`
    MeanRevert { rate: f64, target: f64 },
    /// `scale * sqrt(max(own - floor, 0))`: CIR-style square-root form.
    SqrtOwn {
        scale: f64,
        #[serde(default)]
        floor: f64,
    },
}

impl CoefFn {
    /// Evaluate at `(t, mu, y)`; `own` is the state this coefficient acts on.
    /// Square-root arguments are truncated at zero (full truncation).
    pub fn eval(&self, t: f64, mu: f64, y: f64, own: f64) -> f64 {
        match *self {
            CoefFn::Constant { value } => value,
            CoefFn::Affine {
                intercept,
                slope_t,
                slope_mu,
                slope_y,
            } => intercept + slope_t * t + slope_mu * mu + slope_y * y,
            CoefFn::MeanRevertToFactor { rate } => rate * (y - mu),
            CoefFn::MeanRevert { rate, target } => rate * (target - own),
            CoefFn::SqrtOwn { scale, floor } => scale * (own - floor).max(0.0).sqrt(),
        }
    }

    pub fn is_sqrt(&self) -> bool {
        matches!(self, CoefFn::SqrtOwn { .. })
    }
}

/// Finite-state Markov chain for the hidden health factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub n_states: usize,
    /// Rate matrix, row-major: `generator[i][j]` is the jump rate i -> j.
    pub generator: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

impl ChainSpec {
    /// Single-state chain; makes the hidden factor degenerate.
    pub fn degenerate() -> Self {
        ChainSpec {
            n_states: 1,
            generator: vec![vec![0.0]],
            initial_dist: vec![1.0],
        }
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.generator[i][j]
    }

    /// Left action `out = rho Q` for a row vector of weights.
    pub fn apply_left(&self, rho: &[f64], out: &mut [f64]) {
        for j in 0..self.n_states {
            let mut acc = 0.0;
            for i in 0..self.n_states {
                acc += rho[i] * self.generator[i][j];
            }
            out[j] = acc;
        }
    }

    /// Transition matrix `exp(Q dt)`, row-major, by scaling and squaring.
    pub fn transition_matrix(&self, dt: f64) -> Vec<f64> {
        let n = self.n_states;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = self.generator[i][j] * dt;
            }
        }
        let norm: f64 = a.iter().map(|x| x.abs()).fold(0.0, f64::max) * n as f64;
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scale = 0.5f64.powi(squarings as i32);
        for x in a.iter_mut() {
            *x *= scale;
        }
        // Taylor series on the scaled matrix.
        let mut result = vec![0.0; n * n];
        for i in 0..n {
            result[i * n + i] = 1.0;
        }
        let mut term = result.clone();
        for k in 1..=12 {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for l in 0..n {
                    let t = term[i * n + l];
                    if t != 0.0 {
                        for j in 0..n {
                            next[i * n + j] += t * a[l * n + j];
                        }
                    }
                }
            }
            for x in next.iter_mut() {
                *x /= k as f64;
            }
            for (r, t) in result.iter_mut().zip(next.iter()) {
                *r += *t;
            }
            term = next;
        }
        for _ in 0..squarings {
            let mut sq = vec![0.0; n * n];
            for i in 0..n {
                for l in 0..n {
                    let t = result[i * n + l];
                    if t != 0.0 {
                        for j in 0..n {
                            sq[i * n + j] += t * result[l * n + j];
                        }
                    }
                }
            }
            result = sq;
        }
        // Rows of exp(Q dt) are probability vectors; clean up rounding.
        for i in 0..n {
            let row = &mut result[i * n..(i + 1) * n];
            for x in row.iter_mut() {
                *x = x.max(0.0);
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
        }
        result
    }
}

/// Mortality function of the insured, per hidden state.
///
/// The declared bounds `[lower, upper]` are enforced at evaluation by
/// clamping; raw violations fail validation unless `clip` is set, in which
/// case they only produce a warning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSpec {
    pub form: LambdaForm,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub clip: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum LambdaForm {
    /// `lambda(t, mu, z) = mu * factors[z]`
    MultiplicativeFrailty { factors: Vec<f64> },
    /// `lambda(t, mu, z) = base[z] + mu`
    AdditiveFrailty { base: Vec<f64> },
    /// `lambda(t, mu, z) = rates[z]`
    StateConstant { rates: Vec<f64> },
}

impl LambdaSpec {
    pub fn raw(&self, _t: f64, mu: f64, z: usize) -> f64 {
        match &self.form {
            LambdaForm::MultiplicativeFrailty { factors } => mu * factors[z],
            LambdaForm::AdditiveFrailty { base } => base[z] + mu,
            LambdaForm::StateConstant { rates } => rates[z],
        }
    }

    /// Clamped evaluation; the bounds assumption `a <= lambda <= b` is kept
    /// numerically true whatever the raw family returns.
    pub fn eval(&self, t: f64, mu: f64, z: usize) -> f64 {
        self.raw(t, mu, z).clamp(self.lower, self.upper)
    }

    /// Per-state intensities at `(t, mu)`, written into `out`.
    pub fn row_into(&self, t: f64, mu: f64, out: &mut [f64]) {
        for (z, slot) in out.iter_mut().enumerate() {
            *slot = self.eval(t, mu, z);
        }
    }

    pub fn row(&self, t: f64, mu: f64, n_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_states];
        self.row_into(t, mu, &mut out);
        out
    }

    /// True when the intensity does not depend on the hidden state.
    pub fn state_independent(&self) -> bool {
        let all_eq = |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
        match &self.form {
            LambdaForm::MultiplicativeFrailty { factors } => all_eq(factors),
            LambdaForm::AdditiveFrailty { base } => all_eq(base),
            LambdaForm::StateConstant { rates } => all_eq(rates),
        }
    }

    pub fn n_states(&self) -> usize {
        match &self.form {
            LambdaForm::MultiplicativeFrailty { factors } => factors.len(),
            LambdaForm::AdditiveFrailty { base } => base.len(),
            LambdaForm::StateConstant { rates } => rates.len(),
        }
    }
}

/// Claim payoff `xi = g(S1_T, S2_T, mu_T, Y_T)`, bounded by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ClaimSpec {
    Constant { value: f64 },
    /// `min((S1_T - strike)^+, cap)`
    CappedCall { strike: f64, cap: f64 },
    /// `scale * S2_T`; at maturity the bond pays the survivor index, which
    /// lies in (0, 1], so the payoff is bounded by `scale`.
    SurvivalIndexed { scale: f64 },
}

impl ClaimSpec {
    pub fn eval(&self, s1: f64, s2: f64, _mu: f64, _y: f64) -> f64 {
        match *self {
            ClaimSpec::Constant { value } => value,
            ClaimSpec::CappedCall { strike, cap } => (s1 - strike).max(0.0).min(cap),
            ClaimSpec::SurvivalIndexed { scale } => scale * s2,
        }
    }

    /// Declared bound `k` with `|xi| <= k`.
    pub fn bound(&self) -> f64 {
        match *self {
            ClaimSpec::Constant { value } => value.abs(),
            ClaimSpec::CappedCall { cap, .. } => cap,
            ClaimSpec::SurvivalIndexed { scale } => scale.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub mu_s: CoefFn,
    pub sigma_s: CoefFn,
    pub s1_0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MortalitySpec {
    pub b_mu: CoefFn,
    pub sigma_mu: CoefFn,
    pub mu_0: f64,
    pub b_y: CoefFn,
    pub sigma_y: CoefFn,
    pub y_0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskPremia {
    pub alpha_mu: CoefFn,
    pub alpha_y: CoefFn,
}

fn default_magnitude_cap() -> f64 {
    1e6
}

/// Full scenario description. Immutable after validation; evaluation is
/// stateless and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Horizon `T` in years.
    pub horizon: f64,
    pub market: MarketSpec,
    pub mortality: MortalitySpec,
    pub risk_premia: RiskPremia,
    pub chain: ChainSpec,
    pub lambda: LambdaSpec,
    pub claim: ClaimSpec,
    pub risk_aversion: f64,
    /// Guard against mis-scaled parameters: simulation aborts when any state
    /// magnitude exceeds this cap.
    #[serde(default = "default_magnitude_cap")]
    pub magnitude_cap: f64,
}

/// All model coefficients evaluated at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    pub mu_s: f64,
    pub sigma_s: f64,
    pub b_mu: f64,
    pub sigma_mu: f64,
    pub b_y: f64,
    pub sigma_y: f64,
    pub lambda: f64,
    pub alpha_mu: f64,
    pub alpha_y: f64,
}

impl ModelSpec {
    pub fn mu_s(&self, t: f64, y: f64) -> f64 {
        self.market.mu_s.eval(t, 0.0, y, y)
    }
    pub fn sigma_s(&self, t: f64, y: f64) -> f64 {
        self.market.sigma_s.eval(t, 0.0, y, y)
    }
    pub fn b_mu(&self, t: f64, mu: f64, y: f64) -> f64 {
        self.mortality.b_mu.eval(t, mu, y, mu)
    }
    pub fn sigma_mu(&self, t: f64, mu: f64, y: f64) -> f64 {
        self.mortality.sigma_mu.eval(t, mu, y, mu)
    }
    pub fn b_y(&self, t: f64, y: f64) -> f64 {
        self.mortality.b_y.eval(t, 0.0, y, y)
    }
    pub fn sigma_y(&self, t: f64, y: f64) -> f64 {
        self.mortality.sigma_y.eval(t, 0.0, y, y)
    }
    pub fn alpha_mu(&self, t: f64, mu: f64, y: f64) -> f64 {
        self.risk_premia.alpha_mu.eval(t, mu, y, mu)
    }
    pub fn alpha_y(&self, t: f64, mu: f64, y: f64) -> f64 {
        self.risk_premia.alpha_y.eval(t, mu, y, mu)
    }
}

/// Evaluate every coefficient at `(t, mu, y, z)`.
///
/// Pure: identical arguments give identical values. Errors with `Domain` when
/// a negative `mu` is fed to a square-root mortality coefficient.
pub fn eval_coefficients(
    spec: &ModelSpec,
    t: f64,
    mu: f64,
    y: f64,
    z: usize,
) -> Result<CoefficientSet, ModelError> {
    if mu < 0.0 && (spec.mortality.sigma_mu.is_sqrt() || spec.mortality.b_mu.is_sqrt()) {
        return Err(ModelError::Domain(format!(
            "mu = {mu} < 0 passed to a square-root coefficient"
        )));
    }
    Ok(CoefficientSet {
        mu_s: spec.mu_s(t, y),
        sigma_s: spec.sigma_s(t, y),
        b_mu: spec.b_mu(t, mu, y),
        sigma_mu: spec.sigma_mu(t, mu, y),
        b_y: spec.b_y(t, y),
        sigma_y: spec.sigma_y(t, y),
        lambda: spec.lambda.eval(t, mu, z),
        alpha_mu: spec.alpha_mu(t, mu, y),
        alpha_y: spec.alpha_y(t, mu, y),
    })
}

/// Uniform time grid with `t_N = T` exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_steps: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Result<Self, ModelError> {
        if n_steps < 1 {
            return Err(ModelError::Rejected {
                condition: "grid_steps".into(),
                detail: "n_steps must be >= 1".into(),
            });
        }
        if !(horizon > 0.0) {
            return Err(ModelError::Rejected {
                condition: "horizon_positive".into(),
                detail: format!("horizon = {horizon}"),
            });
        }
        Ok(TimeGrid { n_steps, horizon })
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Node time `t_i = T * (i / N)`; the ratio is computed first, so
    /// `t_N == T` exactly.
    pub fn time(&self, i: usize) -> f64 {
        self.horizon * (i as f64 / self.n_steps as f64)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.time(i)).collect()
    }
}

/// Heuristic state bounds for `(mu, y)` used by the PDE grid and the
/// validation sampler: roughly mean plus/minus six stationary standard
/// deviations for mean-reverting families, drift-plus-diffusion envelopes
/// otherwise.
pub fn state_bounds(spec: &ModelSpec) -> StateBounds {
    let t_end = spec.horizon;
    let y0 = spec.mortality.y_0;
    let mu0 = spec.mortality.mu_0;

    let (y_mean, y_spread) = envelope(
        &spec.mortality.b_y,
        &spec.mortality.sigma_y,
        y0,
        y0,
        t_end,
        None,
    );
    let (mu_mean, mu_spread) = envelope(
        &spec.mortality.b_mu,
        &spec.mortality.sigma_mu,
        mu0,
        y_mean,
        t_end,
        Some(y_spread),
    );

    let mu_lo = (mu_mean - mu_spread).min(mu0).max(0.0);
    let mu_hi = (mu_mean + mu_spread).max(mu0 * 1.5).max(mu0 + 1e-3);
    let y_lo = (y_mean - y_spread).min(y0);
    let y_hi = (y_mean + y_spread).max(y0 + 1e-3);
    StateBounds {
        mu_lo,
        mu_hi,
        y_lo,
        y_hi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBounds {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

fn envelope(
    drift: &CoefFn,
    diffusion: &CoefFn,
    x0: f64,
    factor_mean: f64,
    t_end: f64,
    factor_spread: Option<f64>,
) -> (f64, f64) {
    // Representative diffusion magnitude near the starting level.
    let sig = diffusion
        .eval(0.0, x0.max(1e-8), factor_mean, x0.max(1e-8))
        .abs();
    match *drift {
        CoefFn::MeanRevert { rate, target } if rate > 0.0 => {
            let stat = sig / (2.0 * rate).sqrt();
            (target, 6.0 * stat.max(0.05 * (target.abs() + x0.abs() + 1e-3)))
        }
        CoefFn::MeanRevertToFactor { rate } if rate > 0.0 => {
            let stat = sig / (2.0 * rate).sqrt();
            let extra = factor_spread.unwrap_or(0.0);
            (
                factor_mean,
                6.0 * stat.max(0.05 * (factor_mean.abs() + x0.abs() + 1e-3)) + extra,
            )
        }
        _ => {
            let b = drift.eval(0.0, x0, factor_mean, x0).abs();
            let spread = b * t_end + 6.0 * sig * t_end.sqrt();
            (x0, spread.max(0.5 * x0.abs() + 1e-3))
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_model`]: every check with pass/fail, never a silent
/// pass, plus non-fatal warnings (clipped lambda and similar).
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// First violated invariant as a hard error, or the report itself.
    pub fn into_result(self) -> Result<ValidationReport, ModelError> {
        if let Some(first) = self.checks.iter().find(|c| !c.passed) {
            return Err(ModelError::Rejected {
                condition: first.name.clone(),
                detail: first.detail.clone(),
            });
        }
        Ok(self)
    }
}

/// Check every structural and sampled invariant of the model on a validation
/// grid spanning the expected state range.
pub fn validate_model(spec: &ModelSpec, grid: &TimeGrid) -> ValidationReport {
    let mut report = ValidationReport::default();
    let bounds = state_bounds(spec);

    report.push(
        "horizon_positive",
        spec.horizon > 0.0,
        format!("T = {}", spec.horizon),
    );
    report.push(
        "risk_aversion_positive",
        spec.risk_aversion > 0.0,
        format!("alpha = {}", spec.risk_aversion),
    );
    report.push(
        "initial_states",
        spec.market.s1_0 > 0.0 && spec.mortality.mu_0 > 0.0,
        format!(
            "s1_0 = {}, mu_0 = {}",
            spec.market.s1_0, spec.mortality.mu_0
        ),
    );

    // Chain structure.
    let n = spec.chain.n_states;
    let mut chain_ok = n >= 1
        && spec.chain.generator.len() == n
        && spec.chain.generator.iter().all(|r| r.len() == n);
    let mut chain_detail = String::from("shape ok");
    if chain_ok {
        'rows: for (i, row) in spec.chain.generator.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if sum.abs() > SUM_TOL {
                chain_ok = false;
                chain_detail = format!("row {i} sums to {sum}");
                break 'rows;
            }
            for (j, &q) in row.iter().enumerate() {
                if i != j && q < 0.0 {
                    chain_ok = false;
                    chain_detail = format!("generator[{i}][{j}] = {q} < 0");
                    break 'rows;
                }
            }
        }
    } else {
        chain_detail = format!("generator is not {n}x{n}");
    }
    report.push("chain_generator", chain_ok, chain_detail);

    let dist_sum: f64 = spec.chain.initial_dist.iter().sum();
    let dist_ok = spec.chain.initial_dist.len() == n
        && spec.chain.initial_dist.iter().all(|&p| p >= 0.0)
        && (dist_sum - 1.0).abs() <= SUM_TOL;
    report.push(
        "initial_dist",
        dist_ok,
        format!("sum = {dist_sum}, len = {}", spec.chain.initial_dist.len()),
    );

    let lambda_states_ok = spec.lambda.n_states() == n;
    report.push(
        "lambda_states",
        lambda_states_ok,
        format!(
            "lambda has {} states, chain has {n}",
            spec.lambda.n_states()
        ),
    );

    report.push(
        "lambda_bounds_valid",
        spec.lambda.lower > 0.0 && spec.lambda.lower <= spec.lambda.upper,
        format!("[a, b] = [{}, {}]", spec.lambda.lower, spec.lambda.upper),
    );

    // Sampled checks over (t, mu, y).
    let n_t = 5usize;
    let n_s = 9usize;
    let mut sigma_s_ok = true;
    let mut sigma_s_detail = String::from("sigma_S > 0 on the sample grid");
    let mut sigma_mu_ok = true;
    let mut sigma_y_ok = true;
    let mut lambda_ok = true;
    let mut lambda_clipped = false;
    let mut lambda_detail = String::from("a <= lambda <= b on the sample grid");
    for it in 0..=n_t {
        let t = grid.horizon * it as f64 / n_t as f64;
        for is in 0..=n_s {
            let frac = is as f64 / n_s as f64;
            let mu = bounds.mu_lo + frac * (bounds.mu_hi - bounds.mu_lo);
            let y = bounds.y_lo + frac * (bounds.y_hi - bounds.y_lo);
            if spec.sigma_s(t, y) <= 0.0 {
                sigma_s_ok = false;
                sigma_s_detail = format!("sigma_S({t}, {y}) = {}", spec.sigma_s(t, y));
            }
            if spec.sigma_mu(t, mu, y) < 0.0 {
                sigma_mu_ok = false;
            }
            if spec.sigma_y(t, y) < 0.0 {
                sigma_y_ok = false;
            }
            if lambda_states_ok {
                for z in 0..n {
                    let raw = spec.lambda.raw(t, mu, z);
                    if raw < spec.lambda.lower - SUM_TOL || raw > spec.lambda.upper + SUM_TOL {
                        lambda_clipped = true;
                        if !spec.lambda.clip {
                            lambda_ok = false;
                            lambda_detail =
                                format!("raw lambda({t}, {mu}, {z}) = {raw} outside bounds");
                        }
                    }
                }
            }
        }
    }
    report.push("sigma_S_positive", sigma_s_ok, sigma_s_detail);
    report.push(
        "sigma_mu_nonneg",
        sigma_mu_ok,
        "sigma_mu >= 0 on the sample grid".into(),
    );
    report.push(
        "sigma_Y_nonneg",
        sigma_y_ok,
        "sigma_Y >= 0 on the sample grid".into(),
    );
    report.push("lambda_bounded", lambda_ok, lambda_detail);
    if lambda_clipped && spec.lambda.clip {
        report
            .warnings
            .push("raw lambda leaves [a, b] on the sample grid; values are clipped".into());
    }

    // CIR positivity: when the factor uses a shifted square-root diffusion,
    // its mean-reversion target must stay above the floor.
    if let CoefFn::SqrtOwn { floor, .. } = spec.mortality.sigma_y {
        let target_ok = match spec.mortality.b_y {
            CoefFn::MeanRevert { target, .. } => target >= floor,
            CoefFn::Constant { value } => value >= 0.0,
            _ => true,
        };
        let cir_ok = target_ok && spec.mortality.y_0 >= floor;
        report.push(
            "cir_positivity",
            cir_ok,
            format!("floor b* = {floor}, y_0 = {}", spec.mortality.y_0),
        );
    }

    // Claim bound on sampled terminal states.
    let k = spec.claim.bound();
    let mut claim_ok = true;
    let mut claim_detail = format!("|xi| <= k = {k} on sampled inputs");
    let sig_s0 = spec.sigma_s(0.0, spec.mortality.y_0).abs().max(1e-8);
    let s1_hi = spec.market.s1_0 * (6.0 * sig_s0 * spec.horizon.sqrt()).exp();
    for is in 0..=n_s {
        let frac = is as f64 / n_s as f64;
        let s1 = spec.market.s1_0 * 1e-3 + frac * s1_hi;
        let s2 = 1e-6 + frac * (1.0 - 1e-6);
        let mu = bounds.mu_lo + frac * (bounds.mu_hi - bounds.mu_lo);
        let y = bounds.y_lo + frac * (bounds.y_hi - bounds.y_lo);
        let xi = spec.claim.eval(s1, s2, mu, y);
        if xi.abs() > k + 1e-12 {
            claim_ok = false;
            claim_detail = format!("xi({s1}, {s2}, {mu}, {y}) = {xi} exceeds k = {k}");
        }
    }
    report.push("claim_bounded", claim_ok, claim_detail);

    report
}
