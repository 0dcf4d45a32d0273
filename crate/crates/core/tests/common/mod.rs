//! Shared scenario builders and independent oracles for the integration
//! suites.

#![allow(dead_code)]

use endow_core::model::{
    ChainSpec, ClaimSpec, CoefFn, LambdaForm, LambdaSpec, MarketSpec, ModelSpec, MortalitySpec,
    RiskPremia,
};

/// Deterministic benchmark: flat coefficients, vol-less mortality (so the
/// bond is flat), constant intensity. `premium = muS / sigmaS`.
pub fn det_benchmark(premium: f64, lambda0: f64, xi: f64, alpha: f64) -> ModelSpec {
    ModelSpec {
        horizon: 1.0,
        market: MarketSpec {
            mu_s: CoefFn::Constant {
                value: premium * 0.2,
            },
            sigma_s: CoefFn::Constant { value: 0.2 },
            s1_0: 1.0,
        },
        mortality: MortalitySpec {
            b_mu: CoefFn::Constant { value: 0.0 },
            sigma_mu: CoefFn::Constant { value: 0.0 },
            mu_0: 0.02,
            b_y: CoefFn::Constant { value: 0.0 },
            sigma_y: CoefFn::Constant { value: 0.0 },
            y_0: 0.03,
        },
        risk_premia: RiskPremia {
            alpha_mu: CoefFn::Constant { value: 0.0 },
            alpha_y: CoefFn::Constant { value: 0.0 },
        },
        chain: ChainSpec::degenerate(),
        lambda: LambdaSpec {
            form: LambdaForm::StateConstant {
                rates: vec![lambda0],
            },
            lower: (lambda0 * 0.1).max(1e-9),
            upper: lambda0.max(1.0),
            clip: true,
        },
        claim: ClaimSpec::Constant { value: xi },
        risk_aversion: alpha,
        magnitude_cap: 1e6,
    }
}

/// Benchmark with a live longevity bond but still deterministic drivers:
/// CIR mortality (stochastic), flat factor, constant mortality premium, and
/// a state-constant intensity. The bond premium ratio collapses to
/// `alpha_mu^2` pointwise.
pub fn bond_benchmark(premium: f64, alpha_mu: f64, lambda0: f64, xi: f64, alpha: f64) -> ModelSpec {
    let mut spec = det_benchmark(premium, lambda0, xi, alpha);
    spec.mortality.b_mu = CoefFn::MeanRevertToFactor { rate: 0.5 };
    spec.mortality.sigma_mu = CoefFn::SqrtOwn {
        scale: 0.08,
        floor: 0.0,
    };
    spec.risk_premia.alpha_mu = CoefFn::Constant { value: alpha_mu };
    spec
}

/// Full-featured scenario: CIR mortality coupled to a mean-reverting factor,
/// a two-state hidden chain with multiplicative frailty, nonzero premia.
pub fn hidden_chain_scenario(xi: f64, alpha: f64) -> ModelSpec {
    ModelSpec {
        horizon: 1.0,
        market: MarketSpec {
            mu_s: CoefFn::Affine {
                intercept: 0.04,
                slope_t: 0.0,
                slope_mu: 0.0,
                slope_y: 0.5,
            },
            sigma_s: CoefFn::Constant { value: 0.2 },
            s1_0: 1.0,
        },
        mortality: MortalitySpec {
            b_mu: CoefFn::MeanRevertToFactor { rate: 0.5 },
            sigma_mu: CoefFn::SqrtOwn {
                scale: 0.08,
                floor: 0.0,
            },
            mu_0: 0.02,
            b_y: CoefFn::MeanRevert {
                rate: 0.3,
                target: 0.03,
            },
            sigma_y: CoefFn::Constant { value: 0.01 },
            y_0: 0.03,
        },
        risk_premia: RiskPremia {
            alpha_mu: CoefFn::Constant { value: 0.05 },
            alpha_y: CoefFn::Constant { value: -0.02 },
        },
        chain: ChainSpec {
            n_states: 2,
            generator: vec![vec![-0.4, 0.4], vec![0.6, -0.6]],
            initial_dist: vec![0.5, 0.5],
        },
        lambda: LambdaSpec {
            form: LambdaForm::MultiplicativeFrailty {
                factors: vec![0.8, 1.3],
            },
            lower: 1e-4,
            upper: 1.0,
            clip: true,
        },
        claim: ClaimSpec::Constant { value: xi },
        risk_aversion: alpha,
        magnitude_cap: 1e6,
    }
}

/// Zero-coupon survival price for the affine mortality model with
/// pricing-measure drift `p - q mu` and diffusion `sigma sqrt(mu)`:
/// `F(t, mu) = A(t) exp(-B(t) mu)` with the Riccati pair
/// `B' = q B + sigma^2 B^2 / 2 - 1`, `(ln A)' = p B`, terminal `B(T) = 0`,
/// `A(T) = 1`, integrated backward by RK4.
pub fn riccati_bond_price(
    p: f64,
    q: f64,
    sigma: f64,
    t: f64,
    horizon: f64,
    mu: f64,
    n_steps: usize,
) -> f64 {
    let h = (t - horizon) / n_steps as f64; // negative step: backward
    let deriv = |state: (f64, f64)| -> (f64, f64) {
        let (b, _ln_a) = state;
        (q * b + 0.5 * sigma * sigma * b * b - 1.0, p * b)
    };
    let mut state = (0.0, 0.0);
    for _ in 0..n_steps {
        let k1 = deriv(state);
        let k2 = deriv((state.0 + 0.5 * h * k1.0, state.1 + 0.5 * h * k1.1));
        let k3 = deriv((state.0 + 0.5 * h * k2.0, state.1 + 0.5 * h * k2.1));
        let k4 = deriv((state.0 + h * k3.0, state.1 + h * k3.1));
        state = (
            state.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
            state.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        );
    }
    let (b, ln_a) = state;
    (ln_a - b * mu).exp()
}

/// Closed form for the deterministic claim benchmark:
/// `U_t - U0_t = ln(1 + (e^{alpha k} - 1) e^{-lambda (T - t)})`.
pub fn closed_form_excess(alpha: f64, k: f64, lambda0: f64, ttm: f64) -> f64 {
    (1.0 + ((alpha * k).exp() - 1.0) * (-lambda0 * ttm).exp()).ln()
}

/// Finite-difference solution of the one-factor semilinear value equation
/// `u_t + b(mu) u_mu + sigma(mu)^2/2 u_mumu + (e^{-u} - 1) lambda(mu) = 0`
/// with terminal value `alpha k`: the Markovian claim log-value when market
/// premia vanish, the bond is flat, and the intensity reads only `mu`.
/// Implicit in the linear operator, explicit in the reaction, linear
/// extrapolation ghosts at the boundaries.
pub struct Semilinear1d {
    pub horizon: f64,
    pub mu_hi: f64,
    pub n_t: usize,
    pub n_mu: usize,
    /// Time-major values, `(n_t + 1) x (n_mu + 1)`.
    pub values: Vec<f64>,
}

impl Semilinear1d {
    pub fn solve(
        b: impl Fn(f64) -> f64,
        sigma: impl Fn(f64) -> f64,
        lambda: impl Fn(f64) -> f64,
        alpha_k: f64,
        horizon: f64,
        mu_hi: f64,
        n_mu: usize,
        n_t: usize,
    ) -> Self {
        let h = mu_hi / n_mu as f64;
        let dt = horizon / n_t as f64;
        let mut values = vec![alpha_k; (n_t + 1) * (n_mu + 1)];
        let mut current = vec![alpha_k; n_mu + 1];
        let mut rhs = vec![0.0; n_mu + 1];
        let mut sub = vec![0.0; n_mu + 1];
        let mut diag = vec![0.0; n_mu + 1];
        let mut sup = vec![0.0; n_mu + 1];
        let mut scratch = vec![0.0; n_mu + 1];

        for k in (0..n_t).rev() {
            for i in 0..=n_mu {
                let mu = h * i as f64;
                let reaction = ((-current[i]).exp() - 1.0) * lambda(mu);
                rhs[i] = current[i] + dt * reaction;
                let drift = b(mu);
                let half_var = 0.5 * sigma(mu) * sigma(mu);
                let (lo, mid, hi) = if i == 0 {
                    (0.0, -drift / h, drift / h)
                } else if i == n_mu {
                    (-drift / h, drift / h, 0.0)
                } else {
                    (
                        -drift / (2.0 * h) + half_var / (h * h),
                        -2.0 * half_var / (h * h),
                        drift / (2.0 * h) + half_var / (h * h),
                    )
                };
                sub[i] = -dt * lo;
                diag[i] = 1.0 - dt * mid;
                sup[i] = -dt * hi;
            }
            // Thomas solve.
            let mut beta = diag[0];
            rhs[0] /= beta;
            for i in 1..=n_mu {
                scratch[i] = sup[i - 1] / beta;
                beta = diag[i] - sub[i] * scratch[i];
                rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
            }
            for i in (0..n_mu).rev() {
                rhs[i] -= scratch[i + 1] * rhs[i + 1];
            }
            current.copy_from_slice(&rhs);
            values[k * (n_mu + 1)..(k + 1) * (n_mu + 1)].copy_from_slice(&current);
        }
        Semilinear1d {
            horizon,
            mu_hi,
            n_t,
            n_mu,
            values,
        }
    }

    pub fn value(&self, t: f64, mu: f64) -> f64 {
        let ft = (t / self.horizon * self.n_t as f64).clamp(0.0, self.n_t as f64);
        let fm = (mu / self.mu_hi * self.n_mu as f64).clamp(0.0, self.n_mu as f64);
        let k0 = (ft.floor() as usize).min(self.n_t - 1);
        let i0 = (fm.floor() as usize).min(self.n_mu - 1);
        let (wk, wi) = (ft - k0 as f64, fm - i0 as f64);
        let at = |k: usize, i: usize| self.values[k * (self.n_mu + 1) + i];
        (1.0 - wk) * ((1.0 - wi) * at(k0, i0) + wi * at(k0, i0 + 1))
            + wk * ((1.0 - wi) * at(k0 + 1, i0) + wi * at(k0 + 1, i0 + 1))
    }
}
