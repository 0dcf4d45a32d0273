//! Cross-sectional ridge regression on polynomial features of the observable
//! state: the conditional-expectation estimator behind the backward schemes
//! and the martingale diagnostic.
//!
//! Base observables are standardised per node, constant columns are dropped,
//! and features are the standardised observables with pairwise products up to
//! the configured degree. One design matrix is factorised per node and reused
//! for every regression target at that node.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("singular regression design: {0}")]
    Singular(String),
}

fn default_ridge() -> f64 {
    1e-8
}
fn default_degree() -> u8 {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionBasis {
    /// Polynomial degree over the observables (1 or 2).
    #[serde(default = "default_degree")]
    pub degree: u8,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Include the projected intensity as an observable when available.
    #[serde(default = "default_true")]
    pub include_pi_lambda: bool,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 2,
            ridge: 1e-8,
            include_pi_lambda: true,
        }
    }
}

/// Fitted design at one time node, reusable across regression targets.
pub struct NodeRegression {
    n_paths: usize,
    n_features: usize,
    /// Row-major feature matrix, `n_paths x n_features`.
    features: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    /// Condition number of the ridge-regularised normal matrix.
    pub condition: f64,
}

/// Outcome of projecting one target: fitted values per path and the R^2.
pub struct Projection {
    pub fitted: Vec<f64>,
    pub r_squared: f64,
}

impl NodeRegression {
    /// Build the design from base observable columns (each `n_paths` long).
    pub fn fit(columns: &[&[f64]], basis: &RegressionBasis) -> Result<Self, RegressionError> {
        let n_paths = columns.first().map_or(0, |c| c.len());
        assert!(columns.iter().all(|c| c.len() == n_paths));
        assert!(n_paths > 0, "regression needs at least one path");

        // Standardise and drop (numerically) constant columns.
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for col in columns {
            let mean = col.iter().sum::<f64>() / n_paths as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n_paths as f64;
            let sd = var.sqrt();
            if sd > 1e-12 && sd.is_finite() {
                kept.push(col.iter().map(|x| (x - mean) / sd).collect());
            }
        }
        let b = kept.len();
        let n_features = match basis.degree {
            0 | 1 => 1 + b,
            _ => 1 + b + b * (b + 1) / 2,
        };

        let mut features = vec![0.0; n_paths * n_features];
        for p in 0..n_paths {
            let row = &mut features[p * n_features..(p + 1) * n_features];
            row[0] = 1.0;
            for (k, col) in kept.iter().enumerate() {
                row[1 + k] = col[p];
            }
            if basis.degree >= 2 {
                let mut idx = 1 + b;
                for k in 0..b {
                    for l in k..b {
                        row[idx] = kept[k][p] * kept[l][p];
                        idx += 1;
                    }
                }
            }
        }

        // Normal matrix scaled by the path count, plus ridge.
        let mut gram = DMatrix::<f64>::zeros(n_features, n_features);
        for p in 0..n_paths {
            let row = &features[p * n_features..(p + 1) * n_features];
            for a in 0..n_features {
                let xa = row[a];
                if xa != 0.0 {
                    for c in a..n_features {
                        gram[(a, c)] += xa * row[c];
                    }
                }
            }
        }
        let inv_n = 1.0 / n_paths as f64;
        for a in 0..n_features {
            for c in a..n_features {
                let v = gram[(a, c)] * inv_n;
                gram[(a, c)] = v;
                gram[(c, a)] = v;
            }
            // The intercept is never penalised: a constant target must be
            // reproduced exactly.
            if a > 0 {
                gram[(a, a)] += basis.ridge;
            }
        }

        let eigen = gram.clone().symmetric_eigen();
        let max_ev = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min_ev = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let condition = if min_ev > 0.0 {
            max_ev / min_ev
        } else {
            f64::INFINITY
        };
        if !condition.is_finite() || condition > 1e14 {
            return Err(RegressionError::Singular(format!(
                "condition number {condition:.3e} despite ridge {}",
                basis.ridge
            )));
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            RegressionError::Singular("normal matrix is not positive definite".into())
        })?;

        Ok(NodeRegression {
            n_paths,
            n_features,
            features,
            chol,
            condition,
        })
    }

    /// Least-squares projection of `target` onto the design; `fitted` is the
    /// per-path conditional-expectation estimate.
    pub fn project(&self, target: &[f64]) -> Projection {
        assert_eq!(target.len(), self.n_paths);
        let inv_n = 1.0 / self.n_paths as f64;
        let mut xtb = nalgebra::DVector::<f64>::zeros(self.n_features);
        for p in 0..self.n_paths {
            let row = &self.features[p * self.n_features..(p + 1) * self.n_features];
            let y = target[p];
            if y != 0.0 {
                for a in 0..self.n_features {
                    xtb[a] += row[a] * y;
                }
            }
        }
        xtb *= inv_n;
        let coef = self.chol.solve(&xtb);

        let mut fitted = vec![0.0; self.n_paths];
        let mut ssr = 0.0;
        let mean_y = target.iter().sum::<f64>() * inv_n;
        let mut sst = 0.0;
        for p in 0..self.n_paths {
            let row = &self.features[p * self.n_features..(p + 1) * self.n_features];
            let mut v = 0.0;
            for a in 0..self.n_features {
                v += row[a] * coef[a];
            }
            fitted[p] = v;
            ssr += (target[p] - v).powi(2);
            sst += (target[p] - mean_y).powi(2);
        }
        let r_squared = if sst > 1e-300 { 1.0 - ssr / sst } else { 1.0 };
        Projection { fitted, r_squared }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_a_quadratic_function_exactly() {
        let n = 500;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64) * 2.0 - 1.0).collect();
        let w: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0).collect();
        let target: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(a, b)| 1.5 - 2.0 * a + 0.7 * b + 0.3 * a * b - a * a)
            .collect();
        let reg = NodeRegression::fit(&[&x, &w], &RegressionBasis::default()).unwrap();
        let proj = reg.project(&target);
        for (f, t) in proj.fitted.iter().zip(&target) {
            assert!((f - t).abs() < 1e-6, "{f} vs {t}");
        }
        assert!(proj.r_squared > 1.0 - 1e-10);
        assert!(reg.condition.is_finite());
    }

    #[test]
    fn constant_columns_reduce_to_the_mean() {
        let n = 100;
        let constant = vec![3.25; n];
        let target: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let reg = NodeRegression::fit(&[&constant], &RegressionBasis::default()).unwrap();
        let proj = reg.project(&target);
        let mean = (n as f64 - 1.0) / 2.0;
        for f in proj.fitted {
            assert!((f - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn rank_deficiency_without_ridge_is_an_error() {
        let n = 100;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let basis = RegressionBasis {
            degree: 1,
            ridge: 0.0,
            include_pi_lambda: true,
        };
        assert!(matches!(
            NodeRegression::fit(&[&x, &x], &basis),
            Err(RegressionError::Singular(_))
        ));
    }

    #[test]
    fn duplicated_columns_survive_via_ridge() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let reg = NodeRegression::fit(&[&x, &x, &x], &RegressionBasis::default()).unwrap();
        let target: Vec<f64> = x.iter().map(|a| 2.0 * a).collect();
        let proj = reg.project(&target);
        for (f, t) in proj.fitted.iter().zip(target.iter()) {
            assert!((f - t).abs() < 1e-4);
        }
    }
}
