use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SubjectTable;
use crate::error::{Error, Result};

pub const MAX_NEWTON_ITERATIONS: usize = 100;
/// Convergence threshold on `max_j |Σ (t_i − p_i) x_ij|`.
pub const SCORE_TOLERANCE: f64 = 1e-8;

/// Logistic regression of treatment on covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub covariate_names: Vec<String>,
    /// Intercept first, then one slope per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_score_residual: f64,
    pub log_likelihood: f64,
}

impl PropensityModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic(self.linear_predictor(x))
    }

    /// Scores for every subject of `t`, in table order.
    pub fn scores(&self, t: &SubjectTable) -> Result<Vec<f64>> {
        if t.covariate_names() != self.covariate_names.as_slice() {
            return Err(Error::invalid("propensity model covariates do not match the table"));
        }
        Ok((0..t.len()).map(|i| self.predict(t.row(i))).collect())
    }
}

fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

struct Design {
    x: DMatrix<f64>,
    t: DVector<f64>,
}

impl Design {
    fn eta(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    fn log_lik(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .zip(self.t.iter())
            .map(|(&e, &t)| t * e - softplus(e))
            .sum()
    }

    fn score(&self, eta: &DVector<f64>) -> DVector<f64> {
        let resid = DVector::from_iterator(
            eta.len(),
            eta.iter().zip(self.t.iter()).map(|(&e, &t)| t - logistic(e)),
        );
        self.x.tr_mul(&resid)
    }

    fn information(&self, eta: &DVector<f64>) -> DMatrix<f64> {
        let mut xw = self.x.clone();
        for (i, &e) in eta.iter().enumerate() {
            let p = logistic(e);
            let w = p * (1.0 - p);
            xw.row_mut(i).scale_mut(w);
        }
        self.x.tr_mul(&xw)
    }

    fn separates(&self, eta: &DVector<f64>) -> bool {
        eta.iter()
            .zip(self.t.iter())
            .all(|(&e, &t)| if t > 0.5 { e > 0.0 } else { e < 0.0 })
    }
}

/// Maximum-likelihood logistic fit by damped Newton iterations.
///
/// The step is halved until the log-likelihood does not decrease. When the
/// iteration cap is reached the model is returned with `converged = false`.
/// Complete separation is an error.
pub fn fit_propensity(t: &SubjectTable) -> Result<PropensityModel> {
    let n = t.len();
    let p = t.covariate_names().len() + 1;
    if n < p {
        return Err(Error::invalid(format!(
            "propensity fit needs at least {p} subjects, found {n}"
        )));
    }
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { t.row(i)[j - 1] });
    let d = Design {
        x,
        t: DVector::from_iterator(n, t.treated().iter().map(|&b| if b { 1.0 } else { 0.0 })),
    };
    check_full_rank(&d.x)?;

    let frac = d.t.sum() / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = (frac / (1.0 - frac)).ln();
    let mut eta = d.eta(&beta);
    let mut ll = d.log_lik(&eta);
    let mut score = d.score(&eta);
    let mut iterations = 0;

    while score.amax() >= SCORE_TOLERANCE && iterations < MAX_NEWTON_ITERATIONS {
        if ll > -1e-6 && d.separates(&eta) {
            return Err(separation());
        }
        iterations += 1;
        let info = d.information(&eta);
        let step = match info.clone().cholesky() {
            Some(c) => c.solve(&score),
            None => match info.lu().solve(&score) {
                Some(s) => s,
                None if d.separates(&eta) => return Err(separation()),
                None => return Err(Error::Numeric("singular information matrix".into())),
            },
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &step * scale;
            let cand_eta = d.eta(&cand);
            let cand_ll = d.log_lik(&cand_eta);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        score = d.score(&eta);
        if !accepted {
            break;
        }
    }
    if ll > -1e-6 && d.separates(&eta) {
        return Err(separation());
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Numeric("propensity coefficients diverged".into()));
    }
    let max_score_residual = score.amax();
    Ok(PropensityModel {
        covariate_names: t.covariate_names().to_vec(),
        coefficients: beta.iter().copied().collect(),
        converged: max_score_residual < SCORE_TOLERANCE,
        iterations,
        max_score_residual,
        log_likelihood: ll,
    })
}

fn separation() -> Error {
    Error::Separation(
        "treatment is perfectly predicted by the covariates; the propensity model has no \
         finite maximum. Match exactly on the separating covariates without a propensity caliper"
            .into(),
    )
}

/// Rejects constant covariates (collinear with the intercept) and exactly
/// collinear sets, judged on column-standardized data.
fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let mut z = x.clone();
    for j in 0..z.ncols() {
        let norm = z.column(j).norm();
        if norm > 0.0 {
            z.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    let sv = z.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 1e-10 * max) {
        return Err(Error::invalid(
            "covariates are constant or collinear; drop redundant columns before fitting",
        ));
    }
    Ok(())
}
