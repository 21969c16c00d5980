//! Covariate selection: Poisson regression on grid counts and stepwise BIC search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::grid::{CovariateTable, INTERCEPT};

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_DEVIANCE_TOL: f64 = 1e-10;
pub const SCORE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    /// true when the MLE is at infinity (e.g. all counts zero)
    pub boundary: bool,
    pub iterations: usize,
}

fn poisson_loglik(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&y, &e)| {
            let mut v = -e.exp();
            if y != 0.0 {
                v += y * e;
            }
            v - ln_factorial(y as u64)
        })
        .sum()
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| if y > 0.0 { y * (y / m).ln() - (y - m) } else { m })
        .sum::<f64>()
}

/// Log-linear Poisson regression `log E[y_k] = X_k β + offset_k` by
/// iteratively reweighted least squares.
pub fn poisson_glm(counts: &[f64], x: &DMatrix<f64>, offset: &[f64]) -> Result<GlmFit> {
    let (k, p) = (x.nrows(), x.ncols());
    if counts.len() != k || offset.len() != k {
        return Err(Error::Dimension(format!(
            "glm: {} counts, {} offsets, {k} design rows",
            counts.len(),
            offset.len()
        )));
    }
    if p == 0 || p >= k {
        return Err(Error::Glm(format!("glm needs 0 < p < K (p = {p}, K = {k})")));
    }
    if counts.iter().any(|c| *c < 0.0 || !c.is_finite() || c.fract() != 0.0) {
        return Err(Error::Glm("counts must be nonnegative integers".into()));
    }
    let sv = x.clone().svd(false, false).singular_values;
    let (smax, smin) = sv.iter().fold((0.0_f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if !(smin > 1e-10 * smax) {
        return Err(Error::Glm("design matrix is rank deficient".into()));
    }

    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        // MLE diverges to −∞ along the intercept direction
        return Ok(GlmFit {
            coefficients: vec![f64::NEG_INFINITY; p],
            log_likelihood: 0.0,
            converged: false,
            boundary: true,
            iterations: 0,
        });
    }

    let mut mu: Vec<f64> = counts.iter().map(|y| y + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = DVector::zeros(p);
    let mut dev_old = deviance(counts, &mu);
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=IRLS_MAX_ITER {
        iterations = it;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for i in 0..k {
            let w = mu[i];
            let zi = eta[i] - offset[i] + (counts[i] - mu[i]) / mu[i];
            let row = x.row(i);
            for a in 0..p {
                xtwz[a] += w * row[a] * zi;
                for b in 0..=a {
                    xtwx[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(b, a)] = xtwx[(a, b)];
            }
        }
        let chol = xtwx
            .cholesky()
            .ok_or_else(|| Error::Glm(format!("weighted normal equations singular at iteration {it}")))?;
        beta = chol.solve(&xtwz);
        let xb = x * &beta;
        for i in 0..k {
            eta[i] = xb[i] + offset[i];
            mu[i] = eta[i].exp();
        }
        if mu.iter().any(|m| !m.is_finite() || *m == 0.0) {
            break;
        }
        let dev = deviance(counts, &mu);
        let score_max = (0..p)
            .map(|a| {
                x.column(a)
                    .iter()
                    .zip(counts.iter().zip(&mu))
                    .map(|(xa, (y, m))| xa * (y - m))
                    .sum::<f64>()
                    .abs()
            })
            .fold(0.0, f64::max);
        let rel = (dev - dev_old).abs() / (dev.abs() + 0.1);
        dev_old = dev;
        if rel < IRLS_DEVIANCE_TOL && score_max <= SCORE_TOL {
            converged = true;
            break;
        }
    }
    let boundary = beta.iter().any(|b| b.abs() > 30.0) && !converged;
    Ok(GlmFit {
        coefficients: beta.iter().copied().collect(),
        log_likelihood: poisson_loglik(counts, &eta),
        converged,
        boundary,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Start,
    Add,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMove {
    pub kind: MoveKind,
    pub column: Option<String>,
    pub bic: f64,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseResult {
    /// Selected covariates, excluding the intercept, in table order.
    pub selected: Vec<String>,
    pub fit: GlmFit,
    pub trace: Vec<StepMove>,
    pub n_points: f64,
}

pub fn bic(fit: &GlmFit, n_params: usize, n_points: f64) -> f64 {
    -2.0 * fit.log_likelihood + n_params as f64 * n_points.ln()
}

/// Forward-backward stepwise search from the intercept-only model. Every
/// accepted move strictly lowers `−2 log L + |model| log n` with `n = Σ n_k`;
/// ties go to the first candidate in column order.
pub fn stepwise_bic(counts: &[f64], table: &CovariateTable, offset: &[f64]) -> Result<StepwiseResult> {
    let table = table.with_intercept();
    let n_points: f64 = counts.iter().sum();
    if !(n_points > 1.0) {
        return Err(Error::Glm(format!("stepwise selection needs more than one point (n = {n_points})")));
    }
    let candidates: Vec<usize> = (0..table.ncols()).filter(|&j| table.names[j] != INTERCEPT).collect();
    let intercept = table.column_index(INTERCEPT)?;

    let fit_set = |set: &[usize]| -> Result<(GlmFit, f64)> {
        let mut cols = vec![intercept];
        cols.extend(set.iter().copied());
        let x = table.values.select_columns(cols.iter());
        let fit = poisson_glm(counts, &x, offset)?;
        if !fit.converged {
            return Err(Error::Glm(format!(
                "glm did not converge for columns {:?}",
                cols.iter().map(|&c| &table.names[c]).collect::<Vec<_>>()
            )));
        }
        let b = bic(&fit, cols.len(), n_points);
        Ok((fit, b))
    };
    let names_of = |set: &[usize]| -> Vec<String> { set.iter().map(|&j| table.names[j].clone()).collect() };

    let mut current: Vec<usize> = Vec::new();
    let (mut fit, mut score) = fit_set(&current)?;
    let mut trace = vec![StepMove {
        kind: MoveKind::Start,
        column: None,
        bic: score,
        columns: vec![],
    }];

    loop {
        let moves: Vec<(MoveKind, usize, Vec<usize>)> = candidates
            .iter()
            .map(|&j| {
                if current.contains(&j) {
                    (MoveKind::Drop, j, current.iter().copied().filter(|&c| c != j).collect())
                } else {
                    let mut s = current.clone();
                    s.push(j);
                    s.sort_unstable();
                    (MoveKind::Add, j, s)
                }
            })
            .collect();
        let results: Vec<Result<(GlmFit, f64)>> = moves.par_iter().map(|(_, _, s)| fit_set(s)).collect();
        let mut best: Option<(usize, GlmFit, f64)> = None;
        for (i, r) in results.into_iter().enumerate() {
            let (f, b) = r?;
            if b < score && best.as_ref().is_none_or(|(_, _, bb)| b < *bb) {
                best = Some((i, f, b));
            }
        }
        let Some((i, f, b)) = best else { break };
        let (kind, j, set) = moves[i].clone();
        current = set;
        fit = f;
        score = b;
        trace.push(StepMove {
            kind,
            column: Some(table.names[j].clone()),
            bic: b,
            columns: names_of(&current),
        });
    }

    Ok(StepwiseResult {
        selected: names_of(&current),
        fit,
        trace,
        n_points,
    })
}
