use std::f64::consts::PI;

use rand::Rng;

use crate::gp::{mvn_sample, CholFactor};

/// Bracket shrinks before the sampler gives up and keeps the current state.
const MAX_SHRINKS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct EssOutcome {
    pub next: Vec<f64>,
    pub log_lik: f64,
    /// likelihood evaluations spent, including the first proposal
    pub evaluations: usize,
}

/// Elliptical slice sampling update for a latent vector with prior
/// `N(0, LLᵀ)` and log-likelihood `log_lik`.
///
/// Draws an auxiliary prior vector `ν`, a level `log_lik(f) + log u`, and moves
/// along `f cos θ + ν sin θ`, shrinking the angle bracket toward θ = 0 until the
/// level is met. NaN likelihoods count as rejections.
pub fn ess_step<R, F>(current: &[f64], current_log_lik: f64, prior: &CholFactor, mut log_lik: F, rng: &mut R) -> EssOutcome
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> f64,
{
    let nu = mvn_sample(prior, rng);
    let u: f64 = rng.random();
    let level = current_log_lik + u.ln();
    let mut theta = rng.random::<f64>() * 2.0 * PI;
    let (mut lo, mut hi) = (theta - 2.0 * PI, theta);
    let mut proposal = vec![0.0; current.len()];
    let mut evaluations = 0;
    for _ in 0..MAX_SHRINKS {
        let (s, c) = theta.sin_cos();
        for ((p, &f), &n) in proposal.iter_mut().zip(current).zip(&nu) {
            *p = f * c + n * s;
        }
        let ll = log_lik(&proposal);
        evaluations += 1;
        if ll > level {
            return EssOutcome {
                next: proposal,
                log_lik: ll,
                evaluations,
            };
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + rng.random::<f64>() * (hi - lo);
    }
    EssOutcome {
        next: current.to_vec(),
        log_lik: current_log_lik,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{chol, cov_matrix, CovarianceModel};
    use crate::grid::Point;
    use crate::rng::stream_rng;

    #[test]
    fn conjugate_gaussian_posterior() {
        // prior N(0,1), likelihood N(2 | f, 1) -> posterior N(1, 0.5)
        let prior = CholFactor::identity(1);
        let ll = |f: &[f64]| -0.5 * (f[0] - 2.0).powi(2);
        let mut rng = stream_rng(21, 0);
        let mut f = vec![0.0];
        let mut l = ll(&f);
        for _ in 0..1000 {
            let o = ess_step(&f, l, &prior, ll, &mut rng);
            f = o.next;
            l = o.log_lik;
        }
        let n = 100_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let o = ess_step(&f, l, &prior, ll, &mut rng);
            f = o.next;
            l = o.log_lik;
            s1 += f[0];
            s2 += f[0] * f[0];
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // ESS on this target has integrated autocorrelation well below 5
        let se_mean = (0.5 * 5.0 / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se_mean, "mean {mean}");
        let se_var = (2.0 * 0.25 * 5.0 / n as f64).sqrt();
        assert!((var - 0.5).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn terminates_on_orthant_likelihood() {
        let pts: Vec<Point> = (0..3).map(|i| Point::new(i as f64, 0.0)).collect();
        let prior = chol(&cov_matrix(&pts, &CovarianceModel::exponential(1.0, 1.0).unwrap()).unwrap()).unwrap();
        let ll = |f: &[f64]| {
            if f.iter().all(|v| *v > 0.0) {
                0.0
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut rng = stream_rng(22, 0);
        let mut f = vec![0.3, 0.2, 0.4];
        for _ in 0..2000 {
            let o = ess_step(&f, 0.0, &prior, ll, &mut rng);
            assert!(o.next.iter().all(|v| *v > 0.0));
            f = o.next;
        }
    }

    #[test]
    fn nan_likelihood_is_rejected_not_propagated() {
        let prior = CholFactor::identity(2);
        let mut rng = stream_rng(23, 0);
        let o = ess_step(&[0.1, 0.1], 0.0, &prior, |_| f64::NAN, &mut rng);
        assert_eq!(o.next, vec![0.1, 0.1]);
    }
}
