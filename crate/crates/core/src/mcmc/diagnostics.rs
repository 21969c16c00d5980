use serde::{Deserialize, Serialize};

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// Inefficiency factor `1 + 2 Σ ρ̂_t` (Geyer initial positive sequence).
    pub inefficiency: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (divisor n−1; zero for a single value).
pub fn sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return if n == 1 { 0.0 } else { f64::NAN };
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics
/// (position `q·(n−1)` in the sorted sample).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Lag-`t` autocorrelation with the biased (divisor n) estimator.
fn autocorrelation(xs: &[f64], m: f64, c0: f64, t: usize) -> f64 {
    let n = xs.len();
    let c: f64 = xs[..n - t]
        .iter()
        .zip(&xs[t..])
        .map(|(a, b)| (a - m) * (b - m))
        .sum::<f64>()
        / n as f64;
    c / c0
}

/// Integrated autocorrelation time `1 + 2 Σ_t ρ̂_t`, truncated where Geyer's
/// pair sums `ρ̂_{2k} + ρ̂_{2k+1}` stop being positive.
pub fn inefficiency_factor(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 1.0;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        return 1.0;
    }
    // Γ_k = ρ_{2k} + ρ_{2k+1}; tau = −1 + 2 Σ Γ_k
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = autocorrelation(xs, m, c0, 2 * k) + autocorrelation(xs, m, c0, 2 * k + 1);
        if gamma <= 0.0 {
            break;
        }
        tau += 2.0 * gamma;
        k += 1;
    }
    tau.max(1.0 / n as f64)
}

pub fn summarize(name: &str, xs: &[f64]) -> ParamSummary {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    ParamSummary {
        name: name.to_string(),
        mean: mean(xs),
        sd: sd(xs),
        q025: quantile_sorted(&sorted, 0.025),
        q50: quantile_sorted(&sorted, 0.5),
        q975: quantile_sorted(&sorted, 0.975),
        inefficiency: inefficiency_factor(xs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quantiles_interpolate() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_eq!(quantile(&xs, 0.5), 2.5);
        assert!((quantile(&xs, 0.05) - 1.15).abs() < 1e-12);
    }

    #[test]
    fn iid_chain_has_unit_inefficiency() {
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.sample(StandardNormal)).collect();
        let f = inefficiency_factor(&xs);
        assert!((f - 1.0).abs() < 0.15, "{f}");
    }

    #[test]
    fn ar1_inefficiency_matches_theory() {
        // AR(1) with coefficient a has IAT (1+a)/(1−a)
        let a: f64 = 0.8;
        let mut rng = stream_rng(6, 0);
        let mut x = 0.0;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                x = a * x + (1.0 - a * a).sqrt() * rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let f = inefficiency_factor(&xs);
        assert!((f - 9.0).abs() < 1.0, "{f}");
    }
}
