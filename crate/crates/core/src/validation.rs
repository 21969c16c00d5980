//! Out-of-sample assessment of intensity fits by p-thinning.
//!
//! Retaining each point independently with probability `p` splits a Poisson
//! process with intensity `λ` into independent training and test processes with
//! intensities `pλ` and `(1−p)λ`. A fit to the training pattern estimates `pλ`,
//! so test-set predictions scale it by `(1−p)/p`.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{assign_counts, GridSpec, PointPattern};
use crate::mcmc::diagnostics::quantile_sorted;
use crate::mcmc::PosteriorChain;
use crate::ppm::{draw_intensity, sample_predictive_counts, thinning_scale};
use nalgebra::DMatrix;

/// Minimum number of predictive draws for interval coverage.
pub const MIN_PIC_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct ThinSplit {
    pub train: PointPattern,
    pub test: PointPattern,
    pub p: f64,
    /// Original index of each training point.
    pub train_index: Vec<usize>,
    pub test_index: Vec<usize>,
}

/// Keep each point in the training set with probability `p`, independently.
pub fn p_thin<R: Rng + ?Sized>(pattern: &PointPattern, p: f64, rng: &mut R) -> Result<ThinSplit> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("retention probability must be in (0, 1), got {p}")));
    }
    let (mut train_index, mut test_index) = (Vec::new(), Vec::new());
    for i in 0..pattern.len() {
        if rng.random_bool(p) {
            train_index.push(i);
        } else {
            test_index.push(i);
        }
    }
    Ok(ThinSplit {
        train: pattern.select(&train_index),
        test: pattern.select(&test_index),
        p,
        train_index,
        test_index,
    })
}

/// Size of each evaluation region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSize {
    /// `w` cells per region.
    Cells(usize),
    /// `⌈qK⌉` cells per region.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRegions {
    pub sets: Vec<Vec<usize>>,
    pub size: RegionSize,
}

impl EvalRegions {
    /// Count of `cell_counts` inside each region.
    pub fn totals(&self, cell_counts: &[u64]) -> Vec<u64> {
        self.sets.iter().map(|s| s.iter().map(|&c| cell_counts[c]).sum()).collect()
    }
}

/// `count` regions, each a uniform draw of distinct cells; regions may overlap.
pub fn random_blocks<R: Rng + ?Sized>(grid: &GridSpec, size: RegionSize, count: usize, rng: &mut R) -> Result<EvalRegions> {
    let k = grid.len();
    let w = match size {
        RegionSize::Cells(w) if w >= 1 && w <= k => w,
        RegionSize::Fraction(q) if q > 0.0 && q < 1.0 => ((q * k as f64).ceil() as usize).clamp(1, k),
        _ => return Err(Error::InvalidArgument(format!("region size {size:?} is invalid for {k} cells"))),
    };
    let sets = (0..count)
        .map(|_| {
            let mut s = sample(rng, k, w).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    Ok(EvalRegions { sets, size })
}

/// Fraction of regions whose central `nominal` interval of residuals
/// `test − predictive` contains 0. `predictive[r]` holds the draws for region `r`.
pub fn pic(predictive: &[Vec<u64>], test: &[u64], nominal: f64) -> Result<f64> {
    if predictive.len() != test.len() {
        return Err(Error::Dimension(format!(
            "{} predictive regions for {} test counts",
            predictive.len(),
            test.len()
        )));
    }
    if !(nominal > 0.0 && nominal < 1.0) {
        return Err(Error::InvalidArgument(format!("nominal level must be in (0, 1), got {nominal}")));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("no evaluation regions".into()));
    }
    let tail = 0.5 * (1.0 - nominal);
    let mut covered = 0usize;
    for (draws, &obs) in predictive.iter().zip(test) {
        if draws.len() < MIN_PIC_DRAWS {
            return Err(Error::InvalidArgument(format!(
                "interval coverage needs at least {MIN_PIC_DRAWS} draws (got {})",
                draws.len()
            )));
        }
        let mut res: Vec<f64> = draws.iter().map(|&n| obs as f64 - n as f64).collect();
        res.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&res, tail), quantile_sorted(&res, 1.0 - tail));
        if lo <= 0.0 && 0.0 <= hi {
            covered += 1;
        }
    }
    Ok(covered as f64 / test.len() as f64)
}

/// Monte Carlo ranked probability score of count draws against `observed`
/// (0 for an empty sample).
pub fn rps(samples: &[u64], observed: u64) -> f64 {
    let l = samples.len();
    if l == 0 {
        return 0.0;
    }
    let lf = l as f64;
    let first = samples.iter().map(|&n| (n as f64 - observed as f64).abs()).sum::<f64>() / lf;
    let mut sorted: Vec<f64> = samples.iter().map(|&n| n as f64).collect();
    sorted.sort_by(f64::total_cmp);
    // Σ_i Σ_j |x_i − x_j| = 2 Σ_i (2i − L + 1) x_(i), 0-based order statistics
    let pair: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * i as f64 - lf + 1.0) * x)
        .sum::<f64>()
        * 2.0;
    (first - pair / (2.0 * lf * lf)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationConfig {
    pub p: f64,
    pub widths: Vec<usize>,
    pub regions_per_width: usize,
    pub nominal: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            p: 0.5,
            widths: (1..=10).collect(),
            regions_per_width: 100,
            nominal: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthScore {
    pub w: usize,
    pub pic: f64,
    pub rps_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p: f64,
    pub nominal: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub draws: usize,
    pub scores: Vec<WidthScore>,
}

/// Predictive test counts per cell, one vector per posterior draw.
pub fn predictive_cell_counts<R: Rng + ?Sized>(
    chain: &PosteriorChain,
    design: &DMatrix<f64>,
    grid: &GridSpec,
    p: f64,
    rng: &mut R,
) -> Result<Vec<Vec<u64>>> {
    let scale = thinning_scale(p);
    (0..chain.len())
        .map(|i| sample_predictive_counts(&draw_intensity(chain, i, design)?, grid, scale, rng))
        .collect()
}

/// PIC and summed RPS over random regions of each width, for a chain fitted
/// to `split.train`.
pub fn score_split<R: Rng + ?Sized>(
    chain: &PosteriorChain,
    design: &DMatrix<f64>,
    grid: &GridSpec,
    split: &ThinSplit,
    config: &ValidationConfig,
    rng: &mut R,
) -> Result<ValidationReport> {
    let test_cells = assign_counts(&split.test, grid)?;
    let pred = predictive_cell_counts(chain, design, grid, split.p, rng)?;
    let mut scores = Vec::with_capacity(config.widths.len());
    for &w in &config.widths {
        let regions = random_blocks(grid, RegionSize::Cells(w), config.regions_per_width, rng)?;
        let test = regions.totals(&test_cells);
        let per_region: Vec<Vec<u64>> = (0..regions.sets.len())
            .map(|r| pred.iter().map(|d| regions.sets[r].iter().map(|&c| d[c]).sum()).collect())
            .collect();
        scores.push(WidthScore {
            w,
            pic: pic(&per_region, &test, config.nominal)?,
            rps_sum: per_region.iter().zip(&test).map(|(s, &o)| rps(s, o)).sum(),
        });
    }
    Ok(ValidationReport {
        p: split.p,
        nominal: config.nominal,
        n_train: split.train.len(),
        n_test: split.test.len(),
        draws: chain.len(),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BBox, Point};
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, Poisson};

    fn pattern(n: usize) -> PointPattern {
        let pts = (0..n).map(|i| Point::new((i % 97) as f64 / 97.0, (i % 89) as f64 / 89.0)).collect();
        PointPattern::new(pts, "r").unwrap()
    }

    #[test]
    fn thinning_sizes_and_determinism() {
        let pat = pattern(4000);
        let s = p_thin(&pat, 0.5, &mut stream_rng(1, 2)).unwrap();
        assert_eq!(s.train.len() + s.test.len(), 4000);
        assert!((s.train.len() as f64 - 2000.0).abs() <= 3.0 * 1000f64.sqrt());
        let again = p_thin(&pat, 0.5, &mut stream_rng(1, 2)).unwrap();
        assert_eq!(s.train_index, again.train_index);
        let near_one = p_thin(&pattern(100), 1.0 - 1e-12, &mut stream_rng(3, 2)).unwrap();
        assert!(near_one.test.is_empty());
        assert!(p_thin(&pat, 1.0, &mut stream_rng(1, 2)).is_err());
    }

    #[test]
    fn block_sizes() {
        let g = GridSpec::regular(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), 5, 61).unwrap();
        let mut rng = stream_rng(2, 2);
        let r = random_blocks(&g, RegionSize::Fraction(0.1), 4, &mut rng).unwrap();
        assert!(r.sets.iter().all(|s| s.len() == 31));
        let all = random_blocks(&g, RegionSize::Cells(305), 2, &mut rng).unwrap();
        assert!(all.sets.iter().all(|s| *s == (0..305).collect::<Vec<_>>()));
        let small = GridSpec::regular(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), 4, 17).unwrap();
        let ones = random_blocks(&small, RegionSize::Cells(1), 10, &mut rng).unwrap();
        assert_eq!(ones.sets.len(), 10);
        assert!(ones.sets.iter().all(|s| s.len() == 1 && s[0] < 68));
        assert!(random_blocks(&small, RegionSize::Cells(69), 1, &mut rng).is_err());
    }

    #[test]
    fn rps_hand_values() {
        assert_abs_diff_eq!(rps(&[7], 3), 4.0);
        assert_abs_diff_eq!(rps(&[0, 2], 1), 0.5);
    }

    #[test]
    fn rps_sort_identity_matches_double_sum() {
        let mut rng = stream_rng(5, 0);
        for _ in 0..20 {
            let l = rng.random_range(1..300);
            let s: Vec<u64> = (0..l).map(|_| rng.random_range(0..50)).collect();
            let obs = rng.random_range(0..50);
            let lf = l as f64;
            let first: f64 = s.iter().map(|&n| (n as f64 - obs as f64).abs()).sum::<f64>() / lf;
            let mut dbl = 0.0;
            for &a in &s {
                for &b in &s {
                    dbl += (a as f64 - b as f64).abs();
                }
            }
            assert_abs_diff_eq!(rps(&s, obs), first - dbl / (2.0 * lf * lf), epsilon = 1e-10);
        }
    }

    #[test]
    fn rps_matches_exact_poisson_crps() {
        let mut rng = stream_rng(6, 0);
        let d = Poisson::new(5.0).unwrap();
        let s: Vec<u64> = (0..10_000).map(|_| d.sample(&mut rng) as u64).collect();
        // oracle: CRPS = Σ_n (F(n) − 1{n ≥ y})² over a truncated support
        let mut cdf = 0.0;
        let mut pmf = (-5f64).exp();
        let mut exact = 0.0;
        for n in 0..200u64 {
            cdf += pmf;
            let step = if n >= 5 { 1.0 } else { 0.0 };
            exact += (cdf - step).powi(2);
            pmf *= 5.0 / (n + 1) as f64;
        }
        assert_abs_diff_eq!(rps(&s, 5), exact, epsilon = 1e-2);
    }

    #[test]
    fn pic_edge_cases() {
        let pred = vec![vec![4u64; 100]; 3];
        assert_eq!(pic(&pred, &[4, 4, 4], 0.9).unwrap(), 1.0);
        assert!(pic(&[vec![1u64; 99]], &[1], 0.9).is_err());
    }

    #[test]
    fn pic_calibrated_and_widening_helps() {
        let mut rng = stream_rng(7, 0);
        let mut pred = vec![];
        let mut wide = vec![];
        let mut test = vec![];
        let mut inflated = vec![];
        for r in 0..200 {
            let mu = 2.0 + (r % 13) as f64;
            let d = Poisson::new(mu).unwrap();
            pred.push((0..400).map(|_| d.sample(&mut rng) as u64).collect::<Vec<_>>());
            wide.push(
                (0..400)
                    .map(|_| {
                        let m: f64 = Poisson::new(mu).unwrap().sample(&mut rng);
                        (m * 2.0 - mu).max(0.0).round() as u64
                    })
                    .collect::<Vec<_>>(),
            );
            let big = Poisson::new(10.0 * mu).unwrap();
            inflated.push((0..400).map(|_| big.sample(&mut rng) as u64).collect::<Vec<_>>());
            test.push(d.sample(&mut rng) as u64);
        }
        let c = pic(&pred, &test, 0.9).unwrap();
        assert!((c - 0.9).abs() <= 0.07, "{c}");
        assert!(pic(&wide, &test, 0.9).unwrap() >= c);
        assert!(pic(&inflated, &test, 0.9).unwrap() < 0.3);
    }
}
