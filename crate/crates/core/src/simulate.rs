//! Synthetic data from each model class.
//!
//! Points are placed uniformly within their cell on regular grids, matching
//! the piecewise-constant intensity the fits assume. Membership grids carry no
//! cell geometry, so their points sit at the cell representative and carry the
//! cell id.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{chol_with_scale, cov_matrix, mvn_sample, CovarianceModel};
use crate::grid::{CovariateTable, GridKind, GridSpec, PairedPattern, Point, PointPattern};
use crate::joint::{JointModel, JointParams, JointVariant};
use crate::ppm::{linear_predictor, poisson_draw, MAX_LOG_INTENSITY};
use crate::recovery::{psi_prior_factor, KernelConstant, KernelFieldHigdon, Sym2};

fn point_in_cell<R: Rng + ?Sized>(grid: &GridSpec, k: usize, rng: &mut R) -> Point {
    match grid.cell_bounds(k) {
        Some(b) => loop {
            let p = Point::new(rng.random_range(b.xmin..b.xmax), rng.random_range(b.ymin..b.ymax));
            // guard against rounding onto a neighbour's edge
            if grid.locate(&p) == Some(k) {
                return p;
            }
        },
        None => grid.cells[k].representative,
    }
}

/// Draw from a zero-mean Gaussian process at the cell representatives.
pub fn sample_field<R: Rng + ?Sized>(grid: &GridSpec, model: &CovarianceModel, rng: &mut R) -> Result<Vec<f64>> {
    let c = cov_matrix(&grid.representatives(), model)?;
    Ok(mvn_sample(&chol_with_scale(&c, model.variance())?, rng))
}

/// A simulated point pattern with the latent field and cell counts behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPattern {
    pub pattern: PointPattern,
    pub z: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Gridded NHPP (`gp = None`) or LGCP draw with `log λ = Xβ + z`.
pub fn simulate_lgcp<R: Rng + ?Sized>(
    grid: &GridSpec,
    design: &DMatrix<f64>,
    beta: &[f64],
    gp: Option<&CovarianceModel>,
    rng: &mut R,
) -> Result<SimulatedPattern> {
    if design.nrows() != grid.len() || design.ncols() != beta.len() {
        return Err(Error::Dimension(format!(
            "design is {}x{} for {} cells and {} coefficients",
            design.nrows(),
            design.ncols(),
            grid.len(),
            beta.len()
        )));
    }
    let z = match gp {
        Some(m) => sample_field(grid, m, rng)?,
        None => vec![0.0; grid.len()],
    };
    let eta = linear_predictor(design, beta);
    let mut counts = Vec::with_capacity(grid.len());
    let mut points = Vec::new();
    let mut cell_ids = Vec::new();
    for (k, cell) in grid.cells.iter().enumerate() {
        let l = eta[k] + z[k];
        if l > MAX_LOG_INTENSITY {
            return Err(Error::Overflow { cell: k, log_intensity: l });
        }
        let n = poisson_draw(l.exp() * cell.std_area, rng)?;
        counts.push(n);
        for _ in 0..n {
            points.push(point_in_cell(grid, k, rng));
            cell_ids.push(k);
        }
    }
    let mut pattern = PointPattern::new(points, "simulated")?;
    if matches!(grid.kind, GridKind::Membership) {
        pattern.cell_ids = Some(cell_ids);
    }
    Ok(SimulatedPattern { pattern, z, counts })
}

/// Kernel used to generate recoveries.
#[derive(Debug, Clone, PartialEq)]
pub enum RecoveryKernel {
    Constant(KernelConstant),
    /// Each theft uses the kernel at its nearest anchor.
    Field(KernelFieldHigdon),
}

impl RecoveryKernel {
    fn sigma_at(&self, p: &Point) -> Sym2 {
        match self {
            Self::Constant(k) => k.sigma(),
            Self::Field(f) => {
                let mut best = (0, f64::INFINITY);
                for (i, a) in f.anchors.iter().enumerate() {
                    let d = a.dist2(p);
                    if d < best.1 {
                        best = (i, d);
                    }
                }
                f.sigma_at(best.0)
            }
        }
    }
}

/// Recover each theft with probability `recovery_prob` at `s_T + N(0, Σ(s_T)/2)`.
pub fn simulate_recoveries<R: Rng + ?Sized>(
    thefts: &PointPattern,
    kernel: &RecoveryKernel,
    recovery_prob: f64,
    rng: &mut R,
) -> Result<PairedPattern> {
    if !(recovery_prob > 0.0 && recovery_prob <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "recovery probability must be in (0, 1], got {recovery_prob}"
        )));
    }
    if let RecoveryKernel::Field(f) = kernel {
        if f.anchors.is_empty() || f.psi_x.len() != f.anchors.len() || f.psi_y.len() != f.anchors.len() {
            return Err(Error::Dimension("kernel field anchors and psi values disagree".into()));
        }
    }
    let mut recoveries = Vec::with_capacity(thefts.len());
    for t in &thefts.points {
        if rng.random_bool(recovery_prob) {
            let (l11, l21, l22) = kernel.sigma_at(t).scaled(0.5).cholesky()?;
            let e1: f64 = rng.sample(rand_distr::StandardNormal);
            let e2: f64 = rng.sample(rand_distr::StandardNormal);
            recoveries.push(Some(Point::new(t.x + l11 * e1, t.y + l21 * e1 + l22 * e2)));
        } else {
            recoveries.push(None);
        }
    }
    let ids = (0..thefts.len()).map(|i| i.to_string()).collect();
    PairedPattern::new(ids, thefts.points.clone(), recoveries)
}

/// Draw a kernel field with `ψx, ψy` from their squared-exponential prior at `anchors`.
pub fn sample_kernel_field<R: Rng + ?Sized>(
    anchors: Vec<Point>,
    sigma: f64,
    spec: &crate::recovery::SpatialKernelSpec,
    rng: &mut R,
) -> Result<KernelFieldHigdon> {
    let f = psi_prior_factor(&anchors, spec)?;
    Ok(KernelFieldHigdon {
        sigma,
        a: spec.a,
        phi_star: spec.phi_star,
        psi_x: mvn_sample(&f, rng),
        psi_y: mvn_sample(&f, rng),
        anchors,
    })
}

/// Generating values of the joint model's scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointTruth {
    pub beta0: f64,
    pub beta_r: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub eta: f64,
    pub sigma2_r: f64,
    pub phi_r: f64,
    pub sigma2_t: f64,
    pub phi_t: f64,
}

impl Default for JointTruth {
    fn default() -> Self {
        Self {
            beta0: 8.0,
            beta_r: vec![],
            beta_t: vec![],
            eta: -0.05,
            sigma2_r: 0.5,
            phi_r: 1.0,
            sigma2_t: 0.5,
            phi_t: 1.0,
        }
    }
}

/// Joint parameters with `z_R, z_T` (and `ψ` for the dependent variant) drawn from their priors.
pub fn sample_joint_params<R: Rng + ?Sized>(model: &JointModel, truth: &JointTruth, rng: &mut R) -> Result<JointParams> {
    let field = |s2: f64, phi: f64, rng: &mut R| -> Result<Vec<f64>> {
        let m = CovarianceModel::exponential(s2, phi)?;
        Ok(mvn_sample(&chol_with_scale(&cov_matrix(&model.reps, &m)?, s2)?, rng))
    };
    let z_r = field(truth.sigma2_r, truth.phi_r, rng)?;
    let z_t = field(truth.sigma2_t, truth.phi_t, rng)?;
    let psi = match model.spec.variant {
        JointVariant::Dep => {
            let f = psi_prior_factor(&model.reps, &model.spec.kernel)?;
            Some((mvn_sample(&f, rng), mvn_sample(&f, rng)))
        }
        JointVariant::Ind => None,
    };
    Ok(JointParams {
        beta0: truth.beta0,
        beta_r: truth.beta_r.clone(),
        beta_t: truth.beta_t.clone(),
        eta: if model.spec.variant == JointVariant::Dep { truth.eta } else { 0.0 },
        z_r,
        z_t,
        psi,
    })
}

/// Independent `Poisson(λ(u_k, u_k') Δ_k Δ_k')` pair counts with endpoints placed in their cells.
pub fn simulate_joint<R: Rng + ?Sized>(
    grid: &GridSpec,
    model: &JointModel,
    params: &JointParams,
    rng: &mut R,
) -> Result<PairedPattern> {
    if model.k() != grid.len() {
        return Err(Error::Dimension(format!("model has {} cells, grid {}", model.k(), grid.len())));
    }
    let k = grid.len();
    let log_lambda = model.log_intensity(params)?;
    let (mut thefts, mut recoveries) = (Vec::new(), Vec::new());
    for kt in 0..k {
        for kr in 0..k {
            let l = log_lambda[kt * k + kr];
            if l > MAX_LOG_INTENSITY {
                return Err(Error::Overflow {
                    cell: kt * k + kr,
                    log_intensity: l,
                });
            }
            let n = poisson_draw(l.exp() * model.areas[kr] * model.areas[kt], rng)?;
            for _ in 0..n {
                thefts.push(point_in_cell(grid, kt, rng));
                recoveries.push(point_in_cell(grid, kr, rng));
            }
        }
    }
    PairedPattern::complete(thefts, recoveries)
}

/// Smooth standardized covariates: squared-exponential fields with range a
/// quarter of the bounding-box diagonal.
pub fn synthetic_covariates<R: Rng + ?Sized>(grid: &GridSpec, names: &[String], rng: &mut R) -> Result<CovariateTable> {
    let diag = grid.bbox.width().hypot(grid.bbox.height());
    let range = 0.25 * diag;
    let model = CovarianceModel::squared_exponential(1.0 / (range * range))?;
    let k = grid.len();
    let mut values = DMatrix::zeros(k, names.len());
    for j in 0..names.len() {
        let f = sample_field(grid, &model, rng)?;
        values.set_column(j, &nalgebra::DVector::from_vec(f));
    }
    CovariateTable::new(names.to_vec(), values)?.standardize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{assign_counts, BBox};
    use crate::joint::{pair_counts, JointModelSpec};
    use crate::rng::stream_rng;

    fn unit(n: usize) -> GridSpec {
        GridSpec::regular(BBox::new(0.0, 1.0, 0.0, 1.0).unwrap(), n, n).unwrap()
    }

    #[test]
    fn nhpp_mean_count_and_placement() {
        let g = unit(5);
        let x = DMatrix::from_element(25, 1, 1.0);
        let mut total = 0u64;
        for r in 0..200 {
            let s = simulate_lgcp(&g, &x, &[100f64.ln()], None, &mut stream_rng(r, 1)).unwrap();
            assert_eq!(assign_counts(&s.pattern, &g).unwrap(), s.counts);
            total += s.pattern.len() as u64;
        }
        // mean of 200 Poisson(100): sd 0.71
        assert!((total as f64 / 200.0 - 100.0).abs() < 3.0);
        let empty = simulate_lgcp(&g, &x, &[-40.0], None, &mut stream_rng(1, 1)).unwrap();
        assert!(empty.pattern.is_empty());
    }

    #[test]
    fn lgcp_is_overdispersed() {
        let g = unit(3);
        let x = DMatrix::from_element(9, 1, 1.0);
        let gp = CovarianceModel::exponential(1.0, 1.0).unwrap();
        let mu = 10.0;
        let b0 = (mu * 9.0f64).ln();
        let counts: Vec<f64> = (0..200)
            .map(|r| simulate_lgcp(&g, &x, &[b0], Some(&gp), &mut stream_rng(r, 1)).unwrap().counts[4] as f64)
            .collect();
        let m = counts.iter().sum::<f64>() / 200.0;
        let v = counts.iter().map(|c| (c - m).powi(2)).sum::<f64>() / 199.0;
        // oracle: Var N = μ' + μ'^2 (e^{σ²} − 1) with μ' = μ e^{σ²/2}
        let mu1 = mu * 0.5f64.exp();
        let want = mu1 + mu1 * mu1 * (1f64.exp() - 1.0);
        assert!(v > m, "{v} vs {m}");
        assert!(v > 0.3 * want && v < 3.0 * want, "{v} vs {want}");
    }

    #[test]
    fn recoveries_follow_half_kernel() {
        let pts: Vec<Point> = (0..10_000).map(|i| Point::new(i as f64 * 1e-3, 0.0)).collect();
        let thefts = PointPattern::new(pts, "t").unwrap();
        let k = KernelConstant::new(2.0, 1.0, 0.5).unwrap();
        let pairs = simulate_recoveries(&thefts, &RecoveryKernel::Constant(k), 1.0, &mut stream_rng(3, 1)).unwrap();
        let d: Vec<(f64, f64)> = pairs.complete_pairs().iter().map(|(t, r)| (r.x - t.x, r.y - t.y)).collect();
        let n = d.len() as f64;
        let cxx = d.iter().map(|v| v.0 * v.0).sum::<f64>() / n;
        let cxy = d.iter().map(|v| v.0 * v.1).sum::<f64>() / n;
        let cyy = d.iter().map(|v| v.1 * v.1).sum::<f64>() / n;
        let s = k.sigma().scaled(0.5);
        assert!((cxx / s.xx - 1.0).abs() < 0.1 && (cyy / s.yy - 1.0).abs() < 0.1 && (cxy / s.xy - 1.0).abs() < 0.1);

        let tiny = RecoveryKernel::Constant(KernelConstant::new(1e-4, 1e-4, 0.0).unwrap());
        let close = simulate_recoveries(&thefts, &tiny, 1.0, &mut stream_rng(3, 1)).unwrap();
        assert!(close.complete_pairs().iter().all(|(t, r)| t.dist(r) < 1e-3));
        let some = simulate_recoveries(&thefts, &tiny, 0.1, &mut stream_rng(4, 1)).unwrap();
        let m = some.complete_indices().len() as f64;
        assert!((m - 1000.0).abs() < 4.0 * 30.0);
    }

    #[test]
    fn joint_single_cell_and_shrinking_distance() {
        let one = unit(1);
        let model = JointModel::new(&one, None, &JointModelSpec::new(JointVariant::Ind)).unwrap();
        let pairs = simulate_joint(&one, &model, &JointParams::constant(4.0, 1), &mut stream_rng(1, 1)).unwrap();
        assert_eq!(pair_counts(&pairs, &one).unwrap().total() as usize, pairs.len());

        let g = GridSpec::regular(BBox::new(0.0, 10.0, 0.0, 10.0).unwrap(), 6, 6).unwrap();
        let dep = JointModel::new(&g, None, &JointModelSpec::new(JointVariant::Dep)).unwrap();
        let mean_dist = |eta: f64| {
            let p = JointParams {
                eta,
                psi: Some((vec![0.0; 36], vec![0.0; 36])),
                ..JointParams::constant(8.0, 36)
            };
            let pr = simulate_joint(&g, &dep, &p, &mut stream_rng(2, 1)).unwrap();
            let c = pr.complete_pairs();
            c.iter().map(|(t, r)| t.dist(r)).sum::<f64>() / c.len() as f64
        };
        assert!(mean_dist(-0.05) < mean_dist(0.0));
    }

    #[test]
    fn generators_are_deterministic() {
        let g = unit(4);
        let names = vec!["a".to_string(), "b".to_string()];
        let a = synthetic_covariates(&g, &names, &mut stream_rng(9, 1)).unwrap();
        let b = synthetic_covariates(&g, &names, &mut stream_rng(9, 1)).unwrap();
        assert_eq!(a.values, b.values);
    }
}
