//! `odpp` command-line driver: one workflow per invocation, artifacts plus a
//! `manifest.json` in `--out-dir`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use odpp::config::{AnchorMode, KernelChoice, RunConfig, SimulateKind};
use odpp::gp::CovarianceModel;
use odpp::grid::{assign_counts, CovariateTable, GridSpec, PairedPattern, Point, PointPattern, INTERCEPT};
use odpp::io::{
    read_chain_jsonl, read_covariates, read_json, read_pairs, read_partition, read_points, write_chain_jsonl,
    write_covariates, write_flow, write_json, write_pairs, write_points, write_rows, write_surface,
};
use odpp::joint::{
    fit_joint, flow_proportions, pair_counts, JointModel, JointModelSpec, Partition, MIN_INFORMATIVE_PAIRS,
};
use odpp::mcmc::{ChainConfig, PosteriorChain};
use odpp::ppm::{fit_intensity, posterior_intensity, IntensityModelSpec};
use odpp::recovery::{
    fit_conditional_constant, fit_conditional_spatial, holdout_pairs, predict_recovery, AnchorChoice, AnchorSet,
    HoldoutRule, KernelConstant, RecoveryModel, SpatialKernelSpec,
};
use odpp::rng::{stream_rng, STREAM_PREDICT, STREAM_SIMULATE, STREAM_SPLIT};
use odpp::select::stepwise_bic;
use odpp::simulate::{
    sample_joint_params, sample_kernel_field, simulate_joint, simulate_lgcp, simulate_recoveries,
    synthetic_covariates, RecoveryKernel,
};
use odpp::validation::{p_thin, score_split};
use odpp::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "odpp", version, about = "Bayesian models for paired origin-destination point patterns")]
struct Cli {
    /// Run configuration (TOML). Every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set mcmc.keep=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate thefts, pairs, or joint pairs with covariates and a truth record.
    Simulate,
    /// Stepwise BIC selection of theft-intensity covariates.
    SelectCovariates,
    /// Fit the NHPP or LGCP theft intensity.
    FitTheft,
    /// p-thinning validation of the theft intensity model.
    Validate,
    /// Fit the conditional recovery kernel on a random split of the pairs.
    FitConditional,
    /// Score held-out pairs under a fitted conditional model.
    PredictRecovery {
        /// Output directory of `fit-conditional` (default: `--out-dir`).
        #[arg(long)]
        fit_dir: Option<PathBuf>,
    },
    /// Fit the joint theft-recovery intensity.
    FitJoint,
    /// Flow proportions from an origin set under a fitted joint model.
    PredictFlow {
        /// Output directory of `fit-joint` (default: `--out-dir`).
        #[arg(long)]
        fit_dir: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::SelectCovariates => "select-covariates",
            Command::FitTheft => "fit-theft",
            Command::Validate => "validate",
            Command::FitConditional => "fit-conditional",
            Command::PredictRecovery { .. } => "predict-recovery",
            Command::FitJoint => "fit-joint",
            Command::PredictFlow { .. } => "predict-flow",
        }
    }
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Effective config plus bookkeeping of the files a command reads and writes.
struct Run {
    cfg: RunConfig,
    out: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(path.to_path_buf())
    }

    fn required(&mut self, path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        match path {
            Some(p) => self.input(p),
            None => Err(Error::Config(format!("`{key}` is required for this command"))),
        }
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn chain_config(&self) -> ChainConfig {
        ChainConfig::new(self.cfg.mcmc.burn_in, self.cfg.mcmc.keep, self.cfg.seed)
    }

    /// Covariates from `data.covariates`, standardized if configured.
    fn covariates(&mut self, k: usize) -> Result<Option<CovariateTable>> {
        let Some(path) = self.cfg.data.covariates.clone() else {
            return Ok(None);
        };
        let table = read_covariates(&self.input(&path)?, k)?;
        Ok(Some(if self.cfg.theft.standardize { table.standardize()? } else { table }))
    }

    fn finish(self, command: &str) -> Result<()> {
        let config_toml = self.cfg.to_toml();
        let config_path = self.out.join("config.toml");
        fs::write(&config_path, &config_toml).map_err(|e| Error::Io {
            path: config_path.display().to_string(),
            source: e,
        })?;
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for name in &self.outputs {
            outputs.push(FileDigest {
                path: name.clone(),
                sha256: sha256_file(&self.out.join(name))?,
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.cfg.seed,
            config_sha256: hex::encode(Sha256::digest(config_toml.as_bytes())),
            inputs: self.inputs,
            outputs,
        };
        write_json(&self.out.join("manifest.json"), &manifest)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(&cli.out_dir).map_err(|e| Error::Io {
        path: cli.out_dir.display().to_string(),
        source: e,
    })?;
    let mut run = Run {
        cfg,
        out: cli.out_dir.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Some(p) = cli.config.as_deref() {
        run.input(p)?;
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Simulate => simulate(&mut run)?,
        Command::SelectCovariates => select_covariates(&mut run)?,
        Command::FitTheft => fit_theft(&mut run)?,
        Command::Validate => validate(&mut run)?,
        Command::FitConditional => fit_conditional(&mut run)?,
        Command::PredictRecovery { fit_dir } => {
            let dir = fit_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
            predict_recovery_cmd(&mut run, &dir)?
        }
        Command::FitJoint => fit_joint_cmd(&mut run)?,
        Command::PredictFlow { fit_dir } => {
            let dir = fit_dir.clone().unwrap_or_else(|| cli.out_dir.clone());
            predict_flow(&mut run, &dir)?
        }
    }
    run.finish(name)
}

fn joint_spec(cfg: &RunConfig) -> JointModelSpec {
    let j = &cfg.joint;
    let mut spec = JointModelSpec::new(j.variant);
    spec.covariates_r = j.covariates_r.clone();
    spec.covariates_t = j.covariates_t.clone();
    spec.priors = j.priors;
    spec.kernel = SpatialKernelSpec {
        phi_star: j.phi_star,
        a: cfg.conditional.a,
    };
    spec.kernel_sigma = j.kernel_sigma;
    spec
}

fn simulate(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let s = &cfg.simulate;
    let grid = cfg.build_grid(None)?;
    let mut rng = stream_rng(cfg.seed, STREAM_SIMULATE);
    let table = synthetic_covariates(&grid, &s.covariates, &mut rng)?;
    write_covariates(&run.output("covariates.csv"), &table)?;
    let truth = match s.kind {
        SimulateKind::Theft | SimulateKind::Pairs => {
            let mut cols = vec![INTERCEPT.to_string()];
            cols.extend(s.covariates.iter().cloned());
            let design = table.with_intercept().design(&cols)?;
            let gp = s.gp.map(|[v, d]| CovarianceModel::exponential(v, d)).transpose()?;
            let sim = simulate_lgcp(&grid, &design, &s.beta, gp.as_ref(), &mut rng)?;
            write_points(&run.output("points.csv"), &sim.pattern)?;
            let mut truth = json!({
                "kind": s.kind,
                "covariates": s.covariates,
                "beta": s.beta,
                "gp": s.gp,
                "n_points": sim.pattern.len(),
                "z": sim.z,
            });
            if s.kind == SimulateKind::Pairs {
                let (kernel, kernel_truth) = match s.kernel {
                    KernelChoice::Constant => {
                        let [s1, s2, rho] = s.kernel_constant;
                        let k = KernelConstant::new(s1, s2, rho)?;
                        (RecoveryKernel::Constant(k), json!({"kind": "constant", "sigma1": s1, "sigma2": s2, "rho": rho}))
                    }
                    KernelChoice::Spatial => {
                        let spec = SpatialKernelSpec {
                            phi_star: cfg.conditional.phi_star,
                            a: cfg.conditional.a,
                        };
                        let f = sample_kernel_field(grid.representatives(), s.kernel_sigma, &spec, &mut rng)?;
                        let t = json!({
                            "kind": "spatial",
                            "sigma": f.sigma,
                            "a": f.a,
                            "phi_star": f.phi_star,
                            "anchors": f.anchors,
                            "psi_x": f.psi_x,
                            "psi_y": f.psi_y,
                        });
                        (RecoveryKernel::Field(f), t)
                    }
                };
                let pairs = simulate_recoveries(&sim.pattern, &kernel, s.recovery_prob, &mut rng)?;
                write_pairs(&run.output("pairs.csv"), &pairs)?;
                truth["recovery_prob"] = json!(s.recovery_prob);
                truth["n_recovered"] = json!(pairs.complete_indices().len());
                truth["kernel"] = kernel_truth;
            }
            truth
        }
        SimulateKind::Joint => {
            let spec = joint_spec(&cfg);
            let model = JointModel::new(&grid, Some(&table), &spec)?;
            let params = sample_joint_params(&model, &s.joint, &mut rng)?;
            let pairs = simulate_joint(&grid, &model, &params, &mut rng)?;
            write_pairs(&run.output("pairs.csv"), &pairs)?;
            write_points(&run.output("points.csv"), &pairs.theft_pattern())?;
            json!({
                "kind": s.kind,
                "variant": spec.variant,
                "params": s.joint,
                "kernel_sigma": spec.kernel_sigma,
                "n_pairs": pairs.len(),
                "z_R": params.z_r,
                "z_T": params.z_t,
                "psi": params.psi,
            })
        }
    };
    write_json(&run.output("truth.json"), &truth)
}

/// Theft points, analysis grid, and covariate table (intercept-only when none is given).
fn theft_inputs(run: &mut Run) -> Result<(PointPattern, GridSpec, CovariateTable)> {
    let points = run.required(&run.cfg.data.points.clone(), "data.points")?;
    let pattern = read_points(&points, run.cfg.units)?;
    let grid = run.cfg.build_grid(Some(&pattern))?;
    let table = run
        .covariates(grid.len())?
        .unwrap_or_else(|| CovariateTable::intercept_only(grid.len()));
    Ok((pattern, grid, table))
}

fn log_areas(grid: &GridSpec) -> Vec<f64> {
    grid.std_areas().iter().map(|a| a.ln()).collect()
}

/// Configured covariates, or a stepwise BIC selection on `pattern` (written to `selection.json`).
fn theft_covariates(run: &mut Run, pattern: &PointPattern, grid: &GridSpec, table: &CovariateTable) -> Result<Vec<String>> {
    if let Some(c) = &run.cfg.theft.covariates {
        return Ok(c.clone());
    }
    if table.names.iter().all(|n| n == INTERCEPT) {
        return Ok(vec![]);
    }
    let counts: Vec<f64> = assign_counts(pattern, grid)?.into_iter().map(|c| c as f64).collect();
    let sel = stepwise_bic(&counts, table, &log_areas(grid))?;
    write_json(&run.output("selection.json"), &sel)?;
    Ok(sel.selected)
}

fn select_covariates(run: &mut Run) -> Result<()> {
    let (pattern, grid, table) = theft_inputs(run)?;
    let counts: Vec<f64> = assign_counts(&pattern, &grid)?.into_iter().map(|c| c as f64).collect();
    let sel = stepwise_bic(&counts, &table, &log_areas(&grid))?;
    write_json(&run.output("selection.json"), &sel)
}

fn chain_summary(chain: &PosteriorChain) -> serde_json::Value {
    json!({
        "draws": chain.len(),
        "burn_in": chain.burn_in,
        "seed": chain.seed,
        "params": chain.summaries(),
        "acceptance": chain.acceptance,
        "ess_evaluations": chain.ess_evaluations,
    })
}

fn fit_theft(run: &mut Run) -> Result<()> {
    let (pattern, grid, table) = theft_inputs(run)?;
    let covariates = theft_covariates(run, &pattern, &grid, &table)?;
    let mut spec = IntensityModelSpec::new(run.cfg.theft.model, covariates);
    spec.priors = run.cfg.theft.priors;
    let chain = fit_intensity(&pattern, &grid, &table, &spec, &run.chain_config())?;
    write_chain_jsonl(&run.output("chain.jsonl"), &chain)?;
    write_surface(&run.output("surface.csv"), &posterior_intensity(&chain, &spec.design(&table)?)?)?;
    write_json(
        &run.output("summary.json"),
        &json!({
            "model": spec.kind,
            "covariates": spec.covariates,
            "n_points": pattern.len(),
            "cells": grid.len(),
            "chain": chain_summary(&chain),
        }),
    )
}

fn validate(run: &mut Run) -> Result<()> {
    let (pattern, grid, table) = theft_inputs(run)?;
    let v = run.cfg.validate.clone();
    let split = p_thin(&pattern, v.p, &mut stream_rng(run.cfg.seed, STREAM_SPLIT))?;
    // covariates are chosen on the training points only
    let covariates = theft_covariates(run, &split.train, &grid, &table)?;
    let mut spec = IntensityModelSpec::new(run.cfg.theft.model, covariates);
    spec.priors = run.cfg.theft.priors;
    let chain = fit_intensity(&split.train, &grid, &table, &spec, &run.chain_config())?;
    let report = score_split(
        &chain,
        &spec.design(&table)?,
        &grid,
        &split,
        &v,
        &mut stream_rng(run.cfg.seed, STREAM_PREDICT),
    )?;
    let rows: Vec<Vec<String>> = report
        .scores
        .iter()
        .map(|s| vec![s.w.to_string(), s.pic.to_string(), s.rps_sum.to_string()])
        .collect();
    write_rows(&run.output("validation_scores.csv"), &["w", "pic", "rps_sum"], &rows)?;
    write_json(
        &run.output("validation.json"),
        &json!({
            "model": spec.kind,
            "covariates": spec.covariates,
            "report": report,
        }),
    )
}

/// What `predict-recovery` needs to rebuild the fitted conditional model.
#[derive(Debug, Serialize, Deserialize)]
struct ConditionalModelFile {
    kernel: KernelChoice,
    phi_star: f64,
    a: f64,
    anchors: Vec<Point>,
    grid_anchored: bool,
}

impl ConditionalModelFile {
    fn model(&self) -> RecoveryModel {
        match self.kernel {
            KernelChoice::Constant => RecoveryModel::Constant,
            KernelChoice::Spatial => RecoveryModel::Spatial {
                spec: SpatialKernelSpec {
                    phi_star: self.phi_star,
                    a: self.a,
                },
                anchors: AnchorSet {
                    points: self.anchors.clone(),
                    grid_anchored: self.grid_anchored,
                },
            },
        }
    }
}

fn fit_conditional(run: &mut Run) -> Result<()> {
    let path = run.required(&run.cfg.data.pairs.clone(), "data.pairs")?;
    let pairs = read_pairs(&path, run.cfg.units)?;
    let c = run.cfg.conditional.clone();
    let m = pairs.complete_indices().len();
    let rule = c.holdout.unwrap_or_else(|| HoldoutRule::default_for(m));
    let (train, test) = holdout_pairs(&pairs, rule, &mut stream_rng(run.cfg.seed, STREAM_SPLIT))?;
    write_pairs(&run.output("train_pairs.csv"), &train)?;
    write_pairs(&run.output("test_pairs.csv"), &test)?;
    let cc = run.chain_config();
    let (chain, file) = match c.kernel {
        KernelChoice::Constant => (
            fit_conditional_constant(&train, &c.priors, &cc)?,
            ConditionalModelFile {
                kernel: c.kernel,
                phi_star: c.phi_star,
                a: c.a,
                anchors: vec![],
                grid_anchored: false,
            },
        ),
        KernelChoice::Spatial => {
            let spec = SpatialKernelSpec {
                phi_star: c.phi_star,
                a: c.a,
            };
            let choice = match c.anchors {
                AnchorMode::Points => AnchorChoice::TheftPoints,
                AnchorMode::Grid => AnchorChoice::Grid(run.cfg.build_grid(Some(&train.theft_pattern()))?),
                AnchorMode::Auto => AnchorChoice::Auto {
                    grid: run.cfg.build_grid(Some(&train.theft_pattern()))?,
                    threshold: c.grid_threshold,
                },
            };
            let anchors = AnchorSet::build(&train, &choice)?;
            let chain = fit_conditional_spatial(&train, &spec, &c.priors, &anchors, &cc)?;
            let file = ConditionalModelFile {
                kernel: c.kernel,
                phi_star: c.phi_star,
                a: c.a,
                anchors: anchors.points,
                grid_anchored: anchors.grid_anchored,
            };
            (chain, file)
        }
    };
    write_chain_jsonl(&run.output("conditional_chain.jsonl"), &chain)?;
    write_json(&run.output("conditional_model.json"), &file)?;
    write_json(
        &run.output("conditional_summary.json"),
        &json!({
            "kernel": c.kernel,
            "holdout": rule,
            "n_train": train.complete_indices().len(),
            "n_test": test.complete_indices().len(),
            "anchors": file.anchors.len(),
            "grid_anchored": file.grid_anchored,
            "chain": chain_summary(&chain),
        }),
    )
}

fn predict_recovery_cmd(run: &mut Run, fit_dir: &Path) -> Result<()> {
    let file: ConditionalModelFile = read_json(&run.input(&fit_dir.join("conditional_model.json"))?)?;
    let chain = read_chain_jsonl(&run.input(&fit_dir.join("conditional_chain.jsonl"))?)?;
    // fit-conditional writes coordinates in kilometres already
    let test = read_pairs(&run.input(&fit_dir.join("test_pairs.csv"))?, odpp::io::Units::Km)?;
    let idx = test.complete_indices();
    let thefts: Vec<Point> = idx.iter().map(|&i| test.thefts[i]).collect();
    let observed: Vec<Point> = idx.iter().map(|&i| test.recoveries[i].expect("complete pair")).collect();
    let preds = predict_recovery(
        &chain,
        &file.model(),
        &thefts,
        &mut stream_rng(run.cfg.seed, STREAM_PREDICT),
    )?;
    let scores: Vec<(f64, f64)> = preds
        .par_iter()
        .zip(&observed)
        .map(|(p, o)| (p.crps(o), p.log_density(o)))
        .collect();
    let rows: Vec<Vec<String>> = idx
        .iter()
        .zip(&thefts)
        .zip(&observed)
        .zip(&scores)
        .map(|(((&i, t), o), (crps, ld))| {
            vec![
                test.ids[i].clone(),
                t.x.to_string(),
                t.y.to_string(),
                o.x.to_string(),
                o.y.to_string(),
                crps.to_string(),
                ld.to_string(),
            ]
        })
        .collect();
    write_rows(
        &run.output("recovery_scores.csv"),
        &["id", "theft_x", "theft_y", "recovery_x", "recovery_y", "bicrps", "log_density"],
        &rows,
    )?;
    let n = scores.len().max(1) as f64;
    write_json(
        &run.output("recovery_summary.json"),
        &json!({
            "kernel": file.kernel,
            "n_test": scores.len(),
            "mean_bicrps": scores.iter().map(|s| s.0).sum::<f64>() / n,
            "mean_log_density": scores.iter().map(|s| s.1).sum::<f64>() / n,
        }),
    )?;

    let cells = run.cfg.conditional.density_cells;
    if cells > 0 {
        let half = run.cfg.conditional.density_halfwidth;
        for (&i, p) in idx.iter().zip(&preds) {
            // window scaled by the largest posterior-mean kernel axis
            let big = p.sigmas.iter().map(|s| s.eigen().0).sum::<f64>() / p.sigmas.len().max(1) as f64;
            let r = half * big.sqrt().max(f64::MIN_POSITIVE);
            let bbox = odpp::grid::BBox::new(p.theft.x - r, p.theft.x + r, p.theft.y - r, p.theft.y + r)?;
            let g = GridSpec::regular(bbox, cells, cells)?;
            let dens = p.density_on(&g);
            let rows: Vec<Vec<String>> = g
                .cells
                .iter()
                .zip(&dens)
                .map(|(c, d)| vec![c.representative.x.to_string(), c.representative.y.to_string(), d.to_string()])
                .collect();
            let name = format!("density_{}.csv", sanitize(&test.ids[i]));
            write_rows(&run.output(&name), &["x", "y", "density"], &rows)?;
        }
    }
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn fit_joint_cmd(run: &mut Run) -> Result<()> {
    let path = run.required(&run.cfg.data.pairs.clone(), "data.pairs")?;
    let pairs = read_pairs(&path, run.cfg.units)?;
    let pairs = pairs.select(&pairs.complete_indices());
    let frac = run.cfg.joint.holdout_fraction;
    let (train, heldout) = if frac > 0.0 {
        holdout_pairs(
            &pairs,
            HoldoutRule::Fraction { fraction: frac },
            &mut stream_rng(run.cfg.seed, STREAM_SPLIT),
        )?
    } else {
        (pairs.clone(), pairs.select(&[]))
    };
    if train.len() < MIN_INFORMATIVE_PAIRS {
        eprintln!(
            "warning: {} training pairs; the joint model is weakly identified below {MIN_INFORMATIVE_PAIRS}",
            train.len()
        );
    }
    let grid = run.cfg.build_grid(Some(&train.theft_pattern()))?;
    let table = run.covariates(grid.len())?;
    let spec = joint_spec(&run.cfg);
    let chain = fit_joint(&train, &grid, table.as_ref(), &spec, &run.chain_config())?;
    write_pairs(&run.output("train_pairs.csv"), &train)?;
    write_pairs(&run.output("heldout_pairs.csv"), &heldout)?;
    write_chain_jsonl(&run.output("joint_chain.jsonl"), &chain)?;
    write_json(&run.output("joint_model.json"), &spec)?;
    write_json(
        &run.output("joint_summary.json"),
        &json!({
            "variant": spec.variant,
            "m_train": train.len(),
            "m_heldout": heldout.len(),
            "cells": grid.len(),
            "chain": chain_summary(&chain),
        }),
    )
}

fn predict_flow(run: &mut Run, fit_dir: &Path) -> Result<()> {
    let spec: JointModelSpec = read_json(&run.input(&fit_dir.join("joint_model.json"))?)?;
    let chain = read_chain_jsonl(&run.input(&fit_dir.join("joint_chain.jsonl"))?)?;
    let km = odpp::io::Units::Km;
    let train = read_pairs(&run.input(&fit_dir.join("train_pairs.csv"))?, km)?;
    let heldout: PairedPattern = read_pairs(&run.input(&fit_dir.join("heldout_pairs.csv"))?, km)?;
    let grid = run.cfg.build_grid(Some(&train.theft_pattern()))?;
    let table = run.covariates(grid.len())?;
    let model = JointModel::new(&grid, table.as_ref(), &spec)?;
    let origin = if run.cfg.joint.origin.is_empty() {
        // the theft cell with most training pairs, lowest index on ties
        let totals = pair_counts(&train, &grid)?.theft_totals();
        let best = totals.iter().copied().max().unwrap_or(0);
        vec![totals.iter().position(|&t| t == best).unwrap_or(0)]
    } else {
        run.cfg.joint.origin.clone()
    };
    let partition = match run.cfg.joint.partition.clone() {
        Some(p) => read_partition(&run.input(&p)?, grid.len())?,
        None => {
            let [bx, by] = run.cfg.joint.partition_blocks;
            Partition::blocks(&grid, bx, by)?
        }
    };
    let held = if heldout.is_empty() {
        None
    } else {
        Some(pair_counts(&heldout, &grid)?)
    };
    let flow = flow_proportions(&model, &chain, &origin, &partition, held.as_ref())?;
    write_flow(&run.output("flow.csv"), &flow)?;
    write_json(
        &run.output("flow_summary.json"),
        &json!({
            "origin": origin,
            "partition": partition,
            "flow": flow,
        }),
    )
}
