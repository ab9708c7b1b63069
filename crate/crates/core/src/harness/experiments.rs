//! Runs a validated experiment config and emits its report files.

use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::cascade::{build_cascade, evaluate_cascade, CascadeMetrics, Truncation};
use crate::channels::{
    expected_joint_failure_rate, router_metrics, simulate_pair, simulate_trusted_checker, train_router, CheckerStats,
    PairStats,
};
use crate::data::{Demand, LabeledDataset, SplitSpec, split_dataset};
use crate::diversity::{binomial_se, expected_pair_pfd, expected_single_pfd, improvement_factor, population_experiment};
use crate::error::{Error, Result};
use crate::harness::config::{
    CascadeExperiment, ChannelsExperiment, DiversityExperiment, Experiment, ExperimentConfig, ResolvedSource,
    RetrainingExperiment, RouterExperiment,
};
use crate::harness::csv_io::{write_curve, write_ordered_scores, write_text, CurveRow};
use crate::harness::generate::gen_data;
use crate::harness::report::to_canonical_string;
use crate::regression::{ordered_scores, retraining_experiment, RegressionReport, RATE_CONVENTION};
use crate::rng;
use crate::scorer;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seeds for one trial, all drawn from `rng::seeded(master_seed ^ trial)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub data: u64,
    pub split: u64,
    pub simulation: u64,
}

impl TrialSeeds {
    pub fn derive(master_seed: u64, trial: usize) -> Self {
        let mut r = rng::seeded(rng::trial_seed(master_seed, trial as u64));
        TrialSeeds {
            data: r.random(),
            split: r.random(),
            simulation: r.random(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool_version: String,
    pub resolved_config: ExperimentConfig,
    pub results: Value,
    pub per_trial: Vec<Value>,
}

/// A side file of an experiment, named relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub enum SideFile {
    OrderedScores(String, Vec<(usize, f64)>),
    Curve(String, Vec<CurveRow>),
    Json(String, String),
}

impl SideFile {
    pub fn name(&self) -> &str {
        match self {
            SideFile::OrderedScores(n, _) | SideFile::Curve(n, _) | SideFile::Json(n, _) => n,
        }
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.name());
        match self {
            SideFile::OrderedScores(_, rows) => write_ordered_scores(rows, &path)?,
            SideFile::Curve(_, rows) => write_curve(rows, &path)?,
            SideFile::Json(_, text) => write_text(&path, text)?,
        }
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub side_files: Vec<SideFile>,
}

impl RunOutput {
    pub fn report_name(&self) -> String {
        format!("{}-report.json", self.report.resolved_config.experiment.kind())
    }

    /// The canonical report body.
    pub fn report_json(&self) -> Result<String> {
        let mut s = to_canonical_string(&self.report)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes the report and side files into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let body = self.report_json()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let report_path = dir.join(self.report_name());
        write_text(&report_path, &body)?;
        let mut written = vec![report_path];
        for f in &self.side_files {
            written.push(f.write(dir)?);
        }
        Ok(written)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for trials and simulations; `None` uses every core.
    pub jobs: Option<usize>,
}

/// Validates `cfg`, then runs every trial.
pub fn execute(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    let source = cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cfg.experiment {
        Experiment::Retraining(x) => run_retraining(cfg, x, source.expect("dataset")),
        Experiment::Cascade(x) => run_cascade(cfg, x, source.expect("dataset")),
        Experiment::Diversity(x) => run_diversity(cfg, x),
        Experiment::Channels(x) => run_channels(cfg, x),
        Experiment::Router(x) => run_router(cfg, x),
    })
}

/// Loads, validates and runs the config at `path`, writing outputs to
/// `out_dir`. Nothing is written unless the whole run succeeds.
pub fn run(path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let cfg = ExperimentConfig::from_file(path)?;
    execute(&cfg, opts)?.write_to(out_dir)
}

/// 0 on success, 1 for validation errors, 2 for anything else.
pub fn exit_code<T>(r: &Result<T>) -> i32 {
    match r {
        Ok(_) => 0,
        Err(e) if e.is_validation() => 1,
        Err(_) => 2,
    }
}

fn trials<T: Send>(cfg: &ExperimentConfig, f: impl Fn(usize, TrialSeeds) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|i| f(i, TrialSeeds::derive(cfg.master_seed, i)))
        .collect()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialise")
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn report(cfg: &ExperimentConfig, results: Value, per_trial: Vec<Value>) -> Report {
    Report {
        tool_version: TOOL_VERSION.to_string(),
        resolved_config: cfg.clone(),
        results,
        per_trial,
    }
}

struct RetrainingTrial {
    seeds: TrialSeeds,
    report: RegressionReport,
    ordered_before: Vec<(usize, f64)>,
    ordered_after: Vec<(usize, f64)>,
}

fn run_retraining(cfg: &ExperimentConfig, x: &RetrainingExperiment, source: ResolvedSource) -> Result<RunOutput> {
    let runs = trials(cfg, |_, seeds| {
        let ds = source.dataset(seeds.data)?;
        let spec = SplitSpec::new(x.split.clone(), seeds.split)?;
        let out = retraining_experiment(&ds, &x.train, &spec, x.threshold, x.mode)?;
        Ok(RetrainingTrial {
            seeds,
            ordered_before: ordered_scores(&out.before),
            ordered_after: ordered_scores(&out.after),
            report: out.report,
        })
    })?;
    let before: Vec<f64> = runs.iter().map(|t| t.report.acc_before).collect();
    let after: Vec<f64> = runs.iter().map(|t| t.report.acc_after).collect();
    let regressed: Vec<f64> = runs.iter().map(|t| t.report.regressed as f64).collect();
    let results = json!({
        "rate_convention": RATE_CONVENTION,
        "trials": runs.len(),
        "median_acc_before": median(&before),
        "median_acc_after": median(&after),
        "median_regressed": median(&regressed),
        "trials_with_regressions": runs.iter().filter(|t| t.report.regressed > 0).count(),
        "trials_improved": runs.iter().filter(|t| t.report.acc_after > t.report.acc_before).count(),
        "trials_not_worse": runs.iter().filter(|t| t.report.acc_after >= t.report.acc_before).count(),
        "total_regressed": runs.iter().map(|t| t.report.regressed).sum::<usize>(),
        "total_repaired": runs.iter().map(|t| t.report.repaired).sum::<usize>(),
    });
    let per_trial = runs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"trial": i, "seeds": to_value(&t.seeds), "report": to_value(&t.report)}))
        .collect();
    let first = &runs[0];
    Ok(RunOutput {
        report: report(cfg, results, per_trial),
        side_files: vec![
            SideFile::OrderedScores("retraining-ordered-scores-before.csv".into(), first.ordered_before.clone()),
            SideFile::OrderedScores("retraining-ordered-scores-after.csv".into(), first.ordered_after.clone()),
        ],
    })
}

#[derive(Serialize)]
struct CascadeTrial {
    seeds: TrialSeeds,
    holdout_size: usize,
    stage_sizes: Vec<usize>,
    truncation: Option<Truncation>,
    metrics: CascadeMetrics,
    #[serde(skip)]
    ensemble_json: String,
}

fn run_cascade(cfg: &ExperimentConfig, x: &CascadeExperiment, source: ResolvedSource) -> Result<RunOutput> {
    let runs = trials(cfg, |_, seeds| {
        let ds = source.dataset(seeds.data)?;
        let built = build_cascade(&ds, x.depth, x.range, &x.train, seeds.split)?;
        let metrics = evaluate_cascade(&built.ensemble, &built.holdout)?;
        Ok(CascadeTrial {
            seeds,
            holdout_size: built.holdout.len(),
            stage_sizes: built.info.stage_sizes(),
            truncation: built.info.truncation,
            metrics,
            ensemble_json: to_canonical_string(&built.ensemble)? + "\n",
        })
    })?;
    let cascade: Vec<f64> = runs.iter().map(|t| t.metrics.accuracy).collect();
    let model0: Vec<f64> = runs.iter().map(|t| t.metrics.model0_accuracy).collect();
    let results = json!({
        "trials": runs.len(),
        "median_cascade_accuracy": median(&cascade),
        "median_model0_accuracy": median(&model0),
        "trials_strictly_better": runs.iter().filter(|t| t.metrics.accuracy > t.metrics.model0_accuracy).count(),
        "trials_not_worse": runs.iter().filter(|t| t.metrics.accuracy >= t.metrics.model0_accuracy).count(),
        "trials_truncated": runs.iter().filter(|t| t.truncation.is_some()).count(),
    });
    let per_trial = runs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut v = to_value(t);
            v["trial"] = json!(i);
            v
        })
        .collect();
    let ensemble = runs[0].ensemble_json.clone();
    Ok(RunOutput {
        report: report(cfg, results, per_trial),
        side_files: vec![SideFile::Json("cascade-ensemble.json".into(), ensemble)],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub scale: f64,
    pub mean_single_pfd: f64,
    pub mean_pair_pfd: f64,
    pub empirical_improvement: Option<crate::diversity::ImprovementFactor>,
    pub analytic_single_pfd: f64,
    pub analytic_pair_pfd: f64,
    pub analytic_improvement: Option<crate::diversity::ImprovementFactor>,
    /// Binomial standard error of the pooled pair pfd.
    pub pair_pfd_se: f64,
    /// `|mean_pair_pfd - analytic_pair_pfd| / pair_pfd_se`.
    pub pair_pfd_z: Option<f64>,
}

fn run_diversity(cfg: &ExperimentConfig, x: &DiversityExperiment) -> Result<RunOutput> {
    let base = x.profile.build()?;
    let profiles = x.scales.iter().map(|&s| base.scaled(s)).collect::<Result<Vec<_>>>()?;
    let runs = trials(cfg, |_, seeds| {
        profiles
            .iter()
            .map(|p| population_experiment(p, x.n_versions, x.n_pairs, seeds.simulation))
            .collect::<Result<Vec<_>>>()
            .map(|r| (seeds, r))
    })?;
    let t = runs.len() as f64;
    let curve: Vec<CurvePoint> = profiles
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let single = runs.iter().map(|(_, r)| r[k].mean_single_pfd).sum::<f64>() / t;
            let pair = runs.iter().map(|(_, r)| r[k].mean_pair_pfd).sum::<f64>() / t;
            let analytic_single = expected_single_pfd(p);
            let analytic_pair = expected_pair_pfd(p);
            let se = binomial_se(analytic_pair, p.len() * x.n_pairs * runs.len());
            CurvePoint {
                scale: x.scales[k],
                mean_single_pfd: single,
                mean_pair_pfd: pair,
                empirical_improvement: improvement_factor(single, pair).ok(),
                analytic_single_pfd: analytic_single,
                analytic_pair_pfd: analytic_pair,
                analytic_improvement: improvement_factor(analytic_single, analytic_pair).ok(),
                pair_pfd_se: se,
                pair_pfd_z: (se > 0.0).then(|| (pair - analytic_pair).abs() / se),
            }
        })
        .collect();
    let rows = curve
        .iter()
        .map(|c| CurveRow {
            mean_single_pfd: c.mean_single_pfd,
            mean_pair_pfd: c.mean_pair_pfd,
            empirical_improvement: c.empirical_improvement,
            analytic_pair_pfd: c.analytic_pair_pfd,
        })
        .collect();
    let per_trial = runs
        .iter()
        .enumerate()
        .map(|(i, (seeds, r))| {
            let points: Vec<Value> = r
                .iter()
                .zip(&x.scales)
                .map(|(res, s)| json!({"scale": s, "result": to_value(res)}))
                .collect();
            json!({"trial": i, "seeds": to_value(seeds), "points": points})
        })
        .collect();
    Ok(RunOutput {
        report: report(cfg, json!({"trials": runs.len(), "curve": to_value(&curve)}), per_trial),
        side_files: vec![SideFile::Curve("diversity-curve.csv".into(), rows)],
    })
}

/// Pooled rate over trials against its analytic value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCheck {
    pub observed: f64,
    pub expected: f64,
    pub se: f64,
    pub z: Option<f64>,
}

impl RateCheck {
    fn new(observed: f64, expected: f64, trials: usize) -> Self {
        let se = binomial_se(expected, trials);
        RateCheck {
            observed,
            expected,
            se,
            z: (se > 0.0).then(|| (observed - expected).abs() / se),
        }
    }
}

fn run_channels(cfg: &ExperimentConfig, x: &ChannelsExperiment) -> Result<RunOutput> {
    type Trial = (TrialSeeds, Option<PairStats>, Option<CheckerStats>);
    let runs: Vec<Trial> = trials(cfg, |_, seeds| {
        let pair = x
            .pair
            .as_ref()
            .map(|p| simulate_pair(&p.a, &p.b, x.n_demands, p.policy, seeds.simulation))
            .transpose()?;
        // A separate stream keeps the checker draws independent of the pair's.
        let checker = x
            .checker
            .as_ref()
            .map(|k| simulate_trusted_checker(&k.trusted, &k.checker, x.n_demands, seeds.simulation ^ 1))
            .transpose()?;
        Ok((seeds, pair, checker))
    })?;
    let draws = x.n_demands * runs.len();
    let mean = |f: &dyn Fn(&Trial) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let mut results = json!({"trials": runs.len(), "n_demands": x.n_demands});
    if let Some(p) = &x.pair {
        let expected = expected_joint_failure_rate(&p.a, &p.b, x.n_demands)?;
        let both = mean(&|t| t.1.as_ref().expect("pair").rates.both_fail);
        results["pair"] = json!({
            "policy": to_value(&p.policy),
            "mean_a_fail": mean(&|t| t.1.as_ref().expect("pair").rates.a_fail),
            "mean_b_fail": mean(&|t| t.1.as_ref().expect("pair").rates.b_fail),
            "mean_either_fail": mean(&|t| t.1.as_ref().expect("pair").rates.either_fail),
            "mean_system_failure": mean(&|t| t.1.as_ref().expect("pair").rates.system_failure),
            "both_fail": to_value(&RateCheck::new(both, expected, draws)),
        });
    }
    if let Some(k) = &x.checker {
        let expected = expected_joint_failure_rate(&k.trusted, &k.checker, x.n_demands)?;
        let undermining = mean(&|t| t.2.as_ref().expect("checker").rates.undermining);
        results["checker"] = json!({
            "mean_caught": mean(&|t| t.2.as_ref().expect("checker").rates.caught),
            "mean_nuisance": mean(&|t| t.2.as_ref().expect("checker").rates.nuisance),
            "undermining": to_value(&RateCheck::new(undermining, expected, draws)),
        });
    }
    let per_trial = runs
        .iter()
        .enumerate()
        .map(|(i, (seeds, pair, checker))| {
            let mut v = json!({"trial": i, "seeds": to_value(seeds)});
            if let Some(p) = pair {
                v["pair"] = json!({"counts": to_value(&p.counts), "rates": to_value(&p.rates)});
            }
            if let Some(c) = checker {
                v["checker"] = json!({"counts": to_value(&c.counts), "rates": to_value(&c.rates)});
            }
            v
        })
        .collect();
    Ok(RunOutput {
        report: report(cfg, results, per_trial),
        side_files: vec![],
    })
}

/// Generates both routes and joins them; route 1 ids follow route 0's.
pub fn router_dataset(x: &RouterExperiment, seed: u64) -> Result<(LabeledDataset, Vec<usize>)> {
    let mut r = rng::seeded(seed);
    let d0 = gen_data(&x.routes[0].with_seed(r.random()))?;
    let d1 = gen_data(&x.routes[1].with_seed(r.random()))?;
    let offset = d0.len() as u64;
    let shifted: Vec<Demand> = d1
        .demands()
        .iter()
        .map(|d| Demand::new(d.id + offset, d.features.clone()))
        .collect();
    let d1 = LabeledDataset::new(d1.dim(), shifted, d1.labels().to_vec())?;
    let routes = std::iter::repeat_n(0, d0.len()).chain(std::iter::repeat_n(1, d1.len())).collect();
    Ok((d0.concat(&d1)?, routes))
}

fn run_router(cfg: &ExperimentConfig, x: &RouterExperiment) -> Result<RunOutput> {
    let boundary = x.routes[0].n as u64;
    let routes_of = |ds: &LabeledDataset| -> Vec<usize> { ds.demands().iter().map(|d| usize::from(d.id >= boundary)).collect() };
    let runs = trials(cfg, |_, seeds| {
        let (ds, _) = router_dataset(x, seeds.data)?;
        let halves = split_dataset(&ds, &SplitSpec::new(vec![0.5, 0.5], seeds.split)?)?;
        let (train_set, test_set) = (&halves[0], &halves[1]);
        let spec = train_router(train_set, &routes_of(train_set), &x.train)?;
        let metrics = router_metrics(&spec, test_set, &routes_of(test_set), x.threshold)?;
        let baseline = scorer::train(train_set, &x.train)?.accuracy(test_set, x.threshold)?;
        Ok((seeds, metrics, baseline))
    })?;
    let routed: Vec<f64> = runs.iter().map(|t| t.1.end_to_end_accuracy).collect();
    let baseline: Vec<f64> = runs.iter().map(|t| t.2).collect();
    let confusion: Vec<f64> = runs.iter().map(|t| t.1.confusion_factor).collect();
    let results = json!({
        "trials": runs.len(),
        "median_end_to_end_accuracy": median(&routed),
        "median_single_model_accuracy": median(&baseline),
        "median_confusion_factor": median(&confusion),
        "max_decomposition_error": runs
            .iter()
            .map(|t| (t.1.decomposed_accuracy() - t.1.end_to_end_accuracy).abs())
            .fold(0.0, f64::max),
    });
    let per_trial = runs
        .iter()
        .enumerate()
        .map(|(i, (seeds, m, b))| {
            json!({"trial": i, "seeds": to_value(seeds), "metrics": to_value(m), "single_model_accuracy": b})
        })
        .collect();
    Ok(RunOutput {
        report: report(cfg, results, per_trial),
        side_files: vec![],
    })
}
