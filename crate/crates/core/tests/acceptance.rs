//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use divkit::cascade::{adjudicate, partition_by_confidence};
use divkit::channels::{router_metrics, RouterSpec};
use divkit::diversity::DifficultyProfile;
use divkit::harness::config::{shipped_config, shipped_configs, Experiment};
use divkit::harness::experiments::{execute, RunOptions, RunOutput};
use divkit::regression::{regression_diff, PredictionRecord};
use divkit::rng;
use divkit::{Demand, Label, LabeledDataset, ScoreRange, ScorerParams};
use rand::Rng as _;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Row-by-row transcription of the three-model adjudicator truth table.
/// The last model's in-between row emits its score, binarised at `tie`.
#[allow(clippy::if_same_then_else)]
fn table_reference(s: [f64; 3], a: f64, b: f64, tie: f64) -> (u8, usize, f64) {
    let [s0, s1, s2] = s;
    if s0 < a {
        (0, 0, s0)
    } else if s0 > b {
        (1, 0, s0)
    } else if s1 < a {
        (0, 1, s1)
    } else if s1 > b {
        (1, 1, s1)
    } else if s2 < a {
        (0, 2, s2)
    } else if s2 > b {
        (1, 2, s2)
    } else if s2 > tie {
        (1, 2, s2)
    } else {
        (0, 2, s2)
    }
}

fn c1_adjudicator() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let ranges = [(0.1, 0.9), (0.3, 0.7), (0.0, 1.0)];
    let mut cases = 0;
    for &(a, b) in &ranges {
        let range = ScoreRange::new(a, b).map_err(|e| e.to_string())?;
        for &s0 in &grid {
            for &s1 in &grid {
                for &s2 in &grid {
                    let got = adjudicate(&[s0, s1, s2], range, 0.5).map_err(|e| e.to_string())?;
                    let want = table_reference([s0, s1, s2], a, b, 0.5);
                    let got = (got.label.as_u8(), got.deciding_model, got.deciding_score);
                    check(got == want, || format!("scores {:?} range [{a},{b}]: got {got:?}, want {want:?}", [s0, s1, s2]))?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} cases match"))
}

fn random_dataset(r: &mut rng::Rng, n: usize, dim: usize, id_base: u64) -> LabeledDataset {
    let demands = (0..n)
        .map(|i| Demand::new(id_base + i as u64, (0..dim).map(|_| r.random_range(-4.0..4.0)).collect()))
        .collect();
    let labels = (0..n).map(|_| if r.random_bool(0.5) { Label::Clean } else { Label::Attack }).collect();
    LabeledDataset::new(dim, demands, labels).expect("valid random dataset")
}

fn random_scorer(r: &mut rng::Rng, dim: usize) -> ScorerParams {
    ScorerParams::new((0..dim).map(|_| r.random_range(-3.0..3.0)).collect(), r.random_range(-2.0..2.0)).expect("finite")
}

fn c2_partition() -> Outcome {
    let mut r = rng::seeded(2);
    for case in 0..1000 {
        let dim = r.random_range(1..=5);
        let n = r.random_range(0..=200);
        let ds = random_dataset(&mut r, n, dim, 1000 * case);
        let p = random_scorer(&mut r, dim);
        let x: f64 = r.random();
        let y: f64 = r.random();
        let range = ScoreRange::new(x.min(y), x.max(y)).map_err(|e| e.to_string())?;
        let part = partition_by_confidence(&p, &ds, range).map_err(|e| e.to_string())?;
        let easy: HashSet<u64> = part.easy.ids().into_iter().collect();
        let hard: HashSet<u64> = part.difficult.ids().into_iter().collect();
        check(easy.is_disjoint(&hard), || format!("case {case}: parts overlap"))?;
        check(easy.len() + hard.len() == ds.len(), || format!("case {case}: parts do not cover"))?;
        let mut want_easy = Vec::new();
        let mut want_hard = Vec::new();
        for d in ds.demands() {
            let s = p.score(d).map_err(|e| e.to_string())?;
            if range.a() <= s && s <= range.b() {
                want_hard.push(d.id);
            } else {
                want_easy.push(d.id);
            }
        }
        check(part.easy.ids() == want_easy && part.difficult.ids() == want_hard, || {
            format!("case {case}: membership differs from per-item recomputation")
        })?;
    }
    Ok("1000 instances".into())
}

fn c3_regression() -> Outcome {
    let mut r = rng::seeded(3);
    let n = 10_000;
    for case in 0..100 {
        let truth: Vec<u8> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let arm = |r: &mut rng::Rng, flip: f64| -> Vec<PredictionRecord> {
            (0..n)
                .map(|i| {
                    let t = truth[i];
                    let pred = if r.random_bool(flip) { 1 - t } else { t };
                    PredictionRecord {
                        demand_id: i as u64,
                        score: r.random(),
                        predicted_label: Label::from_u8(pred).unwrap(),
                        true_label: Label::from_u8(t).unwrap(),
                    }
                })
                .collect()
        };
        let flip_before = r.random_range(0.0..0.5);
        let flip_after = r.random_range(0.0..0.5);
        let before = arm(&mut r, flip_before);
        let mut after = arm(&mut r, flip_after);
        // Alignment must go by id, not position.
        after.reverse();
        let rep = regression_diff(&before, &after).map_err(|e| e.to_string())?;

        let after_by_id: std::collections::HashMap<u64, &PredictionRecord> = after.iter().map(|p| (p.demand_id, p)).collect();
        let (mut regressed, mut repaired, mut ok_before, mut ok_after, mut fp_b, mut fn_b, mut fp_a, mut fn_a) =
            (0i64, 0i64, 0i64, 0i64, 0usize, 0usize, 0usize, 0usize);
        for p in &before {
            let q = after_by_id[&p.demand_id];
            let cb = p.predicted_label == p.true_label;
            let ca = q.predicted_label == q.true_label;
            regressed += i64::from(cb && !ca);
            repaired += i64::from(!cb && ca);
            ok_before += i64::from(cb);
            ok_after += i64::from(ca);
            fp_b += usize::from(p.predicted_label.as_u8() == 0 && p.true_label.as_u8() == 1);
            fn_b += usize::from(p.predicted_label.as_u8() == 1 && p.true_label.as_u8() == 0);
            fp_a += usize::from(q.predicted_label.as_u8() == 0 && q.true_label.as_u8() == 1);
            fn_a += usize::from(q.predicted_label.as_u8() == 1 && q.true_label.as_u8() == 0);
        }
        check(rep.regressed as i64 == regressed && rep.repaired as i64 == repaired, || {
            format!("case {case}: transitions {}/{} vs brute force {regressed}/{repaired}", rep.regressed, rep.repaired)
        })?;
        check(ok_after - ok_before == repaired - regressed, || format!("case {case}: identity fails"))?;
        check(
            rep.before.correct as i64 == ok_before
                && rep.after.correct as i64 == ok_after
                && rep.before.false_positives == fp_b
                && rep.before.false_negatives == fn_b
                && rep.after.false_positives == fp_a
                && rep.after.false_negatives == fn_a,
            || format!("case {case}: arm counts differ"),
        )?;
        check(rep.bookkeeping_holds(), || format!("case {case}: report bookkeeping fails"))?;
        let mut listed: Vec<u64> = rep.regressed_ids.clone();
        listed.sort_unstable();
        check(listed.len() as i64 == regressed, || format!("case {case}: regressed id list"))?;
    }
    Ok("100 arms of 10^4".into())
}

fn run_shipped(name: &str, jobs: Option<usize>) -> Result<RunOutput, String> {
    let cfg = shipped_config(name).map_err(|e| e.to_string())?;
    execute(&cfg, &RunOptions { jobs }).map_err(|e| format!("{name}: {e}"))
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("report lacks numeric {key}"))
}

fn c4_retraining() -> Outcome {
    let cfg = shipped_config("retraining").map_err(|e| e.to_string())?;
    let Experiment::Retraining(x) = &cfg.experiment else {
        return Err("retraining config has another kind".into());
    };
    check(cfg.trials == 20 && x.split == [0.4, 0.4, 0.2], || "config is not the 20-seed 40/40/20 protocol".into())?;
    let out = run_shipped("retraining", None)?;
    let res = &out.report.results;
    let before = num(res, "median_acc_before")?;
    let after = num(res, "median_acc_after")?;
    let with_d = num(res, "trials_with_regressions")?;
    check(after >= before, || format!("median after {after} < median before {before}"))?;
    check(with_d >= 3.0, || format!("D > 0 in only {with_d} of 20 seeds"))?;
    Ok(format!("median {before:.4} -> {after:.4}, D > 0 in {with_d}/20"))
}

fn c5_jensen() -> Outcome {
    let mut r = rng::seeded(5);
    for case in 0..10_000 {
        let len = r.random_range(1..=64);
        let constant = case % 2 == 0;
        let theta: Vec<f64> = if constant {
            vec![r.random(); len]
        } else {
            let mut t: Vec<f64> = (0..len.max(2)).map(|_| r.random()).collect();
            // Keep the profile genuinely non-constant.
            t[0] = (t[1] + 0.25) % 1.0;
            t
        };
        let n = theta.len() as f64;
        let mean = theta.iter().sum::<f64>() / n;
        let mean_sq = theta.iter().map(|t| t * t).sum::<f64>() / n;
        let p = DifficultyProfile::new(theta).map_err(|e| e.to_string())?;
        let gap = p.jensen_gap();
        check(mean_sq >= mean * mean - 1e-12, || format!("case {case}: mean(t^2) {mean_sq} < mean(t)^2 {}", mean * mean))?;
        check(gap >= 0.0, || format!("case {case}: negative gap {gap}"))?;
        check((gap <= 1e-12) == constant && ((mean_sq - mean * mean).abs() <= 1e-12) == constant, || {
            format!("case {case}: equality within 1e-12 is {} but constant is {constant}", gap <= 1e-12)
        })?;
        check(p.is_constant() == constant, || format!("case {case}: is_constant disagrees"))?;
    }
    Ok("10^4 profiles".into())
}

fn c6_diversity() -> Outcome {
    let out = run_shipped("fig2-profile", None)?;
    let curve = out.report.results["curve"].as_array().ok_or("report lacks curve")?;
    check(!curve.is_empty(), || "empty curve".into())?;
    let mut summary = Vec::new();
    for point in curve {
        let scale = num(point, "scale")?;
        let factor = num(point, "empirical_improvement")?;
        let observed = num(point, "mean_pair_pfd")?;
        let analytic = num(point, "analytic_pair_pfd")?;
        let se = num(point, "pair_pfd_se")?;
        check((10.0..=1000.0).contains(&factor), || format!("scale {scale}: improvement {factor} outside [10, 1000]"))?;
        check((observed - analytic).abs() <= 3.0 * se, || {
            format!("scale {scale}: pair pfd {observed} vs {analytic} exceeds 3 SE ({se})")
        })?;
        summary.push(format!("{factor:.0}x"));
    }
    Ok(format!("improvement {}", summary.join(", ")))
}

fn c7_cascade() -> Outcome {
    let cfg = shipped_config("cascade").map_err(|e| e.to_string())?;
    let Experiment::Cascade(x) = &cfg.experiment else {
        return Err("cascade config has another kind".into());
    };
    check(x.depth == 2 && cfg.trials == 20, || "config is not a 20-seed depth-2 cascade".into())?;
    let out = run_shipped("cascade", None)?;
    let mut cascade = Vec::new();
    let mut model0 = Vec::new();
    for t in &out.report.per_trial {
        cascade.push(num(&t["metrics"], "accuracy")?);
        model0.push(num(&t["metrics"], "model0_accuracy")?);
    }
    let better = cascade.iter().zip(&model0).filter(|(c, m)| c > m).count();
    let med = divkit::harness::experiments::median;
    let (mc, m0) = (med(&cascade), med(&model0));
    check(mc >= m0, || format!("median cascade {mc} < median model 0 {m0}"))?;
    check(better >= 12, || format!("strictly better in only {better} of 20"))?;
    Ok(format!("median {m0:.4} -> {mc:.4}, better in {better}/20"))
}

fn c8_channels() -> Outcome {
    let out = run_shipped("channels", None)?;
    let Experiment::Channels(x) = &out.report.resolved_config.experiment else {
        return Err("channels config has another kind".into());
    };
    check(x.n_demands == 100_000, || format!("n_demands {} is not 10^5", x.n_demands))?;
    let constant = |c: &divkit::channels::ChannelSpec| match c.failure {
        divkit::channels::FailureSource::Constant(p) => Ok(p),
        _ => Err(format!("channel {} is not constant-rate", c.name)),
    };
    let pair = x.pair.as_ref().ok_or("no pair setup")?;
    let checker = x.checker.as_ref().ok_or("no checker setup")?;
    let n = x.n_demands as f64;
    let within = |observed: f64, oracle: f64, what: &str| {
        let se = (oracle * (1.0 - oracle) / n).sqrt();
        check((observed - oracle).abs() <= 3.0 * se, || format!("{what}: {observed} vs {oracle} exceeds 3 SE ({se})"))
    };
    let both_oracle = constant(&pair.a)? * constant(&pair.b)?;
    let under_oracle = constant(&checker.trusted)? * constant(&checker.checker)?;
    let trial = &out.report.per_trial[0];
    let both = num(&trial["pair"]["rates"], "both_fail")?;
    let under = num(&trial["checker"]["rates"], "undermining")?;
    within(both, both_oracle, "both-fail")?;
    within(under, under_oracle, "undermining")?;
    Ok(format!("both-fail {both} ~ {both_oracle}, undermining {under} ~ {under_oracle}"))
}

fn c9_router() -> Outcome {
    let mut r = rng::seeded(9);
    for case in 0..100 {
        let dim = r.random_range(1..=4);
        let n = r.random_range(1..=300);
        let ds = random_dataset(&mut r, n, dim, 0);
        let spec = RouterSpec::new(
            random_scorer(&mut r, dim),
            [random_scorer(&mut r, dim), random_scorer(&mut r, dim)],
        )
        .map_err(|e| e.to_string())?;
        let routes: Vec<usize> = (0..n).map(|_| r.random_range(0..=1)).collect();
        let threshold = r.random_range(0.2..0.8);
        let m = router_metrics(&spec, &ds, &routes, threshold).map_err(|e| e.to_string())?;
        let mut correct = 0usize;
        let mut taken = Vec::with_capacity(n);
        for (d, truth) in ds.iter() {
            let route = usize::from(spec.router().score(d).unwrap() > threshold);
            let label = if spec.specialists()[route].score(d).unwrap() > threshold { Label::Clean } else { Label::Attack };
            correct += usize::from(label == truth);
            taken.push(route);
        }
        let e2e = correct as f64 / n as f64;
        check((m.end_to_end_accuracy - e2e).abs() <= 1e-12, || format!("case {case}: end-to-end {} vs {e2e}", m.end_to_end_accuracy))?;
        check((m.decomposed_accuracy() - m.end_to_end_accuracy).abs() <= 1e-12, || {
            format!("case {case}: decomposition {} vs {}", m.decomposed_accuracy(), m.end_to_end_accuracy)
        })?;
        let perfect = router_metrics(&spec, &ds, &taken, threshold).map_err(|e| e.to_string())?;
        check(perfect.confusion_factor == 0.0, || format!("case {case}: perfect router confusion {}", perfect.confusion_factor))?;
    }
    Ok("100 configurations".into())
}

fn c10_determinism() -> Outcome {
    let max_jobs = std::thread::available_parallelism().map_or(1, |n| n.get()).max(4);
    let mut names = Vec::new();
    for (name, _) in shipped_configs() {
        let bodies = [None, None, Some(max_jobs)].map(|jobs| -> Result<Vec<String>, String> {
            let out = run_shipped(name, jobs)?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut files = out.write_to(dir.path()).map_err(|e| e.to_string())?;
            files.sort();
            files
                .iter()
                .map(|p| {
                    let body = std::fs::read_to_string(p).map_err(|e| e.to_string())?;
                    Ok(format!("{}\n{body}", p.file_name().unwrap().to_string_lossy()))
                })
                .collect()
        });
        let [a, b, c] = bodies;
        let (a, b, c) = (a?, b?, c?);
        check(a == b, || format!("{name}: two runs differ"))?;
        check(a == c, || format!("{name}: run with {max_jobs} threads differs"))?;
        names.push(name);
    }
    Ok(format!("{} byte-identical x3 ({max_jobs} threads max)", names.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("adjudicator conformance", Duration::from_secs(1), c1_adjudicator),
        ("partition correctness", Duration::from_secs(5), c2_partition),
        ("regression-diff oracle", Duration::from_secs(10), c3_regression),
        ("retraining phenomenon", Duration::from_secs(60), c4_retraining),
        ("Jensen property", Duration::from_secs(5), c5_jensen),
        ("diversity improvement", Duration::from_secs(30), c6_diversity),
        ("cascade benefit", Duration::from_secs(60), c7_cascade),
        ("channel simulations", Duration::from_secs(10), c8_channels),
        ("router identity", Duration::from_secs(5), c9_router),
        ("determinism", Duration::from_secs(120), c10_determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
