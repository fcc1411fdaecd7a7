//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with its measured numbers. Run with
//!
//! ```text
//! cargo test -p opinion-pulse --test acceptance -- --nocapture
//! ```
//!
//! Every tolerance is pinned in code next to the check it gates.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use opinion_pulse::store::{CorruptPolicy, JsonlStore};
use opinion_pulse_core::bayestrend::{
    ess, hmc_sample, NormalPrior, SamplerConfig, SigmaSpec, TrendModelSpec,
};
use opinion_pulse_core::opiniondyn::{
    fit, integrate, integrate_with_sensitivities, switch_threshold, FitConfig, ImpulseSchedule,
    OdeParams, Pulse,
};
use opinion_pulse_core::reply::parse_analysis;
use opinion_pulse_core::types::{validate_scores, DocumentAnalysis, SourceDocument, TrendSeries};
use opinion_pulse_core::SeededRng;

const REF: OdeParams = OdeParams::REFERENCE;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[acceptance] {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

fn within(start: Instant, budget: Duration, criterion: &str) {
    let elapsed = start.elapsed();
    assert!(
        elapsed <= budget,
        "{criterion} exceeded its time budget: {elapsed:?} > {budget:?}"
    );
}

/// C1: the unforced opinion from x0 = 0.5 settles on the positive stable
/// fixed point of the cubic, sqrt(1 - b/a), to 1e-3 at t = 20.
#[test]
fn c1_ode_fixed_point() {
    let start = Instant::now();
    let traj = integrate(&REF, &ImpulseSchedule::empty(), 0.5, 0.0, 0.0, 20.0, 0.01).unwrap();
    let (x_final, _) = traj.final_state();

    // Oracle: bisection root of a x (1 - x^2) - b x on (0, 1].
    let f = |x: f64| REF.a * x * (1.0 - x * x) - REF.b * x;
    let (mut lo, mut hi) = (0.5, 1.0);
    assert!(f(lo) > 0.0 && f(hi) < 0.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    let err = (x_final - root).abs();

    report(
        "C1 ODE fixed point",
        err < 1e-3 && (root - 0.921954).abs() < 1e-6,
        &format!("x(20) = {x_final:.6}, bisection root {root:.6}, err {err:.2e}"),
    );
    within(start, Duration::from_secs(1), "C1");
}

/// C2: RK4 order on the influence decay closed form; halving dt shrinks
/// the error by a factor in [12, 20].
#[test]
fn c2_rk4_order() {
    let start = Instant::now();
    let params = OdeParams { c: 0.0, ..REF };
    let exact = (-REF.d * 1.0_f64).exp();
    let err_at = |dt: f64| {
        let traj = integrate(&params, &ImpulseSchedule::empty(), 0.0, 1.0, 0.0, 1.0, dt).unwrap();
        (traj.final_state().1 - exact).abs()
    };
    let ratio = err_at(0.1) / err_at(0.05);
    report(
        "C2 RK4 order",
        (12.0..=20.0).contains(&ratio),
        &format!("error ratio dt=0.1 vs dt=0.05 is {ratio:.2}"),
    );
    within(start, Duration::from_secs(1), "C2");
}

/// C3: forward sensitivities match central finite differences (h = 1e-5)
/// to a relative error below 1e-4 at 20 random parameter points in
/// [0.1, 3]^4.
#[test]
fn c3_sensitivities_match_finite_differences() {
    let start = Instant::now();
    let schedule = ImpulseSchedule {
        pulses: vec![Pulse {
            t_start: 1.0,
            duration: 1.0,
            amplitude: 1.5,
        }],
    };
    let (x0, e0, t1, dt, h) = (0.5, 0.3, 4.0, 0.01, 1e-5);
    let mut rng = SeededRng::new(2024);
    let mut max_rel: f64 = 0.0;

    for _ in 0..20 {
        let params = OdeParams {
            a: 0.1 + 2.9 * rng.uniform(),
            b: 0.1 + 2.9 * rng.uniform(),
            c: 0.1 + 2.9 * rng.uniform(),
            d: 0.1 + 2.9 * rng.uniform(),
        };
        let sens = integrate_with_sensitivities(&params, &schedule, x0, e0, 0.0, t1, dt).unwrap();
        let n = sens.trajectory.len() - 1;
        for idx in 0..4 {
            let mut arr = params.as_array();
            arr[idx] += h;
            let hi =
                integrate(&OdeParams::from_array(arr), &schedule, x0, e0, 0.0, t1, dt).unwrap();
            arr[idx] -= 2.0 * h;
            let lo =
                integrate(&OdeParams::from_array(arr), &schedule, x0, e0, 0.0, t1, dt).unwrap();
            for (fs, fd) in [
                (sens.dx[idx][n], (hi.x[n] - lo.x[n]) / (2.0 * h)),
                (sens.de[idx][n], (hi.e[n] - lo.e[n]) / (2.0 * h)),
            ] {
                let rel = (fs - fd).abs() / fs.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(rel);
            }
        }
    }
    report(
        "C3 sensitivity gradients",
        max_rel < 1e-4,
        &format!("max relative error vs central differences {max_rel:.2e} over 20 points"),
    );
    within(start, Duration::from_secs(10), "C3");
}

/// C4: the inverse problem recovers (2.0, 0.3, 1.0, 0.3) from noiseless
/// synthetic data within 5% componentwise in at most 5000 iterations, and
/// the smoothed loss is non-increasing after the first 10% of iterations.
#[test]
fn c4_inverse_problem_recovery() {
    let start = Instant::now();
    let schedule = ImpulseSchedule {
        pulses: vec![Pulse {
            t_start: 5.0,
            duration: 1.0,
            amplitude: 4.0,
        }],
    };
    let observed = integrate(&REF, &schedule, 0.5, 0.0, 0.0, 20.0, 0.01).unwrap();
    let cfg = FitConfig {
        init_params: OdeParams {
            a: 1.0,
            b: 0.5,
            c: 0.5,
            d: 0.5,
        },
        learning_rate: 0.05,
        max_iters: 5000,
        loss_tol: 1e-12,
        observed,
        include_influence: false,
        seed: 0,
    };
    let result = fit(&cfg, &schedule, 0.5, 0.0, 0.01).unwrap();

    let got = result.params.as_array();
    let want = REF.as_array();
    let worst_rel = (0..4)
        .map(|i| (got[i] - want[i]).abs() / want[i])
        .fold(0.0, f64::max);

    // Smoothed (20-iteration window) loss must not rise after burn-in.
    let h = &result.loss_history;
    let window = 20usize.min(h.len());
    let smoothed: Vec<f64> = (0..=h.len() - window)
        .map(|i| h[i..i + window].iter().sum::<f64>() / window as f64)
        .collect();
    let burn_in = h.len() / 10;
    let monotone = smoothed
        .windows(2)
        .skip(burn_in)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-6));

    report(
        "C4 inverse problem",
        result.iterations <= 5000 && worst_rel < 0.05 && monotone,
        &format!(
            "recovered ({:.4}, {:.4}, {:.4}, {:.4}) in {} iterations, worst rel err {:.2e}, smoothed loss monotone: {monotone}",
            got[0], got[1], got[2], got[3], result.iterations, worst_rel
        ),
    );
    within(start, Duration::from_secs(60), "C4");
}

/// C5: a single sufficiently large pulse flips the entrenched opinion and
/// half the bisected threshold amplitude does not; the threshold is
/// bracketed to 1e-3.
#[test]
fn c5_switching_threshold() {
    let start = Instant::now();
    let x0 = -REF.stable_fixed_point().unwrap();
    let (pulse_start, duration, t_end, dt) = (5.0, 1.0, 30.0, 0.01);
    let a_star = switch_threshold(&REF, pulse_start, duration, x0, 0.0, t_end, dt).unwrap();

    let final_x = |amplitude: f64| {
        let schedule = ImpulseSchedule {
            pulses: vec![Pulse {
                t_start: pulse_start,
                duration,
                amplitude,
            }],
        };
        integrate(&REF, &schedule, x0, 0.0, 0.0, t_end, dt)
            .unwrap()
            .final_state()
            .0
    };
    let eps = 1e-2;
    let flips_above = final_x(a_star + eps) > 0.0;
    let holds_below = final_x(a_star - eps) < 0.0;
    let holds_at_half = final_x(0.5 * a_star) < 0.0;

    report(
        "C5 switching behavior",
        flips_above && holds_below && holds_at_half,
        &format!(
            "threshold {a_star:.4} (to 1e-3): flip at +{eps} {flips_above}, hold at -{eps} {holds_below}, hold at half {holds_at_half}"
        ),
    );
    within(start, Duration::from_secs(30), "C5");
}

/// C6: with sigma fixed at 1 and near-flat priors the sampler reproduces
/// the conjugate normal posterior for (alpha, beta): posterior means land
/// within 3 Monte Carlo standard errors and split R-hat stays below 1.05
/// on 4 chains.
#[test]
fn c6_hmc_vs_conjugate_oracle() {
    let start = Instant::now();
    let mut rng = SeededRng::new(5);
    let mut points = Vec::new();
    for t in 1..=5u32 {
        for _ in 0..3 {
            points.push((t, 1.0 + 0.5 * f64::from(t) + rng.standard_normal()));
        }
    }
    let series = TrendSeries {
        label: "conjugate".into(),
        score_kind: opinion_pulse_core::types::ScoreKind::Unity,
        points: points.clone(),
    };

    let prior_sd = 1e6;
    let spec = TrendModelSpec {
        prior_alpha: NormalPrior {
            mean: 0.0,
            sd: prior_sd,
        },
        prior_beta: NormalPrior {
            mean: 0.0,
            sd: prior_sd,
        },
        sigma: SigmaSpec::Fixed(1.0),
    };
    let cfg = SamplerConfig {
        chains: 4,
        warmup: 500,
        samples: 1000,
        step_size: 0.2,
        leapfrog_steps: 16,
        seed: 7,
    };
    let summary = hmc_sample(&series, &spec, &cfg).unwrap();

    // Conjugate closed form including the (tiny) prior ridge, exactly.
    let ridge = 1.0 / (prior_sd * prior_sd);
    let (mut s_tt, mut s_t, mut s_ty, mut s_y) = (0.0, 0.0, 0.0, 0.0);
    let n = points.len() as f64;
    for &(t, y) in &points {
        let t = f64::from(t);
        s_tt += t * t;
        s_t += t;
        s_ty += t * y;
        s_y += y;
    }
    let (a11, a12, a22) = (n + ridge, s_t, s_tt + ridge);
    let det = a11 * a22 - a12 * a12;
    let oracle_alpha = (a22 * s_y - a12 * s_ty) / det;
    let oracle_beta = (a11 * s_ty - a12 * s_y) / det;

    let mut pass = true;
    let mut detail = String::new();
    for (name, truth) in [("alpha", oracle_alpha), ("beta", oracle_beta)] {
        let p = summary.param(name).unwrap();
        let chains = &summary
            .draws
            .iter()
            .find(|d| d.name == name)
            .unwrap()
            .chains;
        let mcse = p.sd / ess(chains).sqrt();
        let devs = (p.mean - truth).abs() / mcse;
        pass &= devs < 3.0 && p.rhat < 1.05;
        detail.push_str(&format!(
            "{name}: mean {:.4} vs oracle {truth:.4} ({devs:.2} mcse), rhat {:.3}; ",
            p.mean, p.rhat
        ));
    }
    report(
        "C6 HMC vs conjugate oracle",
        pass,
        detail.trim_end_matches("; "),
    );
    within(start, Duration::from_secs(30), "C6");
}

/// C7: over 100 seeded synthetic score tables generated from
/// (alpha*, beta*, sigma*) = (3, -0.8, 0.7) on t in 1..5, the central 95%
/// posterior interval covers the truth at least 90 times per parameter.
#[test]
fn c7_trend_recovery_coverage() {
    let start = Instant::now();
    let truth = (3.0, -0.8, 0.7);
    let spec = TrendModelSpec::default();
    let mut covered = [0usize; 3];

    for run in 0..100u64 {
        let mut rng = SeededRng::with_stream(4242, run);
        let mut points = Vec::new();
        for t in 1..=5u32 {
            for _ in 0..8 {
                let mu = truth.0 + truth.1 * f64::from(t);
                points.push((t, mu + truth.2 * rng.standard_normal()));
            }
        }
        let series = TrendSeries {
            label: format!("run{run}"),
            score_kind: opinion_pulse_core::types::ScoreKind::Unity,
            points,
        };
        let cfg = SamplerConfig {
            chains: 4,
            warmup: 500,
            samples: 500,
            step_size: 0.2,
            leapfrog_steps: 16,
            seed: 1000 + run,
        };
        let summary = hmc_sample(&series, &spec, &cfg).unwrap();
        for (idx, (name, value)) in [("alpha", truth.0), ("beta", truth.1), ("sigma", truth.2)]
            .iter()
            .enumerate()
        {
            let p = summary.param(name).unwrap();
            let (lo, hi) = p.interval95();
            if (lo..=hi).contains(value) {
                covered[idx] += 1;
            }
        }
    }

    let pass = covered.iter().all(|&c| c >= 90);
    report(
        "C7 trend recovery coverage",
        pass,
        &format!(
            "95% interval coverage over 100 runs: alpha {}/100, beta {}/100, sigma {}/100",
            covered[0], covered[1], covered[2]
        ),
    );
    within(start, Duration::from_secs(300), "C7");
}

fn fixture_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/config.json")
}

fn run_cli(args: &[&str], output: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_opinion-pulse"))
        .args(args)
        .arg("--config")
        .arg(fixture_config())
        .arg("--output")
        .arg(output)
        .arg("--offline")
        .arg("--seed")
        .arg("11")
        .status()
        .expect("spawn opinion-pulse");
    assert!(status.success(), "{args:?} exited with {status}");
}

fn run_pipeline(output: &Path) {
    run_cli(&["ingest"], output);
    run_cli(&["score"], output);
    run_cli(&["summarize"], output);
    run_cli(&["trend"], output);
}

fn file_tree(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

/// C8: the checked-in fixture corpus drives ingest, scoring, the level-2
/// report and the trend stage fully offline and byte-reproducibly. The
/// corpus spans all four source kinds (>= 20 documents), one page serves a
/// 403, and one document needs a corrective retry; aggregates stay
/// n-consistent with the analysis store.
#[test]
fn c8_pipeline_replay() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    run_pipeline(&out_a);
    run_pipeline(&out_b);

    // Byte-identical outputs, timestamps isolated to the manifest.
    let (tree_a, tree_b) = (file_tree(&out_a), file_tree(&out_b));
    assert_eq!(tree_a, tree_b, "output file sets differ");
    let mut compared = 0usize;
    for rel in &tree_a {
        if rel.file_name().is_some_and(|n| n == "manifest.json") {
            continue;
        }
        let a = std::fs::read(out_a.join(rel)).unwrap();
        let b = std::fs::read(out_b.join(rel)).unwrap();
        assert_eq!(a, b, "{} differs between runs", rel.display());
        compared += 1;
    }

    let docs: Vec<SourceDocument> = JsonlStore::new(out_a.join("documents.jsonl"))
        .load_all(CorruptPolicy::Strict)
        .unwrap()
        .records;
    let analyses: Vec<DocumentAnalysis> = JsonlStore::new(out_a.join("analyses.jsonl"))
        .load_all(CorruptPolicy::Strict)
        .unwrap()
        .records;

    let kinds: std::collections::BTreeSet<&str> =
        docs.iter().map(|d| d.source_kind.as_str()).collect();
    let retry_recovered = analyses.iter().filter(|a| a.retry_count == 1).count();
    let relevant = analyses
        .iter()
        .filter(|a| a.relevant && a.scores.is_some())
        .count();

    // The ingest report records the 403 page among the failures.
    let report_json = std::fs::read_to_string(out_a.join("ingest_report.json")).unwrap();
    let report_value: serde_json::Value = serde_json::from_str(&report_json).unwrap();
    let saw_403 = report_value["web"]["failures"]
        .as_array()
        .unwrap()
        .iter()
        .any(|f| f["reason"].as_str().unwrap_or("").contains("403"));

    // n-consistency: per-period aggregate counts sum to the relevant total.
    let aggregates = std::fs::read_to_string(out_a.join("aggregates_by_period.csv")).unwrap();
    let n_sum: usize = aggregates
        .lines()
        .skip(1)
        .filter(|l| l.contains(",sentiment,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();

    let pass = compared > 10
        && docs.len() >= 20
        && kinds.len() == 4
        && retry_recovered == 1
        && saw_403
        && n_sum == relevant
        && analyses.iter().all(|a| a.is_consistent());
    report(
        "C8 pipeline replay",
        pass,
        &format!(
            "{} files byte-identical, {} documents over {} kinds, {} retry-recovered, 403 recorded: {saw_403}, aggregate n {} == relevant {}",
            compared,
            docs.len(),
            kinds.len(),
            retry_recovered,
            n_sum,
            relevant
        ),
    );
    within(start, Duration::from_secs(30), "C8");
}

/// C9: the reply parser is total under fuzzing and exactly the integer
/// cube [-5, 5]^3 validates.
#[test]
fn c9_score_contract() {
    let start = Instant::now();
    let mut rng = SeededRng::new(99);

    // Random bytes (lossy UTF-8) and mutated JSON shells.
    let mut fuzzed = 0usize;
    for _ in 0..20_000 {
        let len = (rng.uniform() * 120.0) as usize;
        let bytes: Vec<u8> = (0..len).map(|_| (rng.uniform() * 256.0) as u8).collect();
        let text = String::from_utf8_lossy(&bytes);
        let _ = parse_analysis(&text, "fuzz");
        fuzzed += 1;
    }
    let shells = [
        "{\"relevant\":%}",
        "{\"relevant\":true,\"summary\":%}",
        "{\"relevant\":true,\"summary\":\"s\",\"scores\":%}",
        "{\"relevant\":true,\"summary\":\"s\",\"scores\":{\"nato_sentiment\":%,\"nato_unity\":0,\"article5_trust\":0}}",
        "```json\n{\"relevant\":%\n```",
    ];
    for shell in shells {
        for _ in 0..2_000 {
            let token = match (rng.uniform() * 6.0) as usize {
                0 => "null".to_string(),
                1 => format!("{}", rng.standard_normal() * 100.0),
                2 => format!("{}", (rng.standard_normal() * 1e6) as i64),
                3 => "\"text\"".to_string(),
                4 => "[1,2]".to_string(),
                _ => "{}".to_string(),
            };
            let _ = parse_analysis(&shell.replace('%', &token), "fuzz");
            fuzzed += 1;
        }
    }

    // Exactly the integer cube validates, via both routes.
    let mut cube_ok = true;
    for a in -8i64..=8 {
        for b in -8i64..=8 {
            for c in -8i64..=8 {
                let inside =
                    (-5..=5).contains(&a) && (-5..=5).contains(&b) && (-5..=5).contains(&c);
                cube_ok &= validate_scores((a, b, c)).is_ok() == inside;
                let reply = format!(
                    "{{\"relevant\":true,\"summary\":\"s\",\"scores\":{{\"nato_sentiment\":{a},\"nato_unity\":{b},\"article5_trust\":{c}}}}}"
                );
                cube_ok &= parse_analysis(&reply, "cube").is_ok() == inside;
            }
        }
    }
    // A band of extreme magnitudes is rejected as well.
    for value in [i64::MIN, -1_000_000, 6, 1_000_000, i64::MAX] {
        cube_ok &= validate_scores((value, 0, 0)).is_err() || (-5..=5).contains(&value);
    }

    report(
        "C9 score contract",
        cube_ok,
        &format!("{fuzzed} fuzzed replies without panic, cube of 4913 triples exact"),
    );
    within(start, Duration::from_secs(10), "C9");
}
