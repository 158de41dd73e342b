//! Acceptance suite. Each test prints one `PASS` or `FAIL` line.
//!
//! Run with `cargo test -p loghmm --test acceptance -- --nocapture`.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{random_obs, random_params, rel_err, rng, watchdog_log};
use loghmm::cli::{demo_final_scores, score_log, train_model, PipelineConfig, PreparedLog};
use loghmm::embedding::{cbow_gradient, cbow_loss, cosine, train_cbow, CbowExample};
use loghmm::hmm::{fit_baum_welch, log_likelihood, sample};
use loghmm::ingest::{default_patterns, split_entries};
use loghmm::preprocess::{normalize_token, preprocess_entry, preprocess_text};
use loghmm::scorer::{score_sequence, score_with_contaminated_training};
use loghmm::synth::{
    brute_force_loglik, finite_diff_gradient, gen_minimal, MinimalScenario, Variant,
};
use loghmm::{
    EmbedConfig, EntryVector, FitConfig, HmmParams, RawLogText, ScoreSeries, ScoreStrategy,
    StopWordList, TokenSequence,
};
use rand::Rng;

fn report(name: &str, outcome: Result<String, String>) {
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            panic!("{name}: {detail}");
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn final_scores(contaminated: bool) -> Result<(Vec<f64>, Duration), String> {
    let start = Instant::now();
    let runs =
        demo_final_scores(8, contaminated, &FitConfig::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let last = runs
        .iter()
        .map(|(_, s)| s.entries.last().expect("non-empty").score)
        .collect();
    Ok((last, elapsed))
}

fn ordering(contaminated: bool) -> Result<String, String> {
    let (s, elapsed) = final_scores(contaminated)?;
    let detail = format!(
        "regular {:.4} < swapped {:.4} < novel {:.4} in {:?}",
        s[0], s[1], s[2], elapsed
    );
    ensure(s[0] < s[1] && s[1] < s[2], || {
        format!("ordering violated: {detail}")
    })?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("too slow: {detail}")
    })?;
    Ok(detail)
}

#[test]
fn c01_minimal_example_ordering() {
    report("minimal example ordering", ordering(false));
}

#[test]
fn c02_contaminated_training_ordering() {
    report("contaminated training ordering", ordering(true));
}

#[test]
fn c03_forward_matches_brute_force() {
    let run = || {
        let start = Instant::now();
        let mut r = rng(3);
        let mut worst = 0.0f64;
        for case in 0..100 {
            let n = [1, 2, 3][case % 3];
            let dim = [1, 2, 16][(case / 3) % 3];
            let len = r.random_range(1..=6);
            let p = random_params(n, dim, &mut r);
            let o = random_obs(len, dim, &mut r);
            let fwd = log_likelihood(&p, &o).map_err(|e| e.to_string())?;
            let brute = brute_force_loglik(&p, &o).map_err(|e| e.to_string())?;
            let err = rel_err(fwd, brute);
            worst = worst.max(err);
            ensure(err <= 1e-9, || {
                format!("case {case}: forward {fwd} brute {brute}")
            })?;
        }
        let elapsed = start.elapsed();
        ensure(elapsed < Duration::from_secs(10), || {
            format!("took {elapsed:?}")
        })?;
        Ok(format!(
            "100 instances, worst relative error {worst:.2e}, {elapsed:?}"
        ))
    };
    report("forward oracle equivalence", run());
}

#[test]
fn c04_em_is_monotone() {
    let run = || {
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let mut r = rng(100 + seed);
            let truth = random_params(2 + (seed % 2) as usize, 16, &mut r);
            let o = sample(&truth, 200, seed);
            let cfg = FitConfig {
                n_states: 2 + (seed % 3) as usize,
                seed,
                ..Default::default()
            };
            let fit = fit_baum_welch(&o, &cfg).map_err(|e| e.to_string())?;
            for w in fit.log_likelihoods.windows(2) {
                let drop = w[0] - w[1];
                worst = worst.max(drop);
                ensure(drop <= 1e-8, || {
                    format!("seed {seed}: log-likelihood fell by {drop:e}")
                })?;
            }
        }
        Ok(format!("20 sequences, largest decrease {worst:.2e}"))
    };
    report("EM monotonicity", run());
}

fn recovery_error(fitted: &HmmParams, truth: &HmmParams) -> f64 {
    let dist = |perm: [usize; 2]| {
        (0..2)
            .flat_map(|j| {
                fitted.means[perm[j]]
                    .iter()
                    .zip(&truth.means[j])
                    .map(|(a, b)| (a - b).abs())
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    };
    dist([0, 1]).min(dist([1, 0]))
}

#[test]
fn c05_parameter_recovery() {
    let sigma = 0.5;
    let truth = HmmParams {
        initial: vec![0.5, 0.5],
        transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        means: vec![vec![0.0, 0.0], vec![3.0, 3.0]],
        variances: vec![vec![sigma * sigma; 2]; 2],
        var_floor: 1e-3,
    };
    let run = || {
        let separation = 3.0 * 2f64.sqrt();
        ensure(separation >= 5.0 * sigma, || {
            "separation below 5 sigma".into()
        })?;
        let mut hits = 0;
        let mut misses = Vec::new();
        for seed in 0..100u64 {
            let o = sample(&truth, 500, seed);
            let cfg = FitConfig {
                seed,
                ..Default::default()
            };
            let fit = fit_baum_welch(&o, &cfg).map_err(|e| e.to_string())?;
            let err = recovery_error(&fit.params, &truth);
            if err <= 0.1 {
                hits += 1;
            } else {
                misses.push((seed, err));
            }
        }
        ensure(hits >= 95, || {
            format!("{hits}/100 seeds recovered; misses {misses:?}")
        })?;
        Ok(format!("{hits}/100 seeds within 0.1"))
    };
    report("parameter recovery", run());
}

fn unflatten(x: &[f64], vocab: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = x.chunks(dim).map(<[f64]>::to_vec).collect();
    (rows[..vocab].to_vec(), rows[vocab..].to_vec())
}

#[test]
fn c06_cbow_gradient_check() {
    let run = || {
        let (vocab, dim) = (9, 6);
        let mut r = rng(6);
        let mut worst = 0.0f64;
        for case in 0..50 {
            let x: Vec<f64> = (0..2 * vocab * dim)
                .map(|_| r.random_range(-0.8..0.8))
                .collect();
            let ex = CbowExample {
                context: (0..r.random_range(1..=4))
                    .map(|_| r.random_range(0..vocab))
                    .collect(),
                target: r.random_range(0..vocab),
                negatives: (0..5).map(|_| r.random_range(0..vocab)).collect(),
            };
            let (input, output) = unflatten(&x, vocab, dim);
            let (_, grad) = cbow_gradient(&input, &output, &ex);
            let mut analytic = vec![0.0; 2 * vocab * dim];
            let share = 1.0 / ex.context.len() as f64;
            for &c in &ex.context {
                for d in 0..dim {
                    analytic[c * dim + d] += share * grad.hidden[d];
                }
            }
            for (id, g) in &grad.output {
                for d in 0..dim {
                    analytic[(vocab + id) * dim + d] += g[d];
                }
            }
            let numeric = finite_diff_gradient(
                |p| {
                    let (i, o) = unflatten(p, vocab, dim);
                    cbow_loss(&i, &o, &ex)
                },
                &x,
                1e-5,
            );
            let diff = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let scale = analytic
                .iter()
                .map(|a| a * a)
                .sum::<f64>()
                .sqrt()
                .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
            let err = diff / scale;
            worst = worst.max(err);
            ensure(err < 1e-4, || {
                format!("triple {case}: relative error {err:e}")
            })?;
        }
        Ok(format!("50 triples, worst relative error {worst:.2e}"))
    };
    report("CBOW gradient check", run());
}

#[test]
fn c07_shared_contexts_are_closer() {
    let run = || {
        let lines = [
            "daemon x started on node",
            "daemon y started on node",
            "kernel z panic after upgrade",
        ];
        let corpus: Vec<TokenSequence> = (0..30)
            .flat_map(|_| {
                lines
                    .iter()
                    .map(|l| TokenSequence::new(l.split_whitespace().map(str::to_string).collect()))
            })
            .collect();
        let table = train_cbow(&corpus, &EmbedConfig::default()).map_err(|e| e.to_string())?;
        let xy = cosine(table.vector("x"), table.vector("y"));
        let xz = cosine(table.vector("x"), table.vector("z"));
        ensure(xy > xz, || format!("cos(x,y) {xy:.4} <= cos(x,z) {xz:.4}"))?;
        Ok(format!("cos(x,y) {xy:.4} > cos(x,z) {xz:.4}"))
    };
    report("embedding semantics", run());
}

const GOLDEN: &[(&str, &str)] = &[
    ("RPCcheck: NULLPROC error", "rpccheck nullproc error"),
    ("RemoteErrors: ErrorCount=3", "remoteerrors errorcount $nz"),
    ("pid change 12345 -> 12399", "pid change $nz $nz"),
    (
        "getpid: pid does not match process name",
        "getpid pid not match process name",
    ),
    ("No process, try to start", "no process try start"),
    (
        "RPCcheck fails: 3, kill 12345",
        "rpccheck fails $nz kill $nz",
    ),
    (
        "RemoteErrors: ErrorCount=1 toggled 2 times in 5 min",
        "remoteerrors errorcount $nz toggled $nz times $nz min",
    ),
    ("RPCcheck: clnt_create error", "rpccheck clnt create error"),
    ("getpid: no process", "getpid no process"),
    ("Signal TERM received", "signal term received"),
    (
        "Terminating threads, closing files...",
        "terminating threads closing files",
    ),
    ("Writer thread terminated", "writer thread terminated"),
    ("Interrupt thread terminated", "interrupt thread terminated"),
    ("Config file create error!", "config file create error"),
];

#[test]
fn c08_preprocessing_golden() {
    let run = || {
        let stops = StopWordList::builtin();
        for (raw, want) in GOLDEN {
            let got = preprocess_text(raw, &stops).to_string();
            ensure(got == *want, || {
                format!("{raw:?} -> {got:?}, want {want:?}")
            })?;
        }
        let log: String = GOLDEN
            .iter()
            .enumerate()
            .map(|(i, (raw, _))| format!("2023-05-01 12:00:{i:02} {raw}\n"))
            .collect();
        let entries = split_entries(&RawLogText::new("golden", log), &default_patterns());
        ensure(entries.len() == GOLDEN.len(), || {
            format!("{} entries", entries.len())
        })?;
        for (entry, (_, want)) in entries.iter().zip(GOLDEN) {
            let got = preprocess_entry(entry, &stops).to_string();
            ensure(got == *want, || {
                format!("entry {}: {got:?}, want {want:?}", entry.index)
            })?;
        }
        for (token, want) in [("3", "$nz"), ("0", "$zero"), ("xfelcpulla12s", "$host")] {
            let got = normalize_token(token);
            ensure(got == want, || {
                format!("{token:?} -> {got:?}, want {want:?}")
            })?;
        }
        Ok(format!("{} lines and 3 token rules", GOLDEN.len()))
    };
    report("preprocessing golden", run());
}

/// Largest gap between streamed scores and `-(log p(o_1..o_i) - log p(o_1..o_{i-1}))`.
fn oracle_gap(series: &ScoreSeries, obs: &[EntryVector]) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for e in &series.entries {
        let params = &series.models[e.model];
        let with = log_likelihood(params, &obs[..=e.index]).map_err(|e| e.to_string())?;
        let without = if e.index == 0 {
            0.0
        } else {
            log_likelihood(params, &obs[..e.index]).map_err(|e| e.to_string())?
        };
        let gap = (e.score - (without - with)).abs();
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn strategies() -> [ScoreStrategy; 4] {
    [
        ScoreStrategy::FullHistory,
        ScoreStrategy::SlidingWindow { window: 15 },
        ScoreStrategy::WarmStart {
            refit_period: 1,
            iterations: 5,
        },
        ScoreStrategy::WarmStart {
            refit_period: 4,
            iterations: 2,
        },
    ]
}

#[test]
fn c09_score_oracle_equivalence() {
    let run = || {
        let mut worst = 0.0f64;
        let mut checked = 0usize;
        let cfg = FitConfig::default();
        let mut sequences: Vec<Vec<EntryVector>> = (0..4u64)
            .map(|seed| {
                let mut r = rng(900 + seed);
                sample(&random_params(2 + seed as usize % 2, 3, &mut r), 40, seed)
            })
            .collect();
        sequences.extend(
            Variant::ALL
                .iter()
                .map(|&v| gen_minimal(&MinimalScenario::new(v))),
        );

        for obs in &sequences {
            let split = obs.len() * 3 / 4;
            for strategy in strategies() {
                let s = score_sequence(obs, split, strategy, &cfg).map_err(|e| e.to_string())?;
                worst = worst.max(oracle_gap(&s, obs)?);
                let c = score_with_contaminated_training(obs, strategy, &cfg)
                    .map_err(|e| e.to_string())?;
                worst = worst.max(oracle_gap(&c, obs)?);
                checked += s.entries.len() + c.entries.len();
            }
        }

        let pipeline = PipelineConfig {
            holdout: 12,
            ..Default::default()
        };
        let log = PreparedLog::from_text("watchdog", &watchdog_log(60), &pipeline)
            .map_err(|e| e.to_string())?;
        let (model, _) = train_model(&log, &pipeline).map_err(|e| e.to_string())?;
        let obs: Vec<EntryVector> = log
            .tokens
            .iter()
            .map(|t| loghmm::embedding::embed_entry(t, &model.embedding))
            .collect();
        for strategy in strategies() {
            let s =
                score_log(&log, &model, strategy, pipeline.holdout).map_err(|e| e.to_string())?;
            worst = worst.max(oracle_gap(&s, &obs)?);
            checked += s.entries.len();
        }

        ensure(worst <= 1e-9, || format!("largest gap {worst:e}"))?;
        Ok(format!("{checked} scores, largest gap {worst:.2e}"))
    };
    report("score oracle equivalence", run());
}

fn run_pipeline(dir: &Path, log: &Path, extra: &[&str]) -> Result<Vec<Vec<u8>>, String> {
    let bin = env!("CARGO_BIN_EXE_loghmm");
    let model = dir.join("model.json");
    let out = Command::new(bin)
        .arg("train")
        .arg(log)
        .arg("-o")
        .arg(&model)
        .args(["--holdout", "10", "--epochs", "10", "--seed", "7"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let mut files = vec![std::fs::read(&model).map_err(|e| e.to_string())?];
    for format in ["csv", "json"] {
        let report = dir.join(format!("report.{format}"));
        let series = dir.join(format!("series.{format}.csv"));
        let out = Command::new(bin)
            .arg("score")
            .arg(log)
            .arg("-m")
            .arg(&model)
            .arg("-o")
            .arg(&report)
            .arg("--series")
            .arg(&series)
            .args(["--format", format])
            .args(extra)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || {
            String::from_utf8_lossy(&out.stderr).into_owned()
        })?;
        files.push(std::fs::read(&report).map_err(|e| e.to_string())?);
        files.push(std::fs::read(&series).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

#[test]
fn c10_end_to_end_determinism() {
    let run = || {
        let input = tempfile::tempdir().map_err(|e| e.to_string())?;
        let log = input.path().join("watchdog.log");
        std::fs::write(&log, watchdog_log(50)).map_err(|e| e.to_string())?;
        let mut compared = 0;
        for extra in [
            &[][..],
            &["--strategy", "window", "--window", "12"][..],
            &["--strategy", "warm"][..],
        ] {
            let a = tempfile::tempdir().map_err(|e| e.to_string())?;
            let b = tempfile::tempdir().map_err(|e| e.to_string())?;
            let first = run_pipeline(a.path(), &log, extra)?;
            let second = run_pipeline(b.path(), &log, extra)?;
            ensure(first.len() == second.len(), || {
                "different output counts".into()
            })?;
            for (i, (x, y)) in first.iter().zip(&second).enumerate() {
                ensure(x == y, || format!("output {i} differs for {extra:?}"))?;
                ensure(!x.is_empty(), || format!("output {i} is empty"))?;
            }
            compared += first.len();
        }
        Ok(format!("{compared} file pairs byte-identical"))
    };
    report("end-to-end determinism", run());
}

#[test]
fn c11_window_covering_split_matches_full_history() {
    let run = || {
        let cfg = FitConfig::default();
        let mut cases = 0;
        for seed in 0..5u64 {
            let mut r = rng(1100 + seed);
            let obs = sample(&random_params(2, 4, &mut r), 30, seed);
            let split = 20;
            let full = score_sequence(&obs, split, ScoreStrategy::FullHistory, &cfg)
                .map_err(|e| e.to_string())?;
            for window in [split, split + 1, 100] {
                let win =
                    score_sequence(&obs, split, ScoreStrategy::SlidingWindow { window }, &cfg)
                        .map_err(|e| e.to_string())?;
                let (a, b) = (full.entries[0].score, win.entries[0].score);
                ensure(a.to_bits() == b.to_bits(), || {
                    format!("seed {seed} W={window}: {a} vs {b}")
                })?;
                cases += 1;
            }
        }
        Ok(format!("{cases} cases bit-identical"))
    };
    report("strategy consistency", run());
}
