#![allow(dead_code)]

use loghmm::{EntryVector, HmmParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn prob_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn random_params(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> HmmParams {
    HmmParams {
        initial: prob_vector(n, rng),
        transition: (0..n).map(|_| prob_vector(n, rng)).collect(),
        means: (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect(),
        variances: (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0.2..2.0)).collect())
            .collect(),
        var_floor: 1e-3,
    }
}

pub fn random_obs(len: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<EntryVector> {
    (0..len)
        .map(|_| EntryVector((0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()))
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// A watchdog-style log: repetitive status lines, occasional toggles, and an
/// error burst near the end.
pub fn watchdog_log(regular: usize) -> String {
    let mut out = String::new();
    let mut second = 0u32;
    let mut line = |text: &str, out: &mut String| {
        let (m, s) = (second / 60, second % 60);
        out.push_str(&format!("2023-05-01 12:{m:02}:{s:02} {text}\n"));
        second += 7;
    };
    for i in 0..regular {
        if i % 9 == 4 {
            line(
                &format!(
                    "RemoteErrors: ErrorCount={} toggled {} times in {} min",
                    1 + i % 3,
                    2 + i % 4,
                    5
                ),
                &mut out,
            );
        } else {
            line(&format!("RemoteErrors: ErrorCount={}", 1 + i % 5), &mut out);
        }
    }
    line("RPCcheck: NULLPROC error", &mut out);
    out.push_str("    at xfelcpulla12s:/usr/bin/watchdog\n");
    line("RPCcheck fails: 3, kill 12345", &mut out);
    line("getpid: pid does not match process name", &mut out);
    line("No process, try to start", &mut out);
    line("pid change 12345 -> 12399", &mut out);
    out
}
