//! Paired Monte Carlo campaigns and per-step RMSE.

use std::fmt::Write as _;
use std::ops::Range;

use rayon::prelude::*;

use crate::controller::{fisher_feedback_episode, straight_baseline_episode, ControllerConfig, EpisodeLog};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scenario::Scenario;

/// Largest excluded fraction a campaign tolerates.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.05;

pub const RMSE_HEADER: &str = "k,rmse_x1_fisher,rmse_x2_fisher,rmse_x1_straight,rmse_x2_straight";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Fisher,
    Straight,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RmseReport {
    pub runs: usize,
    /// Per step: `[x1 fisher, x2 fisher, x1 straight, x2 straight]`.
    pub rows: Vec<[f64; 4]>,
    pub fingerprint: String,
}

impl RmseReport {
    pub fn horizontal(&self, arm: Arm, k: usize) -> f64 {
        let r = &self.rows[k];
        match arm {
            Arm::Fisher => r[0].hypot(r[1]),
            Arm::Straight => r[2].hypot(r[3]),
        }
    }

    /// Mean over `steps` of the joint horizontal RMSE `sqrt(rmse_x1² + rmse_x2²)`.
    pub fn mean_horizontal(&self, arm: Arm, steps: Range<usize>) -> f64 {
        let n = steps.len() as f64;
        steps.map(|k| self.horizontal(arm, k)).sum::<f64>() / n
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RMSE_HEADER);
        out.push('\n');
        for (k, r) in self.rows.iter().enumerate() {
            let _ = writeln!(out, "{k},{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
        out
    }
}

fn rmse_coordinate(logs: &[EpisodeLog], k: usize, c: usize) -> f64 {
    let sum: f64 = logs
        .iter()
        .map(|l| {
            let s = &l.steps[k];
            (s.estimate[c] - s.truth[c]).powi(2)
        })
        .sum();
    (sum / logs.len() as f64).sqrt()
}

/// RMSE across runs. Both arms must hold the same number of equal-length logs.
pub fn rmse_from_logs(fisher: &[EpisodeLog], straight: &[EpisodeLog], fingerprint: &str) -> Result<RmseReport> {
    if fisher.is_empty() || fisher.len() != straight.len() {
        return Err(Error::Config(format!(
            "arms hold {} and {} runs",
            fisher.len(),
            straight.len()
        )));
    }
    let steps = fisher[0].steps.len();
    if fisher.iter().chain(straight).any(|l| l.steps.len() != steps) {
        return Err(Error::Config("episode logs differ in length".into()));
    }
    let rows = (0..steps)
        .map(|k| {
            [
                rmse_coordinate(fisher, k, 0),
                rmse_coordinate(fisher, k, 1),
                rmse_coordinate(straight, k, 0),
                rmse_coordinate(straight, k, 1),
            ]
        })
        .collect();
    Ok(RmseReport {
        runs: fisher.len(),
        rows,
        fingerprint: fingerprint.to_string(),
    })
}

/// 64-bit FNV-1a, rendered as hex.
pub fn fingerprint(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Excluded {
    pub run: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Campaign {
    pub seeds: Vec<u64>,
    /// Kept runs, paired by index.
    pub fisher: Vec<EpisodeLog>,
    pub straight: Vec<EpisodeLog>,
    pub kept: Vec<usize>,
    pub excluded: Vec<Excluded>,
    pub report: RmseReport,
}

/// Seed of run `i` under `master`.
pub fn run_seed(master: u64, run: usize) -> u64 {
    derive_seed(master, run as u64)
}

fn pair(cfg: &ControllerConfig, scenario: &Scenario, seed: u64) -> std::result::Result<(EpisodeLog, EpisodeLog), String> {
    let f = fisher_feedback_episode(cfg, scenario, seed).map_err(|e| format!("fisher arm: {e}"))?;
    let s = straight_baseline_episode(cfg, scenario, seed).map_err(|e| format!("straight arm: {e}"))?;
    if f.is_degenerate() || s.is_degenerate() {
        return Err("degenerate particle weights".into());
    }
    Ok((f, s))
}

/// Runs `runs` paired episodes on `jobs` worker threads. Results do not
/// depend on `jobs`. A run is dropped from both arms when either arm fails
/// or hits degenerate weights.
pub fn monte_carlo(
    cfg: &ControllerConfig,
    scenario: &Scenario,
    runs: usize,
    master_seed: u64,
    jobs: usize,
    fingerprint_text: &str,
) -> Result<Campaign> {
    if runs == 0 {
        return Err(Error::Config("campaign needs at least one run".into()));
    }
    let seeds: Vec<u64> = (0..runs).map(|i| run_seed(master_seed, i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<_> = pool.install(|| seeds.par_iter().map(|&seed| pair(cfg, scenario, seed)).collect());

    let mut fisher = Vec::with_capacity(runs);
    let mut straight = Vec::with_capacity(runs);
    let mut kept = Vec::with_capacity(runs);
    let mut excluded = Vec::new();
    for (run, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((f, s)) => {
                fisher.push(f);
                straight.push(s);
                kept.push(run);
            }
            Err(reason) => excluded.push(Excluded {
                run,
                seed: seeds[run],
                reason,
            }),
        }
    }
    if excluded.len() as f64 > MAX_EXCLUDED_FRACTION * runs as f64 || kept.is_empty() {
        return Err(Error::TooManyExclusions {
            excluded: excluded.len(),
            runs,
        });
    }
    let report = rmse_from_logs(&fisher, &straight, &fingerprint(fingerprint_text))?;
    Ok(Campaign {
        seeds,
        fisher,
        straight,
        kept,
        excluded,
        report,
    })
}
