//! Closed-loop Fisher feedback control and the straight-line (`β = 0`) baseline.
//!
//! Each step solves the multi-particle problem from the current belief,
//! applies the first control to the true plant, and runs one
//! predict/update/resample cycle of the particle filter. The estimate is the
//! weighted particle mean. The solver only ever sees the belief, never the
//! true state.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fisher::{fim_init, observation_information, FimMatrix, FimPropagator};
use crate::ocp::{ControlSequence, OcpConfig, OcpProblem};
use crate::particle_filter::ParticleSet;
use crate::plant::{observe, ControlVec, StateVec};
use crate::rng::{SeedStreams, Stream, StreamSource};
use crate::scenario::Scenario;
use crate::solver::SolverOptions;

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub ocp: OcpConfig,
    /// Filter particle count `N`.
    pub particles: usize,
    /// Re-weight the prior particles with `z_0` before the first solve.
    pub update_at_init: bool,
    pub solver: SolverOptions,
}

impl ControllerConfig {
    pub fn with_beta(&self, beta: f64) -> ControllerConfig {
        let mut c = self.clone();
        c.ocp.beta = beta;
        c
    }
}

/// Streams of `base`, except that every draw made at or after step `cut`
/// comes from `alt`. Observation `z_k` belongs to step `k − 1`'s transition,
/// so `TruthObservation` switches one step later. Controls `u_0 .. u_cut`
/// must not change under this substitution.
pub struct FutureReplaced<'a> {
    pub base: &'a dyn StreamSource,
    pub alt: &'a dyn StreamSource,
    pub cut: u64,
}

impl StreamSource for FutureReplaced<'_> {
    fn rng(&self, stream: Stream, step: u64) -> ChaCha8Rng {
        let future = match stream {
            Stream::TruthInitial | Stream::FilterInitial => false,
            Stream::TruthObservation => step > self.cut,
            _ => step >= self.cut,
        };
        if future {
            self.alt.rng(stream, step)
        } else {
            self.base.rng(stream, step)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub truth: StateVec,
    pub estimate: StateVec,
    /// Control applied at `k`; zero on the terminal row.
    pub control: ControlVec,
    pub observation: f64,
    pub trace_j: f64,
    pub ess: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Steps where all likelihoods vanished and weights were reset.
    pub degenerate_steps: Vec<usize>,
    /// Steps whose solve ended on a line-search failure.
    pub line_search_failures: Vec<usize>,
    /// Weighted posterior sets, when recorded.
    pub snapshots: Option<Vec<ParticleSet>>,
}

pub const EPISODE_HEADER: &str = "k,x1,x2,x3,v1,v2,v3,e1,e2,e3,ev1,ev2,ev3,u1,u2,u3,z,trJ,ess,iters";

impl EpisodeLog {
    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_steps.is_empty()
    }

    pub fn final_distance(&self, target: &StateVec) -> f64 {
        let last = &self.steps.last().expect("episode has steps").truth;
        (last.fixed_rows::<3>(0) - target.fixed_rows::<3>(0)).norm()
    }

    pub fn controls(&self) -> Vec<ControlVec> {
        self.steps[..self.steps.len() - 1]
            .iter()
            .map(|s| s.control)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(256 * self.steps.len());
        out.push_str(EPISODE_HEADER);
        out.push('\n');
        for s in &self.steps {
            let _ = write!(out, "{}", s.k);
            for v in s.truth.iter().chain(s.estimate.iter()).chain(s.control.iter()) {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{},{}", s.observation, s.trace_j, s.ess, s.iterations);
        }
        out
    }

    /// Parses the CSV written by [`EpisodeLog::to_csv`]. Floats round-trip exactly.
    pub fn from_csv(text: &str, seed: u64) -> Result<EpisodeLog> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == EPISODE_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing episode header".into(),
                })
            }
        }
        let mut steps = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: idx + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 20 {
                return Err(err(format!("expected 20 fields, found {}", f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
            let int = |i: usize| f[i].parse::<usize>().map_err(|e| err(format!("field {}: {e}", i + 1)));
            let mut v = [0.0; 15];
            for (j, slot) in v.iter_mut().enumerate() {
                *slot = num(j + 1)?;
            }
            steps.push(StepRecord {
                k: int(0)?,
                truth: StateVec::from_column_slice(&v[0..6]),
                estimate: StateVec::from_column_slice(&v[6..12]),
                control: ControlVec::from_column_slice(&v[12..15]),
                observation: num(16)?,
                trace_j: num(17)?,
                ess: num(18)?,
                iterations: int(19)?,
            });
        }
        Ok(EpisodeLog {
            seed,
            steps,
            degenerate_steps: Vec::new(),
            line_search_failures: Vec::new(),
            snapshots: None,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpisodeOptions {
    pub record_particles: bool,
}

fn update_or_reset(
    set: &ParticleSet,
    z: f64,
    scenario: &Scenario,
    degenerate: &mut Vec<usize>,
    k: usize,
) -> ParticleSet {
    match set.update(z, &scenario.terrain, &scenario.noise) {
        Ok(s) => s,
        Err(_) => {
            degenerate.push(k);
            let mut s = set.clone();
            s.reset_weights();
            s
        }
    }
}

/// Runs one episode drawing all randomness from `streams`; `seed` is only
/// recorded in the log.
pub fn run_episode(
    cfg: &ControllerConfig,
    scenario: &Scenario,
    seed: u64,
    streams: &dyn StreamSource,
    options: EpisodeOptions,
) -> Result<EpisodeLog> {
    cfg.ocp.validate()?;
    let horizon = cfg.ocp.horizon;
    let dyn_ = &scenario.dynamics;
    let map = &scenario.terrain;
    let nm = &scenario.noise;
    let propagator = FimPropagator::new(dyn_, nm);

    let mut truth = scenario.belief.sample(&mut streams.rng(Stream::TruthInitial, 0));
    let mut z = observe(&truth, map, nm.sample_observation(&mut streams.rng(Stream::TruthObservation, 0)))?;

    let mut degenerate_steps = Vec::new();
    let mut line_search_failures = Vec::new();
    let mut set = ParticleSet::init(
        &scenario.belief,
        cfg.particles,
        &mut streams.rng(Stream::FilterInitial, 0),
    )?;
    if cfg.update_at_init {
        set = update_or_reset(&set, z, scenario, &mut degenerate_steps, 0);
    }
    let mut fim: FimMatrix = fim_init(&scenario.belief, &set, map, nm, cfg.update_at_init)?;
    let mut snapshots = options.record_particles.then(Vec::new);
    let mut steps = Vec::with_capacity(horizon + 1);
    let mut warm: Option<ControlSequence> = None;

    for l in 0..horizon {
        let estimate = set.mean();
        let subset = set.top_k(cfg.ocp.ns.min(set.len()))?;
        let problem = OcpProblem::new(
            &subset,
            l,
            dyn_,
            map,
            nm,
            &cfg.ocp,
            fim,
            &mut streams.rng(Stream::SolverNoise, l as u64),
        )?;
        let solution = problem.solve(warm.as_ref(), &cfg.solver)?;
        if solution.line_search_failed() {
            line_search_failures.push(l);
        }
        let mut u = *solution.controls.first().expect("non-empty horizon");
        if let Some(b) = &cfg.ocp.bounds {
            u = b.clamp(&u);
        }
        steps.push(StepRecord {
            k: l,
            truth,
            estimate,
            control: u,
            observation: z,
            trace_j: fim.trace(),
            ess: set.ess(),
            iterations: solution.iterations,
        });

        let xi = nm.sample_process(&mut streams.rng(Stream::TruthProcess, l as u64));
        truth = dyn_.step(&truth, &u, &xi);
        let eta = nm.sample_observation(&mut streams.rng(Stream::TruthObservation, l as u64 + 1));
        z = observe(&truth, map, eta)?;

        let resampled = set.resample_systematic(&mut streams.rng(Stream::FilterResample, l as u64));
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(set);
        }
        let predicted = resampled.predict(dyn_, &u, nm, &mut streams.rng(Stream::FilterPredict, l as u64));
        set = update_or_reset(&predicted, z, scenario, &mut degenerate_steps, l + 1);
        let info = observation_information(set.iter(), map, nm)?;
        fim = propagator.advance(&fim, &info)?;
        warm = Some(solution.controls.shifted());
    }

    steps.push(StepRecord {
        k: horizon,
        truth,
        estimate: set.mean(),
        control: ControlVec::zeros(),
        observation: z,
        trace_j: fim.trace(),
        ess: set.ess(),
        iterations: 0,
    });
    if let Some(snaps) = snapshots.as_mut() {
        snaps.push(set);
    }
    Ok(EpisodeLog {
        seed,
        steps,
        degenerate_steps,
        line_search_failures,
        snapshots,
    })
}

/// Fisher feedback control episode with the configured `β`.
pub fn fisher_feedback_episode(cfg: &ControllerConfig, scenario: &Scenario, seed: u64) -> Result<EpisodeLog> {
    run_episode(cfg, scenario, seed, &SeedStreams::new(seed), EpisodeOptions::default())
}

/// Same loop with `β` forced to zero.
pub fn straight_baseline_episode(cfg: &ControllerConfig, scenario: &Scenario, seed: u64) -> Result<EpisodeLog> {
    fisher_feedback_episode(&cfg.with_beta(0.0), scenario, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{default_controller, default_scenario, plane_scenario};
    use crate::terrain::PlaneMap;

    fn small(beta: f64) -> ControllerConfig {
        let mut c = default_controller(beta, 300);
        c.ocp.horizon = 5;
        c.ocp.ns = 20;
        c.ocp.target = StateVec::new(600.0, 0.0, 100.0, 0.0, 0.0, 0.0);
        c.solver.max_iterations = 15;
        c
    }

    #[test]
    fn same_seed_same_log() {
        let s = default_scenario();
        let a = fisher_feedback_episode(&small(1e4), &s, 9).unwrap();
        let b = fisher_feedback_episode(&small(1e4), &s, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        let c = fisher_feedback_episode(&small(1e4), &s, 10).unwrap();
        assert_ne!(a.steps[0].truth, c.steps[0].truth);
    }

    #[test]
    fn zero_beta_is_the_baseline() {
        let s = default_scenario();
        let a = fisher_feedback_episode(&small(0.0), &s, 4).unwrap();
        let b = straight_baseline_episode(&small(1e4), &s, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimate_is_weighted_mean_of_logged_set() {
        let s = default_scenario();
        let log = run_episode(
            &small(1e4),
            &s,
            21,
            &SeedStreams::new(21),
            EpisodeOptions {
                record_particles: true,
            },
        )
        .unwrap();
        let snaps = log.snapshots.as_ref().unwrap();
        assert_eq!(snaps.len(), log.steps.len());
        for (k, (step, set)) in log.steps.iter().zip(snaps).enumerate() {
            assert_eq!(set.step(), k);
            let mean = set
                .iter()
                .fold(StateVec::zeros(), |acc, (x, w)| acc + x * w);
            assert!((mean - step.estimate).amax() < 1e-12, "step {k}");
        }
    }

    #[test]
    fn controls_ignore_future_noise() {
        let s = default_scenario();
        let cfg = small(1e4);
        let base = SeedStreams::new(33);
        let alt = SeedStreams::new(0xdead_beef);
        let reference = run_episode(&cfg, &s, 33, &base, EpisodeOptions::default()).unwrap();
        for cut in 0..cfg.ocp.horizon {
            let mixed = FutureReplaced {
                base: &base,
                alt: &alt,
                cut: cut as u64,
            };
            let log = run_episode(&cfg, &s, 33, &mixed, EpisodeOptions::default()).unwrap();
            for l in 0..=cut {
                assert_eq!(log.steps[l].control, reference.steps[l].control, "cut {cut}, step {l}");
            }
            // the substitution is real: the next truth state moves
            assert_ne!(log.steps[cut + 1].truth, reference.steps[cut + 1].truth);
        }
    }

    #[test]
    fn csv_round_trips() {
        let log = straight_baseline_episode(&small(0.0), &default_scenario(), 2).unwrap();
        let text = log.to_csv();
        assert!(text.starts_with(EPISODE_HEADER));
        let back = EpisodeLog::from_csv(&text, 2).unwrap();
        assert_eq!(back.steps, log.steps);
        let last = back.steps.last().unwrap();
        assert_eq!((last.k, last.iterations, last.control), (5, 0, ControlVec::zeros()));
        assert!(EpisodeLog::from_csv("k,x1\n", 0).is_err());
        assert!(EpisodeLog::from_csv(&format!("{EPISODE_HEADER}\n1,2,3\n"), 0).is_err());
    }

    #[test]
    fn flat_map_estimate_closes_on_target() {
        let s = plane_scenario(PlaneMap::flat(0.0));
        let mut cfg = default_controller(0.0, 2000);
        cfg.ocp.gamma = 100.0;
        let log = straight_baseline_episode(&cfg, &s, 17).unwrap();
        let dist: Vec<f64> = log
            .steps
            .iter()
            .map(|st| (st.estimate[0] - cfg.ocp.target[0]).hypot(st.estimate[1] - cfg.ocp.target[1]))
            .collect();
        for w in dist.windows(2) {
            assert!(w[1] < w[0], "{dist:?}");
        }
    }
}
