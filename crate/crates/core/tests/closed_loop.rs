use dualnav::controller::{fisher_feedback_episode, straight_baseline_episode, EpisodeLog};
use dualnav::harness::campaign::{monte_carlo, Arm};
use dualnav::scenario::{default_controller, default_scenario, deterministic_limit, DEFAULT_BETA};
use dualnav::terrain::PlaneMap;

fn max_offset(log: &EpisodeLog) -> f64 {
    log.steps.iter().map(|s| s.truth[1]).fold(f64::MIN, f64::max)
}

#[test]
fn large_beta_detours_over_the_bumps() {
    let scenario = default_scenario();
    let cfg = default_controller(DEFAULT_BETA, 2000);
    let fisher = fisher_feedback_episode(&cfg, &scenario, 7).unwrap();
    let straight = straight_baseline_episode(&cfg, &scenario, 7).unwrap();
    // bumps sit between 380 and 850 m off the corridor
    assert!(max_offset(&fisher) > 380.0, "{}", max_offset(&fisher));
    assert!(max_offset(&straight) < 380.0, "{}", max_offset(&straight));
    let tr = |l: &EpisodeLog| l.steps.last().unwrap().trace_j;
    assert!(tr(&fisher) > tr(&straight));
    assert_ne!(fisher.steps[0].control, straight.steps[0].control);
}

#[test]
fn deterministic_limit_has_vanishing_error() {
    let scenario = deterministic_limit(PlaneMap::flat(0.0).into()).unwrap();
    let cfg = default_controller(0.0, 200);
    let campaign = monte_carlo(&cfg, &scenario, 3, 4, 1, "").unwrap();
    for k in 0..=cfg.ocp.horizon {
        for arm in [Arm::Fisher, Arm::Straight] {
            let e = campaign.report.horizontal(arm, k);
            assert!(e < 1e-3, "step {k}: {e}");
        }
    }
    let target = cfg.ocp.target;
    for log in &campaign.straight {
        assert!(log.final_distance(&target) < 1e-3);
    }
}
