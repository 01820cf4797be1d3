//! Behavior-model rollouts cover less area than uniform-input rollouts, and
//! the analytic danger-zone probability agrees with the rollout fraction.

use gmreach::hull::polygon_area;
use gmreach::oracle::{run_monte_carlo, InputMode, McConfig};
use gmreach::propagate::predict;
use gmreach::risk::collision_probability;
use gmreach::scenario::{
    default_danger_zone, default_initial_belief, default_pilot_behavior, WorldConfig,
};
use gmreach::{PlantModel, PredictConfig};

#[test]
fn behavior_hull_is_smaller_and_risk_agrees() {
    let pm = PlantModel::default();
    let bm = default_pilot_behavior();
    let b0 = default_initial_belief(&WorldConfig::default());
    let zone = default_danger_zone();
    let traj = predict(&b0, &pm, &bm, &PredictConfig::default()).unwrap();
    for horizon in [1.5, 3.0, 4.0] {
        let steps = (horizon / pm.dt() + 1e-9).floor() as usize;
        let uniform = run_monte_carlo(
            &b0,
            &pm,
            None,
            &McConfig::new(5000, steps, InputMode::UniformBounds, 5),
        )
        .unwrap();
        let behavior = run_monte_carlo(
            &b0,
            &pm,
            Some(&bm),
            &McConfig::new(5000, steps, InputMode::BehaviorModel, 5),
        )
        .unwrap();
        let (au, ab) = (
            polygon_area(&uniform.convex_hull),
            polygon_area(&behavior.convex_hull),
        );
        assert!(au > ab, "horizon {horizon}: uniform {au} vs behavior {ab}");

        let p = collision_probability(&traj.beliefs[steps], &zone);
        let hits = behavior
            .final_states
            .iter()
            .filter(|s| zone.contains(s[0], s[1]))
            .count();
        let frac = hits as f64 / 5000.0;
        let sigma = (p * (1.0 - p) / 5000.0).sqrt();
        assert!(
            (p - frac).abs() <= 3.0 * sigma,
            "horizon {horizon}: analytic {p} vs rollouts {frac}"
        );
    }
}

#[test]
fn all_rollouts_lie_inside_their_hull() {
    let pm = PlantModel::default();
    let b0 = default_initial_belief(&WorldConfig::default());
    let mc = run_monte_carlo(
        &b0,
        &pm,
        None,
        &McConfig::new(500, 30, InputMode::UniformBounds, 2),
    )
    .unwrap();
    for p in mc.final_positions() {
        assert!(gmreach::hull::contains(&mc.convex_hull, &p, 1e-9));
    }
}
