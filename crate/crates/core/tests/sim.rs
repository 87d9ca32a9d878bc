use std::path::PathBuf;
use std::time::Instant;

use maskloop_core::firmware::{replay, SensorLayout};
use maskloop_core::params::ModelParams;
use maskloop_core::scenario::{Phase, Scenario, Staircase};
use maskloop_core::sim::{
    desorb_after_doff, fit_test, humidity_staircase, sealed_wear_trace, step_lig, LoopbackLink, SimError, Simulation,
};
use maskloop_core::{ActivityKind, AlertCode, DeviceConfig, DeviceMode, Environment};
use proptest::prelude::*;

fn golden() -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/golden.toml");
    Scenario::from_file(&path).unwrap()
}

fn short(seed: u64) -> Scenario {
    let mut sc = golden();
    sc.seed = seed;
    sc.timeline = vec![
        Phase::Calibrate { timeout_s: 10.0 },
        Phase::Don { settle_s: 10.0 },
        Phase::Exercise {
            activity: ActivityKind::HeadUpDown,
            duration_s: 8.0,
            amplitude_mm: None,
            period_s: None,
            breath_rate: None,
            tidal_volume_l: None,
        },
    ];
    sc
}

#[test]
fn golden_fit_test_matches_pinned_table() {
    let start = Instant::now();
    let (table, on, off) = fit_test(&golden()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 30.0);
    let pinned = [
        (ActivityKind::NormalBreathing, 34.00, 100.00),
        (ActivityKind::DeepBreathing, 28.00, 100.00),
        (ActivityKind::HeadSideToSide, 29.79, 100.00),
        (ActivityKind::HeadUpDown, 24.10, 99.95),
    ];
    for (k, ff_off, ff_on) in pinned {
        let row = table.rows.iter().find(|r| r.exercise == k).unwrap();
        assert!((row.ff_autofit_off - ff_off).abs() < 0.01, "{row:?}");
        assert!((row.ff_autofit_on - ff_on).abs() < 0.01, "{row:?}");
        assert!(row.ratio > 1.0);
    }
    assert!((table.mean_ratio - 3.504).abs() < 0.001, "{}", table.mean_ratio);
    assert_eq!(table.converged_after_ticks, Some(14));
    assert_eq!(off.summary.converged_after_ticks, None);
    assert!(off.summary.motor_commands == 0);
    assert!(on.summary.motor_commands > 0);
}

#[test]
fn fit_test_agrees_with_single_runs() {
    let sc = short(5);
    let kinds = sc.exercise_kinds();
    assert!(matches!(fit_test(&sc), Err(SimError::MissingExercises(_))));
    let on = Simulation::new(Scenario { autofit: true, ..sc.clone() }).unwrap().run().unwrap();
    let mut full = golden();
    full.seed = 5;
    let (table, table_on, _) = fit_test(&full).unwrap();
    let single = Simulation::new(Scenario { autofit: true, ..full }).unwrap().run().unwrap();
    assert_eq!(single.rows, table_on.rows);
    let on_ff = table.rows.iter().map(|r| r.ff_autofit_on).collect::<Vec<_>>();
    let single_ff: Vec<f64> = table
        .rows
        .iter()
        .map(|r| single.summary.exercises.iter().find(|e| e.kind == r.exercise).unwrap().ff_mean)
        .collect();
    assert_eq!(on_ff, single_ff);
    assert_eq!(kinds, vec![ActivityKind::HeadUpDown]);
    assert!(on.summary.converged_after_ticks.is_some());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let a = Simulation::new(short(11)).unwrap().run().unwrap();
    let b = Simulation::new(short(11)).unwrap().run().unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(
        serde_json::to_string(&a.summary).unwrap(),
        serde_json::to_string(&b.summary).unwrap()
    );

    let messages = |seed| {
        let mut sim = Simulation::with_link(short(seed), LoopbackLink::recording()).unwrap();
        while sim.step().unwrap() {}
        sim.link().received().to_vec()
    };
    assert_eq!(messages(11), messages(11));
    assert_ne!(messages(11), messages(12));
}

#[test]
fn recorded_firmware_inputs_replay_exactly() {
    let sc = short(7);
    let cfg = sc.device.clone();
    let hw = sc.model.hardware();
    let layout = SensorLayout::from(&sc.face);
    let mut sim = Simulation::new(sc).unwrap().record_inputs();
    while sim.step().unwrap() {}
    let inputs = sim.firmware_inputs().unwrap().to_vec();
    let (_, transitions) = replay(cfg, hw, layout, &inputs).unwrap();
    assert_eq!(transitions, sim.firmware().transitions());
}

#[test]
fn uplink_frames_all_verify() {
    let mut sim = Simulation::new(short(2)).unwrap();
    while sim.step().unwrap() {}
    let stats = sim.link().decoder().stats();
    assert!(stats.frames > 0);
    assert_eq!(stats.frames, sim.link().frames_up());
    assert_eq!(stats.bad_crc + stats.bad_length + stats.bad_magic_bytes + stats.seq_gaps, 0);
}

#[test]
fn locked_straps_never_converge() {
    let mut sc = short(1);
    sc.straps.tension_max_n = 0.0;
    match Simulation::new(sc).unwrap().run() {
        Err(SimError::NonConvergence { tension_left, tension_right, colors, .. }) => {
            assert_eq!((tension_left, tension_right), (0.0, 0.0));
            assert!(!colors.contains("green"), "{colors}");
        }
        other => panic!("expected non-convergence, got {:?}", other.map(|o| o.summary)),
    }
}

#[test]
fn tiny_budget_is_reported() {
    let mut sc = short(1);
    sc.tick_budget = 2;
    assert!(matches!(
        Simulation::new(sc).unwrap().run(),
        Err(SimError::NonConvergence { budget: 2, .. })
    ));
}

#[test]
fn long_wear_alerts_doffs_and_desorbs() {
    let mut sc = golden();
    sc.timeline = vec![
        Phase::Calibrate { timeout_s: 10.0 },
        Phase::Don { settle_s: 20.0 },
        Phase::Wear {
            duration_s: 1800.0,
            activity: ActivityKind::NormalBreathing,
            amplitude_mm: None,
            period_s: None,
            breath_rate: None,
            tidal_volume_l: None,
        },
    ];
    let out = Simulation::new(sc).unwrap().without_rows().run().unwrap();
    let s = &out.summary;
    let alert = s.alerts.iter().find(|a| a.code == AlertCode::HumidityDoff).expect("no doff alert");
    let minutes = alert.tick as f64 * 0.1 / 60.0;
    assert!((5.0..15.0).contains(&minutes), "{minutes}");
    assert_eq!(s.final_mode, DeviceMode::Idle);
    let modes: Vec<_> = s.transitions.iter().map(|t| t.to).collect();
    assert!(modes.ends_with(&[DeviceMode::DoffAlerted, DeviceMode::Desorbing, DeviceMode::Idle]), "{modes:?}");
    assert!(s.energy.heater_mj > 0.0);
}

#[test]
fn staircase_plateaus_rise_and_purges_recover() {
    let model = ModelParams::default();
    let st = Staircase::default();
    let r = humidity_staircase(&model.lig, &model.heater, &st, 0.1).unwrap();
    assert!((r.purge_temp_c - st.purge_c).abs() < 1e-9);
    assert!(r.plateaus.windows(2).all(|w| w[1].plateau_change > w[0].plateau_change));
    assert!(r.plateaus.iter().all(|p| p.post_purge_change < 0.02));
    assert_eq!(r.plateaus[0].plateau_change, 0.0);
}

#[test]
fn sealed_wear_then_desorb() {
    let model = ModelParams::default();
    let env = Environment::default();
    let (trace, lig, env_end) = sealed_wear_trace(&model, &env, 1200.0, 0.1, 10.0).unwrap();
    assert!(trace.windows(2).all(|w| w[1].rh_in >= w[0].rh_in));
    assert!(env_end.rh_in > 0.9);
    let cfg = DeviceConfig::default();
    let (ticks, change) = desorb_after_doff(&lig, &model, &cfg, &env_end, 1800.0).unwrap().expect("not recovered");
    assert!(change < cfg.desorb_done_eps);
    assert!(ticks as f64 * cfg.tick_period_s < 1800.0);
}

#[test]
fn substepping_is_stable_where_one_step_is_not() {
    let lig = ModelParams::default().lig;
    assert!(lig.max_stable_dt(0.0, 125.0) < 0.1);
    let s = step_lig(&lig.clone(), 0.0, 125.0, 0.1).unwrap();
    assert!((0.0..=1.0).contains(&s.occupancy));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trace_rows_stay_physical(seed in any::<u64>()) {
        let sc = short(seed);
        let max = sc.straps.tension_max_n;
        let ambient = sc.environment.ambient_rh;
        let eta = sc.environment.filter_efficiency;
        let out = Simulation::new(sc).unwrap().run().unwrap();
        for r in &out.rows {
            prop_assert!((0.0..=max).contains(&r.tension_left) && (0.0..=max).contains(&r.tension_right));
            prop_assert!(r.rh_in >= ambient - 1e-12 && r.rh_in <= 1.0);
            prop_assert!(r.ff >= 1.0 - 1e-12 && r.ff <= 1.0 / (1.0 - eta) + 1e-9);
            prop_assert!(r.pressure_kpa.iter().all(|p| *p >= 0.0));
        }
        prop_assert!(out.rows.windows(2).all(|w| w[1].tick == w[0].tick + 1));
    }
}
