#![allow(dead_code)]

use std::path::PathBuf;

use jetstack_gcs::config::ScheduledEvent;
use jetstack_gcs::{CommandKind, Runtime, Scenario, ScenarioConfig};

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

pub fn load(name: &str, overrides: &[&str]) -> Scenario {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    Scenario::load(&config_path(name), &o).unwrap()
}

pub fn event(t: f64, kind: CommandKind) -> ScheduledEvent {
    ScheduledEvent { t, kind }
}

/// Short take-off: 5 s alpha ramp from t = 0.5, +1 m at t = 5.5.
pub fn quick_takeoff(duration: f64) -> Scenario {
    let mut c = ScenarioConfig::new("quick-takeoff", duration);
    c.seed = 3;
    c.schedule.ramp_rate = 0.2;
    c.events = vec![
        event(0.0, CommandKind::Arm),
        event(0.5, CommandKind::StartTakeoff),
        event(5.5, CommandKind::SetReference { z_offset: Some(1.0), trajectory: None }),
    ];
    Scenario::from_config(c).unwrap()
}

pub fn run_until(rt: &mut Runtime, t: f64) {
    while rt.time() < t - 1e-9 && !rt.finished() {
        rt.tick();
    }
}
