use platoon_vdsa::propagation::DttField;
use platoon_vdsa::scenario::{load_config, load_config_str, SimConfig, Strategy};

#[test]
fn default_config_round_trips_through_toml() {
    let cfg = SimConfig::default();
    assert_eq!(load_config_str(&cfg.to_toml(), None).unwrap(), cfg);
}

#[test]
fn default_scenario_shape() {
    let cfg = SimConfig::default();
    assert_eq!(cfg.channel_plan.tvws_center_freqs_mhz, vec![490.0, 498.0, 506.0, 514.0, 522.0]);
    assert_eq!(cfg.lane_count, 4);
    assert_eq!(cfg.road_length_m, 5000.0);
    assert_eq!(cfg.sim_duration_s, 140.0);
    assert_eq!(cfg.tick_ms, 1);
    assert_eq!(cfg.platoons.len(), 2);
    assert_eq!(cfg.platoons[0].direction, -cfg.platoons[1].direction);
    assert_eq!(cfg.dtt_protection.required_sir_db, 39.5);
    assert_eq!(cfg.dtt_receivers.len(), 10);
}

#[test]
fn field_file_resolves_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = Vec::new();
    DttField::synthetic_default().write_csv(&mut csv).unwrap();
    std::fs::write(dir.path().join("field.csv"), csv).unwrap();
    let text = SimConfig::default().to_toml();
    let start = text.find("[[dtt_field.channels]]").expect("inline field section");
    let mut with_file = text[..start].to_string();
    with_file.push_str("[dtt_field]\npath = \"field.csv\"\n");
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, with_file).unwrap();
    let cfg = load_config(&path).unwrap();
    let a = cfg.field();
    let b = DttField::synthetic_default();
    assert_eq!(a.channels.len(), b.channels.len());
    for (x, y) in a.channels.iter().zip(&b.channels) {
        for (s, t) in x.segments.iter().zip(&y.segments) {
            assert!((s.intercept_dbm - t.intercept_dbm).abs() < 1e-9);
            assert!((s.slope_db_per_m - t.slope_db_per_m).abs() < 1e-12);
        }
    }
}

#[test]
fn validation_names_the_field() {
    let mut cfg = SimConfig::default();
    cfg.channel_plan.tvws_center_freqs_mhz = vec![490.0, 500.0];
    let err = cfg.validate().unwrap_err().to_string();
    assert!(err.contains("tvws_center_freqs_mhz"), "{err}");

    let mut cfg = SimConfig::default();
    cfg.platoons[1].direction = cfg.platoons[0].direction;
    assert!(cfg.validate().is_err());

    assert!(load_config_str("sim_duration_s = 10.0\nbogus = 1\n", None).is_err());
}

#[test]
fn strategies_parse_and_print() {
    for s in ["cch-only", "fixed-tvws", "bumblebee:0", "bumblebee:3", "bumblebee:6", "bumblebee:1.5"] {
        assert_eq!(s.parse::<Strategy>().unwrap().to_string(), s);
    }
    assert!("bumblebee:x".parse::<Strategy>().is_err());
    assert!("greedy".parse::<Strategy>().is_err());
}
