use std::collections::HashMap;

use platoon_vdsa::experiment::{config_for, run_one};
use platoon_vdsa::metrics::{tail_prr, PrrKind, RunSummary};
use platoon_vdsa::scenario::{SimConfig, Strategy};
use platoon_vdsa::sim::run;
use platoon_vdsa::vdsa::PlatoonClock;

fn short(seconds: f64) -> SimConfig {
    SimConfig {
        sim_duration_s: seconds,
        ..SimConfig::default()
    }
}

const BUMBLEBEE: Strategy = Strategy::Bumblebee { cost_db: 0.0 };

#[test]
fn receptions_are_consistent_with_transmissions() {
    let cfg = config_for(&short(6.0), BUMBLEBEE, 2);
    let out = run(&cfg).unwrap();
    let log = &out.log;
    let tx: HashMap<u64, _> = log.tx.iter().map(|t| (t.tx_id, t)).collect();
    assert_eq!(tx.len(), log.tx.len(), "tx ids are unique");
    let mut per_tx: HashMap<u64, usize> = HashMap::new();
    for r in &log.rx {
        let t = tx.get(&r.tx_id).expect("reception of a logged transmission");
        assert_ne!(r.receiver, t.source);
        assert!(r.time_us >= t.start_us);
        if r.success {
            assert!(r.sinr_db >= cfg.radio.reception_sinr_threshold_db);
        }
        *per_tx.entry(r.tx_id).or_default() += 1;
    }
    let platoon_vehicles: usize = cfg.platoons.iter().map(|p| p.size).sum();
    assert!(per_tx.values().all(|&n| n < platoon_vehicles));
    for t in &log.tx {
        assert!(t.end_us > t.start_us);
        assert!(t.start_us < cfg.duration_us());
    }
    // sent plus dropped never exceeds generated; the rest is still queued
    let dropped = log.drops.len() as u64;
    assert!(log.tx.len() as u64 + dropped <= log.generated);
}

#[test]
fn residence_accounts_for_the_whole_run() {
    let cfg = config_for(&short(5.0), BUMBLEBEE, 3);
    let out = run(&cfg).unwrap();
    for per_channel in &out.log.residence_ms {
        assert_eq!(per_channel.iter().sum::<u64>(), 5000);
    }
}

#[test]
fn switches_happen_only_at_decision_boundaries() {
    let cfg = config_for(&short(30.0), BUMBLEBEE, 5);
    let out = run(&cfg).unwrap();
    for s in &out.log.switches {
        let clock = PlatoonClock::new(cfg.vdsa.duty, cfg.platoons[s.platoon].duty_offset_ms);
        assert!(clock.is_decision_boundary(s.time_us), "{s:?}");
        assert_ne!(s.old_channel, s.new_channel);
    }
    let mut current = vec![cfg.channel_plan.initial_tvws_channel; cfg.platoons.len()];
    for s in &out.log.switches {
        assert_eq!(s.old_channel, current[s.platoon]);
        current[s.platoon] = s.new_channel;
    }
}

#[test]
fn non_switching_strategies_never_switch() {
    for strategy in [Strategy::CchOnly, Strategy::FixedTvws] {
        let out = run(&config_for(&short(20.0), strategy, 1)).unwrap();
        assert!(out.log.switches.is_empty(), "{strategy}");
    }
    let cch = run(&config_for(&short(5.0), Strategy::CchOnly, 1)).unwrap();
    assert!(cch.log.tx.iter().all(|t| !t.band.is_tvws()));
    assert!(cch.log.sir.is_empty());
}

#[test]
fn removing_background_traffic_does_not_hurt_the_tail() {
    let tail = |cfg: &SimConfig| {
        (1..=3)
            .map(|seed| {
                let r = run_one(cfg, Strategy::CchOnly, seed, PrrKind::Both).unwrap();
                mean_tail(&r.summary)
            })
            .sum::<f64>()
            / 3.0
    };
    let busy = short(15.0);
    let quiet = SimConfig {
        background_density_per_km_lane: 0.0,
        ..busy.clone()
    };
    let (with_bg, without_bg) = (tail(&busy), tail(&quiet));
    assert!(without_bg >= with_bg, "{without_bg} < {with_bg}");
}

fn mean_tail(s: &RunSummary) -> f64 {
    let v: Vec<f64> = s.leader_prr.iter().filter_map(|p| tail_prr(p, 3)).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn identical_inputs_give_identical_outputs() {
    let cfg = short(4.0);
    let a = run_one(&cfg, BUMBLEBEE, 9, PrrKind::Both).unwrap();
    let b = run_one(&cfg, BUMBLEBEE, 9, PrrKind::Both).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.sir_samples_csv, b.sir_samples_csv);
    assert_eq!(a.switch_trace_csv, b.switch_trace_csv);
    let c = run_one(&cfg, BUMBLEBEE, 10, PrrKind::Both).unwrap();
    assert_ne!(a.sir_samples_csv, c.sir_samples_csv);
}

#[test]
fn platoons_keep_their_spacing() {
    let out = run(&config_for(&short(30.0), Strategy::FixedTvws, 4)).unwrap();
    assert!(out.mobility.min_intra_platoon_gap_m > 0.0);
    assert!(out.mobility.max_platoon_speed_mps < 60.0);
}
