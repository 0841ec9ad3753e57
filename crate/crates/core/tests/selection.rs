use proptest::prelude::*;

use platoon_vdsa::vdsa::{
    fuse_and_average, quietest, select_channel, switching_decision, AveragingDomain, EnergyLedger,
    EnergyReport, Phase, SwitchDecision,
};

/// Walks the sensed channels quietest first and moves whenever the rule holds.
fn loop_oracle(avg: &[Option<f64>], current: usize, c: f64, t: f64) -> usize {
    let mut order: Vec<usize> = (0..avg.len()).filter(|&i| avg[i].is_some()).collect();
    order.sort_by(|&a, &b| avg[a].unwrap().total_cmp(&avg[b].unwrap()).then(a.cmp(&b)));
    let mut ch = current;
    for i in order {
        let e_i = avg[i].unwrap();
        if avg[ch].unwrap_or(f64::INFINITY) > e_i + c && e_i <= t {
            ch = i;
        }
    }
    ch
}

fn averages() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(
        prop::option::weighted(0.85, (-400i32..=-160).prop_map(|q| f64::from(q) / 4.0)),
        1..8,
    )
}

fn report(channel: usize, energy_dbm: f64, phase: Phase) -> EnergyReport {
    EnergyReport {
        vehicle: 1,
        round: 0,
        cycle: 0,
        phase,
        channel,
        energy_dbm,
    }
}

proptest! {
    #[test]
    fn selection_equals_the_loop(avg in averages(), cur in 0usize..8, c in prop::sample::select(vec![0.0, 3.0, 6.0]), t in -80i32..=-50) {
        let cur = cur % avg.len();
        let t = f64::from(t);
        prop_assert_eq!(select_channel(&avg, cur, c, t), loop_oracle(&avg, cur, c, t));
    }

    #[test]
    fn higher_cost_never_adds_a_switch(avg in averages(), cur in 0usize..8, c in 0.0f64..10.0, extra in 0.0f64..10.0) {
        let cur = cur % avg.len();
        let moved = |c| select_channel(&avg, cur, c, -60.0) != cur;
        prop_assert!(!moved(c + extra) || moved(c));
    }

    #[test]
    fn never_switches_onto_a_channel_above_the_threshold(avg in averages(), cur in 0usize..8, c in 0.0f64..6.0, t in -90.0f64..-45.0) {
        let cur = cur % avg.len();
        let next = select_channel(&avg, cur, c, t);
        if next != cur {
            prop_assert!(avg[next].unwrap() <= t);
            prop_assert_eq!(Some(next), quietest(&avg).map(|q| q.0));
        }
    }

    #[test]
    fn the_quietest_current_channel_is_kept(avg in averages(), c in 0.0f64..6.0, t in -90.0f64..-45.0) {
        if let Some((best, _)) = quietest(&avg) {
            prop_assert_eq!(select_channel(&avg, best, c, t), best);
        }
    }

    #[test]
    fn decision_is_inclusive_at_the_threshold(e_ch in -100.0f64..-40.0, e_i in -100.0f64..-40.0, c in 0.0f64..6.0) {
        let d = switching_decision(e_ch, e_i, c, e_i, 4);
        prop_assert_eq!(d == SwitchDecision::SwitchTo(4), e_ch > e_i + c);
    }

    #[test]
    fn linear_fusion_lies_between_the_readings(readings in prop::collection::vec(-110.0f64..-30.0, 1..20)) {
        let mut ledger = EnergyLedger::new(3, 0);
        for &e in &readings {
            ledger.push(report(2, e, Phase::Sensing)).unwrap();
        }
        let lin = fuse_and_average(&ledger, AveragingDomain::Linear)[2].unwrap();
        let db = fuse_and_average(&ledger, AveragingDomain::Db)[2].unwrap();
        let lo = readings.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = readings.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo - 1e-9 <= lin && lin <= hi + 1e-9);
        // the power mean dominates the mean of the logarithms
        prop_assert!(lin >= db - 1e-9);
    }
}

#[test]
fn unsensed_channels_stay_unknown() {
    let mut ledger = EnergyLedger::new(4, 1);
    ledger.push(report(1, -90.0, Phase::Transmission)).unwrap();
    ledger.push(report(3, -80.0, Phase::Sensing)).unwrap();
    let avg = fuse_and_average(&ledger, AveragingDomain::Linear);
    assert_eq!(avg[0], None);
    assert_eq!(avg[2], None);
    assert!((avg[1].unwrap() + 90.0).abs() < 1e-12);
}

#[test]
fn transmission_phase_readings_only_cover_the_current_channel() {
    let mut ledger = EnergyLedger::new(5, 2);
    assert!(ledger.push(report(3, -90.0, Phase::Transmission)).is_err());
    assert!(ledger.push(report(2, -90.0, Phase::Transmission)).is_ok());
    assert!(ledger.push(report(7, -90.0, Phase::Sensing)).is_err());
}

#[test]
fn fusion_of_two_readings_by_hand() {
    // -90 and -80 dBm: (1e-9 + 1e-8) / 2 mW = 5.5e-9 mW = -82.596 dBm
    let mut ledger = EnergyLedger::new(1, 0);
    ledger.push(report(0, -90.0, Phase::Sensing)).unwrap();
    ledger.push(report(0, -80.0, Phase::Sensing)).unwrap();
    let lin = fuse_and_average(&ledger, AveragingDomain::Linear)[0].unwrap();
    assert!((lin - 10.0 * 5.5e-9f64.log10()).abs() < 1e-12);
    assert!((lin + 82.596).abs() < 1e-3);
    let db = fuse_and_average(&ledger, AveragingDomain::Db)[0].unwrap();
    assert_eq!(db, -85.0);
}
