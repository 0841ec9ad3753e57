use proptest::prelude::*;

use platoon_vdsa::vdsa::{assign_sensing, phase_of, sensing_channel, DutyCycle, Phase, PlatoonClock};

const DUTY: DutyCycle = DutyCycle {
    cycle_ms: 200,
    sensing_ms: 150,
    cycles_per_decision: 5,
};

#[test]
fn default_duty_cycle_is_150_50_over_five_cycles() {
    let d = DutyCycle::default();
    assert_eq!((d.cycle_ms, d.sensing_ms, d.transmission_ms()), (200, 150, 50));
    assert_eq!(d.decision_interval_ms(), 1000);
}

#[test]
fn phase_function_by_hand() {
    assert_eq!(phase_of(&DUTY, 0), Phase::Sensing);
    assert_eq!(phase_of(&DUTY, 149), Phase::Sensing);
    assert_eq!(phase_of(&DUTY, 150), Phase::Transmission);
    assert_eq!(phase_of(&DUTY, 199), Phase::Transmission);
    assert_eq!(phase_of(&DUTY, 200), Phase::Sensing);
}

proptest! {
    #[test]
    fn any_second_holds_750_ms_of_sensing(offset in 0u64..1000, start in 0u64..200_000) {
        let clock = PlatoonClock::new(DUTY, offset);
        let sensing = (start..start + 1000)
            .filter(|&t| clock.phase(t * 1000) == Phase::Sensing)
            .count();
        prop_assert_eq!(sensing, 750);
    }

    #[test]
    fn windows_contain_their_instant(offset in 0u64..1000, t in 0u64..200_000_000) {
        let clock = PlatoonClock::new(DUTY, offset);
        let (start, end) = clock.window_us(t);
        prop_assert_eq!(end - start, 50_000);
        let inside = (start..end).contains(&(t as i64));
        prop_assert_eq!(inside, clock.phase(t) == Phase::Transmission);
    }

    #[test]
    fn releases_are_tuned_and_not_early(offset in 0u64..1000, created in 0u64..10_000_000, blackout in 0u64..5, omega in 0u64..40_000) {
        let clock = PlatoonClock::new(DUTY, offset);
        let at = clock.next_release_us(created, blackout * 1000, omega);
        prop_assert!(at >= created);
        prop_assert!(at - created < 200_000);
        prop_assert!(clock.tuned(at, blackout * 1000));
    }

    #[test]
    fn decision_boundaries_are_one_second_apart(offset in 0u64..1000, k in 1u64..140) {
        let clock = PlatoonClock::new(DUTY, offset);
        let b = (offset + 1000 * k) * 1000;
        prop_assert!(clock.is_decision_boundary(b));
        prop_assert!(!clock.is_decision_boundary(b + 1000));
        prop_assert_eq!(clock.round(b), k as i64);
        prop_assert_eq!(clock.cycle_in_round(b), 0);
    }

    #[test]
    fn sensing_rotation_visits_every_channel(vehicle in 0usize..20, round in -3i64..200, n in 1usize..8) {
        let mut seen: Vec<usize> = (0..n as u64)
            .map(|cycle| sensing_channel(vehicle, cycle, round, n))
            .collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn ten_vehicles_cover_five_channels_every_cycle() {
    let a = assign_sensing(10, 3, 5, 5);
    assert_eq!(a.covered(), vec![true; 5]);
    for cycle in &a.channels {
        for ch in 0..5 {
            assert_eq!(cycle.iter().filter(|&&c| c == ch).count(), 2);
        }
    }
}
