//! Bumblebee channel selection for a platoon: the sensing/transmission duty
//! cycle, round-robin sensing assignment, energy fusion at the leader and the
//! cost-biased switching rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{dbm_to_mw, mw_to_dbm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyCycle {
    pub cycle_ms: u64,
    pub sensing_ms: u64,
    pub cycles_per_decision: u64,
}

impl Default for DutyCycle {
    fn default() -> Self {
        DutyCycle {
            cycle_ms: 200,
            sensing_ms: 150,
            cycles_per_decision: 5,
        }
    }
}

impl DutyCycle {
    pub fn transmission_ms(&self) -> u64 {
        self.cycle_ms - self.sensing_ms
    }

    pub fn decision_interval_ms(&self) -> u64 {
        self.cycle_ms * self.cycles_per_decision
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Sensing,
    Transmission,
}

/// Phase at platoon-local time `t_ms`.
pub fn phase_of(duty: &DutyCycle, t_ms: u64) -> Phase {
    if t_ms % duty.cycle_ms < duty.sensing_ms {
        Phase::Sensing
    } else {
        Phase::Transmission
    }
}

/// Maps global simulation time onto a platoon's duty cycle, which is shifted
/// by `offset_ms`. Local time is taken modulo the decision interval before the
/// first boundary, so phases are well defined from t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlatoonClock {
    pub duty: DutyCycle,
    pub offset_ms: u64,
}

impl PlatoonClock {
    pub fn new(duty: DutyCycle, offset_ms: u64) -> Self {
        PlatoonClock { duty, offset_ms }
    }

    fn offset_us(&self) -> u64 {
        self.offset_ms * 1000
    }

    /// Platoon-local time in microseconds. Before `offset` the clock reads
    /// as the tail of a preceding (unused) decision interval.
    pub fn local_us(&self, global_us: u64) -> i64 {
        global_us as i64 - self.offset_us() as i64
    }

    fn cycle_us(&self) -> u64 {
        self.duty.cycle_ms * 1000
    }

    /// Position inside the current cycle.
    pub fn in_cycle_us(&self, global_us: u64) -> u64 {
        self.local_us(global_us).rem_euclid(self.cycle_us() as i64) as u64
    }

    pub fn phase(&self, global_us: u64) -> Phase {
        if self.in_cycle_us(global_us) < self.duty.sensing_ms * 1000 {
            Phase::Sensing
        } else {
            Phase::Transmission
        }
    }

    /// Global start of the cycle containing `global_us`.
    pub fn cycle_start_us(&self, global_us: u64) -> i64 {
        global_us as i64 - self.in_cycle_us(global_us) as i64
    }

    /// Cycle index within the current decision interval.
    pub fn cycle_in_round(&self, global_us: u64) -> u64 {
        let cycle = self.local_us(global_us).div_euclid(self.cycle_us() as i64);
        cycle.rem_euclid(self.duty.cycles_per_decision as i64) as u64
    }

    /// Decision round; round `k` ends at local time `k` decision intervals.
    pub fn round(&self, global_us: u64) -> i64 {
        self.local_us(global_us)
            .div_euclid((self.duty.decision_interval_ms() * 1000) as i64)
    }

    /// Whether a decision boundary falls at `global_us`.
    pub fn is_decision_boundary(&self, global_us: u64) -> bool {
        let l = self.local_us(global_us);
        l > 0 && l % (self.duty.decision_interval_ms() * 1000) as i64 == 0
    }

    /// The transmission window `[start, end)` of the cycle containing `global_us`.
    pub fn window_us(&self, global_us: u64) -> (i64, i64) {
        let start = self.cycle_start_us(global_us) + (self.duty.sensing_ms * 1000) as i64;
        (start, start + (self.duty.transmission_ms() * 1000) as i64)
    }

    /// First instant `>= created_us` of the form
    /// `window_start + blackout + omega`, where a vehicle releases queued
    /// TVWS traffic.
    pub fn next_release_us(&self, created_us: u64, blackout_us: u64, omega_us: u64) -> u64 {
        let (start, _) = self.window_us(created_us);
        let mut at = start + (blackout_us + omega_us) as i64;
        while at < created_us as i64 {
            at += self.cycle_us() as i64;
        }
        at as u64
    }

    /// Whether the TVWS radio is tuned for traffic at `global_us`: inside a
    /// transmission window and past the retune blackout.
    pub fn tuned(&self, global_us: u64, blackout_us: u64) -> bool {
        self.in_cycle_us(global_us) >= self.duty.sensing_ms * 1000 + blackout_us
    }
}

/// Which channel each platoon vehicle senses in each cycle of a decision
/// round. `channels[cycle][vehicle]` with vehicles in platoon order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingAssignment {
    pub channels: Vec<Vec<usize>>,
}

impl SensingAssignment {
    pub fn channel_for(&self, cycle: usize, vehicle: usize) -> usize {
        self.channels[cycle][vehicle]
    }

    /// Channels sensed at least once over the round.
    pub fn covered(&self) -> Vec<bool> {
        let n = self.channels.iter().flatten().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n];
        for &c in self.channels.iter().flatten() {
            seen[c] = true;
        }
        seen
    }
}

/// Round-robin: vehicle `i` senses `(i + cycle + round) mod n_channels`.
pub fn sensing_channel(vehicle: usize, cycle: u64, round: i64, n_channels: usize) -> usize {
    let n = n_channels as i64;
    (vehicle as i64 + cycle as i64 + round).rem_euclid(n) as usize
}

pub fn assign_sensing(
    members: usize,
    round: i64,
    n_channels: usize,
    cycles: usize,
) -> SensingAssignment {
    let channels = (0..cycles)
        .map(|cycle| {
            (0..members)
                .map(|i| sensing_channel(i, cycle as u64, round, n_channels))
                .collect()
        })
        .collect();
    SensingAssignment { channels }
}

/// Running linear-domain mean of per-tick power readings.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyMeter {
    sum_mw: f64,
    samples: u32,
}

impl EnergyMeter {
    pub fn add_dbm(&mut self, dbm: f64) {
        self.add_mw(dbm_to_mw(dbm));
    }

    pub fn add_mw(&mut self, mw: f64) {
        self.sum_mw += mw;
        self.samples += 1;
    }

    pub fn samples(&self) -> u32 {
        self.samples
    }

    pub fn mean_dbm(&self) -> Option<f64> {
        (self.samples > 0).then(|| mw_to_dbm(self.sum_mw / f64::from(self.samples)))
    }

    /// Returns the mean and resets.
    pub fn take(&mut self) -> Option<f64> {
        let out = self.mean_dbm();
        *self = EnergyMeter::default();
        out
    }
}

/// One vehicle's mean reading of one channel over one phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub vehicle: usize,
    pub round: i64,
    pub cycle: u32,
    pub phase: Phase,
    pub channel: usize,
    pub energy_dbm: f64,
}

/// Reports collected at a platoon leader during one decision interval.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub n_channels: usize,
    pub current_channel: usize,
    reports: Vec<EnergyReport>,
}

impl EnergyLedger {
    pub fn new(n_channels: usize, current_channel: usize) -> Self {
        EnergyLedger {
            n_channels,
            current_channel,
            reports: Vec::new(),
        }
    }

    /// Appends a report. Transmission-phase readings are only valid for the
    /// current channel.
    pub fn push(&mut self, report: EnergyReport) -> Result<()> {
        if report.phase == Phase::Transmission && report.channel != self.current_channel {
            return Err(Error::PhaseViolation {
                channel: report.channel,
                current: self.current_channel,
            });
        }
        if report.channel >= self.n_channels {
            return Err(Error::validation(
                "report.channel",
                "outside the channel plan",
            ));
        }
        self.reports.push(report);
        Ok(())
    }

    pub fn reports(&self) -> &[EnergyReport] {
        &self.reports
    }

    pub fn clear(&mut self) {
        self.reports.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingDomain {
    #[default]
    Linear,
    Db,
}

/// Per-channel mean energy over all reports; `None` for channels without any.
pub fn fuse_and_average(ledger: &EnergyLedger, domain: AveragingDomain) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; ledger.n_channels];
    let mut n = vec![0u32; ledger.n_channels];
    for r in ledger.reports() {
        sum[r.channel] += match domain {
            AveragingDomain::Linear => dbm_to_mw(r.energy_dbm),
            AveragingDomain::Db => r.energy_dbm,
        };
        n[r.channel] += 1;
    }
    sum.into_iter()
        .zip(n)
        .map(|(s, k)| {
            (k > 0).then(|| match domain {
                AveragingDomain::Linear => mw_to_dbm(s / f64::from(k)),
                AveragingDomain::Db => s / f64::from(k),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchDecision {
    Stay,
    SwitchTo(usize),
}

/// Switch to `candidate` iff it is quieter than the current channel by more
/// than the cost `c_db` and does not exceed the threshold (inclusive).
pub fn switching_decision(
    e_ch: f64,
    e_i: f64,
    c_db: f64,
    t_dbm: f64,
    candidate: usize,
) -> SwitchDecision {
    if e_ch > e_i + c_db && e_i <= t_dbm {
        SwitchDecision::SwitchTo(candidate)
    } else {
        SwitchDecision::Stay
    }
}

/// Quietest known channel, lowest index on ties.
pub fn quietest(averages: &[Option<f64>]) -> Option<(usize, f64)> {
    averages
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i, e)))
        .fold(None, |best, (i, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
}

/// Channel for the next decision interval. When the current channel has no
/// reading the candidate only has to pass the threshold.
pub fn select_channel(averages: &[Option<f64>], current: usize, c_db: f64, t_dbm: f64) -> usize {
    let Some((best, e_best)) = quietest(averages) else {
        return current;
    };
    let e_ch = averages
        .get(current)
        .copied()
        .flatten()
        .unwrap_or(f64::INFINITY);
    match switching_decision(e_ch, e_best, c_db, t_dbm, best) {
        SwitchDecision::SwitchTo(i) => i,
        SwitchDecision::Stay => current,
    }
}

/// Whether transmission-phase readings of the current channel enter the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPhaseSamples {
    /// Only ticks without any own-platoon transmission on air.
    WhenSilent,
    #[default]
    Never,
    Always,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionPropagation {
    /// Every member retunes at the boundary.
    #[default]
    Ideal,
    /// Followers adopt the channel announced in the last leader message
    /// they received.
    Lossy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdsaParams {
    pub duty: DutyCycle,
    pub threshold_dbm: f64,
    pub retune_blackout_ms: u64,
    pub averaging: AveragingDomain,
    pub tx_phase_samples: TxPhaseSamples,
    pub decision_propagation: DecisionPropagation,
}

impl Default for VdsaParams {
    fn default() -> Self {
        VdsaParams {
            duty: DutyCycle::default(),
            threshold_dbm: -65.0,
            retune_blackout_ms: 2,
            averaging: AveragingDomain::Linear,
            tx_phase_samples: TxPhaseSamples::Never,
            decision_propagation: DecisionPropagation::Ideal,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn phase_boundaries() {
        let d = DutyCycle::default();
        assert_eq!(phase_of(&d, 0), Phase::Sensing);
        assert_eq!(phase_of(&d, 149), Phase::Sensing);
        assert_eq!(phase_of(&d, 150), Phase::Transmission);
        assert_eq!(phase_of(&d, 199), Phase::Transmission);
        assert_eq!(phase_of(&d, 200), Phase::Sensing);
    }

    #[test]
    fn one_second_holds_five_cycles() {
        let d = DutyCycle::default();
        let sensing = (0..1000)
            .filter(|&t| phase_of(&d, t) == Phase::Sensing)
            .count();
        assert_eq!(sensing, 750);
        assert_eq!(d.decision_interval_ms(), 1000);
        assert_eq!(d.transmission_ms(), 50);
    }

    #[test]
    fn offset_clock() {
        let c = PlatoonClock::new(DutyCycle::default(), 100);
        assert_eq!(c.phase(0), Phase::Sensing);
        assert_eq!(c.phase(50_000), Phase::Transmission);
        assert_eq!(c.phase(100_000), Phase::Sensing);
        assert_eq!(c.phase(250_000), Phase::Transmission);
        assert!(!c.is_decision_boundary(100_000));
        assert!(c.is_decision_boundary(1_100_000));
        assert!(!c.is_decision_boundary(1_000_000));
        assert_eq!(c.window_us(260_000), (250_000, 300_000));
        assert_eq!(c.cycle_in_round(100_000), 0);
        assert_eq!(c.cycle_in_round(1_050_000), 4);
        assert_eq!(c.round(1_100_000), 1);
    }

    #[test]
    fn release_lands_in_next_window_after_blackout() {
        let c = PlatoonClock::new(DutyCycle::default(), 0);
        // created during sensing: same cycle's window
        assert_eq!(c.next_release_us(10_000, 2_000, 5_000), 157_000);
        // created inside the window but after this vehicle's slot: next window
        assert_eq!(c.next_release_us(170_000, 2_000, 5_000), 357_000);
        // created during the blackout: drained after it within the same window
        assert_eq!(c.next_release_us(150_500, 2_000, 0), 152_000);
        assert!(c.tuned(152_000, 2_000));
        assert!(!c.tuned(151_999, 2_000));
        assert!(!c.tuned(149_999, 2_000));
    }

    #[test]
    fn every_message_sees_one_window() {
        let c = PlatoonClock::new(DutyCycle::default(), 100);
        for created in (0..2_000_000).step_by(7_919) {
            let r = c.next_release_us(created, 2_000, 30_000);
            assert!(r >= created && r - created < 200_000);
            assert_eq!(c.phase(r), Phase::Transmission);
        }
    }

    #[test]
    fn ten_vehicles_five_channels() {
        let a = assign_sensing(10, 0, 5, 5);
        for cycle in &a.channels {
            for ch in 0..5 {
                assert_eq!(cycle.iter().filter(|&&c| c == ch).count(), 2);
            }
        }
        assert_eq!(a, assign_sensing(10, 0, 5, 5));
    }

    #[test]
    fn two_vehicles_cover_all_channels_over_a_round() {
        let a = assign_sensing(2, 3, 5, 5);
        assert!(a.covered().iter().all(|&c| c));
        assert_eq!(a.covered().len(), 5);
    }

    #[test]
    fn linear_average() {
        let mut l = EnergyLedger::new(5, 0);
        for (v, e) in [(0, -90.0), (1, -80.0)] {
            l.push(EnergyReport {
                vehicle: v,
                round: 0,
                cycle: 0,
                phase: Phase::Sensing,
                channel: 1,
                energy_dbm: e,
            })
            .unwrap();
        }
        let avg = fuse_and_average(&l, AveragingDomain::Linear);
        // -90 dBm = 1e-9 mW, -80 dBm = 1e-8 mW
        let expect = 10.0 * ((1e-9 + 1e-8) / 2.0_f64).log10();
        assert_abs_diff_eq!(avg[1].unwrap(), expect, epsilon = 1e-9);
        assert_abs_diff_eq!(avg[1].unwrap(), -82.60, epsilon = 0.01);
        assert_abs_diff_eq!(
            fuse_and_average(&l, AveragingDomain::Db)[1].unwrap(),
            -85.0,
            epsilon = 1e-12
        );
        assert_eq!(avg[0], None);
    }

    #[test]
    fn transmission_phase_only_current_channel() {
        let mut l = EnergyLedger::new(5, 2);
        let r = |channel, phase| EnergyReport {
            vehicle: 0,
            round: 0,
            cycle: 0,
            phase,
            channel,
            energy_dbm: -90.0,
        };
        assert!(matches!(
            l.push(r(1, Phase::Transmission)),
            Err(Error::PhaseViolation {
                channel: 1,
                current: 2
            })
        ));
        l.push(r(2, Phase::Transmission)).unwrap();
        l.push(r(1, Phase::Sensing)).unwrap();
        assert_eq!(l.reports().len(), 2);
        l.clear();
        assert!(l.reports().is_empty());
    }

    #[test]
    fn meter_is_linear_mean() {
        let mut m = EnergyMeter::default();
        assert_eq!(m.mean_dbm(), None);
        m.add_dbm(-95.0);
        m.add_dbm(-95.0);
        assert_abs_diff_eq!(m.take().unwrap(), -95.0, epsilon = 1e-9);
        assert_eq!(m.samples(), 0);
    }

    #[test]
    fn decision_examples() {
        assert_eq!(
            switching_decision(-70.0, -90.0, 3.0, -60.0, 4),
            SwitchDecision::SwitchTo(4)
        );
        assert_eq!(
            switching_decision(-90.0, -70.0, 0.0, -60.0, 4),
            SwitchDecision::Stay
        );
        // inclusive threshold
        assert_eq!(
            switching_decision(-50.0, -60.0, 3.0, -60.0, 1),
            SwitchDecision::SwitchTo(1)
        );
        assert_eq!(
            switching_decision(-50.0, -59.9, 3.0, -60.0, 1),
            SwitchDecision::Stay
        );
    }

    #[test]
    fn worked_selection_example() {
        // 490, 498, 506, 514, 522
        let avg = [
            Some(-60.0),
            Some(-93.0),
            Some(-95.0),
            Some(-92.0),
            Some(-58.0),
        ];
        assert_eq!(quietest(&avg), Some((2, -95.0)));
        // a 2 dB gain does not pay a 3 dB switching cost
        assert_eq!(select_channel(&avg, 1, 3.0, -65.0), 1);
        assert_eq!(select_channel(&avg, 1, 1.0, -65.0), 2);
        assert_eq!(select_channel(&avg, 0, 3.0, -65.0), 2);
    }

    #[test]
    fn selection_guards() {
        let avg = [Some(-80.0), Some(-90.0), None];
        assert_eq!(select_channel(&avg, 1, 0.0, -65.0), 1);
        let loud = [Some(-60.0), Some(-50.0)];
        assert_eq!(select_channel(&loud, 1, 0.0, -65.0), 1);
        // unknown current channel
        assert_eq!(select_channel(&avg, 2, 6.0, -65.0), 1);
        assert_eq!(select_channel(&[None, None], 0, 0.0, -65.0), 0);
        // ties go to the lowest index
        assert_eq!(
            select_channel(&[Some(-70.0), Some(-90.0), Some(-90.0)], 0, 0.0, -65.0),
            1
        );
    }
}
