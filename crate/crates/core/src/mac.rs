//! Message schedules, a slotted CSMA abstraction per band and SINR-threshold
//! reception with a minimum-over-airtime capture rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::CamSnapshot;
pub use crate::propagation::Band;
use crate::propagation::{v2v_rx_power, Emission, Point, RadioParams, Spectrum};
use crate::units::{dbm_to_mw, mw_to_dbm};
use crate::vdsa::EnergyReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Cam,
    Cacc,
}

impl MessageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MessageKind::Cam => "cam",
            MessageKind::Cacc => "cacc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: u64,
    pub kind: MessageKind,
    pub source_id: usize,
    pub created_us: u64,
    pub band: Band,
    pub payload: CamSnapshot,
    pub duration_us: u64,
    pub period_us: u64,
    /// Sensing results travelling to the platoon leader.
    pub reports: Vec<EnergyReport>,
    /// TVWS channel the sender's platoon is using.
    pub announced_channel: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacParams {
    pub slot_us: u64,
    pub aifs_us: u64,
    /// Backoff is drawn uniformly from `0..=contention_window` slots.
    pub contention_window: u32,
    pub airtime_us: u64,
    /// CAM period of non-platoon vehicles, and of platoon vehicles when all
    /// traffic stays on the control channel.
    pub cam_period_ms: u64,
    pub platoon_cam_period_ms: u64,
    pub cacc_period_ms: u64,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            slot_us: 13,
            aifs_us: 58,
            contention_window: 15,
            airtime_us: 400,
            cam_period_ms: 100,
            platoon_cam_period_ms: 200,
            cacc_period_ms: 200,
        }
    }
}

impl MacParams {
    pub fn validate(&self) -> Result<()> {
        if self.slot_us == 0 || self.airtime_us == 0 {
            return Err(Error::validation(
                "mac",
                "slot_us and airtime_us must be > 0",
            ));
        }
        for (name, p) in [
            ("mac.cam_period_ms", self.cam_period_ms),
            ("mac.platoon_cam_period_ms", self.platoon_cam_period_ms),
            ("mac.cacc_period_ms", self.cacc_period_ms),
        ] {
            if p == 0 || p * 1000 <= self.airtime_us {
                return Err(Error::validation(name, "period must exceed the airtime"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// One periodic message stream of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Generator {
    pub kind: MessageKind,
    pub period_us: u64,
    /// First generation instant, in `[0, period_us)`.
    pub phase_us: u64,
}

impl Generator {
    /// Draws a uniform phase in `[0, period)`.
    pub fn seeded<R: Rng>(kind: MessageKind, period_us: u64, rng: &mut R) -> Self {
        Generator {
            kind,
            period_us,
            phase_us: rng.gen_range(0..period_us),
        }
    }

    /// First generation instant at or after `t_us`.
    pub fn next_at_or_after(&self, t_us: u64) -> u64 {
        if t_us <= self.phase_us {
            return self.phase_us;
        }
        let k = (t_us - self.phase_us).div_ceil(self.period_us);
        self.phase_us + k * self.period_us
    }
}

/// The message streams of one vehicle: background vehicles, and platoon
/// vehicles under a CCH-only strategy, send CAMs only; platoon vehicles with a
/// TVWS radio split into CCH CAMs and TVWS CACC messages.
pub fn vehicle_generators<R: Rng>(
    in_platoon: bool,
    uses_tvws: bool,
    mac: &MacParams,
    rng: &mut R,
) -> Vec<Generator> {
    if in_platoon && uses_tvws {
        vec![
            Generator::seeded(MessageKind::Cam, mac.platoon_cam_period_ms * 1000, rng),
            Generator::seeded(MessageKind::Cacc, mac.cacc_period_ms * 1000, rng),
        ]
    } else {
        vec![Generator::seeded(
            MessageKind::Cam,
            mac.cam_period_ms * 1000,
            rng,
        )]
    }
}

/// Generation instants in `[from_us, to_us)` of all streams, time-ordered.
pub fn schedule_messages(
    generators: &[Generator],
    from_us: u64,
    to_us: u64,
) -> Vec<(MessageKind, u64)> {
    let mut out = Vec::new();
    for g in generators {
        let mut t = g.next_at_or_after(from_us);
        while t < to_us {
            out.push((g.kind, t));
            t += g.period_us;
        }
    }
    out.sort_by_key(|&(kind, t)| (t, kind));
    out
}

// ---------------------------------------------------------------------------
// Medium
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTx {
    pub id: u64,
    pub message: u64,
    pub source: usize,
    pub platoon: Option<usize>,
    pub band: Band,
    pub start_us: u64,
    pub end_us: u64,
    pub position: Point,
    pub tx_power_dbm: f64,
}

impl ActiveTx {
    pub fn emission(&self) -> Emission {
        Emission {
            position: self.position,
            tx_power_dbm: self.tx_power_dbm,
            band: self.band,
        }
    }

    pub fn overlaps(&self, start_us: u64, end_us: u64) -> bool {
        self.start_us < end_us && self.end_us > start_us
    }

    pub fn active_at(&self, t_us: u64) -> bool {
        self.start_us <= t_us && t_us < self.end_us
    }
}

/// Recent and ongoing transmissions, kept per radio band in start order.
#[derive(Debug, Clone, Default)]
pub struct MediumState {
    cch: Vec<ActiveTx>,
    tvws: Vec<ActiveTx>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarrierSense {
    pub sensed_dbm: f64,
    /// Latest end among the detected transmissions (or `now` if none).
    pub busy_until_us: u64,
}

impl MediumState {
    fn list(&self, band: Band) -> &Vec<ActiveTx> {
        match band {
            Band::Cch => &self.cch,
            Band::Tvws(_) => &self.tvws,
        }
    }

    pub fn push(&mut self, tx: ActiveTx) {
        match tx.band {
            Band::Cch => self.cch.push(tx),
            Band::Tvws(_) => self.tvws.push(tx),
        }
    }

    /// Forgets transmissions that ended before `before_us`.
    pub fn prune(&mut self, before_us: u64) {
        self.cch.retain(|t| t.end_us >= before_us);
        self.tvws.retain(|t| t.end_us >= before_us);
    }

    /// Transmissions of the same radio band as `band` overlapping `[start, end)`.
    pub fn overlapping(
        &self,
        band: Band,
        start_us: u64,
        end_us: u64,
    ) -> impl Iterator<Item = &ActiveTx> {
        self.list(band)
            .iter()
            .filter(move |t| t.overlaps(start_us, end_us))
    }

    pub fn get(&self, band: Band, id: u64) -> Option<&ActiveTx> {
        self.list(band).iter().find(|t| t.id == id)
    }

    /// Whether `vehicle` is on air on `band`'s radio at any point of `[start, end)`.
    pub fn transmitting(&self, vehicle: usize, band: Band, start_us: u64, end_us: u64) -> bool {
        self.overlapping(band, start_us, end_us)
            .any(|t| t.source == vehicle)
    }

    /// Energy a radio at `at` perceives on `band` at `now_us`. A transmission
    /// becomes detectable one slot after it starts.
    #[allow(clippy::too_many_arguments)]
    pub fn carrier_sense(
        &self,
        at: Point,
        band: Band,
        own_id: usize,
        now_us: u64,
        extra_dbm: f64,
        detect_delay_us: u64,
        spectrum: &Spectrum,
        radio: &RadioParams,
    ) -> CarrierSense {
        let mut mw = dbm_to_mw(radio.noise_floor_dbm) + dbm_to_mw(extra_dbm);
        let mut busy_until_us = now_us;
        for t in self.list(band) {
            if t.source == own_id || !t.active_at(now_us) || t.start_us + detect_delay_us > now_us {
                continue;
            }
            let coupling = spectrum.band_coupling(t.band, band);
            let p = dbm_to_mw(v2v_rx_power(
                t.tx_power_dbm,
                t.position,
                at,
                t.band,
                &radio.v2v_pathloss,
            )) * coupling;
            if p > 0.0 {
                mw += p;
                busy_until_us = busy_until_us.max(t.end_us);
            }
        }
        CarrierSense {
            sensed_dbm: mw_to_dbm(mw),
            busy_until_us,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Older than its generation period.
    Expired,
    /// Could not finish inside the TVWS transmission window.
    WindowClosed,
}

impl DropReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DropReason::Expired => "expired",
            DropReason::WindowClosed => "window_closed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaOutcome {
    TransmitNow,
    Backoff(u32),
    Drop(DropReason),
}

/// One channel-access attempt. `window_end_us` is the end of the TVWS
/// transmission window, `None` on the control channel.
pub fn csma_attempt<R: Rng>(
    msg: &Message,
    now_us: u64,
    sense: &CarrierSense,
    threshold_dbm: f64,
    window_end_us: Option<u64>,
    params: &MacParams,
    rng: &mut R,
) -> CsmaOutcome {
    if now_us - msg.created_us > msg.period_us {
        return CsmaOutcome::Drop(DropReason::Expired);
    }
    if window_end_us.is_some_and(|end| now_us + msg.duration_us > end) {
        return CsmaOutcome::Drop(DropReason::WindowClosed);
    }
    if sense.sensed_dbm > threshold_dbm {
        return CsmaOutcome::Backoff(rng.gen_range(0..=params.contention_window));
    }
    CsmaOutcome::TransmitNow
}

/// Delay from release to the first attempt: AIFS plus a uniform number of
/// slots, so two vehicles released in the same slot do not collide on every
/// period.
pub fn first_attempt_delay_us<R: Rng>(params: &MacParams, rng: &mut R) -> u64 {
    params.aifs_us + u64::from(rng.gen_range(0..=params.contention_window)) * params.slot_us
}

/// Longest possible `first_attempt_delay_us`.
pub fn max_first_attempt_delay_us(params: &MacParams) -> u64 {
    params.aifs_us + u64::from(params.contention_window) * params.slot_us
}

/// When to retry after `Backoff(slots)`.
pub fn retry_time(now_us: u64, sense: &CarrierSense, slots: u32, params: &MacParams) -> u64 {
    sense.busy_until_us.max(now_us) + params.aifs_us + u64::from(slots) * params.slot_us
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    Success,
    Failure,
}

/// Threshold reception, inclusive at the threshold.
pub fn receive(sinr_db: f64, threshold_db: f64, tuned_throughout: bool) -> RxOutcome {
    if tuned_throughout && sinr_db >= threshold_db {
        RxOutcome::Success
    } else {
        RxOutcome::Failure
    }
}

/// Minimum SINR of `wanted` at `rx` over its airtime. The interferer set is
/// piecewise constant between the start/end instants of the overlapping
/// transmissions, so checking each piece once is exact. `dtt_dbm` is the
/// effective DTT power in the wanted channel (TVWS only).
pub fn airtime_min_sinr<'a>(
    wanted: &ActiveTx,
    others: impl IntoIterator<Item = &'a ActiveTx>,
    rx: Point,
    dtt_dbm: f64,
    spectrum: &Spectrum,
    radio: &RadioParams,
) -> f64 {
    let pl = &radio.v2v_pathloss;
    let others: Vec<(&ActiveTx, f64)> = others
        .into_iter()
        .filter(|t| t.id != wanted.id && t.overlaps(wanted.start_us, wanted.end_us))
        .filter_map(|t| {
            let c = spectrum.band_coupling(t.band, wanted.band);
            (c > 0.0).then(|| {
                (
                    t,
                    dbm_to_mw(v2v_rx_power(t.tx_power_dbm, t.position, rx, t.band, pl)) * c,
                )
            })
        })
        .collect();
    let signal = v2v_rx_power(wanted.tx_power_dbm, wanted.position, rx, wanted.band, pl);
    let base = dbm_to_mw(radio.noise_floor_dbm)
        + if wanted.band.is_tvws() {
            dbm_to_mw(dtt_dbm)
        } else {
            0.0
        };

    let mut cuts: Vec<u64> = vec![wanted.start_us];
    cuts.extend(
        others
            .iter()
            .map(|(t, _)| t.start_us)
            .filter(|&s| s > wanted.start_us && s < wanted.end_us),
    );
    let worst = cuts
        .iter()
        .map(|&at| {
            base + others
                .iter()
                .filter(|(t, _)| t.active_at(at))
                .map(|(_, p)| p)
                .sum::<f64>()
        })
        .fold(base, f64::max);
    signal - mw_to_dbm(worst)
}
