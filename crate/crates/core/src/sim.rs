//! The simulation loop. Mobility advances in fixed ticks; channel access and
//! receptions run as microsecond events inside each tick.
//!
//! Order within tick `k` (covering `[t0, t0 + tick)`):
//! 1. duty-cycle bookkeeping and channel decisions at `t0`,
//! 2. mobility step using the snapshots delivered before `t0`,
//! 3. DTT levels at the new positions,
//! 4. MAC events in `[t0, t0 + tick)`,
//! 5. energy sensing, SIR sampling and channel residence over the tick.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mac::{
    airtime_min_sinr, csma_attempt, first_attempt_delay_us, max_first_attempt_delay_us, receive,
    retry_time, vehicle_generators, ActiveTx, Band, CsmaOutcome, Generator, MediumState, Message,
    MessageKind, RxOutcome,
};
use crate::metrics::{
    DropEvent, MetricsLog, PlatoonRoster, RxEvent, SirSample, SwitchEvent, TxEvent,
};
use crate::mobility::{step_world, Role};
use crate::propagation::{dtt_power_at, dtt_sir, v2v_rx_power, Emission, Spectrum};
use crate::rng;
use crate::scenario::{build_world, ShadowingRedraw, SimConfig, Strategy, World};
use crate::units::{dbm_to_mw, mw_to_dbm};
use crate::vdsa::{
    fuse_and_average, select_channel, sensing_channel, DecisionPropagation, EnergyLedger,
    EnergyMeter, EnergyReport, Phase, PlatoonClock, TxPhaseSamples,
};

/// Extra outputs that are off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Record every vehicle's position and speed every this many ticks.
    pub trajectory_stride_ticks: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub tick: u64,
    pub id: usize,
    pub position_m: f64,
    pub speed_mps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityStats {
    /// Smallest bumper-to-bumper gap inside any platoon over the run.
    pub min_intra_platoon_gap_m: f64,
    pub min_platoon_speed_mps: f64,
    pub max_platoon_speed_mps: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: MetricsLog,
    pub mobility: MobilityStats,
    pub trajectory: Vec<TrajectoryRow>,
    pub world: World,
}

pub fn run(cfg: &SimConfig) -> Result<RunOutput> {
    run_with(cfg, RunOptions::default())
}

pub fn run_with(cfg: &SimConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let mut engine = Engine::new(cfg)?;
    engine.run(opts)?;
    Ok(engine.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Generate { vehicle: usize, stream: usize },
    Attempt { message: u64 },
    TxEnd { tx: u64, band: Band },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time_us: u64,
    seq: u64,
    kind: EventKind,
}

struct PlatoonRt {
    clock: PlatoonClock,
    members: Vec<usize>,
    channel: usize,
    ledger: EnergyLedger,
    ledger_round: i64,
    sensing: Vec<EnergyMeter>,
    tx_phase: Vec<EnergyMeter>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    spectrum: Spectrum,
    world: World,
    medium: MediumState,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    mac_rng: ChaCha8Rng,
    messages: HashMap<u64, Message>,
    in_flight: HashMap<u64, Message>,
    next_message: u64,
    next_tx: u64,
    generators: Vec<Vec<Generator>>,
    omega_us: Vec<u64>,
    platoons: Vec<PlatoonRt>,
    /// TVWS channel each platoon radio is tuned to for traffic.
    tuned: Vec<usize>,
    /// Member index within its platoon.
    member_index: Vec<usize>,
    pending_reports: Vec<Vec<EnergyReport>>,
    /// Per vehicle: current shadowing draw and segment per DTT profile.
    shadow: Vec<Vec<(Option<usize>, f64)>>,
    /// Per vehicle: DTT power in mW per profile, and effective per TVWS channel.
    dtt_mw: Vec<Vec<f64>>,
    eff_dtt_mw: Vec<Vec<f64>>,
    /// `coupling[c][k]`: ACIR coupling of DTT profile `k` into TVWS channel `c`.
    coupling: Vec<Vec<f64>>,
    receiver_dtt: Vec<Vec<f64>>,
    log: MetricsLog,
    stats: MobilityStats,
    trajectory: Vec<TrajectoryRow>,
    tick: u64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Result<Self> {
        let world = build_world(cfg)?;
        let spectrum = cfg.spectrum();
        let n_vehicles = world.vehicles.len();
        let n_channels = spectrum.tvws_freqs_mhz.len();
        let n_profiles = spectrum.field.channels.len();
        let uses_tvws = cfg.strategy.uses_tvws();
        let mac = &cfg.mac;

        let mut schedule_rng = rng::stream(cfg.seed, rng::SCHEDULE_STREAM);
        let window_us = cfg.vdsa.duty.transmission_ms() * 1000;
        let omega_span = window_us
            .saturating_sub(
                cfg.vdsa.retune_blackout_ms * 1000
                    + max_first_attempt_delay_us(mac)
                    + mac.airtime_us,
            )
            .max(1);
        let mut generators = Vec::with_capacity(n_vehicles);
        let mut omega_us = vec![0; n_vehicles];
        for v in &world.vehicles {
            if !v.has_radio() {
                generators.push(Vec::new());
                continue;
            }
            let in_platoon = v.platoon_id.is_some();
            generators.push(vehicle_generators(
                in_platoon,
                uses_tvws,
                mac,
                &mut schedule_rng,
            ));
            if in_platoon && uses_tvws {
                omega_us[v.id] = schedule_rng.gen_range(0..omega_span);
            }
        }

        let initial = cfg.channel_plan.initial_tvws_channel;
        let mut member_index = vec![0; n_vehicles];
        let platoons: Vec<PlatoonRt> = world
            .platoons
            .iter()
            .map(|p| {
                for (i, &m) in p.members.iter().enumerate() {
                    member_index[m] = i;
                }
                let clock = PlatoonClock::new(cfg.vdsa.duty, p.duty_offset_ms);
                PlatoonRt {
                    clock,
                    members: p.members.clone(),
                    channel: initial,
                    ledger: EnergyLedger::new(n_channels, initial),
                    ledger_round: clock.round(0),
                    sensing: vec![EnergyMeter::default(); p.members.len()],
                    tx_phase: vec![EnergyMeter::default(); p.members.len()],
                }
            })
            .collect();

        let coupling = (0..n_channels)
            .map(|c| {
                spectrum
                    .field
                    .channels
                    .iter()
                    .map(|prof| {
                        spectrum
                            .acir
                            .coupling(spectrum.offset_to_freq(c, prof.freq_mhz))
                    })
                    .collect()
            })
            .collect();

        let receiver_dtt = world
            .receivers
            .iter()
            .map(|r| {
                spectrum
                    .field
                    .channels
                    .iter()
                    .enumerate()
                    .map(|(k, prof)| {
                        let z = rng::keyed_standard_normal(
                            cfg.seed,
                            &[rng::RECEIVER_KEY, u64::from(r.spec.id), k as u64],
                        );
                        let x = r.position.x.clamp(0.0, cfg.road_length_m);
                        dtt_power_at(&spectrum.field, x, prof.freq_mhz, z)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let log = MetricsLog {
            rosters: world
                .platoons
                .iter()
                .map(|p| PlatoonRoster {
                    platoon: p.id,
                    leader: p.leader(),
                    followers: p.members[1..].to_vec(),
                    retired_us: HashMap::new(),
                })
                .collect(),
            tvws_freqs_mhz: spectrum.tvws_freqs_mhz.clone(),
            residence_ms: vec![vec![0; n_channels]; world.platoons.len()],
            duration_us: cfg.duration_us(),
            ..MetricsLog::default()
        };

        let mut engine = Engine {
            cfg,
            world,
            medium: MediumState::default(),
            queue: BinaryHeap::new(),
            seq: 0,
            mac_rng: rng::stream(cfg.seed, rng::MAC_STREAM),
            messages: HashMap::new(),
            in_flight: HashMap::new(),
            next_message: 0,
            next_tx: 0,
            generators,
            omega_us,
            platoons,
            tuned: vec![initial; n_vehicles],
            member_index,
            pending_reports: vec![Vec::new(); n_vehicles],
            shadow: vec![vec![(None, 0.0); n_profiles]; n_vehicles],
            dtt_mw: vec![vec![0.0; n_profiles]; n_vehicles],
            eff_dtt_mw: vec![vec![0.0; n_channels]; n_vehicles],
            coupling,
            receiver_dtt,
            log,
            stats: MobilityStats {
                min_intra_platoon_gap_m: f64::INFINITY,
                min_platoon_speed_mps: f64::INFINITY,
                max_platoon_speed_mps: 0.0,
            },
            trajectory: Vec::new(),
            tick: 0,
            spectrum,
        };
        for v in 0..n_vehicles {
            for s in 0..engine.generators[v].len() {
                let at = engine.generators[v][s].phase_us;
                engine.schedule(
                    at,
                    EventKind::Generate {
                        vehicle: v,
                        stream: s,
                    },
                );
            }
        }
        engine.update_dtt()?;
        Ok(engine)
    }

    fn schedule(&mut self, time_us: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time_us,
            seq: self.seq,
            kind,
        }));
    }

    fn run(&mut self, opts: RunOptions) -> Result<()> {
        let tick_us = self.cfg.tick_us();
        let ticks = self.cfg.duration_us() / tick_us;
        let dt_s = tick_us as f64 * 1e-6;
        for k in 0..ticks {
            self.tick = k;
            let t0 = k * tick_us;
            let t1 = t0 + tick_us;
            if self.cfg.strategy.uses_tvws() {
                self.duty_cycle_boundaries(t0);
            }
            step_world(&mut self.world, dt_s);
            self.record_mobility(t0);
            if self.cfg.strategy.uses_tvws() {
                self.update_dtt()?;
            }
            self.medium
                .prune(t0.saturating_sub(self.cfg.mac.airtime_us));
            while let Some(Reverse(ev)) = self.queue.peek().copied() {
                if ev.time_us >= t1 {
                    break;
                }
                self.queue.pop();
                self.handle(ev);
            }
            if self.cfg.strategy.uses_tvws() {
                if matches!(self.cfg.strategy, Strategy::Bumblebee { .. }) {
                    self.sense(t0, t1);
                }
                if k % self.cfg.metrics.sir_sample_stride_ticks == 0 {
                    self.sample_sir(t0, t1);
                }
                for (p, rt) in self.platoons.iter().enumerate() {
                    self.log.residence_ms[p][rt.channel] += self.cfg.tick_ms;
                }
            }
            if let Some(stride) = opts.trajectory_stride_ticks {
                if k % stride.max(1) == 0 {
                    self.trajectory
                        .extend(self.world.vehicles.iter().filter(|v| v.active).map(|v| {
                            TrajectoryRow {
                                tick: k,
                                id: v.id,
                                position_m: v.position_m,
                                speed_mps: v.speed_mps,
                            }
                        }));
                }
            }
        }
        Ok(())
    }

    fn finish(self) -> RunOutput {
        RunOutput {
            log: self.log,
            mobility: self.stats,
            trajectory: self.trajectory,
            world: self.world,
        }
    }

    fn record_mobility(&mut self, t0: u64) {
        self.stats.min_intra_platoon_gap_m = self
            .stats
            .min_intra_platoon_gap_m
            .min(self.world.min_platoon_gap_m());
        for (p, platoon) in self.world.platoons.iter().enumerate() {
            for &m in &platoon.members {
                let v = &self.world.vehicles[m];
                if v.active {
                    self.stats.min_platoon_speed_mps =
                        self.stats.min_platoon_speed_mps.min(v.speed_mps);
                    self.stats.max_platoon_speed_mps =
                        self.stats.max_platoon_speed_mps.max(v.speed_mps);
                } else {
                    self.log.rosters[p].retired_us.entry(m).or_insert(t0);
                }
            }
        }
    }

    /// DTT power at every active platoon vehicle.
    fn update_dtt(&mut self) -> Result<()> {
        let road = self.cfg.road_length_m;
        let every_tick = self.cfg.shadowing_redraw == ShadowingRedraw::EveryTick;
        for platoon in &self.world.platoons {
            for &m in &platoon.members {
                let v = &self.world.vehicles[m];
                if !v.active {
                    continue;
                }
                let x = v.position_m.clamp(0.0, road);
                for (k, prof) in self.spectrum.field.channels.iter().enumerate() {
                    let seg = prof.segment_index(x);
                    let (cached, z) = self.shadow[m][k];
                    let z = if every_tick || cached != seg || cached.is_none() {
                        let mut keys = vec![
                            rng::SHADOWING_STREAM,
                            m as u64,
                            k as u64,
                            seg.unwrap_or(usize::MAX) as u64,
                        ];
                        if every_tick {
                            keys.push(self.tick);
                        }
                        let z = rng::keyed_standard_normal(self.cfg.seed, &keys);
                        self.shadow[m][k] = (seg, z);
                        z
                    } else {
                        z
                    };
                    self.dtt_mw[m][k] =
                        dbm_to_mw(dtt_power_at(&self.spectrum.field, x, prof.freq_mhz, z)?);
                }
                for c in 0..self.eff_dtt_mw[m].len() {
                    self.eff_dtt_mw[m][c] = self.coupling[c]
                        .iter()
                        .zip(&self.dtt_mw[m])
                        .map(|(a, p)| a * p)
                        .sum();
                }
            }
        }
        Ok(())
    }

    fn eff_dtt_dbm(&self, vehicle: usize, channel: usize) -> f64 {
        mw_to_dbm(self.eff_dtt_mw[vehicle][channel])
    }

    // -----------------------------------------------------------------------
    // Duty cycle and channel selection
    // -----------------------------------------------------------------------

    fn duty_cycle_boundaries(&mut self, t0: u64) {
        let bumblebee = match self.cfg.strategy {
            Strategy::Bumblebee { cost_db } => Some(cost_db),
            _ => None,
        };
        let sensing_us = self.cfg.vdsa.duty.sensing_ms * 1000;
        for p in 0..self.platoons.len() {
            let Some(cost_db) = bumblebee else { continue };
            let clock = self.platoons[p].clock;
            let in_cycle = clock.in_cycle_us(t0);
            if t0 > 0 && (in_cycle == 0 || in_cycle == sensing_us) {
                // close the phase that ended at t0
                let last = t0 - 1;
                let phase = clock.phase(last);
                let round = clock.round(last);
                let cycle = clock.cycle_in_round(last) as u32;
                let n = self.platoons[p].members.len();
                for i in 0..n {
                    let v = self.platoons[p].members[i];
                    let meter = match phase {
                        Phase::Sensing => &mut self.platoons[p].sensing[i],
                        Phase::Transmission => &mut self.platoons[p].tx_phase[i],
                    };
                    let Some(energy_dbm) = meter.take() else {
                        continue;
                    };
                    if !self.world.vehicles[v].active {
                        continue;
                    }
                    let channel = match phase {
                        Phase::Sensing => sensing_channel(
                            i,
                            u64::from(cycle),
                            round,
                            self.log.tvws_freqs_mhz.len(),
                        ),
                        Phase::Transmission => self.tuned[v],
                    };
                    let report = EnergyReport {
                        vehicle: v,
                        round,
                        cycle,
                        phase,
                        channel,
                        energy_dbm,
                    };
                    if i == 0 {
                        self.deliver_report(p, report);
                    } else {
                        self.pending_reports[v].push(report);
                    }
                }
            }
            if clock.is_decision_boundary(t0) {
                self.decide(p, t0, cost_db);
            }
        }
    }

    fn deliver_report(&mut self, p: usize, report: EnergyReport) {
        let rt = &mut self.platoons[p];
        if report.round == rt.ledger_round {
            // stale transmission-phase readings of a previous channel are dropped
            let _ = rt.ledger.push(report);
        }
    }

    fn decide(&mut self, p: usize, t0: u64, cost_db: f64) {
        let averages = fuse_and_average(&self.platoons[p].ledger, self.cfg.vdsa.averaging);
        let old = self.platoons[p].channel;
        let new = select_channel(&averages, old, cost_db, self.cfg.vdsa.threshold_dbm);
        if new != old {
            let head_distance_m = (0..self.world.platoons.len())
                .filter(|&q| q != p)
                .map(|q| self.world.head_distance_m(p, q))
                .fold(f64::INFINITY, f64::min);
            self.log.switches.push(SwitchEvent {
                time_us: t0,
                platoon: p,
                old_channel: old,
                new_channel: new,
                head_distance_m,
            });
        }
        let rt = &mut self.platoons[p];
        rt.channel = new;
        rt.ledger.clear();
        rt.ledger.current_channel = new;
        rt.ledger_round = rt.clock.round(t0);
        match self.cfg.vdsa.decision_propagation {
            DecisionPropagation::Ideal => {
                for &m in &rt.members {
                    self.tuned[m] = new;
                }
            }
            DecisionPropagation::Lossy => self.tuned[rt.members[0]] = new,
        }
    }

    /// Accumulates one tick of energy readings at every platoon radio.
    fn sense(&mut self, t0: u64, t1: u64) {
        let radio = &self.cfg.radio;
        let noise_mw = dbm_to_mw(radio.noise_floor_dbm);
        let n_channels = self.log.tvws_freqs_mhz.len();
        let tick = (t1 - t0) as f64;
        let blackout_us = self.cfg.vdsa.retune_blackout_ms * 1000;
        let on_air: Vec<(ActiveTx, f64)> = self
            .medium
            .overlapping(Band::Tvws(0), t0, t1)
            .map(|t| {
                (
                    t.clone(),
                    (t.end_us.min(t1) - t.start_us.max(t0)) as f64 / tick,
                )
            })
            .collect();

        for p in 0..self.platoons.len() {
            let clock = self.platoons[p].clock;
            let phase = clock.phase(t0);
            if phase == Phase::Transmission {
                let silent = !on_air.iter().any(|(t, _)| t.platoon == Some(p));
                let take = match self.cfg.vdsa.tx_phase_samples {
                    TxPhaseSamples::Never => false,
                    TxPhaseSamples::Always => true,
                    TxPhaseSamples::WhenSilent => silent,
                };
                if !take || !clock.tuned(t0, blackout_us) {
                    continue;
                }
            }
            let cycle = clock.cycle_in_round(t0);
            let round = clock.round(t0);
            for i in 0..self.platoons[p].members.len() {
                let v = self.platoons[p].members[i];
                let me = &self.world.vehicles[v];
                if !me.active {
                    continue;
                }
                let ch = match phase {
                    Phase::Sensing => sensing_channel(i, cycle, round, n_channels),
                    Phase::Transmission => self.tuned[v],
                };
                let at = me.point();
                let mut mw = noise_mw + self.eff_dtt_mw[v][ch];
                for (t, share) in &on_air {
                    if t.source == v {
                        continue;
                    }
                    let c = self.spectrum.band_coupling(t.band, Band::Tvws(ch));
                    if c > 0.0 {
                        let p_rx = v2v_rx_power(
                            t.tx_power_dbm,
                            t.position,
                            at,
                            t.band,
                            &radio.v2v_pathloss,
                        );
                        mw += dbm_to_mw(p_rx) * c * share;
                    }
                }
                let rt = &mut self.platoons[p];
                match phase {
                    Phase::Sensing => rt.sensing[i].add_mw(mw),
                    Phase::Transmission => rt.tx_phase[i].add_mw(mw),
                }
            }
        }
    }

    fn sample_sir(&mut self, t0: u64, t1: u64) {
        let active: Vec<Emission> = self
            .medium
            .overlapping(Band::Tvws(0), t0, t1)
            .map(|t| t.emission())
            .collect();
        if active.is_empty() {
            return;
        }
        let floor = self.cfg.dtt_protection.reception_threshold_dbm;
        for (r, rx) in self.world.receivers.iter().enumerate() {
            let wanted = &self.receiver_dtt[r];
            let sirs = dtt_sir(
                &self.spectrum,
                &self.cfg.radio.v2v_pathloss,
                rx.position,
                wanted,
                &active,
            );
            for (k, (freq, sir)) in sirs.into_iter().enumerate() {
                if wanted[k] >= floor {
                    self.log.sir.push(SirSample {
                        time_us: t0,
                        receiver_id: rx.spec.id,
                        channel_mhz: freq,
                        sir_db: sir,
                    });
                }
            }
        }
    }

    // -----------------------------------------------------------------------
    // MAC events
    // -----------------------------------------------------------------------

    fn handle(&mut self, ev: Event) {
        match ev.kind {
            EventKind::Generate { vehicle, stream } => self.generate(ev.time_us, vehicle, stream),
            EventKind::Attempt { message } => self.attempt(ev.time_us, message),
            EventKind::TxEnd { tx, band } => self.tx_end(ev.time_us, tx, band),
        }
    }

    fn clock_of(&self, vehicle: usize) -> Option<PlatoonClock> {
        self.world.vehicles[vehicle]
            .platoon_id
            .map(|p| self.platoons[p].clock)
    }

    fn generate(&mut self, now: u64, vehicle: usize, stream: usize) {
        let v = &self.world.vehicles[vehicle];
        if !v.active {
            return;
        }
        let payload = v.snapshot(now);
        let g = self.generators[vehicle][stream];
        self.schedule(now + g.period_us, EventKind::Generate { vehicle, stream });

        let band = match g.kind {
            MessageKind::Cam => Band::Cch,
            MessageKind::Cacc => Band::Tvws(self.tuned[vehicle]),
        };
        let id = self.next_message;
        self.next_message += 1;
        self.log.generated += 1;
        let message = Message {
            id,
            kind: g.kind,
            source_id: vehicle,
            created_us: now,
            band,
            payload,
            duration_us: self.cfg.mac.airtime_us,
            period_us: g.period_us,
            reports: Vec::new(),
            announced_channel: None,
        };
        let release = match band {
            Band::Cch => now,
            Band::Tvws(_) => {
                let clock = self
                    .clock_of(vehicle)
                    .expect("TVWS traffic comes from platoons");
                clock.next_release_us(
                    now,
                    self.cfg.vdsa.retune_blackout_ms * 1000,
                    self.omega_us[vehicle],
                )
            }
        };
        self.messages.insert(id, message);
        let first = release + first_attempt_delay_us(&self.cfg.mac, &mut self.mac_rng);
        self.schedule(first, EventKind::Attempt { message: id });
    }

    fn attempt(&mut self, now: u64, id: u64) {
        let Some(mut msg) = self.messages.remove(&id) else {
            return;
        };
        let vehicle = msg.source_id;
        let v = &self.world.vehicles[vehicle];
        if !v.active {
            return;
        }
        let platoon = v.platoon_id;
        let band = match msg.band {
            Band::Cch => Band::Cch,
            Band::Tvws(_) => Band::Tvws(self.tuned[vehicle]),
        };
        let (extra_dbm, window_end) = match band {
            Band::Cch => (f64::NEG_INFINITY, None),
            Band::Tvws(ch) => {
                let clock = self.clock_of(vehicle).expect("platoon vehicle");
                let blackout_us = self.cfg.vdsa.retune_blackout_ms * 1000;
                // outside the tuned part of a window nothing may be sent
                let end = if clock.tuned(now, blackout_us) {
                    clock.window_us(now).1 as u64
                } else {
                    now
                };
                (self.eff_dtt_dbm(vehicle, ch), Some(end))
            }
        };
        let radio = &self.cfg.radio;
        let at = v.point();
        let sense = self.medium.carrier_sense(
            at,
            band,
            vehicle,
            now,
            extra_dbm,
            self.cfg.mac.slot_us,
            &self.spectrum,
            radio,
        );
        let threshold = radio.csma_sense_dbm(band);
        match csma_attempt(
            &msg,
            now,
            &sense,
            threshold,
            window_end,
            &self.cfg.mac,
            &mut self.mac_rng,
        ) {
            CsmaOutcome::TransmitNow => {
                let tx_id = self.next_tx;
                self.next_tx += 1;
                let end = now + msg.duration_us;
                self.medium.push(ActiveTx {
                    id: tx_id,
                    message: msg.id,
                    source: vehicle,
                    platoon,
                    band,
                    start_us: now,
                    end_us: end,
                    position: at,
                    tx_power_dbm: radio.tx_power_dbm(band),
                });
                let Some(p) = platoon else {
                    self.log.background_tx += 1;
                    return;
                };
                msg.band = band;
                msg.payload = v.snapshot(now);
                if self.member_index[vehicle] == 0 {
                    msg.announced_channel = Some(self.platoons[p].channel);
                } else if msg.kind == MessageKind::Cacc {
                    msg.reports = std::mem::take(&mut self.pending_reports[vehicle]);
                }
                self.log.tx.push(TxEvent {
                    tx_id,
                    source: vehicle,
                    platoon: Some(p),
                    kind: msg.kind,
                    band,
                    start_us: now,
                    end_us: end,
                });
                self.in_flight.insert(tx_id, msg);
                self.schedule(end, EventKind::TxEnd { tx: tx_id, band });
            }
            CsmaOutcome::Backoff(slots) => {
                let at = retry_time(now, &sense, slots, &self.cfg.mac);
                self.messages.insert(id, msg);
                self.schedule(at, EventKind::Attempt { message: id });
            }
            CsmaOutcome::Drop(reason) => {
                self.log.drops.push(DropEvent {
                    time_us: now,
                    source: vehicle,
                    platoon,
                    kind: msg.kind,
                    reason,
                });
            }
        }
    }

    fn tx_end(&mut self, now: u64, tx_id: u64, band: Band) {
        let Some(msg) = self.in_flight.remove(&tx_id) else {
            return;
        };
        let Some(tx) = self.medium.get(band, tx_id).cloned() else {
            return;
        };
        let Some(p) = tx.platoon else { return };
        let blackout_us = self.cfg.vdsa.retune_blackout_ms * 1000;
        let clock = self.platoons[p].clock;
        let threshold = self.cfg.radio.reception_sinr_threshold_db;
        let members = self.platoons[p].members.clone();
        let leader = members[0];

        for (i, &r) in members.iter().enumerate() {
            if r == tx.source || !self.world.vehicles[r].active {
                continue;
            }
            let half_duplex = self.medium.transmitting(r, band, tx.start_us, tx.end_us);
            let (tuned, dtt_dbm) = match band {
                Band::Cch => (!half_duplex, f64::NEG_INFINITY),
                Band::Tvws(ch) => {
                    let in_window = clock.tuned(tx.start_us, blackout_us)
                        && tx.end_us as i64 <= clock.window_us(tx.start_us).1;
                    (
                        self.tuned[r] == ch && in_window && !half_duplex,
                        self.eff_dtt_dbm(r, ch),
                    )
                }
            };
            let rx_at = self.world.vehicles[r].point();
            let sinr = airtime_min_sinr(
                &tx,
                self.medium.overlapping(band, tx.start_us, tx.end_us),
                rx_at,
                dtt_dbm,
                &self.spectrum,
                &self.cfg.radio,
            );
            let success = receive(sinr, threshold, tuned) == RxOutcome::Success;
            self.log.rx.push(RxEvent {
                tx_id,
                receiver: r,
                time_us: now,
                success,
                sinr_db: sinr,
            });
            if !success {
                continue;
            }
            let me = &mut self.world.vehicles[r];
            if i > 0 && members[i - 1] == tx.source {
                me.last_known_predecessor = Some(msg.payload);
            }
            if tx.source == leader && me.role != Role::Leader {
                me.last_known_leader = Some(msg.payload);
                if let Some(c) = msg.announced_channel {
                    if self.cfg.vdsa.decision_propagation == DecisionPropagation::Lossy {
                        self.tuned[r] = c;
                    }
                }
            }
            if r == leader {
                for &report in &msg.reports {
                    self.deliver_report(p, report);
                }
            }
        }
    }
}
