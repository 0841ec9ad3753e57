//! Experiment description and world construction.
//!
//! A [`SimConfig`] is a complete TOML-serializable experiment. Every field has
//! a default; the defaults are the two-platoon motorway scenario. Loading
//! resolves an external DTT field file into the inline form, so a loaded
//! config always re-serializes to something that parses back to itself.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::mac::MacParams;
use crate::mobility::{CaccGains, LeadProfile, Role, VehicleState};
use crate::propagation::{AcirTable, DttField, DttProtection, Point, RadioParams, Spectrum};
use crate::rng;
use crate::units::kmh_to_mps;
use crate::vdsa::VdsaParams;

/// How the platoons use the TVWS radio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// All traffic on the 5.9 GHz control channel.
    CchOnly,
    /// CACC messages on the initial TVWS channel, never switching.
    FixedTvws,
    /// Sensing-driven channel selection with the given switching cost (dB).
    Bumblebee { cost_db: f64 },
}

impl Strategy {
    pub fn uses_tvws(&self) -> bool {
        !matches!(self, Strategy::CchOnly)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::CchOnly => f.write_str("cch-only"),
            Strategy::FixedTvws => f.write_str("fixed-tvws"),
            Strategy::Bumblebee { cost_db } => write!(f, "bumblebee:{cost_db}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse {
            what: "strategy".into(),
            message: format!("`{s}` is not one of cch-only, fixed-tvws, bumblebee:<cost_db>"),
        };
        match s.trim() {
            "cch-only" => Ok(Strategy::CchOnly),
            "fixed-tvws" => Ok(Strategy::FixedTvws),
            other => {
                let cost = other.strip_prefix("bumblebee:").ok_or_else(bad)?;
                let cost_db: f64 = cost.parse().map_err(|_| bad())?;
                if !cost_db.is_finite() {
                    return Err(bad());
                }
                Ok(Strategy::Bumblebee { cost_db })
            }
        }
    }
}

impl Serialize for Strategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadEdge {
    /// Re-enter at the other end of the road.
    Wrap,
    /// Leave the simulation.
    Retire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlatoonSpec {
    pub size: usize,
    pub lane: u32,
    pub direction: i8,
    pub initial_head_position_m: f64,
    pub initial_speed_mps: f64,
    /// Bumper-to-bumper gap, also the CACC desired gap.
    pub inter_vehicle_gap_m: f64,
    /// Offset of this platoon's sensing/transmission cycle from t = 0.
    #[serde(default)]
    pub duty_offset_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DttReceiverSpec {
    pub id: u32,
    pub longitudinal_position_m: f64,
    pub distance_to_motorway_m: f64,
    pub group: u32,
}

impl DttReceiverSpec {
    /// Odd ids sit on the positive side of the road, even ids on the negative side.
    pub fn point(&self) -> Point {
        let side = if self.id % 2 == 1 { 1.0 } else { -1.0 };
        Point::new(
            self.longitudinal_position_m,
            side * self.distance_to_motorway_m,
        )
    }
}

/// The protected receiver locations of the reference scenario.
pub fn default_receivers() -> Vec<DttReceiverSpec> {
    [
        (1, 240.0, 120.0, 1),
        (2, 4520.0, 164.0, 3),
        (3, 4320.0, 244.0, 3),
        (4, 320.0, 45.0, 1),
        (5, 1687.0, 80.0, 2),
        (6, 4112.0, 304.0, 3),
        (7, 632.0, 140.0, 1),
        (8, 485.0, 270.0, 1),
        (9, 1463.0, 154.0, 2),
        (10, 2087.0, 127.0, 2),
    ]
    .into_iter()
    .map(|(id, x, d, group)| DttReceiverSpec {
        id,
        longitudinal_position_m: x,
        distance_to_motorway_m: d,
        group,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelPlan {
    pub tvws_center_freqs_mhz: Vec<f64>,
    pub channel_spacing_mhz: f64,
    pub cch_freq_mhz: f64,
    pub channel_bandwidth_mhz: f64,
    /// Index into `tvws_center_freqs_mhz`; also the fixed-TVWS channel.
    pub initial_tvws_channel: usize,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        ChannelPlan {
            tvws_center_freqs_mhz: vec![490.0, 498.0, 506.0, 514.0, 522.0],
            channel_spacing_mhz: 8.0,
            cch_freq_mhz: 5900.0,
            channel_bandwidth_mhz: 10.0,
            initial_tvws_channel: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DttFieldSource {
    /// CSV segment table, relative to the config file.
    File {
        path: PathBuf,
    },
    Inline(DttField),
}

/// How often the per-vehicle DTT shadowing term is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowingRedraw {
    /// Once per vehicle per field segment.
    SegmentEntry,
    EveryTick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    /// DTT SIR is sampled every this many ticks while a TVWS transmission is on air.
    pub sir_sample_stride_ticks: u64,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            sir_sample_stride_ticks: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub strategy: Strategy,
    pub road_length_m: f64,
    pub lane_count: u32,
    pub lane_width_m: f64,
    pub sim_duration_s: f64,
    pub tick_ms: u64,
    pub vehicle_length_m: f64,
    pub background_density_per_km_lane: f64,
    pub background_speed_kmh: [f64; 2],
    pub background_edge: RoadEdge,
    pub shadowing_redraw: ShadowingRedraw,
    pub lead_profile: LeadProfile,
    pub cacc: CaccGains,
    pub platoons: Vec<PlatoonSpec>,
    pub channel_plan: ChannelPlan,
    pub radio: RadioParams,
    pub mac: MacParams,
    pub vdsa: VdsaParams,
    pub dtt_protection: DttProtection,
    pub acir: AcirTable,
    pub metrics: MetricsParams,
    pub dtt_receivers: Vec<DttReceiverSpec>,
    pub dtt_field: DttFieldSource,
}

impl Default for SimConfig {
    fn default() -> Self {
        let platoon = |lane, direction, head| PlatoonSpec {
            size: 10,
            lane,
            direction,
            initial_head_position_m: head,
            initial_speed_mps: kmh_to_mps(130.0),
            inter_vehicle_gap_m: 10.0,
            duty_offset_ms: 0,
        };
        SimConfig {
            seed: 1,
            strategy: Strategy::Bumblebee { cost_db: 3.0 },
            road_length_m: 5000.0,
            lane_count: 4,
            lane_width_m: 3.5,
            sim_duration_s: 140.0,
            tick_ms: 1,
            vehicle_length_m: 4.0,
            background_density_per_km_lane: 20.0,
            background_speed_kmh: [100.0, 130.0],
            background_edge: RoadEdge::Wrap,
            shadowing_redraw: ShadowingRedraw::SegmentEntry,
            lead_profile: LeadProfile::default(),
            cacc: CaccGains::default(),
            platoons: vec![
                platoon(0, 1, 400.0),
                PlatoonSpec {
                    duty_offset_ms: 100,
                    ..platoon(3, -1, 4600.0)
                },
            ],
            channel_plan: ChannelPlan::default(),
            radio: RadioParams::default(),
            mac: MacParams::default(),
            vdsa: VdsaParams::default(),
            dtt_protection: DttProtection::default(),
            acir: AcirTable::default(),
            metrics: MetricsParams::default(),
            dtt_receivers: default_receivers(),
            dtt_field: DttFieldSource::Inline(DttField::synthetic_default()),
        }
    }
}

impl SimConfig {
    /// The inline DTT field. Panics if the config was not produced by a loader.
    pub fn field(&self) -> &DttField {
        match &self.dtt_field {
            DttFieldSource::Inline(f) => f,
            DttFieldSource::File { path } => panic!(
                "DTT field {} not resolved; load the config first",
                path.display()
            ),
        }
    }

    pub fn spectrum(&self) -> Spectrum {
        Spectrum {
            field: self.field().clone(),
            acir: self.acir.clone(),
            tvws_freqs_mhz: self.channel_plan.tvws_center_freqs_mhz.clone(),
            spacing_mhz: self.channel_plan.channel_spacing_mhz,
        }
    }

    pub fn duration_us(&self) -> u64 {
        (self.sim_duration_s * 1e6).round() as u64
    }

    pub fn tick_us(&self) -> u64 {
        self.tick_ms * 1000
    }

    pub fn lane_lateral_m(&self, lane: u32) -> f64 {
        (f64::from(lane) - f64::from(self.lane_count - 1) / 2.0) * self.lane_width_m
    }

    pub fn is_outer_lane(&self, lane: u32) -> bool {
        lane == 0 || lane + 1 == self.lane_count
    }

    /// Inner lanes host background traffic. Lanes below the middle drive in
    /// the +1 direction.
    pub fn inner_lanes(&self) -> Vec<u32> {
        (0..self.lane_count)
            .filter(|&l| !self.is_outer_lane(l))
            .collect()
    }

    pub fn lane_direction(&self, lane: u32) -> i8 {
        if 2 * lane < self.lane_count {
            1
        } else {
            -1
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every invariant, naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(field, format!("must be > 0, got {v}")))
            }
        };
        positive("sim_duration_s", self.sim_duration_s)?;
        positive("road_length_m", self.road_length_m)?;
        positive("lane_width_m", self.lane_width_m)?;
        positive("vehicle_length_m", self.vehicle_length_m)?;
        if self.tick_ms == 0 || 50 % self.tick_ms != 0 {
            return Err(Error::validation("tick_ms", "must divide 50 ms evenly"));
        }
        let duty = &self.vdsa.duty;
        for (name, v) in [
            ("vdsa.duty.cycle_ms", duty.cycle_ms),
            ("vdsa.duty.sensing_ms", duty.sensing_ms),
        ] {
            if v % self.tick_ms != 0 {
                return Err(Error::validation(name, "must be a multiple of tick_ms"));
            }
        }
        if duty.sensing_ms >= duty.cycle_ms || duty.cycles_per_decision == 0 {
            return Err(Error::validation(
                "vdsa.duty",
                "need 0 < sensing_ms < cycle_ms and cycles_per_decision >= 1",
            ));
        }
        if self.vdsa.retune_blackout_ms * 1000 + self.mac.airtime_us > duty.transmission_ms() * 1000
        {
            return Err(Error::validation(
                "vdsa.retune_blackout_ms",
                "blackout plus one airtime must fit in the transmission window",
            ));
        }
        if self.lane_count < 2 {
            return Err(Error::validation("lane_count", "need at least two lanes"));
        }
        if !(self.background_density_per_km_lane >= 0.0) {
            return Err(Error::validation(
                "background_density_per_km_lane",
                "must be >= 0",
            ));
        }
        let [lo, hi] = self.background_speed_kmh;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::validation(
                "background_speed_kmh",
                "need 0 <= low <= high",
            ));
        }
        for (i, p) in self.platoons.iter().enumerate() {
            let field = |f: &str| format!("platoons[{i}].{f}");
            if p.size < 2 {
                return Err(Error::validation(
                    field("size"),
                    "a platoon needs a leader and at least one follower",
                ));
            }
            if !(p.inter_vehicle_gap_m > 0.0) {
                return Err(Error::validation(
                    field("inter_vehicle_gap_m"),
                    "must be > 0",
                ));
            }
            if p.direction != 1 && p.direction != -1 {
                return Err(Error::validation(field("direction"), "must be +1 or -1"));
            }
            if p.lane >= self.lane_count || !self.is_outer_lane(p.lane) {
                return Err(Error::validation(
                    field("lane"),
                    "platoons drive on an outer lane",
                ));
            }
            if !(p.initial_speed_mps >= 0.0) {
                return Err(Error::validation(
                    field("initial_speed_mps"),
                    "must be >= 0",
                ));
            }
            let tail = p.initial_head_position_m
                - f64::from(p.direction)
                    * (p.size - 1) as f64
                    * (p.inter_vehicle_gap_m + self.vehicle_length_m);
            for x in [p.initial_head_position_m, tail] {
                if !(0.0..=self.road_length_m).contains(&x) {
                    return Err(Error::validation(
                        field("initial_head_position_m"),
                        format!("platoon extends to {x} m, outside the road"),
                    ));
                }
            }
        }
        if let [a, b] = self.platoons.as_slice() {
            if a.direction == b.direction {
                return Err(Error::validation(
                    "platoons",
                    "the two platoons travel in opposite directions",
                ));
            }
        }
        let plan = &self.channel_plan;
        let freqs = &plan.tvws_center_freqs_mhz;
        if freqs.is_empty() {
            return Err(Error::validation(
                "channel_plan.tvws_center_freqs_mhz",
                "empty",
            ));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "channel_plan.tvws_center_freqs_mhz",
                "must be strictly increasing",
            ));
        }
        if freqs
            .windows(2)
            .any(|w| (w[1] - w[0] - plan.channel_spacing_mhz).abs() > 1e-9)
        {
            return Err(Error::validation(
                "channel_plan.tvws_center_freqs_mhz",
                format!(
                    "adjacent channels must be {} MHz apart",
                    plan.channel_spacing_mhz
                ),
            ));
        }
        if plan.initial_tvws_channel >= freqs.len() {
            return Err(Error::validation(
                "channel_plan.initial_tvws_channel",
                "index out of range",
            ));
        }
        for (i, r) in self.dtt_receivers.iter().enumerate() {
            if !(0.0..=self.road_length_m).contains(&r.longitudinal_position_m) {
                return Err(Error::validation(
                    format!("dtt_receivers[{i}].longitudinal_position_m"),
                    "outside the road",
                ));
            }
        }
        if let DttFieldSource::Inline(field) = &self.dtt_field {
            field.validate(self.road_length_m)?;
        }
        self.acir.validate()?;
        if self.metrics.sir_sample_stride_ticks == 0 {
            return Err(Error::validation(
                "metrics.sir_sample_stride_ticks",
                "must be >= 1",
            ));
        }
        self.mac.validate()?;
        Ok(())
    }
}

/// Parses a TOML config. A file-based DTT field is resolved against `base_dir`.
pub fn load_config_str(text: &str, base_dir: Option<&Path>) -> Result<SimConfig> {
    let mut cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Parse {
        what: "config".into(),
        message: e.to_string(),
    })?;
    if let DttFieldSource::File { path } = &cfg.dtt_field {
        let full = match base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.clone(),
        };
        cfg.dtt_field = DttFieldSource::Inline(DttField::load(&full)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_config_str(&text, path.parent())
}

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Platoon {
    pub id: usize,
    pub virtual_lead: usize,
    /// Leader first, then followers in order.
    pub members: Vec<usize>,
    pub desired_gap_m: f64,
    pub duty_offset_ms: u64,
}

impl Platoon {
    pub fn leader(&self) -> usize {
        self.members[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DttReceiver {
    pub spec: DttReceiverSpec,
    pub position: Point,
}

/// Everything that moves, plus the static receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub time_us: u64,
    pub road_length_m: f64,
    pub vehicle_length_m: f64,
    pub background_edge: RoadEdge,
    pub lead_profile: LeadProfile,
    pub cacc: CaccGains,
    pub vehicles: Vec<VehicleState>,
    pub platoons: Vec<Platoon>,
    pub receivers: Vec<DttReceiver>,
}

impl World {
    pub fn background_count(&self) -> usize {
        self.vehicles
            .iter()
            .filter(|v| v.role == Role::Background)
            .count()
    }

    /// Longitudinal distance between the heads of platoons `a` and `b`.
    pub fn head_distance_m(&self, a: usize, b: usize) -> f64 {
        let pa = self.vehicles[self.platoons[a].leader()].position_m;
        let pb = self.vehicles[self.platoons[b].leader()].position_m;
        (pa - pb).abs()
    }

    /// Smallest bumper-to-bumper gap inside any platoon.
    pub fn min_platoon_gap_m(&self) -> f64 {
        let mut min = f64::INFINITY;
        for p in &self.platoons {
            for w in p.members.windows(2) {
                let (a, b) = (&self.vehicles[w[0]], &self.vehicles[w[1]]);
                if a.active && b.active {
                    min = min.min((a.position_m - b.position_m) * a.dir() - self.vehicle_length_m);
                }
            }
        }
        min
    }
}

/// Number of background vehicles for a config.
pub fn background_vehicle_count(cfg: &SimConfig) -> usize {
    (cfg.background_density_per_km_lane * cfg.road_length_m / 1000.0
        * cfg.inner_lanes().len() as f64)
        .round() as usize
}

/// Materializes the world for `cfg`. Pure in `(cfg, cfg.seed)`.
pub fn build_world(cfg: &SimConfig) -> Result<World> {
    let mut vehicles = Vec::new();
    let mut platoons = Vec::new();
    let len = cfg.vehicle_length_m;

    for (pid, spec) in cfg.platoons.iter().enumerate() {
        let dir = f64::from(spec.direction);
        let lateral = cfg.lane_lateral_m(spec.lane);
        let mut push = |role, position_m| {
            let id = vehicles.len();
            vehicles.push(VehicleState {
                id,
                role,
                platoon_id: Some(pid),
                lane: spec.lane,
                direction: spec.direction,
                lateral_m: lateral,
                position_m,
                speed_mps: spec.initial_speed_mps,
                accel_mps2: 0.0,
                active: true,
                last_known_predecessor: None,
                last_known_leader: None,
            });
            id
        };
        let head = spec.initial_head_position_m;
        // disturbance car at the leader's equilibrium ACC headway
        let vl_gap = cfg.cacc.acc_headway_s * spec.initial_speed_mps;
        let virtual_lead = push(Role::VirtualLead, head + dir * (vl_gap + len));
        let members = (0..spec.size)
            .map(|i| {
                let role = if i == 0 {
                    Role::Leader
                } else {
                    Role::Follower(i)
                };
                push(
                    role,
                    head - dir * i as f64 * (spec.inter_vehicle_gap_m + len),
                )
            })
            .collect();
        platoons.push(Platoon {
            id: pid,
            virtual_lead,
            members,
            desired_gap_m: spec.inter_vehicle_gap_m,
            duty_offset_ms: spec.duty_offset_ms,
        });
    }

    let by_lane = |lane: u32| {
        platoons
            .iter()
            .flat_map(|p| p.members.iter())
            .map(|&m| &vehicles[m])
            .filter(move |v| v.lane == lane)
    };
    for lane in 0..cfg.lane_count {
        let mut xs: Vec<(usize, f64)> = by_lane(lane)
            .map(|v| (v.platoon_id.unwrap(), v.position_m))
            .collect();
        xs.sort_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(w) = xs.windows(2).find(|w| w[1].1 - w[0].1 < len) {
            return Err(Error::Placement {
                platoon: w[1].0,
                gap_m: w[1].1 - w[0].1 - len,
            });
        }
    }

    let inner = cfg.inner_lanes();
    let count = background_vehicle_count(cfg);
    let mut rng = rng::stream(cfg.seed, rng::PLACEMENT_STREAM);
    let [lo, hi] = cfg.background_speed_kmh;
    for i in 0..count {
        let lane = inner[i % inner.len()];
        let position_m = rng.gen_range(0.0..cfg.road_length_m);
        let speed_kmh = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let id = vehicles.len();
        vehicles.push(VehicleState {
            id,
            role: Role::Background,
            platoon_id: None,
            lane,
            direction: cfg.lane_direction(lane),
            lateral_m: cfg.lane_lateral_m(lane),
            position_m,
            speed_mps: kmh_to_mps(speed_kmh),
            accel_mps2: 0.0,
            active: true,
            last_known_predecessor: None,
            last_known_leader: None,
        });
    }

    let receivers = cfg
        .dtt_receivers
        .iter()
        .map(|spec| DttReceiver {
            spec: spec.clone(),
            position: spec.point(),
        })
        .collect();

    Ok(World {
        time_us: 0,
        road_length_m: cfg.road_length_m,
        vehicle_length_m: len,
        background_edge: cfg.background_edge,
        lead_profile: cfg.lead_profile.clone(),
        cacc: cfg.cacc.clone(),
        vehicles,
        platoons,
        receivers,
    })
}
