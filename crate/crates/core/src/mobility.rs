//! Vehicle kinematics: the periodic lead-vehicle disturbance, an ACC leader,
//! constant-spacing CACC followers and constant-speed background traffic.
//!
//! Followers never read a neighbour's true state. They act on the
//! [`CamSnapshot`]s the radio layer delivered, extrapolated at the recorded
//! speed.

use serde::{Deserialize, Serialize};

use crate::propagation::Point;
use crate::scenario::{RoadEdge, World};
use crate::units::kmh_to_mps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// The disturbance car ahead of a platoon. Has no radio.
    VirtualLead,
    Leader,
    /// Position behind the leader, starting at 1.
    Follower(usize),
    Background,
}

/// Mobility content of a CAM or CACC message.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamSnapshot {
    pub source_id: usize,
    pub position_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    pub timestamp_us: u64,
}

impl CamSnapshot {
    /// Position extrapolated to `now_us` at the recorded speed.
    pub fn position_at(&self, now_us: u64, direction: f64) -> f64 {
        let dt = now_us.saturating_sub(self.timestamp_us) as f64 * 1e-6;
        self.position_m + direction * self.speed_mps * dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub role: Role,
    pub platoon_id: Option<usize>,
    pub lane: u32,
    /// +1 or -1 along the road axis.
    pub direction: i8,
    pub lateral_m: f64,
    pub position_m: f64,
    pub speed_mps: f64,
    pub accel_mps2: f64,
    /// False once the vehicle has left the road (platoon vehicles only).
    pub active: bool,
    pub last_known_predecessor: Option<CamSnapshot>,
    pub last_known_leader: Option<CamSnapshot>,
}

impl VehicleState {
    pub fn dir(&self) -> f64 {
        f64::from(self.direction)
    }

    pub fn point(&self) -> Point {
        Point::new(self.position_m, self.lateral_m)
    }

    pub fn snapshot(&self, now_us: u64) -> CamSnapshot {
        CamSnapshot {
            source_id: self.id,
            position_m: self.position_m,
            speed_mps: self.speed_mps,
            accel_mps2: self.accel_mps2,
            timestamp_us: now_us,
        }
    }

    pub fn has_radio(&self) -> bool {
        self.role != Role::VirtualLead && self.active
    }

    pub fn follower_index(&self) -> Option<usize> {
        match self.role {
            Role::Follower(i) => Some(i),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Lead-vehicle disturbance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileShape {
    /// Ramp down for half the period, ramp up for the other half.
    Triangle,
    /// Ramps around a `hold_s` plateau at the low speed.
    Trapezoid { hold_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeadProfile {
    pub high_kmh: f64,
    pub low_kmh: f64,
    pub period_s: f64,
    pub shape: ProfileShape,
}

impl Default for LeadProfile {
    fn default() -> Self {
        LeadProfile {
            high_kmh: 130.0,
            low_kmh: 100.0,
            period_s: 30.0,
            shape: ProfileShape::Triangle,
        }
    }
}

/// Speed of the disturbance car at `t_s`, in m/s.
pub fn lead_velocity_profile(profile: &LeadProfile, t_s: f64) -> f64 {
    let high = kmh_to_mps(profile.high_kmh);
    let low = kmh_to_mps(profile.low_kmh);
    let period = profile.period_s;
    let phase = t_s.rem_euclid(period);
    let hold = match profile.shape {
        ProfileShape::Triangle => 0.0,
        ProfileShape::Trapezoid { hold_s } => hold_s.clamp(0.0, period),
    };
    let ramp = (period - hold) / 2.0;
    if ramp <= 0.0 {
        return low;
    }
    if phase < ramp {
        high + (low - high) * phase / ramp
    } else if phase < ramp + hold {
        low
    } else {
        low + (high - low) * (phase - ramp - hold) / ramp
    }
}

/// Same profile on the integer clock. The period is reduced in whole
/// microseconds, so `t_us` and `t_us + period` give bit-identical speeds.
pub fn lead_velocity_at_us(profile: &LeadProfile, t_us: u64) -> f64 {
    let period_us = (profile.period_s * 1e6).round();
    if period_us >= 1.0 {
        let phase_us = t_us % period_us as u64;
        lead_velocity_profile(profile, phase_us as f64 * 1e-6)
    } else {
        lead_velocity_profile(profile, t_us as f64 * 1e-6)
    }
}

// ---------------------------------------------------------------------------
// Controllers
// ---------------------------------------------------------------------------

/// Gains of the constant-spacing CACC law and the leader's ACC.
///
/// Follower command:
/// `a = α1·a_pred + α2·a_lead + α3·(v − v_pred) + α4·(v − v_lead) + α5·(d_des − gap)`
/// with `α1 = 1 − c1`, `α2 = c1`, `α3 = −(2ξ − c1(ξ + √(ξ²−1)))ωn`,
/// `α4 = −c1(ξ + √(ξ²−1))ωn`, `α5 = −ωn²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaccGains {
    pub c1: f64,
    pub xi: f64,
    pub omega_n: f64,
    pub min_accel_mps2: f64,
    pub max_accel_mps2: f64,
    /// Leader ACC time headway to the disturbance car.
    pub acc_headway_s: f64,
    pub acc_lambda: f64,
    /// Older snapshots are not trusted; the follower falls back to ACC.
    pub max_snapshot_age_s: f64,
}

impl Default for CaccGains {
    fn default() -> Self {
        CaccGains {
            c1: 0.5,
            xi: 1.0,
            omega_n: 0.2,
            min_accel_mps2: -8.0,
            max_accel_mps2: 3.0,
            acc_headway_s: 1.2,
            acc_lambda: 0.1,
            max_snapshot_age_s: 1.0,
        }
    }
}

impl CaccGains {
    fn alphas(&self) -> [f64; 5] {
        let root = self.xi + (self.xi * self.xi - 1.0).max(0.0).sqrt();
        [
            1.0 - self.c1,
            self.c1,
            -(2.0 * self.xi - self.c1 * root) * self.omega_n,
            -self.c1 * root * self.omega_n,
            -self.omega_n * self.omega_n,
        ]
    }

    fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.min_accel_mps2, self.max_accel_mps2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MissingSnapshot;

/// Raw CACC law. Needs fresh predecessor and leader snapshots.
pub fn cacc_law(
    me: &VehicleState,
    now_us: u64,
    gains: &CaccGains,
    desired_gap_m: f64,
    vehicle_length_m: f64,
) -> Result<f64, MissingSnapshot> {
    let max_age_us = (gains.max_snapshot_age_s * 1e6) as u64;
    let fresh =
        |s: Option<CamSnapshot>| s.filter(|s| now_us.saturating_sub(s.timestamp_us) <= max_age_us);
    let pred = fresh(me.last_known_predecessor).ok_or(MissingSnapshot)?;
    let lead = fresh(me.last_known_leader).ok_or(MissingSnapshot)?;
    let dir = me.dir();
    let pred_pos = pred.position_at(now_us, dir);
    let gap = (pred_pos - me.position_m) * dir - vehicle_length_m;
    let [a1, a2, a3, a4, a5] = gains.alphas();
    let a = a1 * pred.accel_mps2
        + a2 * lead.accel_mps2
        + a3 * (me.speed_mps - pred.speed_mps)
        + a4 * (me.speed_mps - lead.speed_mps)
        + a5 * (desired_gap_m - gap);
    Ok(gains.clamp(a))
}

/// Commanded follower acceleration. Without fresh snapshots the follower
/// degrades to ACC on its radar view of the predecessor.
pub fn cacc_update(
    me: &VehicleState,
    predecessor: &VehicleState,
    now_us: u64,
    gains: &CaccGains,
    desired_gap_m: f64,
    vehicle_length_m: f64,
) -> f64 {
    cacc_law(me, now_us, gains, desired_gap_m, vehicle_length_m)
        .unwrap_or_else(|_| acc_update(me, predecessor, gains, desired_gap_m, vehicle_length_m))
}

/// ACC against the (sensed, not communicated) vehicle ahead, keeping
/// `standstill_gap_m` plus the time headway.
pub fn acc_update(
    me: &VehicleState,
    ahead: &VehicleState,
    gains: &CaccGains,
    standstill_gap_m: f64,
    vehicle_length_m: f64,
) -> f64 {
    let gap = (ahead.position_m - me.position_m) * me.dir() - vehicle_length_m;
    let a = ((ahead.speed_mps - me.speed_mps)
        + gains.acc_lambda * (gap - standstill_gap_m - gains.acc_headway_s * me.speed_mps))
        / gains.acc_headway_s;
    gains.clamp(a)
}

/// Advances every vehicle by `dt_s` with semi-implicit Euler. Controllers
/// are evaluated on the state at the start of the step.
pub fn step_world(world: &mut World, dt_s: f64) {
    let now_us = world.time_us;
    let gains = world.cacc.clone();
    let length = world.vehicle_length_m;

    let mut commands = vec![0.0; world.vehicles.len()];
    for platoon in &world.platoons {
        let vl = &world.vehicles[platoon.virtual_lead];
        let target = lead_velocity_at_us(&world.lead_profile, now_us);
        commands[vl.id] = (target - vl.speed_mps) / dt_s;
        let leader = &world.vehicles[platoon.members[0]];
        if leader.active {
            commands[leader.id] = acc_update(leader, vl, &gains, 0.0, length);
        }
        for w in platoon.members.windows(2) {
            let (pred, v) = (&world.vehicles[w[0]], &world.vehicles[w[1]]);
            if v.active {
                commands[v.id] =
                    cacc_update(v, pred, now_us, &gains, platoon.desired_gap_m, length);
            }
        }
    }

    let road = world.road_length_m;
    for v in world.vehicles.iter_mut() {
        if !v.active {
            continue;
        }
        v.accel_mps2 = commands[v.id];
        v.speed_mps = (v.speed_mps + v.accel_mps2 * dt_s).max(0.0);
        v.position_m += v.dir() * v.speed_mps * dt_s;
        let off_road = v.position_m < 0.0 || v.position_m > road;
        match v.role {
            Role::VirtualLead => {}
            Role::Background if off_road => match world.background_edge {
                RoadEdge::Wrap => v.position_m = v.position_m.rem_euclid(road),
                RoadEdge::Retire => v.active = false,
            },
            _ if off_road => v.active = false,
            _ => {}
        }
    }
    world.time_us += (dt_s * 1e6).round() as u64;
}
