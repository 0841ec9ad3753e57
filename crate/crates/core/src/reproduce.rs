//! The reproduction batch: the five reference strategies over a seed range,
//! followed by pass/fail checks of the expected result families.

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::Result;
use crate::experiment::{batch_tables, run_matrix, run_one, RunRecord, TAIL_FOLLOWERS};
use crate::mac::Band;
use crate::metrics::{z_quantile, Ecdf, PrrKind};
use crate::mobility::lead_velocity_at_us;
use crate::propagation::{
    dtt_power_at, effective_dtt_power, link_sinr, v2v_rx_power, Emission, Point,
};
use crate::scenario::{SimConfig, Strategy};
use crate::units::{dbm_to_mw, mw_to_dbm};
use crate::vdsa::{select_channel, Phase, PlatoonClock};

/// Edge channels carrying DTT in the reference plan.
pub const EDGE_FREQS_MHZ: [f64; 2] = [490.0, 522.0];
pub const PROXIMITY_RADIUS_M: f64 = 1500.0;

pub fn reference_strategies() -> Vec<Strategy> {
    vec![
        Strategy::CchOnly,
        Strategy::FixedTvws,
        Strategy::Bumblebee { cost_db: 0.0 },
        Strategy::Bumblebee { cost_db: 3.0 },
        Strategy::Bumblebee { cost_db: 6.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Full,
    /// Three seeds, wider tolerances.
    Quick,
}

impl Mode {
    pub fn default_seeds(self) -> Vec<u64> {
        match self {
            Mode::Full => (1..=20).collect(),
            Mode::Quick => (1..=3).collect(),
        }
    }

    pub fn tolerances(self) -> Tolerances {
        match self {
            Mode::Full => Tolerances {
                min_prr_gain: 0.02,
                spearman_alpha: 0.05,
                switch_range: (1.0, 8.0),
                strict_switch_order: true,
                max_edge_residence: 0.05,
                min_near_fraction: 0.70,
                max_pinned_switches: 1,
                max_sir_sup: 0.15,
                pinned_seeds: 3,
            },
            Mode::Quick => Tolerances {
                min_prr_gain: 0.01,
                spearman_alpha: 0.25,
                switch_range: (0.5, 10.0),
                strict_switch_order: false,
                max_edge_residence: 0.10,
                min_near_fraction: 0.60,
                max_pinned_switches: 1,
                max_sir_sup: 0.25,
                pinned_seeds: 1,
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Full => "full",
            Mode::Quick => "quick",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Tail-PRR gain of the 6 dB strategy over the CCH baseline.
    pub min_prr_gain: f64,
    pub spearman_alpha: f64,
    /// Allowed per-platoon mean switch counts per run.
    pub switch_range: (f64, f64),
    /// Require the low-cost/high-cost ordering at one-sided 95% confidence
    /// instead of a plain comparison of means.
    pub strict_switch_order: bool,
    pub max_edge_residence: f64,
    pub min_near_fraction: f64,
    pub max_pinned_switches: usize,
    pub max_sir_sup: f64,
    pub pinned_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
}

impl CriterionResult {
    fn new(id: u8, name: &'static str, passed: bool, measured: String) -> Self {
        CriterionResult {
            id,
            name,
            passed,
            measured,
        }
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured
        )
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub mode: Mode,
    pub seeds: usize,
    pub results: Vec<CriterionResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "reproduction report ({} mode, {} seeds)",
            self.mode, self.seeds
        )?;
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        let passed = self.results.iter().filter(|r| r.passed).count();
        write!(f, "{passed}/{} checks passed", self.results.len())
    }
}

// ---------------------------------------------------------------------------
// Helpers over records
// ---------------------------------------------------------------------------

fn of(records: &[RunRecord], strategy: Strategy) -> Vec<&RunRecord> {
    records.iter().filter(|r| r.strategy == strategy).collect()
}

fn bumblebee_costs(records: &[RunRecord]) -> Vec<f64> {
    let mut costs: Vec<f64> = Vec::new();
    for r in records {
        if let Strategy::Bumblebee { cost_db } = r.strategy {
            if !costs.contains(&cost_db) {
                costs.push(cost_db);
            }
        }
    }
    costs.sort_by(f64::total_cmp);
    costs
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> f64 {
    let Some(m) = mean(v) else { return 0.0 };
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn mean_tail_prr(records: &[RunRecord], strategy: Strategy) -> Option<f64> {
    let v: Vec<f64> = of(records, strategy)
        .iter()
        .filter_map(|r| r.summary.tail_prr(TAIL_FOLLOWERS))
        .collect();
    mean(&v)
}

/// Average ranks, ties sharing the mean of their positions (1-based).
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x).unwrap_or(0.0), mean(y).unwrap_or(0.0));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman rank correlation and the one-sided p-value for `rho > 0`
/// (t approximation with `n - 2` degrees of freedom).
pub fn spearman(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let rho = pearson(&ranks(x), &ranks(y));
    if n < 3 {
        return (rho, 1.0);
    }
    if rho >= 1.0 {
        return (rho, 0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (rho, 1.0 - dist.cdf(t))
}

// ---------------------------------------------------------------------------
// Matrix criteria
// ---------------------------------------------------------------------------

pub fn check_vdsa_benefit(records: &[RunRecord], tol: &Tolerances) -> CriterionResult {
    const NAME: &str = "tail PRR gain over the CCH baseline";
    let Some(base) = mean_tail_prr(records, Strategy::CchOnly) else {
        return CriterionResult::new(1, NAME, false, "no cch-only runs".into());
    };
    let costs = bumblebee_costs(records);
    let mut parts = vec![format!("cch-only {base:.4}")];
    let mut ok = !costs.is_empty();
    for &c in &costs {
        let s = Strategy::Bumblebee { cost_db: c };
        let gain = mean_tail_prr(records, s).map_or(f64::NAN, |m| m - base);
        parts.push(format!("{s} {gain:+.4}"));
        ok &= gain > 0.0;
    }
    let six = Strategy::Bumblebee { cost_db: 6.0 };
    let gain6 = mean_tail_prr(records, six).map_or(f64::NAN, |m| m - base);
    ok &= gain6 >= tol.min_prr_gain;
    parts.push(format!("need {six} gain >= {:.3}", tol.min_prr_gain));
    CriterionResult::new(1, NAME, ok, parts.join(", "))
}

/// Per-follower PRR keyed by (seed, platoon, follower index).
fn follower_prr(records: &[&RunRecord]) -> HashMap<(u64, usize, usize), f64> {
    let mut out = HashMap::new();
    for r in records {
        for (p, followers) in r.summary.leader_prr.iter().enumerate() {
            for f in followers {
                if let Some(v) = f.prr {
                    out.insert((r.seed, p, f.follower_index), v);
                }
            }
        }
    }
    out
}

/// Gain over CCH-only against follower index, for followers past the
/// platoon midpoint, pooled over seeds and platoons.
pub fn tail_gain_points(records: &[RunRecord], strategy: Strategy) -> (Vec<f64>, Vec<f64>) {
    let base = follower_prr(&of(records, Strategy::CchOnly));
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for r in of(records, strategy) {
        for (p, followers) in r.summary.leader_prr.iter().enumerate() {
            for f in followers {
                if 2 * f.follower_index <= followers.len() {
                    continue;
                }
                if let (Some(v), Some(b)) = (f.prr, base.get(&(r.seed, p, f.follower_index))) {
                    xs.push(f.follower_index as f64);
                    ys.push(v - b);
                }
            }
        }
    }
    (xs, ys)
}

pub fn check_tail_effect(records: &[RunRecord], tol: &Tolerances) -> CriterionResult {
    const NAME: &str = "gain grows towards the platoon tail";
    let tvws: Vec<Strategy> = reference_strategies()
        .into_iter()
        .filter(|s| s.uses_tvws() && !of(records, *s).is_empty())
        .collect();
    let mut ok = !tvws.is_empty();
    let mut parts = Vec::new();
    for s in tvws {
        let (x, y) = tail_gain_points(records, s);
        let (rho, p) = spearman(&x, &y);
        ok &= rho > 0.0 && p < tol.spearman_alpha;
        parts.push(format!("{s} rho {rho:.3} p {p:.2e}"));
    }
    parts.push(format!("need rho > 0, p < {}", tol.spearman_alpha));
    CriterionResult::new(2, NAME, ok, parts.join(", "))
}

fn platoon_count(records: &[RunRecord]) -> usize {
    records
        .iter()
        .map(|r| r.summary.switch_counts.len())
        .max()
        .unwrap_or(0)
}

pub fn check_switch_counts(records: &[RunRecord], tol: &Tolerances) -> CriterionResult {
    const NAME: &str = "switch-count magnitudes and cost ordering";
    let costs = bumblebee_costs(records);
    if costs.len() < 2 {
        return CriterionResult::new(3, NAME, false, "need at least two costs".into());
    }
    let (lo, hi) = tol.switch_range;
    let mut ok = true;
    let mut parts = Vec::new();
    for &c in &costs {
        let runs = of(records, Strategy::Bumblebee { cost_db: c });
        let means: Vec<f64> = (0..platoon_count(records))
            .map(|p| {
                let v: Vec<f64> = runs
                    .iter()
                    .map(|r| r.summary.switch_counts.get(p).copied().unwrap_or(0) as f64)
                    .collect();
                mean(&v).unwrap_or(0.0)
            })
            .collect();
        ok &= means.iter().all(|m| (lo..=hi).contains(m));
        let shown: Vec<String> = means.iter().map(|m| format!("{m:.1}")).collect();
        parts.push(format!("C={c} [{}]", shown.join(", ")));
    }

    let (c_lo, c_hi) = (costs[0], costs[costs.len() - 1]);
    let per_seed = |c: f64| -> HashMap<u64, f64> {
        of(records, Strategy::Bumblebee { cost_db: c })
            .iter()
            .map(|r| {
                let n = r.summary.switch_counts.len().max(1) as f64;
                (
                    r.seed,
                    r.summary.switch_counts.iter().sum::<usize>() as f64 / n,
                )
            })
            .collect()
    };
    let (low, high) = (per_seed(c_lo), per_seed(c_hi));
    let diffs: Vec<f64> = low
        .iter()
        .filter_map(|(seed, a)| high.get(seed).map(|b| a - b))
        .collect();
    let d = mean(&diffs).unwrap_or(f64::NAN);
    if tol.strict_switch_order {
        let bound = d - z_quantile(0.95) * sample_sd(&diffs) / (diffs.len() as f64).sqrt();
        ok &= bound > 0.0;
        parts.push(format!(
            "C={c_lo} minus C={c_hi}: {d:.2} (one-sided 95% lower bound {bound:.2}, need > 0)"
        ));
    } else {
        ok &= d >= 0.0;
        parts.push(format!("C={c_lo} minus C={c_hi}: {d:.2} (need >= 0)"));
    }
    parts.push(format!("range [{lo}, {hi}]"));
    CriterionResult::new(3, NAME, ok, parts.join(", "))
}

fn edge_channels(base: &SimConfig) -> Vec<usize> {
    base.channel_plan
        .tvws_center_freqs_mhz
        .iter()
        .enumerate()
        .filter(|(_, f)| EDGE_FREQS_MHZ.iter().any(|e| (*f - e).abs() < 1e-6))
        .map(|(i, _)| i)
        .collect()
}

pub fn check_edge_avoidance(
    base: &SimConfig,
    records: &[RunRecord],
    tol: &Tolerances,
) -> CriterionResult {
    const NAME: &str = "edge channels avoided";
    let edges = edge_channels(base);
    let worst = records
        .iter()
        .filter(|r| matches!(r.strategy, Strategy::Bumblebee { .. }))
        .flat_map(|r| {
            r.residence
                .iter()
                .map(|row| edges.iter().map(|&c| row[c]).sum::<f64>())
        })
        .fold(0.0, f64::max);
    CriterionResult::new(
        4,
        NAME,
        worst < tol.max_edge_residence,
        format!(
            "worst per-platoon residence on 490/522 MHz {:.2}% (need < {:.0}%)",
            worst * 100.0,
            tol.max_edge_residence * 100.0
        ),
    )
}

/// Default scenario without background traffic and with both platoons parked
/// at their initial positions.
pub fn pinned_apart(base: &SimConfig) -> SimConfig {
    let mut cfg = base.clone();
    cfg.background_density_per_km_lane = 0.0;
    cfg.lead_profile.high_kmh = 0.0;
    cfg.lead_profile.low_kmh = 0.0;
    for p in &mut cfg.platoons {
        p.initial_speed_mps = 0.0;
    }
    cfg
}

pub fn near_fraction(records: &[RunRecord]) -> (usize, usize) {
    let switches: Vec<f64> = records
        .iter()
        .filter(|r| matches!(r.strategy, Strategy::Bumblebee { .. }))
        .flat_map(|r| r.switches.iter().map(|s| s.head_distance_m))
        .collect();
    let near = switches.iter().filter(|&&d| d < PROXIMITY_RADIUS_M).count();
    (near, switches.len())
}

pub fn check_proximity(
    records: &[RunRecord],
    pinned: &[RunRecord],
    tol: &Tolerances,
) -> CriterionResult {
    const NAME: &str = "switching triggered by proximity";
    let (near, total) = near_fraction(records);
    let frac = if total == 0 {
        f64::NAN
    } else {
        near as f64 / total as f64
    };
    let worst_pinned = pinned
        .iter()
        .map(|r| r.switches.len())
        .max()
        .unwrap_or(usize::MAX);
    let ok = frac >= tol.min_near_fraction && worst_pinned <= tol.max_pinned_switches;
    CriterionResult::new(
        5,
        NAME,
        ok,
        format!(
            "{near}/{total} switches within {PROXIMITY_RADIUS_M} m ({:.1}%, need >= {:.0}%), \
             pinned apart: at most {worst_pinned} per run over {} runs (need <= {})",
            frac * 100.0,
            tol.min_near_fraction * 100.0,
            pinned.len(),
            tol.max_pinned_switches
        ),
    )
}

pub fn pooled_sir(records: &[RunRecord], strategy: Strategy) -> Ecdf {
    Ecdf::new(
        of(records, strategy)
            .iter()
            .flat_map(|r| r.sir_db.iter().copied())
            .collect(),
    )
}

pub fn check_sir_impact(
    base: &SimConfig,
    records: &[RunRecord],
    tol: &Tolerances,
) -> CriterionResult {
    const NAME: &str = "DTT SIR below target and similar across strategies";
    let target = base.dtt_protection.required_sir_db;
    let fixed = pooled_sir(records, Strategy::FixedTvws);
    let mut ok = !fixed.is_empty();
    let mut parts = vec![format!("fixed-tvws F({target}) {:.3}", fixed.eval(target))];
    ok &= fixed.eval(target) > 0.0;
    for c in bumblebee_costs(records) {
        let s = Strategy::Bumblebee { cost_db: c };
        let cdf = pooled_sir(records, s);
        let below = cdf.eval(target);
        let sup = fixed.sup_distance(&cdf);
        ok &= below > 0.0 && sup < tol.max_sir_sup;
        parts.push(format!("{s} F {below:.3} sup {sup:.3}"));
    }
    parts.push(format!("need F > 0, sup < {}", tol.max_sir_sup));
    CriterionResult::new(6, NAME, ok, parts.join(", "))
}

/// Tick-level phase census of 1000 ms windows plus the recorded window
/// violations of every run.
pub fn check_duty_timing(base: &SimConfig, records: &[RunRecord]) -> CriterionResult {
    const NAME: &str = "duty-cycle timing";
    let duty = base.vdsa.duty;
    let mut ok = true;
    let mut offsets: Vec<u64> = base.platoons.iter().map(|p| p.duty_offset_ms).collect();
    offsets.extend([0, 37, 163]);
    for offset in offsets {
        let clock = PlatoonClock::new(duty, offset);
        for start_ms in [0u64, 1, 37, 150, 199, 999, 12_345, 139_000] {
            let sensing = (start_ms..start_ms + 1000)
                .filter(|&t| clock.phase(t * 1000) == Phase::Sensing)
                .count();
            ok &= sensing == 750;
        }
    }
    let violations: usize = records.iter().map(|r| r.window_violations).sum();
    ok &= violations == 0;
    CriterionResult::new(
        9,
        NAME,
        ok,
        format!("750/250 ms split in every probed window: {ok}; TVWS transmissions outside windows: {violations}"),
    )
}

/// Reruns the first seed of every strategy and compares the CSV bytes.
pub fn check_determinism(
    base: &SimConfig,
    records: &[RunRecord],
    kind: PrrKind,
) -> Result<CriterionResult> {
    const NAME: &str = "byte-identical reruns";
    let mut compared = 0;
    let mut mismatched = Vec::new();
    let mut seen: Vec<Strategy> = Vec::new();
    for r in records {
        if seen.contains(&r.strategy) {
            continue;
        }
        seen.push(r.strategy);
        let again = run_one(base, r.strategy, r.seed, kind)?;
        let same = again.switch_trace_csv == r.switch_trace_csv
            && again.sir_samples_csv == r.sir_samples_csv
            && batch_tables(&[again.summary.clone()])? == batch_tables(&[r.summary.clone()])?;
        compared += 1;
        if !same {
            mismatched.push(format!("{} seed {}", r.strategy, r.seed));
        }
    }
    Ok(CriterionResult::new(
        11,
        NAME,
        compared > 0 && mismatched.is_empty(),
        format!("{compared} reruns compared, mismatches: {mismatched:?}"),
    ))
}

pub fn check_mobility(base: &SimConfig, records: &[RunRecord]) -> CriterionResult {
    const NAME: &str = "platoon safety and profile periodicity";
    let min_gap = records
        .iter()
        .map(|r| r.mobility.min_intra_platoon_gap_m)
        .fold(f64::INFINITY, f64::min);
    let period_us = (base.lead_profile.period_s * 1e6).round() as u64;
    let tick_us = base.tick_ms * 1000;
    let end_us = (base.sim_duration_s * 1e6) as u64;
    let periodic = (0..end_us).step_by(tick_us as usize).all(|t| {
        lead_velocity_at_us(&base.lead_profile, t).to_bits()
            == lead_velocity_at_us(&base.lead_profile, t + period_us).to_bits()
    });
    CriterionResult::new(
        12,
        NAME,
        !records.is_empty() && min_gap > 0.0 && periodic,
        format!("minimum intra-platoon gap {min_gap:.2} m over {} runs, profile periodic on every tick: {periodic}", records.len()),
    )
}

// ---------------------------------------------------------------------------
// Model self-checks
// ---------------------------------------------------------------------------

/// The decision loop written out step by step: visit the sensed channels, best
/// first, and move `Ch` whenever the switching condition holds.
fn decision_loop(averages: &[Option<f64>], current: usize, c_db: f64, t_dbm: f64) -> usize {
    let mut sensed: Vec<(usize, f64)> = averages
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.map(|e| (i, e)))
        .collect();
    sensed.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut ch = current;
    for (i, e_i) in sensed {
        let e_ch = averages[ch].unwrap_or(f64::INFINITY);
        if e_ch > e_i + c_db && e_i <= t_dbm {
            ch = i;
        }
    }
    ch
}

pub fn check_selection_oracle(cases: usize, seed: u64) -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0;
    for _ in 0..cases {
        let n = rng.gen_range(1..=8);
        let averages: Vec<Option<f64>> = (0..n)
            .map(|_| {
                rng.gen_bool(0.85).then(|| {
                    f64::from(rng.gen_range(-100i32..=-40)) + rng.gen_range(0..4) as f64 * 0.25
                })
            })
            .collect();
        let current = rng.gen_range(0..n);
        let c = [0.0, 3.0, 6.0][rng.gen_range(0..3)];
        let t = f64::from(rng.gen_range(-80i32..=-50));
        if select_channel(&averages, current, c, t) == decision_loop(&averages, current, c, t) {
            agree += 1;
        }
    }
    CriterionResult::new(
        7,
        "channel selection matches the decision loop",
        agree == cases,
        format!("{agree}/{cases} random ledgers agree"),
    )
}

pub fn check_decision_grid() -> CriterionResult {
    let energies: Vec<f64> = (-100..=-40).map(f64::from).collect();
    let costs = [0.0, 3.0, 6.0];
    let thresholds = [-75.0, -65.0, -55.0];
    let switches = |e_ch: f64, e_i: f64, c: f64, t: f64| {
        select_channel(&[Some(e_ch), Some(e_i)], 0, c, t) == 1
    };
    let mut failures = 0usize;
    let mut checked = 0usize;
    for &t in &thresholds {
        for &e_ch in &energies {
            for &e_i in &energies {
                for (k, &c) in costs.iter().enumerate() {
                    checked += 1;
                    let s = switches(e_ch, e_i, c, t);
                    // larger cost never adds a switch
                    if k > 0 && s && !switches(e_ch, e_i, costs[k - 1], t) {
                        failures += 1;
                    }
                    if e_i > t && s {
                        failures += 1;
                    }
                    if e_i == t && e_ch > e_i + c && !s {
                        failures += 1;
                    }
                    if c == 0.0 && e_i <= t && s != (e_i < e_ch) {
                        failures += 1;
                    }
                }
            }
            // the current channel as argmin stays
            for &c in &costs {
                if select_channel(&[Some(e_ch), Some(e_ch + 1.0)], 0, c, t) != 0 {
                    failures += 1;
                }
            }
        }
    }
    CriterionResult::new(
        8,
        "switching rule properties on the energy grid",
        failures == 0,
        format!("{checked} grid points, {failures} violations"),
    )
}

pub fn check_propagation(base: &SimConfig, seed: u64) -> Result<CriterionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = base.field();
    let mut ok = true;
    let mut parts = Vec::new();

    let n = 20_000;
    let x = 1234.0;
    let profile = &field.channels[0];
    let seg = &profile.segments[profile.segment_index(x).expect("inside the road")];
    let mut sum = 0.0;
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        sum += dtt_power_at(field, x, profile.freq_mhz, z)?;
    }
    let mc = sum / n as f64;
    let closed = seg.mean_dbm(x);
    let bound = 3.0 * seg.shadowing_sigma_db / (n as f64).sqrt();
    ok &= (mc - closed).abs() <= bound;
    parts.push(format!(
        "MC mean off by {:.4} dB (bound {bound:.4})",
        (mc - closed).abs()
    ));

    let spectrum = base.spectrum();
    let radio = &base.radio;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let rx = Point::new(rng.gen_range(0.0..5000.0), rng.gen_range(-7.0..7.0));
        let band = |r: &mut ChaCha8Rng| {
            if r.gen_bool(0.3) {
                Band::Cch
            } else {
                Band::Tvws(r.gen_range(0..spectrum.tvws_freqs_mhz.len()))
            }
        };
        let emission = |r: &mut ChaCha8Rng| Emission {
            position: Point::new(r.gen_range(0.0..5000.0), r.gen_range(-7.0..7.0)),
            tx_power_dbm: 20.0,
            band: band(r),
        };
        let wanted = emission(&mut rng);
        let others: Vec<Emission> = (0..rng.gen_range(0..6))
            .map(|_| emission(&mut rng))
            .collect();
        let dtt = rng.gen_bool(0.5).then(|| rng.gen_range(-110.0..-50.0));
        let got = link_sinr(&spectrum, radio, rx, &wanted, &others, dtt);
        let mut i_mw = dbm_to_mw(radio.noise_floor_dbm);
        if let (Band::Tvws(_), Some(d)) = (wanted.band, dtt) {
            i_mw += dbm_to_mw(d);
        }
        for o in &others {
            let att = match (o.band, wanted.band) {
                (Band::Cch, Band::Cch) => Some(0.0),
                (Band::Tvws(a), Band::Tvws(b)) => Some(base.acir.attenuation(b as i64 - a as i64)),
                _ => None,
            };
            if let Some(att) = att {
                i_mw += dbm_to_mw(
                    v2v_rx_power(o.tx_power_dbm, o.position, rx, o.band, &radio.v2v_pathloss) - att,
                );
            }
        }
        let s_mw = dbm_to_mw(v2v_rx_power(
            wanted.tx_power_dbm,
            wanted.position,
            rx,
            wanted.band,
            &radio.v2v_pathloss,
        ));
        let want = 10.0 * (s_mw / i_mw).log10();
        worst = worst.max(((got - want) / want).abs());
    }
    ok &= worst <= 1e-9;
    parts.push(format!("SINR worst relative error {worst:.1e}"));

    // two equal sources at 0 dB ACIR sum to +3.01 dB; one source co-channel is unchanged
    let two = crate::propagation::DttField {
        channels: vec![flat_profile(498.0, -60.0), flat_profile(514.0, -60.0)],
    };
    let flat = crate::propagation::AcirTable {
        attenuation_db: vec![0.0, 0.0, 50.0],
    };
    let p = effective_dtt_power(&two, 100.0, 506.0, 8.0, &flat, &[0.0, 0.0])?;
    let expect = mw_to_dbm(2.0 * dbm_to_mw(-60.0));
    let single = effective_dtt_power(&two, 100.0, 498.0, 8.0, &base.acir, &[0.0, 0.0])?;
    let expect_single = mw_to_dbm(dbm_to_mw(-60.0) + dbm_to_mw(-60.0 - base.acir.attenuation(2)));
    let hand_ok = (p - expect).abs() < 1e-12 && (single - expect_single).abs() < 1e-12;
    ok &= hand_ok;
    parts.push(format!("two-source ACIR cases exact: {hand_ok}"));
    Ok(CriterionResult::new(
        10,
        "propagation oracles",
        ok,
        parts.join(", "),
    ))
}

fn flat_profile(freq_mhz: f64, dbm: f64) -> crate::propagation::DttChannelProfile {
    crate::propagation::DttChannelProfile {
        freq_mhz,
        segments: vec![crate::propagation::Segment::through(
            0.0, 5000.0, dbm, dbm, 0.0,
        )],
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Records of the pinned-apart runs used by the proximity check.
pub fn run_pinned(
    base: &SimConfig,
    seeds: &[u64],
    tol: &Tolerances,
    jobs: usize,
    kind: PrrKind,
) -> Result<Vec<RunRecord>> {
    let costs: Vec<Strategy> = reference_strategies()
        .into_iter()
        .filter(|s| matches!(s, Strategy::Bumblebee { .. }))
        .collect();
    let seeds: Vec<u64> = seeds.iter().take(tol.pinned_seeds).copied().collect();
    run_matrix(&pinned_apart(base), &costs, &seeds, jobs, kind)
}

/// Every check over an already computed strategy × seed matrix.
pub fn evaluate(
    base: &SimConfig,
    records: &[RunRecord],
    seeds: &[u64],
    mode: Mode,
    jobs: usize,
    kind: PrrKind,
) -> Result<Report> {
    let tol = mode.tolerances();
    let pinned = run_pinned(base, seeds, &tol, jobs, kind)?;
    let results = vec![
        check_vdsa_benefit(records, &tol),
        check_tail_effect(records, &tol),
        check_switch_counts(records, &tol),
        check_edge_avoidance(base, records, &tol),
        check_proximity(records, &pinned, &tol),
        check_sir_impact(base, records, &tol),
        check_selection_oracle(10_000, 7),
        check_decision_grid(),
        check_duty_timing(base, records),
        check_propagation(base, 10)?,
        check_determinism(base, records, kind)?,
        check_mobility(base, records),
    ];
    Ok(Report {
        mode,
        seeds: seeds.len(),
        results,
    })
}
