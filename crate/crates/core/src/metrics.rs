//! Event log of a run and the analyses built on it: leader PRR by follower
//! position, switch counts, DTT SIR distributions and the CSV outputs.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::mac::{Band, DropReason, MessageKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxEvent {
    pub tx_id: u64,
    pub source: usize,
    pub platoon: Option<usize>,
    pub kind: MessageKind,
    pub band: Band,
    pub start_us: u64,
    pub end_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxEvent {
    pub tx_id: u64,
    pub receiver: usize,
    pub time_us: u64,
    pub success: bool,
    pub sinr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchEvent {
    pub time_us: u64,
    pub platoon: usize,
    pub old_channel: usize,
    pub new_channel: usize,
    /// Distance to the nearest other platoon head at the boundary.
    pub head_distance_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirSample {
    pub time_us: u64,
    pub receiver_id: u32,
    pub channel_mhz: f64,
    pub sir_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropEvent {
    pub time_us: u64,
    pub source: usize,
    pub platoon: Option<usize>,
    pub kind: MessageKind,
    pub reason: DropReason,
}

/// Platoon membership needed to attribute receptions.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonRoster {
    pub platoon: usize,
    pub leader: usize,
    /// `followers[i - 1]` is follower `i`.
    pub followers: Vec<usize>,
    /// Time each member left the road, keyed by vehicle id.
    pub retired_us: HashMap<usize, u64>,
}

impl PlatoonRoster {
    pub fn active_at(&self, vehicle: usize, t_us: u64) -> bool {
        self.retired_us.get(&vehicle).map_or(true, |&r| t_us < r)
    }
}

/// Append-only record of one run. Only platoon traffic is logged per packet;
/// background traffic shows up in the aggregate counters.
#[derive(Debug, Clone, Default)]
pub struct MetricsLog {
    pub rosters: Vec<PlatoonRoster>,
    pub tvws_freqs_mhz: Vec<f64>,
    pub tx: Vec<TxEvent>,
    pub rx: Vec<RxEvent>,
    pub switches: Vec<SwitchEvent>,
    pub sir: Vec<SirSample>,
    pub drops: Vec<DropEvent>,
    /// Milliseconds each platoon spent on each TVWS channel.
    pub residence_ms: Vec<Vec<u64>>,
    pub generated: u64,
    pub background_tx: u64,
    pub duration_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrrKind {
    Cam,
    Cacc,
    #[default]
    Both,
}

impl PrrKind {
    pub fn includes(&self, kind: MessageKind) -> bool {
        matches!(
            (self, kind),
            (PrrKind::Both, _)
                | (PrrKind::Cam, MessageKind::Cam)
                | (PrrKind::Cacc, MessageKind::Cacc)
        )
    }
}

impl FromStr for PrrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(PrrKind::Cam),
            "cacc" => Ok(PrrKind::Cacc),
            "both" => Ok(PrrKind::Both),
            other => Err(Error::Parse {
                what: "prr kind".into(),
                message: format!("`{other}` is not one of cam, cacc, both"),
            }),
        }
    }
}

impl fmt::Display for PrrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrrKind::Cam => "cam",
            PrrKind::Cacc => "cacc",
            PrrKind::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerPrr {
    pub follower_index: usize,
    pub sent: u64,
    pub received: u64,
    /// `None` when the leader sent nothing while this follower was active.
    pub prr: Option<f64>,
}

/// Reception ratio of leader-originated messages at each follower.
pub fn leader_prr(log: &MetricsLog, platoon: usize, kind: PrrKind) -> Result<Vec<FollowerPrr>> {
    if log.tx.is_empty() {
        return Err(Error::EmptyLog);
    }
    let roster = log
        .rosters
        .iter()
        .find(|r| r.platoon == platoon)
        .ok_or_else(|| Error::validation("platoon", format!("no platoon {platoon} in the log")))?;
    let leader_tx: HashMap<u64, u64> = log
        .tx
        .iter()
        .filter(|t| t.source == roster.leader && kind.includes(t.kind))
        .map(|t| (t.tx_id, t.start_us))
        .collect();

    let mut received: HashMap<usize, u64> = HashMap::new();
    for r in &log.rx {
        if r.success && leader_tx.contains_key(&r.tx_id) {
            *received.entry(r.receiver).or_default() += 1;
        }
    }
    Ok(roster
        .followers
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let sent = leader_tx
                .values()
                .filter(|&&start| roster.active_at(f, start))
                .count() as u64;
            let got = received.get(&f).copied().unwrap_or(0);
            FollowerPrr {
                follower_index: i + 1,
                sent,
                received: got,
                prr: (sent > 0).then(|| got as f64 / sent as f64),
            }
        })
        .collect())
}

/// Mean PRR over the last `n` followers with a defined ratio.
pub fn tail_prr(prr: &[FollowerPrr], n: usize) -> Option<f64> {
    let tail: Vec<f64> = prr.iter().rev().take(n).filter_map(|p| p.prr).collect();
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn switch_count(log: &MetricsLog, platoon: usize) -> usize {
    log.switches.iter().filter(|s| s.platoon == platoon).count()
}

/// Empirical CDF; `eval(x)` is the fraction of samples `<= x`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut samples: Vec<f64>) -> Self {
        samples.retain(|x| !x.is_nan());
        samples.sort_by(f64::total_cmp);
        Ecdf { sorted: samples }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// Distinct sample values with the CDF value at each.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let y = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = y,
                _ => out.push((x, y)),
            }
        }
        out
    }

    /// Kolmogorov distance. Both CDFs are step functions, so the supremum
    /// is attained at one of the sample points.
    pub fn sup_distance(&self, other: &Ecdf) -> f64 {
        self.sorted
            .iter()
            .chain(&other.sorted)
            .map(|&x| (self.eval(x) - other.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-channel SIR distributions, keyed by whole MHz.
pub fn sir_cdf(log: &MetricsLog) -> BTreeMap<u32, Ecdf> {
    let mut by_channel: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in &log.sir {
        by_channel
            .entry(s.channel_mhz.round() as u32)
            .or_default()
            .push(s.sir_db);
    }
    by_channel
        .into_iter()
        .map(|(k, v)| (k, Ecdf::new(v)))
        .collect()
}

pub fn pooled_sir_cdf(log: &MetricsLog) -> Ecdf {
    Ecdf::new(log.sir.iter().map(|s| s.sir_db).collect())
}

/// Fraction of samples at or below `target_db`.
pub fn fraction_below(cdf: &Ecdf, target_db: f64) -> f64 {
    cdf.eval(target_db)
}

/// Share of the run a platoon spent on `channel`.
pub fn residence_fraction(log: &MetricsLog, platoon: usize, channel: usize) -> f64 {
    let row = &log.residence_ms[platoon];
    let total: u64 = row.iter().sum();
    if total == 0 {
        0.0
    } else {
        row[channel] as f64 / total as f64
    }
}

/// Platoon messages dropped before reaching the air, over those generated.
pub fn drop_rate(log: &MetricsLog) -> f64 {
    let platoon_drops = log.drops.iter().filter(|d| d.platoon.is_some()).count();
    let platoon_tx = log.tx.iter().filter(|t| t.platoon.is_some()).count();
    let total = platoon_drops + platoon_tx;
    if total == 0 {
        0.0
    } else {
        platoon_drops as f64 / total as f64
    }
}

/// Per-run digest used for cross-seed aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub strategy: String,
    pub seed: u64,
    /// Per platoon, per follower.
    pub leader_prr: Vec<Vec<FollowerPrr>>,
    pub switch_counts: Vec<usize>,
    pub sir_cdf: BTreeMap<u32, Ecdf>,
    pub sir_below_target: Option<f64>,
    pub drop_rate: f64,
}

impl RunSummary {
    pub fn from_log(
        log: &MetricsLog,
        strategy: &str,
        seed: u64,
        kind: PrrKind,
        sir_target_db: f64,
    ) -> Result<Self> {
        let leader_prr = log
            .rosters
            .iter()
            .map(|r| leader_prr(log, r.platoon, kind))
            .collect::<Result<Vec<_>>>()?;
        let pooled = pooled_sir_cdf(log);
        Ok(RunSummary {
            strategy: strategy.to_string(),
            seed,
            leader_prr,
            switch_counts: log
                .rosters
                .iter()
                .map(|r| switch_count(log, r.platoon))
                .collect(),
            sir_cdf: sir_cdf(log),
            sir_below_target: (!pooled.is_empty()).then(|| fraction_below(&pooled, sir_target_db)),
            drop_rate: drop_rate(log),
        })
    }

    /// Tail PRR averaged over platoons.
    pub fn tail_prr(&self, n: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .leader_prr
            .iter()
            .filter_map(|p| tail_prr(p, n))
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Sample mean with a normal-approximation 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn mean_ci95(values: &[f64]) -> Option<MeanCi> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let half_width = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        z_quantile(0.975) * (var / n).sqrt()
    };
    Some(MeanCi {
        mean,
        half_width,
        n: values.len(),
    })
}

pub fn z_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct PrrRow<'a> {
    strategy: &'a str,
    seed: u64,
    platoon: usize,
    follower_index: usize,
    sent: u64,
    received: u64,
    prr: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SwitchRow {
    time_s: f64,
    platoon_id: usize,
    old_channel: f64,
    new_channel: f64,
}

#[derive(Debug, Serialize)]
struct SirRow {
    time_s: f64,
    receiver_id: u32,
    channel_mhz: f64,
    sir_db: f64,
}

#[derive(Debug, Serialize)]
struct SwitchCountRow<'a> {
    strategy: &'a str,
    seed: u64,
    platoon_id: usize,
    switches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub strategy: String,
    pub runs: usize,
    pub tail_prr_mean: f64,
    pub tail_prr_ci95: f64,
    pub switches_mean: f64,
    pub switches_ci95: f64,
    pub sir_below_target: Option<f64>,
    pub drop_rate: f64,
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(w)
}

fn finish<W: Write>(mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| Error::io("csv output", e))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        what: "csv output".into(),
        message: e.to_string(),
    }
}

pub fn write_prr_csv<W: Write>(w: W, runs: &[RunSummary]) -> Result<()> {
    let mut w = no_header(w);
    w.write_record([
        "strategy",
        "seed",
        "platoon",
        "follower_index",
        "sent",
        "received",
        "prr",
    ])
    .map_err(csv_err)?;
    for run in runs {
        for (platoon, followers) in run.leader_prr.iter().enumerate() {
            for f in followers {
                w.serialize(PrrRow {
                    strategy: &run.strategy,
                    seed: run.seed,
                    platoon,
                    follower_index: f.follower_index,
                    sent: f.sent,
                    received: f.received,
                    prr: f.prr,
                })
                .map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

fn no_header<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

pub fn write_switch_trace<W: Write>(w: W, log: &MetricsLog) -> Result<()> {
    let mut w = no_header(w);
    w.write_record(["time_s", "platoon_id", "old_channel", "new_channel"])
        .map_err(csv_err)?;
    for s in &log.switches {
        w.serialize(SwitchRow {
            time_s: s.time_us as f64 * 1e-6,
            platoon_id: s.platoon,
            old_channel: log.tvws_freqs_mhz[s.old_channel],
            new_channel: log.tvws_freqs_mhz[s.new_channel],
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_sir_samples<W: Write>(w: W, log: &MetricsLog) -> Result<()> {
    let mut w = no_header(w);
    w.write_record(["time_s", "receiver_id", "channel_mhz", "sir_db"])
        .map_err(csv_err)?;
    for s in &log.sir {
        w.serialize(SirRow {
            time_s: s.time_us as f64 * 1e-6,
            receiver_id: s.receiver_id,
            channel_mhz: s.channel_mhz,
            sir_db: s.sir_db,
        })
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn write_switch_counts<W: Write>(w: W, runs: &[RunSummary]) -> Result<()> {
    let mut w = no_header(w);
    w.write_record(["strategy", "seed", "platoon_id", "switches"])
        .map_err(csv_err)?;
    for run in runs {
        for (platoon_id, &switches) in run.switch_counts.iter().enumerate() {
            w.serialize(SwitchCountRow {
                strategy: &run.strategy,
                seed: run.seed,
                platoon_id,
                switches,
            })
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

/// One row per strategy, in order of first appearance in `runs`.
pub fn summarize(runs: &[RunSummary], tail: usize) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in runs {
        if !order.contains(&r.strategy.as_str()) {
            order.push(&r.strategy);
        }
    }
    order
        .into_iter()
        .map(|strategy| {
            let group: Vec<&RunSummary> = runs.iter().filter(|r| r.strategy == strategy).collect();
            let prr: Vec<f64> = group.iter().filter_map(|r| r.tail_prr(tail)).collect();
            let sw: Vec<f64> = group
                .iter()
                .flat_map(|r| r.switch_counts.iter().map(|&c| c as f64))
                .collect();
            let below: Vec<f64> = group.iter().filter_map(|r| r.sir_below_target).collect();
            let prr_ci = mean_ci95(&prr);
            let sw_ci = mean_ci95(&sw);
            SummaryRow {
                strategy: strategy.to_string(),
                runs: group.len(),
                tail_prr_mean: prr_ci.map_or(f64::NAN, |c| c.mean),
                tail_prr_ci95: prr_ci.map_or(f64::NAN, |c| c.half_width),
                switches_mean: sw_ci.map_or(0.0, |c| c.mean),
                switches_ci95: sw_ci.map_or(0.0, |c| c.half_width),
                sir_below_target: mean_ci95(&below).map(|c| c.mean),
                drop_rate: group.iter().map(|r| r.drop_rate).sum::<f64>() / group.len() as f64,
            }
        })
        .collect()
}

pub fn write_run_summary<W: Write>(w: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(w);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_with(leader_sent: u64, received_by: &[(usize, u64)]) -> MetricsLog {
        let mut log = MetricsLog {
            rosters: vec![PlatoonRoster {
                platoon: 0,
                leader: 0,
                followers: vec![1, 2],
                retired_us: HashMap::new(),
            }],
            tvws_freqs_mhz: vec![490.0, 498.0, 506.0, 514.0, 522.0],
            residence_ms: vec![vec![0; 5]],
            ..MetricsLog::default()
        };
        for i in 0..leader_sent {
            log.tx.push(TxEvent {
                tx_id: i,
                source: 0,
                platoon: Some(0),
                kind: if i % 2 == 0 {
                    MessageKind::Cam
                } else {
                    MessageKind::Cacc
                },
                band: Band::Cch,
                start_us: i * 1000,
                end_us: i * 1000 + 400,
            });
        }
        for &(receiver, n) in received_by {
            for i in 0..n {
                log.rx.push(RxEvent {
                    tx_id: i,
                    receiver,
                    time_us: i * 1000 + 400,
                    success: true,
                    sinr_db: 20.0,
                });
            }
        }
        log
    }

    #[test]
    fn lossless_is_one() {
        let log = log_with(100, &[(1, 100), (2, 50)]);
        let prr = leader_prr(&log, 0, PrrKind::Both).unwrap();
        assert_eq!(prr[0].prr, Some(1.0));
        assert_eq!(prr[1].prr, Some(0.5));
        assert_eq!(prr[1].follower_index, 2);
        assert_eq!(tail_prr(&prr, 1), Some(0.5));
        assert_eq!(tail_prr(&prr, 2), Some(0.75));
    }

    #[test]
    fn kind_filter() {
        let log = log_with(100, &[(1, 100)]);
        let cam = leader_prr(&log, 0, PrrKind::Cam).unwrap();
        assert_eq!(cam[0].sent, 50);
        assert_eq!(cam[0].received, 50);
    }

    #[test]
    fn empty_log_and_no_leader_traffic() {
        assert!(matches!(
            leader_prr(&MetricsLog::default(), 0, PrrKind::Both),
            Err(Error::EmptyLog)
        ));
        let mut log = log_with(3, &[]);
        for t in &mut log.tx {
            t.source = 1;
        }
        let prr = leader_prr(&log, 0, PrrKind::Both).unwrap();
        assert_eq!(prr[0].prr, None);
    }

    #[test]
    fn retired_followers_stop_counting() {
        let mut log = log_with(10, &[(2, 4)]);
        log.rosters[0].retired_us.insert(2, 4000);
        let prr = leader_prr(&log, 0, PrrKind::Both).unwrap();
        assert_eq!(prr[1].sent, 4);
        assert_eq!(prr[1].prr, Some(1.0));
    }

    #[test]
    fn ecdf_basics() {
        let e = Ecdf::new(vec![3.0, 1.0, 2.0, 2.0]);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(1.0), 0.25);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval(10.0), 1.0);
        assert_eq!(e.points(), vec![(1.0, 0.25), (2.0, 0.75), (3.0, 1.0)]);
        let step = Ecdf::new(vec![5.0; 4]);
        assert_eq!(step.eval(4.999), 0.0);
        assert_eq!(step.eval(5.0), 1.0);
        assert!(Ecdf::default().is_empty());
        assert_eq!(Ecdf::default().eval(1.0), 0.0);
    }

    #[test]
    fn sup_distance() {
        let a = Ecdf::new(vec![1.0, 2.0]);
        let b = Ecdf::new(vec![3.0, 4.0]);
        assert_eq!(a.sup_distance(&b), 1.0);
        assert_eq!(a.sup_distance(&a), 0.0);
        let c = Ecdf::new(vec![1.0, 3.0]);
        assert_eq!(a.sup_distance(&c), 0.5);
    }

    #[test]
    fn confidence_interval() {
        let ci = mean_ci95(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ci.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((ci.half_width - 1.959_963_984_540_054 * sd / 2.0).abs() < 1e-9);
        assert!(mean_ci95(&[]).is_none());
        assert_eq!(mean_ci95(&[7.0]).unwrap().half_width, 0.0);
    }

    #[test]
    fn prr_kind_parses() {
        assert_eq!("cacc".parse::<PrrKind>().unwrap(), PrrKind::Cacc);
        assert!("all".parse::<PrrKind>().is_err());
        assert_eq!(PrrKind::Both.to_string(), "both");
    }

    #[test]
    fn csv_headers_are_stable() {
        let log = log_with(2, &[(1, 2)]);
        let run = RunSummary::from_log(&log, "cch-only", 1, PrrKind::Both, 39.5).unwrap();

        let mut buf = Vec::new();
        write_prr_csv(&mut buf, std::slice::from_ref(&run)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "strategy,seed,platoon,follower_index,sent,received,prr\n\
             cch-only,1,0,1,2,2,1.0\n\
             cch-only,1,0,2,2,0,0.0\n"
        );

        let mut buf = Vec::new();
        write_switch_trace(&mut buf, &log).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time_s,platoon_id,old_channel,new_channel\n"
        );

        let mut buf = Vec::new();
        write_sir_samples(&mut buf, &log).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time_s,receiver_id,channel_mhz,sir_db\n"
        );

        let mut buf = Vec::new();
        write_switch_counts(&mut buf, &[run.clone()]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "strategy,seed,platoon_id,switches\ncch-only,1,0,0\n"
        );

        let mut buf = Vec::new();
        write_run_summary(&mut buf, &summarize(&[run], 3)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "strategy,runs,tail_prr_mean,tail_prr_ci95,switches_mean,switches_ci95,sir_below_target,drop_rate\n"
        ));
    }
}
