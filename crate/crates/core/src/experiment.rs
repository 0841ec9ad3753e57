//! Strategy × seed batches: parallel runs, per-run digests and the CSV
//! outputs of a batch.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mac::Band;
use crate::metrics::{
    residence_fraction, summarize, write_prr_csv, write_run_summary, write_sir_samples,
    write_switch_counts, write_switch_trace, MetricsLog, PrrKind, RunSummary, SummaryRow,
    SwitchEvent,
};
use crate::scenario::{SimConfig, Strategy};
use crate::sim::{run_with, MobilityStats, RunOptions, TrajectoryRow};
use crate::vdsa::{Phase, PlatoonClock};

/// Followers averaged for the tail PRR in summaries.
pub const TAIL_FOLLOWERS: usize = 3;

/// What is kept from one simulation once its event log is dropped.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub summary: RunSummary,
    pub switches: Vec<SwitchEvent>,
    /// `residence[platoon][channel]`: share of the run spent on the channel.
    pub residence: Vec<Vec<f64>>,
    pub sir_db: Vec<f64>,
    pub mobility: MobilityStats,
    /// Platoon TVWS transmissions not contained in one transmission window.
    pub window_violations: usize,
    pub switch_trace_csv: Vec<u8>,
    pub sir_samples_csv: Vec<u8>,
    /// Empty unless a trajectory stride was requested.
    pub trajectory_csv: Vec<u8>,
}

impl RunRecord {
    /// Directory of this run below a batch directory.
    pub fn rel_dir(&self) -> PathBuf {
        run_dir(self.strategy, self.seed)
    }
}

pub fn run_dir(strategy: Strategy, seed: u64) -> PathBuf {
    PathBuf::from(strategy.to_string().replace(':', "_")).join(format!("seed_{seed}"))
}

pub fn config_for(base: &SimConfig, strategy: Strategy, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        strategy,
        ..base.clone()
    }
}

/// TVWS platoon transmissions that start outside a transmission window or
/// run past its end.
pub fn window_violations(cfg: &SimConfig, log: &MetricsLog) -> usize {
    let clocks: Vec<PlatoonClock> = cfg
        .platoons
        .iter()
        .map(|p| PlatoonClock::new(cfg.vdsa.duty, p.duty_offset_ms))
        .collect();
    log.tx
        .iter()
        .filter(|t| matches!(t.band, Band::Tvws(_)))
        .filter_map(|t| t.platoon.map(|p| (t, clocks[p])))
        .filter(|(t, clock)| {
            let (_, end) = clock.window_us(t.start_us);
            clock.phase(t.start_us) != Phase::Transmission || t.end_us as i64 > end
        })
        .count()
}

pub fn digest(
    cfg: &SimConfig,
    log: &MetricsLog,
    mobility: MobilityStats,
    kind: PrrKind,
) -> Result<RunRecord> {
    let summary = RunSummary::from_log(
        log,
        &cfg.strategy.to_string(),
        cfg.seed,
        kind,
        cfg.dtt_protection.required_sir_db,
    )?;
    let residence = (0..log.residence_ms.len())
        .map(|p| {
            (0..log.tvws_freqs_mhz.len())
                .map(|c| residence_fraction(log, p, c))
                .collect()
        })
        .collect();
    let mut switch_trace_csv = Vec::new();
    write_switch_trace(&mut switch_trace_csv, log)?;
    let mut sir_samples_csv = Vec::new();
    write_sir_samples(&mut sir_samples_csv, log)?;
    Ok(RunRecord {
        strategy: cfg.strategy,
        seed: cfg.seed,
        summary,
        switches: log.switches.clone(),
        residence,
        sir_db: log.sir.iter().map(|s| s.sir_db).collect(),
        mobility,
        window_violations: window_violations(cfg, log),
        switch_trace_csv,
        sir_samples_csv,
        trajectory_csv: Vec::new(),
    })
}

/// `tick,id,position,speed` rows.
pub fn write_trajectory<W: Write>(w: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse {
        what: "trajectory output".into(),
        message: e.to_string(),
    };
    w.write_record(["tick", "id", "position", "speed"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.tick.to_string(),
            r.id.to_string(),
            r.position_m.to_string(),
            r.speed_mps.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io("trajectory output", e))
}

pub fn run_one(
    base: &SimConfig,
    strategy: Strategy,
    seed: u64,
    kind: PrrKind,
) -> Result<RunRecord> {
    run_one_with(base, strategy, seed, kind, RunOptions::default())
}

pub fn run_one_with(
    base: &SimConfig,
    strategy: Strategy,
    seed: u64,
    kind: PrrKind,
    opts: RunOptions,
) -> Result<RunRecord> {
    let cfg = config_for(base, strategy, seed);
    let out = run_with(&cfg, opts)?;
    let mut record = digest(&cfg, &out.log, out.mobility, kind)?;
    if opts.trajectory_stride_ticks.is_some() {
        write_trajectory(&mut record.trajectory_csv, &out.trajectory)?;
    }
    Ok(record)
}

/// Runs every (strategy, seed) pair on at most `jobs` threads. Records come
/// back strategy-major in the order given, independent of `jobs`.
pub fn run_matrix(
    base: &SimConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    jobs: usize,
    kind: PrrKind,
) -> Result<Vec<RunRecord>> {
    run_matrix_with(base, strategies, seeds, jobs, kind, RunOptions::default())
}

pub fn run_matrix_with(
    base: &SimConfig,
    strategies: &[Strategy],
    seeds: &[u64],
    jobs: usize,
    kind: PrrKind,
    opts: RunOptions,
) -> Result<Vec<RunRecord>> {
    base.validate()?;
    let pairs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::validation("jobs", e.to_string()))?;
    pool.install(|| {
        pairs
            .par_iter()
            .map(|&(s, seed)| run_one_with(base, s, seed, kind, opts))
            .collect()
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes per-run traces under `<dir>/<strategy>/seed_<n>/` and the batch
/// tables at the top of `dir`. Returns every path written, relative to `dir`.
pub fn write_batch(dir: &Path, records: &[RunRecord]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for r in records {
        let rel = r.rel_dir();
        create_dir(&dir.join(&rel))?;
        for (name, bytes) in [
            ("switch_trace.csv", &r.switch_trace_csv),
            ("sir_samples.csv", &r.sir_samples_csv),
        ] {
            write_file(&dir.join(&rel).join(name), bytes)?;
            written.push(rel.join(name));
        }
        if !r.trajectory_csv.is_empty() {
            write_file(&dir.join(&rel).join("trajectory.csv"), &r.trajectory_csv)?;
            written.push(rel.join("trajectory.csv"));
        }
    }
    let summaries: Vec<RunSummary> = records.iter().map(|r| r.summary.clone()).collect();
    let tables = batch_tables(&summaries)?;
    for (name, bytes) in tables {
        write_file(&dir.join(name), &bytes)?;
        written.push(PathBuf::from(name));
    }
    Ok(written)
}

/// `prr_by_position.csv`, `switch_counts.csv` and `run_summary.csv` contents.
pub fn batch_tables(summaries: &[RunSummary]) -> Result<Vec<(&'static str, Vec<u8>)>> {
    let mut prr = Vec::new();
    write_prr_csv(&mut prr, summaries)?;
    let mut counts = Vec::new();
    write_switch_counts(&mut counts, summaries)?;
    let mut summary = Vec::new();
    write_run_summary(&mut summary, &summary_rows(summaries))?;
    Ok(vec![
        ("prr_by_position.csv", prr),
        ("switch_counts.csv", counts),
        ("run_summary.csv", summary),
    ])
}

pub fn summary_rows(summaries: &[RunSummary]) -> Vec<SummaryRow> {
    summarize(summaries, TAIL_FOLLOWERS)
}
