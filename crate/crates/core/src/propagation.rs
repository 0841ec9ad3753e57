//! Radio power arithmetic: V2V path loss, the DTT received-power field, ACIR
//! coupling between offset channels, link SINR and SIR at protected DTT
//! receivers.
//!
//! All sums are carried out in milliwatts. Functions take and return dBm/dB.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{db_to_linear, dbm_to_mw, mw_to_dbm};

/// Road-plane coordinates: `x` along the motorway, `y` lateral offset from the
/// centre line. Metres.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Which radio a transmission uses. TVWS channels are indices into the
/// channel plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    Cch,
    Tvws(usize),
}

impl Band {
    pub fn is_tvws(&self) -> bool {
        matches!(self, Band::Tvws(_))
    }
}

// ---------------------------------------------------------------------------
// DTT field
// ---------------------------------------------------------------------------

/// One least-squares line of a DTT power profile, valid on `[start_m, end_m)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_m: f64,
    pub end_m: f64,
    pub slope_db_per_m: f64,
    pub intercept_dbm: f64,
    pub shadowing_sigma_db: f64,
}

impl Segment {
    /// Segment through `(start, start_dbm)` and `(end, end_dbm)`.
    pub fn through(start_m: f64, end_m: f64, start_dbm: f64, end_dbm: f64, sigma_db: f64) -> Self {
        let slope = (end_dbm - start_dbm) / (end_m - start_m);
        Segment {
            start_m,
            end_m,
            slope_db_per_m: slope,
            intercept_dbm: start_dbm - slope * start_m,
            shadowing_sigma_db: sigma_db,
        }
    }

    pub fn mean_dbm(&self, x: f64) -> f64 {
        self.slope_db_per_m * x + self.intercept_dbm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DttChannelProfile {
    pub freq_mhz: f64,
    pub segments: Vec<Segment>,
}

impl DttChannelProfile {
    /// Index of the segment containing `x`. The last segment is closed on the
    /// right so the road end is covered.
    pub fn segment_index(&self, x: f64) -> Option<usize> {
        let last = self.segments.len().checked_sub(1)?;
        self.segments
            .iter()
            .position(|s| x >= s.start_m && x < s.end_m)
            .or_else(|| {
                let s = &self.segments[last];
                (x == s.end_m).then_some(last)
            })
    }
}

/// Piecewise-linear DTT received power along the route, one profile per
/// occupied channel. Channels without a profile carry no DTT signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DttField {
    pub channels: Vec<DttChannelProfile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRow {
    freq_mhz: f64,
    start_m: f64,
    end_m: f64,
    slope_db_per_m: f64,
    intercept_dbm: f64,
    sigma_db: f64,
}

impl DttField {
    /// Synthetic stand-in for measured profiles on 490 and 522 MHz: six
    /// segments each over a 5 km route, roughly -75..-52 dBm, shadowing
    /// sigma 1.5..4.5 dB. Drop in a measured fit with [`DttField::from_csv`].
    pub fn synthetic_default() -> Self {
        const BOUNDS: [f64; 7] = [0.0, 800.0, 1600.0, 2400.0, 3300.0, 4200.0, 5000.0];
        let profile = |freq_mhz: f64, levels: [f64; 7], sigmas: [f64; 6]| DttChannelProfile {
            freq_mhz,
            segments: (0..6)
                .map(|i| {
                    Segment::through(
                        BOUNDS[i],
                        BOUNDS[i + 1],
                        levels[i],
                        levels[i + 1],
                        sigmas[i],
                    )
                })
                .collect(),
        };
        DttField {
            channels: vec![
                profile(
                    490.0,
                    [-58.0, -52.0, -60.0, -68.0, -63.0, -74.0, -66.0],
                    [2.1, 3.4, 1.5, 4.5, 2.8, 3.0],
                ),
                profile(
                    522.0,
                    [-62.0, -57.0, -55.0, -64.0, -70.0, -69.0, -60.0],
                    [3.2, 1.8, 2.6, 4.0, 1.5, 3.7],
                ),
            ],
        }
    }

    pub fn profile(&self, freq_mhz: f64) -> Option<&DttChannelProfile> {
        self.channels
            .iter()
            .find(|c| (c.freq_mhz - freq_mhz).abs() < 1e-6)
    }

    /// Checks that every profile tiles `[0, road_length_m]` exactly.
    pub fn validate(&self, road_length_m: f64) -> Result<()> {
        for ch in &self.channels {
            let field = format!("dtt_field[{} MHz]", ch.freq_mhz);
            let segs = &ch.segments;
            if segs.is_empty() {
                return Err(Error::validation(field, "no segments"));
            }
            if segs[0].start_m != 0.0 {
                return Err(Error::validation(field, "first segment must start at 0 m"));
            }
            for w in segs.windows(2) {
                if (w[0].end_m - w[1].start_m).abs() > 1e-9 {
                    return Err(Error::validation(
                        field,
                        format!(
                            "gap or overlap between {} m and {} m",
                            w[0].end_m, w[1].start_m
                        ),
                    ));
                }
            }
            if let Some(s) = segs.iter().find(|s| s.end_m <= s.start_m) {
                return Err(Error::validation(
                    field,
                    format!("empty segment at {} m", s.start_m),
                ));
            }
            if let Some(s) = segs.iter().find(|s| !(s.shadowing_sigma_db >= 0.0)) {
                return Err(Error::validation(
                    field,
                    format!("negative sigma at {} m", s.start_m),
                ));
            }
            let end = segs[segs.len() - 1].end_m;
            if (end - road_length_m).abs() > 1e-9 {
                return Err(Error::validation(
                    field,
                    format!("segments end at {end} m, road is {road_length_m} m"),
                ));
            }
        }
        Ok(())
    }

    /// Reads the segment table format
    /// `freq_mhz,start_m,end_m,slope_db_per_m,intercept_dbm,sigma_db`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut field = DttField {
            channels: Vec::new(),
        };
        for row in rdr.deserialize::<SegmentRow>() {
            let row = row.map_err(|e| Error::Parse {
                what: "DTT field".into(),
                message: e.to_string(),
            })?;
            let seg = Segment {
                start_m: row.start_m,
                end_m: row.end_m,
                slope_db_per_m: row.slope_db_per_m,
                intercept_dbm: row.intercept_dbm,
                shadowing_sigma_db: row.sigma_db,
            };
            match field
                .channels
                .iter_mut()
                .find(|c| c.freq_mhz == row.freq_mhz)
            {
                Some(c) => c.segments.push(seg),
                None => field.channels.push(DttChannelProfile {
                    freq_mhz: row.freq_mhz,
                    segments: vec![seg],
                }),
            }
        }
        for c in &mut field.channels {
            c.segments.sort_by(|a, b| a.start_m.total_cmp(&b.start_m));
        }
        Ok(field)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let to_err = |e: csv::Error| Error::Parse {
            what: "DTT field".into(),
            message: e.to_string(),
        };
        for ch in &self.channels {
            for s in &ch.segments {
                w.serialize(SegmentRow {
                    freq_mhz: ch.freq_mhz,
                    start_m: s.start_m,
                    end_m: s.end_m,
                    slope_db_per_m: s.slope_db_per_m,
                    intercept_dbm: s.intercept_dbm,
                    sigma_db: s.shadowing_sigma_db,
                })
                .map_err(to_err)?;
            }
        }
        w.flush().map_err(|e| Error::io("<dtt field>", e))
    }
}

/// DTT power on `freq_mhz` at `position_m`: the containing segment's line plus
/// `shadowing_draw` standard deviations of that segment's shadowing.
pub fn dtt_power_at(
    field: &DttField,
    position_m: f64,
    freq_mhz: f64,
    shadowing_draw: f64,
) -> Result<f64> {
    let Some(profile) = field.profile(freq_mhz) else {
        return Ok(f64::NEG_INFINITY);
    };
    let idx = profile.segment_index(position_m).ok_or(Error::NoSegment {
        freq_mhz,
        position_m,
    })?;
    let seg = &profile.segments[idx];
    Ok(seg.mean_dbm(position_m) + shadowing_draw * seg.shadowing_sigma_db)
}

// ---------------------------------------------------------------------------
// ACIR
// ---------------------------------------------------------------------------

/// Attenuation per channel offset, indexed by `|offset|`; offsets past the end
/// use the last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcirTable {
    pub attenuation_db: Vec<f64>,
}

impl Default for AcirTable {
    fn default() -> Self {
        AcirTable {
            attenuation_db: vec![0.0, 30.0, 43.0, 50.0],
        }
    }
}

impl AcirTable {
    pub fn attenuation(&self, offset: i64) -> f64 {
        let i = offset.unsigned_abs() as usize;
        let table = &self.attenuation_db;
        table[i.min(table.len() - 1)]
    }

    /// Linear coupling factor for `offset`.
    pub fn coupling(&self, offset: i64) -> f64 {
        db_to_linear(-self.attenuation(offset))
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.attenuation_db;
        if t.first() != Some(&0.0) {
            return Err(Error::validation(
                "acir.attenuation_db",
                "offset 0 must be 0 dB",
            ));
        }
        if t.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::validation(
                "acir.attenuation_db",
                "must be non-decreasing in |offset|",
            ));
        }
        Ok(())
    }

    /// Reads `offset,attenuation_db` rows. Offsets must be 0, 1, 2, ... in order.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            offset: i64,
            attenuation_db: f64,
        }
        let mut attenuation_db = Vec::new();
        for (i, row) in csv::Reader::from_reader(reader)
            .deserialize::<Row>()
            .enumerate()
        {
            let row = row.map_err(|e| Error::Parse {
                what: "ACIR table".into(),
                message: e.to_string(),
            })?;
            if row.offset != i as i64 {
                return Err(Error::Parse {
                    what: "ACIR table".into(),
                    message: format!("expected offset {i}, found {}", row.offset),
                });
            }
            attenuation_db.push(row.attenuation_db);
        }
        let table = AcirTable { attenuation_db };
        table.validate()?;
        Ok(table)
    }
}

// ---------------------------------------------------------------------------
// Radio parameters
// ---------------------------------------------------------------------------

/// Log-distance V2V path loss: `reference_loss + 10·exponent·log10(d) + band offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathLoss {
    pub exponent: f64,
    /// Loss at 1 m for the 5.9 GHz band.
    pub reference_loss_db: f64,
    pub cch_offset_db: f64,
    /// Frequency term relative to 5.9 GHz; negative means less loss.
    pub tvws_offset_db: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        PathLoss {
            exponent: 2.5,
            // 20·log10(4π/λ) at 5.9 GHz
            reference_loss_db: 47.86,
            cch_offset_db: 0.0,
            // 20·log10(506/5900): TVWS centre against the CCH
            tvws_offset_db: 20.0 * (506.0f64 / 5900.0).log10(),
        }
    }
}

impl PathLoss {
    pub fn loss_db(&self, distance_m: f64, band: Band) -> f64 {
        let offset = match band {
            Band::Cch => self.cch_offset_db,
            Band::Tvws(_) => self.tvws_offset_db,
        };
        self.reference_loss_db + 10.0 * self.exponent * distance_m.max(1.0).log10() + offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioParams {
    pub cch_tx_power_dbm: f64,
    pub tvws_tx_power_dbm: f64,
    /// Per 10 MHz channel.
    pub noise_floor_dbm: f64,
    pub v2v_pathloss: PathLoss,
    pub reception_sinr_threshold_db: f64,
    pub cch_csma_sense_dbm: f64,
    pub tvws_csma_sense_dbm: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            cch_tx_power_dbm: 20.0,
            tvws_tx_power_dbm: 20.0,
            noise_floor_dbm: -95.0,
            v2v_pathloss: PathLoss::default(),
            reception_sinr_threshold_db: 10.0,
            cch_csma_sense_dbm: -75.0,
            tvws_csma_sense_dbm: -65.0,
        }
    }
}

impl RadioParams {
    pub fn tx_power_dbm(&self, band: Band) -> f64 {
        match band {
            Band::Cch => self.cch_tx_power_dbm,
            Band::Tvws(_) => self.tvws_tx_power_dbm,
        }
    }

    pub fn csma_sense_dbm(&self, band: Band) -> f64 {
        match band {
            Band::Cch => self.cch_csma_sense_dbm,
            Band::Tvws(_) => self.tvws_csma_sense_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DttProtection {
    /// Minimum DTT power for TV reception; receivers below it are not sampled.
    pub reception_threshold_dbm: f64,
    pub required_sir_db: f64,
}

impl Default for DttProtection {
    fn default() -> Self {
        DttProtection {
            reception_threshold_dbm: -78.75,
            required_sir_db: 39.5,
        }
    }
}

// ---------------------------------------------------------------------------
// Spectrum: the field + coupling seen through a channel plan
// ---------------------------------------------------------------------------

/// A transmission as seen by the power arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub position: Point,
    pub tx_power_dbm: f64,
    pub band: Band,
}

/// DTT field, ACIR table and TVWS channel frequencies bundled so channel
/// offsets can be resolved.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub field: DttField,
    pub acir: AcirTable,
    pub tvws_freqs_mhz: Vec<f64>,
    pub spacing_mhz: f64,
}

impl Spectrum {
    /// Offset, in channel steps, from TVWS channel `from` to frequency `to_mhz`.
    pub fn offset_to_freq(&self, from: usize, to_mhz: f64) -> i64 {
        ((to_mhz - self.tvws_freqs_mhz[from]) / self.spacing_mhz).round() as i64
    }

    /// Linear coupling between two bands. Cross-band coupling is zero.
    pub fn band_coupling(&self, from: Band, to: Band) -> f64 {
        match (from, to) {
            (Band::Cch, Band::Cch) => 1.0,
            (Band::Tvws(a), Band::Tvws(b)) => self.acir.coupling(b as i64 - a as i64),
            _ => 0.0,
        }
    }

    /// DTT power on every profile at `x`; `shadowing[k]` is the draw for profile `k`.
    pub fn dtt_powers(&self, x: f64, shadowing: &[f64]) -> Result<Vec<f64>> {
        self.field
            .channels
            .iter()
            .zip(shadowing)
            .map(|(p, &z)| dtt_power_at(&self.field, x, p.freq_mhz, z))
            .collect()
    }

    pub fn effective_dtt_power(&self, x: f64, channel: usize, shadowing: &[f64]) -> Result<f64> {
        effective_dtt_power(
            &self.field,
            x,
            self.tvws_freqs_mhz[channel],
            self.spacing_mhz,
            &self.acir,
            shadowing,
        )
    }

    /// Effective DTT power in `channel` given the per-profile DTT powers at a point.
    pub fn couple_dtt(&self, channel: usize, dtt_dbm: &[f64]) -> f64 {
        let mw: f64 = self
            .field
            .channels
            .iter()
            .zip(dtt_dbm)
            .map(|(p, &dbm)| {
                dbm_to_mw(dbm) * self.acir.coupling(self.offset_to_freq(channel, p.freq_mhz))
            })
            .sum();
        mw_to_dbm(mw)
    }
}

/// Power sum over all DTT profiles at `position_m`, each attenuated by the ACIR
/// of its offset from `target_freq_mhz`.
pub fn effective_dtt_power(
    field: &DttField,
    position_m: f64,
    target_freq_mhz: f64,
    spacing_mhz: f64,
    acir: &AcirTable,
    shadowing: &[f64],
) -> Result<f64> {
    let mut mw = 0.0;
    for (k, profile) in field.channels.iter().enumerate() {
        let z = shadowing.get(k).copied().unwrap_or(0.0);
        let p = dtt_power_at(field, position_m, profile.freq_mhz, z)?;
        let offset = ((profile.freq_mhz - target_freq_mhz) / spacing_mhz).round() as i64;
        mw += dbm_to_mw(p) * acir.coupling(offset);
    }
    Ok(mw_to_dbm(mw))
}

/// Received V2V power at `rx`.
pub fn v2v_rx_power(
    tx_power_dbm: f64,
    tx: Point,
    rx: Point,
    band: Band,
    pathloss: &PathLoss,
) -> f64 {
    tx_power_dbm - pathloss.loss_db(tx.distance(&rx), band)
}

/// Instantaneous SINR of `wanted` at `rx`. `concurrent` holds the other
/// transmissions on air; those on other bands do not couple. The DTT term
/// applies to TVWS only and is passed in as the effective DTT power already
/// resolved for the wanted channel (`None` or `-inf` for none).
pub fn link_sinr(
    spectrum: &Spectrum,
    radio: &RadioParams,
    rx: Point,
    wanted: &Emission,
    concurrent: &[Emission],
    dtt_effective_dbm: Option<f64>,
) -> f64 {
    let pl = &radio.v2v_pathloss;
    let signal = dbm_to_mw(v2v_rx_power(
        wanted.tx_power_dbm,
        wanted.position,
        rx,
        wanted.band,
        pl,
    ));
    let mut interference = dbm_to_mw(radio.noise_floor_dbm);
    if wanted.band.is_tvws() {
        interference += dtt_effective_dbm.map_or(0.0, dbm_to_mw);
    }
    for e in concurrent {
        let coupling = spectrum.band_coupling(e.band, wanted.band);
        if coupling > 0.0 {
            interference +=
                dbm_to_mw(v2v_rx_power(e.tx_power_dbm, e.position, rx, e.band, pl)) * coupling;
        }
    }
    mw_to_dbm(signal) - mw_to_dbm(interference)
}

/// SIR at a DTT receiver for each DTT profile whose wanted power is given in
/// `dtt_dbm` (aligned with `spectrum.field.channels`). Returns `(freq, sir)`
/// pairs; empty when no TVWS transmission is active.
pub fn dtt_sir(
    spectrum: &Spectrum,
    pathloss: &PathLoss,
    receiver: Point,
    dtt_dbm: &[f64],
    active: &[Emission],
) -> Vec<(f64, f64)> {
    let tvws: Vec<&Emission> = active.iter().filter(|e| e.band.is_tvws()).collect();
    if tvws.is_empty() {
        return Vec::new();
    }
    spectrum
        .field
        .channels
        .iter()
        .zip(dtt_dbm)
        .map(|(profile, &wanted)| {
            let mw: f64 = tvws
                .iter()
                .map(|e| {
                    let Band::Tvws(ch) = e.band else {
                        unreachable!()
                    };
                    let p = v2v_rx_power(e.tx_power_dbm, e.position, receiver, e.band, pathloss);
                    dbm_to_mw(p)
                        * spectrum
                            .acir
                            .coupling(spectrum.offset_to_freq(ch, profile.freq_mhz))
                })
                .sum();
            (profile.freq_mhz, wanted - mw_to_dbm(mw))
        })
        .collect()
}
