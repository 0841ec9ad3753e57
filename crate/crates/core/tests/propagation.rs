use proptest::prelude::*;

use platoon_vdsa::propagation::{
    dtt_power_at, dtt_sir, effective_dtt_power, link_sinr, AcirTable, Band, DttChannelProfile,
    DttField, Emission, PathLoss, Point, Segment,
};
use platoon_vdsa::scenario::SimConfig;

fn mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn point() -> impl Strategy<Value = Point> {
    (0.0f64..5000.0, -7.0f64..7.0).prop_map(|(x, y)| Point::new(x, y))
}

fn emission(n_channels: usize) -> impl Strategy<Value = Emission> {
    (point(), 0.0f64..23.0, prop::option::of(0..n_channels)).prop_map(|(position, p, ch)| Emission {
        position,
        tx_power_dbm: p,
        band: ch.map_or(Band::Cch, Band::Tvws),
    })
}

/// Received power with the log-distance model spelled out.
fn rx_mw(pl: &PathLoss, e: &Emission, at: Point) -> f64 {
    let d = ((e.position.x - at.x).powi(2) + (e.position.y - at.y).powi(2)).sqrt().max(1.0);
    let offset = if e.band.is_tvws() { pl.tvws_offset_db } else { pl.cch_offset_db };
    mw(e.tx_power_dbm - pl.reference_loss_db - 10.0 * pl.exponent * d.log10() - offset)
}

fn coupling(acir: &AcirTable, a: usize, b: usize) -> f64 {
    let k = a.abs_diff(b).min(acir.attenuation_db.len() - 1);
    mw(-acir.attenuation_db[k])
}

proptest! {
    #[test]
    fn link_sinr_matches_brute_force(
        wanted in emission(5),
        others in prop::collection::vec(emission(5), 0..8),
        rx in point(),
        dtt in prop::option::of(-120.0f64..-40.0),
    ) {
        let cfg = SimConfig::default();
        let spectrum = cfg.spectrum();
        let pl = &cfg.radio.v2v_pathloss;
        let mut i = mw(cfg.radio.noise_floor_dbm);
        if wanted.band.is_tvws() {
            i += dtt.map_or(0.0, mw);
        }
        for o in &others {
            i += match (o.band, wanted.band) {
                (Band::Cch, Band::Cch) => rx_mw(pl, o, rx),
                (Band::Tvws(a), Band::Tvws(b)) => rx_mw(pl, o, rx) * coupling(&cfg.acir, a, b),
                _ => 0.0,
            };
        }
        let want = 10.0 * (rx_mw(pl, &wanted, rx) / i).log10();
        let got = link_sinr(&spectrum, &cfg.radio, rx, &wanted, &others, dtt);
        prop_assert!(((got - want) / want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn an_extra_transmitter_never_raises_sinr(
        wanted in emission(5),
        others in prop::collection::vec(emission(5), 0..6),
        extra in emission(5),
        rx in point(),
    ) {
        let cfg = SimConfig::default();
        let spectrum = cfg.spectrum();
        let before = link_sinr(&spectrum, &cfg.radio, rx, &wanted, &others, None);
        let mut more = others.clone();
        more.push(extra);
        let after = link_sinr(&spectrum, &cfg.radio, rx, &wanted, &more, None);
        prop_assert!(after <= before + 1e-12);
    }

    #[test]
    fn path_loss_grows_with_distance(d in 1.0f64..10_000.0, k in 1.0f64..4.0) {
        let pl = PathLoss::default();
        prop_assert!(pl.loss_db(d * k, Band::Cch) >= pl.loss_db(d, Band::Cch));
        // lower frequency, lower loss
        prop_assert!(pl.loss_db(d, Band::Tvws(0)) < pl.loss_db(d, Band::Cch));
    }

    #[test]
    fn dtt_power_is_linear_in_the_draw(x in 0.0f64..5000.0, z in -4.0f64..4.0) {
        let field = DttField::synthetic_default();
        for p in &field.channels {
            let mean = dtt_power_at(&field, x, p.freq_mhz, 0.0).unwrap();
            let seg = p.segments[p.segment_index(x).unwrap()];
            let got = dtt_power_at(&field, x, p.freq_mhz, z).unwrap();
            prop_assert!((got - (mean + z * seg.shadowing_sigma_db)).abs() < 1e-9);
        }
    }

    #[test]
    fn effective_dtt_power_adds_coupled_profiles(x in 0.0f64..5000.0, ch in 0usize..5, z0 in -3.0f64..3.0, z1 in -3.0f64..3.0) {
        let cfg = SimConfig::default();
        let field = cfg.field();
        let freqs = &cfg.channel_plan.tvws_center_freqs_mhz;
        let got = effective_dtt_power(field, x, freqs[ch], 8.0, &cfg.acir, &[z0, z1]).unwrap();
        let want: f64 = field
            .channels
            .iter()
            .zip([z0, z1])
            .map(|(p, z)| {
                let src = freqs.iter().position(|&f| f == p.freq_mhz).unwrap();
                mw(dtt_power_at(field, x, p.freq_mhz, z).unwrap()) * coupling(&cfg.acir, src, ch)
            })
            .sum();
        prop_assert!((got - 10.0 * want.log10()).abs() < 1e-9);
    }
}

#[test]
fn dtt_field_matches_its_segments_at_the_knots() {
    let field = DttField::synthetic_default();
    let p490 = field.profile(490.0).unwrap();
    assert!((dtt_power_at(&field, 0.0, 490.0, 0.0).unwrap() + 58.0).abs() < 1e-9);
    assert!((dtt_power_at(&field, 800.0, 490.0, 0.0).unwrap() + 52.0).abs() < 1e-9);
    assert_eq!(p490.segments.len(), 6);
    // channels without a profile carry nothing
    assert_eq!(dtt_power_at(&field, 10.0, 506.0, 0.0).unwrap(), f64::NEG_INFINITY);
    assert!(dtt_power_at(&field, 6000.0, 490.0, 0.0).is_err());
}

#[test]
fn monte_carlo_mean_of_shadowed_power_hits_the_line() {
    use rand::{Rng, SeedableRng};
    let field = DttField {
        channels: vec![DttChannelProfile {
            freq_mhz: 522.0,
            segments: vec![Segment::through(0.0, 5000.0, -70.0, -50.0, 3.0)],
        }],
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let n = 40_000;
    let mean = (0..n)
        .map(|_| dtt_power_at(&field, 2500.0, 522.0, rng.sample(rand_distr::StandardNormal)).unwrap())
        .sum::<f64>()
        / n as f64;
    assert!((mean + 60.0).abs() <= 3.0 * 3.0 / (n as f64).sqrt(), "{mean}");
}

#[test]
fn acir_defaults_and_clamping() {
    let a = AcirTable::default();
    assert_eq!(a.attenuation_db, vec![0.0, 30.0, 43.0, 50.0]);
    assert_eq!(a.attenuation(-2), 43.0);
    assert_eq!(a.attenuation(9), 50.0);
    assert!((a.coupling(1) - 1e-3).abs() < 1e-18);
}

#[test]
fn dtt_sir_by_hand() {
    // One TVWS transmitter on 506 MHz, 100 m from a receiver watching 490 and
    // 522 MHz, both two channels away (43 dB).
    let spectrum = SimConfig::default().spectrum();
    let pl = PathLoss {
        exponent: 2.0,
        reference_loss_db: 40.0,
        cch_offset_db: 0.0,
        tvws_offset_db: 0.0,
    };
    let tx = Emission {
        position: Point::new(100.0, 0.0),
        tx_power_dbm: 20.0,
        band: Band::Tvws(2),
    };
    // 20 - (40 + 40) - 43 = -103 dBm of interference
    let sir = dtt_sir(&spectrum, &pl, Point::new(0.0, 0.0), &[-60.0, -70.0], &[tx]);
    assert_eq!(sir.len(), 2);
    assert!((sir[0].1 - 43.0).abs() < 1e-9);
    assert!((sir[1].1 - 33.0).abs() < 1e-9);
    // no TVWS traffic, no sample
    let cch = Emission { band: Band::Cch, ..tx };
    assert!(dtt_sir(&spectrum, &pl, Point::new(0.0, 0.0), &[-60.0, -70.0], &[cch]).is_empty());
}
