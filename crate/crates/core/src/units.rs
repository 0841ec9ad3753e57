//! Decibel/linear conversions.
//!
//! Every power sum in the crate goes through milliwatts; dBm only appears at
//! the edges (configuration, reports, CSV).

/// dBm to milliwatts. `-inf` maps to `0.0`.
#[inline]
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Milliwatts to dBm. `0.0` maps to `-inf`.
#[inline]
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Linear factor for a dB gain (negative for attenuation).
#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Power sum of dBm values.
pub fn sum_dbm<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    mw_to_dbm(values.into_iter().map(dbm_to_mw).sum())
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinities_round_trip() {
        assert_eq!(dbm_to_mw(f64::NEG_INFINITY), 0.0);
        assert_eq!(mw_to_dbm(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn equal_powers_add_three_db() {
        let s = sum_dbm([-60.0, -60.0]);
        assert!((s - (-60.0 + 10.0 * 2f64.log10())).abs() < 1e-12);
    }
}
