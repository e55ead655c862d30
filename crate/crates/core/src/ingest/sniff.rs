use crate::time::TimeUnit;

use super::IngestError;

/// 2000-01-01T00:00:00Z in epoch seconds.
const YEAR_2000: i64 = 946_684_800;
/// 2100-01-01T00:00:00Z in epoch seconds.
const YEAR_2100: i64 = 4_102_444_800;

/// Picks the unit under which the sample median lands in `[2000, 2100)` UTC.
///
/// The three candidate ranges are disjoint, so at most one unit matches.
pub fn sniff_timestamp_unit(sample: &[i64]) -> Result<TimeUnit, IngestError> {
    if sample.is_empty() {
        return Err(IngestError::AmbiguousUnit { median: 0 });
    }
    let mut sorted = sample.to_vec();
    sorted.sort_unstable();
    let median = sorted[sorted.len() / 2];
    for unit in [TimeUnit::Seconds, TimeUnit::Milliseconds, TimeUnit::Microseconds] {
        let scale = unit.micros_per_unit();
        let (lo, hi) = (YEAR_2000 * (1_000_000 / scale), YEAR_2100 * (1_000_000 / scale));
        if (lo..hi).contains(&median) {
            return Ok(unit);
        }
    }
    Err(IngestError::AmbiguousUnit { median })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seconds() {
        assert_eq!(sniff_timestamp_unit(&[1_749_147_005]).unwrap(), TimeUnit::Seconds);
    }

    #[test]
    fn milliseconds() {
        assert_eq!(
            sniff_timestamp_unit(&[1_749_147_005_000, 1_749_147_006_000]).unwrap(),
            TimeUnit::Milliseconds
        );
    }

    #[test]
    fn microseconds() {
        assert_eq!(
            sniff_timestamp_unit(&[1_749_147_005_000_000]).unwrap(),
            TimeUnit::Microseconds
        );
    }

    #[test]
    fn too_small_is_ambiguous() {
        assert!(matches!(
            sniff_timestamp_unit(&[12]),
            Err(IngestError::AmbiguousUnit { median: 12 })
        ));
        assert!(sniff_timestamp_unit(&[]).is_err());
        // nanoseconds fall outside every supported range
        assert!(sniff_timestamp_unit(&[1_749_147_005_000_000_000]).is_err());
    }

    #[test]
    fn median_ignores_stray_values() {
        assert_eq!(
            sniff_timestamp_unit(&[1, 1_749_147_005, 1_749_147_006]).unwrap(),
            TimeUnit::Seconds
        );
    }
}
