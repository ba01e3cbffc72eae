//! Equal-temperament pitch math: MIDI <-> Hz and semitone frequency ratios.

use crate::error::{Error, Result};

/// MIDI note number. 0 is reserved for rests/padding; the corpus uses 52..=84.
pub type PitchId = u8;

/// A4 (MIDI 69) anchor frequency in Hz.
pub const A4_HZ: f64 = 440.0;
/// MIDI id of the A4 anchor.
pub const A4_MIDI: i32 = 69;
/// Lowest pitch id that appears in corpus phrases.
pub const CORPUS_PITCH_MIN: u8 = 52;
/// Highest pitch id that appears in corpus phrases.
pub const CORPUS_PITCH_MAX: u8 = 84;

/// Fundamental frequency of a MIDI pitch: `440 * 2^((p - 69) / 12)`.
pub fn midi_to_hz(p: PitchId) -> Result<f64> {
    if p > 127 {
        return Err(Error::domain(format!("MIDI pitch id {p} outside [0, 127]")));
    }
    Ok(A4_HZ * ((f64::from(p) - A4_MIDI as f64) / 12.0).exp2())
}

/// Equal-temperament frequency ratio between two pitches: `2^((p_i - p_j)/12)`.
pub fn freq_ratio(p_i: PitchId, p_j: PitchId) -> f64 {
    ((f64::from(p_i) - f64::from(p_j)) / 12.0).exp2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn a4_is_440() {
        assert_eq!(midi_to_hz(69).unwrap(), 440.0);
    }

    #[test]
    fn corpus_endpoints_match_quoted_frequencies() {
        // E3 and C6, the corpus pitch range endpoints.
        assert!((midi_to_hz(52).unwrap() - 164.81).abs() < 0.05);
        assert!((midi_to_hz(84).unwrap() - 1046.50).abs() < 0.05);
    }

    #[test]
    fn out_of_range_pitch_is_domain_error() {
        assert!(matches!(midi_to_hz(128), Err(Error::Domain(_))));
    }

    #[test]
    fn ratio_fixtures() {
        assert_eq!(freq_ratio(60, 60), 1.0);
        assert_relative_eq!(freq_ratio(72, 60), 2.0, max_relative = 1e-12);
        assert_relative_eq!(freq_ratio(61, 60), 1.059_463_1, max_relative = 1e-6);
        // Inverse pairs multiply to one.
        assert_relative_eq!(freq_ratio(67, 61) * freq_ratio(61, 67), 1.0, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn octave_doubles(p in 0u8..=115) {
            let lo = midi_to_hz(p).unwrap();
            let hi = midi_to_hz(p + 12).unwrap();
            prop_assert!((hi - 2.0 * lo).abs() <= 1e-9 * hi.abs());
        }

        #[test]
        fn ratio_matches_frequency_quotient(a in 0u8..=127, b in 0u8..=127) {
            let r = freq_ratio(a, b);
            let q = midi_to_hz(a).unwrap() / midi_to_hz(b).unwrap();
            prop_assert!((r - q).abs() <= 1e-12 * q.abs());
        }

        #[test]
        fn ratio_is_multiplicative_along_chains(a in 0u8..=127, b in 0u8..=127, c in 0u8..=127) {
            let lhs = freq_ratio(a, b) * freq_ratio(b, c);
            let rhs = freq_ratio(a, c);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
        }
    }
}
