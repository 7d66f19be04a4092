//! Pitch and time transforms: the encoder-side input perturbation grid and
//! corpus-level 10x augmentation.
//!
//! Perturbation draws uniformly from the 48-cell cross product of 12 pitch
//! shifts (±1..±6 semitones) and 4 time stretches (±2.5%, ±5%). It applies
//! only to the conditioning performance fed to the encoder; decoder targets
//! always stay clean.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::notes::{Note, NoteSequence};

/// The 12 perturbation pitch shifts: every nonzero shift within ±6.
pub const PERTURB_SEMITONES: [i32; 12] = [-6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6];
/// The 4 perturbation time stretches, in 2.5% intervals around 1.
pub const PERTURB_STRETCHES: [f64; 4] = [0.95, 0.975, 1.025, 1.05];

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("time stretch factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("cannot augment an empty corpus")]
    EmptyCorpus,
}

/// Shifts every pitch by `semitones`, clamping at the MIDI bounds; returns
/// the shifted sequence and how many notes clamped. Timing is untouched.
pub fn pitch_shift(seq: &NoteSequence, semitones: i32) -> (NoteSequence, usize) {
    let mut clamped = 0usize;
    let notes: Vec<Note> = seq
        .notes()
        .iter()
        .map(|n| {
            let raw = n.pitch as i32 + semitones;
            let pitch = raw.clamp(0, 127);
            if pitch != raw {
                clamped += 1;
            }
            Note { pitch: pitch as u8, ..*n }
        })
        .collect();
    let seq = NoteSequence::new(notes, seq.total_seconds()).expect("clamped pitches stay valid");
    (seq, clamped)
}

/// Multiplies every onset, offset and the total length by `factor`.
pub fn time_stretch(seq: &NoteSequence, factor: f64) -> Result<NoteSequence, AugmentError> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(AugmentError::NonPositiveFactor(factor));
    }
    let notes: Vec<Note> = seq
        .notes()
        .iter()
        .map(|n| Note { onset: n.onset * factor, offset: n.offset * factor, ..*n })
        .collect();
    Ok(NoteSequence::new(notes, seq.total_seconds() * factor).expect("stretch preserves order"))
}

/// One uniform draw from the 48-cell perturbation grid.
pub fn sample_perturbation(rng: &mut impl Rng) -> (i32, f64) {
    let semitones = PERTURB_SEMITONES[rng.gen_range(0..PERTURB_SEMITONES.len())];
    let stretch = PERTURB_STRETCHES[rng.gen_range(0..PERTURB_STRETCHES.len())];
    (semitones, stretch)
}

/// Applies a freshly sampled perturbation; returns the perturbed sequence
/// and the draw it used.
pub fn perturb(seq: &NoteSequence, rng: &mut impl Rng) -> (NoteSequence, (i32, f64)) {
    let (semitones, stretch) = sample_perturbation(rng);
    let (shifted, _) = pitch_shift(seq, semitones);
    let out = time_stretch(&shifted, stretch).expect("grid stretches are positive");
    (out, (semitones, stretch))
}

/// Expands a corpus tenfold: each performance keeps its original and gains
/// 9 variants with pitch shifts within a minor third (±1..±3, never 0) and
/// time stretches drawn continuously from ±5%. Deterministic given `seed`.
pub fn augment_dataset(corpus: &[NoteSequence], seed: u64) -> Result<Vec<NoteSequence>, AugmentError> {
    if corpus.is_empty() {
        return Err(AugmentError::EmptyCorpus);
    }
    let mut out = Vec::with_capacity(corpus.len() * 10);
    for (i, seq) in corpus.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        out.push(seq.clone());
        for _ in 0..9 {
            let shifts = [-3, -2, -1, 1, 2, 3];
            let semitones = shifts[rng.gen_range(0..shifts.len())];
            let stretch = rng.gen_range(0.95..=1.05);
            let (shifted, _) = pitch_shift(seq, semitones);
            out.push(time_stretch(&shifted, stretch)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_seq() -> NoteSequence {
        NoteSequence::from_notes(vec![
            Note::new(60, 80, 0.0, 0.5).unwrap(),
            Note::new(72, 90, 0.5, 1.0).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn shift_up_then_down_is_identity() {
        let seq = demo_seq();
        let (up, c1) = pitch_shift(&seq, 6);
        let (back, c2) = pitch_shift(&up, -6);
        assert_eq!(c1 + c2, 0);
        assert_eq!(back, seq);
    }

    #[test]
    fn shift_zero_is_identity() {
        let seq = demo_seq();
        assert_eq!(pitch_shift(&seq, 0).0, seq);
    }

    #[test]
    fn shift_clamps_at_bounds() {
        let seq = NoteSequence::from_notes(vec![Note::new(125, 80, 0.0, 0.5).unwrap()]).unwrap();
        let (shifted, clamped) = pitch_shift(&seq, 6);
        assert_eq!(shifted.notes()[0].pitch, 127);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn stretch_scales_times() {
        let seq = demo_seq();
        assert_eq!(time_stretch(&seq, 1.0).unwrap(), seq);
        let doubled = time_stretch(&seq, 2.0).unwrap();
        assert_eq!(doubled.notes()[1].onset, 1.0);
        assert_eq!(doubled.total_seconds(), 2.0);
    }

    #[test]
    fn stretch_round_trip_within_1e12() {
        let seq = demo_seq();
        let back = time_stretch(&time_stretch(&seq, 1.05).unwrap(), 1.0 / 1.05).unwrap();
        for (a, b) in back.notes().iter().zip(seq.notes()) {
            assert!((a.onset - b.onset).abs() < 1e-12);
            assert!((a.offset - b.offset).abs() < 1e-12);
        }
    }

    #[test]
    fn non_positive_factor_is_rejected() {
        assert!(matches!(time_stretch(&demo_seq(), 0.0), Err(AugmentError::NonPositiveFactor(_))));
        assert!(matches!(time_stretch(&demo_seq(), -1.0), Err(AugmentError::NonPositiveFactor(_))));
    }

    #[test]
    fn perturbation_draws_stay_on_grid_and_are_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (s, f) = sample_perturbation(&mut a);
            assert!(PERTURB_SEMITONES.contains(&s));
            assert!(PERTURB_STRETCHES.contains(&f));
            assert_eq!((s, f), sample_perturbation(&mut b));
        }
    }

    #[test]
    fn perturbation_grid_is_uniform_by_chi_squared() {
        // 10,000 draws over 48 cells; chi-squared critical value at p=0.01
        // with 47 degrees of freedom is 72.443.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 48];
        let n = 10_000;
        for _ in 0..n {
            let (s, f) = sample_perturbation(&mut rng);
            let si = PERTURB_SEMITONES.iter().position(|&x| x == s).unwrap();
            let fi = PERTURB_STRETCHES.iter().position(|&x| x == f).unwrap();
            counts[si * 4 + fi] += 1;
        }
        let expected = n as f64 / 48.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 72.443, "chi-squared {chi2} rejects uniformity");
        // Every cell within 3 sigma of the binomial expectation.
        let sigma = (n as f64 * (1.0 / 48.0) * (47.0 / 48.0)).sqrt();
        for &c in &counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn dataset_10x_counts_and_bounds() {
        let corpus = vec![demo_seq(), demo_seq(), demo_seq()];
        let out = augment_dataset(&corpus, 3).unwrap();
        assert_eq!(out.len(), 30);
        for (i, var) in out.iter().enumerate() {
            let source = &corpus[i / 10];
            let ratio = var.total_seconds() / source.total_seconds();
            assert!((0.95..=1.05).contains(&ratio) || (ratio - 1.0).abs() < 1e-12);
            for (a, b) in var.notes().iter().zip(source.notes()) {
                assert!((a.pitch as i32 - b.pitch as i32).abs() <= 3);
            }
        }
        assert_eq!(augment_dataset(&corpus, 3).unwrap().len(), 30);
        assert_eq!(augment_dataset(&[], 3), Err(AugmentError::EmptyCorpus));
    }

    #[test]
    fn dataset_10x_is_deterministic() {
        let corpus = vec![demo_seq()];
        assert_eq!(augment_dataset(&corpus, 9).unwrap(), augment_dataset(&corpus, 9).unwrap());
    }
}
