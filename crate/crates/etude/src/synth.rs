//! Synthetic desk corpora: four clearly distinguishable performance styles
//! used by the protocol scripts, the examples and the acceptance suite in
//! place of a real piano dataset.
//!
//! A style fixes register, tempo, articulation and loudness; an instance
//! fixes a short pitch cycle, a transposition and a velocity offset inside
//! the style. Instance traits persist through the piece, so a style latent
//! can summarize them while a prefix-only model must infer them.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::notes::{Note, NoteSequence};

/// Register, rhythm and dynamics of one synthetic style.
#[derive(Debug, Clone, Copy)]
pub struct StyleSpec {
    pub name: &'static str,
    pub pitch_lo: u8,
    pub pitch_hi: u8,
    /// Seconds between note onsets (10 ms grid).
    pub ioi: f64,
    /// Note length in seconds (10 ms grid).
    pub duration: f64,
    pub velocity: u8,
    /// Length of the repeating pitch cycle.
    pub cycle: usize,
}

/// The four desk styles: far apart in register, density, loudness and
/// articulation so feature-based metrics separate them cleanly.
pub const STYLES: [StyleSpec; 4] = [
    StyleSpec { name: "low_sparse_soft", pitch_lo: 36, pitch_hi: 52, ioi: 0.24, duration: 0.20, velocity: 34, cycle: 6 },
    StyleSpec { name: "high_dense_loud", pitch_lo: 76, pitch_hi: 92, ioi: 0.08, duration: 0.06, velocity: 106, cycle: 8 },
    StyleSpec { name: "mid_walking", pitch_lo: 55, pitch_hi: 70, ioi: 0.16, duration: 0.12, velocity: 70, cycle: 7 },
    StyleSpec { name: "wide_long", pitch_lo: 48, pitch_hi: 84, ioi: 0.32, duration: 0.28, velocity: 86, cycle: 5 },
];

/// Generates one performance of `style` with roughly `target_tokens` event
/// tokens. Deterministic in (style, index, seed).
pub fn style_performance(style: usize, index: u64, seed: u64, target_tokens: usize) -> NoteSequence {
    let spec = STYLES[style % STYLES.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (style as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ index.wrapping_mul(0xd1b54a32d192ed03),
    );
    // Instance traits: a pitch cycle and a velocity offset that hold for
    // the whole piece.
    let cycle: Vec<u8> =
        (0..spec.cycle).map(|_| rng.gen_range(spec.pitch_lo..=spec.pitch_hi)).collect();
    let velocity =
        (spec.velocity as i32 + rng.gen_range(-2..=2)).clamp(1, 127) as u8;

    // Each note costs roughly ON + OFF + a TIME_SHIFT, plus one VELOCITY.
    let n_notes = (target_tokens.saturating_sub(1) / 3).max(spec.cycle + 1);
    let mut notes = Vec::with_capacity(n_notes);
    for i in 0..n_notes {
        let onset = i as f64 * spec.ioi;
        notes.push(Note {
            pitch: cycle[i % cycle.len()],
            velocity,
            onset,
            offset: onset + spec.duration,
        });
    }
    NoteSequence::from_notes(notes).expect("grid construction is valid")
}

/// A corpus of `per_style` instances of each of the four styles, labeled.
pub fn style_corpus(per_style: usize, seed: u64, target_tokens: usize) -> Vec<(usize, NoteSequence)> {
    let mut out = Vec::with_capacity(4 * per_style);
    for style in 0..STYLES.len() {
        for index in 0..per_style {
            out.push((style, style_performance(style, index as u64, seed, target_tokens)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_performance;
    use crate::metrics::{oa_similarity, MetricConfig};

    #[test]
    fn instances_are_deterministic_and_distinct() {
        let a = style_performance(1, 3, 42, 64);
        let b = style_performance(1, 3, 42, 64);
        assert_eq!(a, b);
        let c = style_performance(1, 4, 42, 64);
        assert_ne!(a, c);
    }

    #[test]
    fn token_budget_is_roughly_met() {
        for style in 0..4 {
            let seq = style_performance(style, 0, 7, 64);
            let n = encode_performance(&seq).len();
            assert!(n >= 40 && n <= 90, "style {style} produced {n} tokens");
        }
    }

    #[test]
    fn same_style_pairs_overlap_more_than_cross_style() {
        let cfg = MetricConfig::default();
        let corpus = style_corpus(3, 11, 64);
        let same = oa_similarity(&corpus[0].1, &corpus[1].1, &cfg).unwrap().oa_avg;
        let cross = oa_similarity(&corpus[0].1, &corpus[4].1, &cfg).unwrap().oa_avg;
        assert!(
            same > cross,
            "same-style OA {same} should beat cross-style OA {cross}"
        );
    }

    #[test]
    fn corpus_is_labeled_and_sized() {
        let corpus = style_corpus(5, 1, 64);
        assert_eq!(corpus.len(), 20);
        for style in 0..4 {
            assert_eq!(corpus.iter().filter(|(s, _)| *s == style).count(), 5);
        }
    }
}
