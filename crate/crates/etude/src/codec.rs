//! Bit-exact codec between [`NoteSequence`] and the event-based performance
//! vocabulary: 128 NOTE_ON, 128 NOTE_OFF, 100 TIME_SHIFT (10 ms increments
//! up to 1 s) and 32 VELOCITY tokens, plus PAD/EOS/STOP specials.

use thiserror::Error;

use crate::notes::{Note, NoteSequence};

pub type TokenId = usize;

pub const NOTE_ON_BASE: TokenId = 0;
pub const NOTE_OFF_BASE: TokenId = 128;
pub const TIME_SHIFT_BASE: TokenId = 256;
pub const VELOCITY_BASE: TokenId = 356;
pub const PAD: TokenId = 388;
pub const EOS: TokenId = 389;
pub const STOP: TokenId = 390;

/// Size of the event vocabulary without specials.
pub const CORE_VOCAB: usize = 388;
/// Size including PAD/EOS/STOP; the model's output distribution covers this.
pub const VOCAB_SIZE: usize = 391;

/// One time-shift step in seconds.
pub const TIME_STEP: f64 = 0.01;
/// Longest single time shift, in steps (1 s).
pub const MAX_SHIFT_STEPS: i64 = 100;

/// Velocity bin used when a decoded stream names no VELOCITY token.
pub const DEFAULT_VELOCITY_BIN: u8 = 20;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("velocity {0} outside 1..=127")]
    VelocityOutOfRange(i64),
    #[error("line {line}: bad token id `{text}`")]
    BadTokenId { line: usize, text: String },
    #[error("line {line}: token id {id} exceeds vocabulary ({VOCAB_SIZE})")]
    TokenOutOfRange { line: usize, id: usize },
}

/// A decoded view of a token id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerfToken {
    NoteOn(u8),
    NoteOff(u8),
    /// Shift of `steps` 10 ms increments, `1..=100`.
    TimeShift(u8),
    /// Velocity bin `0..=31`.
    Velocity(u8),
    Pad,
    Eos,
    Stop,
}

impl PerfToken {
    pub fn id(self) -> TokenId {
        match self {
            PerfToken::NoteOn(p) => NOTE_ON_BASE + p as usize,
            PerfToken::NoteOff(p) => NOTE_OFF_BASE + p as usize,
            PerfToken::TimeShift(k) => {
                debug_assert!((1..=100).contains(&k));
                TIME_SHIFT_BASE + k as usize - 1
            }
            PerfToken::Velocity(b) => VELOCITY_BASE + b as usize,
            PerfToken::Pad => PAD,
            PerfToken::Eos => EOS,
            PerfToken::Stop => STOP,
        }
    }

    pub fn from_id(id: TokenId) -> Option<PerfToken> {
        match id {
            0..=127 => Some(PerfToken::NoteOn(id as u8)),
            128..=255 => Some(PerfToken::NoteOff((id - NOTE_OFF_BASE) as u8)),
            256..=355 => Some(PerfToken::TimeShift((id - TIME_SHIFT_BASE + 1) as u8)),
            356..=387 => Some(PerfToken::Velocity((id - VELOCITY_BASE) as u8)),
            PAD => Some(PerfToken::Pad),
            EOS => Some(PerfToken::Eos),
            STOP => Some(PerfToken::Stop),
            _ => None,
        }
    }
}

/// Token sequence with the codec invariants: every id is in vocabulary, PAD
/// never appears in the interior, and at most one EOS sits at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerfTokenSeq {
    tokens: Vec<TokenId>,
}

impl PerfTokenSeq {
    pub fn new(tokens: Vec<TokenId>) -> Result<Self, String> {
        for (i, &t) in tokens.iter().enumerate() {
            if t >= VOCAB_SIZE {
                return Err(format!("token {t} at {i} exceeds vocabulary"));
            }
        }
        let body_end = tokens.len().saturating_sub(
            tokens.iter().rev().take_while(|&&t| t == PAD).count(),
        );
        let body = &tokens[..body_end];
        if body.iter().take(body.len().saturating_sub(1)).any(|&t| t == PAD || t == EOS) {
            return Err("PAD or EOS in sequence interior".into());
        }
        Ok(PerfTokenSeq { tokens })
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl std::ops::Deref for PerfTokenSeq {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.tokens
    }
}

/// Maps MIDI velocity `1..=127` to bin `0..=31`: `floor(v * 32 / 128)`.
pub fn quantize_velocity(v: i64) -> Result<u8, CodecError> {
    if !(1..=127).contains(&v) {
        return Err(CodecError::VelocityOutOfRange(v));
    }
    Ok(((v * 32 / 128) as u8).min(31))
}

/// Representative MIDI velocity for a bin (its rounded midpoint). Quantizing
/// the result returns the same bin.
pub fn velocity_for_bin(bin: u8) -> u8 {
    4 * bin.min(31) + 2
}

fn to_steps(seconds: f64) -> i64 {
    // Round half up on the 10 ms grid; times are non-negative.
    (seconds * 100.0).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    // Off sorts before On so simultaneous releases precede attacks.
    Off,
    On,
}

/// Encodes a sequence into performance tokens on the 10 ms grid.
///
/// VELOCITY is emitted only when the active bin changes; silences longer
/// than 1 s become repeated TIME_SHIFT(100); simultaneous events order
/// NOTE_OFF before NOTE_ON with ties broken by ascending pitch. Notes whose
/// quantized duration collapses to zero are stretched to one grid step.
pub fn encode_performance(seq: &NoteSequence) -> PerfTokenSeq {
    let mut events: Vec<(i64, EventKind, u8, u8)> = Vec::with_capacity(seq.len() * 2);
    for n in seq.notes() {
        let on = to_steps(n.onset);
        let off = to_steps(n.offset).max(on + 1);
        let bin = quantize_velocity(n.velocity as i64).expect("validated velocity");
        events.push((on, EventKind::On, n.pitch, bin));
        events.push((off, EventKind::Off, n.pitch, 0));
    }
    events.sort_by_key(|&(step, kind, pitch, _)| (step, kind, pitch));

    let mut tokens = Vec::with_capacity(events.len() * 2);
    let mut cursor = 0i64;
    let mut current_bin: Option<u8> = None;
    let emit_shift = |tokens: &mut Vec<TokenId>, from: i64, to: i64| {
        let mut gap = to - from;
        while gap > 0 {
            let k = gap.min(MAX_SHIFT_STEPS);
            tokens.push(PerfToken::TimeShift(k as u8).id());
            gap -= k;
        }
    };
    for (step, kind, pitch, bin) in events {
        emit_shift(&mut tokens, cursor, step);
        cursor = cursor.max(step);
        match kind {
            EventKind::On => {
                if current_bin != Some(bin) {
                    tokens.push(PerfToken::Velocity(bin).id());
                    current_bin = Some(bin);
                }
                tokens.push(PerfToken::NoteOn(pitch).id());
            }
            EventKind::Off => tokens.push(PerfToken::NoteOff(pitch).id()),
        }
    }
    let total = to_steps(seq.total_seconds());
    emit_shift(&mut tokens, cursor, total);
    PerfTokenSeq::new(tokens).expect("encoder emits only core tokens")
}

/// Repairs applied while decoding an ill-formed stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// NOTE_ONs never closed; the note ends at the final time.
    pub dangling_note_ons: usize,
    /// NOTE_OFFs with no sounding note; ignored.
    pub orphan_note_offs: usize,
    /// Notes that would have zero duration, stretched to one grid step.
    pub zero_length_bumped: usize,
    /// NOTE_ONs for an already-sounding pitch; the prior note is closed.
    pub reonsets: usize,
}

impl DecodeStats {
    pub fn total(&self) -> usize {
        self.dangling_note_ons + self.orphan_note_offs + self.zero_length_bumped + self.reonsets
    }
}

/// Decodes tokens back to a sequence. Never fails: ill-formed streams are
/// repaired and the repairs counted. Processing stops at the first EOS;
/// PAD and STOP are skipped.
pub fn decode_performance(tokens: &[TokenId]) -> (NoteSequence, DecodeStats) {
    let mut stats = DecodeStats::default();
    let mut cursor = 0i64;
    let mut active: [Option<(i64, u8)>; 128] = [None; 128];
    let mut notes: Vec<Note> = Vec::new();
    let mut bin = DEFAULT_VELOCITY_BIN;

    let close = |notes: &mut Vec<Note>, stats: &mut DecodeStats, pitch: u8, on: i64, vel: u8, off: i64| {
        let off = if off <= on {
            stats.zero_length_bumped += 1;
            on + 1
        } else {
            off
        };
        notes.push(Note {
            pitch,
            velocity: vel,
            onset: on as f64 * TIME_STEP,
            offset: off as f64 * TIME_STEP,
        });
    };

    for &id in tokens {
        match PerfToken::from_id(id) {
            Some(PerfToken::NoteOn(p)) => {
                if let Some((on, vel)) = active[p as usize].take() {
                    stats.reonsets += 1;
                    if cursor > on {
                        close(&mut notes, &mut stats, p, on, vel, cursor);
                    }
                }
                active[p as usize] = Some((cursor, velocity_for_bin(bin)));
            }
            Some(PerfToken::NoteOff(p)) => match active[p as usize].take() {
                Some((on, vel)) => close(&mut notes, &mut stats, p, on, vel, cursor),
                None => stats.orphan_note_offs += 1,
            },
            Some(PerfToken::TimeShift(k)) => cursor += k as i64,
            Some(PerfToken::Velocity(b)) => bin = b,
            Some(PerfToken::Eos) => break,
            Some(PerfToken::Pad) | Some(PerfToken::Stop) | None => {}
        }
    }
    for p in 0..128u8 {
        if let Some((on, vel)) = active[p as usize].take() {
            stats.dangling_note_ons += 1;
            close(&mut notes, &mut stats, p, on, vel, cursor);
        }
    }
    let last_offset = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
    let total = (cursor as f64 * TIME_STEP).max(last_offset);
    let seq = NoteSequence::new(notes, total).expect("decoder emits valid notes");
    (seq, stats)
}

/// One decimal id per line, the token file format.
pub fn tokens_to_text(tokens: &[TokenId]) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(&t.to_string());
        out.push('\n');
    }
    out
}

pub fn tokens_from_text(text: &str) -> Result<Vec<TokenId>, CodecError> {
    let mut tokens = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let id: usize = line
            .parse()
            .map_err(|_| CodecError::BadTokenId { line: idx + 1, text: line.to_string() })?;
        if id >= VOCAB_SIZE {
            return Err(CodecError::TokenOutOfRange { line: idx + 1, id });
        }
        tokens.push(id);
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notes::Note;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn velocity_bins_match_hand_arithmetic() {
        assert_eq!(quantize_velocity(1).unwrap(), 0);
        assert_eq!(quantize_velocity(64).unwrap(), 16);
        assert_eq!(quantize_velocity(127).unwrap(), 31);
        assert_eq!(quantize_velocity(0), Err(CodecError::VelocityOutOfRange(0)));
        assert_eq!(quantize_velocity(128), Err(CodecError::VelocityOutOfRange(128)));
    }

    #[test]
    fn velocity_bins_are_monotone() {
        let mut last = 0;
        for v in 1..=127 {
            let b = quantize_velocity(v).unwrap();
            assert!(b >= last);
            last = b;
        }
    }

    #[test]
    fn bin_representative_round_trips() {
        for b in 0..32u8 {
            assert_eq!(quantize_velocity(velocity_for_bin(b) as i64).unwrap(), b);
        }
    }

    #[test]
    fn single_note_token_trace() {
        let seq = NoteSequence::from_notes(vec![Note::new(60, 80, 0.0, 0.5).unwrap()]).unwrap();
        let tokens = encode_performance(&seq);
        assert_eq!(
            tokens.as_slice(),
            &[
                PerfToken::Velocity(20).id(),
                PerfToken::NoteOn(60).id(),
                PerfToken::TimeShift(50).id(),
                PerfToken::NoteOff(60).id(),
            ]
        );
    }

    #[test]
    fn empty_sequence_encodes_to_nothing() {
        assert!(encode_performance(&NoteSequence::empty()).is_empty());
    }

    #[test]
    fn long_gap_splits_into_max_shifts() {
        // Two notes separated by 2.5 s of silence: 250 steps = 100+100+50.
        let seq = NoteSequence::from_notes(vec![
            Note::new(60, 80, 0.0, 0.1).unwrap(),
            Note::new(62, 80, 2.6, 2.7).unwrap(),
        ])
        .unwrap();
        let tokens = encode_performance(&seq);
        let expected_gap = [
            PerfToken::TimeShift(100).id(),
            PerfToken::TimeShift(100).id(),
            PerfToken::TimeShift(50).id(),
        ];
        let pos = tokens
            .windows(3)
            .position(|w| w == expected_gap)
            .expect("gap encoding present");
        // The gap immediately follows the first note's NOTE_OFF.
        assert_eq!(tokens[pos - 1], PerfToken::NoteOff(60).id());
    }

    #[test]
    fn velocity_emitted_only_on_change() {
        let seq = NoteSequence::from_notes(vec![
            Note::new(60, 80, 0.0, 0.1).unwrap(),
            Note::new(62, 81, 0.2, 0.3).unwrap(),  // same bin (20)
            Note::new(64, 100, 0.4, 0.5).unwrap(), // bin 25
        ])
        .unwrap();
        let tokens = encode_performance(&seq);
        let vel_count = tokens
            .iter()
            .filter(|&&t| (VELOCITY_BASE..VELOCITY_BASE + 32).contains(&t))
            .count();
        assert_eq!(vel_count, 2);
    }

    #[test]
    fn single_note_round_trip() {
        let seq = NoteSequence::from_notes(vec![Note::new(60, 82, 0.0, 0.5).unwrap()]).unwrap();
        let (back, stats) = decode_performance(&encode_performance(&seq));
        assert_eq!(back, seq);
        assert_eq!(stats.total(), 0);
    }

    #[test]
    fn dangling_note_on_is_repaired() {
        let (seq, stats) = decode_performance(&[PerfToken::NoteOn(60).id()]);
        assert_eq!(stats.dangling_note_ons, 1);
        assert_eq!(stats.zero_length_bumped, 1);
        assert_eq!(seq.len(), 1);
        let n = seq.notes()[0];
        assert_eq!(n.pitch, 60);
        assert_eq!(n.velocity, velocity_for_bin(DEFAULT_VELOCITY_BIN));
        assert_eq!(n.onset, 0.0);
        assert_eq!(n.offset, TIME_STEP);
    }

    #[test]
    fn orphan_note_off_is_ignored() {
        let (seq, stats) = decode_performance(&[PerfToken::NoteOff(60).id()]);
        assert!(seq.is_empty());
        assert_eq!(stats.orphan_note_offs, 1);
    }

    #[test]
    fn decode_stops_at_eos() {
        let tokens = [PerfToken::Velocity(20).id(), PerfToken::NoteOn(60).id(), EOS, PerfToken::NoteOn(62).id()];
        let (seq, stats) = decode_performance(&tokens);
        assert_eq!(seq.len(), 1);
        assert_eq!(stats.dangling_note_ons, 1);
    }

    #[test]
    fn trailing_silence_survives_round_trip() {
        let mut seq = NoteSequence::from_notes(vec![Note::new(60, 82, 0.0, 0.5).unwrap()]).unwrap();
        seq = NoteSequence::new(seq.notes().to_vec(), 3.14).unwrap();
        let tokens = encode_performance(&seq);
        let (back, _) = decode_performance(&tokens);
        assert!((back.total_seconds() - 3.14).abs() < TIME_STEP / 2.0);
    }

    #[test]
    fn token_text_round_trip() {
        let tokens = vec![0usize, 388, 390, 355, 387];
        assert_eq!(tokens_from_text(&tokens_to_text(&tokens)).unwrap(), tokens);
        assert!(matches!(
            tokens_from_text("391\n"),
            Err(CodecError::TokenOutOfRange { line: 1, id: 391 })
        ));
        assert!(matches!(tokens_from_text("abc\n"), Err(CodecError::BadTokenId { line: 1, .. })));
    }

    /// Random sequence with 10 ms-aligned times and bin-representative
    /// velocities; the codec is lossless on exactly this class.
    pub(crate) fn random_grid_aligned(rng: &mut impl Rng, max_notes: usize) -> NoteSequence {
        let n = rng.gen_range(0..=max_notes);
        let mut notes = Vec::with_capacity(n);
        let mut last_step = 0i64;
        for _ in 0..n {
            let on_steps = rng.gen_range(0..600i64);
            let dur_steps = rng.gen_range(1..=400i64);
            last_step = last_step.max(on_steps + dur_steps);
            notes.push(Note {
                pitch: rng.gen_range(0..=127),
                velocity: velocity_for_bin(rng.gen_range(0..32)),
                onset: on_steps as f64 * TIME_STEP,
                offset: (on_steps + dur_steps) as f64 * TIME_STEP,
            });
        }
        // Total length stays on the grid so the round trip is bit-exact.
        let extra = if rng.gen_bool(0.3) { rng.gen_range(1..200i64) } else { 0 };
        let total = (last_step + extra) as f64 * TIME_STEP;
        let notes = NoteSequence::from_notes(notes).unwrap().notes().to_vec();
        NoteSequence::new(notes, total).unwrap()
    }

    #[test]
    fn grid_aligned_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let seq = random_grid_aligned(&mut rng, 40);
            let tokens = encode_performance(&seq);
            let (back, stats) = decode_performance(&tokens);
            assert_eq!(stats.total(), 0, "no repairs on well-formed input");
            assert_eq!(back, seq);
        }
    }

    proptest! {
        #[test]
        fn encode_emits_only_core_tokens(seq in crate::notes::tests::arb_sequence(30)) {
            for &t in encode_performance(&seq).as_slice() {
                prop_assert!(t < CORE_VOCAB);
            }
        }

        #[test]
        fn arbitrary_times_quantize_within_half_step(seq in crate::notes::tests::arb_sequence(30)) {
            // Sub-grid notes (possible after re-onset truncation) decode via
            // the repair path and are out of scope for the error bound.
            prop_assume!(seq.notes().iter().all(|n| n.duration() > 0.0105));
            let (back, _) = decode_performance(&encode_performance(&seq));
            prop_assert_eq!(back.len(), seq.len());
            // Quantization can swap the canonical order of near-simultaneous
            // notes, so pair them up by (pitch, onset) instead.
            let by_pitch = |a: &Note, b: &Note| a.pitch.cmp(&b.pitch).then(a.onset.total_cmp(&b.onset));
            let mut orig = seq.notes().to_vec();
            let mut dec = back.notes().to_vec();
            orig.sort_by(by_pitch);
            dec.sort_by(by_pitch);
            for (a, b) in orig.iter().zip(&dec) {
                prop_assert_eq!(a.pitch, b.pitch);
                prop_assert!((a.onset - b.onset).abs() < TIME_STEP / 2.0 + 1e-9);
                prop_assert!((a.offset - b.offset).abs() < TIME_STEP / 2.0 + 1e-9);
                // Velocity is quantized to 32 bins: at most half a bin away.
                prop_assert!((a.velocity as i64 - b.velocity as i64).abs() <= 2);
            }
        }
    }
}
