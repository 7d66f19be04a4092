//! Melody extraction and the 100 ms melody token grid.
//!
//! Extraction frames the performance at 100 ms, scores each frame's
//! sounding pitches with an HMM whose states are the melody vocabulary, and
//! takes the Viterbi path. The chosen states are mapped back to actual
//! input notes, so the melody always consists of notes that were played.

use crate::notes::{Note, NoteSequence};

/// Melody vocabulary: 0 = NO_EVENT, 1 = NOTE_OFF, 2..=91 = onset of MIDI
/// pitches 21..=110.
pub const MELODY_VOCAB: usize = 92;
pub const NO_EVENT: usize = 0;
pub const MELODY_NOTE_OFF: usize = 1;
pub const MELODY_PITCH_MIN: u8 = 21;
pub const MELODY_PITCH_MAX: u8 = 110;

/// Seconds per melody frame.
pub const FRAME_SECONDS: f64 = 0.1;

const DEFAULT_MELODY_VELOCITY: u8 = 82;

pub fn pitch_token(pitch: u8) -> usize {
    debug_assert!((MELODY_PITCH_MIN..=MELODY_PITCH_MAX).contains(&pitch));
    2 + (pitch - MELODY_PITCH_MIN) as usize
}

pub fn token_pitch(token: usize) -> Option<u8> {
    if (2..MELODY_VOCAB).contains(&token) {
        Some(MELODY_PITCH_MIN + (token - 2) as u8)
    } else {
        None
    }
}

/// One token per 100 ms frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MelodyTokenSeq {
    pub tokens: Vec<usize>,
}

impl MelodyTokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// ceil(total / 0.1) with a guard against float fuzz at grid boundaries.
fn frame_count(total_seconds: f64) -> usize {
    (total_seconds * 10.0 - 1e-9).ceil().max(0.0) as usize
}

/// Nearest frame boundary, half up.
fn frame_of(seconds: f64) -> i64 {
    (seconds * 10.0).round() as i64
}

/// Frames `[first, last)` a note overlaps, fuzz-guarded at boundaries.
fn note_span(note: &Note) -> (i64, i64) {
    let first = (note.onset * 10.0 + 1e-9).floor() as i64;
    let last = (note.offset * 10.0 - 1e-9).ceil() as i64;
    (first, last.max(first + 1))
}

/// Encodes a monophonic sequence on the frame grid. The frame at a note's
/// onset carries its pitch token, the frame after its offset carries
/// NOTE_OFF unless a new onset lands there, and every other frame is
/// NO_EVENT. Out-of-range pitches clamp to the vocabulary bounds; the clamp
/// count is returned alongside the tokens.
pub fn encode_melody(mono: &NoteSequence) -> (MelodyTokenSeq, usize) {
    let n_frames = frame_count(mono.total_seconds());
    let mut tokens = vec![NO_EVENT; n_frames];
    let mut clamped = 0usize;
    for note in mono.notes() {
        let off = frame_of(note.offset);
        if off >= 0 && (off as usize) < n_frames {
            tokens[off as usize] = MELODY_NOTE_OFF;
        }
    }
    for note in mono.notes() {
        let pitch = if note.pitch < MELODY_PITCH_MIN {
            clamped += 1;
            MELODY_PITCH_MIN
        } else if note.pitch > MELODY_PITCH_MAX {
            clamped += 1;
            MELODY_PITCH_MAX
        } else {
            note.pitch
        };
        if n_frames > 0 {
            let on = frame_of(note.onset).clamp(0, n_frames as i64 - 1);
            tokens[on as usize] = pitch_token(pitch);
        }
    }
    (MelodyTokenSeq { tokens }, clamped)
}

/// Inverse of [`encode_melody`] on the grid: pitch tokens open notes,
/// NOTE_OFF closes them, NO_EVENT sustains. Velocities take a fixed
/// default; a note still open at the end closes there. Orphan NOTE_OFFs
/// are ignored.
pub fn decode_melody(tokens: &MelodyTokenSeq) -> NoteSequence {
    let mut notes: Vec<Note> = Vec::new();
    let mut open: Option<(i64, u8)> = None;
    let close = |open: &mut Option<(i64, u8)>, notes: &mut Vec<Note>, frame: i64| {
        if let Some((on, pitch)) = open.take() {
            if frame > on {
                notes.push(Note {
                    pitch,
                    velocity: DEFAULT_MELODY_VELOCITY,
                    onset: on as f64 * FRAME_SECONDS,
                    offset: frame as f64 * FRAME_SECONDS,
                });
            }
        }
    };
    for (i, &tok) in tokens.tokens.iter().enumerate() {
        let frame = i as i64;
        if let Some(pitch) = token_pitch(tok) {
            close(&mut open, &mut notes, frame);
            open = Some((frame, pitch));
        } else if tok == MELODY_NOTE_OFF {
            close(&mut open, &mut notes, frame);
        }
    }
    close(&mut open, &mut notes, tokens.len() as i64);
    let total = tokens.len() as f64 * FRAME_SECONDS;
    let last = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
    NoteSequence::new(notes, total.max(last)).expect("grid notes are valid")
}

/// Emission likelihood floor for states not supported by the frame.
pub const EMISSION_FLOOR: f64 = 1e-3;

/// Self-transition weight (holding a pitch).
const W_SELF: f64 = 8.0;
/// Geometric decay per semitone of jump size.
const JUMP_DECAY: f64 = 0.85;
/// Skyline prior: log of the relative weight of the highest melody pitch
/// over the lowest.
const SKYLINE_STRENGTH: f64 = 2.0;
/// Weight for entering or leaving the two silence states.
const W_REST: f64 = 0.5;
/// Weight for staying silent.
const W_REST_SELF: f64 = 4.0;

fn skyline_prior(state: usize) -> f64 {
    match token_pitch(state) {
        Some(p) => {
            let span = (MELODY_PITCH_MAX - MELODY_PITCH_MIN) as f64;
            (SKYLINE_STRENGTH * (p - MELODY_PITCH_MIN) as f64 / span).exp()
        }
        None => 1.0,
    }
}

/// HMM over the 92 melody states: a row-stochastic transition matrix whose
/// weights hold pitches, decay geometrically with jump size and lean toward
/// the skyline, plus the emission rule of [`MelodyHmm::log_emission`].
#[derive(Debug, Clone)]
pub struct MelodyHmm {
    /// Row-stochastic 92x92 matrix; `transition[s][t]` is P(t | s).
    pub transition: Vec<Vec<f64>>,
    /// Initial state distribution.
    pub initial: Vec<f64>,
    log_transition: Vec<Vec<f64>>,
    log_initial: Vec<f64>,
}

impl Default for MelodyHmm {
    fn default() -> Self {
        let mut transition = vec![vec![0.0; MELODY_VOCAB]; MELODY_VOCAB];
        for (s, row) in transition.iter_mut().enumerate() {
            for (t, w) in row.iter_mut().enumerate() {
                let base = match (token_pitch(s), token_pitch(t)) {
                    (Some(p), Some(q)) => {
                        if p == q {
                            W_SELF
                        } else {
                            JUMP_DECAY.powi((p as i32 - q as i32).abs())
                        }
                    }
                    (None, None) => W_REST_SELF,
                    _ => W_REST,
                };
                *w = base * skyline_prior(t);
            }
            let sum: f64 = row.iter().sum();
            for w in row.iter_mut() {
                *w /= sum;
            }
        }
        let mut initial: Vec<f64> = (0..MELODY_VOCAB).map(skyline_prior).collect();
        let sum: f64 = initial.iter().sum();
        for w in initial.iter_mut() {
            *w /= sum;
        }
        let log_transition = transition
            .iter()
            .map(|row| row.iter().map(|w: &f64| w.ln()).collect())
            .collect();
        let log_initial = initial.iter().map(|w| w.ln()).collect();
        MelodyHmm { transition, initial, log_transition, log_initial }
    }
}

impl MelodyHmm {
    /// Log emission likelihood of state `s` in a frame whose sounding
    /// pitches are `frame`. Supported states (the pitch sounds, or a silence
    /// state in an empty frame) emit near 1, discounted by how far the pitch
    /// sits below the frame's ceiling; unsupported states emit the floor.
    ///
    /// The skyline preference has to act here: scaling the transition rows
    /// cancels under row normalization (the prior telescopes along any
    /// path), which would let a sustained inner voice outscore the top line.
    pub fn log_emission(&self, state: usize, frame: &[u8]) -> f64 {
        match token_pitch(state) {
            Some(p) if frame.contains(&p) => {
                let span = (MELODY_PITCH_MAX - MELODY_PITCH_MIN) as f64;
                SKYLINE_STRENGTH * (p as f64 - MELODY_PITCH_MAX as f64) / span
            }
            None if frame.is_empty() => 0.0,
            _ => EMISSION_FLOOR.ln(),
        }
    }
}

/// Log-space Viterbi over an explicit per-frame candidate trellis. Returns
/// the maximum-probability state path; ties break toward the earlier
/// candidate. Empty trellis returns an empty path.
pub fn viterbi_path(
    candidates: &[Vec<usize>],
    log_initial: &[f64],
    log_transition: &[Vec<f64>],
    log_emission: impl Fn(usize, usize) -> f64,
) -> Vec<usize> {
    if candidates.is_empty() {
        return Vec::new();
    }
    debug_assert!(candidates.iter().all(|c| !c.is_empty()));
    let mut score: Vec<f64> = candidates[0]
        .iter()
        .map(|&s| log_initial[s] + log_emission(0, s))
        .collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(candidates.len());
    for f in 1..candidates.len() {
        let prev = &candidates[f - 1];
        let mut next = Vec::with_capacity(candidates[f].len());
        let mut ptr = Vec::with_capacity(candidates[f].len());
        for &t in &candidates[f] {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for (i, &s) in prev.iter().enumerate() {
                let cand = score[i] + log_transition[s][t];
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            next.push(best + log_emission(f, t));
            ptr.push(best_i);
        }
        score = next;
        back.push(ptr);
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, &s) in score.iter().enumerate() {
        if s > best {
            best = s;
            idx = i;
        }
    }
    let mut path = vec![0; candidates.len()];
    path[candidates.len() - 1] = candidates[candidates.len() - 1][idx];
    for f in (1..candidates.len()).rev() {
        idx = back[f - 1][idx];
        path[f - 1] = candidates[f - 1][idx];
    }
    path
}

/// Pitches sounding in each 100 ms frame, ascending, deduplicated.
pub fn frame_pitches(seq: &NoteSequence) -> Vec<Vec<u8>> {
    let n_frames = frame_count(seq.total_seconds());
    let mut frames = vec![Vec::new(); n_frames];
    for note in seq.notes() {
        let (first, last) = note_span(note);
        for f in first.max(0)..last.min(n_frames as i64) {
            frames[f as usize].push(note.pitch);
        }
    }
    for frame in frames.iter_mut() {
        frame.sort_unstable();
        frame.dedup();
    }
    frames
}

/// Extracts a monophonic melody. The Viterbi state path selects, per frame,
/// which sounding input note carries the melody; the selected notes are
/// returned with their original times and velocities, truncated where they
/// would overlap. Deterministic for a fixed HMM.
pub fn extract_melody(seq: &NoteSequence, hmm: &MelodyHmm) -> NoteSequence {
    if seq.is_empty() {
        return NoteSequence::empty();
    }
    let frames = frame_pitches(seq);
    let spans: Vec<(i64, i64)> = seq.notes().iter().map(note_span).collect();
    let all_states: Vec<usize> = (0..MELODY_VOCAB).collect();
    let candidates: Vec<Vec<usize>> = frames.iter().map(|_| all_states.clone()).collect();
    let path = viterbi_path(
        &candidates,
        &hmm.log_initial,
        &hmm.log_transition,
        |f, s| hmm.log_emission(s, &frames[f]),
    );

    // Map each frame's chosen pitch to the most recently struck input note
    // that sounds there; consecutive frames on one note form one melody note.
    let mut selected: Vec<usize> = Vec::new();
    let mut last: Option<usize> = None;
    for (f, &state) in path.iter().enumerate() {
        let Some(pitch) = token_pitch(state) else {
            last = None;
            continue;
        };
        let frame = f as i64;
        let covering = seq
            .notes()
            .iter()
            .enumerate()
            .filter(|&(i, n)| n.pitch == pitch && spans[i].0 <= frame && frame < spans[i].1)
            .max_by(|(_, a), (_, b)| a.onset.total_cmp(&b.onset));
        let Some((i, _)) = covering else {
            // The emission floor let a non-sounding pitch through; treat it
            // as a rest so the melody only contains notes that were played.
            last = None;
            continue;
        };
        if last != Some(i) {
            selected.push(i);
            last = Some(i);
        }
    }

    let mut notes: Vec<Note> = selected.iter().map(|&i| seq.notes()[i]).collect();
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.pitch.cmp(&b.pitch)));
    notes.dedup_by(|a, b| a.onset == b.onset && a.pitch == b.pitch);
    for i in 0..notes.len().saturating_sub(1) {
        let next_on = notes[i + 1].onset;
        if notes[i].offset > next_on {
            notes[i].offset = next_on;
        }
    }
    notes.retain(|n| n.offset > n.onset);
    NoteSequence::new(notes, seq.total_seconds()).expect("selection preserves validity")
}
