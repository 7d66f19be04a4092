//! Note-list data model and its text serialization.
//!
//! A [`NoteSequence`] is the canonical musical object: a list of timed,
//! pitched, velocity-tagged notes in seconds, kept sorted by `(onset,
//! pitch)`. Times stay as real seconds here; quantization only happens in
//! the token codecs.

use std::fmt::Write as _;

use thiserror::Error;

/// A single piano note. Times are seconds; `offset > onset` always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub pitch: u8,
    pub velocity: u8,
    pub onset: f64,
    pub offset: f64,
}

impl Note {
    pub fn new(pitch: u8, velocity: u8, onset: f64, offset: f64) -> Result<Self, NotesError> {
        let note = Note { pitch, velocity, onset, offset };
        note.validate(None)?;
        Ok(note)
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }

    fn validate(&self, line: Option<usize>) -> Result<(), NotesError> {
        let line = line.unwrap_or(0);
        if self.pitch > 127 {
            return Err(NotesError::OutOfRange { line, field: "pitch", value: self.pitch.to_string() });
        }
        if self.velocity < 1 || self.velocity > 127 {
            return Err(NotesError::OutOfRange { line, field: "velocity", value: self.velocity.to_string() });
        }
        if !self.onset.is_finite() || self.onset < 0.0 {
            return Err(NotesError::OutOfRange { line, field: "onset", value: self.onset.to_string() });
        }
        if !self.offset.is_finite() || self.offset <= self.onset {
            return Err(NotesError::NonPositiveDuration { line, onset: self.onset, offset: self.offset });
        }
        Ok(())
    }
}

/// An ordered, validated list of notes plus the total length in seconds.
///
/// Construction normalizes the input: notes are sorted by `(onset, pitch)`
/// and a re-onset of a pitch that is still sounding truncates the earlier
/// note at the new onset (the event vocabulary cannot represent overlapping
/// same-pitch notes).
#[derive(Debug, Clone, PartialEq)]
pub struct NoteSequence {
    notes: Vec<Note>,
    total_seconds: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum NotesError {
    #[error("line {line}: malformed note line: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: {field} out of range: {value}")]
    OutOfRange { line: usize, field: &'static str, value: String },
    #[error("line {line}: offset {offset} must be greater than onset {onset}")]
    NonPositiveDuration { line: usize, onset: f64, offset: f64 },
    #[error("line {line}: expected `total_seconds <value>` header")]
    MissingHeader { line: usize },
    #[error("total_seconds {total} is less than the last note offset {last_offset}")]
    TotalTooShort { total: f64, last_offset: f64 },
}

impl NoteSequence {
    /// Empty sequence of zero length.
    pub fn empty() -> Self {
        NoteSequence { notes: Vec::new(), total_seconds: 0.0 }
    }

    /// Builds a sequence with an explicit total length, which must cover the
    /// last offset.
    pub fn new(notes: Vec<Note>, total_seconds: f64) -> Result<Self, NotesError> {
        for n in &notes {
            n.validate(None)?;
        }
        let notes = normalize(notes);
        let last_offset = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
        if !total_seconds.is_finite() || total_seconds < last_offset {
            return Err(NotesError::TotalTooShort { total: total_seconds, last_offset });
        }
        Ok(NoteSequence { notes, total_seconds })
    }

    /// Builds a sequence whose total length is the last note offset.
    pub fn from_notes(notes: Vec<Note>) -> Result<Self, NotesError> {
        for n in &notes {
            n.validate(None)?;
        }
        let notes = normalize(notes);
        let total = notes.iter().map(|n| n.offset).fold(0.0, f64::max);
        Ok(NoteSequence { notes, total_seconds: total })
    }

    pub fn notes(&self) -> &[Note] {
        &self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        self.total_seconds
    }
}

/// Sorts by `(onset, pitch)` and applies the re-onset rule: a new onset of a
/// sounding pitch ends the earlier note at that onset; notes truncated to
/// zero length are dropped.
fn normalize(mut notes: Vec<Note>) -> Vec<Note> {
    notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.pitch.cmp(&b.pitch))
            .then(a.offset.total_cmp(&b.offset))
    });
    // Per pitch, truncate at the next same-pitch onset.
    let snapshot = notes.clone();
    for (i, note) in notes.iter_mut().enumerate() {
        for later in snapshot[i + 1..].iter() {
            if later.onset >= note.offset {
                break;
            }
            if later.pitch == note.pitch {
                note.offset = later.onset;
                break;
            }
        }
    }
    notes.retain(|n| n.offset > n.onset);
    notes
}

/// Parses the one-note-per-line text format.
///
/// `#`-prefixed lines are comments; the first non-comment line must be
/// `total_seconds <value>`; every following line is
/// `pitch velocity onset_seconds offset_seconds`.
pub fn parse_notes(text: &str) -> Result<NoteSequence, NotesError> {
    let mut total: Option<f64> = None;
    let mut notes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if total.is_none() {
            if fields.len() != 2 || fields[0] != "total_seconds" {
                return Err(NotesError::MissingHeader { line: line_no });
            }
            let value: f64 = fields[1]
                .parse()
                .map_err(|_| NotesError::Malformed { line: line_no, reason: format!("bad total_seconds value `{}`", fields[1]) })?;
            if !value.is_finite() || value < 0.0 {
                return Err(NotesError::OutOfRange { line: line_no, field: "total_seconds", value: fields[1].to_string() });
            }
            total = Some(value);
            continue;
        }
        if fields.len() != 4 {
            return Err(NotesError::Malformed {
                line: line_no,
                reason: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let pitch: i64 = fields[0]
            .parse()
            .map_err(|_| NotesError::Malformed { line: line_no, reason: format!("bad pitch `{}`", fields[0]) })?;
        let velocity: i64 = fields[1]
            .parse()
            .map_err(|_| NotesError::Malformed { line: line_no, reason: format!("bad velocity `{}`", fields[1]) })?;
        let onset: f64 = fields[2]
            .parse()
            .map_err(|_| NotesError::Malformed { line: line_no, reason: format!("bad onset `{}`", fields[2]) })?;
        let offset: f64 = fields[3]
            .parse()
            .map_err(|_| NotesError::Malformed { line: line_no, reason: format!("bad offset `{}`", fields[3]) })?;
        if !(0..=127).contains(&pitch) {
            return Err(NotesError::OutOfRange { line: line_no, field: "pitch", value: fields[0].to_string() });
        }
        if !(1..=127).contains(&velocity) {
            return Err(NotesError::OutOfRange { line: line_no, field: "velocity", value: fields[1].to_string() });
        }
        let note = Note { pitch: pitch as u8, velocity: velocity as u8, onset, offset };
        note.validate(Some(line_no))?;
        notes.push(note);
    }
    match total {
        None if notes.is_empty() => Ok(NoteSequence::empty()),
        None => Err(NotesError::MissingHeader { line: 1 }),
        Some(total) => NoteSequence::new(notes, total),
    }
}

/// Serializes in canonical order. `parse_notes(write_notes(s))` reproduces
/// `s` field for field; floats print in shortest round-trip form.
pub fn write_notes(seq: &NoteSequence) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "total_seconds {}", seq.total_seconds);
    for n in &seq.notes {
        let _ = writeln!(out, "{} {} {} {}", n.pitch, n.velocity, n.onset, n.offset);
    }
    out
}
