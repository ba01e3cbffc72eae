//! Music score parsing, phrase splitting and phoneme-level expansion.
//!
//! Scores arrive either in a small JSON format (the canonical fixture
//! format) or as a MusicXML subset, get split into rest-free phrases, and
//! are expanded into the phoneme/pitch/frame sequences the model consumes.

mod json;
mod lexicon;
mod musicxml;

pub use lexicon::Lexicon;

use crate::error::{Error, Result};
use num_rational::Ratio;

/// Beat count as an exact rational (MusicXML divisions stay exact).
pub type Beats = Ratio<i64>;

/// One score event: a sung note or a rest.
///
/// `pitch_id == 0` if and only if the event is a rest; rests carry no
/// syllable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoteEvent {
    pub syllable: Option<String>,
    pub pitch_id: u8,
    pub duration_beats: Beats,
}

impl NoteEvent {
    pub fn note(syllable: impl Into<String>, pitch_id: u8, duration_beats: Beats) -> Result<Self> {
        if pitch_id == 0 || pitch_id > 127 {
            return Err(Error::domain(format!("note pitch id {pitch_id} outside [1, 127]")));
        }
        if duration_beats <= Beats::from_integer(0) {
            return Err(Error::domain("note duration must be positive"));
        }
        Ok(NoteEvent { syllable: Some(syllable.into()), pitch_id, duration_beats })
    }

    pub fn rest(duration_beats: Beats) -> Result<Self> {
        if duration_beats <= Beats::from_integer(0) {
            return Err(Error::domain("rest duration must be positive"));
        }
        Ok(NoteEvent { syllable: None, pitch_id: 0, duration_beats })
    }

    pub fn is_rest(&self) -> bool {
        self.pitch_id == 0
    }
}

/// A parsed score: tempo, meter and the ordered note/rest list.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicScore {
    pub bpm: f64,
    pub time_signature: (u32, u32),
    pub notes: Vec<NoteEvent>,
    pub lexicon_id: String,
}

impl MusicScore {
    pub fn validate(&self) -> Result<()> {
        if !(self.bpm > 0.0) {
            return Err(Error::domain(format!("bpm {} must be positive", self.bpm)));
        }
        if self.notes.is_empty() {
            return Err(Error::domain("score has no notes"));
        }
        Ok(())
    }
}

/// Input formats accepted by [`parse_score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreFormat {
    MusicXml,
    Json,
}

/// Parses score file content in the declared format.
pub fn parse_score(bytes: &[u8], format: ScoreFormat) -> Result<MusicScore> {
    let score = match format {
        ScoreFormat::Json => json::parse(bytes)?,
        ScoreFormat::MusicXml => musicxml::parse(bytes)?,
    };
    score.validate()?;
    Ok(score)
}

/// Serializes a score to the JSON format (round-trips through `parse_score`).
pub fn serialize_score_json(score: &MusicScore) -> Result<String> {
    json::serialize(score)
}

/// Splits a score into maximal runs of consecutive non-rest notes.
///
/// Rests appear in no phrase; an all-rest score yields an empty list.
pub fn split_phrases(score: &MusicScore) -> Vec<Vec<NoteEvent>> {
    let mut phrases = Vec::new();
    let mut current: Vec<NoteEvent> = Vec::new();
    for note in &score.notes {
        if note.is_rest() {
            if !current.is_empty() {
                phrases.push(std::mem::take(&mut current));
            }
        } else {
            current.push(note.clone());
        }
    }
    if !current.is_empty() {
        phrases.push(current);
    }
    phrases
}

/// Note length in seconds: `beats * 60 / bpm`.
pub fn note_duration_seconds(duration_beats: Beats, bpm: f64) -> Result<f64> {
    if !(bpm > 0.0) {
        return Err(Error::domain(format!("bpm {bpm} must be positive")));
    }
    Ok(*duration_beats.numer() as f64 / *duration_beats.denom() as f64 * 60.0 / bpm)
}

/// Share of a note's frames given to a leading consonant.
pub const CONSONANT_FRAME_SHARE: f64 = 0.25;

/// A rest-free phrase expanded to phoneme level. All four sequences are
/// parallel: one entry per phoneme.
#[derive(Debug, Clone, PartialEq)]
pub struct Phrase {
    pub notes: Vec<NoteEvent>,
    pub phoneme_ids: Vec<u32>,
    pub pitch_ids: Vec<u8>,
    pub frames: Vec<u32>,
    pub dur_seconds: Vec<f64>,
}

impl Phrase {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    pub fn total_frames(&self) -> usize {
        self.frames.iter().map(|&f| f as usize).sum()
    }
}

/// Expands phrase notes to phoneme level.
///
/// Each syllable becomes its lexicon phoneme list; every phoneme carries
/// the note's pitch id; the note's frame count,
/// `round(seconds * frame_rate)`, is divided among the phonemes: a leading
/// consonant takes `round(0.25 * frames)` and the remainder goes to the
/// rest, each phoneme getting at least one frame.
pub fn expand_phrase(notes: &[NoteEvent], lexicon: &Lexicon, bpm: f64, frame_rate: f64) -> Result<Phrase> {
    if !(frame_rate > 0.0) {
        return Err(Error::domain(format!("frame rate {frame_rate} must be positive")));
    }
    let mut phrase = Phrase {
        notes: notes.to_vec(),
        phoneme_ids: Vec::new(),
        pitch_ids: Vec::new(),
        frames: Vec::new(),
        dur_seconds: Vec::new(),
    };
    for note in notes {
        if note.is_rest() {
            return Err(Error::contract("expand_phrase on a phrase containing a rest"));
        }
        let syllable = note.syllable.as_deref().unwrap_or("");
        let phonemes = lexicon.phoneme_ids(syllable)?;
        let seconds = note_duration_seconds(note.duration_beats, bpm)?;
        let note_frames = (seconds * frame_rate).round() as usize;
        let split = split_note_frames(note_frames, phonemes.len()).ok_or_else(|| Error::DurationUnderflow {
            syllable: syllable.to_string(),
            frames: note_frames,
            phonemes: phonemes.len(),
        })?;
        for (&ph, f) in phonemes.iter().zip(split) {
            phrase.phoneme_ids.push(ph);
            phrase.pitch_ids.push(note.pitch_id);
            phrase.frames.push(f as u32);
            phrase.dur_seconds.push(f as f64 / frame_rate);
        }
    }
    Ok(phrase)
}

/// Frame allocation within one note; `None` when the note is too short to
/// give every phoneme a frame.
fn split_note_frames(note_frames: usize, n_phonemes: usize) -> Option<Vec<usize>> {
    if n_phonemes == 0 || note_frames < n_phonemes {
        return None;
    }
    if n_phonemes == 1 {
        return Some(vec![note_frames]);
    }
    let tail = n_phonemes - 1;
    let consonant = ((note_frames as f64 * CONSONANT_FRAME_SHARE).round() as usize).clamp(1, note_frames - tail);
    let rest = note_frames - consonant;
    let base = rest / tail;
    let extra = rest % tail;
    let mut out = Vec::with_capacity(n_phonemes);
    out.push(consonant);
    for i in 0..tail {
        out.push(base + usize::from(i < extra));
    }
    Some(out)
}

/// Snaps an f64 beat value to a small exact rational (denominators the
/// notation actually uses), falling back to a float approximation.
pub fn beats_from_f64(x: f64) -> Result<Beats> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("beats {x} must be positive and finite")));
    }
    for den in 1..=96i64 {
        let num = (x * den as f64).round();
        if num >= 1.0 && (num / den as f64 - x).abs() < 1e-9 {
            return Ok(Beats::new(num as i64, den));
        }
    }
    Ratio::approximate_float(x).ok_or_else(|| Error::domain(format!("cannot express beats {x} as a rational")))
}

pub fn beats_to_f64(b: Beats) -> f64 {
    *b.numer() as f64 / *b.denom() as f64
}

#[cfg(test)]
mod tests;
