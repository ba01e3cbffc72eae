//! The canonical JSON score format.
//!
//! `{"bpm": number, "time_signature": [num, den],
//!   "notes": [{"syllable": str|null, "midi": int, "beats": number}]}`
//!
//! `midi: 0` together with a null syllable encodes a rest. An optional
//! `"lexicon"` key names the phoneme lexicon (default "default").

use super::{beats_from_f64, beats_to_f64, MusicScore, NoteEvent};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct JsonScore {
    bpm: f64,
    time_signature: [u32; 2],
    notes: Vec<JsonNote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lexicon: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct JsonNote {
    syllable: Option<String>,
    midi: u8,
    beats: f64,
}

pub fn parse(bytes: &[u8]) -> Result<MusicScore> {
    let doc: JsonScore = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        line: e.line(),
        col: e.column(),
        msg: e.to_string(),
    })?;
    let mut notes = Vec::with_capacity(doc.notes.len());
    for (i, n) in doc.notes.iter().enumerate() {
        let beats = beats_from_f64(n.beats)?;
        let note = match (&n.syllable, n.midi) {
            (None, 0) => NoteEvent::rest(beats)?,
            (Some(s), m) if m > 0 => NoteEvent::note(s.clone(), m, beats)?,
            _ => {
                return Err(Error::domain(format!(
                    "note {i}: midi 0 must pair with a null syllable and vice versa"
                )))
            }
        };
        notes.push(note);
    }
    Ok(MusicScore {
        bpm: doc.bpm,
        time_signature: (doc.time_signature[0], doc.time_signature[1]),
        notes,
        lexicon_id: doc.lexicon.unwrap_or_else(|| "default".to_string()),
    })
}

pub fn serialize(score: &MusicScore) -> Result<String> {
    let doc = JsonScore {
        bpm: score.bpm,
        time_signature: [score.time_signature.0, score.time_signature.1],
        notes: score
            .notes
            .iter()
            .map(|n| JsonNote {
                syllable: n.syllable.clone(),
                midi: n.pitch_id,
                beats: beats_to_f64(n.duration_beats),
            })
            .collect(),
        lexicon: Some(score.lexicon_id.clone()),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}
