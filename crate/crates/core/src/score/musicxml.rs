//! MusicXML subset importer.
//!
//! Supported: a single `<part>` of `<measure>` elements holding `<note>`s
//! with `pitch(step, alter, octave)`, `duration` (divisions-based), `rest`
//! and `lyric/text`, plus `attributes/divisions`, `attributes/time` and
//! `sound@tempo`. Elements that would change timing or note content
//! (`chord`, `grace`, `tie`, `cue`, `backup`, `forward`) raise an
//! unsupported-feature error; presentational elements are ignored.

use super::{Beats, MusicScore, NoteEvent};
use crate::error::{Error, Result};
use roxmltree::{Document, Node};

pub fn parse(bytes: &[u8]) -> Result<MusicScore> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 1,
        col: e.valid_up_to() + 1,
        msg: "score file is not valid UTF-8".to_string(),
    })?;
    let doc = Document::parse(text).map_err(|e| {
        let pos = e.pos();
        Error::Parse { line: pos.row as usize, col: pos.col as usize, msg: e.to_string() }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "score-partwise" {
        return Err(Error::Unsupported { element: root.tag_name().name().to_string() });
    }
    let parts: Vec<Node> = root.children().filter(|n| n.has_tag_name("part")).collect();
    if parts.is_empty() {
        return Err(parse_err(&doc, root, "score has no <part>"));
    }
    if parts.len() > 1 {
        return Err(Error::Unsupported { element: "part (multiple parts)".to_string() });
    }

    let mut divisions: i64 = 1;
    let mut bpm: Option<f64> = None;
    let mut time_signature = (4u32, 4u32);
    let mut notes = Vec::new();

    for measure in parts[0].children().filter(|n| n.has_tag_name("measure")) {
        for item in measure.children().filter(Node::is_element) {
            match item.tag_name().name() {
                "attributes" => {
                    if let Some(div) = child_text(item, "divisions") {
                        divisions = parse_int(&doc, item, &div)?;
                        if divisions <= 0 {
                            return Err(parse_err(&doc, item, "divisions must be positive"));
                        }
                    }
                    if let Some(time) = item.children().find(|n| n.has_tag_name("time")) {
                        let beats = child_text(time, "beats")
                            .ok_or_else(|| parse_err(&doc, time, "<time> missing <beats>"))?;
                        let beat_type = child_text(time, "beat-type")
                            .ok_or_else(|| parse_err(&doc, time, "<time> missing <beat-type>"))?;
                        time_signature =
                            (parse_int(&doc, time, &beats)? as u32, parse_int(&doc, time, &beat_type)? as u32);
                    }
                }
                "direction" | "sound" => {
                    let sound = if item.has_tag_name("sound") {
                        Some(item)
                    } else {
                        item.descendants().find(|n| n.has_tag_name("sound"))
                    };
                    if let Some(tempo) = sound.and_then(|s| s.attribute("tempo")) {
                        let t: f64 = tempo
                            .parse()
                            .map_err(|_| parse_err(&doc, item, "tempo is not a number"))?;
                        if bpm.is_none() {
                            bpm = Some(t);
                        }
                    }
                }
                "note" => notes.push(parse_note(&doc, item, divisions)?),
                "backup" | "forward" | "harmony" => {
                    return Err(Error::Unsupported { element: item.tag_name().name().to_string() })
                }
                _ => {} // barline, print and friends: presentational
            }
        }
    }

    Ok(MusicScore {
        bpm: bpm.unwrap_or(120.0),
        time_signature,
        notes,
        lexicon_id: "default".to_string(),
    })
}

fn parse_note(doc: &Document, note: Node, divisions: i64) -> Result<NoteEvent> {
    for bad in ["chord", "grace", "cue", "tie"] {
        if note.children().any(|n| n.has_tag_name(bad)) {
            return Err(Error::Unsupported { element: bad.to_string() });
        }
    }
    let duration = child_text(note, "duration")
        .ok_or_else(|| parse_err(doc, note, "<note> missing <duration>"))?;
    let duration = parse_int(doc, note, &duration)?;
    if duration <= 0 {
        return Err(parse_err(doc, note, "note duration must be positive"));
    }
    let beats = Beats::new(duration, divisions);

    if note.children().any(|n| n.has_tag_name("rest")) {
        return NoteEvent::rest(beats);
    }

    let pitch = note
        .children()
        .find(|n| n.has_tag_name("pitch"))
        .ok_or_else(|| parse_err(doc, note, "<note> has neither <pitch> nor <rest>"))?;
    let step = child_text(pitch, "step").ok_or_else(|| parse_err(doc, pitch, "<pitch> missing <step>"))?;
    let octave = child_text(pitch, "octave").ok_or_else(|| parse_err(doc, pitch, "<pitch> missing <octave>"))?;
    let alter = match child_text(pitch, "alter") {
        Some(a) => parse_int(doc, pitch, &a)?,
        None => 0,
    };
    let semitone = match step.trim() {
        "C" => 0,
        "D" => 2,
        "E" => 4,
        "F" => 5,
        "G" => 7,
        "A" => 9,
        "B" => 11,
        other => return Err(parse_err(doc, pitch, &format!("unknown step {other:?}"))),
    };
    let octave = parse_int(doc, pitch, &octave)?;
    let midi = 12 * (octave + 1) + semitone + alter;
    if !(1..=127).contains(&midi) {
        return Err(parse_err(doc, pitch, &format!("pitch maps to MIDI {midi}, outside [1, 127]")));
    }

    let lyric = note
        .children()
        .find(|n| n.has_tag_name("lyric"))
        .and_then(|l| child_text(l, "text"))
        .ok_or_else(|| parse_err(doc, note, "sung <note> missing <lyric><text>"))?;

    NoteEvent::note(lyric.trim(), midi as u8, beats)
}

fn child_text(node: Node, name: &str) -> Option<String> {
    node.children().find(|n| n.has_tag_name(name)).and_then(|n| n.text()).map(str::to_string)
}

fn parse_int(doc: &Document, ctx: Node, text: &str) -> Result<i64> {
    text.trim().parse().map_err(|_| parse_err(doc, ctx, &format!("expected an integer, got {text:?}")))
}

fn parse_err(doc: &Document, node: Node, msg: &str) -> Error {
    let pos = doc.text_pos_at(node.range().start);
    Error::Parse { line: pos.row as usize, col: pos.col as usize, msg: msg.to_string() }
}
