use super::*;
use crate::error::Error;
use proptest::prelude::*;

fn beats(n: i64, d: i64) -> Beats {
    Beats::new(n, d)
}

fn note(syl: &str, midi: u8, b: Beats) -> NoteEvent {
    NoteEvent::note(syl, midi, b).unwrap()
}

fn rest(b: Beats) -> NoteEvent {
    NoteEvent::rest(b).unwrap()
}

#[test]
fn json_single_note() {
    let src = br#"{"bpm": 120, "time_signature": [4, 4],
                   "notes": [{"syllable": "a", "midi": 69, "beats": 1}]}"#;
    let score = parse_score(src, ScoreFormat::Json).unwrap();
    assert_eq!(score.bpm, 120.0);
    assert_eq!(score.notes.len(), 1);
    assert_eq!(score.notes[0].pitch_id, 69);
    assert_eq!(score.notes[0].syllable.as_deref(), Some("a"));
    assert_eq!(score.notes[0].duration_beats, beats(1, 1));
}

#[test]
fn json_midi_zero_is_rest() {
    let src = br#"{"bpm": 100, "time_signature": [4, 4],
                   "notes": [{"syllable": null, "midi": 0, "beats": 0.5}]}"#;
    let score = parse_score(src, ScoreFormat::Json).unwrap();
    assert!(score.notes[0].is_rest());
}

#[test]
fn json_malformed_reports_line_and_column() {
    let src = b"{\n  \"bpm\": 120,\n  \"notes\": }\n}";
    match parse_score(src, ScoreFormat::Json) {
        Err(Error::Parse { line, col, .. }) => {
            assert_eq!(line, 3);
            assert!(col >= 12, "col {col}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn json_rejects_mismatched_rest_encoding() {
    let src = br#"{"bpm": 100, "time_signature": [4, 4],
                   "notes": [{"syllable": "a", "midi": 0, "beats": 1}]}"#;
    assert!(parse_score(src, ScoreFormat::Json).is_err());
}

const XML_HEADER: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;

fn xml_score(measure_body: &str) -> Vec<u8> {
    format!(
        "{XML_HEADER}
<score-partwise version=\"3.1\">
  <part id=\"P1\">
    <measure number=\"1\">
      <attributes>
        <divisions>2</divisions>
        <time><beats>4</beats><beat-type>4</beat-type></time>
      </attributes>
      <direction><sound tempo=\"90\"/></direction>
      {measure_body}
    </measure>
  </part>
</score-partwise>"
    )
    .into_bytes()
}

#[test]
fn musicxml_e3_maps_to_midi_52() {
    let xml = xml_score(
        "<note><pitch><step>E</step><octave>3</octave></pitch>\
         <duration>2</duration><lyric><text>la</text></lyric></note>",
    );
    let score = parse_score(&xml, ScoreFormat::MusicXml).unwrap();
    assert_eq!(score.bpm, 90.0);
    assert_eq!(score.time_signature, (4, 4));
    assert_eq!(score.notes[0].pitch_id, 52);
    assert_eq!(score.notes[0].duration_beats, beats(1, 1));
}

#[test]
fn musicxml_c6_maps_to_midi_84() {
    let xml = xml_score(
        "<note><pitch><step>C</step><octave>6</octave></pitch>\
         <duration>4</duration><lyric><text>ba</text></lyric></note>",
    );
    let score = parse_score(&xml, ScoreFormat::MusicXml).unwrap();
    assert_eq!(score.notes[0].pitch_id, 84);
    assert_eq!(score.notes[0].duration_beats, beats(2, 1));
}

#[test]
fn musicxml_alter_shifts_semitone() {
    let xml = xml_score(
        "<note><pitch><step>C</step><alter>1</alter><octave>4</octave></pitch>\
         <duration>2</duration><lyric><text>ba</text></lyric></note>",
    );
    let score = parse_score(&xml, ScoreFormat::MusicXml).unwrap();
    assert_eq!(score.notes[0].pitch_id, 61);
}

#[test]
fn musicxml_rest_and_phrase_splitting() {
    let xml = xml_score(
        "<note><pitch><step>A</step><octave>4</octave></pitch><duration>2</duration>\
         <lyric><text>ma</text></lyric></note>\
         <note><rest/><duration>2</duration></note>\
         <note><pitch><step>B</step><octave>4</octave></pitch><duration>2</duration>\
         <lyric><text>mi</text></lyric></note>",
    );
    let score = parse_score(&xml, ScoreFormat::MusicXml).unwrap();
    assert_eq!(score.notes.len(), 3);
    assert!(score.notes[1].is_rest());
    assert_eq!(split_phrases(&score).len(), 2);
}

#[test]
fn musicxml_chord_is_unsupported() {
    let xml = xml_score(
        "<note><pitch><step>A</step><octave>4</octave></pitch><duration>2</duration>\
         <lyric><text>ma</text></lyric></note>\
         <note><chord/><pitch><step>C</step><octave>5</octave></pitch><duration>2</duration>\
         <lyric><text>ma</text></lyric></note>",
    );
    match parse_score(&xml, ScoreFormat::MusicXml) {
        Err(Error::Unsupported { element }) => assert_eq!(element, "chord"),
        other => panic!("expected unsupported-feature error, got {other:?}"),
    }
}

#[test]
fn musicxml_malformed_reports_position() {
    let xml = b"<score-partwise><part><measure><note></measure></part></score-partwise>";
    match parse_score(xml, ScoreFormat::MusicXml) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn split_examples() {
    let mk = |notes: Vec<NoteEvent>| MusicScore {
        bpm: 120.0,
        time_signature: (4, 4),
        notes,
        lexicon_id: "default".into(),
    };
    let n1 = note("ba", 60, beats(1, 1));
    let n2 = note("da", 62, beats(1, 1));
    let n3 = note("ga", 64, beats(1, 1));
    let r = rest(beats(1, 1));

    let s = mk(vec![n1.clone(), r.clone(), n2.clone(), n3.clone()]);
    let phrases = split_phrases(&s);
    assert_eq!(phrases.len(), 2);
    assert_eq!(phrases[0], vec![n1.clone()]);
    assert_eq!(phrases[1], vec![n2.clone(), n3.clone()]);

    assert_eq!(split_phrases(&mk(vec![n1.clone(), n2.clone()])).len(), 1);
    assert!(split_phrases(&mk(vec![r.clone(), r.clone()])).is_empty());
}

#[test]
fn duration_seconds_examples() {
    assert_eq!(note_duration_seconds(beats(1, 1), 120.0).unwrap(), 0.5);
    assert_eq!(note_duration_seconds(beats(2, 1), 60.0).unwrap(), 2.0);
    assert!((note_duration_seconds(beats(1, 2), 90.0).unwrap() - 0.33333).abs() < 1e-5);
    assert!(note_duration_seconds(beats(1, 1), 0.0).is_err());
    assert!(note_duration_seconds(beats(1, 1), -3.0).is_err());
}

#[test]
fn expand_consonant_share() {
    // "ba" at 0.5 s and 80 fps: 40 frames, consonant share 0.25 -> [10, 30].
    let lex = Lexicon::parse("ba\tb a\n").unwrap();
    let notes = vec![note("ba", 69, beats(1, 1))];
    let phrase = expand_phrase(&notes, &lex, 120.0, 80.0).unwrap();
    assert_eq!(phrase.phoneme_ids, vec![1, 2]);
    assert_eq!(phrase.pitch_ids, vec![69, 69]);
    assert_eq!(phrase.frames, vec![10, 30]);
    assert_eq!(phrase.total_frames(), 40);
}

#[test]
fn expand_single_phoneme_takes_all_frames() {
    let lex = Lexicon::parse("a\ta\n").unwrap();
    let notes = vec![note("a", 60, beats(1, 5))]; // 0.1 s at 120 bpm
    let phrase = expand_phrase(&notes, &lex, 120.0, 80.0).unwrap();
    assert_eq!(phrase.frames, vec![8]);
}

#[test]
fn expand_conserves_frames_across_notes() {
    let lex = Lexicon::default_lexicon();
    let notes = vec![note("ba", 60, beats(1, 2)), note("mi", 64, beats(3, 4))];
    let bpm = 97.0;
    let phrase = expand_phrase(&notes, &lex, bpm, 80.0).unwrap();
    let expected: usize = notes
        .iter()
        .map(|n| (note_duration_seconds(n.duration_beats, bpm).unwrap() * 80.0).round() as usize)
        .sum();
    assert_eq!(phrase.total_frames(), expected);
    assert!(phrase.frames.iter().all(|&f| f >= 1));
}

#[test]
fn expand_unknown_syllable_is_miss() {
    let lex = Lexicon::parse("ba\tb a\n").unwrap();
    let notes = vec![note("qq", 60, beats(1, 1))];
    assert!(matches!(expand_phrase(&notes, &lex, 120.0, 80.0), Err(Error::LexiconMiss { .. })));
}

#[test]
fn expand_note_too_short_underflows() {
    let lex = Lexicon::parse("ba\tb a\n").unwrap();
    // 1/64 beat at 120 bpm = 7.8 ms -> 1 frame for 2 phonemes.
    let notes = vec![note("ba", 60, beats(1, 64))];
    assert!(matches!(
        expand_phrase(&notes, &lex, 120.0, 80.0),
        Err(Error::DurationUnderflow { .. })
    ));
}

fn arbitrary_note() -> impl Strategy<Value = NoteEvent> {
    (prop_oneof![Just(None), any::<u8>().prop_map(|p| Some(52 + p % 33))], 1i64..=8, 1i64..=4).prop_map(
        |(pitch, num, den)| match pitch {
            None => rest(beats(num, den)),
            Some(p) => note("ba", p, beats(num, den)),
        },
    )
}

proptest! {
    #[test]
    fn split_is_a_partition_of_non_rest_notes(notes in prop::collection::vec(arbitrary_note(), 1..24)) {
        let score = MusicScore { bpm: 120.0, time_signature: (4, 4), notes, lexicon_id: "default".into() };
        let phrases = split_phrases(&score);
        let flattened: Vec<&NoteEvent> = phrases.iter().flatten().collect();
        let originals: Vec<&NoteEvent> = score.notes.iter().filter(|n| !n.is_rest()).collect();
        prop_assert_eq!(flattened.len(), originals.len());
        for (a, b) in flattened.iter().zip(&originals) {
            prop_assert_eq!(*a, *b);
        }
        for phrase in &phrases {
            prop_assert!(!phrase.is_empty());
            prop_assert!(phrase.iter().all(|n| !n.is_rest()));
        }
    }

    #[test]
    fn json_round_trip(notes in prop::collection::vec(arbitrary_note(), 1..16), bpm in 40.0f64..240.0) {
        let score = MusicScore { bpm, time_signature: (3, 4), notes, lexicon_id: "default".into() };
        let text = serialize_score_json(&score).unwrap();
        let again = parse_score(text.as_bytes(), ScoreFormat::Json).unwrap();
        prop_assert_eq!(score, again);
    }

    #[test]
    fn expansion_conserves_frames_and_pitch_range(
        pitches in prop::collection::vec(52u8..=84, 1..8),
        bpm in 60.0f64..160.0,
    ) {
        let lex = Lexicon::default_lexicon();
        let notes: Vec<NoteEvent> =
            pitches.iter().map(|&p| note("ba", p, beats(1, 1))).collect();
        let phrase = expand_phrase(&notes, &lex, bpm, 80.0).unwrap();
        let expected: usize = notes
            .iter()
            .map(|n| (note_duration_seconds(n.duration_beats, bpm).unwrap() * 80.0).round() as usize)
            .sum();
        prop_assert_eq!(phrase.total_frames(), expected);
        prop_assert!(phrase.pitch_ids.iter().all(|&p| (52..=84).contains(&p)));
        prop_assert_eq!(phrase.phoneme_ids.len(), phrase.pitch_ids.len());
        prop_assert_eq!(phrase.frames.len(), phrase.dur_seconds.len());
    }
}
