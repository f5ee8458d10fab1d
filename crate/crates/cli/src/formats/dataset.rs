//! Dataset file: line-delimited text, one clip per line, with a header
//! carrying the version and the feature geometry.
//!
//! ```text
//! detangle-dataset v1 emotions=5 speakers=20 d_audio=12 d_video=16
//! clip speaker=0 emotion=3 split=train n=2 audio=0.1,... video=0.2,...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! save -> load is bit-exact and files diff cleanly.

use std::fmt::Write as _;
use std::path::Path;

use detangle_core::synth::{Clip, Dataset, Split};

use crate::error::{io_data, CliError, Result};

const MAGIC: &str = "detangle-dataset";
const VERSION: &str = "v1";

pub fn to_text(dataset: &Dataset) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{MAGIC} {VERSION} emotions={} speakers={} d_audio={} d_video={}",
        dataset.emotion_classes, dataset.speakers, dataset.d_audio, dataset.d_video
    );
    for clip in &dataset.clips {
        let _ = write!(
            out,
            "clip speaker={} emotion={} split={} n={} audio=",
            clip.speaker,
            clip.emotion,
            clip.split.name(),
            clip.n
        );
        push_floats(&mut out, &clip.audio);
        out.push_str(" video=");
        push_floats(&mut out, &clip.video);
        out.push('\n');
    }
    out
}

fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::data(format!("dataset parse error at line {line}: {msg}"))
}

fn field<'a>(token: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    let tok = token.ok_or_else(|| parse_err(line, format!("missing field `{key}`")))?;
    tok.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected `{key}=...`, got `{tok}`")))
}

pub fn from_text(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))?;
    let mut tokens = header.split(' ');
    match (tokens.next(), tokens.next()) {
        (Some(MAGIC), Some(VERSION)) => {}
        (Some(MAGIC), Some(other)) => {
            return Err(parse_err(
                1,
                format!("unsupported dataset version `{other}` (expected `{VERSION}`)"),
            ));
        }
        _ => return Err(parse_err(1, "not a dataset file (bad magic)")),
    }
    let parse_usize = |s: &str, line: usize| -> Result<usize> {
        s.parse().map_err(|e| parse_err(line, format!("`{s}`: {e}")))
    };
    let emotion_classes = parse_usize(field(tokens.next(), "emotions", 1)?, 1)?;
    let speakers = parse_usize(field(tokens.next(), "speakers", 1)?, 1)?;
    let d_audio = parse_usize(field(tokens.next(), "d_audio", 1)?, 1)?;
    let d_video = parse_usize(field(tokens.next(), "d_video", 1)?, 1)?;

    let mut clips = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split(' ');
        match tokens.next() {
            Some("clip") => {}
            Some(other) => return Err(parse_err(line_no, format!("unknown record `{other}`"))),
            None => continue,
        }
        let speaker = parse_usize(field(tokens.next(), "speaker", line_no)?, line_no)?;
        let emotion = parse_usize(field(tokens.next(), "emotion", line_no)?, line_no)?;
        let split = Split::from_name(field(tokens.next(), "split", line_no)?)
            .map_err(|e| parse_err(line_no, e))?;
        let n = parse_usize(field(tokens.next(), "n", line_no)?, line_no)?;
        let audio = parse_floats(field(tokens.next(), "audio", line_no)?, line_no)?;
        let video = parse_floats(field(tokens.next(), "video", line_no)?, line_no)?;
        if tokens.next().is_some() {
            return Err(parse_err(line_no, "trailing tokens"));
        }
        if n == 0 || audio.len() != n * d_audio || video.len() != n * d_video {
            return Err(parse_err(
                line_no,
                format!(
                    "clip with n={n} has {} audio / {} video values (need {} / {})",
                    audio.len(),
                    video.len(),
                    n * d_audio,
                    n * d_video
                ),
            ));
        }
        if speaker >= speakers || emotion >= emotion_classes {
            return Err(parse_err(line_no, "label out of the header's range"));
        }
        clips.push(Clip {
            speaker,
            emotion,
            split,
            n,
            audio,
            video,
        });
    }
    Ok(Dataset {
        emotion_classes,
        speakers,
        d_audio,
        d_video,
        clips,
    })
}

fn parse_floats(csv: &str, line: usize) -> Result<Vec<f64>> {
    if csv.is_empty() {
        return Ok(Vec::new());
    }
    csv.split(',')
        .map(|tok| tok.parse().map_err(|e| parse_err(line, format!("`{tok}`: {e}"))))
        .collect()
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(dataset)).map_err(|e| io_data(e, path))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_data(e, path))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use detangle_core::synth::{generate, SyntheticSpec};

    fn tiny() -> Dataset {
        generate(&SyntheticSpec {
            speakers: 3,
            clips_per_speaker: 5,
            d_audio: 2,
            d_video: 2,
            n_min: 1,
            n_max: 3,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ds = tiny();
        let text = to_text(&ds);
        let back = from_text(&text).unwrap();
        assert_eq!(ds, back);
        // And stable: encoding again gives identical bytes.
        assert_eq!(text, to_text(&back));
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let ds = tiny();
        let text = to_text(&ds);
        let cut = &text[..text.len() - 20];
        match from_text(cut) {
            Err(CliError::Data(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = "detangle-dataset v9 emotions=5 speakers=2 d_audio=1 d_video=1\n";
        match from_text(text) {
            Err(CliError::Data(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_is_rejected_not_crashed() {
        assert!(from_text("").is_err());
        assert!(from_text("hello world\n").is_err());
        assert!(from_text("detangle-dataset v1 emotions=5 speakers=2 d_audio=1 d_video=1\nclip speaker=0 emotion=0 split=train n=1 audio=x video=0\n").is_err());
    }
}
