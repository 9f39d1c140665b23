//! Scenario JSONL: one scenario object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::Scenario;

/// What to do with a malformed record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OnError {
    #[default]
    Abort,
    Skip,
}

/// Lazily parse scenarios; errors carry the 1-based line number.
pub fn read_scenarios<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Scenario>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(Error::Io(e))),
        };
        if line.trim().is_empty() {
            return None;
        }
        let parsed = serde_json::from_str::<Scenario>(&line)
            .map_err(|e| Error::Schema { line: line_no, msg: e.to_string() })
            .and_then(|s| {
                s.validate().map_err(|msg| Error::Schema { line: line_no, msg })?;
                Ok(s)
            });
        Some(parsed)
    })
}

pub fn load_scenarios(path: impl AsRef<Path>, on_error: OnError) -> Result<Vec<Scenario>> {
    let file = File::open(path.as_ref())?;
    let mut out = Vec::new();
    for item in read_scenarios(BufReader::new(file)) {
        match item {
            Ok(s) => out.push(s),
            Err(e @ Error::Schema { .. }) if on_error == OnError::Skip => {
                log::warn!("skipping malformed scenario: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn write_scenarios<'a, W: Write>(mut w: W, scenarios: impl IntoIterator<Item = &'a Scenario>) -> Result<()> {
    for s in scenarios {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_scenarios(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let file = File::create(path.as_ref())?;
    write_scenarios(BufWriter::new(file), scenarios)
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use super::*;

    const LINE: &str = r#"{"id":"s0","horizon_s":0.2,"target_id":7,"extra":1,"map":{"lanes":[{"id":"l","points":[[0,0],[0,1]],"width":4,"turn":"none","parking":false}]},"tracks":[{"id":7,"type":"vehicle","states":[[0.0,0,0,1.57],[0.1,0,1,null]],"length":4.5,"width":2}],"future":[[0,2],[0,3]]}"#;

    #[test]
    fn parses_integer_ids_and_null_heading() {
        let s: Vec<_> = read_scenarios(Cursor::new(LINE)).collect::<Result<_>>().unwrap();
        assert_eq!(s[0].target_id, "7");
        assert_eq!(s[0].tracks[0].states[1].heading, None);
        assert_eq!(s[0].tracks[0].states[0].heading, Some(1.57));
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert_eq!(read_scenarios(Cursor::new("")).count(), 0);
        assert_eq!(read_scenarios(Cursor::new("\n  \n")).count(), 0);
    }

    #[test]
    fn missing_target_id_names_the_field() {
        let bad = LINE.replace(r#""target_id":7,"#, "");
        let text = format!("{LINE}\n{bad}\n");
        let items: Vec<_> = read_scenarios(Cursor::new(text)).collect();
        assert!(items[0].is_ok());
        match &items[1] {
            Err(Error::Schema { line, msg }) => {
                assert_eq!(*line, 2);
                assert!(msg.contains("target_id"), "{msg}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_future_length_is_rejected() {
        let bad = LINE.replace(r#""future":[[0,2],[0,3]]"#, r#""future":[[0,2]]"#);
        let err = read_scenarios(Cursor::new(bad)).next().unwrap().unwrap_err();
        assert!(err.to_string().contains("future"), "{err}");
    }

    #[test]
    fn skip_mode_continues_past_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, format!("{LINE}\nnot json\n{LINE}\n")).unwrap();
        assert!(load_scenarios(&path, OnError::Abort).is_err());
        assert_eq!(load_scenarios(&path, OnError::Skip).unwrap().len(), 2);
    }

    #[test]
    fn write_then_read_is_identity() {
        let s: Vec<Scenario> = read_scenarios(Cursor::new(LINE)).collect::<Result<_>>().unwrap();
        let mut buf = Vec::new();
        write_scenarios(&mut buf, &s).unwrap();
        let back: Vec<Scenario> = read_scenarios(Cursor::new(buf)).collect::<Result<_>>().unwrap();
        assert_eq!(s, back);
    }
}
