//! Line-delimited JSON corpus and sample files.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{tokenize, DialogueUnit, Sample, TokenizerConfig, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSchema {
    /// `{"id"?, "utterances": [..], "meta"?}` per line.
    UnitPerLine,
    /// `{"unit_id", "text"}` per line; consecutive lines with one id form a unit.
    TurnPerLine,
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub units: Vec<DialogueUnit>,
    /// Records with fewer than two utterances.
    pub dropped: usize,
}

#[derive(Deserialize)]
struct UnitRecord {
    id: Option<String>,
    utterances: Vec<String>,
    #[serde(default)]
    meta: Option<serde_json::Map<String, Value>>,
}

#[derive(Deserialize)]
struct TurnRecord {
    unit_id: String,
    text: String,
}

#[derive(Serialize)]
struct UnitOut<'a> {
    id: &'a str,
    utterances: Vec<&'a str>,
    meta: &'a BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord<T> {
    context: Vec<T>,
    response: T,
    unit_id: T,
    turn_index: usize,
}

fn read_lines<R: BufRead>(reader: R, source: &str) -> Result<Vec<(usize, String)>> {
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            source_name: source.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    Ok(lines)
}

fn parse_err(source: &str, line: usize, message: impl ToString) -> Error {
    Error::Parse {
        source_name: source.to_owned(),
        line,
        message: message.to_string(),
    }
}

fn tokenize_at(text: &str, cfg: &TokenizerConfig, source: &str, line: usize) -> Result<Utterance> {
    tokenize(text, cfg).map_err(|e| parse_err(source, line, e))
}

/// Parses a corpus stream. `source` names the stream in errors and is the
/// prefix of synthesized ids (`<source>:<line>`).
pub fn parse_corpus<R: BufRead>(
    reader: R,
    schema: CorpusSchema,
    source: &str,
    cfg: &TokenizerConfig,
) -> Result<ParsedCorpus> {
    let lines = read_lines(reader, source)?;
    let raw_units = match schema {
        CorpusSchema::UnitPerLine => parse_unit_lines(&lines, source, cfg)?,
        CorpusSchema::TurnPerLine => parse_turn_lines(&lines, source, cfg)?,
    };

    let mut seen = HashSet::with_capacity(raw_units.len());
    let mut parsed = ParsedCorpus::default();
    for unit in raw_units {
        if !seen.insert(unit.id.clone()) {
            return Err(Error::DuplicateId(unit.id));
        }
        if unit.utterances.len() < 2 {
            parsed.dropped += 1;
        } else {
            parsed.units.push(unit);
        }
    }
    Ok(parsed)
}

fn parse_unit_lines(
    lines: &[(usize, String)],
    source: &str,
    cfg: &TokenizerConfig,
) -> Result<Vec<DialogueUnit>> {
    // Parsed in parallel; collecting per-line results keeps the first error
    // and the output order independent of scheduling.
    let results: Vec<Result<DialogueUnit>> = lines
        .par_iter()
        .map(|(line, text)| {
            let rec: UnitRecord =
                serde_json::from_str(text).map_err(|e| parse_err(source, *line, e))?;
            let utterances = rec
                .utterances
                .iter()
                .map(|u| tokenize_at(u, cfg, source, *line))
                .collect::<Result<Vec<_>>>()?;
            let mut meta: BTreeMap<String, String> = rec
                .meta
                .unwrap_or_default()
                .into_iter()
                .map(|(k, v)| match v {
                    Value::String(s) => (k, s),
                    other => (k, other.to_string()),
                })
                .collect();
            meta.entry("source".into()).or_insert_with(|| source.to_owned());
            meta.entry("line".into()).or_insert_with(|| line.to_string());
            Ok(DialogueUnit {
                id: rec.id.unwrap_or_else(|| format!("{source}:{line}")),
                utterances,
                meta,
            })
        })
        .collect();
    results.into_iter().collect()
}

fn parse_turn_lines(
    lines: &[(usize, String)],
    source: &str,
    cfg: &TokenizerConfig,
) -> Result<Vec<DialogueUnit>> {
    let turns: Vec<Result<(usize, String, Utterance)>> = lines
        .par_iter()
        .map(|(line, text)| {
            let rec: TurnRecord =
                serde_json::from_str(text).map_err(|e| parse_err(source, *line, e))?;
            let utt = tokenize_at(&rec.text, cfg, source, *line)?;
            Ok((*line, rec.unit_id, utt))
        })
        .collect();

    let mut units: Vec<DialogueUnit> = Vec::new();
    let mut first_line = 0;
    let mut last_line = 0;
    for turn in turns {
        let (line, unit_id, utt) = turn?;
        match units.last_mut() {
            Some(cur) if cur.id == unit_id => {
                cur.utterances.push(utt);
                last_line = line;
            }
            _ => {
                if let Some(prev) = units.last_mut() {
                    set_span(prev, source, first_line, last_line);
                }
                first_line = line;
                last_line = line;
                units.push(DialogueUnit::new(unit_id, vec![utt]));
            }
        }
    }
    if let Some(prev) = units.last_mut() {
        set_span(prev, source, first_line, last_line);
    }
    Ok(units)
}

fn set_span(unit: &mut DialogueUnit, source: &str, first: usize, last: usize) {
    unit.meta.insert("source".into(), source.to_owned());
    unit.meta.insert("line".into(), format!("{first}-{last}"));
}

/// Reads a flattened sample file as written by [`write_samples`].
pub fn parse_samples<R: BufRead>(
    reader: R,
    source: &str,
    cfg: &TokenizerConfig,
) -> Result<Vec<Sample>> {
    let lines = read_lines(reader, source)?;
    let results: Vec<Result<Sample>> = lines
        .par_iter()
        .map(|(line, text)| {
            let rec: SampleRecord<String> =
                serde_json::from_str(text).map_err(|e| parse_err(source, *line, e))?;
            if rec.context.is_empty() {
                return Err(parse_err(source, *line, "sample has an empty context"));
            }
            if rec.turn_index == 0 {
                return Err(parse_err(source, *line, "turn_index must be at least 1"));
            }
            Ok(Sample {
                context: rec
                    .context
                    .iter()
                    .map(|c| tokenize_at(c, cfg, source, *line))
                    .collect::<Result<_>>()?,
                response: tokenize_at(&rec.response, cfg, source, *line)?,
                unit_id: rec.unit_id,
                turn_index: rec.turn_index,
            })
        })
        .collect();
    results.into_iter().collect()
}

pub fn write_units<W: Write>(mut w: W, units: &[DialogueUnit]) -> std::io::Result<()> {
    for unit in units {
        let rec = UnitOut {
            id: &unit.id,
            utterances: unit.utterances.iter().map(Utterance::raw).collect(),
            meta: &unit.meta,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_samples<'a, W, I>(mut w: W, samples: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Sample>,
{
    for s in samples {
        let rec = SampleRecord {
            context: s.context.iter().map(Utterance::raw).collect(),
            response: s.response.raw(),
            unit_id: s.unit_id.as_str(),
            turn_index: s.turn_index,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{flatten_units, FlattenMode};

    fn parse(text: &str, schema: CorpusSchema) -> Result<ParsedCorpus> {
        parse_corpus(text.as_bytes(), schema, "dd", &TokenizerConfig::default())
    }

    #[test]
    fn unit_per_line_with_three_utterances() {
        let p = parse(r#"{"id":"s1","utterances":["a b","c","d ."]}"#, CorpusSchema::UnitPerLine)
            .unwrap();
        assert_eq!(p.units.len(), 1);
        assert_eq!(p.units[0].utterances.len(), 3);
        assert_eq!(p.units[0].meta["source"], "dd");
        assert_eq!(p.dropped, 0);
    }

    #[test]
    fn single_utterance_units_are_dropped_and_counted() {
        let p = parse(r#"{"utterances":["only one"]}"#, CorpusSchema::UnitPerLine).unwrap();
        assert!(p.units.is_empty());
        assert_eq!(p.dropped, 1);
    }

    #[test]
    fn duplicate_explicit_ids_fail() {
        let text = "{\"id\":\"u1\",\"utterances\":[\"a\",\"b\"]}\n{\"id\":\"u1\",\"utterances\":[\"c\",\"d\"]}\n";
        assert!(matches!(
            parse(text, CorpusSchema::UnitPerLine),
            Err(Error::DuplicateId(id)) if id == "u1"
        ));
    }

    #[test]
    fn ids_are_synthesized_from_source_and_line() {
        let text = "\n{\"utterances\":[\"a\",\"b\"]}\n{\"utterances\":[\"c\",\"d\"]}\n";
        let p = parse(text, CorpusSchema::UnitPerLine).unwrap();
        let ids: Vec<&str> = p.units.iter().map(|u| u.id.as_str()).collect();
        assert_eq!(ids, ["dd:2", "dd:3"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"utterances\":[\"a\",\"b\"]}\n{not json}\n";
        match parse(text, CorpusSchema::UnitPerLine) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let blank = "{\"utterances\":[\"a\",\"  \"]}\n";
        assert!(matches!(
            parse(blank, CorpusSchema::UnitPerLine),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn meta_values_are_stringified() {
        let p = parse(
            r#"{"id":"x","utterances":["a","b"],"meta":{"split":"test","movie":42}}"#,
            CorpusSchema::UnitPerLine,
        )
        .unwrap();
        assert_eq!(p.units[0].meta["split"], "test");
        assert_eq!(p.units[0].meta["movie"], "42");
    }

    #[test]
    fn turn_per_line_groups_consecutive_turns() {
        let text = [
            r#"{"unit_id":"m1","text":"hi"}"#,
            r#"{"unit_id":"m1","text":"hello"}"#,
            r#"{"unit_id":"m2","text":"lonely"}"#,
            r#"{"unit_id":"m3","text":"a"}"#,
            r#"{"unit_id":"m3","text":"b"}"#,
            r#"{"unit_id":"m3","text":"c"}"#,
        ]
        .join("\n");
        let p = parse(&text, CorpusSchema::TurnPerLine).unwrap();
        assert_eq!(p.dropped, 1);
        assert_eq!(p.units.len(), 2);
        assert_eq!(p.units[1].utterances.len(), 3);
        assert_eq!(p.units[1].meta["line"], "4-6");

        let split = "{\"unit_id\":\"m1\",\"text\":\"a\"}\n{\"unit_id\":\"m2\",\"text\":\"b\"}\n{\"unit_id\":\"m1\",\"text\":\"c\"}\n";
        assert!(matches!(parse(split, CorpusSchema::TurnPerLine), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn units_and_samples_write_then_parse_back() {
        let text = "{\"id\":\"a\",\"utterances\":[\"Hi  there\",\"yo\",\"bye .\"]}\n";
        let p = parse(text, CorpusSchema::UnitPerLine).unwrap();
        let mut buf = Vec::new();
        write_units(&mut buf, &p.units).unwrap();
        let again = parse_corpus(&buf[..], CorpusSchema::UnitPerLine, "dd", &TokenizerConfig::default())
            .unwrap();
        assert_eq!(again.units, p.units);

        let samples = flatten_units(&p.units, FlattenMode::MultiTurn, 3).unwrap();
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let back = parse_samples(&buf[..], "s", &TokenizerConfig::default()).unwrap();
        assert_eq!(back, samples);
    }
}
