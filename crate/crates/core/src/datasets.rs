//! Loaders for the MUStARD and SemEval-2018 Task 3 release formats, plus a
//! normalized line-delimited interchange format for custom corpora.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::domain::{ContextTurn, Label, Sample};
use crate::error::{Error, Result};

pub const MUSTARD_ID: &str = "mustard";
pub const SEMEVAL_ID: &str = "semeval2018t3";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub id: String,
    pub samples: Vec<Sample>,
    pub source_path: String,
    pub counts_by_label: BTreeMap<Label, usize>,
}

impl Dataset {
    pub fn new(id: impl Into<String>, samples: Vec<Sample>, source_path: impl Into<String>) -> Self {
        let counts_by_label = label_counts(&samples);
        Dataset {
            id: id.into(),
            samples,
            source_path: source_path.into(),
            counts_by_label,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn golds(&self) -> HashMap<String, Label> {
        self.samples.iter().map(|s| (s.id.clone(), s.gold)).collect()
    }

    /// Normalized interchange serialization: one JSON object per line.
    pub fn to_interchange(&self) -> String {
        let mut out = String::new();
        for sample in &self.samples {
            out.push_str(&serde_json::to_string(sample).expect("sample serializes"));
            out.push('\n');
        }
        out
    }

    /// SHA-256 of the interchange serialization, lowercase hex.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_interchange().as_bytes()))
    }
}

fn label_counts(samples: &[Sample]) -> BTreeMap<Label, usize> {
    let mut counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|l| (*l, 0)).collect();
    for s in samples {
        *counts.entry(s.gold).or_default() += 1;
    }
    counts
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct MustardEntry {
    utterance: String,
    speaker: String,
    context: Vec<String>,
    context_speakers: Vec<String>,
    sarcasm: bool,
}

pub fn load_mustard(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_mustard(&read(path)?, &path.display().to_string())
}

pub fn parse_mustard(text: &str, source_name: &str) -> Result<Dataset> {
    let doc: BTreeMap<String, Value> = serde_json::from_str(text)
        .map_err(|e| Error::format(source_name, format!("line {}", e.line()), e.to_string()))?;

    let mut samples = Vec::with_capacity(doc.len());
    for (key, value) in doc {
        let entry: MustardEntry = serde_json::from_value(value)
            .map_err(|e| Error::format(source_name, format!("key {key}"), e.to_string()))?;
        if entry.context.len() != entry.context_speakers.len() {
            return Err(Error::format(
                source_name,
                format!("key {key}"),
                format!(
                    "{} context texts but {} context speakers",
                    entry.context.len(),
                    entry.context_speakers.len()
                ),
            ));
        }
        if entry.utterance.trim().is_empty() {
            return Err(Error::format(source_name, format!("key {key}"), "empty utterance"));
        }
        let context_turns = entry
            .context_speakers
            .into_iter()
            .zip(entry.context)
            .map(|(speaker, text)| ContextTurn { speaker, text })
            .collect();
        samples.push(Sample {
            id: key,
            dataset_id: MUSTARD_ID.to_string(),
            utterance: entry.utterance,
            context_turns,
            speaker: Some(entry.speaker),
            gold: if entry.sarcasm { Label::Sarcastic } else { Label::NotSarcastic },
        });
    }
    Ok(Dataset::new(MUSTARD_ID, samples, source_name))
}

pub fn load_semeval(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    parse_semeval(&read(path)?, &path.display().to_string())
}

/// Tab-separated `index<TAB>label<TAB>text` rows after one header line.
pub fn parse_semeval(text: &str, source_name: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    for (idx, raw_line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::format(source_name, format!("line {line_no}"), msg);
        let mut cols = line.splitn(3, '\t');
        let (Some(index), Some(label), Some(tweet)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err("expected 3 tab-separated columns".into()));
        };
        let index: u64 = index
            .trim()
            .parse()
            .map_err(|_| err(format!("tweet index `{index}` is not an integer")))?;
        let gold = match label.trim().parse::<i64>() {
            Ok(1) => Label::Sarcastic,
            Ok(0) => Label::NotSarcastic,
            Ok(other) => return Err(err(format!("label {other} outside {{0,1}}"))),
            Err(_) => return Err(err(format!("label `{label}` is not an integer"))),
        };
        if tweet.trim().is_empty() {
            return Err(err("empty tweet text".into()));
        }
        samples.push(Sample {
            id: index.to_string(),
            dataset_id: SEMEVAL_ID.to_string(),
            utterance: tweet.to_string(),
            context_turns: Vec::new(),
            speaker: None,
            gold,
        });
    }
    Ok(Dataset::new(SEMEVAL_ID, samples, source_name))
}

pub fn load_interchange(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let fallback_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "custom".to_string());
    parse_interchange(&read(path)?, &path.display().to_string(), &fallback_id)
}

/// Parses interchange lines. The dataset id comes from the records and must
/// be uniform; `fallback_id` is used only for an empty file.
pub fn parse_interchange(text: &str, source_name: &str, fallback_id: &str) -> Result<Dataset> {
    let mut samples: Vec<Sample> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("line {}", idx + 1);
        let sample: Sample = serde_json::from_str(line)
            .map_err(|e| Error::format(source_name, location.clone(), e.to_string()))?;
        if let Some(first) = samples.first() {
            if first.dataset_id != sample.dataset_id {
                return Err(Error::format(
                    source_name,
                    location,
                    format!(
                        "dataset_id `{}` differs from `{}`",
                        sample.dataset_id, first.dataset_id
                    ),
                ));
            }
        }
        samples.push(sample);
    }
    let id = samples
        .first()
        .map(|s| s.dataset_id.clone())
        .unwrap_or_else(|| fallback_id.to_string());
    Ok(Dataset::new(id, samples, source_name))
}

/// Picks a loader from the file extension: `.json` is MUStARD, `.jsonl` is
/// the interchange format, anything else is treated as SemEval TSV.
pub fn load_path(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => load_mustard(path),
        Some("jsonl") | Some("ndjson") => load_interchange(path),
        _ => load_semeval(path),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub duplicate_ids: Vec<String>,
    pub empty_utterances: Vec<String>,
    pub balance: BTreeMap<Label, usize>,
}

pub fn validate(dataset: &Dataset) -> ValidationReport {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &dataset.samples {
        *seen.entry(s.id.as_str()).or_default() += 1;
    }
    let duplicate_ids: Vec<String> = seen
        .into_iter()
        .filter(|(_, n)| *n > 1)
        .map(|(id, _)| id.to_string())
        .collect();
    let empty_utterances: Vec<String> = dataset
        .samples
        .iter()
        .filter(|s| s.utterance.trim().is_empty())
        .map(|s| s.id.clone())
        .collect();
    ValidationReport {
        ok: duplicate_ids.is_empty() && empty_utterances.is_empty(),
        duplicate_ids,
        empty_utterances,
        balance: label_counts(&dataset.samples),
    }
}

/// Deterministic subset of exactly `limit` samples, kept in source order.
pub fn subsample(dataset: &Dataset, limit: usize, seed: u64) -> Result<Dataset> {
    if limit == 0 || limit > dataset.len() {
        return Err(Error::Argument(format!(
            "limit {limit} outside 1..={}",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, dataset.len(), limit).into_vec();
    picked.sort_unstable();
    let samples = picked.into_iter().map(|i| dataset.samples[i].clone()).collect();
    Ok(Dataset::new(dataset.id.clone(), samples, dataset.source_path.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                id: format!("s{i:03}"),
                dataset_id: "synthetic".into(),
                utterance: format!("utterance {i}"),
                context_turns: vec![],
                speaker: None,
                gold: if i % 4 == 0 { Label::Sarcastic } else { Label::NotSarcastic },
            })
            .collect();
        Dataset::new("synthetic", samples, "<memory>")
    }

    #[test]
    fn mustard_context_zip_and_order() {
        let doc = r#"{
            "2_b": {"utterance": "Second.", "speaker": "PENNY", "context": [], "context_speakers": [], "sarcasm": false},
            "1_a": {"utterance": "It's just a privilege to watch your mind at work.", "speaker": "SHELDON",
                    "context": ["first", "second"], "context_speakers": ["LEONARD", "SHELDON"],
                    "show": "BBT", "sarcasm": true}
        }"#;
        let ds = parse_mustard(doc, "doc").unwrap();
        assert_eq!(ds.samples[0].id, "1_a");
        assert_eq!(ds.samples[0].gold, Label::Sarcastic);
        assert_eq!(ds.samples[0].context_turns[0].speaker, "LEONARD");
        assert_eq!(ds.samples[0].context_turns[1].text, "second");
        assert!(ds.samples[1].context_turns.is_empty());
        assert_eq!(ds.counts_by_label[&Label::NotSarcastic], 1);
    }

    #[test]
    fn mustard_mismatched_context_names_key() {
        let doc = r#"{"k9": {"utterance": "x", "speaker": "A", "context": ["a", "b"],
                      "context_speakers": ["A", "B", "C"], "sarcasm": true}}"#;
        match parse_mustard(doc, "doc") {
            Err(Error::Format { location, .. }) => assert_eq!(location, "key k9"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn mustard_missing_field() {
        let doc = r#"{"k1": {"utterance": "x", "context": [], "context_speakers": [], "sarcasm": true}}"#;
        let err = parse_mustard(doc, "doc").unwrap_err();
        assert!(err.to_string().contains("speaker"), "{err}");
    }

    #[test]
    fn semeval_rows() {
        let text = "Tweet index\tLabel\tTweet text\n1\t1\tSweet United Nations video. Just in time for Christmas.\n2\t0\tplain\ttab inside\n";
        let ds = parse_semeval(text, "t").unwrap();
        assert_eq!(ds.samples[0].gold, Label::Sarcastic);
        assert_eq!(ds.samples[0].utterance, "Sweet United Nations video. Just in time for Christmas.");
        assert_eq!(ds.samples[1].gold, Label::NotSarcastic);
        assert_eq!(ds.samples[1].utterance, "plain\ttab inside");
    }

    #[test]
    fn semeval_bad_label_reports_line() {
        let text = "h\th\th\n1\t0\ta\n2\t0\tb\n3\t1\tc\n4\t0\td\n5\t2\ttext\n";
        match parse_semeval(text, "t") {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 6"),
            other => panic!("{other:?}"),
        }
        let text = "h\n1\tx\ta\n";
        assert!(matches!(parse_semeval(text, "t"), Err(Error::Format { location, .. }) if location == "line 2"));
        let text = "h\n1\t1\n";
        assert!(matches!(parse_semeval(text, "t"), Err(Error::Format { .. })));
    }

    #[test]
    fn validate_reports() {
        let mut ds = synthetic(40);
        let report = validate(&ds);
        assert!(report.ok);
        assert_eq!(report.balance[&Label::Sarcastic], 10);
        assert_eq!(report.balance[&Label::NotSarcastic], 30);
        ds.samples[1].id = "s000".into();
        let report = validate(&ds);
        assert!(!report.ok);
        assert_eq!(report.duplicate_ids, vec!["s000".to_string()]);
    }

    #[test]
    fn subsample_contract() {
        let ds = synthetic(100);
        assert_eq!(subsample(&ds, 100, 7).unwrap(), ds);
        let a = subsample(&ds, 20, 1).unwrap();
        assert_eq!(a, subsample(&ds, 20, 1).unwrap());
        assert_eq!(a.len(), 20);
        assert_ne!(a.samples, subsample(&ds, 20, 2).unwrap().samples);
        assert!(a.samples.windows(2).all(|w| w[0].id < w[1].id));
        assert!(matches!(subsample(&ds, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(subsample(&ds, 101, 1), Err(Error::Argument(_))));
    }

    #[test]
    fn interchange_round_trip() {
        let ds = synthetic(5);
        let back = parse_interchange(&ds.to_interchange(), "<memory>", "x").unwrap();
        assert_eq!(back, ds);
        assert!(ds.to_interchange().contains("\"gold\":\"not_sarcastic\""));
    }
}
