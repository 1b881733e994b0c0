//! Result tables and machine-readable exports.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{MUSTARD_ID, SEMEVAL_ID};
use crate::domain::{confusion_counts, Label, MetricsSummary, UnparseablePolicy};
use crate::error::{Error, Result};
use crate::runner::RunResult;
use crate::strategies::{PredictionRecord, StrategyId};

/// Bundled published-results fixture, one structured row per line.
pub const PUBLISHED_TABLE1: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/published_table1.jsonl"));

pub fn summarize(
    records: &[PredictionRecord],
    golds: &HashMap<String, Label>,
    policy: UnparseablePolicy,
) -> Result<MetricsSummary> {
    let pairs = records
        .iter()
        .map(|r| {
            golds
                .get(&r.sample_id)
                .map(|gold| (*gold, &r.verdict))
                .ok_or_else(|| Error::Data(r.sample_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let counts = confusion_counts(pairs, policy)?;
    MetricsSummary::from_counts(counts, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// Lowercase strategy token (`pmp`, `cot`, ...).
    pub strategy: String,
    pub dataset_id: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub n: u64,
    pub unparseable_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl ReportRow {
    pub fn from_run(run: &RunResult) -> Self {
        ReportRow {
            model: run.manifest.model.clone(),
            strategy: run.manifest.strategy.as_str().to_string(),
            dataset_id: run.manifest.dataset_id.clone(),
            accuracy: run.metrics.accuracy,
            macro_f1: run.metrics.macro_f1,
            n: run.metrics.n,
            unparseable_rate: run.metrics.unparseable_rate(),
            provenance: None,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("unparseable_rate", self.unparseable_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} {v} outside [0,1] for {}", self.model)));
            }
        }
        Ok(())
    }

    fn sort_key(&self) -> (String, usize, String, String) {
        (
            self.model.clone(),
            strategy_rank(&self.strategy),
            self.strategy.clone(),
            self.dataset_id.clone(),
        )
    }
}

fn strategy_rank(token: &str) -> usize {
    StrategyId::ALL
        .iter()
        .position(|s| s.as_str() == token)
        .unwrap_or(StrategyId::ALL.len())
}

fn strategy_display(token: &str) -> String {
    match StrategyId::from_str(token) {
        Ok(id) => id.display_name().to_string(),
        Err(_) if token == "toc" => "ToC".to_string(),
        Err(_) => token.to_string(),
    }
}

fn dataset_display(id: &str) -> &str {
    match id {
        SEMEVAL_ID => "SemEval 2018",
        MUSTARD_ID => "MUStARD",
        other => other,
    }
}

fn dataset_rank(id: &str) -> usize {
    match id {
        SEMEVAL_ID => 0,
        MUSTARD_ID => 1,
        _ => 2,
    }
}

/// `100 × fraction`, rounded half-up to two decimals.
pub fn percent(fraction: f64) -> String {
    let scaled = fraction * 10_000.0;
    // Snap representation noise (0.8668 * 10000 = 8667.999...) before rounding.
    let snapped = (scaled * 1e6).round() / 1e6;
    let hundredths = (snapped + 0.5).floor() as i64;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableLayout {
    PaperTable1,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineFormat {
    Csv,
    Structured,
}

fn sorted(rows: &[ReportRow]) -> Result<Vec<ReportRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    rows.iter().try_for_each(ReportRow::validate)?;
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        a.sort_key()
            .cmp(&b.sort_key())
            .then(a.accuracy.total_cmp(&b.accuracy))
            .then(a.macro_f1.total_cmp(&b.macro_f1))
    });
    Ok(rows)
}

pub fn emit_table(rows: &[ReportRow], layout: TableLayout) -> Result<String> {
    let rows = sorted(rows)?;
    Ok(match layout {
        TableLayout::PaperTable1 => paper_table(&rows),
        TableLayout::Flat => flat_table(&rows),
    })
}

/// Cell value per (row label, dataset); repeated runs of one cell are averaged.
struct Cell {
    accuracy: f64,
    macro_f1: f64,
}

fn paper_table(rows: &[ReportRow]) -> String {
    let datasets: Vec<String> = {
        let set: BTreeSet<(usize, &str)> = rows
            .iter()
            .map(|r| (dataset_rank(&r.dataset_id), r.dataset_id.as_str()))
            .collect();
        set.into_iter().map(|(_, id)| id.to_string()).collect()
    };

    let mut order: Vec<(String, String)> = Vec::new();
    let mut sums: BTreeMap<(String, String, String), (f64, f64, u32)> = BTreeMap::new();
    for r in rows {
        let key = (r.model.clone(), r.strategy.clone());
        if !order.contains(&key) {
            order.push(key);
        }
        let e = sums
            .entry((r.model.clone(), r.strategy.clone(), r.dataset_id.clone()))
            .or_insert((0.0, 0.0, 0));
        e.0 += r.accuracy;
        e.1 += r.macro_f1;
        e.2 += 1;
    }
    let cells: BTreeMap<(String, String, String), Cell> = sums
        .into_iter()
        .map(|(k, (a, f, n))| {
            (
                k,
                Cell {
                    accuracy: a / f64::from(n),
                    macro_f1: f / f64::from(n),
                },
            )
        })
        .collect();

    let best = |dataset: &str, pick: fn(&Cell) -> f64| {
        cells
            .iter()
            .filter(|((_, _, d), _)| d == dataset)
            .map(|(_, c)| pick(c))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    type Column = (String, fn(&Cell) -> f64, f64);
    let columns: Vec<Column> = datasets
        .iter()
        .flat_map(|d| {
            let acc: fn(&Cell) -> f64 = |c| c.accuracy;
            let f1: fn(&Cell) -> f64 = |c| c.macro_f1;
            [(d.clone(), acc, best(d, acc)), (d.clone(), f1, best(d, f1))]
        })
        .collect();

    let mut out = String::new();
    out.push_str("| Model |");
    for d in &datasets {
        let name = dataset_display(d);
        out.push_str(&format!(" {name} Acc. | {name} Ma-F1 |"));
    }
    out.push_str("\n| :--- |");
    for _ in &columns {
        out.push_str(" ---: |");
    }
    out.push('\n');

    for (model, strategy) in &order {
        out.push_str(&format!("| {model} ({}) |", strategy_display(strategy)));
        for (dataset, pick, best) in &columns {
            match cells.get(&(model.clone(), strategy.clone(), dataset.clone())) {
                Some(cell) => {
                    let v = pick(cell);
                    let text = percent(v);
                    if v == *best {
                        out.push_str(&format!(" **{text}** |"));
                    } else {
                        out.push_str(&format!(" {text} |"));
                    }
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out
}

fn flat_table(rows: &[ReportRow]) -> String {
    let mut out = String::from("| Model | Strategy | Dataset | Acc. | Ma-F1 | n | Unparseable % |\n");
    out.push_str("| :--- | :--- | :--- | ---: | ---: | ---: | ---: |\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.model,
            strategy_display(&r.strategy),
            dataset_display(&r.dataset_id),
            percent(r.accuracy),
            percent(r.macro_f1),
            r.n,
            percent(r.unparseable_rate),
        ));
    }
    out
}

pub const CSV_HEADER: [&str; 7] = ["model", "strategy", "dataset", "acc", "macro_f1", "n", "unparseable_rate"];

pub fn emit_machine(rows: &[ReportRow], format: MachineFormat) -> Result<String> {
    let rows = sorted(rows)?;
    match format {
        MachineFormat::Csv => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(CSV_HEADER).expect("in-memory write");
            for r in &rows {
                writer
                    .write_record([
                        r.model.clone(),
                        r.strategy.clone(),
                        r.dataset_id.clone(),
                        format!("{:.6}", r.accuracy),
                        format!("{:.6}", r.macro_f1),
                        r.n.to_string(),
                        format!("{:.6}", r.unparseable_rate),
                    ])
                    .expect("in-memory write");
            }
            let bytes = writer.into_inner().expect("in-memory flush");
            Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
        }
        MachineFormat::Structured => {
            let mut out = String::new();
            for r in &rows {
                out.push_str(&serde_json::to_string(r).expect("row serializes"));
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// Reads structured (line-delimited) rows.
pub fn parse_structured(text: &str, source_name: &str) -> Result<Vec<ReportRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(idx, line)| {
            let row: ReportRow = serde_json::from_str(line)
                .map_err(|e| Error::format(source_name, format!("line {}", idx + 1), e.to_string()))?;
            row.validate()?;
            Ok(row)
        })
        .collect()
}

pub fn published_rows() -> Vec<ReportRow> {
    parse_structured(PUBLISHED_TABLE1, "published_table1.jsonl").expect("bundled fixture parses")
}
