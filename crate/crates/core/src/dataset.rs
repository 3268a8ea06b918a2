//! JSONL formats for samples, scenes and training records, and per-source
//! fast/slow statistics.
//!
//! Files ending in `.gz` are gzip-compressed transparently on both read and
//! write. Records are written one JSON object per line with `\n`
//! terminators and a fixed key order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{parse_chain, Chain};
use crate::geometry::{normalize_bbox, NormBBox, NormPoint, ScreenshotRef};
use crate::sample::{ElementKind, GroundingSample, Platform};
use crate::scenes::SyntheticScene;

/// Largest per-coordinate disagreement tolerated between `bbox` and `bbox_px`.
pub const BBOX_CONSISTENCY_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
}

impl DatasetError {
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Io { .. } => None,
            DatasetError::Schema { line, .. } | DatasetError::Invariant { line, .. } => Some(*line),
        }
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn open_reader(path: &Path) -> Result<Box<dyn BufRead>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let inner: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::new(inner)))
}

/// Iterator over non-blank lines of a JSONL file, numbered from 1.
struct Lines {
    path: PathBuf,
    inner: io::Lines<Box<dyn BufRead>>,
    line: usize,
}

impl Lines {
    fn open(path: &Path) -> Result<Self, DatasetError> {
        Ok(Self {
            path: path.to_path_buf(),
            inner: open_reader(path)?.lines(),
            line: 0,
        })
    }
}

impl Iterator for Lines {
    type Item = Result<(usize, String), DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let next = self.inner.next()?;
            self.line += 1;
            match next {
                Err(source) => {
                    return Some(Err(DatasetError::Io {
                        path: self.path.clone(),
                        source,
                    }))
                }
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Some(Ok((self.line, l))),
            }
        }
    }
}

fn parse_line<T: DeserializeOwned>(line: usize, text: &str) -> Result<T, DatasetError> {
    serde_json::from_str(text).map_err(|e| DatasetError::Schema {
        line,
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawScreenshot {
    uri: String,
    width_px: u32,
    height_px: u32,
}

/// On-disk layout of a grounding sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox_px: Option<[i64; 4]>,
    screenshot: RawScreenshot,
    pub platform: Platform,
    pub element_kind: ElementKind,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl From<&GroundingSample> for SampleRecord {
    fn from(s: &GroundingSample) -> Self {
        Self {
            id: s.id.clone(),
            instruction: s.instruction.clone(),
            bbox: Some(s.bbox.to_array()),
            bbox_px: None,
            screenshot: RawScreenshot {
                uri: s.screenshot.uri().to_string(),
                width_px: s.screenshot.width_px(),
                height_px: s.screenshot.height_px(),
            },
            platform: s.platform,
            element_kind: s.element_kind,
            source: s.source.clone(),
            category: s.category.clone(),
        }
    }
}

impl SampleRecord {
    /// Validates the record; errors carry `line`.
    pub fn into_sample(self, line: usize) -> Result<GroundingSample, DatasetError> {
        let invariant = |message: String| DatasetError::Invariant { line, message };
        if self.id.trim().is_empty() {
            return Err(invariant("empty id".into()));
        }
        if self.instruction.trim().is_empty() {
            return Err(invariant("empty instruction".into()));
        }
        let shot = ScreenshotRef::new(
            self.screenshot.uri,
            self.screenshot.width_px,
            self.screenshot.height_px,
        )
        .map_err(|e| invariant(e.to_string()))?;
        let from_px = self
            .bbox_px
            .map(|px| normalize_bbox(px, &shot))
            .transpose()
            .map_err(|e| invariant(e.to_string()))?;
        let bbox = match (self.bbox, from_px) {
            (Some(b), px) => {
                let b = NormBBox::from_array(b).map_err(|e| invariant(e.to_string()))?;
                if let Some(px) = px {
                    let diff = b
                        .to_array()
                        .iter()
                        .zip(px.to_array())
                        .map(|(a, c)| (a - c).abs())
                        .fold(0.0, f64::max);
                    if diff > BBOX_CONSISTENCY_TOL {
                        return Err(invariant(format!(
                            "bbox and bbox_px disagree by {diff:e}"
                        )));
                    }
                }
                b
            }
            (None, Some(px)) => px,
            (None, None) => {
                return Err(DatasetError::Schema {
                    line,
                    message: "missing field `bbox` (or `bbox_px`)".into(),
                })
            }
        };
        Ok(GroundingSample {
            id: self.id,
            instruction: self.instruction,
            bbox,
            screenshot: shot,
            platform: self.platform,
            element_kind: self.element_kind,
            source: self.source,
            category: self.category,
        })
    }
}

/// Streaming reader of validated samples. Duplicate ids are reported.
pub struct SampleReader {
    lines: Lines,
    seen: HashSet<String>,
}

impl Iterator for SampleReader {
    type Item = Result<GroundingSample, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let (line, text) = match self.lines.next()? {
            Ok(v) => v,
            Err(e) => return Some(Err(e)),
        };
        let result = parse_line::<SampleRecord>(line, &text)
            .and_then(|r| r.into_sample(line))
            .and_then(|s| {
                if self.seen.insert(s.id.clone()) {
                    Ok(s)
                } else {
                    Err(DatasetError::Invariant {
                        line,
                        message: format!("duplicate id {:?}", s.id),
                    })
                }
            });
        Some(result)
    }
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<SampleReader, DatasetError> {
    Ok(SampleReader {
        lines: Lines::open(path.as_ref())?,
        seen: HashSet::new(),
    })
}

/// Reads every sample, failing on the first bad line.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<GroundingSample>, DatasetError> {
    read_samples(path)?.collect()
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<SyntheticScene>, DatasetError> {
    Lines::open(path.as_ref())?
        .map(|r| r.and_then(|(line, text)| parse_line(line, &text)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    Fast,
    Slow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub source: String,
    pub platform: Platform,
    pub element_kind: ElementKind,
    /// The model's own point that passed the hit check during synthesis.
    pub verified_point: [f64; 2],
    /// Synthesis stage (1 to 3) at which the sample was resolved.
    pub stage: u8,
}

/// A `(prompt, completion)` pair ready for fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub id: String,
    pub screenshot: String,
    pub prompt: String,
    pub completion: String,
    pub class: DataClass,
    pub metadata: TrainingMetadata,
}

impl TrainingRecord {
    pub fn verified_point(&self) -> Option<NormPoint> {
        let [x, y] = self.metadata.verified_point;
        NormPoint::new(x, y).ok()
    }

    /// Checks that the completion parses and agrees with class and stage.
    pub fn validate(&self) -> Result<Chain, String> {
        let chain = parse_chain(&self.completion).map_err(|e| format!("completion: {e}"))?;
        let expected = match &chain {
            Chain::Fast(_) => (DataClass::Fast, 1),
            Chain::Slow(s) if s.focus().is_none() => (DataClass::Slow, 2),
            Chain::Slow(_) => (DataClass::Slow, 3),
        };
        if (self.class, self.metadata.stage) != expected {
            return Err(format!(
                "class {:?} / stage {} inconsistent with chain shape",
                self.class, self.metadata.stage
            ));
        }
        if self.verified_point().is_none() {
            return Err("verified_point outside [0, 1]".into());
        }
        Ok(chain)
    }
}

pub fn read_training_records(
    path: impl AsRef<Path>,
) -> Result<impl Iterator<Item = Result<TrainingRecord, DatasetError>>, DatasetError> {
    Ok(Lines::open(path.as_ref())?.map(|r| {
        let (line, text) = r?;
        let rec: TrainingRecord = parse_line(line, &text)?;
        rec.validate()
            .map_err(|message| DatasetError::Invariant { line, message })?;
        Ok(rec)
    }))
}

/// Line-oriented JSON writer owning its file.
pub struct JsonlWriter {
    path: PathBuf,
    out: Box<dyn Write + Send>,
    count: usize,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        let out: Box<dyn Write + Send> = if is_gz(&path) {
            Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
        } else {
            Box::new(BufWriter::new(file))
        };
        Ok(Self { path, out, count: 0 })
    }

    fn io(&self, source: io::Error) -> DatasetError {
        DatasetError::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn write<T: Serialize + ?Sized>(&mut self, record: &T) -> Result<(), DatasetError> {
        let line = serde_json::to_string(record).map_err(|e| self.io(e.into()))?;
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| self.io(e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self) -> Result<usize, DatasetError> {
        self.out.flush().map_err(|e| self.io(e))?;
        // Dropping the encoder writes the gzip trailer.
        drop(self.out);
        Ok(self.count)
    }
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    records: impl IntoIterator<Item = &'a T>,
    path: impl AsRef<Path>,
) -> Result<usize, DatasetError> {
    let mut w = JsonlWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn write_samples<'a>(
    samples: impl IntoIterator<Item = &'a GroundingSample>,
    path: impl AsRef<Path>,
) -> Result<usize, DatasetError> {
    let records: Vec<SampleRecord> = samples.into_iter().map(SampleRecord::from).collect();
    write_jsonl(&records, path)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsRow {
    pub source: String,
    pub total: u64,
    pub slow_count: u64,
    pub fast_count: u64,
}

impl StatsRow {
    fn add(&mut self, other: &StatsRow) {
        self.total += other.total;
        self.slow_count += other.slow_count;
        self.fast_count += other.fast_count;
    }
}

/// Per-source fast/slow counts, rows sorted by source name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<StatsRow>,
    pub total: StatsRow,
}

impl DatasetStats {
    pub fn from_rows(rows: impl IntoIterator<Item = StatsRow>) -> Self {
        let mut by_source: BTreeMap<String, StatsRow> = BTreeMap::new();
        for r in rows {
            by_source
                .entry(r.source.clone())
                .or_insert_with(|| StatsRow {
                    source: r.source.clone(),
                    ..Default::default()
                })
                .add(&r);
        }
        let mut total = StatsRow {
            source: "Total".into(),
            ..Default::default()
        };
        for r in by_source.values() {
            total.add(r);
        }
        Self {
            rows: by_source.into_values().collect(),
            total,
        }
    }

    pub fn merge(&self, other: &DatasetStats) -> DatasetStats {
        Self::from_rows(self.rows.iter().chain(&other.rows).cloned())
    }
}

pub fn compute_stats<'a>(records: impl IntoIterator<Item = &'a TrainingRecord>) -> DatasetStats {
    DatasetStats::from_rows(records.into_iter().map(|r| StatsRow {
        source: r.metadata.source.clone(),
        total: 1,
        slow_count: u64::from(r.class == DataClass::Slow),
        fast_count: u64::from(r.class == DataClass::Fast),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountStyle {
    #[default]
    Exact,
    /// Thousands with a `K` suffix, e.g. `36K` or `1.5K`.
    Thousands,
}

pub fn format_count(n: u64, style: CountStyle) -> String {
    match style {
        CountStyle::Exact => n.to_string(),
        CountStyle::Thousands if n < 1000 => n.to_string(),
        CountStyle::Thousands if n % 1000 == 0 => format!("{}K", n / 1000),
        CountStyle::Thousands => format!("{:.1}K", n as f64 / 1000.0),
    }
}

/// Aligned table with columns `Source | Number | #S_Num | #F_Num` and a total row.
pub fn render_stats_table(stats: &DatasetStats, style: CountStyle) -> String {
    let header = ["Source", "Number", "#S_Num", "#F_Num"].map(String::from);
    let mut rows: Vec<[String; 4]> = vec![header];
    for r in stats.rows.iter().chain(std::iter::once(&stats.total)) {
        rows.push([
            r.source.clone(),
            format_count(r.total, style),
            format_count(r.slow_count, style),
            format_count(r.fast_count, style),
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let rule = "-".repeat(widths.iter().sum::<usize>() + 3 * 3);
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        if i == 1 || i == rows.len() - 1 {
            let _ = writeln!(out, "{rule}");
        }
        let _ = writeln!(
            out,
            "{:<w0$} | {:>w1$} | {:>w2$} | {:>w3$}",
            r[0],
            r[1],
            r[2],
            r[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const SHOT: &str = r#""screenshot":{"uri":"a.png","width_px":1920,"height_px":1080}"#;

    fn line(id: &str, bbox: &str) -> String {
        format!(
            r#"{{"id":"{id}","instruction":"click it",{bbox},{SHOT},"platform":"web","element_kind":"text","source":"t"}}"#
        )
    }

    #[test]
    fn reads_well_formed_file() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            line("a", r#""bbox":[0.1,0.1,0.2,0.2]"#),
            line("b", r#""bbox":[0.3,0.1,0.4,0.2]"#),
            line("c", r#""bbox":[0.5,0.1,0.6,0.2]"#),
        ]
        .join("\n");
        let p = write_file(&dir, "s.jsonl", &body);
        assert_eq!(load_samples(&p).unwrap().len(), 3);
    }

    #[test]
    fn inverted_box_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            line("a", r#""bbox":[0.1,0.1,0.2,0.2]"#),
            line("b", r#""bbox":[0.5,0.1,0.4,0.2]"#),
        ]
        .join("\n");
        let p = write_file(&dir, "s.jsonl", &body);
        let err = load_samples(&p).unwrap_err();
        assert!(matches!(err, DatasetError::Invariant { line: 2, .. }), "{err}");
    }

    #[test]
    fn pixel_boxes_are_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "s.jsonl", &line("a", r#""bbox_px":[480,270,960,540]"#));
        let s = load_samples(&p).unwrap();
        assert_eq!(s[0].bbox, NormBBox::new(0.25, 0.25, 0.5, 0.5).unwrap());
    }

    #[test]
    fn consistent_and_inconsistent_dual_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let ok = line("a", r#""bbox":[0.25,0.25,0.5,0.5],"bbox_px":[480,270,960,540]"#);
        let p = write_file(&dir, "ok.jsonl", &ok);
        assert!(load_samples(&p).is_ok());
        let bad = line("a", r#""bbox":[0.25,0.25,0.5,0.6],"bbox_px":[480,270,960,540]"#);
        let p = write_file(&dir, "bad.jsonl", &bad);
        assert!(matches!(load_samples(&p), Err(DatasetError::Invariant { line: 1, .. })));
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "s.jsonl", "{\"id\": 3}\n");
        assert!(matches!(load_samples(&p), Err(DatasetError::Schema { line: 1, .. })));
        let p = write_file(&dir, "n.jsonl", &line("a", r#""nobox":1"#));
        assert!(matches!(load_samples(&p), Err(DatasetError::Schema { line: 1, .. })));
        let p = write_file(&dir, "j.jsonl", "not json");
        assert!(matches!(load_samples(&p), Err(DatasetError::Schema { line: 1, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = [
            line("a", r#""bbox":[0.1,0.1,0.2,0.2]"#),
            "".to_string(),
            line("a", r#""bbox":[0.1,0.1,0.2,0.2]"#),
        ]
        .join("\n");
        let p = write_file(&dir, "s.jsonl", &body);
        assert!(matches!(load_samples(&p), Err(DatasetError::Invariant { line: 3, .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_samples("/nonexistent/x.jsonl"),
            Err(DatasetError::Io { .. })
        ));
    }

    fn rec(id: &str, source: &str, class: DataClass) -> TrainingRecord {
        let (completion, stage) = match class {
            DataClass::Fast => ("<|grounding_start|>(0.50,0.35)<|grounding_end|>".to_string(), 1),
            DataClass::Slow => (
                "<|summary_start|>s<|summary_end|><|grounding_start|>(0.50,0.35)<|grounding_end|>".to_string(),
                2,
            ),
        };
        TrainingRecord {
            id: id.into(),
            screenshot: "a.png".into(),
            prompt: "p".into(),
            completion,
            class,
            metadata: TrainingMetadata {
                source: source.into(),
                platform: Platform::Web,
                element_kind: ElementKind::Text,
                verified_point: [0.5, 0.35],
                stage,
            },
        }
    }

    #[test]
    fn stats_hand_counts() {
        assert_eq!(compute_stats(&[]).total.total, 0);
        let mut recs = Vec::new();
        for i in 0..4 {
            recs.push(rec(&format!("s{i}"), "src", DataClass::Slow));
        }
        for i in 0..6 {
            recs.push(rec(&format!("f{i}"), "src", DataClass::Fast));
        }
        let s = compute_stats(&recs);
        assert_eq!(
            s.rows,
            vec![StatsRow {
                source: "src".into(),
                total: 10,
                slow_count: 4,
                fast_count: 6
            }]
        );
        assert_eq!(s.total.total, 10);
    }

    #[test]
    fn count_formatting() {
        assert_eq!(format_count(36_000, CountStyle::Thousands), "36K");
        assert_eq!(format_count(1_500, CountStyle::Thousands), "1.5K");
        assert_eq!(format_count(999, CountStyle::Thousands), "999");
        assert_eq!(format_count(36_000, CountStyle::Exact), "36000");
    }

    #[test]
    fn training_records_roundtrip_and_revalidate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl.gz");
        let recs = vec![rec("a", "x", DataClass::Fast), rec("b", "y", DataClass::Slow)];
        assert_eq!(write_jsonl(&recs, &p).unwrap(), 2);
        let back: Vec<_> = read_training_records(&p).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, recs);

        let mut wrong = rec("c", "x", DataClass::Fast);
        wrong.class = DataClass::Slow;
        let p = dir.path().join("w.jsonl");
        write_jsonl(&[wrong], &p).unwrap();
        let err = read_training_records(&p).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, DatasetError::Invariant { line: 1, .. }));
    }

    #[test]
    fn training_record_key_order() {
        let line = serde_json::to_string(&rec("a", "x", DataClass::Fast)).unwrap();
        let keys = ["\"id\"", "\"screenshot\"", "\"prompt\"", "\"completion\"", "\"class\"", "\"metadata\""];
        let pos: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn empty_write_makes_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        assert_eq!(write_jsonl::<TrainingRecord>(&[], &p).unwrap(), 0);
        assert_eq!(std::fs::read(&p).unwrap().len(), 0);
    }
}
