//! Unified multi-modal telemetry: the record schema shared by the simulator,
//! the validation oracle and every RCA algorithm, plus file persistence and
//! windowed queries.
//!
//! Records are stored as line-delimited JSON (`*.ndrec`), one record per
//! line, with a stable field order. Timestamps are decimal seconds with
//! millisecond precision.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRICS_FILE: &str = "metrics.ndrec";
pub const LOGS_FILE: &str = "logs.ndrec";
pub const TRACES_FILE: &str = "traces.ndrec";
pub const META_FILE: &str = "meta.rec";
pub const LABEL_FILE: &str = "label.rec";

/// Milliseconds since case start. All engine arithmetic is integer
/// milliseconds; conversion to decimal seconds happens only at the
/// serialization boundary.
pub type TimeMs = u64;

pub fn ms_to_secs(ms: TimeMs) -> f64 {
    ms as f64 / 1000.0
}

pub fn secs_to_ms(secs: f64) -> TimeMs {
    (secs * 1000.0).round() as TimeMs
}

/// Half-open time window `[start, end)` in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start_ms: TimeMs,
    pub end_ms: TimeMs,
}

impl Window {
    pub fn new(start_ms: TimeMs, end_ms: TimeMs) -> Self {
        Window { start_ms, end_ms }
    }

    pub fn contains(&self, t_ms: TimeMs) -> bool {
        t_ms >= self.start_ms && t_ms < self.end_ms
    }

    pub fn duration_ms(&self) -> TimeMs {
        self.end_ms.saturating_sub(self.start_ms)
    }

    pub fn duration_secs(&self) -> f64 {
        ms_to_secs(self.duration_ms())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpanStatus {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "ERROR")]
    Error,
    #[serde(rename = "TIMEOUT")]
    Timeout,
}

impl SpanStatus {
    pub fn is_ok(self) -> bool {
        self == SpanStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    #[serde(rename = "INFO")]
    Info,
    #[serde(rename = "WARN")]
    Warn,
    #[serde(rename = "ERROR")]
    Error,
}

/// One sampled metric value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    /// Seconds since case start, millisecond precision.
    pub timestamp: f64,
    pub service: String,
    pub pod: String,
    pub container: String,
    pub metric: String,
    pub value: f64,
}

/// One log line. `trace_id` is empty for background logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub timestamp: f64,
    pub service: String,
    pub pod: String,
    pub trace_id: String,
    pub severity: Severity,
    pub template: String,
    pub message: String,
}

// f64 timestamps are always ms-quantized, so Eq is well defined.
impl Eq for MetricPoint {}

/// One timed operation within a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub trace_id: String,
    pub span_id: String,
    /// Empty for the root span of a trace.
    pub parent_span_id: String,
    pub service: String,
    pub pod: String,
    pub operation: String,
    /// Seconds since case start, millisecond precision.
    pub start: f64,
    /// Milliseconds.
    pub duration: f64,
    pub status: SpanStatus,
    pub http_code: u16,
}

impl Span {
    pub fn is_root(&self) -> bool {
        self.parent_span_id.is_empty()
    }

    pub fn start_ms(&self) -> TimeMs {
        secs_to_ms(self.start)
    }

    pub fn end_ms(&self) -> TimeMs {
        self.start_ms() + self.duration.round() as TimeMs
    }
}

/// The full record set of one case, spanning the normal and fault windows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetryBundle {
    pub metrics: Vec<MetricPoint>,
    pub logs: Vec<LogRecord>,
    pub spans: Vec<Span>,
    pub normal_window: Option<Window>,
    pub fault_window: Option<Window>,
}

impl TelemetryBundle {
    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty() && self.logs.is_empty() && self.spans.is_empty()
    }

    pub fn root_spans(&self) -> impl Iterator<Item = &Span> {
        self.spans.iter().filter(|s| s.is_root())
    }
}

/// Which record stream a query addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Metric,
    Log,
    Trace,
}

/// A record returned by [`query_window`].
#[derive(Debug, Clone, PartialEq)]
pub enum Record<'a> {
    Metric(&'a MetricPoint),
    Log(&'a LogRecord),
    Trace(&'a Span),
}

impl Record<'_> {
    pub fn timestamp(&self) -> f64 {
        match self {
            Record::Metric(m) => m.timestamp,
            Record::Log(l) => l.timestamp,
            Record::Trace(s) => s.start,
        }
    }

    fn field(&self, name: &str) -> Option<String> {
        match (self, name) {
            (Record::Metric(m), "service") => Some(m.service.clone()),
            (Record::Metric(m), "pod") => Some(m.pod.clone()),
            (Record::Metric(m), "container") => Some(m.container.clone()),
            (Record::Metric(m), "metric") => Some(m.metric.clone()),
            (Record::Log(l), "service") => Some(l.service.clone()),
            (Record::Log(l), "pod") => Some(l.pod.clone()),
            (Record::Log(l), "trace_id") => Some(l.trace_id.clone()),
            (Record::Log(l), "severity") => Some(format!("{:?}", l.severity).to_uppercase()),
            (Record::Log(l), "template") => Some(l.template.clone()),
            (Record::Trace(s), "service") => Some(s.service.clone()),
            (Record::Trace(s), "pod") => Some(s.pod.clone()),
            (Record::Trace(s), "operation") => Some(s.operation.clone()),
            (Record::Trace(s), "trace_id") => Some(s.trace_id.clone()),
            (Record::Trace(s), "span_id") => Some(s.span_id.clone()),
            (Record::Trace(s), "status") => Some(
                match s.status {
                    SpanStatus::Ok => "OK",
                    SpanStatus::Error => "ERROR",
                    SpanStatus::Timeout => "TIMEOUT",
                }
                .to_string(),
            ),
            _ => None,
        }
    }
}

const METRIC_FIELDS: &[&str] = &["service", "pod", "container", "metric"];
const LOG_FIELDS: &[&str] = &["service", "pod", "trace_id", "severity", "template"];
const TRACE_FIELDS: &[&str] = &[
    "service",
    "pod",
    "operation",
    "trace_id",
    "span_id",
    "status",
];

/// Records of one modality whose timestamp lies in `[start, end)`, filtered
/// by exact field equality (conjunctive), in stable (timestamp, insertion)
/// order. Bundle records are stored in emission order, so a stable sort by
/// timestamp preserves insertion order for ties.
pub fn query_window<'a>(
    store: &'a TelemetryBundle,
    window: Window,
    modality: Modality,
    filters: &BTreeMap<String, String>,
) -> Result<Vec<Record<'a>>> {
    let known: &[&str] = match modality {
        Modality::Metric => METRIC_FIELDS,
        Modality::Log => LOG_FIELDS,
        Modality::Trace => TRACE_FIELDS,
    };
    for key in filters.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::UnknownFilterField(key.clone()));
        }
    }
    let mut out: Vec<Record<'a>> = match modality {
        Modality::Metric => store.metrics.iter().map(Record::Metric).collect(),
        Modality::Log => store.logs.iter().map(Record::Log).collect(),
        Modality::Trace => store.spans.iter().map(Record::Trace).collect(),
    };
    out.retain(|r| {
        let t = secs_to_ms(r.timestamp());
        window.contains(t)
            && filters
                .iter()
                .all(|(k, v)| r.field(k).as_deref() == Some(v.as_str()))
    });
    out.sort_by(|a, b| a.timestamp().partial_cmp(&b.timestamp()).unwrap());
    Ok(out)
}

/// Summary statistics over a value series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn series_stats(values: &[f64]) -> Result<SeriesStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput("series_stats requires a nonempty series"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(SeriesStats {
        mean,
        std: var.sqrt(),
    })
}

/// Nearest-rank percentile: the value at 1-based index `ceil(q * n)` of the
/// sorted list.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile requires a nonempty series"));
    }
    assert!((0.0..=1.0).contains(&q), "quantile must be in [0, 1]");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[rank - 1])
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Case metadata plus later-appended verdict records live in `meta.rec`,
/// one JSON object per line tagged by `kind`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MetaLine {
    #[serde(rename = "case")]
    Case(super::simengine::CaseMeta),
    #[serde(rename = "verdict")]
    Verdict(super::oracle::ValidationVerdict),
    #[serde(rename = "pattern")]
    Pattern(super::oracle::PatternClass),
    #[serde(rename = "audit")]
    Audit(super::oracle::ObservabilityReport),
}

/// Writes the three record files plus `meta.rec` under `case_dir`.
/// Returns the paths written.
pub fn persist(
    bundle: &TelemetryBundle,
    meta: &super::simengine::CaseMeta,
    case_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(case_dir)?;
    let metrics = case_dir.join(METRICS_FILE);
    let logs = case_dir.join(LOGS_FILE);
    let traces = case_dir.join(TRACES_FILE);
    let meta_path = case_dir.join(META_FILE);
    write_lines(&metrics, &bundle.metrics)?;
    write_lines(&logs, &bundle.logs)?;
    write_lines(&traces, &bundle.spans)?;
    write_lines(&meta_path, &[MetaLine::Case(meta.clone())])?;
    Ok(vec![metrics, logs, traces, meta_path])
}

/// Reads a persisted case back into memory. Inverse of [`persist`].
pub fn read_case(case_dir: &Path) -> Result<(TelemetryBundle, super::simengine::CaseMeta)> {
    let meta_lines = read_meta(case_dir)?;
    let meta = meta_lines
        .iter()
        .find_map(|l| match l {
            MetaLine::Case(m) => Some(m.clone()),
            _ => None,
        })
        .ok_or_else(|| Error::MalformedRecord {
            path: case_dir.join(META_FILE),
            reason: "no case record".into(),
        })?;
    let bundle = TelemetryBundle {
        metrics: read_lines(&case_dir.join(METRICS_FILE))?,
        logs: read_lines(&case_dir.join(LOGS_FILE))?,
        spans: read_lines(&case_dir.join(TRACES_FILE))?,
        normal_window: Some(meta.normal_window),
        fault_window: Some(meta.fault_window),
    };
    Ok((bundle, meta))
}

pub fn read_meta(case_dir: &Path) -> Result<Vec<MetaLine>> {
    read_lines(&case_dir.join(META_FILE))
}

pub fn append_meta(case_dir: &Path, line: &MetaLine) -> Result<()> {
    let path = case_dir.join(META_FILE);
    let mut file = fs::OpenOptions::new().append(true).open(&path)?;
    let text = serde_json::to_string(line).map_err(|e| Error::Parse(e.to_string()))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_metric(ts: f64, service: &str, metric: &str, value: f64) -> MetricPoint {
        MetricPoint {
            timestamp: ts,
            service: service.into(),
            pod: format!("{service}-0"),
            container: format!("{service}-0-main"),
            metric: metric.into(),
            value,
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert_eq!(percentile(&values, 0.95).unwrap(), 95.0);
        assert_eq!(percentile(&values, 1.0).unwrap(), 100.0);
        assert_eq!(percentile(&values, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn stats_constant_series() {
        let s = series_stats(&[3.5, 3.5, 3.5]).unwrap();
        assert_eq!(s.mean, 3.5);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn stats_empty_is_error() {
        assert!(series_stats(&[]).is_err());
        assert!(percentile(&[], 0.5).is_err());
    }

    #[test]
    fn standard_normal_p95() {
        // 10,000 deterministic standard-normal samples via Box-Muller.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut samples = Vec::with_capacity(10_000);
        while samples.len() < 10_000 {
            let u1: f64 = rng.gen::<f64>().max(1e-12);
            let u2: f64 = rng.gen();
            samples.push((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos());
        }
        let p95 = percentile(&samples, 0.95).unwrap();
        assert!((1.55..=1.75).contains(&p95), "p95 = {p95}");
    }

    #[test]
    fn query_half_open_boundary() {
        let bundle = TelemetryBundle {
            metrics: vec![
                mk_metric(1.0, "a", "cpu_usage", 0.1),
                mk_metric(2.0, "a", "cpu_usage", 0.2),
                mk_metric(3.0, "a", "cpu_usage", 0.3),
            ],
            ..Default::default()
        };
        let got = query_window(
            &bundle,
            Window::new(1_000, 3_000),
            Modality::Metric,
            &BTreeMap::new(),
        )
        .unwrap();
        // record at exactly end (3.0 s) excluded
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn query_unknown_field() {
        let bundle = TelemetryBundle::default();
        let mut filters = BTreeMap::new();
        filters.insert("flavor".to_string(), "salty".to_string());
        let err = query_window(&bundle, Window::new(0, 10), Modality::Log, &filters);
        assert!(matches!(err, Err(Error::UnknownFilterField(_))));
    }

    #[test]
    fn query_filters_conjunctive() {
        let bundle = TelemetryBundle {
            metrics: vec![
                mk_metric(1.0, "a", "cpu_usage", 0.1),
                mk_metric(1.0, "b", "cpu_usage", 0.2),
                mk_metric(1.5, "a", "memory_usage", 0.3),
            ],
            ..Default::default()
        };
        let mut filters = BTreeMap::new();
        filters.insert("service".to_string(), "a".to_string());
        filters.insert("metric".to_string(), "cpu_usage".to_string());
        let got = query_window(
            &bundle,
            Window::new(0, 10_000),
            Modality::Metric,
            &filters,
        )
        .unwrap();
        assert_eq!(got.len(), 1);
    }
}
