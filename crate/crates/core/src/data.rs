//! Delimited time-series ingestion, min-max normalisation and sliding
//! windows.

use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Column layout of a delimited series file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    /// Single-character field delimiter.
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    pub timestamp: String,
    /// chrono format for non-numeric timestamps.
    #[serde(default)]
    pub timestamp_format: Option<String>,
    pub channels: Vec<String>,
    /// 0/1 anomaly label column; absent for unlabeled data.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_delimiter() -> String {
    ",".into()
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = toml::from_str(&text).map_err(|e| Error::Data {
            path: path.into(),
            message: e.to_string(),
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delimiter.len() != 1 {
            return Err(Error::Config(format!(
                "schema delimiter must be one byte, got {:?}",
                self.delimiter
            )));
        }
        if self.channels.is_empty() {
            return Err(Error::Config("schema lists no channels".into()));
        }
        Ok(())
    }
}

/// One parsed series (or a contiguous slice of one).
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFile {
    pub source: String,
    /// Row index of the first sample within the original file.
    pub offset: usize,
    pub timestamps: Vec<f64>,
    pub channel_names: Vec<String>,
    /// One vector per channel, all of equal length.
    pub channels: Vec<Vec<f64>>,
    pub labels: Option<Vec<bool>>,
}

impl SeriesFile {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn slice(&self, range: Range<usize>) -> SeriesFile {
        SeriesFile {
            source: self.source.clone(),
            offset: self.offset + range.start,
            timestamps: self.timestamps[range.clone()].to_vec(),
            channel_names: self.channel_names.clone(),
            channels: self.channels.iter().map(|c| c[range.clone()].to_vec()).collect(),
            labels: self.labels.as_ref().map(|l| l[range].to_vec()),
        }
    }

    /// Maximal contiguous runs of rows labeled normal. Unlabeled series are
    /// returned whole.
    pub fn normal_runs(&self) -> Vec<SeriesFile> {
        let Some(labels) = &self.labels else {
            return vec![self.clone()];
        };
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &anomalous) in labels.iter().chain(std::iter::once(&true)).enumerate() {
            match (anomalous, start) {
                (false, None) => start = Some(i),
                (true, Some(s)) => {
                    runs.push(self.slice(s..i));
                    start = None;
                }
                _ => {}
            }
        }
        runs
    }
}

/// Load a delimited file according to `schema`.
pub fn load_series(path: &Path, schema: &Schema) -> Result<SeriesFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_series(file, &path.display().to_string(), schema)
}

/// Parse delimited text; `source` names the input in errors and provenance.
pub fn parse_series(reader: impl Read, source: &str, schema: &Schema) -> Result<SeriesFile> {
    schema.validate()?;
    let data_err = |message: String| Error::Data {
        path: source.into(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter.as_bytes()[0])
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| data_err(format!("header: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(data_err("empty file".into()));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(format!("missing column '{name}'")))
    };
    let ts_col = column(&schema.timestamp)?;
    let ch_cols = schema
        .channels
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_col = schema.label.as_deref().map(column).transpose()?;
    let format = schema
        .timestamp_format
        .as_deref()
        .unwrap_or("%Y-%m-%d %H:%M:%S");

    let mut timestamps = Vec::new();
    let mut channels = vec![Vec::new(); ch_cols.len()];
    let mut labels = label_col.map(|_| Vec::new());
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let parse_err = |message: String| Error::Parse {
            path: source.into(),
            row,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let ts = parse_timestamp(field(ts_col), format)
            .ok_or_else(|| parse_err(format!("bad timestamp {:?}", field(ts_col))))?;
        if let Some(&prev) = timestamps.last() {
            if ts <= prev {
                return Err(parse_err("timestamps are not strictly increasing".into()));
            }
        }
        timestamps.push(ts);
        for (k, &col) in ch_cols.iter().enumerate() {
            let v: f64 = field(col)
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    parse_err(format!(
                        "column '{}': not a number: {:?}",
                        schema.channels[k],
                        field(col)
                    ))
                })?;
            channels[k].push(v);
        }
        if let (Some(col), Some(out)) = (label_col, labels.as_mut()) {
            let v: f64 = field(col)
                .parse()
                .map_err(|_| parse_err(format!("bad label {:?}", field(col))))?;
            if v == 0.0 {
                out.push(false);
            } else if v == 1.0 {
                out.push(true);
            } else {
                return Err(parse_err(format!("label must be 0 or 1, got {v}")));
            }
        }
    }
    if timestamps.is_empty() {
        return Err(data_err("no data rows".into()));
    }
    Ok(SeriesFile {
        source: source.into(),
        offset: 0,
        timestamps,
        channel_names: schema.channels.clone(),
        channels,
        labels,
    })
}

fn parse_timestamp(s: &str, format: &str) -> Option<f64> {
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    [format, "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.and_utc().timestamp_millis() as f64 / 1000.0)
}

/// Per-channel minimum and maximum of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channel_names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Fit min-max statistics over every row of the given series.
pub fn fit_norm(train: &[&SeriesFile]) -> Result<NormStats> {
    let first = train
        .iter()
        .find(|s| !s.is_empty())
        .ok_or_else(|| Error::Empty("no training rows to fit normalisation".into()))?;
    let n = first.channels.len();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for s in train {
        if s.channels.len() != n {
            return Err(Error::shape("channel count", &[n], &[s.channels.len()]));
        }
        for (k, ch) in s.channels.iter().enumerate() {
            for &v in ch {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
    }
    Ok(NormStats {
        channel_names: first.channel_names.clone(),
        min,
        max,
    })
}

impl NormStats {
    /// `(v - min) / (max - min)` per channel; constant channels map to 0.
    pub fn apply(&self, series: &SeriesFile) -> Result<SeriesFile> {
        if series.channels.len() != self.min.len() {
            return Err(Error::shape(
                "channel count",
                &[self.min.len()],
                &[series.channels.len()],
            ));
        }
        let mut out = series.clone();
        for (k, ch) in out.channels.iter_mut().enumerate() {
            let span = self.max[k] - self.min[k];
            for v in ch.iter_mut() {
                *v = if span > 0.0 { (*v - self.min[k]) / span } else { 0.0 };
            }
        }
        Ok(out)
    }

    /// Inverse of [`NormStats::apply`] for one value of channel `k`.
    pub fn denormalize(&self, k: usize, v: f64) -> f64 {
        self.min[k] + v * (self.max[k] - self.min[k])
    }
}

/// How a window's label is derived from its points' labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Anomalous if any point is anomalous.
    #[default]
    Any,
    /// Anomalous if at least this fraction of points is anomalous.
    Fraction(f64),
}

impl LabelRule {
    fn label(self, points: &[bool]) -> bool {
        match self {
            LabelRule::Any => points.iter().any(|&p| p),
            LabelRule::Fraction(f) => {
                let hits = points.iter().filter(|&&p| p).count();
                hits as f64 >= f * points.len() as f64
            }
        }
    }
}

/// Where a window came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub file: String,
    /// Row index of the window's first sample in the original file.
    pub start: usize,
}

/// Fixed-size `[features, length]` windows with labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub features: usize,
    pub length: usize,
    pub stride: usize,
    pub channel_names: Vec<String>,
    pub windows: Vec<Tensor>,
    pub labels: Vec<Option<bool>>,
    pub provenance: Vec<Provenance>,
}

impl WindowSet {
    pub fn empty(features: usize, length: usize, stride: usize, channel_names: Vec<String>) -> Self {
        WindowSet {
            features,
            length,
            stride,
            channel_names,
            windows: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// True when every window carries a label.
    pub fn is_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }

    /// Append another set with the same geometry.
    pub fn extend(&mut self, other: WindowSet) -> Result<()> {
        if other.features != self.features || other.length != self.length {
            return Err(Error::shape(
                "window set",
                &[self.features, self.length],
                &[other.features, other.length],
            ));
        }
        self.windows.extend(other.windows);
        self.labels.extend(other.labels);
        self.provenance.extend(other.provenance);
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"AECFWSET";
    const VERSION: u32 = 1;

    /// Binary form: magic, version, JSON header (geometry, labels,
    /// provenance), then every window's values as little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = WindowSetHeader {
            features: self.features,
            length: self.length,
            stride: self.stride,
            channel_names: self.channel_names.clone(),
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::with_capacity(20 + header.len() + self.len() * self.features * self.length * 8);
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&Self::VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for w in &self.windows {
            for v in w.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("window set: {m}"));
        if bytes.len() < 20 || &bytes[..8] != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != Self::VERSION {
            return Err(Error::Version {
                found: version,
                supported: Self::VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("header length exceeds file"))?;
        let h: WindowSetHeader =
            serde_json::from_slice(&bytes[20..body_start]).map_err(|e| bad(&e.to_string()))?;
        let per = h.features * h.length;
        let body = &bytes[body_start..];
        if h.labels.len() != h.provenance.len() || body.len() != h.labels.len() * per * 8 {
            return Err(bad("body size does not match header"));
        }
        let windows = body
            .chunks_exact(per * 8)
            .map(|chunk| {
                let data = chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect();
                Tensor::new(vec![h.features, h.length], data)
            })
            .collect::<Result<_>>()?;
        Ok(WindowSet {
            features: h.features,
            length: h.length,
            stride: h.stride,
            channel_names: h.channel_names,
            windows,
            labels: h.labels,
            provenance: h.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct WindowSetHeader {
    features: usize,
    length: usize,
    stride: usize,
    channel_names: Vec<String>,
    labels: Vec<Option<bool>>,
    provenance: Vec<Provenance>,
}

/// Slide a window of `length` steps over `series` every `stride` steps.
/// A series shorter than `length` yields an empty set (with a warning).
pub fn make_windows(
    series: &SeriesFile,
    length: usize,
    stride: usize,
    rule: LabelRule,
) -> Result<WindowSet> {
    if length == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be >= 1".into()));
    }
    let n = series.channels.len();
    let mut set = WindowSet::empty(n, length, stride, series.channel_names.clone());
    if series.len() < length {
        log::warn!(
            "{} (rows {}..{}): {} rows is shorter than window length {length}; no windows",
            series.source,
            series.offset,
            series.offset + series.len(),
            series.len()
        );
        return Ok(set);
    }
    for start in (0..=series.len() - length).step_by(stride) {
        let mut data = Vec::with_capacity(n * length);
        for ch in &series.channels {
            data.extend_from_slice(&ch[start..start + length]);
        }
        set.windows.push(Tensor::new(vec![n, length], data)?);
        set.labels.push(
            series
                .labels
                .as_ref()
                .map(|l| rule.label(&l[start..start + length])),
        );
        set.provenance.push(Provenance {
            file: series.source.clone(),
            start: series.offset + start,
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(label: bool) -> Schema {
        Schema {
            delimiter: ";".into(),
            timestamp: "datetime".into(),
            timestamp_format: None,
            channels: vec!["a".into(), "b".into()],
            label: label.then(|| "anomaly".into()),
        }
    }

    fn series(values: &[f64], labels: Option<Vec<bool>>) -> SeriesFile {
        SeriesFile {
            source: "mem".into(),
            offset: 0,
            timestamps: (0..values.len()).map(|i| i as f64).collect(),
            channel_names: vec!["a".into()],
            channels: vec![values.to_vec()],
            labels,
        }
    }

    #[test]
    fn parses_three_rows() {
        let text = "datetime;a;b;anomaly\n\
                    2020-03-09 10:14:33;1.0;2.0;0\n\
                    2020-03-09 10:14:34;1.5;2.5;1.0\n\
                    2020-03-09 10:14:35;2.0;3.0;0.0\n";
        let s = parse_series(text.as_bytes(), "t.csv", &schema(true)).unwrap();
        assert_eq!(s.channels.len(), 2);
        assert_eq!(s.len(), 3);
        assert_eq!(s.channels[1], vec![2.0, 2.5, 3.0]);
        assert_eq!(s.labels, Some(vec![false, true, false]));
        assert_eq!(s.timestamps[1] - s.timestamps[0], 1.0);
    }

    #[test]
    fn unlabeled_file_accepted() {
        let text = "datetime;a;b\n1;1;2\n2;3;4\n";
        let s = parse_series(text.as_bytes(), "t.csv", &schema(false)).unwrap();
        assert!(s.labels.is_none());
    }

    #[test]
    fn non_numeric_cell_cites_row() {
        let text = "datetime;a;b\n1;1;2\n2;oops;4\n";
        let err = parse_series(text.as_bytes(), "t.csv", &schema(false)).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
    }

    #[test]
    fn missing_column_and_empty_file() {
        let text = "datetime;a\n1;1\n";
        let err = parse_series(text.as_bytes(), "t.csv", &schema(false)).unwrap_err();
        assert!(err.to_string().contains("missing column 'b'"));
        assert!(parse_series("".as_bytes(), "t.csv", &schema(false)).is_err());
        assert!(parse_series("datetime;a;b\n".as_bytes(), "t.csv", &schema(false)).is_err());
    }

    #[test]
    fn non_monotonic_timestamps_rejected() {
        let text = "datetime;a;b\n2;1;2\n2;3;4\n";
        assert!(parse_series(text.as_bytes(), "t.csv", &schema(false)).is_err());
    }

    #[test]
    fn min_max_examples() {
        let train = series(&[0.0, 5.0, 10.0], None);
        let stats = fit_norm(&[&train]).unwrap();
        assert_eq!(stats.apply(&train).unwrap().channels[0], vec![0.0, 0.5, 1.0]);
        let test = series(&[12.0], None);
        assert_eq!(stats.apply(&test).unwrap().channels[0], vec![1.2]);
        let flat = series(&[7.0, 7.0], None);
        let fs = fit_norm(&[&flat]).unwrap();
        assert_eq!(fs.apply(&flat).unwrap().channels[0], vec![0.0, 0.0]);
        assert!(fit_norm(&[]).is_err());
    }

    #[test]
    fn window_counts() {
        let s = series(&vec![0.0; 64], None);
        assert_eq!(make_windows(&s, 64, 1, LabelRule::Any).unwrap().len(), 1);
        let s = series(&vec![0.0; 66], None);
        assert_eq!(make_windows(&s, 64, 1, LabelRule::Any).unwrap().len(), 3);
        let s = series(&vec![0.0; 10], None);
        assert!(make_windows(&s, 64, 1, LabelRule::Any).unwrap().is_empty());
    }

    #[test]
    fn label_rules() {
        let mut labels = vec![false; 8];
        labels[7] = true;
        let s = series(&[0.0; 8], Some(labels));
        let any = make_windows(&s, 4, 4, LabelRule::Any).unwrap();
        assert_eq!(any.labels, vec![Some(false), Some(true)]);
        let frac = make_windows(&s, 4, 4, LabelRule::Fraction(0.5)).unwrap();
        assert_eq!(frac.labels, vec![Some(false), Some(false)]);
    }

    #[test]
    fn normal_runs_split_on_anomalies() {
        let labels = vec![false, false, true, true, false, true, false, false, false];
        let s = series(&[0.0; 9], Some(labels));
        let runs = s.normal_runs();
        let spans: Vec<(usize, usize)> = runs.iter().map(|r| (r.offset, r.len())).collect();
        assert_eq!(spans, vec![(0, 2), (4, 1), (6, 3)]);
    }

    #[test]
    fn provenance_tracks_offsets() {
        let s = series(&(0..20).map(f64::from).collect::<Vec<_>>(), None).slice(5..20);
        let w = make_windows(&s, 4, 5, LabelRule::Any).unwrap();
        let starts: Vec<usize> = w.provenance.iter().map(|p| p.start).collect();
        assert_eq!(starts, vec![5, 10, 15]);
        assert_eq!(w.windows[1].data(), &[10.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn window_set_bytes_round_trip() {
        let s = series(&(0..20).map(f64::from).collect::<Vec<_>>(), Some(vec![false; 20]));
        let w = make_windows(&s, 4, 3, LabelRule::Any).unwrap();
        assert_eq!(WindowSet::from_bytes(&w.to_bytes()).unwrap(), w);
    }
}
