//! Seeded generator of labeled multivariate series with two injected
//! anomaly types.
//!
//! Channels:
//!
//! | name       | normal behaviour                                      |
//! |------------|-------------------------------------------------------|
//! | `driver`   | sinusoid (period 48) plus noise                       |
//! | `follower` | `0.2 + 0.8 * driver` plus small noise                 |
//! | `gain_in`  | slower sinusoid (period 90) plus noise                |
//! | `gain_out` | `0.5 + g * (gain_in - 0.5)` with gain `g = 1`          |
//! | `aux_a`    | quadrature of the driver cycle plus noise             |
//! | `aux_b`    | second harmonic of the driver cycle plus noise        |
//!
//! Injected anomalies (test files only):
//!
//! * correlation loss: inside the span `follower` sticks at a flat level
//!   (by default the floor of its normal range), plus noise that is made
//!   exactly uncorrelated with `driver` over the span;
//! * change in relation: the gain `g` ramps from 1 to `drift_gain` over
//!   the first quarter of the span and stays there until the span ends.
//!
//! Labels are 1 on exactly the injected rows.

use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Schema, SeriesFile};
use crate::error::{Error, Result};

pub const CHANNELS: [&str; 6] = ["driver", "follower", "gain_in", "gain_out", "aux_a", "aux_b"];
pub const DRIVER: usize = 0;
pub const FOLLOWER: usize = 1;
pub const GAIN_IN: usize = 2;
pub const GAIN_OUT: usize = 3;
/// Lowest noise-free value of `follower`.
pub const FOLLOWER_FLOOR: f64 = 0.2 + 0.8 * 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Anomaly-free files (for training and validation).
    pub normal_files: usize,
    /// Files carrying injected anomalies.
    pub test_files: usize,
    /// Rows per file.
    pub rows: usize,
    /// Standard deviation of the additive sensor noise.
    pub noise: f64,
    pub correlation_loss_per_file: usize,
    pub relation_change_per_file: usize,
    /// Rows per injected span.
    pub span: usize,
    /// Gain reached during a change-in-relation span.
    pub drift_gain: f64,
    /// Noise level of the broken signal during correlation loss.
    pub broken_noise: f64,
    /// Level the broken signal sticks at; `None` holds the value at the
    /// span start.
    pub broken_level: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            normal_files: 2,
            test_files: 2,
            rows: 2000,
            noise: 0.01,
            correlation_loss_per_file: 3,
            relation_change_per_file: 2,
            span: 160,
            drift_gain: 2.5,
            broken_noise: 0.02,
            broken_level: Some(FOLLOWER_FLOOR),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let per_file = self.correlation_loss_per_file + self.relation_change_per_file;
        if self.rows == 0 || self.span == 0 {
            return Err(Error::Config("synth: rows and span must be >= 1".into()));
        }
        if self.test_files > 0 && per_file * (self.span * 2) > self.rows {
            return Err(Error::Config(format!(
                "synth: {per_file} spans of {} rows do not fit in {} rows (need 2x span per injection)",
                self.span, self.rows
            )));
        }
        if !(self.noise >= 0.0 && self.broken_noise >= 0.0 && self.drift_gain.is_finite()) {
            return Err(Error::Config("synth: noise levels must be >= 0".into()));
        }
        if self.broken_level.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Config("synth: broken_level must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    CorrelationLoss,
    RelationChange,
}

/// One injected span, `start..end` in rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub file: String,
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
    /// Channel that was altered.
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFile {
    pub series: SeriesFile,
    pub anomalous: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub files: Vec<SynthFile>,
    pub injections: Vec<Injection>,
}

/// Column layout of the generated CSV files.
pub fn schema() -> Schema {
    Schema {
        delimiter: ",".into(),
        timestamp: "t".into(),
        timestamp_format: None,
        channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
        label: Some("anomaly".into()),
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut files = Vec::new();
    let mut injections = Vec::new();
    for i in 0..cfg.normal_files + cfg.test_files {
        let anomalous = i >= cfg.normal_files;
        let name = if anomalous {
            format!("test_{}.csv", i - cfg.normal_files)
        } else {
            format!("normal_{i}.csv")
        };
        let mut channels = base_signals(cfg, &mut rng);
        let mut labels = vec![false; cfg.rows];
        if anomalous {
            let mut kinds = vec![AnomalyKind::CorrelationLoss; cfg.correlation_loss_per_file];
            kinds.extend(vec![AnomalyKind::RelationChange; cfg.relation_change_per_file]);
            // interleave kinds deterministically
            for k in (1..kinds.len()).rev() {
                kinds.swap(k, rng.gen_range(0..=k));
            }
            let slot = cfg.rows / kinds.len().max(1);
            for (s, kind) in kinds.into_iter().enumerate() {
                // the span sits in the second half of its slot so each file
                // starts with normal rows
                let lo = s * slot + slot / 2;
                let hi = (s + 1) * slot - cfg.span;
                let start = if hi > lo { rng.gen_range(lo..=hi) } else { lo.min(hi) };
                let end = start + cfg.span;
                let channel = inject(cfg, kind, &mut channels, start, end, &mut rng);
                labels[start..end].iter_mut().for_each(|l| *l = true);
                injections.push(Injection {
                    file: name.clone(),
                    kind,
                    start,
                    end,
                    channel: CHANNELS[channel].into(),
                });
            }
        }
        files.push(SynthFile {
            series: SeriesFile {
                source: name,
                offset: 0,
                timestamps: (0..cfg.rows).map(|t| t as f64).collect(),
                channel_names: CHANNELS.iter().map(|s| s.to_string()).collect(),
                channels,
                labels: Some(labels),
            },
            anomalous,
        });
    }
    Ok(SynthDataset { files, injections })
}

fn base_signals(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let phase: [f64; 2] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid std");
    let mut eps = || if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
    let mut out = vec![Vec::with_capacity(cfg.rows); CHANNELS.len()];
    for t in 0..cfg.rows {
        let tf = t as f64;
        let cycle = TAU * tf / 48.0 + phase[0];
        let driver = 0.5 + 0.35 * cycle.sin() + eps();
        let follower = 0.2 + 0.8 * driver + eps();
        let gain_in = 0.5 + 0.25 * (TAU * tf / 90.0 + phase[1]).sin() + eps();
        let gain_out = 0.5 + (gain_in - 0.5) + eps();
        let aux_a = 0.5 + 0.2 * cycle.cos() + eps();
        // second harmonic of the driver cycle: dependent but uncorrelated
        let aux_b = 0.5 + 0.15 * (2.0 * cycle).sin() + eps();
        for (c, v) in out
            .iter_mut()
            .zip([driver, follower, gain_in, gain_out, aux_a, aux_b])
        {
            c.push(v);
        }
    }
    out
}

/// Apply one anomaly in place and return the altered channel.
fn inject(
    cfg: &SynthConfig,
    kind: AnomalyKind,
    ch: &mut [Vec<f64>],
    start: usize,
    end: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    match kind {
        AnomalyKind::CorrelationLoss => {
            let level = cfg.broken_level.unwrap_or(ch[FOLLOWER][start]);
            let noise = Normal::new(0.0, cfg.broken_noise.max(f64::MIN_POSITIVE)).expect("valid std");
            let mut e: Vec<f64> = (start..end)
                .map(|_| if cfg.broken_noise > 0.0 { noise.sample(rng) } else { 0.0 })
                .collect();
            // remove any component along the driver so the span is uncorrelated
            let d = &ch[DRIVER][start..end];
            let dm = d.iter().sum::<f64>() / d.len() as f64;
            let em = e.iter().sum::<f64>() / e.len() as f64;
            let dd: f64 = d.iter().map(|v| (v - dm).powi(2)).sum();
            let de: f64 = d.iter().zip(&e).map(|(a, b)| (a - dm) * (b - em)).sum();
            let coef = if dd > 0.0 { de / dd } else { 0.0 };
            for (v, a) in e.iter_mut().zip(d) {
                *v -= em + coef * (a - dm);
            }
            for (t, v) in (start..end).zip(e) {
                ch[FOLLOWER][t] = level + v;
            }
            FOLLOWER
        }
        AnomalyKind::RelationChange => {
            let ramp = (end - start).div_ceil(4).max(1);
            for t in start..end {
                let frac = ((t - start) as f64 / ramp as f64).min(1.0);
                let g = 1.0 + (cfg.drift_gain - 1.0) * frac;
                let base = ch[GAIN_OUT][t] - ch[GAIN_IN][t];
                // keep the sensor noise of the original sample
                ch[GAIN_OUT][t] = 0.5 + g * (ch[GAIN_IN][t] - 0.5) + base;
            }
            GAIN_OUT
        }
    }
}

/// Pearson correlation; `None` when either input is constant or lengths
/// differ.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}

/// Write a series as CSV with the [`schema`] columns.
pub fn write_csv(series: &SeriesFile, path: &Path) -> Result<()> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let schema = schema();
    write!(out, "{}", schema.timestamp).map_err(io)?;
    for c in &series.channel_names {
        write!(out, ",{c}").map_err(io)?;
    }
    writeln!(out, ",{}", schema.label.as_deref().unwrap_or("anomaly")).map_err(io)?;
    for t in 0..series.len() {
        write!(out, "{}", series.timestamps[t]).map_err(io)?;
        for c in &series.channels {
            write!(out, ",{}", c[t]).map_err(io)?;
        }
        let label = series.labels.as_ref().is_some_and(|l| l[t]);
        writeln!(out, ",{}", u8::from(label)).map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_series;

    fn dataset() -> SynthDataset {
        generate(&SynthConfig::default()).unwrap()
    }

    #[test]
    fn normal_pair_is_highly_correlated() {
        for f in dataset().files.iter().filter(|f| !f.anomalous) {
            let r = pearson(&f.series.channels[DRIVER], &f.series.channels[FOLLOWER]).unwrap();
            assert!(r >= 0.99, "{r}");
        }
    }

    #[test]
    fn correlation_loss_breaks_the_pair() {
        let ds = dataset();
        let spans: Vec<_> = ds
            .injections
            .iter()
            .filter(|i| i.kind == AnomalyKind::CorrelationLoss)
            .collect();
        assert_eq!(spans.len(), 6);
        for inj in spans {
            let f = ds.files.iter().find(|f| f.series.source == inj.file).unwrap();
            let c = &f.series.channels;
            let r = pearson(&c[DRIVER][inj.start..inj.end], &c[FOLLOWER][inj.start..inj.end]).unwrap();
            assert!(r.abs() < 0.2, "{r}");
        }
    }

    #[test]
    fn broken_level_sets_the_flat_line() {
        let mean_in_span = |cfg: &SynthConfig| {
            let ds = generate(cfg).unwrap();
            let inj = ds.injections.iter().find(|i| i.kind == AnomalyKind::CorrelationLoss).unwrap();
            let f = ds.files.iter().find(|f| f.series.source == inj.file).unwrap();
            let span = &f.series.channels[FOLLOWER][inj.start..inj.end];
            (span.iter().sum::<f64>() / span.len() as f64, f.series.channels[FOLLOWER][inj.start - 1])
        };
        let (floor, _) = mean_in_span(&SynthConfig::default());
        assert!((floor - FOLLOWER_FLOOR).abs() < 1e-12, "{floor}");
        let held = SynthConfig {
            broken_level: None,
            broken_noise: 0.0,
            ..SynthConfig::default()
        };
        // without noise the held level is the first value of the span,
        // which is within sensor noise of the previous row
        let (level, before) = mean_in_span(&held);
        assert!((level - before).abs() < 0.1, "{level} vs {before}");
    }

    #[test]
    fn labels_mark_exactly_the_spans() {
        let ds = dataset();
        for f in &ds.files {
            let mut expect = vec![false; f.series.len()];
            for inj in ds.injections.iter().filter(|i| i.file == f.series.source) {
                expect[inj.start..inj.end].iter_mut().for_each(|l| *l = true);
            }
            assert_eq!(f.series.labels.as_ref().unwrap(), &expect);
        }
    }

    #[test]
    fn spans_do_not_overlap_and_leave_a_normal_prefix() {
        let ds = dataset();
        for f in ds.files.iter().filter(|f| f.anomalous) {
            let mut spans: Vec<_> = ds
                .injections
                .iter()
                .filter(|i| i.file == f.series.source)
                .map(|i| (i.start, i.end))
                .collect();
            spans.sort();
            assert!(spans[0].0 >= 64);
            assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
        }
    }

    #[test]
    fn relation_change_shifts_gain() {
        let ds = dataset();
        let inj = ds
            .injections
            .iter()
            .find(|i| i.kind == AnomalyKind::RelationChange)
            .unwrap();
        let f = ds.files.iter().find(|f| f.series.source == inj.file).unwrap();
        let c = &f.series.channels;
        let late = inj.end - 10..inj.end;
        let fit = |r: std::ops::Range<usize>| {
            let x = &c[GAIN_IN][r.clone()];
            let y = &c[GAIN_OUT][r];
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            let my = y.iter().sum::<f64>() / y.len() as f64;
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            sxy / sxx
        };
        assert!(fit(late) > 2.0);
        assert!((fit(0..inj.start) - 1.0).abs() < 0.1);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(dataset(), dataset());
        let other = generate(&SynthConfig {
            seed: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(dataset().files[0].series.channels, other.files[0].series.channels);
    }

    #[test]
    fn csv_round_trip() {
        let ds = dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let f = &ds.files[2].series;
        write_csv(f, &path).unwrap();
        let back = parse_series(std::fs::File::open(&path).unwrap(), &f.source, &schema()).unwrap();
        assert_eq!(&back, f);
    }

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn oversized_spans_rejected() {
        let cfg = SynthConfig {
            rows: 100,
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
