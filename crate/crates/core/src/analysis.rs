//! Ranking and derived metrics over profiling results, plus report output.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ObjectiveWeights;
use crate::profiler::ProfileRecord;
use crate::storage::ProbeReport;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty input")]
    EmptyVector,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("objective weights must be finite and non-negative")]
    NegativeWeight,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("no storage probe available")]
    MissingProbe,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    IoFailure(#[from] std::io::Error),
}

/// Min-max scaling to [0, 1]; a constant vector maps to zeros.
pub fn normalize(values: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyVector);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span == 0.0 {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedStrategy {
    pub strategy_id: String,
    pub label: String,
    pub split_index: usize,
    pub preprocessing_seconds: f64,
    pub storage_bytes: u64,
    pub throughput_sps: f64,
    pub norm_preprocessing: f64,
    pub norm_storage: f64,
    pub norm_throughput: f64,
    pub score: f64,
    /// 1 is best.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRanking {
    /// Ordered by rank.
    pub entries: Vec<RankedStrategy>,
    pub chosen: String,
    pub weights: ObjectiveWeights,
}

impl StrategyRanking {
    pub fn entry(&self, strategy_id: &str) -> Option<&RankedStrategy> {
        self.entries.iter().find(|e| e.strategy_id == strategy_id)
    }
}

/// Scores `w_p * p + w_s * s + w_t * (1 - t)` over normalized metrics; the
/// lowest score ranks first. Ties go to the smaller split, then the smaller
/// storage, then the strategy id.
pub fn score_and_rank(records: &[ProfileRecord], weights: ObjectiveWeights) -> Result<StrategyRanking, AnalysisError> {
    if !weights.is_finite() || weights.w_p < 0.0 || weights.w_s < 0.0 || weights.w_t < 0.0 {
        return Err(AnalysisError::NegativeWeight);
    }
    let p = normalize(&records.iter().map(|r| r.preprocessing_seconds).collect::<Vec<_>>())?;
    let s = normalize(&records.iter().map(|r| r.storage_bytes as f64).collect::<Vec<_>>())?;
    let t = normalize(&records.iter().map(|r| r.throughput_sps).collect::<Vec<_>>())?;
    let mut entries: Vec<RankedStrategy> = records
        .iter()
        .enumerate()
        .map(|(i, r)| RankedStrategy {
            strategy_id: r.strategy_id.clone(),
            label: r.label.clone(),
            split_index: r.strategy.split_index,
            preprocessing_seconds: r.preprocessing_seconds,
            storage_bytes: r.storage_bytes,
            throughput_sps: r.throughput_sps,
            norm_preprocessing: p[i],
            norm_storage: s[i],
            norm_throughput: t[i],
            score: weights.w_p * p[i] + weights.w_s * s[i] + weights.w_t * (1.0 - t[i]),
            rank: 0,
        })
        .collect();
    entries.sort_by(|a, b| {
        a.score
            .partial_cmp(&b.score)
            .unwrap_or(Ordering::Equal)
            .then(a.split_index.cmp(&b.split_index))
            .then(a.storage_bytes.cmp(&b.storage_bytes))
            .then_with(|| a.strategy_id.cmp(&b.strategy_id))
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.rank = i + 1;
    }
    Ok(StrategyRanking {
        chosen: entries[0].strategy_id.clone(),
        entries,
        weights,
    })
}

pub fn speedup(base_seconds: f64, parallel_seconds: f64) -> Result<f64, AnalysisError> {
    if !(base_seconds > 0.0) {
        return Err(AnalysisError::NonPositive("baseline time"));
    }
    if !(parallel_seconds > 0.0) {
        return Err(AnalysisError::NonPositive("parallel time"));
    }
    Ok(base_seconds / parallel_seconds)
}

/// Samples/s a backend can deliver when reads are the only cost.
pub fn theoretical_max_throughput(bandwidth: f64, bytes_per_sample: f64) -> Result<f64, AnalysisError> {
    if !(bandwidth > 0.0) {
        return Err(AnalysisError::NonPositive("bandwidth"));
    }
    if !(bytes_per_sample > 0.0) {
        return Err(AnalysisError::NonPositive("bytes per sample"));
    }
    Ok(bandwidth / bytes_per_sample)
}

pub const DEFAULT_IO_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    IoBound,
    CpuBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckVerdict {
    pub strategy_id: String,
    pub measured_read_rate: f64,
    pub probed_bandwidth: f64,
    pub utilization: f64,
    pub verdict: Bottleneck,
}

/// Compares a measured read rate with the probed bandwidth; at or above
/// `threshold` utilization the strategy is I/O bound.
pub fn classify_read_rate(
    strategy_id: &str,
    measured_read_rate: f64,
    probed_bandwidth: f64,
    threshold: f64,
) -> Result<BottleneckVerdict, AnalysisError> {
    if !(probed_bandwidth > 0.0) {
        return Err(AnalysisError::NonPositive("probed bandwidth"));
    }
    if !measured_read_rate.is_finite() || measured_read_rate < 0.0 {
        return Err(AnalysisError::NonFinite);
    }
    let utilization = measured_read_rate / probed_bandwidth;
    Ok(BottleneckVerdict {
        strategy_id: strategy_id.to_string(),
        measured_read_rate,
        probed_bandwidth,
        utilization,
        verdict: if utilization >= threshold {
            Bottleneck::IoBound
        } else {
            Bottleneck::CpuBound
        },
    })
}

pub fn classify_bottleneck(
    record: &ProfileRecord,
    probe: Option<&ProbeReport>,
    threshold: f64,
) -> Result<BottleneckVerdict, AnalysisError> {
    let probe = probe.ok_or(AnalysisError::MissingProbe)?;
    classify_read_rate(&record.strategy_id, record.read_rate(), probe.bandwidth, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// One observation: a strategy in one epoch of one repeat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub strategy: String,
    pub split: usize,
    pub compression: String,
    pub parallelism: u32,
    pub cache_mode: String,
    pub epoch: u32,
    pub repeat: u32,
    pub preproc_s: f64,
    pub storage_bytes: u64,
    pub throughput_sps: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub score: Option<f64>,
    pub rank: Option<usize>,
}

pub const CSV_HEADER: &str = "strategy,split,compression,parallelism,cache_mode,epoch,repeat,preproc_s,storage_bytes,throughput_sps,bytes_read,bytes_written,score,rank";

pub fn csv_rows(records: &[ProfileRecord], ranking: Option<&StrategyRanking>) -> Vec<CsvRow> {
    let mut rows = Vec::new();
    for r in records {
        let ranked = ranking.and_then(|k| k.entry(&r.strategy_id));
        for rep in &r.repeats {
            for e in &rep.epochs {
                rows.push(CsvRow {
                    strategy: r.strategy_id.clone(),
                    split: r.strategy.split_index,
                    compression: r.strategy.compression.to_string(),
                    parallelism: r.strategy.parallelism,
                    cache_mode: r.strategy.cache_mode.to_string(),
                    epoch: e.epoch,
                    repeat: rep.repeat,
                    preproc_s: r.preprocessing_seconds,
                    storage_bytes: r.storage_bytes,
                    throughput_sps: e.throughput,
                    bytes_read: e.io.bytes_read,
                    bytes_written: r.materialize.io.bytes_written,
                    score: ranked.map(|x| x.score),
                    rank: ranked.map(|x| x.rank),
                });
            }
        }
    }
    rows
}

pub fn write_csv(rows: &[CsvRow], out: impl Write) -> Result<(), AnalysisError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl Read) -> Result<Vec<CsvRow>, AnalysisError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(AnalysisError::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(default)]
    pub ranking: Option<StrategyRanking>,
    pub records: Vec<ProfileRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bottlenecks: Vec<BottleneckVerdict>,
}

pub fn emit_report(
    records: &[ProfileRecord],
    ranking: Option<&StrategyRanking>,
    format: ReportFormat,
    mut out: impl Write,
) -> Result<(), AnalysisError> {
    match format {
        ReportFormat::Csv => write_csv(&csv_rows(records, ranking), out),
        ReportFormat::Json => {
            let report = Report {
                ranking: ranking.cloned(),
                records: records.to_vec(),
                bottlenecks: Vec::new(),
            };
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
            Ok(())
        }
    }
}

pub fn format_bytes(bytes: f64) -> String {
    const UNITS: [&str; 5] = ["B", "KB", "MB", "GB", "TB"];
    let mut v = bytes;
    let mut i = 0;
    while v.abs() >= 1000.0 && i + 1 < UNITS.len() {
        v /= 1000.0;
        i += 1;
    }
    if i == 0 {
        format!("{v:.0} {}", UNITS[i])
    } else {
        format!("{v:.2} {}", UNITS[i])
    }
}

/// Ranking as an aligned text table.
pub fn render_table(ranking: &StrategyRanking) -> String {
    let header = ["rank", "strategy", "split", "preproc_s", "storage", "throughput_sps", "score"];
    let rows: Vec<[String; 7]> = ranking
        .entries
        .iter()
        .map(|e| {
            [
                e.rank.to_string(),
                e.strategy_id.clone(),
                e.split_index.to_string(),
                format!("{:.2}", e.preprocessing_seconds),
                format_bytes(e.storage_bytes as f64),
                format!("{:.1}", e.throughput_sps),
                format!("{:.4}", e.score),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i == 1 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "{c:>w$}");
            }
            out.push_str(if i + 1 < cells.len() { "  " } else { "\n" });
        }
    };
    line(&mut out, &header);
    for r in &rows {
        line(&mut out, &r.iter().map(String::as_str).collect::<Vec<_>>());
    }
    let w = ranking.weights;
    let _ = writeln!(
        out,
        "chosen: {}  (w_p={}, w_s={}, w_t={})",
        ranking.chosen, w.w_p, w.w_s, w.w_t
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::{CacheOutcome, EpochStats};
    use crate::model::Strategy;
    use crate::profiler::{EpochSelector, MaterializeStats, RepeatStats};
    use crate::storage::IoCounters;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as Gen;

    pub(crate) fn record(split: usize, p: f64, s: u64, t: f64) -> ProfileRecord {
        let epochs = |repeat| RepeatStats {
            repeat,
            throughput: t,
            epochs: (0..2)
                .map(|epoch| EpochStats {
                    epoch,
                    samples: 100,
                    wall_seconds: 100.0 / t,
                    throughput: t,
                    io: IoCounters {
                        bytes_read: s,
                        ..IoCounters::default()
                    },
                    cache: CacheOutcome::Disabled,
                    step_seconds: 0.0,
                    deserialize_seconds: 0.0,
                })
                .collect(),
        };
        ProfileRecord {
            strategy_id: format!("split{split}"),
            label: format!("split{split}"),
            strategy: Strategy::new(split),
            preprocessing_seconds: p,
            storage_bytes: s,
            throughput_sps: t,
            throughput_stddev: 0.0,
            samples_per_epoch: 100,
            epoch_selector: EpochSelector::First,
            materialize: MaterializeStats {
                seconds: p,
                bytes: s,
                records: 100,
                payload_bytes: s,
                io: IoCounters {
                    bytes_written: s,
                    ..IoCounters::default()
                },
                dir: None,
            },
            repeats: (0..5).map(epochs).collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[10.0, 20.0, 30.0]).unwrap(), [0.0, 0.5, 1.0]);
        assert_eq!(normalize(&[7.0, 7.0, 7.0]).unwrap(), [0.0, 0.0, 0.0]);
        assert!(matches!(normalize(&[]), Err(AnalysisError::EmptyVector)));
        assert!(matches!(normalize(&[1.0, f64::NAN]), Err(AnalysisError::NonFinite)));
    }

    #[test]
    fn throughput_only_picks_fastest() {
        let gb = 1_000_000_000;
        let recs = [
            record(0, 0.0, 146 * gb, 107.0),
            record(4, 9000.0, 1535 * gb, 576.0),
            record(2, 5000.0, 494 * gb, 1789.0),
        ];
        let r = score_and_rank(&recs, ObjectiveWeights::default()).unwrap();
        assert_eq!(r.chosen, "split2");
        assert_eq!(r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn zero_weights_tie_break_on_split() {
        let recs = [record(3, 1.0, 10, 5.0), record(1, 2.0, 20, 6.0), record(2, 3.0, 5, 7.0)];
        let r = score_and_rank(&recs, ObjectiveWeights::new(0.0, 0.0, 0.0)).unwrap();
        assert!(r.entries.iter().all(|e| e.score == 0.0));
        assert_eq!(r.chosen, "split1");
    }

    #[test]
    fn negative_weight_rejected() {
        let recs = [record(0, 1.0, 10, 5.0)];
        assert!(matches!(
            score_and_rank(&recs, ObjectiveWeights::new(-1.0, 0.0, 1.0)),
            Err(AnalysisError::NegativeWeight)
        ));
        assert!(matches!(
            score_and_rank(&[], ObjectiveWeights::default()),
            Err(AnalysisError::EmptyVector)
        ));
    }

    #[test]
    fn single_strategy_ranks() {
        let r = score_and_rank(&[record(1, 1.0, 10, 5.0)], ObjectiveWeights::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(r.entries[0].rank, 1);
        assert_eq!(r.entries[0].score, 1.0);
    }

    #[test]
    fn speedup_and_max_throughput() {
        assert_eq!(speedup(100.0, 25.0).unwrap(), 4.0);
        assert_eq!(speedup(100.0, 100.0).unwrap(), 1.0);
        assert!(speedup(0.0, 1.0).is_err());
        assert!(speedup(1.0, -1.0).is_err());
        let t = theoretical_max_throughput(910e6, 0.1147e6).unwrap();
        assert!((t - 7933.7).abs() < 1.0, "{t}");
        assert_eq!(theoretical_max_throughput(5.0, 5.0).unwrap(), 1.0);
        assert!(theoretical_max_throughput(0.0, 5.0).is_err());
    }

    #[test]
    fn bottleneck_classification() {
        let io = classify_read_rate("a", 828e6, 910e6, DEFAULT_IO_THRESHOLD).unwrap();
        assert_eq!(io.verdict, Bottleneck::IoBound);
        let cpu = classify_read_rate("b", 491e6, 910e6, DEFAULT_IO_THRESHOLD).unwrap();
        assert_eq!(cpu.verdict, Bottleneck::CpuBound);
        let edge = classify_read_rate("c", 80.0, 100.0, 0.8).unwrap();
        assert_eq!(edge.verdict, Bottleneck::IoBound);
        assert!(matches!(
            classify_bottleneck(&record(1, 1.0, 10, 5.0), None, 0.8),
            Err(AnalysisError::MissingProbe)
        ));
    }

    #[test]
    fn empty_csv_is_header_only() {
        let mut buf = Vec::new();
        emit_report(&[], None, ReportFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_has_one_row_per_observation() {
        let recs: Vec<_> = (0..5).map(|i| record(i, i as f64, 10 + i as u64, 5.0 + i as f64)).collect();
        let ranking = score_and_rank(&recs, ObjectiveWeights::default()).unwrap();
        let mut buf = Vec::new();
        emit_report(&recs, Some(&ranking), ReportFormat::Csv, &mut buf).unwrap();
        let rows = read_csv(&buf[..]).unwrap();
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().all(|r| r.rank.is_some()));
    }

    #[test]
    fn json_csv_json_roundtrip() {
        let recs: Vec<_> = (0..3)
            .map(|i| record(i, 1.0 / 3.0 + i as f64, 123_456_789 + i as u64, 1789.123456789 / (i + 1) as f64))
            .collect();
        let mut json = Vec::new();
        emit_report(&recs, None, ReportFormat::Json, &mut json).unwrap();
        let report: Report = serde_json::from_slice(&json).unwrap();
        let mut csv = Vec::new();
        emit_report(&report.records, None, ReportFormat::Csv, &mut csv).unwrap();
        let rows = read_csv(&csv[..]).unwrap();
        let sig9 = |a: f64, b: f64| a == b || ((a - b) / a).abs() < 5e-9;
        for row in &rows {
            let r = report.records.iter().find(|r| r.strategy_id == row.strategy).unwrap();
            assert!(sig9(row.preproc_s, r.preprocessing_seconds));
            assert!(sig9(row.throughput_sps, r.repeats[row.repeat as usize].epochs[row.epoch as usize].throughput));
            assert_eq!(row.storage_bytes, r.storage_bytes);
            assert_eq!(row.bytes_written, r.materialize.io.bytes_written);
        }
    }

    #[test]
    fn table_lists_every_strategy() {
        let recs: Vec<_> = (0..3).map(|i| record(i, 1.0, 10, 5.0 + i as f64)).collect();
        let t = render_table(&score_and_rank(&recs, ObjectiveWeights::default()).unwrap());
        assert_eq!(t.lines().count(), 5);
        assert!(t.lines().nth(1).unwrap().contains("split2"));
    }

    fn metrics() -> impl Gen<Value = Vec<(f64, u64, f64)>> {
        prop::collection::vec((0.0f64..1e4, 1u64..1_000_000_000, 1.0f64..1e4), 1..12)
    }

    fn build(m: &[(f64, u64, f64)]) -> Vec<ProfileRecord> {
        m.iter()
            .enumerate()
            .map(|(i, &(p, s, t))| record(i, p, s, t))
            .collect()
    }

    fn order(r: &StrategyRanking) -> Vec<String> {
        r.entries.iter().map(|e| e.strategy_id.clone()).collect()
    }

    proptest! {
        #[test]
        fn normalize_is_affine_invariant(v in prop::collection::vec(-1e3f64..1e3, 1..20), a in 0.5f64..20.0, b in -100.0f64..100.0) {
            let x = normalize(&v).unwrap();
            let y = normalize(&v.iter().map(|x| a * x + b).collect::<Vec<_>>()).unwrap();
            for (x, y) in x.iter().zip(&y) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn ranking_is_affine_invariant(m in metrics(), a in 0.5f64..8.0, b in 0.0f64..50.0, w in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0)) {
            let weights = ObjectiveWeights::new(w.0, w.1, w.2);
            let base = score_and_rank(&build(&m), weights).unwrap();
            let scaled: Vec<_> = m.iter().map(|&(p, s, t)| (a * p + b, s, a * t + b)).collect();
            let other = score_and_rank(&build(&scaled), weights).unwrap();
            for (x, y) in base.entries.iter().zip(&other.entries) {
                prop_assert!((x.score - y.score).abs() < 1e-9);
            }
            // Scores can differ in the last bit; compare ranks only where scores are well separated.
            let sep = base.entries.windows(2).all(|w| (w[1].score - w[0].score).abs() > 1e-6 || w[1].score == w[0].score);
            if sep {
                prop_assert_eq!(order(&base), order(&other));
            }
        }

        #[test]
        fn higher_throughput_never_ranks_worse(m in metrics()) {
            let r = score_and_rank(&build(&m), ObjectiveWeights::default()).unwrap();
            for a in &r.entries {
                for b in &r.entries {
                    if a.throughput_sps > b.throughput_sps {
                        prop_assert!(a.rank < b.rank);
                    }
                }
            }
        }

        #[test]
        fn score_is_bounded(m in metrics(), w in (0.0f64..2.0, 0.0f64..2.0, 0.0f64..2.0)) {
            let weights = ObjectiveWeights::new(w.0, w.1, w.2);
            let r = score_and_rank(&build(&m), weights).unwrap();
            for e in &r.entries {
                prop_assert!(e.score >= 0.0 && e.score <= weights.sum() + 1e-12);
            }
        }

        #[test]
        fn classification_is_deterministic(measured in 0.0f64..2e9, probed in 1.0f64..2e9, theta in 0.0f64..1.0) {
            let a = classify_read_rate("x", measured, probed, theta).unwrap();
            let b = classify_read_rate("x", measured, probed, theta).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.verdict == Bottleneck::IoBound, measured / probed >= theta);
        }
    }
}
