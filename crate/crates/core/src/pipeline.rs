//! Raw-stream-to-frame-table preprocessing: per-second aggregation,
//! handedness correction, random subsequence splitting and lag/lead
//! feature columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{FrameRow, FrameTable, StreamRecord};
use crate::error::{Error, Result};
use crate::numeric::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;
use rand::Rng;

/// One channel of one participant's raw sensor samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStream {
    pub participant_id: u32,
    pub channel: String,
    pub sample_rate_hz: f64,
    /// (milliseconds since sequence start, value); timestamps non-decreasing.
    pub samples: Vec<(u64, f64)>,
}

impl RawStream {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz <= 0.0 {
            return Err(Error::validation("sample_rate_hz must be > 0"));
        }
        if self.samples.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::validation(format!(
                "stream {} participant {}: timestamps decrease",
                self.channel, self.participant_id
            )));
        }
        Ok(())
    }
}

/// Nominal sample rate by channel-name prefix; used when rebuilding streams
/// from CSV, which does not carry the rate.
pub fn channel_sample_rate(channel: &str) -> f64 {
    if channel.starts_with("accel") {
        20.0
    } else if channel.starts_with("cam") {
        25.0
    } else {
        1.0
    }
}

/// Group flat CSV records into per-(participant, channel) streams.
pub fn streams_from_records(records: &[StreamRecord]) -> Vec<RawStream> {
    let mut grouped: BTreeMap<(u32, String), Vec<(u64, f64)>> = BTreeMap::new();
    for rec in records {
        grouped
            .entry((rec.participant_id, rec.channel.clone()))
            .or_default()
            .push((rec.t_ms, rec.value));
    }
    grouped
        .into_iter()
        .map(|((participant_id, channel), mut samples)| {
            samples.sort_by_key(|&(t, _)| t);
            RawStream {
                participant_id,
                sample_rate_hz: channel_sample_rate(&channel),
                channel,
                samples,
            }
        })
        .collect()
}

/// The five per-second aggregates, in column order.
pub const AGG_STATS: [&str; 5] = ["mean", "median", "min", "max", "std"];

/// Aggregate one stream into per-second statistic rows.
///
/// Row `s` covers samples with `t_ms` in `[1000 s, 1000 (s+1))`. Output
/// spans seconds 0 through the second of the last sample; seconds with no
/// samples yield all-NaN cells. The standard deviation uses the population
/// form; the median averages the middle pair.
pub fn aggregate_second(stream: &RawStream) -> Result<Vec<[f64; 5]>> {
    stream.validate()?;
    if stream.samples.is_empty() {
        return Err(Error::validation(format!(
            "stream {} participant {} is empty",
            stream.channel, stream.participant_id
        )));
    }
    let last_second = (stream.samples.last().unwrap().0 / 1000) as usize;
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); last_second + 1];
    for &(t, v) in &stream.samples {
        if !v.is_nan() {
            buckets[(t / 1000) as usize].push(v);
        }
    }
    Ok(buckets
        .into_iter()
        .map(|mut values| {
            if values.is_empty() {
                return [f64::NAN; 5];
            }
            values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let median = if values.len() % 2 == 1 {
                values[values.len() / 2]
            } else {
                (values[values.len() / 2 - 1] + values[values.len() / 2]) / 2.0
            };
            let min = values[0];
            let max = *values.last().unwrap();
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            [mean, median, min, max, var.sqrt()]
        })
        .collect())
}

/// Build a continuous frame table (subsequence 0 per participant) from raw
/// streams. Columns are `<channel>_<stat>`, channels in name order; the
/// table length per participant is the maximum stream extent, padded with
/// missing cells.
pub fn frames_from_streams(streams: &[RawStream], n_classes: usize) -> Result<FrameTable> {
    let mut channels: Vec<String> = streams.iter().map(|s| s.channel.clone()).collect();
    channels.sort();
    channels.dedup();
    let columns: Vec<String> = channels
        .iter()
        .flat_map(|ch| AGG_STATS.iter().map(move |s| format!("{ch}_{s}")))
        .collect();

    let mut participants: Vec<u32> = streams.iter().map(|s| s.participant_id).collect();
    participants.sort_unstable();
    participants.dedup();

    let mut table = FrameTable::new(columns, n_classes);
    for &pid in &participants {
        // channel -> aggregated rows
        let mut agg: BTreeMap<&str, Vec<[f64; 5]>> = BTreeMap::new();
        for stream in streams.iter().filter(|s| s.participant_id == pid) {
            agg.insert(&stream.channel, aggregate_second(stream)?);
        }
        let n_seconds = agg.values().map(Vec::len).max().unwrap_or(0);
        for second in 0..n_seconds {
            let mut features = Vec::with_capacity(table.columns.len());
            for ch in &channels {
                match agg.get(ch.as_str()).and_then(|rows| rows.get(second)) {
                    Some(stats) => features.extend_from_slice(stats),
                    None => features.extend_from_slice(&[f64::NAN; 5]),
                }
            }
            table.rows.push(FrameRow {
                participant_id: pid,
                subsequence_id: 0,
                second_index: second as u32,
                features,
                room: None,
                soft_label: None,
            });
        }
    }
    Ok(table)
}

/// Reference column used to detect handedness.
pub const HANDEDNESS_REFERENCE: &str = "accel_y_mean";

/// Channels whose derived columns are sign-flipped for left-handed wearers.
pub const HANDEDNESS_FLIP_CHANNELS: [&str; 2] = ["accel_x", "accel_y"];

/// Outcome of the handedness correction.
#[derive(Debug, Clone, PartialEq)]
pub struct HandednessReport {
    /// (participant, flipped?) for every participant, in id order.
    pub flips: Vec<(u32, bool)>,
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    values.retain(|v| !v.is_nan());
    if values.is_empty() {
        return None;
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    })
}

/// Unify the two wrist-acceleration distributions.
///
/// A participant is flagged when the sign of their median per-second mean
/// y-acceleration differs from the majority sign across participants.
/// Flagged participants get their accelerometer x/y statistic columns
/// negated, with min and max swapped (negation reverses their order); the
/// std column is unchanged, matching what re-aggregating negated raw data
/// would produce. Applying the correction twice is the identity.
pub fn correct_handedness(table: &FrameTable) -> Result<(FrameTable, HandednessReport)> {
    let ref_col = table.column_index(HANDEDNESS_REFERENCE).ok_or_else(|| {
        Error::validation(format!(
            "handedness correction needs the {HANDEDNESS_REFERENCE} column"
        ))
    })?;
    let participants = table.participants();
    let mut signs: Vec<(u32, f64)> = Vec::with_capacity(participants.len());
    for &pid in &participants {
        let values: Vec<f64> = table
            .rows
            .iter()
            .filter(|r| r.participant_id == pid)
            .map(|r| r.features[ref_col])
            .collect();
        let median = median_of(values).unwrap_or(0.0);
        signs.push((pid, median));
    }
    let positive = signs.iter().filter(|(_, m)| *m > 0.0).count();
    let negative = signs.iter().filter(|(_, m)| *m < 0.0).count();
    // ties count as positive-majority
    let majority_positive = positive >= negative;

    let mut flips = Vec::with_capacity(signs.len());
    for &(pid, median) in &signs {
        let flip = if median == 0.0 {
            log::warn!("participant {pid}: exactly zero median y-acceleration; not flipped");
            false
        } else {
            (median > 0.0) != majority_positive
        };
        flips.push((pid, flip));
    }

    // columns to transform: (mean idx, median idx, min idx, max idx) per channel
    let mut flip_plan: Vec<(usize, usize, usize, usize)> = Vec::new();
    for ch in HANDEDNESS_FLIP_CHANNELS {
        let find = |stat: &str| table.column_index(&format!("{ch}_{stat}"));
        if let (Some(mean), Some(median), Some(min), Some(max)) =
            (find("mean"), find("median"), find("min"), find("max"))
        {
            flip_plan.push((mean, median, min, max));
        }
    }

    let mut out = table.clone();
    for row in &mut out.rows {
        let flagged = flips
            .iter()
            .find(|(pid, _)| *pid == row.participant_id)
            .is_some_and(|(_, f)| *f);
        if !flagged {
            continue;
        }
        for &(mean, median, min, max) in &flip_plan {
            row.features[mean] = -row.features[mean];
            row.features[median] = -row.features[median];
            let old_min = row.features[min];
            let old_max = row.features[max];
            row.features[min] = -old_max;
            row.features[max] = -old_min;
        }
    }
    Ok((out, HandednessReport { flips }))
}

/// Random subsequence plan: durations and gaps in whole seconds, sampled
/// uniformly inclusive over their ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub duration_range: (u32, u32),
    pub gap_range: (u32, u32),
    pub seed: u64,
    pub permute: bool,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            duration_range: (10, 30),
            gap_range: (10, 30),
            seed: 0,
            permute: true,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let (dmin, dmax) = self.duration_range;
        let (gmin, gmax) = self.gap_range;
        if dmin == 0 || dmin > dmax {
            return Err(Error::validation("duration range must satisfy 0 < min <= max"));
        }
        if gmin == 0 || gmin > gmax {
            return Err(Error::validation("gap range must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    /// Sequences shorter than the minimum duration, emitted whole.
    pub short_sequences: usize,
    pub subsequences: usize,
}

/// Cut each participant's continuous sequence into random subsequences.
///
/// Walks the sequence alternating a sampled duration and a sampled gap;
/// kept windows become new subsequence ids with seconds renumbered from 0.
/// A final partial window at least `duration_range.0` long is kept; shorter
/// tails are dropped. A whole sequence shorter than the minimum duration is
/// emitted as-is with a warning. Each participant uses an independent
/// sub-generator (seed + participant id), so results do not depend on
/// processing order.
pub fn split_into_subsequences(
    table: &FrameTable,
    plan: &SplitPlan,
) -> Result<(FrameTable, SplitReport)> {
    plan.validate()?;
    // each participant block must be one contiguous sequence
    let groups = table.subsequence_groups();
    let participants = table.participants();
    if groups.len() != participants.len() {
        return Err(Error::validation(
            "split_into_subsequences expects one contiguous sequence per participant",
        ));
    }
    let (dmin, dmax) = plan.duration_range;
    let (gmin, gmax) = plan.gap_range;

    let mut out = FrameTable::new(table.columns.clone(), table.n_classes);
    let mut report = SplitReport::default();

    for ((pid, _), row_indices) in groups {
        let len = row_indices.len() as u32;
        let mut rng = seeded_rng(derive_seed(plan.seed, u64::from(pid)));
        let mut windows: Vec<(u32, u32)> = Vec::new(); // (start, len)
        if len < dmin {
            log::warn!(
                "participant {pid}: sequence of {len}s is shorter than the minimum duration {dmin}s; emitted whole"
            );
            report.short_sequences += 1;
            windows.push((0, len));
        } else {
            let mut pos: u32 = 0;
            while pos < len {
                let duration = rng.gen_range(dmin..=dmax);
                if pos + duration <= len {
                    windows.push((pos, duration));
                    pos += duration;
                    let gap = rng.gen_range(gmin..=gmax);
                    pos = pos.saturating_add(gap);
                } else {
                    let tail = len - pos;
                    if tail >= dmin {
                        windows.push((pos, tail));
                    }
                    break;
                }
            }
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        if plan.permute {
            order.shuffle(&mut rng);
        }
        for (new_id, &window_idx) in order.iter().enumerate() {
            let (start, window_len) = windows[window_idx];
            for offset in 0..window_len {
                let src = &table.rows[row_indices[(start + offset) as usize]];
                let mut row = src.clone();
                row.subsequence_id = new_id as u32;
                row.second_index = offset;
                out.rows.push(row);
            }
        }
        report.subsequences += windows.len();
    }
    out.sort_rows();
    Ok((out, report))
}

/// Append lag and lead columns for the given base columns and orders
/// 1..=`max_order`. `lag_k` at second s is the value at s-k within the same
/// subsequence (missing when s-k < 0); `lead_k` is symmetric. Neither ever
/// crosses a subsequence boundary. Column names are `<base>_lag<k>` and
/// `<base>_lead<k>`.
pub fn add_lag_lead(
    table: &FrameTable,
    base_columns: &[String],
    max_order: usize,
) -> Result<FrameTable> {
    if max_order == 0 {
        return Err(Error::validation("max_order must be >= 1"));
    }
    let mut base_indices = Vec::with_capacity(base_columns.len());
    for name in base_columns {
        match table.column_index(name) {
            Some(idx) => base_indices.push(idx),
            None => {
                return Err(Error::validation(format!(
                    "unknown base column {name:?}"
                )))
            }
        }
    }
    let mut out = table.clone();
    for name in base_columns {
        for k in 1..=max_order {
            out.columns.push(format!("{name}_lag{k}"));
        }
        for k in 1..=max_order {
            out.columns.push(format!("{name}_lead{k}"));
        }
    }
    for (_, row_indices) in table.subsequence_groups() {
        let len = row_indices.len() as i64;
        for (pos, &ri) in row_indices.iter().enumerate() {
            let pos = pos as i64;
            let mut extra = Vec::with_capacity(base_indices.len() * 2 * max_order);
            for &base in &base_indices {
                for k in 1..=max_order as i64 {
                    extra.push(if pos - k >= 0 {
                        table.rows[row_indices[(pos - k) as usize]].features[base]
                    } else {
                        f64::NAN
                    });
                }
                for k in 1..=max_order as i64 {
                    extra.push(if pos + k < len {
                        table.rows[row_indices[(pos + k) as usize]].features[base]
                    } else {
                        f64::NAN
                    });
                }
            }
            out.rows[ri].features.extend(extra);
        }
    }
    Ok(out)
}

/// Append first-difference columns `<base>_diff1` = value(s) - value(s-1)
/// within each subsequence (missing at the first second). Stands in for
/// speed/derivative features over the aggregated columns.
pub fn add_first_differences(table: &FrameTable, base_columns: &[String]) -> Result<FrameTable> {
    let mut base_indices = Vec::with_capacity(base_columns.len());
    for name in base_columns {
        match table.column_index(name) {
            Some(idx) => base_indices.push(idx),
            None => {
                return Err(Error::validation(format!(
                    "unknown base column {name:?}"
                )))
            }
        }
    }
    let mut out = table.clone();
    for name in base_columns {
        out.columns.push(format!("{name}_diff1"));
    }
    for (_, row_indices) in table.subsequence_groups() {
        for (pos, &ri) in row_indices.iter().enumerate() {
            for &base in &base_indices {
                let value = if pos >= 1 {
                    let cur = table.rows[ri].features[base];
                    let prev = table.rows[row_indices[pos - 1]].features[base];
                    cur - prev
                } else {
                    f64::NAN
                };
                out.rows[ri].features.push(value);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(values: &[(u64, f64)]) -> RawStream {
        RawStream {
            participant_id: 1,
            channel: "accel_x".into(),
            sample_rate_hz: 20.0,
            samples: values.to_vec(),
        }
    }

    #[test]
    fn constant_second_aggregates_trivially() {
        let samples: Vec<(u64, f64)> = (0..20).map(|i| (i * 50, 4.5)).collect();
        let rows = aggregate_second(&stream(&samples)).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], [4.5, 4.5, 4.5, 4.5, 0.0]);
    }

    #[test]
    fn twenty_samples_one_to_twenty() {
        let samples: Vec<(u64, f64)> = (0..20).map(|i| (i * 50, (i + 1) as f64)).collect();
        let rows = aggregate_second(&stream(&samples)).unwrap();
        let [mean, median, min, max, std] = rows[0];
        assert!((mean - 10.5).abs() < 1e-12);
        assert!((median - 10.5).abs() < 1e-12);
        assert_eq!(min, 1.0);
        assert_eq!(max, 20.0);
        assert!((std - (665.0f64 / 20.0).sqrt()).abs() < 1e-12);
        assert!((std - 5.766281297335398).abs() < 1e-12);
    }

    #[test]
    fn empty_second_between_bursts_is_all_missing() {
        let samples = vec![(100, 1.0), (2500, 3.0)];
        let rows = aggregate_second(&stream(&samples)).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].iter().all(|v| v.is_nan()));
        assert_eq!(rows[0][0], 1.0);
        assert_eq!(rows[2][0], 3.0);
    }

    #[test]
    fn aggregate_count_matches_span() {
        let samples = vec![(0, 1.0), (59_999, 2.0)];
        assert_eq!(aggregate_second(&stream(&samples)).unwrap().len(), 60);
    }

    fn handed_table(medians: &[(u32, f64)]) -> FrameTable {
        // 3 seconds per participant, constant y-mean = given value
        let columns = vec![
            "accel_x_mean".into(),
            "accel_x_median".into(),
            "accel_x_min".into(),
            "accel_x_max".into(),
            "accel_x_std".into(),
            "accel_y_mean".into(),
            "accel_y_median".into(),
            "accel_y_min".into(),
            "accel_y_max".into(),
            "accel_y_std".into(),
            "accel_z_mean".into(),
        ];
        let mut t = FrameTable::new(columns, 2);
        for &(pid, y) in medians {
            for s in 0..3 {
                t.rows.push(FrameRow {
                    participant_id: pid,
                    subsequence_id: 0,
                    second_index: s,
                    features: vec![1.0, 1.1, 0.5, 2.0, 0.3, y, y, y - 0.5, y + 0.5, 0.2, 7.0],
                    room: None,
                    soft_label: None,
                });
            }
        }
        t
    }

    #[test]
    fn majority_sign_participants_are_unchanged() {
        let t = handed_table(&[(1, 1.0), (2, 1.5), (3, -1.0)]);
        let (out, report) = correct_handedness(&t).unwrap();
        assert_eq!(report.flips, vec![(1, false), (2, false), (3, true)]);
        let first = &out.rows[0];
        assert_eq!(first.features, t.rows[0].features);
    }

    #[test]
    fn minority_participant_is_negated_with_min_max_swap() {
        let t = handed_table(&[(1, 1.0), (2, 1.5), (3, -1.0)]);
        let (out, _) = correct_handedness(&t).unwrap();
        let flipped = out.rows.iter().find(|r| r.participant_id == 3).unwrap();
        // accel_x: mean/median negated, min = -old_max, max = -old_min, std kept
        assert_eq!(flipped.features[0], -1.0);
        assert_eq!(flipped.features[1], -1.1);
        assert_eq!(flipped.features[2], -2.0);
        assert_eq!(flipped.features[3], -0.5);
        assert_eq!(flipped.features[4], 0.3);
        // accel_y similarly: y=-1.0, min was -1.5, max was -0.5
        assert_eq!(flipped.features[5], 1.0);
        assert_eq!(flipped.features[7], 0.5);
        assert_eq!(flipped.features[8], 1.5);
        // z untouched
        assert_eq!(flipped.features[10], 7.0);
    }

    #[test]
    fn correction_is_idempotent_by_consensus() {
        let t = handed_table(&[(1, 1.0), (2, 1.5), (3, -1.0)]);
        let (once, _) = correct_handedness(&t).unwrap();
        let (twice, report) = correct_handedness(&once).unwrap();
        assert!(report.flips.iter().all(|(_, f)| !f));
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_median_is_not_flipped() {
        let t = handed_table(&[(1, 1.0), (2, 0.0)]);
        let (_, report) = correct_handedness(&t).unwrap();
        assert_eq!(report.flips, vec![(1, false), (2, false)]);
    }

    fn sequence_table(pid: u32, seconds: u32) -> FrameTable {
        let mut t = FrameTable::new(vec!["orig_second".into()], 2);
        for s in 0..seconds {
            t.rows.push(FrameRow {
                participant_id: pid,
                subsequence_id: 0,
                second_index: s,
                features: vec![f64::from(s)],
                room: None,
                soft_label: None,
            });
        }
        t
    }

    #[test]
    fn split_durations_and_gaps_stay_in_range() {
        let t = sequence_table(1, 1800);
        let plan = SplitPlan {
            permute: false,
            seed: 42,
            ..SplitPlan::default()
        };
        let (out, report) = split_into_subsequences(&t, &plan).unwrap();
        assert!(out.validate().is_empty());
        assert!(report.subsequences > 0);
        let groups = out.subsequence_groups();
        let mut prev_end: Option<f64> = None;
        for (_, rows) in &groups {
            let len = rows.len();
            assert!((10..=30).contains(&len), "duration {len}");
            let start = out.rows[rows[0]].features[0];
            let end = out.rows[rows[len - 1]].features[0];
            assert_eq!(end - start, (len - 1) as f64);
            if let Some(prev) = prev_end {
                let gap = start - prev - 1.0;
                assert!((10.0..=30.0).contains(&gap), "gap {gap}");
            }
            prev_end = Some(end);
        }
    }

    #[test]
    fn split_preserves_row_content_without_duplication() {
        let t = sequence_table(1, 200);
        let plan = SplitPlan {
            seed: 7,
            ..SplitPlan::default()
        };
        let (out, _) = split_into_subsequences(&t, &plan).unwrap();
        let mut kept: Vec<f64> = out.rows.iter().map(|r| r.features[0]).collect();
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut deduped = kept.clone();
        deduped.dedup();
        assert_eq!(kept.len(), deduped.len(), "no row duplicated");
        assert!(kept.iter().all(|&v| (0.0..200.0).contains(&v)));
    }

    #[test]
    fn short_sequence_is_emitted_whole() {
        let t = sequence_table(3, 9);
        let (out, report) = split_into_subsequences(&t, &SplitPlan::default()).unwrap();
        assert_eq!(report.short_sequences, 1);
        assert_eq!(out.rows.len(), 9);
        assert_eq!(out.rows[0].subsequence_id, 0);
    }

    #[test]
    fn split_is_deterministic_and_participant_independent() {
        let mut t = sequence_table(1, 300);
        let t2 = sequence_table(2, 300);
        t.rows.extend(t2.rows);
        let plan = SplitPlan {
            seed: 5,
            ..SplitPlan::default()
        };
        let (a, _) = split_into_subsequences(&t, &plan).unwrap();
        let (b, _) = split_into_subsequences(&t, &plan).unwrap();
        assert_eq!(a, b);
        // participant 1 alone gets the same windows as within the pair
        let t1 = sequence_table(1, 300);
        let (solo, _) = split_into_subsequences(&t1, &plan).unwrap();
        let paired: Vec<&FrameRow> =
            a.rows.iter().filter(|r| r.participant_id == 1).collect();
        assert_eq!(paired.len(), solo.rows.len());
        for (x, y) in paired.iter().zip(&solo.rows) {
            assert_eq!(x.features, y.features);
            assert_eq!(x.subsequence_id, y.subsequence_id);
        }
    }

    fn two_subseq_table() -> FrameTable {
        let mut t = FrameTable::new(vec!["f".into()], 2);
        for (sub, len) in [(0u32, 4u32), (1, 3)] {
            for s in 0..len {
                t.rows.push(FrameRow {
                    participant_id: 1,
                    subsequence_id: sub,
                    second_index: s,
                    features: vec![f64::from(sub * 100 + s)],
                    room: None,
                    soft_label: None,
                });
            }
        }
        t
    }

    #[test]
    fn lag_lead_respects_boundaries() {
        let t = two_subseq_table();
        let out = add_lag_lead(&t, &["f".to_string()], 2).unwrap();
        assert_eq!(out.columns.len(), 5);
        assert_eq!(
            out.columns[1..],
            ["f_lag1", "f_lag2", "f_lead1", "f_lead2"].map(String::from)
        );
        // first second of each subsequence: all lags missing
        for row in out.rows.iter().filter(|r| r.second_index == 0) {
            assert!(row.features[1].is_nan());
            assert!(row.features[2].is_nan());
        }
        // interior: lag1(f)[s] = f[s-1], lead1(f)[s] = f[s+1]
        let r1 = out
            .rows
            .iter()
            .find(|r| r.subsequence_id == 0 && r.second_index == 1)
            .unwrap();
        assert_eq!(r1.features[1], 0.0);
        assert_eq!(r1.features[3], 2.0);
        // leads never cross into the next subsequence
        let last = out
            .rows
            .iter()
            .find(|r| r.subsequence_id == 0 && r.second_index == 3)
            .unwrap();
        assert!(last.features[3].is_nan());
        assert!(last.features[4].is_nan());
    }

    #[test]
    fn lag_lead_column_count_is_twenty_per_base() {
        let mut t = two_subseq_table();
        t.columns.push("g".into());
        for row in &mut t.rows {
            row.features.push(1.0);
        }
        let out = add_lag_lead(&t, &["f".to_string(), "g".to_string()], 10).unwrap();
        assert_eq!(out.columns.len(), 2 + 2 * 20);
    }

    #[test]
    fn unknown_base_column_is_rejected() {
        let t = two_subseq_table();
        assert!(add_lag_lead(&t, &["nope".to_string()], 2).is_err());
    }

    #[test]
    fn order_zero_restriction_is_identity() {
        let t = two_subseq_table();
        let out = add_lag_lead(&t, &["f".to_string()], 3).unwrap();
        for (orig, new) in t.rows.iter().zip(&out.rows) {
            assert_eq!(orig.features[0], new.features[0]);
            assert_eq!(orig.participant_id, new.participant_id);
        }
    }

    #[test]
    fn first_differences_are_lagged_differences() {
        let t = two_subseq_table();
        let out = add_first_differences(&t, &["f".to_string()]).unwrap();
        let idx = out.column_index("f_diff1").unwrap();
        for row in &out.rows {
            if row.second_index == 0 {
                assert!(row.features[idx].is_nan());
            } else {
                assert_eq!(row.features[idx], 1.0);
            }
        }
    }
}
