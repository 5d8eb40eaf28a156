//! CSV ingestion: group rows into per-subject trails, order them in time,
//! discretize continuous markers, and encode states as dense indices.
//!
//! Rows with a missing value in any configured marker are dropped whole so
//! that a subject's trails stay aligned; every drop is recorded. Categorical
//! alphabets come from the data (sorted distinct labels), binned alphabets
//! from the config. Symbols not seen at build time are rejected later at
//! encoding, never invented.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::config::{Datatype, PipelineConfig};
use crate::error::{Error, Result};

/// One marker's encoded state sequence for one subject.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trail {
    pub subject_id: String,
    pub marker: String,
    pub states: Vec<usize>,
}

impl Trail {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// All trails of one subject, aligned in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    /// Visit times after parsing, ascending.
    pub times: Vec<f64>,
    pub trails: BTreeMap<String, Trail>,
}

impl SubjectRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Something the loader tolerated (or removed) rather than failed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestNote {
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dropped_rows: Vec<IngestNote>,
    pub dropped_subjects: Vec<IngestNote>,
    pub clamped_values: Vec<IngestNote>,
    /// Rows that survived into trails.
    pub retained_rows: usize,
}

/// Encoded dataset: per-subject aligned trails plus the alphabets they are
/// encoded against. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: BTreeMap<String, SubjectRecord>,
    pub alphabets: BTreeMap<String, Vec<String>>,
    pub config: PipelineConfig,
    pub report: IngestReport,
}

/// Interval-consistency policy for the visit grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IntervalMode {
    /// Consecutive visits are consecutive chain steps, whatever the calendar
    /// gap (default).
    UnitStep,
    /// Drop subjects whose inter-visit gaps deviate from the given delta by
    /// more than 50%.
    Strict(f64),
}

/// Equal-width bin index over `[lo, hi]`: `floor((value - lo) / width)`,
/// clamped to `[0, bins - 1]` so `hi` lands in the top bin and outliers stick
/// to the edges.
pub fn discretize(value: f64, bins: usize, lo: f64, hi: f64) -> Result<usize> {
    if value.is_nan() {
        return Err(Error::Ingest("cannot discretize NaN value".into()));
    }
    let frac = (value - lo) / (hi - lo);
    let idx = (frac * bins as f64).floor();
    Ok((idx.max(0.0) as usize).min(bins - 1))
}

/// Labels for the bins of a binned marker, zero-padded so lexicographic and
/// bin order agree.
pub fn bin_labels(bins: usize) -> Vec<String> {
    let width = (bins - 1).to_string().len();
    (0..bins).map(|i| format!("bin{i:0width$}")).collect()
}

fn parse_time(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    // ISO-8601 calendar dates map to day ordinals.
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .map(|d| d.num_days_from_ce() as f64)
}

fn is_missing(raw: &str) -> bool {
    let v = raw.trim();
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan")
}

struct RawRow {
    time: f64,
    values: Vec<String>,
}

/// Load a CSV document against a config: group by subject, sort by time,
/// drop incomplete rows, discretize binned markers, and encode everything as
/// dense state indices.
pub fn load_dataset(csv_text: &str, config: &PipelineConfig) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("cannot read header row: {e}")))?
        .clone();
    let col_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Ingest(format!("missing required column `{name}`")))
    };
    let id_col = col_index(&config.id_column)?;
    let time_col = col_index(&config.time_column)?;
    let marker_names: Vec<String> = config.markers.keys().cloned().collect();
    let marker_cols = marker_names
        .iter()
        .map(|m| col_index(m))
        .collect::<Result<Vec<_>>>()?;

    let mut report = IngestReport::default();
    let mut raw_subjects: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (rownum, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingest(format!("row {}: {e}", rownum + 2)))?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let subject = field(id_col).to_string();
        if subject.is_empty() {
            return Err(Error::Ingest(format!("row {}: empty subject id", rownum + 2)));
        }
        let time_raw = field(time_col);
        let Some(time) = parse_time(time_raw) else {
            return Err(Error::Ingest(format!(
                "subject `{subject}`: time value `{time_raw}` is neither numeric nor an ISO date"
            )));
        };
        let mut values = Vec::with_capacity(marker_cols.len());
        let mut missing = None;
        for (marker, &col) in marker_names.iter().zip(&marker_cols) {
            let raw = field(col);
            if is_missing(raw) {
                missing = Some(marker.clone());
                break;
            }
            values.push(raw.to_string());
        }
        if let Some(marker) = missing {
            report.dropped_rows.push(IngestNote {
                subject,
                detail: format!("row {}: missing value for `{marker}`", rownum + 2),
            });
            continue;
        }
        raw_subjects
            .entry(subject)
            .or_default()
            .push(RawRow { time, values });
    }

    // Sort each subject by time; equal timestamps make the order ambiguous.
    for (subject, rows) in &mut raw_subjects {
        rows.sort_by(|a, b| a.time.total_cmp(&b.time));
        if rows.windows(2).any(|w| w[0].time == w[1].time) {
            return Err(Error::Ingest(format!(
                "subject `{subject}` has duplicate time values"
            )));
        }
    }

    // Build alphabets: categorical from observed labels, binned from config.
    let mut alphabets: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (m, marker) in marker_names.iter().enumerate() {
        match &config.markers[marker].datatype {
            Datatype::Categorical => {
                let mut labels: Vec<String> = raw_subjects
                    .values()
                    .flat_map(|rows| rows.iter().map(|r| r.values[m].clone()))
                    .collect();
                labels.sort();
                labels.dedup();
                alphabets.insert(marker.clone(), labels);
            }
            Datatype::ContinuousBinned { bins, .. } => {
                alphabets.insert(marker.clone(), bin_labels(*bins));
            }
        }
    }

    let mut subjects = BTreeMap::new();
    for (subject, rows) in raw_subjects {
        let mut trails: BTreeMap<String, Trail> = marker_names
            .iter()
            .map(|marker| {
                (
                    marker.clone(),
                    Trail {
                        subject_id: subject.clone(),
                        marker: marker.clone(),
                        states: Vec::with_capacity(rows.len()),
                    },
                )
            })
            .collect();
        let mut times = Vec::with_capacity(rows.len());
        for row in &rows {
            times.push(row.time);
            for (m, marker) in marker_names.iter().enumerate() {
                let raw = &row.values[m];
                let state = match &config.markers[marker].datatype {
                    Datatype::Categorical => alphabets[marker]
                        .binary_search(raw)
                        .expect("alphabet was built from these labels"),
                    Datatype::ContinuousBinned { bins, lo, hi } => {
                        let value: f64 = raw.parse().map_err(|_| {
                            Error::Ingest(format!(
                                "subject `{subject}`: `{raw}` is not numeric for binned marker `{marker}`"
                            ))
                        })?;
                        if value.is_nan() {
                            return Err(Error::Ingest(format!(
                                "subject `{subject}`: NaN value for marker `{marker}`"
                            )));
                        }
                        if value < *lo || value > *hi {
                            report.clamped_values.push(IngestNote {
                                subject: subject.clone(),
                                detail: format!(
                                    "`{marker}` value {value} outside [{lo}, {hi}], clamped"
                                ),
                            });
                        }
                        discretize(value, *bins, *lo, *hi)?
                    }
                };
                trails.get_mut(marker).unwrap().states.push(state);
            }
        }
        report.retained_rows += rows.len();
        subjects.insert(subject, SubjectRecord { times, trails });
    }

    Ok(Dataset {
        subjects,
        alphabets,
        config: config.clone(),
        report,
    })
}

/// Apply an interval policy. Unit-step keeps everything; strict mode drops
/// subjects whose visit gaps stray more than 50% from the target delta,
/// recording each drop.
pub fn enforce_intervals(dataset: Dataset, mode: IntervalMode) -> Dataset {
    let IntervalMode::Strict(delta) = mode else {
        return dataset;
    };
    let mut dataset = dataset;
    let mut kept = BTreeMap::new();
    for (subject, record) in std::mem::take(&mut dataset.subjects) {
        let bad_gap = record
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .find(|gap| (gap - delta).abs() > 0.5 * delta);
        match bad_gap {
            Some(gap) => dataset.report.dropped_subjects.push(IngestNote {
                subject,
                detail: format!("visit gap {gap} deviates more than 50% from {delta}"),
            }),
            None => {
                kept.insert(subject, record);
            }
        }
    }
    dataset.subjects = kept;
    dataset
}

impl Dataset {
    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.keys().map(String::as_str).collect()
    }

    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn alphabet(&self, marker: &str) -> Result<&[String]> {
        self.alphabets
            .get(marker)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownMarker(marker.to_string()))
    }

    pub fn trail(&self, subject: &str, marker: &str) -> Result<&Trail> {
        let record = self
            .subjects
            .get(subject)
            .ok_or_else(|| Error::Ingest(format!("unknown subject `{subject}`")))?;
        record
            .trails
            .get(marker)
            .ok_or_else(|| Error::UnknownMarker(marker.to_string()))
    }

    /// Decode a trail back to its state labels.
    pub fn decode_trail(&self, subject: &str, marker: &str) -> Result<Vec<String>> {
        let trail = self.trail(subject, marker)?;
        let alphabet = self.alphabet(marker)?;
        Ok(trail
            .states
            .iter()
            .map(|&s| alphabet[s].clone())
            .collect())
    }

    /// Encode state labels against this dataset's alphabet for a marker.
    /// Labels never seen at build time are an error, not a new symbol.
    pub fn encode_labels(&self, marker: &str, labels: &[String]) -> Result<Vec<usize>> {
        let alphabet = self.alphabet(marker)?;
        labels
            .iter()
            .enumerate()
            .map(|(position, label)| {
                alphabet
                    .iter()
                    .position(|a| a == label)
                    .ok_or_else(|| Error::UnknownLabel {
                        marker: marker.to_string(),
                        label: label.clone(),
                        position,
                    })
            })
            .collect()
    }

    /// Restrict to a subset of subjects, re-deriving categorical alphabets
    /// from the survivors and re-encoding their trails. Binned alphabets are
    /// config-fixed and unchanged.
    pub fn subset(&self, ids: &[&str]) -> Result<Dataset> {
        let mut subjects = BTreeMap::new();
        for &id in ids {
            let record = self
                .subjects
                .get(id)
                .ok_or_else(|| Error::Ingest(format!("unknown subject `{id}`")))?;
            subjects.insert(id.to_string(), record.clone());
        }

        let mut alphabets = BTreeMap::new();
        for (marker, spec) in &self.config.markers {
            match spec.datatype {
                Datatype::Categorical => {
                    let old = &self.alphabets[marker];
                    let mut labels: Vec<String> = subjects
                        .values()
                        .flat_map(|r| r.trails[marker].states.iter().map(|&s| old[s].clone()))
                        .collect();
                    labels.sort();
                    labels.dedup();
                    alphabets.insert(marker.clone(), labels);
                }
                Datatype::ContinuousBinned { .. } => {
                    alphabets.insert(marker.clone(), self.alphabets[marker].clone());
                }
            }
        }

        for record in subjects.values_mut() {
            for (marker, trail) in &mut record.trails {
                let old = &self.alphabets[marker];
                let new = &alphabets[marker];
                for state in &mut trail.states {
                    *state = new
                        .binary_search(&old[*state])
                        .expect("subset alphabet covers its own labels");
                }
            }
        }

        Ok(Dataset {
            subjects,
            alphabets,
            config: self.config.clone(),
            report: IngestReport::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn config_one_categorical() -> PipelineConfig {
        parse_config(
            "[general]\nid_column=id\ntime_column=time\n\
             [stage]\ndatatype=categorical\nlayer=L\nweight=1\n",
        )
        .unwrap()
    }

    #[test]
    fn groups_rows_into_a_trail() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,0,a\ns1,12,b\ns1,24,a\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.num_subjects(), 1);
        let trail = ds.trail("s1", "stage").unwrap();
        assert_eq!(trail.states, vec![0, 1, 0]);
        assert_eq!(ds.alphabets["stage"], vec!["a", "b"]);
        assert_eq!(ds.report.retained_rows, 3);
    }

    #[test]
    fn missing_id_column_is_an_error() {
        let config = config_one_categorical();
        let csv = "subject,time,stage\ns1,0,a\n";
        match load_dataset(csv, &config) {
            Err(Error::Ingest(msg)) => assert!(msg.contains("id"), "{msg}"),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn subjects_keep_independent_lengths() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,0,a\ns1,1,a\ns1,2,b\ns2,5,b\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.trail("s1", "stage").unwrap().len(), 3);
        assert_eq!(ds.trail("s2", "stage").unwrap().len(), 1);
    }

    #[test]
    fn rows_sort_by_time_and_duplicates_fail() {
        let config = config_one_categorical();
        let ds = load_dataset("id,time,stage\ns1,24,b\ns1,0,a\n", &config).unwrap();
        assert_eq!(ds.decode_trail("s1", "stage").unwrap(), vec!["a", "b"]);
        match load_dataset("id,time,stage\ns1,5,a\ns1,5,b\n", &config) {
            Err(Error::Ingest(msg)) => assert!(msg.contains("s1"), "{msg}"),
            other => panic!("expected ingest error, got {other:?}"),
        }
    }

    #[test]
    fn iso_dates_become_day_ordinals() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,2020-03-01,b\ns1,2020-01-01,a\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.decode_trail("s1", "stage").unwrap(), vec!["a", "b"]);
        let record = &ds.subjects["s1"];
        assert_eq!(record.times[1] - record.times[0], 60.0);
    }

    #[test]
    fn missing_cells_drop_the_whole_row() {
        let config = parse_config(
            "[general]\nid_column=id\ntime_column=time\n\
             [x]\ndatatype=categorical\nlayer=L\nweight=0.5\n\
             [y]\ndatatype=categorical\nlayer=L\nweight=0.5\n",
        )
        .unwrap();
        let csv = "id,time,x,y\ns1,0,a,p\ns1,1,b,\ns1,2,a,q\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.trail("s1", "x").unwrap().len(), 2);
        assert_eq!(ds.trail("s1", "y").unwrap().len(), 2);
        assert_eq!(ds.report.dropped_rows.len(), 1);
        assert_eq!(ds.report.retained_rows, 2);
    }

    #[test]
    fn trails_within_subject_stay_aligned() {
        let config = parse_config(
            "[general]\nid_column=id\ntime_column=time\n\
             [x]\ndatatype=categorical\nlayer=L\nweight=0.5\n\
             [y]\ndatatype=categorical\nlayer=L\nweight=0.5\n",
        )
        .unwrap();
        let csv = "id,time,x,y\ns1,0,a,p\ns1,1,NA,q\ns2,0,b,p\n";
        let ds = load_dataset(csv, &config).unwrap();
        for record in ds.subjects.values() {
            let lens: Vec<usize> = record.trails.values().map(Trail::len).collect();
            assert!(lens.windows(2).all(|w| w[0] == w[1]));
            assert_eq!(record.times.len(), lens[0]);
        }
    }

    #[test]
    fn extra_columns_are_dropped() {
        let config = config_one_categorical();
        let csv = "id,time,stage,unused\ns1,0,a,zzz\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.subjects["s1"].trails.len(), 1);
    }

    #[test]
    fn discretize_matches_hand_values() {
        assert_eq!(discretize(0.0, 5, 0.0, 40.0).unwrap(), 0);
        assert_eq!(discretize(40.0, 5, 0.0, 40.0).unwrap(), 4);
        // bin width 8: floor(17/8) = 2
        assert_eq!(discretize(17.0, 5, 0.0, 40.0).unwrap(), 2);
        assert_eq!(discretize(-3.0, 5, 0.0, 40.0).unwrap(), 0);
        assert_eq!(discretize(99.0, 5, 0.0, 40.0).unwrap(), 4);
        assert!(discretize(f64::NAN, 5, 0.0, 40.0).is_err());
    }

    #[test]
    fn discretize_is_monotone() {
        let mut last = 0;
        for i in 0..=400 {
            let v = i as f64 * 0.1;
            let bin = discretize(v, 7, 0.0, 40.0).unwrap();
            assert!(bin >= last);
            last = bin;
        }
    }

    #[test]
    fn binned_markers_encode_and_clamp() {
        let config = parse_config(
            "[general]\nid_column=id\ntime_column=time\n\
             [score]\ndatatype=continuous-binned\nbins=4\nrange=0:8\nlayer=L\nweight=1\n",
        )
        .unwrap();
        let csv = "id,time,score\ns1,0,0\ns1,1,7.9\ns1,2,11\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.trail("s1", "score").unwrap().states, vec![0, 3, 3]);
        assert_eq!(ds.report.clamped_values.len(), 1);
        assert_eq!(ds.alphabets["score"], vec!["bin0", "bin1", "bin2", "bin3"]);
    }

    #[test]
    fn unit_step_keeps_everything() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,0,a\ns1,12,a\ns1,24,b\n";
        let ds = load_dataset(csv, &config).unwrap();
        let ds = enforce_intervals(ds, IntervalMode::UnitStep);
        assert_eq!(ds.trail("s1", "stage").unwrap().len(), 3);
    }

    #[test]
    fn strict_mode_drops_and_logs_irregular_subjects() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,0,a\ns1,12,a\ns1,36,b\ns2,0,a\ns2,12,b\n";
        let ds = load_dataset(csv, &config).unwrap();
        let ds = enforce_intervals(ds, IntervalMode::Strict(12.0));
        assert!(!ds.subjects.contains_key("s1"));
        assert!(ds.subjects.contains_key("s2"));
        assert_eq!(ds.report.dropped_subjects.len(), 1);
        assert_eq!(ds.report.dropped_subjects[0].subject, "s1");
    }

    #[test]
    fn empty_dataset_passes_through_interval_check() {
        let config = config_one_categorical();
        let ds = load_dataset("id,time,stage\n", &config).unwrap();
        let ds = enforce_intervals(ds, IntervalMode::Strict(12.0));
        assert_eq!(ds.num_subjects(), 0);
    }

    #[test]
    fn encode_rejects_labels_unseen_at_build() {
        let config = config_one_categorical();
        let ds = load_dataset("id,time,stage\ns1,0,a\ns1,1,b\n", &config).unwrap();
        let err = ds
            .encode_labels("stage", &["a".into(), "zz".into()])
            .unwrap_err();
        match err {
            Error::UnknownLabel { label, position, .. } => {
                assert_eq!(label, "zz");
                assert_eq!(position, 1);
            }
            other => panic!("expected unknown-label error, got {other:?}"),
        }
    }

    #[test]
    fn decode_then_encode_round_trips() {
        let config = config_one_categorical();
        let ds = load_dataset("id,time,stage\ns1,0,c\ns1,1,a\ns1,2,b\n", &config).unwrap();
        let labels = ds.decode_trail("s1", "stage").unwrap();
        let encoded = ds.encode_labels("stage", &labels).unwrap();
        assert_eq!(encoded, ds.trail("s1", "stage").unwrap().states);
    }

    #[test]
    fn subset_reencodes_against_reduced_alphabet() {
        let config = config_one_categorical();
        let csv = "id,time,stage\ns1,0,a\ns1,1,c\ns2,0,b\ns2,1,c\n";
        let ds = load_dataset(csv, &config).unwrap();
        assert_eq!(ds.alphabets["stage"], vec!["a", "b", "c"]);
        let sub = ds.subset(&["s2"]).unwrap();
        assert_eq!(sub.alphabets["stage"], vec!["b", "c"]);
        assert_eq!(sub.trail("s2", "stage").unwrap().states, vec![0, 1]);
        assert_eq!(sub.decode_trail("s2", "stage").unwrap(), vec!["b", "c"]);
    }
}
