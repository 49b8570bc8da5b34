//! Flow ingestion: CSV parsing, cleaning, min-max normalization and
//! stratified train/test splitting.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// One labelled flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub label: usize,
    /// Partition key, the destination IP for CIC-style flow exports.
    pub key: String,
}

/// An ordered collection of flows sharing one feature layout and class universe.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    records: Vec<FlowRecord>,
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

impl FlowTable {
    pub fn new(
        records: Vec<FlowRecord>,
        class_names: Vec<String>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::invalid(format!(
                "a flow table needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let d = feature_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.features.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: r.features.len(),
                });
            }
            if r.label >= class_names.len() {
                return Err(Error::invalid(format!(
                    "record {i} has label {} but only {} classes are declared",
                    r.label,
                    class_names.len()
                )));
            }
        }
        Ok(Self {
            records,
            class_names,
            feature_names,
        })
    }

    /// Empty table with the same layout as `self`.
    pub fn empty_like(&self) -> Self {
        self.with_records(Vec::new())
    }

    /// Same layout, different records. Records must already conform.
    pub(crate) fn with_records(&self, records: Vec<FlowRecord>) -> Self {
        Self {
            records,
            class_names: self.class_names.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn records(&self) -> &[FlowRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<FlowRecord> {
        self.records
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Number of classes in the universe.
    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    /// Feature dimensionality.
    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Per-class record counts, length `k`.
    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.k()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Concatenates tables with identical layouts, in argument order.
    pub fn concat<'a>(tables: impl IntoIterator<Item = &'a FlowTable>) -> Result<FlowTable> {
        let mut iter = tables.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::invalid("cannot concatenate zero tables"))?;
        let mut out = first.clone();
        for t in iter {
            if t.class_names != out.class_names || t.feature_names != out.feature_names {
                return Err(Error::invalid("tables have different layouts"));
            }
            out.records.extend(t.records.iter().cloned());
        }
        Ok(out)
    }

    fn non_finite_cells(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.features.iter().filter(|v| !v.is_finite()).count())
            .sum()
    }
}

/// Result of reading a raw flow CSV.
#[derive(Debug, Clone)]
pub struct ParsedFlows {
    pub table: FlowTable,
    /// Columns dropped because at least one value failed numeric parsing.
    pub dropped_columns: Vec<String>,
}

/// Reads a flow CSV. See [`parse_flow_csv_detailed`].
pub fn parse_flow_csv(path: &Path, label_column: &str, key_column: &str) -> Result<FlowTable> {
    parse_flow_csv_detailed(path, label_column, key_column).map(|p| p.table)
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        // missing value: left for `clean_features`
        return Some(f64::NAN);
    }
    s.parse::<f64>().ok()
}

/// Reads a flow CSV in two passes. The first pass finds the numeric columns
/// and the label set, the second builds records in file order.
///
/// A column is kept as a feature only if every non-empty cell parses as a
/// number (`NaN`, `inf` and `Infinity` count as numbers). The label and key
/// columns are never features. Class names are the sorted distinct labels.
pub fn parse_flow_csv_detailed(
    path: &Path,
    label_column: &str,
    key_column: &str,
) -> Result<ParsedFlows> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let location = path.display().to_string();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyInput(location));
    }
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let label_idx =
        find(label_column).ok_or_else(|| Error::MissingLabelColumn(label_column.into()))?;
    let key_idx = find(key_column).ok_or_else(|| Error::MissingKeyColumn(key_column.into()))?;

    let mut numeric = vec![true; headers.len()];
    let mut labels = BTreeSet::new();
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Malformed {
                location: format!("{location}:{}", rows + 2),
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        for (i, cell) in rec.iter().enumerate() {
            if numeric[i] && parse_cell(cell).is_none() {
                numeric[i] = false;
            }
        }
        labels.insert(rec[label_idx].trim().to_string());
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput(location));
    }

    let class_names: Vec<String> = labels.into_iter().collect();
    if class_names.len() < 2 {
        return Err(Error::invalid(format!(
            "{location}: label column `{label_column}` has fewer than 2 distinct classes"
        )));
    }
    let label_of: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != label_idx && i != key_idx && numeric[i])
        .collect();
    let dropped_columns = (0..headers.len())
        .filter(|&i| i != label_idx && i != key_idx && !numeric[i])
        .map(|i| headers[i].to_string())
        .collect();
    let feature_names = feature_cols
        .iter()
        .map(|&i| headers[i].to_string())
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut records = Vec::with_capacity(rows);
    for rec in reader.records() {
        let rec = rec?;
        let features = feature_cols
            .iter()
            .map(|&i| parse_cell(&rec[i]).unwrap_or(f64::NAN))
            .collect();
        records.push(FlowRecord {
            features,
            label: label_of[rec[label_idx].trim()],
            key: rec[key_idx].trim().to_string(),
        });
    }

    Ok(ParsedFlows {
        table: FlowTable::new(records, class_names, feature_names)?,
        dropped_columns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanPolicy {
    #[default]
    DropRow,
    ZeroFill,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub policy: CleanPolicy,
    pub rows_in: usize,
    pub rows_out: usize,
    pub rows_dropped: usize,
    pub cells_replaced: usize,
    /// Set when cleaning left no records.
    pub empty: bool,
}

/// Removes NaN and infinite feature values according to `policy`.
pub fn clean_features(table: FlowTable, policy: CleanPolicy) -> (FlowTable, CleanReport) {
    let rows_in = table.len();
    let bad_cells = table.non_finite_cells();
    let FlowTable {
        records,
        class_names,
        feature_names,
    } = table;
    let records: Vec<FlowRecord> = match policy {
        CleanPolicy::DropRow => records
            .into_iter()
            .filter(|r| r.features.iter().all(|v| v.is_finite()))
            .collect(),
        CleanPolicy::ZeroFill => records
            .into_iter()
            .map(|mut r| {
                for v in r.features.iter_mut().filter(|v| !v.is_finite()) {
                    *v = 0.0;
                }
                r
            })
            .collect(),
    };
    let rows_out = records.len();
    let report = CleanReport {
        policy,
        rows_in,
        rows_out,
        rows_dropped: rows_in - rows_out,
        cells_replaced: if policy == CleanPolicy::ZeroFill {
            bad_cells
        } else {
            0
        },
        empty: rows_out == 0,
    };
    let table = FlowTable {
        records,
        class_names,
        feature_names,
    };
    (table, report)
}

/// Per-feature min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalizer {
    /// Fits on training records only.
    pub fn fit(train: &FlowTable) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("training table".into()));
        }
        let d = train.d();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for r in train.records() {
            for (j, &v) in r.features.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn d(&self) -> usize {
        self.mins.len()
    }

    /// Maps each feature to `[0, 1]` with the fitted bounds, clamping values
    /// outside them. Constant features map to 0.
    pub fn transform(&self, x: &mut [f64]) -> Result<()> {
        if x.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: x.len(),
            });
        }
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.mins).zip(&self.maxs) {
            let span = hi - lo;
            *v = if span > 0.0 {
                ((*v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
        Ok(())
    }

    pub fn apply(&self, table: &FlowTable) -> Result<FlowTable> {
        if table.d() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                actual: table.d(),
            });
        }
        let mut records = table.records().to_vec();
        for r in &mut records {
            self.transform(&mut r.features)?;
        }
        Ok(table.with_records(records))
    }
}

pub fn fit_normalizer(train: &FlowTable) -> Result<Normalizer> {
    Normalizer::fit(train)
}

pub fn apply_normalizer(norm: &Normalizer, table: &FlowTable) -> Result<FlowTable> {
    norm.apply(table)
}

/// Number of test records drawn from a class of `count` records.
pub fn stratum_test_size(count: usize, test_fraction: f64) -> usize {
    let n = (test_fraction * count as f64).round() as usize;
    if count >= 2 {
        n.clamp(1, count - 1)
    } else {
        n.min(count)
    }
}

/// Stratified split. Each class contributes `round(test_fraction * c)`
/// records to the test side (at least one when the class has two or more).
/// Both outputs keep the input record order.
pub fn split_train_test(
    table: &FlowTable,
    test_fraction: f64,
    seed: u64,
) -> Result<(FlowTable, FlowTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); table.k()];
    for (i, r) in table.records().iter().enumerate() {
        by_class[r.label].push(i);
    }
    let mut is_test = vec![false; table.len()];
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let n_test = stratum_test_size(idx.len(), test_fraction);
        let mut rng = seed::rng(seed::class_seed(seed, class));
        idx.shuffle(&mut rng);
        for &i in &idx[..n_test] {
            is_test[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in table.records().iter().zip(is_test) {
        if t {
            test.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok((table.with_records(train), table.with_records(test)))
}

/// Writes `table` as CSV: the key column, the features, then an integer
/// `label` column.
pub fn write_table_csv(table: &FlowTable, key_column: &str, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = Vec::with_capacity(table.d() + 2);
    header.push(key_column.to_string());
    header.extend(table.feature_names().iter().cloned());
    header.push("label".to_string());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in table.records() {
        row.clear();
        row.push(r.key.clone());
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.push(r.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_table_csv`].
pub fn read_table_csv(path: &Path, key_column: &str, class_names: &[String]) -> Result<FlowTable> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let location = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let n = headers.len();
    if n < 2 || &headers[0] != key_column || &headers[n - 1] != "label" {
        return Err(Error::Malformed {
            location,
            message: format!("expected header `{key_column},<features...>,label`"),
        });
    }
    let feature_names: Vec<String> = headers
        .iter()
        .skip(1)
        .take(n - 2)
        .map(String::from)
        .collect();
    let mut records = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |col: usize, what: &str| Error::Malformed {
            location: format!("{location}:{} column {}", row + 2, col + 1),
            message: what.to_string(),
        };
        if rec.len() != n {
            return Err(bad(0, "wrong field count"));
        }
        let features = (1..n - 1)
            .map(|i| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| bad(i, "not a number"))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = rec[n - 1]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(n - 1, "label is not an integer"))?;
        records.push(FlowRecord {
            features,
            label,
            key: rec[0].to_string(),
        });
    }
    FlowTable::new(records, class_names.to_vec(), feature_names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn table(rows: &[(&[f64], usize)], k: usize) -> FlowTable {
        let d = rows.first().map_or(0, |r| r.0.len());
        let records = rows
            .iter()
            .map(|(f, l)| FlowRecord {
                features: f.to_vec(),
                label: *l,
                key: "k".into(),
            })
            .collect();
        FlowTable::new(
            records,
            (0..k).map(|c| format!("c{c}")).collect(),
            (0..d).map(|j| format!("f{j}")).collect(),
        )
        .unwrap()
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_small_csv() {
        let f = write_tmp(
            "dst_ip,f1,f2,label\n10.0.0.1,1,2,Benign\n10.0.0.2,3,4,XSS\n10.0.0.1,5,6,Benign\n",
        );
        let t = parse_flow_csv(f.path(), "label", "dst_ip").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.d(), 2);
        assert_eq!(t.k(), 2);
        assert_eq!(t.class_names(), names(&["Benign", "XSS"]).as_slice());
        assert_eq!(t.records()[1].label, 1);
        assert_eq!(t.records()[2].key, "10.0.0.1");
    }

    #[test]
    fn missing_label_column() {
        let f = write_tmp("dst_ip,f1,f2\n10.0.0.1,1,2\n");
        let err = parse_flow_csv(f.path(), "label", "dst_ip").unwrap_err();
        assert!(matches!(err, Error::MissingLabelColumn(_)));
        assert!(err.to_string().contains("label column not found"));
    }

    #[test]
    fn missing_key_column_and_file() {
        let f = write_tmp("ip,f1,label\n1,2,A\n");
        assert!(matches!(
            parse_flow_csv(f.path(), "label", "dst_ip"),
            Err(Error::MissingKeyColumn(_))
        ));
        assert!(matches!(
            parse_flow_csv(Path::new("/nonexistent/flows.csv"), "label", "dst_ip"),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn empty_file() {
        let f = write_tmp("");
        assert!(matches!(
            parse_flow_csv(f.path(), "label", "dst_ip"),
            Err(Error::EmptyInput(_)) | Err(Error::MissingLabelColumn(_))
        ));
        let f = write_tmp("dst_ip,f1,label\n");
        assert!(matches!(
            parse_flow_csv(f.path(), "label", "dst_ip"),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn infinity_keeps_column_numeric() {
        let f = write_tmp("dst_ip,rate,id,label\na,Infinity,x1,A\nb,NaN,x2,B\nc,1.5,x3,A\n");
        let p = parse_flow_csv_detailed(f.path(), "label", "dst_ip").unwrap();
        assert_eq!(p.table.feature_names(), names(&["rate"]).as_slice());
        assert_eq!(p.dropped_columns, names(&["id"]));
        assert!(p.table.records()[0].features[0].is_infinite());
    }

    #[test]
    fn drop_row_removes_nan() {
        let t = table(
            &[(&[1.0, f64::NAN], 0), (&[1.0, 2.0], 1), (&[0.0, 0.0], 0)],
            2,
        );
        let (t, rep) = clean_features(t, CleanPolicy::DropRow);
        assert_eq!(t.len(), 2);
        assert_eq!(rep.rows_dropped, 1);
        assert!(!rep.empty);
    }

    #[test]
    fn zero_fill_replaces_inf() {
        let t = table(&[(&[1.0, f64::INFINITY], 0), (&[1.0, 2.0], 1)], 2);
        let (t, rep) = clean_features(t, CleanPolicy::ZeroFill);
        assert_eq!(t.len(), 2);
        assert_eq!(t.records()[0].features[1], 0.0);
        assert_eq!(rep.cells_replaced, 1);
    }

    #[test]
    fn cleaning_everything_is_legal() {
        let t = table(&[(&[f64::NAN], 0), (&[f64::NEG_INFINITY], 1)], 2);
        let (t, rep) = clean_features(t, CleanPolicy::DropRow);
        assert!(t.is_empty());
        assert!(rep.empty);
    }

    #[test]
    fn min_max_examples() {
        let train = table(&[(&[0.0, 3.0], 0), (&[5.0, 3.0], 0), (&[10.0, 3.0], 1)], 2);
        let norm = fit_normalizer(&train).unwrap();
        let out = apply_normalizer(&norm, &train).unwrap();
        let col0: Vec<f64> = out.records().iter().map(|r| r.features[0]).collect();
        let col1: Vec<f64> = out.records().iter().map(|r| r.features[1]).collect();
        assert_eq!(col0, vec![0.0, 0.5, 1.0]);
        assert_eq!(col1, vec![0.0, 0.0, 0.0]);

        let test = table(&[(&[12.0, 3.0], 0), (&[-4.0, 9.0], 1)], 2);
        let out = apply_normalizer(&norm, &test).unwrap();
        assert_eq!(out.records()[0].features[0], 1.0);
        assert_eq!(out.records()[1].features[0], 0.0);
    }

    #[test]
    fn normalizer_rejects_other_dimension() {
        let norm = fit_normalizer(&table(&[(&[0.0, 1.0], 0)], 2)).unwrap();
        let other = table(&[(&[0.0], 0)], 2);
        assert!(matches!(
            apply_normalizer(&norm, &other),
            Err(Error::DimensionMismatch {
                expected: 2,
                actual: 1
            })
        ));
        assert!(fit_normalizer(&other.empty_like()).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<(Vec<f64>, usize)> = (0..100).map(|i| (vec![i as f64], 0)).collect();
        let rows: Vec<(&[f64], usize)> = rows.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
        let t = table(&rows, 2);
        let (a, b) = split_train_test(&t, 0.2, 7).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let (a2, b2) = split_train_test(&t, 0.2, 7).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        let (_, b3) = split_train_test(&t, 0.2, 8).unwrap();
        assert_ne!(b, b3);
    }

    #[test]
    fn split_per_class_rounding() {
        // oracle: round(0.2 * c), at least one for c >= 2
        let counts = [50usize, 10, 2];
        let expected: Vec<usize> = counts
            .iter()
            .map(|&c| {
                let n = (0.2 * c as f64 + 0.5).floor() as usize;
                if c >= 2 {
                    n.max(1)
                } else {
                    n
                }
            })
            .collect();
        assert_eq!(expected, vec![10, 2, 1]);

        let mut feats = Vec::new();
        for (class, &c) in counts.iter().enumerate() {
            for i in 0..c {
                feats.push((vec![i as f64], class));
            }
        }
        let rows: Vec<(&[f64], usize)> = feats.iter().map(|(f, l)| (f.as_slice(), *l)).collect();
        let t = table(&rows, 3);
        let (train, test) = split_train_test(&t, 0.2, 1).unwrap();
        let got: Vec<usize> = test.class_counts().iter().map(|&c| c as usize).collect();
        assert_eq!(got, expected);
        assert_eq!(train.len() + test.len(), t.len());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let t = table(&[(&[0.0], 0)], 2);
        for f in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(split_train_test(&t, f, 0).is_err());
        }
    }

    #[test]
    fn table_csv_round_trip() {
        let t = table(&[(&[0.25, -1.0], 1), (&[3.0, 1e-17], 0)], 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_table_csv(&t, "dst_ip", &p).unwrap();
        let back = read_table_csv(&p, "dst_ip", t.class_names()).unwrap();
        assert_eq!(back, t);
    }
}
