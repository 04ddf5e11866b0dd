//! `label,f1,…,fd` CSV files with a header row.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Matrix;

struct RawTable {
    path: PathBuf,
    width: usize,
    labels: Vec<String>,
    features: Vec<f64>,
}

fn read_table(path: &Path) -> Result<RawTable> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let width = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .len();
    if width < 2 {
        return Err(parse_err(1, "header needs a label column and at least one feature".into()));
    }
    let mut table = RawTable {
        path: path.to_path_buf(),
        width: width - 1,
        labels: Vec::new(),
        features: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        table.labels.push(record[0].to_string());
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(line, format!("column {}: '{field}' is not a number", col + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
            }
            table.features.push(v);
        }
    }
    if table.labels.is_empty() {
        return Err(parse_err(1, "no data rows".into()));
    }
    Ok(table)
}

/// Dense label ids over the union of labels. Integer labels are ordered
/// numerically, anything else lexicographically.
fn label_index(tables: &[RawTable]) -> BTreeMap<String, usize> {
    let all: Vec<&String> = tables.iter().flat_map(|t| &t.labels).collect();
    let mut distinct: Vec<&String> = all.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.iter().all(|l| l.parse::<i64>().is_ok()) {
        distinct.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    distinct
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect()
}

/// Loads a single CSV dataset; labels are re-indexed densely from 0.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    Ok(load_csv_many(&[path.as_ref()])?.remove(0))
}

/// Loads several CSV files (e.g. train and test) over one shared label map.
pub fn load_csv_many(paths: &[&Path]) -> Result<Vec<LabeledDataset>> {
    let tables = paths
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = tables.iter().find(|t| t.width != tables[0].width) {
        return Err(Error::Parse {
            path: t.path.clone(),
            line: 1,
            msg: format!(
                "{} features, but {} has {}",
                t.width,
                tables[0].path.display(),
                tables[0].width
            ),
        });
    }
    let index = label_index(&tables);
    tables
        .into_iter()
        .map(|t| {
            let labels = t.labels.iter().map(|l| index[l]).collect::<Vec<_>>();
            let features = Matrix::from_vec(labels.len(), t.width, t.features)?;
            LabeledDataset::new(features, labels, index.len())
        })
        .collect()
}

/// Writes a dataset in the format read by [`load_csv`]. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((1..=dataset.input_dim()).map(|i| format!("f{i}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (r, y) in dataset.labels().iter().enumerate() {
        write!(w, "{y}").map_err(io)?;
        for v in dataset.features().row(r) {
            write!(w, ",{v:?}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticTaskSpec;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn small_file_shape_and_label_reindexing() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "label,x,y\n7,1.0,2.0\n3,0.5,-1\n7,0,0\n");
        let d = load_csv(&p).unwrap();
        assert_eq!(d.features().shape(), (3, 2));
        assert_eq!(d.labels(), &[1, 0, 1]);
        assert_eq!(d.num_classes(), 2);
    }

    #[test]
    fn string_labels_sort_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "label,x\ncat,1\nant,2\n10,3\n");
        let d = load_csv(&p).unwrap();
        // "10" < "ant" < "cat"
        assert_eq!(d.labels(), &[2, 1, 0]);
    }

    #[test]
    fn non_numeric_feature_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "label,x,y\n0,1,2\n1,abc,2\n");
        let err = load_csv(&p).unwrap_err();
        match &err {
            Error::Parse { line, .. } => assert_eq!(*line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains(":3:"));
    }

    #[test]
    fn ragged_row_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "bad.csv", "label,x,y\n0,1,2\n1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn header_only_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "empty.csv", "label,x\n");
        assert!(load_csv(&p).is_err());
        assert!(matches!(load_csv(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn synthetic_roundtrip_is_exact() {
        let d = SyntheticTaskSpec {
            num_classes: 3,
            input_dim: 5,
            class_mean_scale: 2.0,
            noise_std: 0.7,
            samples_per_class: 4,
            validation_samples_per_class: 0,
            test_samples_per_class: 0,
            seed: 77,
        }
        .generate()
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        write_csv(&d, &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), d);
    }

    #[test]
    fn shared_label_map_across_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(&dir, "train.csv", "label,x\n5,1\n9,2\n");
        let b = write(&dir, "test.csv", "label,x\n9,1\n2,3\n");
        let ds = load_csv_many(&[&a, &b]).unwrap();
        assert_eq!(ds[0].labels(), &[1, 2]);
        assert_eq!(ds[1].labels(), &[2, 0]);
        assert_eq!(ds[0].num_classes(), 3);
    }
}
