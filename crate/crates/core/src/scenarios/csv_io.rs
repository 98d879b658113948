use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{CsvError, Result};
use crate::tensor::Tensor;

/// Which header column holds the class label; every other column is a
/// numeric feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            label_column: "label".into(),
        }
    }
}

fn is_gzip(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn io_err(path: &Path, source: std::io::Error) -> CsvError {
    CsvError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a headered CSV (optionally gzip-compressed, by `.gz` extension or
/// magic bytes). Row order is kept; labels are numbered by first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| io_err(path, e))?;
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader: Box<dyn Read> = if is_gzip(path) || (n == 2 && magic == [0x1f, 0x8b]) {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    read_dataset(reader, schema)
}

fn read_dataset(reader: impl Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CsvError::Parse(e.to_string()))?.clone();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == schema.label_column)
        .ok_or_else(|| CsvError::MissingLabelColumn(schema.label_column.clone()))?;
    let width = header.len();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CsvError::Parse(e.to_string()))?;
        let row = i + 1;
        if record.len() != width {
            return Err(CsvError::Ragged {
                row,
                expected: width,
                found: record.len(),
            }
            .into());
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                let name = cell.trim();
                let label = match names.iter().position(|n| n == name) {
                    Some(l) => l,
                    None => {
                        names.push(name.to_string());
                        names.len() - 1
                    }
                };
                labels.push(label);
            } else {
                let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                    CsvError::NonNumeric {
                        row,
                        column: header[j].to_string(),
                        value: cell.to_string(),
                    }
                })?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() || width < 2 {
        return Err(CsvError::EmptyDataset.into());
    }
    let features = Tensor::new(vec![labels.len(), width - 1], data)?;
    Dataset::new(features, labels, names)
}

/// Writes `label_column` first, then `f0..f{d-1}`; gzip when the path ends
/// in `.gz`. Values use shortest round-trip formatting.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>, schema: &CsvSchema) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let sink: Box<dyn Write> = if is_gzip(path) {
        Box::new(GzEncoder::new(BufWriter::new(file), Compression::default()))
    } else {
        Box::new(BufWriter::new(file))
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| CsvError::Parse(e.to_string());
    let mut header = vec![schema.label_column.clone()];
    header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.class_names[dataset.labels[i]].clone()];
        rec.extend(dataset.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let sink = w.into_inner().map_err(|e| CsvError::Parse(e.to_string()))?;
    drop(sink);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn parse(text: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn hand_written_file() {
        let d = parse("f0,label,f1\n1.5,dog,2\n-3,cat,0.25\n4e1,dog,7\n").unwrap();
        assert_eq!(d.features.shape(), &[3, 2]);
        assert_eq!(d.features.data(), &[1.5, 2.0, -3.0, 0.25, 40.0, 7.0]);
        assert_eq!(d.labels, vec![0, 1, 0]);
        assert_eq!(d.class_names, vec!["dog", "cat"]);
    }

    #[test]
    fn header_only_is_empty() {
        let err = parse("label,f0\n").unwrap_err();
        assert!(matches!(err, Error::Csv(CsvError::EmptyDataset)));
        assert!(err.to_string().contains("empty dataset"));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            parse("f0,f1\n1,2\n").unwrap_err(),
            Error::Csv(CsvError::MissingLabelColumn(_))
        ));
        assert!(matches!(
            parse("label,f0\na,1\nb,x\n").unwrap_err(),
            Error::Csv(CsvError::NonNumeric { row: 2, .. })
        ));
        assert!(matches!(
            parse("label,f0\na,1\nb,2,3\n").unwrap_err(),
            Error::Csv(CsvError::Ragged { row: 2, expected: 2, found: 3 })
        ));
    }
}
