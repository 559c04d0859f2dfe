//! Line-oriented JSON documents.
//!
//! Every document starts with a header object carrying `format` and
//! `version`, followed by one JSON record per line. Output is byte-stable for
//! identical inputs.

use std::io::{BufRead, Write};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const VERSION: u64 = 1;

pub const DATASET_FORMAT: &str = "workstat.dataset";
pub const STEPS_FORMAT: &str = "workstat.steps";
pub const INVERSION_FORMAT: &str = "workstat.inversion";
pub const WORKDIST_FORMAT: &str = "workstat.workdist";
pub const FIT_FORMAT: &str = "workstat.fit";
pub const UNCERTAINTY_FORMAT: &str = "workstat.uncertainty";

pub struct Document {
    pub header: Map<String, Value>,
    /// `(line number, record)` pairs; line numbers are 1-based.
    pub records: Vec<(usize, Value)>,
}

/// Writes a header (`format`, `version`, plus the fields of `extra`) and one line per record.
pub fn write_document<W, T>(mut out: W, format: &str, extra: &Value, records: &[T]) -> Result<()>
where
    W: Write,
    T: Serialize,
{
    let mut header = Map::new();
    header.insert("format".into(), Value::from(format));
    header.insert("version".into(), Value::from(VERSION));
    if let Value::Object(fields) = extra {
        for (k, v) in fields {
            header.insert(k.clone(), v.clone());
        }
    }
    writeln!(out, "{}", to_line(&header)?)?;
    for r in records {
        writeln!(out, "{}", to_line(r)?)?;
    }
    out.flush()?;
    Ok(())
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::InvalidArgument(format!("serialization failed: {e}")))
}

/// Reads a document, checking its `format` tag and version.
pub fn read_document<R: BufRead>(input: R, format: &str) -> Result<Document> {
    let mut header: Option<Map<String, Value>> = None;
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(trimmed).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if header.is_none() {
            let obj = match value {
                Value::Object(obj) => obj,
                _ => return Err(Error::parse(line_no, "header must be a JSON object")),
            };
            match obj.get("format").and_then(Value::as_str) {
                Some(f) if f == format => {}
                Some(f) => {
                    return Err(Error::parse(
                        line_no,
                        format!("field `format`: expected {format:?}, found {f:?}"),
                    ))
                }
                None => return Err(Error::parse(line_no, "missing field `format`")),
            }
            match obj.get("version").and_then(Value::as_u64) {
                Some(VERSION) => {}
                Some(v) => {
                    return Err(Error::parse(line_no, format!("field `version`: unsupported {v}")))
                }
                None => return Err(Error::parse(line_no, "missing field `version`")),
            }
            header = Some(obj);
        } else {
            records.push((line_no, value));
        }
    }
    let header = header.ok_or_else(|| Error::parse(1, "empty document"))?;
    Ok(Document { header, records })
}

/// Serde adapter storing a `DMatrix<f64>` as a list of rows.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(D::Error::custom("matrix rows must form a square"));
        }
        Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

/// Serde adapter writing `+inf` as the string `"inf"`.
pub mod kt_serde {
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Kt {
            Num(f64),
            Text(String),
        }
        match Kt::deserialize(d)? {
            Kt::Num(v) => Ok(v),
            Kt::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Kt::Text(t) => Err(D::Error::custom(format!("invalid kt_pev {t:?}"))),
        }
    }
}

/// [`kt_serde`] for optional values; `None` is `null`.
pub mod opt_kt_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => super::kt_serde::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::kt_serde")] f64);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_checks() {
        let err = read_document("{\"format\":\"other\",\"version\":1}\n".as_bytes(), FIT_FORMAT)
            .err()
            .unwrap();
        assert!(err.to_string().contains("format"));
        let err = read_document("{\"format\":\"workstat.fit\",\"version\":7}\n".as_bytes(), FIT_FORMAT)
            .err()
            .unwrap();
        assert!(err.to_string().contains("version"));
        let err = read_document("{\"format\":\"workstat.fit\",\"version\":1}\n{oops\n".as_bytes(), FIT_FORMAT)
            .err()
            .unwrap();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn writes_header_then_records() {
        let mut buf = Vec::new();
        write_document(&mut buf, FIT_FORMAT, &serde_json::json!({"kt_pev": 20.0}), &[1, 2]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "{\"format\":\"workstat.fit\",\"kt_pev\":20.0,\"version\":1}\n1\n2\n");
        let doc = read_document(text.as_bytes(), FIT_FORMAT).unwrap();
        assert_eq!(doc.records.len(), 2);
        assert_eq!(doc.records[1].0, 3);
    }
}
