//! File formats: long-format CSV records with a JSON metadata sidecar,
//! forecast logs, metrics and model/plot exports.
//!
//! Records are `timestamp,keyword,location,value` with a header row;
//! timestamps are contiguous integers from 0 and every
//! `(timestamp, keyword, location)` triple appears exactly once. The tensor
//! axis order is `(time, keyword, location)` with labels indexed in
//! metadata order.

mod export;
mod metrics;

pub use export::{
    diffusion_edges, export_model, export_plotdata, import_model, DiffusionEdge, ModelDocument,
    ModelRecord, OutlierEntry, EDGE_FLOOR,
};
pub use metrics::{
    evaluate, read_forecasts, realized, write_forecasts, LoggedForecast, MetricCell, MetricReport,
};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Tensor3};

/// Sidecar describing the label sets of a record file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub keywords: Vec<String>,
    pub locations: Vec<String>,
    pub period: usize,
    /// Free-form sampling label such as `"weekly"`.
    #[serde(default)]
    pub sampling: String,
}

impl Metadata {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let meta: Metadata = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        meta.validate(path)?;
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        };
        if self.keywords.is_empty() || self.locations.is_empty() {
            return Err(bad(
                "metadata needs at least one keyword and one location".into()
            ));
        }
        for (what, labels) in [("keyword", &self.keywords), ("location", &self.locations)] {
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
                return Err(bad(format!("duplicate {what} label {dup:?}")));
            }
        }
        Ok(())
    }
}

/// Affine min-max map onto `[0, 1]`, kept for de-normalising exports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit(values: &[f64]) -> Self {
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(*v), b.max(*v))
            });
        if values.is_empty() {
            return Self { min: 0.0, max: 1.0 };
        }
        Self { min, max }
    }

    fn span(&self) -> f64 {
        let s = self.max - self.min;
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.span()
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.span() + self.min
    }

    pub fn apply_tensor(&self, x: &Tensor3) -> Tensor3 {
        x.map(|v| self.apply(v))
    }

    pub fn invert_tensor(&self, x: &Tensor3) -> Tensor3 {
        x.map(|v| self.invert(v))
    }
}

/// An ingested stream: raw values, their normalised copy and the map.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: Metadata,
    pub raw: Tensor3,
    pub data: Tensor3,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn from_raw(meta: Metadata, raw: Tensor3) -> Self {
        let normalization = Normalization::fit(raw.as_slice());
        let data = normalization.apply_tensor(&raw);
        Self {
            meta,
            raw,
            data,
            normalization,
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[derive(Deserialize)]
struct RecordRow {
    timestamp: i64,
    keyword: String,
    location: String,
    value: f64,
}

const RECORD_HEADER: [&str; 4] = ["timestamp", "keyword", "location", "value"];

/// Parses record text into a raw `(time, keyword, location)` tensor.
/// `path` only labels errors.
pub fn parse_records(text: &str, meta: &Metadata, path: &Path) -> Result<Tensor3> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(perr(
            1,
            format!(
                "expected header {:?}, got {:?}",
                RECORD_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let kw: HashMap<&str, usize> = meta
        .keywords
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let loc: HashMap<&str, usize> = meta
        .locations
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut cells: HashMap<(usize, usize, usize), (f64, usize)> = HashMap::new();
    let mut max_t = None;
    let mut last_line = 1;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        last_line = line;
        let row: RecordRow = rec
            .deserialize(Some(&header))
            .map_err(|e| perr(line, e.to_string()))?;
        if row.timestamp < 0 {
            return Err(perr(line, format!("negative timestamp {}", row.timestamp)));
        }
        let t = row.timestamp as usize;
        let u = *kw
            .get(row.keyword.as_str())
            .ok_or_else(|| perr(line, format!("unknown keyword {:?}", row.keyword)))?;
        let v = *loc
            .get(row.location.as_str())
            .ok_or_else(|| perr(line, format!("unknown location {:?}", row.location)))?;
        if !row.value.is_finite() || row.value < 0.0 {
            return Err(perr(
                line,
                format!("value must be finite and nonnegative, got {}", row.value),
            ));
        }
        if let Some((_, first)) = cells.insert((t, u, v), (row.value, line)) {
            return Err(perr(
                line,
                format!(
                    "duplicate row for timestamp {t}, keyword {:?}, location {:?} (first at line {first})",
                    row.keyword, row.location
                ),
            ));
        }
        max_t = Some(max_t.map_or(t, |m: usize| m.max(t)));
    }
    let Some(max_t) = max_t else {
        return Err(perr(last_line, "no records".into()));
    };
    let dims = Dims::new(max_t + 1, meta.keywords.len(), meta.locations.len());
    let mut out = Tensor3::zeros(dims);
    for t in 0..dims.len {
        for u in 0..dims.keys {
            for v in 0..dims.locs {
                match cells.get(&(t, u, v)) {
                    Some((x, _)) => out.set(t, u, v, *x),
                    None => {
                        return Err(perr(
                            last_line,
                            format!(
                                "gap: no row for timestamp {t}, keyword {:?}, location {:?}",
                                meta.keywords[u], meta.locations[v]
                            ),
                        ))
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reads a record file and its metadata sidecar and min-max normalises.
pub fn ingest(path: &Path, meta_path: &Path) -> Result<Dataset> {
    let meta = Metadata::read(meta_path)?;
    let raw = parse_records(&read_to_string(path)?, &meta, path)?;
    Ok(Dataset::from_raw(meta, raw))
}

/// Writes `x` in record format, with timestamps starting at `t0`.
pub fn write_records(path: &Path, x: &Tensor3, meta: &Metadata, t0: usize) -> Result<()> {
    let d = x.dims();
    if d.keys != meta.keywords.len() || d.locs != meta.locations.len() {
        return Err(Error::Dimension(format!(
            "tensor has {} keys and {} locations, metadata lists {} and {}",
            d.keys,
            d.locs,
            meta.keywords.len(),
            meta.locations.len()
        )));
    }
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| csv_error(path, e);
    w.write_record(RECORD_HEADER).map_err(io)?;
    for t in 0..d.len {
        for u in 0..d.keys {
            for v in 0..d.locs {
                w.write_record([
                    (t0 + t).to_string(),
                    meta.keywords[u].clone(),
                    meta.locations[v].clone(),
                    x.get(t, u, v).to_string(),
                ])
                .map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(k: &[&str], l: &[&str]) -> Metadata {
        Metadata {
            keywords: k.iter().map(|s| s.to_string()).collect(),
            locations: l.iter().map(|s| s.to_string()).collect(),
            period: 2,
            sampling: "weekly".into(),
        }
    }

    fn parse(text: &str, m: &Metadata) -> Result<Tensor3> {
        parse_records(text, m, Path::new("x.csv"))
    }

    #[test]
    fn three_timestamps_give_a_column() {
        let m = meta(&["a"], &["x"]);
        let x = parse(
            "timestamp,keyword,location,value\n0,a,x,1\n2,a,x,3\n1,a,x,2\n",
            &m,
        )
        .unwrap();
        assert_eq!(x.dims(), Dims::new(3, 1, 1));
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn normalisation_maps_extremes_exactly() {
        let m = meta(&["a", "b"], &["x"]);
        let text = "timestamp,keyword,location,value\n0,a,x,0\n0,b,x,50\n1,a,x,200\n1,b,x,120\n";
        let d = Dataset::from_raw(m.clone(), parse(text, &m).unwrap());
        let max = d.data.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        let min = d.data.as_slice().iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(max, 1.0);
        assert_eq!(min, 0.0);
        assert_eq!(d.normalization.invert(d.data.get(0, 1, 0)), 50.0);
    }

    #[test]
    fn constant_data_normalises_to_zero() {
        let n = Normalization::fit(&[3.0, 3.0]);
        assert_eq!(n.apply(3.0), 0.0);
        assert_eq!(n.invert(0.0), 3.0);
    }

    fn err_of(text: &str, m: &Metadata) -> (usize, String) {
        match parse(text, m) {
            Err(Error::Parse { line, message, .. }) => (line, message),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn gap_is_named() {
        let m = meta(&["kw"], &["loc"]);
        let mut text = String::from("timestamp,keyword,location,value\n");
        for t in (0..8).filter(|t| *t != 5) {
            text += &format!("{t},kw,loc,1\n");
        }
        let (_, msg) = err_of(&text, &m);
        assert!(msg.contains("gap") && msg.contains("timestamp 5"), "{msg}");
    }

    #[test]
    fn duplicates_and_unknown_labels_carry_rows() {
        let m = meta(&["a"], &["x"]);
        let (line, msg) = err_of(
            "timestamp,keyword,location,value\n0,a,x,1\n1,a,x,1\n0,a,x,2\n",
            &m,
        );
        assert_eq!(line, 4);
        assert!(msg.contains("duplicate") && msg.contains("line 2"), "{msg}");
        let (line, msg) = err_of("timestamp,keyword,location,value\n0,a,x,1\n1,b,x,1\n", &m);
        assert_eq!(line, 3);
        assert!(msg.contains("unknown keyword"), "{msg}");
        let (line, msg) = err_of("timestamp,keyword,location,value\n0,a,y,1\n", &m);
        assert_eq!(line, 2);
        assert!(msg.contains("unknown location"), "{msg}");
        let (line, _) = err_of("timestamp,keyword,location,value\n0,a,x,oops\n", &m);
        assert_eq!(line, 2);
        let (line, msg) = err_of("time,keyword,location,value\n0,a,x,1\n", &m);
        assert_eq!(line, 1);
        assert!(msg.contains("header"));
        let (_, msg) = err_of("timestamp,keyword,location,value\n0,a,x,-1\n", &m);
        assert!(msg.contains("nonnegative"));
    }

    #[test]
    fn write_then_ingest_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let m = meta(&["a", "b"], &["x", "y", "z"]);
        let raw = Tensor3::from_fn(Dims::new(5, 2, 3), |t, u, v| {
            (t * 7 + u * 3 + v) as f64 * 0.37
        });
        let (p, mp) = (dir.path().join("r.csv"), dir.path().join("m.json"));
        write_records(&p, &raw, &m, 0).unwrap();
        m.write(&mp).unwrap();
        let d = ingest(&p, &mp).unwrap();
        assert_eq!(d.raw, raw);
        assert_eq!(d.meta, m);
    }

    #[test]
    fn metadata_rejects_duplicate_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("m.json");
        std::fs::write(
            &mp,
            r#"{"keywords":["a","a"],"locations":["x"],"period":4}"#,
        )
        .unwrap();
        assert!(matches!(Metadata::read(&mp), Err(Error::Parse { .. })));
        assert!(matches!(
            Metadata::read(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }
}
