//! `monitors.csv`: one row per recorded time, numbers with 17 significant digits.
//!
//! The first line is `# schema=neckflow-monitors/1 recipe=<tag> dim=<d>`; empty cells
//! mean "not recorded" (fit columns of unrescaled recipes).

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use neckflow_core::monitors::MonitorRecord;
use neckflow_core::profile::ProfileParams;

pub const SCHEMA: &str = "neckflow-monitors/1";

/// Column names for dimension `dim`.
pub fn columns(dim: usize) -> Vec<String> {
    let mut c = vec!["tau".to_string(), "a".to_string()];
    for i in 0..dim {
        for j in i..dim {
            c.push(format!("b{}{}", i + 1, j + 1));
        }
    }
    for s in [
        "beta1_norm", "beta2_norm", "beta3_norm", "alpha1", "alpha2", "M1", "M2", "M3", "M4", "Phi1", "Phi2", "Phi3",
        "wl2", "min_u", "min_H_window", "fit_residual", "dt",
    ] {
        c.push(s.to_string());
    }
    c
}

/// One row, aligned with [`columns`].
#[derive(Debug, Clone, PartialEq)]
pub struct Row(pub Vec<Option<f64>>);

impl Row {
    fn empty(dim: usize) -> Self {
        Row(vec![None; columns(dim).len()])
    }

    fn put(&mut self, dim: usize, name: &str, v: f64) {
        let i = columns(dim).iter().position(|c| c == name).expect("known column");
        self.0[i] = Some(v);
    }

    /// A rescaled record plus grid-level diagnostics.
    pub fn from_record(rec: &MonitorRecord, min_u: f64, min_h: f64, dt: f64) -> Self {
        let p: &ProfileParams = &rec.params;
        let d = p.dim;
        let mut r = Row::empty(d);
        r.put(d, "tau", rec.tau);
        r.put(d, "a", p.a);
        for i in 0..d {
            for j in i..d {
                r.put(d, &format!("b{}{}", i + 1, j + 1), p.b[i][j]);
            }
        }
        let norm = |v: &[f64; 3]| v[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
        r.put(d, "beta1_norm", norm(&p.beta1));
        r.put(d, "beta2_norm", norm(&p.beta2));
        r.put(d, "beta3_norm", norm(&p.beta3));
        r.put(d, "alpha1", p.alpha1);
        r.put(d, "alpha2", p.alpha2);
        for k in 0..4 {
            r.put(d, &format!("M{}", k + 1), rec.m[k]);
        }
        for k in 0..3 {
            r.put(d, &format!("Phi{}", k + 1), rec.phi[k]);
        }
        r.put(d, "wl2", rec.weighted_l2);
        r.put(d, "min_u", min_u);
        r.put(d, "min_H_window", min_h);
        r.put(d, "fit_residual", rec.fit_residual);
        r.put(d, "dt", dt);
        r
    }

    /// An unrescaled sample: time, `min u`, window curvature and step.
    pub fn from_sample(dim: usize, t: f64, min_u: f64, min_h: f64, dt: f64) -> Self {
        let mut r = Row::empty(dim);
        r.put(dim, "tau", t);
        r.put(dim, "min_u", min_u);
        r.put(dim, "min_H_window", min_h);
        r.put(dim, "dt", dt);
        r
    }
}

/// 17 significant digits; round-trips every `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct TableWriter<W: Write> {
    csv: csv::Writer<W>,
    width: usize,
}

impl TableWriter<File> {
    pub fn create(path: &Path, recipe: &str, dim: usize) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Self::new(file, recipe, dim)
    }
}

impl<W: Write> TableWriter<W> {
    pub fn new(mut out: W, recipe: &str, dim: usize) -> Result<Self> {
        writeln!(out, "# schema={SCHEMA} recipe={recipe} dim={dim}")?;
        let mut csv = csv::Writer::from_writer(out);
        let cols = columns(dim);
        csv.write_record(&cols)?;
        Ok(TableWriter { csv, width: cols.len() })
    }

    pub fn push(&mut self, row: &Row) -> Result<()> {
        if row.0.len() != self.width {
            bail!("row has {} cells, schema has {}", row.0.len(), self.width);
        }
        self.csv.write_record(row.0.iter().map(|c| c.map(fmt_num).unwrap_or_default()))?;
        self.csv.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.csv.into_inner().map_err(|e| anyhow::anyhow!("flushing csv: {}", e.error()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub recipe: String,
    pub dim: usize,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Self::read(file)
    }

    pub fn read(input: impl Read) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut first = String::new();
        input.read_line(&mut first)?;
        let mut schema = None;
        let mut recipe = None;
        let mut dim = None;
        for kv in first.trim().trim_start_matches('#').split_whitespace() {
            match kv.split_once('=') {
                Some(("schema", v)) => schema = Some(v.to_string()),
                Some(("recipe", v)) => recipe = Some(v.to_string()),
                Some(("dim", v)) => dim = v.parse().ok(),
                _ => {}
            }
        }
        if schema.as_deref() != Some(SCHEMA) {
            bail!("schema mismatch: expected {SCHEMA}, found {:?}", schema.unwrap_or_default());
        }
        let dim: usize = dim.context("schema line lacks dim")?;
        let mut rdr = csv::Reader::from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != columns(dim) {
            bail!("schema mismatch: columns {:?}", header);
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cells = rec
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse::<f64>().map(Some).with_context(|| format!("row {} column {}: {s:?}", i + 1, header[j]))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row(cells));
        }
        Ok(Table { recipe: recipe.unwrap_or_default(), dim, columns: header, rows })
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `(tau, value)` pairs of a column, skipping empty cells.
    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        let (Some(t), Some(i)) = (self.index("tau"), self.index(name)) else { return Vec::new() };
        self.rows.iter().filter_map(|r| Some((r.0[t]?, r.0[i]?))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bitwise() {
        let mut w = TableWriter::new(Vec::new(), "cylinder", 2).unwrap();
        let a = Row::from_sample(2, 0.1, core::f64::consts::SQRT_2, 1.0 / 3.0, 1e-5);
        let b = Row::from_sample(2, 0.2 + 1e-17, 1.0, f64::NAN, 2e-5);
        w.push(&a).unwrap();
        w.push(&b).unwrap();
        let bytes = w.into_inner().unwrap();
        let t = Table::read(bytes.as_slice()).unwrap();
        assert_eq!((t.recipe.as_str(), t.dim, t.rows.len()), ("cylinder", 2, 2));
        assert_eq!(t.rows[0], a);
        assert!(t.rows[1].0[t.index("min_H_window").unwrap()].unwrap().is_nan());
        assert_eq!(t.series("min_u")[0], (0.1, core::f64::consts::SQRT_2));
        assert_eq!(t.columns.len(), 2 + 3 + 17);
    }

    #[test]
    fn rejects_schema_mismatch() {
        assert!(Table::read("# schema=other/2 dim=1\ntau\n".as_bytes()).is_err());
        assert!(Table::read(format!("# schema={SCHEMA} dim=1\ntau,a\n").as_bytes()).is_err());
    }
}
