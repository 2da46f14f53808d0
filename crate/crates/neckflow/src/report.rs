//! PASS/FAIL reports and the predicates checked on `monitors.csv`.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use neckflow_core::spectral::least_squares_slope;

use crate::svg::line_chart;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: String,
    pub notes: Vec<String>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report { title: title.into(), ..Report::default() }
    }

    pub fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let mut s = format!("# {}\n", self.title);
        for n in &self.notes {
            s += &format!("# {n}\n");
        }
        for c in &self.checks {
            s += &c.line();
            s.push('\n');
        }
        s += &format!("RESULT {}\n", if self.passed() { "PASS" } else { "FAIL" });
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Rows whose `τ` lies in the final third of the recorded span.
fn final_third(series: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let (Some(first), Some(last)) = (series.first(), series.last()) else { return Vec::new() };
    let start = last.0 - (last.0 - first.0) / 3.0;
    series.iter().copied().filter(|(t, _)| *t >= start).collect()
}

/// Schema-independent and recipe-specific predicates of a monitor table.
pub fn table_checks(t: &Table) -> Vec<Check> {
    let mut out = Vec::new();
    if t.rows.len() < 2 {
        out.push(Check::new("samples", false, format!("insufficient samples ({} rows)", t.rows.len())));
        return out;
    }
    out.push(Check::new("samples", true, format!("{} rows", t.rows.len())));

    let bad: Vec<&str> = t
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| t.rows.iter().any(|r| r.0[*i].is_some_and(|v| !v.is_finite())))
        .map(|(_, c)| c.as_str())
        .collect();
    out.push(if bad.is_empty() {
        Check::new("finite", true, "all recorded cells finite")
    } else {
        Check::new("finite", false, format!("non-finite values in column {}", bad.join(", ")))
    });

    for k in 1..=4 {
        let name = format!("M{k}");
        let s = t.series(&name);
        if s.len() >= 2 {
            let ok = s.windows(2).all(|w| w[1].1 >= w[0].1) && s.iter().all(|p| p.1 >= 0.0);
            out.push(Check::new(&format!("{name} nondecreasing"), ok, format!("final {:.6e}", s.last().unwrap().1)));
        }
    }

    match t.recipe.as_str() {
        "cylinder" => {
            let s = t.series("min_u");
            if let Some(&(t0, u0)) = s.first() {
                let err = s
                    .iter()
                    .filter(|p| p.1 >= 0.3)
                    .map(|&(tt, u)| (u * u - (u0 * u0 - 2.0 * (tt - t0))).abs())
                    .fold(0.0, f64::max);
                out.push(Check::new("cylinder law", err <= 1e-6, format!("max |u² − (u₀² − 2t)| = {err:.3e}")));
            }
        }
        "neckpinch-d1" => {
            let a = final_third(&t.series("a"));
            if !a.is_empty() {
                let worst = a.iter().map(|&(tau, a)| (a - 0.5).abs() * tau).fold(0.0, f64::max);
                out.push(Check::new("a bound", worst <= 5.0, format!("max |a − 1/2|·τ over final third = {worst:.4}")));
            }
            if t.dim == 1 {
                let b = final_third(&t.series("b11"));
                if !b.is_empty() {
                    let (lo, hi) = b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(tau, b)| {
                        (lo.min(tau * b), hi.max(tau * b))
                    });
                    let ok = lo >= 0.6 && hi <= 1.4;
                    out.push(Check::new("tau*B range", ok, format!("τB ∈ [{lo:.4}, {hi:.4}] over final third")));
                }
            }
            let w = final_third(&t.series("wl2"));
            if w.len() >= 2 {
                let xs: Vec<f64> = w.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = w.iter().map(|p| p.1).collect();
                let slope = least_squares_slope(&xs, &ys);
                out.push(Check::new("wl2 trend", slope < 0.0, format!("slope over final third {slope:.3e}")));
            }
            let phi = t.series("Phi3");
            if phi.len() >= 2 {
                let (mid_t, last) = (0.5 * (phi[0].0 + phi.last().unwrap().0), phi.last().unwrap().1);
                let mid = phi.iter().find(|p| p.0 >= mid_t).map(|p| p.1).unwrap_or(last);
                out.push(Check::new("Phi3 decay", last <= mid, format!("Phi3 mid {mid:.3e}, final {last:.3e}")));
            }
        }
        _ => {}
    }
    out
}

/// Reads a monitor table, writes `report.txt` and SVG plots next to `out_dir`.
pub fn report_csv(csv: &Path, out_dir: &Path, plots: bool) -> Result<Report> {
    let mut r = Report::new(format!("report for {}", csv.display()));
    match Table::load(csv) {
        Ok(t) => {
            r.note(format!("recipe={} dim={}", t.recipe, t.dim));
            r.checks.extend(table_checks(&t));
            if plots {
                for c in t.columns.iter().filter(|c| c.as_str() != "tau") {
                    if let Some(svg) = line_chart(&format!("{c} vs tau"), &t.series(c)) {
                        let p = out_dir.join(format!("plot_{c}.svg"));
                        fs::write(&p, svg).with_context(|| format!("writing {}", p.display()))?;
                    }
                }
            }
        }
        Err(e) => r.check("schema", false, format!("{e:#}")),
    }
    r.write(&out_dir.join("report.txt"))?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Row, TableWriter};

    fn table(recipe: &str, rows: &[Row]) -> Table {
        let mut w = TableWriter::new(Vec::new(), recipe, 1).unwrap();
        for r in rows {
            w.push(r).unwrap();
        }
        Table::read(w.into_inner().unwrap().as_slice()).unwrap()
    }

    #[test]
    fn empty_series_fails_with_insufficient_samples() {
        let c = table_checks(&table("cylinder", &[]));
        assert_eq!(c.len(), 1);
        assert!(!c[0].pass && c[0].detail.contains("insufficient samples"));
    }

    #[test]
    fn cylinder_rows_pass_and_nan_is_named() {
        let rows: Vec<Row> = (0..10)
            .map(|k| {
                let t = 0.05 * k as f64;
                Row::from_sample(1, t, (2.0 - 2.0 * t).sqrt(), 1.0 / (2.0 - 2.0 * t).sqrt(), 1e-3)
            })
            .collect();
        let c = table_checks(&table("cylinder", &rows));
        assert!(c.iter().all(|c| c.pass), "{c:?}");
        let mut bad = rows.clone();
        bad[3] = Row::from_sample(1, 0.15, f64::NAN, 1.0, 1e-3);
        let c = table_checks(&table("cylinder", &bad));
        let f = c.iter().find(|c| c.name == "finite").unwrap();
        assert!(!f.pass && f.detail.contains("min_u"));
    }

    #[test]
    fn report_renders_result_line() {
        let mut r = Report::new("t");
        r.check("x", true, "ok");
        assert!(r.render().ends_with("PASS x: ok\nRESULT PASS\n"));
        r.check("y", false, "bad");
        assert!(!r.passed() && r.render().contains("FAIL y: bad"));
    }
}
