//! Long-format panel CSV.
//!
//! One row per micro observation: `unit,period,v1[,v2,...]`, with a header
//! row. Periods are ordered by first appearance unless an explicit order is
//! given, and the cutoff label names the last pre-treatment period.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::measures::{EmpiricalMeasure, PanelDataset};

/// How to turn a long table into a [`PanelDataset`].
#[derive(Debug, Clone, Default)]
pub struct PanelSpec {
    pub treated: String,
    /// Label of the last pre-treatment period.
    pub cutoff: String,
    pub period_order: Option<Vec<String>>,
}

pub fn read_panel_path(path: impl AsRef<Path>, spec: &PanelSpec) -> Result<PanelDataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::InvalidPanel(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_panel(file, spec)
}

pub fn read_panel<R: Read>(reader: R, spec: &PanelSpec) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 3 || &headers[0] != "unit" || &headers[1] != "period" {
        return Err(Error::InvalidPanel(
            "header must start with `unit,period` followed by at least one value column".into(),
        ));
    }
    let dim = headers.len() - 2;

    let mut units: Vec<String> = Vec::new();
    let mut unit_ix: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_ix: HashMap<String, usize> = HashMap::new();
    // (unit, period) -> flat points
    let mut cells: HashMap<(usize, usize), Vec<f64>> = HashMap::new();

    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != dim + 2 {
            return Err(Error::InvalidPanel(format!(
                "row {row}: expected {} fields, found {}",
                dim + 2,
                record.len()
            )));
        }
        let u = *unit_ix.entry(record[0].to_string()).or_insert_with(|| {
            units.push(record[0].to_string());
            units.len() - 1
        });
        let p = *period_ix.entry(record[1].to_string()).or_insert_with(|| {
            periods.push(record[1].to_string());
            periods.len() - 1
        });
        let cell = cells.entry((u, p)).or_default();
        for k in 0..dim {
            let v: f64 = record[k + 2].parse().map_err(|_| {
                Error::InvalidPanel(format!("row {row}: `{}` is not a number", &record[k + 2]))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidPanel(format!("row {row}: non-finite value")));
            }
            cell.push(v);
        }
    }

    let order: Vec<usize> = match &spec.period_order {
        None => (0..periods.len()).collect(),
        Some(labels) => {
            let mut seen = std::collections::HashSet::new();
            let order = labels
                .iter()
                .map(|l| {
                    if !seen.insert(l) {
                        return Err(Error::InvalidPanel(format!("period `{l}` repeated in period order")));
                    }
                    period_ix.get(l).copied().ok_or_else(|| Error::UnknownPeriod(l.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            if order.len() != periods.len() {
                let missing: Vec<&str> = periods
                    .iter()
                    .filter(|p| !labels.contains(p))
                    .map(String::as_str)
                    .collect();
                return Err(Error::InvalidPanel(format!(
                    "period order omits periods present in the data: {}",
                    missing.join(", ")
                )));
            }
            order
        }
    };
    let ordered_periods: Vec<String> = order.iter().map(|&p| periods[p].clone()).collect();
    let cutoff_pos = ordered_periods
        .iter()
        .position(|p| *p == spec.cutoff)
        .ok_or_else(|| Error::UnknownPeriod(spec.cutoff.clone()))?;
    let treated = *unit_ix.get(&spec.treated).ok_or_else(|| Error::UnknownUnit(spec.treated.clone()))?;

    let mut unit_order = vec![treated];
    unit_order.extend((0..units.len()).filter(|&u| u != treated));
    let mut grid = Vec::with_capacity(units.len());
    for &u in &unit_order {
        let mut row = Vec::with_capacity(order.len());
        for &p in &order {
            let pts = cells.remove(&(u, p)).ok_or_else(|| {
                Error::InvalidPanel(format!("unit `{}` has no rows in period `{}`", units[u], periods[p]))
            })?;
            row.push(EmpiricalMeasure::uniform_flat(dim, pts)?);
        }
        grid.push(row);
    }
    PanelDataset::new(
        unit_order.iter().map(|&u| units[u].clone()).collect(),
        ordered_periods,
        cutoff_pos + 1,
        grid,
    )
}

/// Writes a panel in long format. Floats use the shortest round-trip
/// representation, so reading the file back reproduces every atom exactly.
/// Weighted cells cannot be represented and are rejected.
pub fn write_panel<W: Write>(writer: W, panel: &PanelDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string(), "period".to_string()];
    header.extend((1..=panel.dim()).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for (u, unit) in panel.units().iter().enumerate() {
        for (p, period) in panel.periods().iter().enumerate() {
            let cell = panel.cell(u, p);
            if !cell.is_uniform() {
                return Err(Error::InvalidPanel(format!(
                    "cell ({unit}, {period}) has non-uniform atom weights"
                )));
            }
            for point in cell.points() {
                let mut rec = Vec::with_capacity(point.len() + 2);
                rec.push(unit.clone());
                rec.push(period.clone());
                rec.extend(point.iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_path(path: impl AsRef<Path>, panel: &PanelDataset) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_panel(std::io::BufWriter::new(file), panel)
}

/// Reads a single measure from CSV: one row per atom, numeric columns only,
/// with an optional header. A column named `weight` (when a header is
/// present) holds atom weights.
pub fn read_measure<R: Read>(reader: R) -> Result<EmpiricalMeasure> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut weight_col = None;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if line == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            weight_col = record.iter().position(|f| f == "weight");
            continue;
        }
        let vals = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::InvalidPanel(format!("row {}: `{f}` is not a number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Empty("measure file"));
    }
    match weight_col {
        None => EmpiricalMeasure::from_samples(&rows),
        Some(c) => {
            let dim = rows[0].len() - 1;
            let mut points = Vec::with_capacity(rows.len() * dim);
            let mut weights = Vec::with_capacity(rows.len());
            for r in rows {
                for (k, v) in r.into_iter().enumerate() {
                    if k == c {
                        weights.push(v);
                    } else {
                        points.push(v);
                    }
                }
            }
            EmpiricalMeasure::weighted_flat(dim, points, weights)
        }
    }
}

pub fn read_measure_path(path: impl AsRef<Path>) -> Result<EmpiricalMeasure> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::InvalidPanel(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_measure(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "unit,period,v1\nA,2001,1.0\nA,2001,2.0\nB,2001,0.5\nA,2002,3.0\nB,2002,4.0\nC,2001,9\nC,2002,8\n";

    fn spec(treated: &str, cutoff: &str) -> PanelSpec {
        PanelSpec {
            treated: treated.into(),
            cutoff: cutoff.into(),
            period_order: None,
        }
    }

    #[test]
    fn reads_long_format() {
        let p = read_panel(SAMPLE.as_bytes(), &spec("B", "2001")).unwrap();
        assert_eq!(p.units(), ["B", "A", "C"]);
        assert_eq!(p.periods(), ["2001", "2002"]);
        assert_eq!(p.cutoff(), 1);
        assert_eq!(p.cell(1, 0).flat_points(), [1.0, 2.0]);
    }

    #[test]
    fn unknown_labels_are_named() {
        let err = read_panel(SAMPLE.as_bytes(), &spec("A", "1999")).unwrap_err();
        assert!(err.to_string().contains("1999"));
        let err = read_panel(SAMPLE.as_bytes(), &spec("Z", "2001")).unwrap_err();
        assert!(err.to_string().contains('Z'));
    }

    #[test]
    fn explicit_period_order() {
        let s = PanelSpec {
            period_order: Some(vec!["2002".into(), "2001".into()]),
            ..spec("A", "2002")
        };
        let p = read_panel(SAMPLE.as_bytes(), &s).unwrap();
        assert_eq!(p.periods(), ["2002", "2001"]);
        assert_eq!(p.treated(0).flat_points(), [3.0]);
    }

    #[test]
    fn missing_cell_is_an_error() {
        let data = "unit,period,v1\nA,1,0\nA,2,0\nB,1,0\n";
        assert!(read_panel(data.as_bytes(), &spec("A", "1")).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let p = read_panel(SAMPLE.as_bytes(), &spec("A", "2001")).unwrap();
        let odd = EmpiricalMeasure::from_values(&[0.1 + 0.2, 1.0 / 3.0, -1e-300]).unwrap();
        let p = p.with_cell(2, 1, odd).unwrap();
        let mut buf = Vec::new();
        write_panel(&mut buf, &p).unwrap();
        let back = read_panel(buf.as_slice(), &spec("A", "2001")).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn measure_files() {
        let m = read_measure("3\n".as_bytes()).unwrap();
        assert_eq!(m.flat_points(), [3.0]);
        let m = read_measure("x,weight\n0,0.25\n1,0.75\n".as_bytes()).unwrap();
        assert_eq!(m.weights(), [0.25, 0.75]);
        let m = read_measure("x,y\n0,1\n2,3\n".as_bytes()).unwrap();
        assert_eq!(m.dim(), 2);
    }
}
