//! File formats: panel, price, coefficient, holdings and break CSVs, and
//! the fit JSON shared by both estimators.
//!
//! Every index written to disk is one-based; in-memory indices stay
//! zero-based.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::bench::GenLassoPath;
use crate::error::{IflError, Result};
use crate::ifl::{BreakPattern, IflFit};
use crate::panel::{CoefficientMatrix, RegressionPanel};
use crate::portfolio::{HoldingsEstimate, PriceTable, Rebalancing};

fn parse_error(line: u64, column: &str, message: impl Into<String>) -> IflError {
    IflError::Parse {
        line: line as usize,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a CSV whose header must be `lead` followed by `prefix1..prefixK`.
/// Returns `K`, and for each data row its line number and raw cells.
fn read_table<R: Read>(
    reader: R,
    lead: &[&str],
    prefix: &str,
) -> Result<(usize, Vec<(u64, Vec<String>)>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_error(1, "header", "empty file")),
    };
    if header.len() <= lead.len() {
        return Err(parse_error(
            1,
            "header",
            format!(
                "expected {} and at least one {prefix} column",
                lead.join(",")
            ),
        ));
    }
    for (i, name) in header.iter().enumerate() {
        let expected = match lead.get(i) {
            Some(l) => l.to_string(),
            None => format!("{prefix}{}", i - lead.len() + 1),
        };
        if name.trim() != expected {
            return Err(parse_error(
                1,
                name,
                format!("expected header `{expected}`"),
            ));
        }
    }
    let width = header.len();
    let mut rows = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(parse_error(
                line,
                "row",
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        rows.push((line, record.iter().map(|s| s.trim().to_string()).collect()));
    }
    Ok((width - lead.len(), rows))
}

fn parse_f64(line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .parse()
        .map_err(|_| parse_error(line, column, format!("`{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_error(line, column, format!("`{cell}` is not finite")));
    }
    Ok(v)
}

fn parse_date(line: u64, cell: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(cell, "%Y-%m-%d")
        .map_err(|_| parse_error(line, "date", format!("`{cell}` is not an ISO date")))
}

fn check_time_index(line: u64, cell: &str, expected: usize) -> Result<()> {
    let t: usize = cell
        .parse()
        .map_err(|_| parse_error(line, "t", format!("`{cell}` is not a positive integer")))?;
    if t != expected {
        return Err(parse_error(
            line,
            "t",
            format!("expected {expected}, found {t}"),
        ));
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Panel CSV: `t,y,x1,...,xp`, with `t` counting up from 1.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<RegressionPanel> {
    let (p, rows) = read_table(reader, &["t", "y"], "x")?;
    let mut y = Vec::with_capacity(rows.len());
    let mut x = Vec::with_capacity(rows.len());
    for (i, (line, cells)) in rows.iter().enumerate() {
        check_time_index(*line, &cells[0], i + 1)?;
        y.push(parse_f64(*line, "y", &cells[1])?);
        let row = (0..p)
            .map(|j| parse_f64(*line, &format!("x{}", j + 1), &cells[2 + j]))
            .collect::<Result<Vec<_>>>()?;
        x.push(row);
    }
    RegressionPanel::from_rows(y, &x)
}

pub fn read_panel_path(path: &Path) -> Result<RegressionPanel> {
    read_panel_csv(open(path)?)
}

pub fn write_panel_csv<W: Write>(writer: W, panel: &RegressionPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=panel.n_features()).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for t in 0..panel.n_obs() {
        let mut row = vec![(t + 1).to_string(), panel.y()[t].to_string()];
        row.extend(panel.row(t).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficient CSV for plotting: `t,beta_1,...,beta_p`.
pub fn write_coefficients_csv<W: Write>(writer: W, b: &CoefficientMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=b.n_features()).map(|j| format!("beta_{j}")));
    w.write_record(&header)?;
    for (t, row) in b.to_rows().iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_coefficients_csv<R: Read>(reader: R) -> Result<CoefficientMatrix> {
    let (p, rows) = read_table(reader, &["t"], "beta_")?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, (line, cells)) in rows.iter().enumerate() {
        check_time_index(*line, &cells[0], i + 1)?;
        out.push(
            (0..p)
                .map(|j| parse_f64(*line, &format!("beta_{}", j + 1), &cells[1 + j]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    CoefficientMatrix::from_rows(&out)
}

/// Price CSV: `date,fund,asset_1,...,asset_K`.
pub fn read_prices_csv<R: Read>(reader: R) -> Result<PriceTable> {
    let (k, rows) = read_table(reader, &["date", "fund"], "asset_")?;
    let mut dates = Vec::with_capacity(rows.len());
    let mut fund = Vec::with_capacity(rows.len());
    let mut prices = Vec::with_capacity(rows.len());
    for (line, cells) in &rows {
        dates.push(parse_date(*line, &cells[0])?);
        fund.push(parse_f64(*line, "fund", &cells[1])?);
        prices.push(
            (0..k)
                .map(|i| parse_f64(*line, &format!("asset_{}", i + 1), &cells[2 + i]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    PriceTable::new(dates, prices, fund)
}

pub fn read_prices_path(path: &Path) -> Result<PriceTable> {
    read_prices_csv(open(path)?)
}

pub fn write_prices_csv<W: Write>(writer: W, table: &PriceTable) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string(), "fund".to_string()];
    header.extend((1..=table.n_assets()).map(|i| format!("asset_{i}")));
    w.write_record(&header)?;
    for (s, date) in table.dates().iter().enumerate() {
        let mut row = vec![date.to_string(), table.fund_value()[s].to_string()];
        row.extend(table.prices()[s].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Holdings CSV: `date,N_1,...,N_K`, one row per return period.
pub fn write_holdings_csv<W: Write>(
    writer: W,
    dates: &[NaiveDate],
    n_hat: &CoefficientMatrix,
) -> Result<()> {
    if dates.len() != n_hat.n_obs() {
        return Err(IflError::shape(n_hat.n_obs(), dates.len()));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend((1..=n_hat.n_features()).map(|i| format!("N_{i}")));
    w.write_record(&header)?;
    for (date, row) in dates.iter().zip(n_hat.to_rows()) {
        let mut rec = vec![date.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_holdings_csv<R: Read>(reader: R) -> Result<(Vec<NaiveDate>, CoefficientMatrix)> {
    let (k, rows) = read_table(reader, &["date"], "N_")?;
    let mut dates = Vec::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, cells) in &rows {
        dates.push(parse_date(*line, &cells[0])?);
        out.push(
            (0..k)
                .map(|i| parse_f64(*line, &format!("N_{}", i + 1), &cells[1 + i]))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((dates, CoefficientMatrix::from_rows(&out)?))
}

/// Breaks CSV: `date,period,asset`, one row per asset that changes.
pub fn write_breaks_csv<W: Write>(writer: W, events: &[Rebalancing]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "period", "asset"])?;
    for e in events {
        for a in &e.assets {
            w.write_record([
                e.date.to_string(),
                (e.period + 1).to_string(),
                (a + 1).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_breaks_csv<R: Read>(reader: R) -> Result<Vec<Rebalancing>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(["date", "period", "asset"]) {
        return Err(parse_error(1, "header", "expected `date,period,asset`"));
    }
    let mut out: Vec<Rebalancing> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let date = parse_date(line, record[0].trim())?;
        let index = |col: &str, cell: &str| -> Result<usize> {
            match cell.trim().parse::<usize>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(parse_error(
                    line,
                    col,
                    format!("`{cell}` is not a positive integer"),
                )),
            }
        };
        let period = index("period", &record[1])?;
        let asset = index("asset", &record[2])?;
        match out.last_mut() {
            Some(last) if last.period == period => last.assets.push(asset),
            _ => out.push(Rebalancing {
                date,
                period,
                assets: vec![asset],
            }),
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakRecord {
    pub component: usize,
    pub time: usize,
}

/// A nonzero constant run; `start..=end` in one-based time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportRecord {
    pub component: usize,
    pub start: usize,
    pub end: usize,
    pub value: f64,
}

/// On-disk form of a fit, shared by both estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub estimator: String,
    pub n_obs: usize,
    pub n_features: usize,
    /// Row-major `T × p`.
    pub beta_hat: Vec<Vec<f64>>,
    pub breaks: Vec<BreakRecord>,
    pub support: Vec<SupportRecord>,
    pub lambda_break: f64,
    pub lambda_select: Option<f64>,
    pub converged: bool,
    pub diagnostics: serde_json::Value,
}

fn breaks_of(pattern: &BreakPattern) -> Vec<BreakRecord> {
    pattern
        .list()
        .into_iter()
        .map(|b| BreakRecord {
            component: b.component + 1,
            time: b.time + 1,
        })
        .collect()
}

fn support_of(b: &CoefficientMatrix) -> Vec<SupportRecord> {
    let pattern = BreakPattern::from_coefficients(b);
    let mut out = Vec::new();
    for j in 0..b.n_features() {
        for seg in pattern.segments(j) {
            let value = b.get(seg.start, j);
            if value != 0.0 {
                out.push(SupportRecord {
                    component: j + 1,
                    start: seg.start + 1,
                    end: seg.end,
                    value,
                });
            }
        }
    }
    out
}

impl FitRecord {
    pub fn from_ifl(fit: &IflFit) -> Result<Self> {
        Ok(Self {
            estimator: "ifl".into(),
            n_obs: fit.b_hat.n_obs(),
            n_features: fit.b_hat.n_features(),
            beta_hat: fit.b_hat.to_rows(),
            breaks: breaks_of(&fit.breaks),
            support: support_of(&fit.b_hat),
            lambda_break: fit.lambda_break,
            lambda_select: Some(fit.lambda_select),
            converged: fit.diagnostics.converged,
            diagnostics: serde_json::to_value(&fit.diagnostics)?,
        })
    }

    /// The BIC-chosen fit of a genLASSO path.
    pub fn from_genlasso(
        path: &GenLassoPath,
        n_obs: usize,
        n_features: usize,
        gamma_mix: f64,
    ) -> Result<Self> {
        let b = path.chosen_b(n_obs, n_features);
        let converged = path.converged[path.chosen];
        Ok(Self {
            estimator: "genlasso".into(),
            n_obs,
            n_features,
            beta_hat: b.to_rows(),
            breaks: breaks_of(&BreakPattern::from_coefficients(&b)),
            support: support_of(&b),
            lambda_break: path.chosen_lambda(),
            lambda_select: None,
            converged,
            diagnostics: serde_json::json!({
                "converged": converged,
                "gamma_mix": gamma_mix,
                "iterations": path.iterations[path.chosen],
                "df": path.df[path.chosen],
                "path_length": path.grid.len(),
                "rss_floored": path.rss_floored,
            }),
        })
    }

    pub fn coefficients(&self) -> Result<CoefficientMatrix> {
        let b = CoefficientMatrix::from_rows(&self.beta_hat)?;
        if b.n_obs() != self.n_obs || b.n_features() != self.n_features {
            return Err(IflError::shape(
                format!("{} × {}", self.n_obs, self.n_features),
                format!("{} × {}", b.n_obs(), b.n_features()),
            ));
        }
        Ok(b)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = writer;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// Writes `fit.json` and `beta_hat.csv` into `dir`.
pub fn write_fit_artifacts(dir: &Path, record: &FitRecord) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = create(&dir.join("fit.json"))?;
    record.write_json(&mut f)?;
    f.flush()?;
    let mut f = create(&dir.join("beta_hat.csv"))?;
    write_coefficients_csv(&mut f, &record.coefficients()?)?;
    f.flush()?;
    Ok(())
}

/// Writes `fit.json`, `holdings.csv` and `breaks.csv` into `dir`.
pub fn write_holdings_artifacts(dir: &Path, estimate: &HoldingsEstimate) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = create(&dir.join("fit.json"))?;
    FitRecord::from_ifl(&estimate.fit)?.write_json(&mut f)?;
    f.flush()?;
    let mut f = create(&dir.join("holdings.csv"))?;
    write_holdings_csv(&mut f, &estimate.dates, &estimate.n_hat)?;
    f.flush()?;
    let mut f = create(&dir.join("breaks.csv"))?;
    write_breaks_csv(&mut f, &estimate.rebalancing)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panel_round_trip() {
        let panel = RegressionPanel::from_rows(
            vec![1.5, -0.25, 3.0],
            &[vec![0.1, 2.0], vec![1e-9, -3.5], vec![7.0, 0.3]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_panel_csv(&mut buf, &panel).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,y,x1,x2\n1,1.5,0.1,2\n"));
        assert_eq!(read_panel_csv(buf.as_slice()).unwrap(), panel);
    }

    #[test]
    fn parse_errors_name_line_and_column() {
        let err = read_panel_csv("t,y,x1\n1,1.0,2.0\n2,abc,1.0\n".as_bytes()).unwrap_err();
        match err {
            IflError::Parse { line, column, .. } => assert_eq!((line, column.as_str()), (3, "y")),
            other => panic!("unexpected {other}"),
        }
        let err = read_panel_csv("t,y,x1\n1,1.0,2.0\n3,1.0,1.0\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 3, column t"), "{err}");
        assert!(read_panel_csv("t,y,z1\n1,1,1\n2,1,1\n".as_bytes()).is_err());
        assert!(read_panel_csv("t,y,x1\n1,1,1\n2,1\n".as_bytes()).is_err());
        assert!(read_panel_csv("".as_bytes()).is_err());
    }

    #[test]
    fn breaks_csv_groups_assets_by_period() {
        let date = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
        let events = vec![Rebalancing {
            date,
            period: 9,
            assets: vec![0, 2],
        }];
        let mut buf = Vec::new();
        write_breaks_csv(&mut buf, &events).unwrap();
        assert_eq!(
            String::from_utf8_lossy(&buf),
            "date,period,asset\n2024-03-01,10,1\n2024-03-01,10,3\n"
        );
        assert_eq!(read_breaks_csv(buf.as_slice()).unwrap(), events);
    }

    #[test]
    fn support_records_are_one_based_runs() {
        let b = CoefficientMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 1.0], vec![2.0, 0.0]])
            .unwrap();
        let s = support_of(&b);
        assert_eq!(s.len(), 2);
        assert_eq!(
            (s[0].component, s[0].start, s[0].end, s[0].value),
            (1, 2, 3, 2.0)
        );
        assert_eq!((s[1].component, s[1].start, s[1].end), (2, 1, 2));
    }
}
