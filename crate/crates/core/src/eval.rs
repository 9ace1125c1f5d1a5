//! Scoring two prediction streams against ground truth: MAE, paired t-tests
//! and per-period reports.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{parse_date, DATE_FORMAT};
use crate::stats::student_t_two_sided;

/// A weekly series of values, e.g. predictions or ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub weeks: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl Stream {
    pub fn new(weeks: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if weeks.len() != values.len() {
            return Err(Error::Alignment(format!(
                "{} weeks for {} values",
                weeks.len(),
                values.len()
            )));
        }
        if weeks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Alignment("stream weeks are not strictly increasing".into()));
        }
        Ok(Stream { weeks, values })
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    fn range(&self) -> String {
        match (self.weeks.first(), self.weeks.last()) {
            (Some(a), Some(b)) => format!("{a}..{b} ({} weeks)", self.len()),
            _ => "empty".to_string(),
        }
    }

    /// Reads a `week_start,<value>` CSV (the prediction stream format).
    pub fn read_csv(path: &Path) -> Result<Stream> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv_from(file, &path.display().to_string())
    }

    pub fn read_csv_from<R: Read>(reader: R, context: &str) -> Result<Stream> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Schema {
            context: context.to_string(),
            message: e.to_string(),
        })?;
        if header.len() != 2 || &header[0] != "week_start" {
            return Err(Error::Schema {
                context: context.to_string(),
                message: "expected header `week_start,<value>`".into(),
            });
        }
        let mut weeks = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 2;
            let perr = |message: String| Error::Parse {
                context: context.to_string(),
                row,
                message,
            };
            let rec = rec.map_err(|e| perr(e.to_string()))?;
            weeks.push(parse_date(&rec[0]).ok_or_else(|| perr(format!("malformed date `{}`", &rec[0])))?);
            let v: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| perr(format!("non-numeric value `{}`", &rec[1])))?;
            values.push(v);
        }
        Stream::new(weeks, values)
    }

    pub fn write_csv(&self, path: &Path, value_header: &str) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file), value_header)
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W, value_header: &str) -> std::io::Result<()> {
        writeln!(w, "week_start,{value_header}")?;
        for (week, v) in self.weeks.iter().zip(&self.values) {
            writeln!(w, "{},{}", week.format(DATE_FORMAT), v)?;
        }
        w.flush()
    }
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Alignment(format!(
            "MAE needs equal non-empty series, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    /// All differences equal and non-zero: the variance is zero.
    pub degenerate: bool,
}

/// Two-sided paired t-test on `a - b` with `n - 1` degrees of freedom.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    let n = a.len();
    if n != b.len() {
        return Err(Error::Alignment(format!("paired series of length {n} and {}", b.len())));
    }
    if n < 2 {
        return Err(Error::Numerical(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 || sd <= 1e-14 * mean.abs() {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, n, degenerate: false }
        } else {
            TTest {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                n,
                degenerate: true,
            }
        });
    }
    let t = mean / (sd / nf.sqrt());
    Ok(TTest {
        t,
        p: student_t_two_sided(t, nf - 1.0),
        n,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodKind {
    CalendarYear,
    FluSeason,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeriodSpec {
    pub label: String,
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
    pub kind: PeriodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_weeks: Option<usize>,
}

impl PeriodSpec {
    pub fn contains(&self, week: NaiveDate) -> bool {
        self.start <= week && week <= self.end
    }

    pub fn validate(&self) -> Option<String> {
        (self.start > self.end).then(|| format!("period `{}`: start after end", self.label))
    }
}

/// Calendar-year periods (a year runs 1 January to 31 December).
pub fn calendar_years(first: i32, last: i32) -> Vec<PeriodSpec> {
    (first..=last)
        .map(|y| PeriodSpec {
            label: y.to_string(),
            start: NaiveDate::from_ymd_opt(y, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(y, 12, 31).expect("valid year"),
            kind: PeriodKind::CalendarYear,
            expected_weeks: None,
        })
        .collect()
}

/// The five consecutive flu seasons 2008-09 .. 2012-13 with 48, 57, 52, 52
/// and 65 weeks (274 in total), laid end to end from MMWR week 40 of 2008.
pub fn flu_seasons_2008_2013() -> Vec<PeriodSpec> {
    let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
    let season = |label: &str, start: NaiveDate, end: NaiveDate, n: usize| PeriodSpec {
        label: label.to_string(),
        start,
        end,
        kind: PeriodKind::FluSeason,
        expected_weeks: Some(n),
    };
    vec![
        season("2008-09", d(2008, 9, 28), d(2009, 8, 29), 48),
        season("2009-10", d(2009, 8, 30), d(2010, 10, 2), 57),
        season("2010-11", d(2010, 10, 3), d(2011, 10, 1), 52),
        season("2011-12", d(2011, 10, 2), d(2012, 9, 29), 52),
        season("2012-13", d(2012, 9, 30), d(2013, 12, 28), 65),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub n: usize,
    /// Raw MAE values (not scaled).
    pub mae_a: f64,
    pub mae_b: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

impl ReportRow {
    pub fn mae_a_x100(&self) -> f64 {
        self.mae_a * 100.0
    }

    pub fn mae_b_x100(&self) -> f64 {
        self.mae_b * 100.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub weeks: Vec<NaiveDate>,
    pub abs_err_a: Vec<f64>,
    pub abs_err_b: Vec<f64>,
}

fn row_for(label: &str, idx: &[usize], ea: &[f64], eb: &[f64]) -> ReportRow {
    let a: Vec<f64> = idx.iter().map(|&i| ea[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| eb[i]).collect();
    let n = idx.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (t_stat, p_value) = match paired_t_test(&a, &b) {
        Ok(t) => (t.t, t.p),
        Err(e) => {
            log::warn!("period `{label}`: {e}; reporting t = 0, p = 1");
            (0.0, 1.0)
        }
    };
    ReportRow {
        label: label.to_string(),
        n,
        mae_a: mean(&a),
        mae_b: mean(&b),
        t_stat,
        p_value,
    }
}

/// One row per period with at least one week, then a `total_label` row over
/// the union of all period weeks. Streams must cover the same weeks, all of
/// which must be present in `truth`.
pub fn build_report(
    a: &Stream,
    b: &Stream,
    truth: &Stream,
    periods: &[PeriodSpec],
    total_label: &str,
) -> Result<EvalReport> {
    if a.weeks != b.weeks {
        return Err(Error::Alignment(format!(
            "streams cover different weeks: a = {}, b = {}",
            a.range(),
            b.range()
        )));
    }
    let mut truth_vals = Vec::with_capacity(a.len());
    for w in &a.weeks {
        match truth.weeks.binary_search(w) {
            Ok(i) => truth_vals.push(truth.values[i]),
            Err(_) => {
                return Err(Error::Alignment(format!(
                    "week {w} has no ground truth (streams {}, truth {})",
                    a.range(),
                    truth.range()
                )))
            }
        }
    }
    let ea: Vec<f64> = a.values.iter().zip(&truth_vals).map(|(p, t)| (p - t).abs()).collect();
    let eb: Vec<f64> = b.values.iter().zip(&truth_vals).map(|(p, t)| (p - t).abs()).collect();

    let mut rows = Vec::new();
    let mut covered = vec![false; a.len()];
    for period in periods {
        let idx: Vec<usize> = (0..a.len()).filter(|&i| period.contains(a.weeks[i])).collect();
        if idx.is_empty() {
            log::warn!("period `{}` has no retained weeks; omitted", period.label);
            continue;
        }
        if let Some(expect) = period.expected_weeks {
            if expect != idx.len() {
                log::warn!(
                    "period `{}`: {} weeks retained, {} expected",
                    period.label,
                    idx.len(),
                    expect
                );
            }
        }
        idx.iter().for_each(|&i| covered[i] = true);
        rows.push(row_for(&period.label, &idx, &ea, &eb));
    }
    let all: Vec<usize> = (0..a.len()).filter(|&i| covered[i]).collect();
    if !all.is_empty() {
        rows.push(row_for(total_label, &all, &ea, &eb));
    }
    Ok(EvalReport {
        rows,
        weeks: a.weeks.clone(),
        abs_err_a: ea,
        abs_err_b: eb,
    })
}

pub const REPORT_HEADER: &str = "period,n,mae_a_x100,mae_b_x100,t_stat,p_value";

impl EvalReport {
    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let io = |e: csv::Error| Error::io("<report>", std::io::Error::other(e.to_string()));
        out.write_record(REPORT_HEADER.split(',')).map_err(io)?;
        for r in &self.rows {
            out.write_record([
                r.label.clone(),
                r.n.to_string(),
                r.mae_a_x100().to_string(),
                r.mae_b_x100().to_string(),
                r.t_stat.to_string(),
                r.p_value.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| Error::io("<report>", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    /// `week_start,abs_error` series for stream a (`false`) or b (`true`).
    pub fn error_series(&self, second: bool) -> Stream {
        let v = if second { &self.abs_err_b } else { &self.abs_err_a };
        Stream {
            weeks: self.weeks.clone(),
            values: v.clone(),
        }
    }
}

/// Parsed row of a report CSV; MAE columns stay in ×10² units.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ReportCsvRow {
    pub period: String,
    pub n: usize,
    pub mae_a_x100: f64,
    pub mae_b_x100: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

pub fn read_report_csv<R: Read>(r: R) -> Result<Vec<ReportCsvRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .enumerate()
        .map(|(i, rec)| {
            rec.map_err(|e| Error::Parse {
                context: "report".into(),
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}
