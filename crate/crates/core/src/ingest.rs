//! Raw GFT / CDC ILINet CSV parsing and reporting-lag alignment.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{parse_cell, parse_date, pattern_matches, Column, TimeSeriesFrame};

/// Column names produced by [`parse_cdc_csv`].
pub const CDC_ILI: &str = "cdc_ili";
pub const CDC_AGE_0_4: &str = "cdc_age_0_4";
pub const CDC_AGE_5_24: &str = "cdc_age_5_24";
pub const CDC_AGE_25_64: &str = "cdc_age_25_64";
pub const CDC_AGE_65: &str = "cdc_age_65";
pub const CDC_TOTAL_PATIENTS: &str = "cdc_total_patients";
pub const CDC_PROVIDERS: &str = "cdc_providers";

/// How CDC features are shifted and which columns feed the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentSpec {
    pub lag_weeks: u32,
    pub feature_sources: Vec<String>,
    pub target_source: String,
}

impl Default for AlignmentSpec {
    fn default() -> Self {
        AlignmentSpec {
            lag_weeks: 2,
            feature_sources: vec!["*".to_string()],
            target_source: CDC_ILI.to_string(),
        }
    }
}

/// Sunday that starts MMWR week 1 of `year`: the week containing January 4.
pub fn mmwr_year_start(year: i32) -> Option<NaiveDate> {
    let jan4 = NaiveDate::from_ymd_opt(year, 1, 4)?;
    let back = jan4.weekday().num_days_from_sunday() as i64;
    Some(jan4 - Duration::days(back))
}

pub fn mmwr_weeks_in_year(year: i32) -> Option<u32> {
    let this = mmwr_year_start(year)?;
    let next = mmwr_year_start(year + 1)?;
    Some(((next - this).num_days() / 7) as u32)
}

/// Week-start (Sunday) date of MMWR `(year, week)`. `None` when the week
/// number does not exist in that year.
pub fn mmwr_week_start(year: i32, week: u32) -> Option<NaiveDate> {
    if week == 0 || week > mmwr_weeks_in_year(year)? {
        return None;
    }
    Some(mmwr_year_start(year)? + Duration::weeks(week as i64 - 1))
}

/// Inverse of [`mmwr_week_start`] for any date.
pub fn mmwr_week_of(date: NaiveDate) -> (i32, u32) {
    let mut year = date.year() + 1;
    loop {
        let start = mmwr_year_start(year).expect("year in chrono range");
        if start <= date {
            return (year, ((date - start).num_days() / 7) as u32 + 1);
        }
        year -= 1;
    }
}

/// Parses the GFT download format: a `Date,<Region>,...` header (any preamble
/// lines before it are skipped), ISO dates and numeric or empty cells.
/// Reads a raw input file; a missing file is reported as a schema problem
/// with that input rather than a bare I/O failure.
fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Schema {
            context: path.display().to_string(),
            message: "file not found".to_string(),
        },
        _ => Error::io(path, e),
    })
}

pub fn parse_gft_csv(path: &Path) -> Result<TimeSeriesFrame> {
    let text = read_input(path)?;
    parse_gft_str(&text, &path.display().to_string())
}

pub fn parse_gft_str(text: &str, context: &str) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut header: Option<Vec<String>> = None;
    let mut rows: BTreeMap<NaiveDate, (usize, Vec<Option<f64>>)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(context, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let Some(names) = &header else {
            if record.get(0).map(str::trim) == Some("Date") {
                let names: Vec<String> = record.iter().skip(1).map(|s| s.trim().to_string()).collect();
                if names.is_empty() {
                    return Err(schema_err(context, "no region columns after `Date`"));
                }
                header = Some(names);
            }
            continue;
        };
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let date = parse_date(&record[0]).ok_or_else(|| {
            parse_err(context, line, format!("malformed date `{}`", &record[0]))
        })?;
        if record.len() > names.len() + 1 {
            return Err(parse_err(
                context,
                line,
                format!("{} cells for {} columns", record.len(), names.len() + 1),
            ));
        }
        let mut values = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or("");
            values.push(parse_cell(cell).map_err(|_| {
                parse_err(context, line, format!("column `{name}`: non-numeric cell `{cell}`"))
            })?);
        }
        if let Some((first, _)) = rows.insert(date, (line, values)) {
            return Err(parse_err(
                context,
                line,
                format!("duplicate week {date} (first seen on row {first})"),
            ));
        }
    }
    let names = header.ok_or_else(|| schema_err(context, "no `Date` header row found"))?;
    let (weeks, table) = regularize(rows.into_iter().map(|(d, (_, v))| (d, v)).collect(), names.len());
    let columns = names
        .into_iter()
        .enumerate()
        .map(|(j, n)| Column::new(n, table.iter().map(|r| r[j]).collect()))
        .collect();
    TimeSeriesFrame::new(weeks, columns, None)
}

const CDC_MANDATORY: [(&str, &str); 9] = [
    ("YEAR", ""),
    ("WEEK", ""),
    ("%UNWEIGHTED ILI", CDC_ILI),
    ("AGE 0-4", CDC_AGE_0_4),
    ("AGE 5-24", CDC_AGE_5_24),
    ("AGE 25-64", CDC_AGE_25_64),
    ("AGE 65", CDC_AGE_65),
    ("TOTAL PATIENTS", CDC_TOTAL_PATIENTS),
    ("NUM. OF PROVIDERS", CDC_PROVIDERS),
];

/// Parses a CDC ILINet export. The header row is the first row that names
/// both `YEAR` and `WEEK`; `X` cells are treated as missing.
pub fn parse_cdc_csv(path: &Path) -> Result<TimeSeriesFrame> {
    let text = read_input(path)?;
    parse_cdc_str(&text, &path.display().to_string())
}

pub fn parse_cdc_str(text: &str, context: &str) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut index: Option<Vec<usize>> = None;
    let mut rows: BTreeMap<NaiveDate, (usize, Vec<Option<f64>>)> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_err(context, 0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let Some(idx) = &index else {
            let upper: Vec<String> = record.iter().map(|c| c.trim().to_uppercase()).collect();
            if upper.iter().any(|c| c == "YEAR") && upper.iter().any(|c| c == "WEEK") {
                let mut found = Vec::new();
                let mut missing = Vec::new();
                for (name, _) in CDC_MANDATORY {
                    match upper.iter().position(|c| c == name) {
                        Some(i) => found.push(i),
                        None => missing.push(name),
                    }
                }
                if !missing.is_empty() {
                    return Err(schema_err(
                        context,
                        &format!("missing mandatory column(s): {}", missing.join(", ")),
                    ));
                }
                index = Some(found);
            }
            continue;
        };
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        let cell = |k: usize| record.get(idx[k]).unwrap_or("").trim();
        let year: i32 = cell(0)
            .parse()
            .map_err(|_| parse_err(context, line, format!("malformed YEAR `{}`", cell(0))))?;
        let week: u32 = cell(1)
            .parse()
            .map_err(|_| parse_err(context, line, format!("malformed WEEK `{}`", cell(1))))?;
        if !(1..=53).contains(&week) {
            return Err(parse_err(context, line, format!("week {week} outside 1..53")));
        }
        let date = mmwr_week_start(year, week).ok_or_else(|| {
            parse_err(context, line, format!("{year} has no MMWR week {week}"))
        })?;
        let mut values = Vec::with_capacity(CDC_MANDATORY.len() - 2);
        for (k, (name, _)) in CDC_MANDATORY.iter().enumerate().skip(2) {
            let raw = cell(k);
            let v = if raw.eq_ignore_ascii_case("x") {
                None
            } else {
                parse_cell(raw).map_err(|_| {
                    parse_err(context, line, format!("column `{name}`: non-numeric cell `{raw}`"))
                })?
            };
            values.push(v);
        }
        if let Some(pct) = values[0] {
            if !(0.0..=100.0).contains(&pct) {
                return Err(parse_err(
                    context,
                    line,
                    format!("%UNWEIGHTED ILI {pct} outside [0, 100]"),
                ));
            }
            values[0] = Some(pct / 100.0);
        }
        if let Some((first, _)) = rows.insert(date, (line, values)) {
            return Err(parse_err(
                context,
                line,
                format!("duplicate week {year}-W{week} (first seen on row {first})"),
            ));
        }
    }
    if index.is_none() {
        return Err(schema_err(context, "no header row with YEAR and WEEK columns"));
    }
    let width = CDC_MANDATORY.len() - 2;
    let (weeks, table) = regularize(rows.into_iter().map(|(d, (_, v))| (d, v)).collect(), width);
    let columns: Vec<Column> = CDC_MANDATORY
        .iter()
        .skip(2)
        .enumerate()
        .map(|(j, (_, n))| Column::new(*n, table.iter().map(|r| r[j]).collect()))
        .collect();
    let target = columns[0].values.clone();
    TimeSeriesFrame::new(weeks, columns, Some(target))
}

/// Parses a `week_start,<value>` two-column series (e.g. an external model's
/// predictions) into a single-column frame named `name`.
pub fn parse_series_csv(path: &Path, name: &str) -> Result<TimeSeriesFrame> {
    let context = path.display().to_string();
    let text = read_input(path)?;
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| schema_err(&context, &e.to_string()))?;
    if headers.len() < 2 || headers[0].trim() != "week_start" {
        return Err(schema_err(&context, "header must be `week_start,<value>`"));
    }
    let mut rows = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| parse_err(&context, row, e.to_string()))?;
        let date = parse_date(&record[0])
            .ok_or_else(|| parse_err(&context, row, format!("malformed date `{}`", &record[0])))?;
        let v = parse_cell(record.get(1).unwrap_or(""))
            .map_err(|_| parse_err(&context, row, "non-numeric value".to_string()))?;
        if rows.insert(date, vec![v]).is_some() {
            return Err(parse_err(&context, row, format!("duplicate week {date}")));
        }
    }
    let (weeks, table) = regularize(rows.into_iter().collect(), 1);
    let col = Column::new(name, table.into_iter().map(|r| r[0]).collect());
    TimeSeriesFrame::new(weeks, vec![col], None)
}

/// Outer-joins the columns of `other` onto `base` by week. Targets are taken
/// from `base`; column names must not collide.
pub fn merge_columns(base: &TimeSeriesFrame, other: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    for name in other.column_names() {
        if base.column(name).is_some() {
            return Err(Error::Alignment(format!("column `{name}` present in both inputs")));
        }
    }
    let mut weeks: Vec<NaiveDate> = base.weeks().iter().chain(other.weeks()).copied().collect();
    weeks.sort();
    weeks.dedup();
    let pick = |frame: &TimeSeriesFrame, col: &Column| -> Vec<Option<f64>> {
        weeks
            .iter()
            .map(|w| frame.week_index(*w).and_then(|i| col.values[i]))
            .collect()
    };
    let mut columns: Vec<Column> = base
        .columns()
        .iter()
        .map(|c| Column::new(c.name.clone(), pick(base, c)))
        .collect();
    columns.extend(other.columns().iter().map(|c| Column::new(c.name.clone(), pick(other, c))));
    let target = base.target().map(|t| {
        weeks
            .iter()
            .map(|w| base.week_index(*w).and_then(|i| t[i]))
            .collect()
    });
    TimeSeriesFrame::new(weeks, columns, target)
}

/// Builds the engine dataset: GFT columns at week `t`, CDC columns observed at
/// week `t - lag_weeks`, target = CDC `target_source` at week `t`.
///
/// Only weeks with a target and at least one selected feature are kept.
pub fn align(gft: &TimeSeriesFrame, cdc: &TimeSeriesFrame, spec: &AlignmentSpec) -> Result<TimeSeriesFrame> {
    if gft.is_empty() || cdc.is_empty() {
        return Err(Error::Alignment("empty input frame".to_string()));
    }
    let target_col = cdc.column(&spec.target_source).ok_or_else(|| {
        Error::Alignment(format!("CDC frame has no column `{}`", spec.target_source))
    })?;
    let selected = |name: &str| spec.feature_sources.iter().any(|p| pattern_matches(p, name));
    let gft_cols: Vec<&Column> = gft.columns().iter().filter(|c| selected(&c.name)).collect();
    let cdc_cols: Vec<&Column> = cdc.columns().iter().filter(|c| selected(&c.name)).collect();
    if gft_cols.is_empty() && cdc_cols.is_empty() {
        return Err(Error::Alignment("no column matches feature_sources".to_string()));
    }
    for c in &cdc_cols {
        if gft_cols.iter().any(|g| g.name == c.name) {
            return Err(Error::Alignment(format!("column `{}` present in both inputs", c.name)));
        }
    }

    let lag = Duration::weeks(spec.lag_weeks as i64);
    let gft_pos: HashMap<NaiveDate, usize> = gft.weeks().iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let cdc_pos: HashMap<NaiveDate, usize> = cdc.weeks().iter().enumerate().map(|(i, w)| (*w, i)).collect();

    let mut weeks = Vec::new();
    let mut target = Vec::new();
    let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); gft_cols.len() + cdc_cols.len()];
    for (i, week) in cdc.weeks().iter().enumerate() {
        let Some(y) = target_col.values[i] else { continue };
        let g = gft_pos.get(week).copied();
        let c = cdc_pos.get(&(*week - lag)).copied();
        let row: Vec<Option<f64>> = gft_cols
            .iter()
            .map(|col| g.and_then(|k| col.values[k]))
            .chain(cdc_cols.iter().map(|col| c.and_then(|k| col.values[k])))
            .collect();
        if row.iter().all(Option::is_none) {
            continue;
        }
        weeks.push(*week);
        target.push(Some(y));
        for (slot, v) in values.iter_mut().zip(row) {
            slot.push(v);
        }
    }
    if weeks.is_empty() {
        return Err(Error::Alignment(format!(
            "no overlapping weeks (GFT {}..{}, CDC {}..{}, lag {} weeks)",
            gft.weeks()[0],
            gft.weeks()[gft.len() - 1],
            cdc.weeks()[0],
            cdc.weeks()[cdc.len() - 1],
            spec.lag_weeks
        )));
    }
    let columns = gft_cols
        .iter()
        .chain(cdc_cols.iter())
        .zip(values)
        .map(|(c, v)| Column::new(c.name.clone(), v))
        .collect();
    TimeSeriesFrame::new(weeks, columns, Some(target))
}

/// Fills absent weeks between the first and last row with all-missing rows so
/// raw frames are spaced exactly one week apart.
fn regularize(
    rows: Vec<(NaiveDate, Vec<Option<f64>>)>,
    width: usize,
) -> (Vec<NaiveDate>, Vec<Vec<Option<f64>>>) {
    let mut weeks = Vec::with_capacity(rows.len());
    let mut table = Vec::with_capacity(rows.len());
    for (date, values) in rows {
        if let Some(&prev) = weeks.last() {
            let mut next: NaiveDate = prev + Duration::weeks(1);
            while next < date && (date - next).num_days() % 7 == 0 {
                weeks.push(next);
                table.push(vec![None; width]);
                next += Duration::weeks(1);
            }
        }
        weeks.push(date);
        table.push(values);
    }
    (weeks, table)
}

fn parse_err(context: &str, row: usize, message: String) -> Error {
    Error::Parse {
        context: context.to_string(),
        row,
        message,
    }
}

fn schema_err(context: &str, message: &str) -> Error {
    Error::Schema {
        context: context.to_string(),
        message: message.to_string(),
    }
}
