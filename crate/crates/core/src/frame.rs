//! Week-indexed data frame shared by ingestion, the backtest and the synthetic
//! generator, plus the canonical `week_start,target,<feature...>` CSV format.

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// One named series with an explicit slot per week; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Column {
            name: name.into(),
            values,
        }
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    weeks: Vec<NaiveDate>,
    columns: Vec<Column>,
    target: Option<Vec<Option<f64>>>,
}

impl TimeSeriesFrame {
    /// Builds a frame, checking week ordering, per-column lengths, finiteness
    /// and the `[0, 1]` target domain.
    ///
    /// Consecutive weeks must be a positive multiple of 7 days apart; a gap
    /// larger than one week only arises after rows with a missing target are
    /// dropped during alignment.
    pub fn new(
        weeks: Vec<NaiveDate>,
        columns: Vec<Column>,
        target: Option<Vec<Option<f64>>>,
    ) -> Result<Self> {
        for pair in weeks.windows(2) {
            let days = (pair[1] - pair[0]).num_days();
            if days <= 0 || days % 7 != 0 {
                return Err(Error::Frame(format!(
                    "weeks {} and {} are not increasing in whole weeks",
                    pair[0], pair[1]
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Frame(format!("duplicate column `{}`", col.name)));
            }
            if col.values.len() != weeks.len() {
                return Err(Error::Frame(format!(
                    "column `{}` has {} values for {} weeks",
                    col.name,
                    col.values.len(),
                    weeks.len()
                )));
            }
            if let Some(bad) = col.values.iter().flatten().find(|v| !v.is_finite()) {
                return Err(Error::Frame(format!(
                    "column `{}` holds non-finite value {bad}",
                    col.name
                )));
            }
        }
        if let Some(target) = &target {
            if target.len() != weeks.len() {
                return Err(Error::Frame(format!(
                    "target has {} values for {} weeks",
                    target.len(),
                    weeks.len()
                )));
            }
            if let Some(bad) = target
                .iter()
                .flatten()
                .find(|v| !(0.0..=1.0).contains(*v))
            {
                return Err(Error::Frame(format!("target value {bad} outside [0, 1]")));
            }
        }
        Ok(TimeSeriesFrame {
            weeks,
            columns,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn weeks(&self) -> &[NaiveDate] {
        &self.weeks
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target(&self) -> Option<&[Option<f64>]> {
        self.target.as_deref()
    }

    pub fn week_index(&self, week: NaiveDate) -> Option<usize> {
        self.weeks.binary_search(&week).ok()
    }

    pub fn into_parts(self) -> (Vec<NaiveDate>, Vec<Column>, Option<Vec<Option<f64>>>) {
        (self.weeks, self.columns, self.target)
    }

    /// Keeps only the columns whose names match at least one pattern
    /// (see [`pattern_matches`]), preserving column order.
    pub fn select_columns(&self, patterns: &[String]) -> TimeSeriesFrame {
        let columns = self
            .columns
            .iter()
            .filter(|c| patterns.iter().any(|p| pattern_matches(p, &c.name)))
            .cloned()
            .collect();
        TimeSeriesFrame {
            weeks: self.weeks.clone(),
            columns,
            target: self.target.clone(),
        }
    }

    /// Last-observation-carried-forward imputation of feature columns; a
    /// leading gap takes the column's first observed value. Columns with no
    /// observation at all are left untouched.
    pub fn impute_locf(&self) -> TimeSeriesFrame {
        let columns = self
            .columns
            .iter()
            .map(|col| {
                let first = col.values.iter().flatten().next().copied();
                let mut last = first;
                let values = col
                    .values
                    .iter()
                    .map(|v| {
                        if v.is_some() {
                            last = *v;
                        }
                        last
                    })
                    .collect();
                Column::new(col.name.clone(), values)
            })
            .collect();
        TimeSeriesFrame {
            weeks: self.weeks.clone(),
            columns,
            target: self.target.clone(),
        }
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> TimeSeriesFrame {
        let end = end.min(self.len());
        let start = start.min(end);
        TimeSeriesFrame {
            weeks: self.weeks[start..end].to_vec(),
            columns: self
                .columns
                .iter()
                .map(|c| Column::new(c.name.clone(), c.values[start..end].to_vec()))
                .collect(),
            target: self.target.as_ref().map(|t| t[start..end].to_vec()),
        }
    }

    pub fn write_canonical(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_canonical_to(std::io::BufWriter::new(file))
            .map_err(|e| match e {
                Error::Io { source, .. } => Error::io(path, source),
                other => other,
            })
    }

    pub fn write_canonical_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let mut header = vec!["week_start".to_string(), "target".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        out.write_record(&header).map_err(csv_io)?;
        for (i, week) in self.weeks.iter().enumerate() {
            let mut record = Vec::with_capacity(header.len());
            record.push(week.format(DATE_FORMAT).to_string());
            record.push(fmt_cell(self.target.as_ref().and_then(|t| t[i])));
            record.extend(self.columns.iter().map(|c| fmt_cell(c.values[i])));
            out.write_record(&record).map_err(csv_io)?;
        }
        out.flush().map_err(|e| Error::io("<canonical csv>", e))?;
        Ok(())
    }

    pub fn read_canonical(path: &Path) -> Result<TimeSeriesFrame> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_canonical_from(file, &path.display().to_string())
    }

    /// Parses the canonical CSV. A target column that is empty on every row
    /// reads back as "no target".
    pub fn read_canonical_from<R: Read>(reader: R, context: &str) -> Result<TimeSeriesFrame> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| schema(context, e.to_string()))?
            .clone();
        if header.len() < 2 || &header[0] != "week_start" || &header[1] != "target" {
            return Err(schema(
                context,
                "header must start with `week_start,target`".to_string(),
            ));
        }
        let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
        let mut weeks = Vec::new();
        let mut target = Vec::new();
        let mut values: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
        for (i, record) in rdr.records().enumerate() {
            let row = i + 2;
            let record = record.map_err(|e| parse(context, row, e.to_string()))?;
            if record.len() != header.len() {
                return Err(parse(
                    context,
                    row,
                    format!("expected {} cells, found {}", header.len(), record.len()),
                ));
            }
            weeks.push(parse_date(&record[0]).ok_or_else(|| {
                parse(context, row, format!("malformed date `{}`", &record[0]))
            })?);
            target.push(parse_cell(&record[1]).map_err(|_| {
                parse(context, row, format!("non-numeric target `{}`", &record[1]))
            })?);
            for (j, name) in names.iter().enumerate() {
                let cell = &record[j + 2];
                values[j].push(parse_cell(cell).map_err(|_| {
                    parse(context, row, format!("column `{name}`: non-numeric `{cell}`"))
                })?);
            }
        }
        let target = if target.iter().all(Option::is_none) {
            None
        } else {
            Some(target)
        };
        let columns = names
            .into_iter()
            .zip(values)
            .map(|(n, v)| Column::new(n, v))
            .collect();
        TimeSeriesFrame::new(weeks, columns, target)
    }
}

/// Simple glob: `*` matches any run of characters, everything else is literal.
pub fn pattern_matches(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    let last = parts.len() - 1;
    for (i, part) in parts.iter().enumerate() {
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == last {
            return rest.ends_with(part);
        } else if let Some(pos) = rest.find(part) {
            rest = &rest[pos + part.len()..];
        } else {
            return false;
        }
    }
    true
}

pub(crate) fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT).ok()
}

pub(crate) fn parse_cell(s: &str) -> std::result::Result<Option<f64>, ()> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(()),
    }
}

pub(crate) fn fmt_cell(v: Option<f64>) -> String {
    // `Display` for f64 emits the shortest string that parses back to the same bits.
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_io(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e.to_string()))
}

fn schema(context: &str, message: String) -> Error {
    Error::Schema {
        context: context.to_string(),
        message,
    }
}

fn parse(context: &str, row: usize, message: String) -> Error {
    Error::Parse {
        context: context.to_string(),
        row,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn glob_patterns() {
        assert!(pattern_matches("*", "anything"));
        assert!(pattern_matches("cdc_*", "cdc_ili"));
        assert!(!pattern_matches("cdc_*", "United States"));
        assert!(pattern_matches("*States", "United States"));
        assert!(pattern_matches("a*c*e", "abcde"));
        assert!(!pattern_matches("a*c*e", "abde"));
        assert!(pattern_matches("exact", "exact"));
        assert!(!pattern_matches("exact", "exact2"));
    }

    #[test]
    fn rejects_bad_spacing_and_target_domain() {
        let weeks = vec![d("2004-01-04"), d("2004-01-09")];
        assert!(TimeSeriesFrame::new(weeks, vec![], None).is_err());
        let weeks = vec![d("2004-01-04")];
        assert!(TimeSeriesFrame::new(weeks, vec![], Some(vec![Some(1.5)])).is_err());
    }

    #[test]
    fn locf_fills_leading_and_interior_gaps() {
        let weeks = vec![d("2004-01-04"), d("2004-01-11"), d("2004-01-18"), d("2004-01-25")];
        let col = Column::new("x", vec![None, Some(2.0), None, Some(5.0)]);
        let frame = TimeSeriesFrame::new(weeks, vec![col], None).unwrap();
        let filled = frame.impute_locf();
        assert_eq!(
            filled.column("x").unwrap().values,
            vec![Some(2.0), Some(2.0), Some(2.0), Some(5.0)]
        );
    }

    #[test]
    fn canonical_round_trip_is_bit_exact() {
        let weeks = vec![d("2004-01-04"), d("2004-01-11"), d("2004-01-25")];
        let cols = vec![
            Column::new("United States", vec![Some(1500.0), None, Some(0.1 + 0.2)]),
            Column::new("a,b \"quoted\"", vec![Some(-1e-300), Some(1e300), Some(7.0)]),
        ];
        let target = Some(vec![Some(0.024), None, Some(1.0 / 3.0)]);
        let frame = TimeSeriesFrame::new(weeks, cols, target).unwrap();
        let mut buf = Vec::new();
        frame.write_canonical_to(&mut buf).unwrap();
        let back = TimeSeriesFrame::read_canonical_from(buf.as_slice(), "mem").unwrap();
        assert_eq!(frame, back);
    }
}
