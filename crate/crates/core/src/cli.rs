//! Command implementations behind the `apm` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::backtest::{self, RunOptions, RunPaths};
use crate::config::{check, PeriodPreset, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{build_report, EvalReport, PeriodKind, PeriodSpec, Stream};
use crate::frame::{parse_date, Column, TimeSeriesFrame};
use crate::ingest;
use crate::synth;

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const ERRORS_A_FILE: &str = "errors_a.csv";
pub const ERRORS_B_FILE: &str = "errors_b.csv";
/// Column name given to the optional GP series.
pub const GP_COLUMN: &str = "gp";

/// Overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub lag: Option<u32>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(l) = self.lag {
            cfg.alignment.lag_weeks = l;
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Parses and aligns the raw inputs into the engine dataset.
pub fn ingest_frame(cfg: &RunConfig) -> Result<TimeSeriesFrame> {
    check(cfg.ingest_problems())?;
    let (Some(gft_path), Some(cdc_path)) = (&cfg.data.gft_csv, &cfg.data.cdc_csv) else {
        unreachable!("checked above");
    };
    let gft = ingest::parse_gft_csv(gft_path)?;
    let cdc = ingest::parse_cdc_csv(cdc_path)?;
    let mut frame = ingest::align(&gft, &cdc, &cfg.alignment)?;
    if let Some(gp_path) = &cfg.data.gp_csv {
        let gp = ingest::parse_series_csv(gp_path, GP_COLUMN)?;
        let col = &gp.columns()[0];
        let values = frame
            .weeks()
            .iter()
            .map(|w| gp.week_index(*w).and_then(|i| col.values[i]))
            .collect();
        let (weeks, mut columns, target) = frame.into_parts();
        columns.push(Column::new(GP_COLUMN, values));
        frame = TimeSeriesFrame::new(weeks, columns, target)?;
    }
    Ok(frame)
}

pub fn summarize(frame: &TimeSeriesFrame) -> String {
    let mut s = String::new();
    let w = frame.weeks();
    let _ = writeln!(s, "weeks retained: {} ({}..{})", w.len(), w[0], w[w.len() - 1]);
    let _ = writeln!(s, "columns: {}", frame.columns().len());
    for c in frame.columns() {
        let _ = writeln!(s, "  {}: {} missing", c.name, c.missing_count());
    }
    s
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<String> {
    let frame = ingest_frame(cfg)?;
    create_dir(&cfg.output_dir)?;
    frame.write_canonical(&cfg.output_dir.join(DATASET_FILE))?;
    Ok(summarize(&frame))
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<String> {
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::config("the synth command needs a [synth] section"))?;
    let frame = synth::generate(spec)?;
    create_dir(&cfg.output_dir)?;
    frame.write_canonical(&cfg.output_dir.join(DATASET_FILE))?;
    Ok(summarize(&frame))
}

/// The dataset a run trades on: generated, read from `data.dataset`, or
/// ingested from the raw files.
pub fn load_dataset(cfg: &RunConfig) -> Result<TimeSeriesFrame> {
    if let Some(spec) = &cfg.synth {
        synth::generate(spec)
    } else if let Some(p) = &cfg.data.dataset {
        TimeSeriesFrame::read_canonical(p)
    } else {
        ingest_frame(cfg)
    }
}

pub fn cmd_run(cfg: &RunConfig, opts: RunOptions) -> Result<String> {
    check(cfg.run_problems())?;
    let frame = load_dataset(cfg)?;
    let dir = &cfg.output_dir;
    create_dir(dir)?;
    if cfg.data.dataset.is_none() {
        frame.write_canonical(&dir.join(DATASET_FILE))?;
    }
    let truth = Stream::new(
        frame.weeks().to_vec(),
        frame.target().unwrap_or(&[]).iter().map(|t| t.unwrap_or(f64::NAN)).collect(),
    )?;
    truth.write_csv(&dir.join(TRUTH_FILE), "target")?;
    let cp = backtest::run_to_dir(&frame, cfg.roster(), cfg.market.clone(), cfg.master_seed, dir, opts)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "weeks traded: {} of {}{}",
        cp.next_row,
        frame.len(),
        if cp.complete { "" } else { " (checkpointed)" }
    );
    for a in cp.market.agents() {
        let _ = writeln!(
            s,
            "  {:<16} budget {:>14.6}{}",
            a.id,
            a.budget,
            if a.active { "" } else { "  (inactive)" }
        );
    }
    Ok(s)
}

/// Reads one agent's column from `agent_predictions.csv`; abstentions are
/// skipped.
pub fn read_agent_stream(path: &Path, agent: &str) -> Result<Stream> {
    let context = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Schema {
        context: context.clone(),
        message: e.to_string(),
    })?;
    let header = rdr.headers().map_err(|e| Error::Schema {
        context: context.clone(),
        message: e.to_string(),
    })?;
    let col = header.iter().position(|h| h == agent).ok_or_else(|| Error::Schema {
        context: context.clone(),
        message: format!("no column for agent `{agent}`"),
    })?;
    let mut weeks = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let perr = |message: String| Error::Parse {
            context: context.clone(),
            row: i + 2,
            message,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let cell = rec.get(col).unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        weeks.push(parse_date(&rec[0]).ok_or_else(|| perr(format!("malformed date `{}`", &rec[0])))?);
        values.push(cell.parse().map_err(|_| perr(format!("non-numeric value `{cell}`")))?);
    }
    Stream::new(weeks, values)
}

/// Restricts both streams to their common weeks, warning about dropped ones.
fn intersect(a: &Stream, b: &Stream) -> Result<(Stream, Stream)> {
    let keep: Vec<usize> = (0..a.len()).filter(|&i| b.weeks.binary_search(&a.weeks[i]).is_ok()).collect();
    if keep.len() != a.len() || keep.len() != b.len() {
        log::warn!(
            "comparing {} common weeks ({} and {} available)",
            keep.len(),
            a.len(),
            b.len()
        );
    }
    let pick = |s: &Stream| -> Result<Stream> {
        let weeks: Vec<_> = keep.iter().map(|&i| a.weeks[i]).collect();
        let values = weeks
            .iter()
            .map(|w| s.values[s.weeks.binary_search(w).expect("common week")])
            .collect();
        Stream::new(weeks, values)
    };
    Ok((pick(a)?, pick(b)?))
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub preset: Option<PeriodPreset>,
}

/// Compares stream a (default: the run's market predictions) with stream b
/// (default: the configured baseline agent) and writes the report and
/// per-week error series into the output directory.
pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    check(cfg.eval_problems())?;
    let dir = &cfg.output_dir;
    let paths = RunPaths::new(dir);
    let a = Stream::read_csv(args.a.as_deref().unwrap_or(&paths.predictions))?;
    let b = match (&args.b, &cfg.eval.baseline_agent) {
        (Some(p), _) => Stream::read_csv(p)?,
        (None, Some(agent)) => read_agent_stream(&paths.agent_predictions, agent)?,
        (None, None) => return Err(Error::config("eval needs --b or eval.baseline_agent")),
    };
    let truth = Stream::read_csv(&args.truth.clone().unwrap_or_else(|| dir.join(TRUTH_FILE)))?;
    let (a, b) = if args.b.is_none() { intersect(&a, &b)? } else { (a, b) };

    let mut eval_cfg = cfg.eval.clone();
    if args.preset.is_some() {
        eval_cfg.preset = args.preset;
    }
    let (periods, total) = eval_cfg.resolve();
    let report = if periods.is_empty() {
        let whole = PeriodSpec {
            label: total.clone(),
            start: a.weeks.first().copied().unwrap_or_default(),
            end: a.weeks.last().copied().unwrap_or_default(),
            kind: PeriodKind::Custom,
            expected_weeks: None,
        };
        let mut r = build_report(&a, &b, &truth, &[whole], &total)?;
        // The total row would repeat the single period.
        r.rows.truncate(1);
        r
    } else {
        build_report(&a, &b, &truth, &periods, &total)?
    };
    create_dir(dir)?;
    report.write_csv(&dir.join(REPORT_FILE))?;
    report.error_series(false).write_csv(&dir.join(ERRORS_A_FILE), "abs_error")?;
    report.error_series(true).write_csv(&dir.join(ERRORS_B_FILE), "abs_error")?;
    Ok(report)
}

pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>5} {:>12} {:>12} {:>10} {:>12}",
        "period", "n", "mae_a x100", "mae_b x100", "t", "p"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<12} {:>5} {:>12.4} {:>12.4} {:>10.4} {:>12.4e}",
            r.label,
            r.n,
            r.mae_a_x100(),
            r.mae_b_x100(),
            r.t_stat,
            r.p_value
        );
    }
    s
}
