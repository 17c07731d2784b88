//! Hourly panels of day-ahead prices and exogenous forecasts.
//!
//! A [`HourlyPanel`] holds one row per calendar day with 24 hourly prices
//! and one `[day x 24]` matrix per exogenous variable. Ingestion pivots a
//! long hourly CSV into that rectangular shape; DST gaps are imputed from the
//! previous day and DST repeats are averaged so every day has 24 hours.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::ops::Range;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use thiserror::Error;

/// Hours per delivery day.
pub const HOURS: usize = 24;

/// One day of hourly values.
pub type DayRow = [f64; HOURS];

/// Default exogenous column names, in model order.
pub const DEFAULT_EXOGENOUS: [&str; 4] = ["gen_forecast", "wind_forecast", "solar_forecast", "load_forecast"];

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("panel has no days")]
    Empty,
    #[error("{what} has {got} rows, expected {expected}")]
    ShapeMismatch { what: String, got: usize, expected: usize },
    #[error("dates are not consecutive between {prev} and {next}")]
    DateGap { prev: NaiveDate, next: NaiveDate },
    #[error("non-finite value in {what} on {date} hour {hour}")]
    NonFinite { what: String, date: NaiveDate, hour: usize },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse timestamp `{value}`")]
    BadTimestamp { row: usize, value: String },
    #[error("row {row}: timestamp `{value}` is not on the hour")]
    NotHourly { row: usize, value: String },
    #[error("row {row}: column `{column}` has non-numeric value `{value}`")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: duplicate timestamp `{timestamp}`")]
    DuplicateTimestamp { row: usize, timestamp: String },
    #[error("no data for day {0}; whole missing days are not imputed")]
    MissingDay(NaiveDate),
    #[error("hour {hour} of the first day {date} is missing and has no previous day to copy from")]
    UnimputableHour { date: NaiveDate, hour: usize },
    #[error("holiday file line {line}: cannot parse date `{value}`")]
    BadHoliday { line: usize, value: String },
    #[error("input has no data rows")]
    NoRows,
    #[error(transparent)]
    Panel(#[from] PanelError),
}

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window dates out of order: {0}")]
    Order(String),
    #[error("window date {date} is outside the panel range {first}..={last}")]
    OutOfRange {
        date: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
}

/// A named `[day x 24]` matrix of exogenous forecasts.
#[derive(Debug, Clone, PartialEq)]
pub struct ExogenousSeries {
    pub name: String,
    pub values: Vec<DayRow>,
}

/// Aligned daily records of hourly prices, exogenous forecasts and holiday flags.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyPanel {
    dates: Vec<NaiveDate>,
    prices: Vec<DayRow>,
    exogenous: Vec<ExogenousSeries>,
    holidays: Vec<bool>,
}

impl HourlyPanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        prices: Vec<DayRow>,
        exogenous: Vec<ExogenousSeries>,
        holidays: Vec<bool>,
    ) -> Result<Self, PanelError> {
        if dates.is_empty() {
            return Err(PanelError::Empty);
        }
        let n = dates.len();
        let check = |what: &str, got: usize| {
            if got != n {
                Err(PanelError::ShapeMismatch {
                    what: what.to_string(),
                    got,
                    expected: n,
                })
            } else {
                Ok(())
            }
        };
        check("prices", prices.len())?;
        check("holiday flags", holidays.len())?;
        for series in &exogenous {
            check(&series.name, series.values.len())?;
        }
        for pair in dates.windows(2) {
            if pair[1] != pair[0] + Duration::days(1) {
                return Err(PanelError::DateGap {
                    prev: pair[0],
                    next: pair[1],
                });
            }
        }
        let finite = |what: &str, rows: &[DayRow]| {
            for (d, row) in rows.iter().enumerate() {
                if let Some(hour) = row.iter().position(|v| !v.is_finite()) {
                    return Err(PanelError::NonFinite {
                        what: what.to_string(),
                        date: dates[d],
                        hour,
                    });
                }
            }
            Ok(())
        };
        finite("price", &prices)?;
        for series in &exogenous {
            finite(&series.name, &series.values)?;
        }
        Ok(Self {
            dates,
            prices,
            exogenous,
            holidays,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn prices(&self) -> &[DayRow] {
        &self.prices
    }

    pub fn exogenous(&self) -> &[ExogenousSeries] {
        &self.exogenous
    }

    pub fn holiday_flags(&self) -> &[bool] {
        &self.holidays
    }

    pub fn first_date(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last_date(&self) -> NaiveDate {
        self.dates[self.dates.len() - 1]
    }

    /// Day index of `date`, if the panel covers it.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.first_date()).num_days();
        if offset < 0 || offset as usize >= self.len() {
            None
        } else {
            Some(offset as usize)
        }
    }

    /// Prices of one hour across all days.
    pub fn hour_prices(&self, hour: usize) -> Vec<f64> {
        self.prices.iter().map(|row| row[hour]).collect()
    }

    /// Same panel with the holiday flags replaced.
    pub fn with_holidays(mut self, holidays: &BTreeSet<NaiveDate>) -> Self {
        self.holidays = self.dates.iter().map(|d| holidays.contains(d)).collect();
        self
    }
}

/// Column names used when reading and writing panel CSVs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub price: String,
    pub exogenous: Vec<String>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            price: "price".into(),
            exogenous: DEFAULT_EXOGENOUS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A loaded panel plus the imputation warnings raised while building it.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub panel: HourlyPanel,
    pub warnings: Vec<String>,
}

struct Observation {
    row: usize,
    offset: Option<i32>,
    values: Vec<f64>,
}

fn parse_timestamp(raw: &str) -> Option<(NaiveDateTime, Option<i32>)> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some((dt.naive_local(), Some(dt.offset().local_minus_utc())));
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|dt| (dt, None))
}

/// Reads a long-format hourly CSV and pivots it into a [`HourlyPanel`].
///
/// Timestamps are read as local wall-clock hours. A repeated hour carrying
/// two different UTC offsets (DST fall-back) is averaged; any other repeat
/// is an error. Missing hours inside a day are copied from the same hour of
/// the previous day with a warning; a day with no rows at all is an error.
pub fn load_panel<R: Read>(
    source: R,
    schema: &ColumnSchema,
    holidays: &BTreeSet<NaiveDate>,
) -> Result<Ingested, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let ts_col = col(&schema.timestamp)?;
    let mut value_cols = vec![(schema.price.clone(), col(&schema.price)?)];
    for name in &schema.exogenous {
        value_cols.push((name.clone(), col(name)?));
    }

    let mut cells: BTreeMap<(NaiveDate, usize), Vec<Observation>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        let raw_ts = record.get(ts_col).unwrap_or("");
        let (ts, offset) = parse_timestamp(raw_ts).ok_or_else(|| IngestError::BadTimestamp {
            row,
            value: raw_ts.to_string(),
        })?;
        if ts.minute() != 0 || ts.second() != 0 {
            return Err(IngestError::NotHourly {
                row,
                value: raw_ts.to_string(),
            });
        }
        let mut values = Vec::with_capacity(value_cols.len());
        for (name, idx) in &value_cols {
            let raw = record.get(*idx).unwrap_or("");
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| IngestError::NonNumeric {
                    row,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
            values.push(v);
        }
        let key = (ts.date(), ts.hour() as usize);
        let slot = cells.entry(key).or_default();
        if slot.iter().any(|o| o.offset == offset) || slot.len() >= 2 {
            return Err(IngestError::DuplicateTimestamp {
                row,
                timestamp: raw_ts.to_string(),
            });
        }
        slot.push(Observation { row, offset, values });
    }

    let (first, last) = match (cells.keys().next(), cells.keys().next_back()) {
        (Some(a), Some(b)) => (a.0, b.0),
        _ => return Err(IngestError::NoRows),
    };
    let n_days = (last - first).num_days() as usize + 1;
    let n_vars = value_cols.len();
    let mut matrices: Vec<Vec<DayRow>> = vec![Vec::with_capacity(n_days); n_vars];
    let mut dates = Vec::with_capacity(n_days);
    let mut warnings = Vec::new();

    for d in 0..n_days {
        let date = first + Duration::days(d as i64);
        let present = (0..HOURS).any(|h| cells.contains_key(&(date, h)));
        if !present {
            return Err(IngestError::MissingDay(date));
        }
        let mut rows = vec![[0.0; HOURS]; n_vars];
        for hour in 0..HOURS {
            match cells.get(&(date, hour)) {
                Some(obs) if obs.len() == 2 => {
                    for (v, row) in rows.iter_mut().enumerate() {
                        row[hour] = 0.5 * (obs[0].values[v] + obs[1].values[v]);
                    }
                    warnings.push(format!(
                        "{date} hour {hour}: repeated hour (rows {} and {}) averaged",
                        obs[0].row, obs[1].row
                    ));
                }
                Some(obs) => {
                    for (v, row) in rows.iter_mut().enumerate() {
                        row[hour] = obs[0].values[v];
                    }
                }
                None => {
                    if d == 0 {
                        return Err(IngestError::UnimputableHour { date, hour });
                    }
                    for (v, row) in rows.iter_mut().enumerate() {
                        row[hour] = matrices[v][d - 1][hour];
                    }
                    warnings.push(format!("{date} hour {hour}: missing, filled from previous day"));
                }
            }
        }
        for (matrix, row) in matrices.iter_mut().zip(rows) {
            matrix.push(row);
        }
        dates.push(date);
    }
    for w in &warnings {
        log::warn!("{w}");
    }

    let mut matrices = matrices.into_iter();
    let prices = matrices.next().unwrap_or_default();
    let exogenous = schema
        .exogenous
        .iter()
        .cloned()
        .zip(matrices)
        .map(|(name, values)| ExogenousSeries { name, values })
        .collect();
    let holiday_flags = dates.iter().map(|d| holidays.contains(d)).collect();
    let panel = HourlyPanel::new(dates, prices, exogenous, holiday_flags)?;
    Ok(Ingested { panel, warnings })
}

/// Parses a holiday list: one ISO date per line, blank lines and `#` comments ignored.
pub fn parse_holidays<R: Read>(source: R) -> Result<BTreeSet<NaiveDate>, IngestError> {
    let mut out = BTreeSet::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line?;
        let trimmed = line.split('#').next().unwrap_or("").trim();
        if trimmed.is_empty() {
            continue;
        }
        let date = NaiveDate::parse_from_str(trimmed, "%Y-%m-%d").map_err(|_| IngestError::BadHoliday {
            line: i + 1,
            value: trimmed.to_string(),
        })?;
        out.insert(date);
    }
    Ok(out)
}

/// Writes the panel back in the long hourly format read by [`load_panel`].
///
/// Values are printed in shortest round-trip form, so reloading is bit-exact.
pub fn write_panel<W: Write>(panel: &HourlyPanel, sink: W, schema: &ColumnSchema) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![schema.timestamp.clone(), schema.price.clone()];
    header.extend(panel.exogenous.iter().map(|e| e.name.clone()));
    writer.write_record(&header)?;
    for (d, date) in panel.dates.iter().enumerate() {
        for hour in 0..HOURS {
            let mut record = Vec::with_capacity(header.len());
            record.push(format!("{}T{:02}:00:00", date.format("%Y-%m-%d"), hour));
            record.push(format!("{}", panel.prices[d][hour]));
            for series in &panel.exogenous {
                record.push(format!("{}", series.values[d][hour]));
            }
            writer.write_record(&record)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Day-type classes used by the ARX dummies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DayType {
    Monday,
    Saturday,
    SundayHoliday,
    Other,
}

impl DayType {
    pub fn classify(date: NaiveDate, holiday: bool) -> Self {
        if holiday {
            return DayType::SundayHoliday;
        }
        match date.weekday() {
            Weekday::Mon => DayType::Monday,
            Weekday::Sat => DayType::Saturday,
            Weekday::Sun => DayType::SundayHoliday,
            _ => DayType::Other,
        }
    }

    /// One-hot indicator in the order Monday, Saturday, Sunday/Holiday, other.
    pub fn indicator(self) -> [f64; 4] {
        let mut out = [0.0; 4];
        out[self as usize] = 1.0;
        out
    }
}

/// Per-day one-hot day-type flags.
#[derive(Debug, Clone, PartialEq)]
pub struct CalendarDummies {
    pub types: Vec<DayType>,
}

impl CalendarDummies {
    pub fn flags(&self, day: usize) -> [f64; 4] {
        self.types[day].indicator()
    }
}

pub fn calendar_dummies(panel: &HourlyPanel) -> CalendarDummies {
    CalendarDummies {
        types: panel
            .dates
            .iter()
            .zip(&panel.holidays)
            .map(|(d, h)| DayType::classify(*d, *h))
            .collect(),
    }
}

/// A two-part calibration window followed by the day being forecast.
///
/// Part 1 covers `[calibration_start, calibration_split)`, part 2 covers
/// `[calibration_split, calibration_end]` and the target is the day after
/// `calibration_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    pub calibration_start: NaiveDate,
    pub calibration_split: NaiveDate,
    pub calibration_end: NaiveDate,
    pub target_day: NaiveDate,
}

impl WindowSpec {
    pub fn new(
        calibration_start: NaiveDate,
        calibration_split: NaiveDate,
        calibration_end: NaiveDate,
        target_day: NaiveDate,
    ) -> Result<Self, WindowError> {
        if calibration_start >= calibration_split {
            return Err(WindowError::Order(format!(
                "calibration_start {calibration_start} must precede calibration_split {calibration_split}"
            )));
        }
        if calibration_split > calibration_end {
            return Err(WindowError::Order(format!(
                "calibration_split {calibration_split} is after calibration_end {calibration_end}"
            )));
        }
        if target_day != calibration_end + Duration::days(1) {
            return Err(WindowError::Order(format!(
                "target_day {target_day} must be the day after calibration_end {calibration_end}"
            )));
        }
        Ok(Self {
            calibration_start,
            calibration_split,
            calibration_end,
            target_day,
        })
    }

    /// Window whose two parts have the given lengths and end the day before `target_day`.
    pub fn ending_before(target_day: NaiveDate, part1_days: usize, part2_days: usize) -> Result<Self, WindowError> {
        if part1_days == 0 || part2_days == 0 {
            return Err(WindowError::Order("calibration parts must be non-empty".into()));
        }
        let end = target_day - Duration::days(1);
        let split = target_day - Duration::days(part2_days as i64);
        let start = split - Duration::days(part1_days as i64);
        Self::new(start, split, end, target_day)
    }

    pub fn part1_days(&self) -> usize {
        (self.calibration_split - self.calibration_start).num_days() as usize
    }

    pub fn part2_days(&self) -> usize {
        (self.calibration_end - self.calibration_split).num_days() as usize + 1
    }

    /// The same window moved forward by `days`.
    pub fn shifted(&self, days: i64) -> Self {
        let d = Duration::days(days);
        Self {
            calibration_start: self.calibration_start + d,
            calibration_split: self.calibration_split + d,
            calibration_end: self.calibration_end + d,
            target_day: self.target_day + d,
        }
    }
}

/// A contiguous run of days of a panel.
#[derive(Debug, Clone)]
pub struct PanelSlice<'a> {
    panel: &'a HourlyPanel,
    range: Range<usize>,
}

impl<'a> PanelSlice<'a> {
    pub fn panel(&self) -> &'a HourlyPanel {
        self.panel
    }

    /// Day indices into the parent panel.
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn len(&self) -> usize {
        self.range.len()
    }

    pub fn is_empty(&self) -> bool {
        self.range.is_empty()
    }

    pub fn dates(&self) -> &'a [NaiveDate] {
        &self.panel.dates[self.range.clone()]
    }

    pub fn prices(&self) -> &'a [DayRow] {
        &self.panel.prices[self.range.clone()]
    }

    /// Days of the parent panel available before this slice (lag history).
    pub fn history_days(&self) -> usize {
        self.range.start
    }
}

/// The three disjoint views of a window: part 1, part 2 and the target day.
#[derive(Debug, Clone)]
pub struct WindowSlices<'a> {
    pub part1: PanelSlice<'a>,
    pub part2: PanelSlice<'a>,
    pub target: PanelSlice<'a>,
}

pub fn slice_window<'a>(panel: &'a HourlyPanel, spec: &WindowSpec) -> Result<WindowSlices<'a>, WindowError> {
    let locate = |date: NaiveDate| {
        panel.index_of(date).ok_or(WindowError::OutOfRange {
            date,
            first: panel.first_date(),
            last: panel.last_date(),
        })
    };
    let start = locate(spec.calibration_start)?;
    let split = locate(spec.calibration_split)?;
    let end = locate(spec.calibration_end)?;
    let target = locate(spec.target_day)?;
    let view = |range: Range<usize>| PanelSlice { panel, range };
    Ok(WindowSlices {
        part1: view(start..split),
        part2: view(split..end + 1),
        target: view(target..target + 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn csv_for(days: &[&str], skip: &[(usize, usize)]) -> String {
        let mut out = String::from("timestamp,price,gen_forecast,wind_forecast,solar_forecast,load_forecast\n");
        for (di, day) in days.iter().enumerate() {
            for h in 0..HOURS {
                if skip.contains(&(di, h)) {
                    continue;
                }
                let v = (di * 100 + h) as f64;
                out.push_str(&format!(
                    "{day}T{h:02}:00:00,{v},{},{},{},{}\n",
                    v + 1.0,
                    v + 2.0,
                    v + 3.0,
                    v + 4.0
                ));
            }
        }
        out
    }

    #[test]
    fn two_full_days_pivot_to_two_rows() {
        let csv = csv_for(&["2020-01-01", "2020-01-02"], &[]);
        let ing = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap();
        assert_eq!(ing.panel.len(), 2);
        assert_eq!(ing.panel.prices()[1][5], 105.0);
        assert_eq!(ing.panel.exogenous().len(), 4);
        assert_eq!(ing.panel.exogenous()[3].values[0][2], 6.0);
        assert!(ing.warnings.is_empty());
    }

    #[test]
    fn duplicate_timestamp_names_it() {
        let mut csv = csv_for(&["2020-01-01"], &[]);
        csv.push_str("2020-01-01T07:00:00,1,1,1,1,1\n");
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap_err();
        match err {
            IngestError::DuplicateTimestamp { timestamp, row } => {
                assert_eq!(timestamp, "2020-01-01T07:00:00");
                assert_eq!(row, 26);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_hour_filled_from_previous_day() {
        let csv = csv_for(&["2020-01-01", "2020-01-02"], &[(1, 13)]);
        let ing = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap();
        assert_eq!(ing.panel.prices()[1][13], ing.panel.prices()[0][13]);
        assert_eq!(ing.panel.exogenous()[0].values[1][13], 14.0);
        assert_eq!(ing.warnings.len(), 1);
        assert!(ing.warnings[0].contains("hour 13"));
    }

    #[test]
    fn whole_missing_day_aborts() {
        let csv = csv_for(&["2020-01-01", "2020-01-03"], &[]);
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap_err();
        assert!(matches!(err, IngestError::MissingDay(day) if day == d("2020-01-02")));
    }

    #[test]
    fn fall_back_hour_with_offsets_is_averaged() {
        let mut csv = String::from("timestamp,price,gen_forecast,wind_forecast,solar_forecast,load_forecast\n");
        for h in 0..HOURS {
            csv.push_str(&format!("2020-10-25T{h:02}:00:00+01:00,{h},0,0,0,0\n"));
        }
        csv.push_str("2020-10-25T02:00:00+02:00,10,2,2,2,2\n");
        let ing = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap();
        assert_eq!(ing.panel.prices()[0][2], 6.0);
        assert_eq!(ing.panel.exogenous()[0].values[0][2], 1.0);
        assert_eq!(ing.warnings.len(), 1);
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let csv = csv_for(&["2020-01-01"], &[]).replacen(",3,", ",abc,", 1);
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("abc"), "{msg}");
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn missing_column_is_reported() {
        let csv = "timestamp,price\n2020-01-01T00:00:00,1\n";
        let err = load_panel(csv.as_bytes(), &ColumnSchema::default(), &BTreeSet::new()).unwrap_err();
        assert!(matches!(err, IngestError::MissingColumn(c) if c == "gen_forecast"));
    }

    #[test]
    fn holidays_parse_with_comments() {
        let text = "# public holidays\n2020-01-01\n\n2020-12-25 # christmas\n";
        let set = parse_holidays(text.as_bytes()).unwrap();
        assert_eq!(set.len(), 2);
        assert!(parse_holidays("2020-13-01\n".as_bytes()).is_err());
    }

    #[test]
    fn day_type_classes() {
        // 2020-01-08 is a Wednesday
        assert_eq!(DayType::classify(d("2020-01-08"), false), DayType::Other);
        assert_eq!(DayType::classify(d("2020-01-11"), false), DayType::Saturday);
        assert_eq!(DayType::classify(d("2020-01-12"), false), DayType::SundayHoliday);
        assert_eq!(DayType::classify(d("2020-01-13"), false), DayType::Monday);
        assert_eq!(DayType::classify(d("2020-01-13"), true), DayType::SundayHoliday);
        assert_eq!(DayType::SundayHoliday.indicator(), [0.0, 0.0, 1.0, 0.0]);
    }

    fn flat_panel(days: usize) -> HourlyPanel {
        let start = d("2018-01-01");
        let dates: Vec<_> = (0..days).map(|i| start + Duration::days(i as i64)).collect();
        let prices = (0..days).map(|i| [i as f64; HOURS]).collect();
        HourlyPanel::new(dates, prices, vec![], vec![false; days]).unwrap()
    }

    #[test]
    fn two_yearly_parts_slice() {
        let panel = flat_panel(731);
        let spec = WindowSpec::ending_before(panel.last_date(), 365, 365).unwrap();
        let s = slice_window(&panel, &spec).unwrap();
        assert_eq!((s.part1.len(), s.part2.len(), s.target.len()), (365, 365, 1));
        assert_eq!(s.part1.range().end, s.part2.range().start);
        assert_eq!(s.part2.range().end, s.target.range().start);
    }

    #[test]
    fn target_beyond_panel_is_range_error() {
        let panel = flat_panel(30);
        let spec = WindowSpec::ending_before(panel.last_date() + Duration::days(1), 10, 10).unwrap();
        assert!(matches!(
            slice_window(&panel, &spec),
            Err(WindowError::OutOfRange { .. })
        ));
    }

    #[test]
    fn minimal_window_keeps_lag_history() {
        // 7 lag days + 1 + 1 calibration days + 1 target day
        let panel = flat_panel(10);
        let spec = WindowSpec::ending_before(panel.last_date(), 1, 1).unwrap();
        let s = slice_window(&panel, &spec).unwrap();
        assert_eq!((s.part1.len(), s.part2.len(), s.target.len()), (1, 1, 1));
        assert_eq!(s.part1.history_days(), 7);
    }

    #[test]
    fn window_order_is_validated() {
        let a = d("2020-01-01");
        assert!(WindowSpec::new(a, a, a + Duration::days(2), a + Duration::days(3)).is_err());
        assert!(WindowSpec::new(a, a + Duration::days(1), a + Duration::days(2), a + Duration::days(4)).is_err());
    }

    #[test]
    fn panel_rejects_gaps() {
        let dates = vec![d("2020-01-01"), d("2020-01-03")];
        let err = HourlyPanel::new(dates, vec![[0.0; HOURS]; 2], vec![], vec![false; 2]).unwrap_err();
        assert!(matches!(err, PanelError::DateGap { .. }));
    }
}
