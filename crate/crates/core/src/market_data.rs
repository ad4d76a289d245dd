//! Ingestion of spot and VIX futures series.
//!
//! File formats (all CSV with a header row, ISO-8601 dates):
//!
//! * `spot.csv`: `date,close`
//! * `futures.csv`: `date,expiry,settle,volume`
//! * `vix.csv`, `vvix.csv`: `date,level`
//!
//! Quotes in files are in vol points (20.0); they are converted to decimals
//! (0.20) when observations are assembled.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};

/// Weekday calendar with an optional holiday list.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    pub fn weekdays() -> Self {
        Self::default()
    }

    /// Reads one ISO date per line; blank lines and `#` comments are ignored.
    pub fn with_holiday_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut holidays = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let d = parse_date(line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            holidays.insert(d);
        }
        Ok(Self { holidays })
    }

    pub fn is_business_day(&self, d: NaiveDate) -> bool {
        !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&d)
    }

    /// Business days in the half-open interval `(from, to]`.
    pub fn business_days_between(&self, from: NaiveDate, to: NaiveDate) -> i64 {
        if to <= from {
            return -self.business_days_between(to, from);
        }
        let mut n = 0;
        let mut d = from;
        while d < to {
            d = d + Days::new(1);
            if self.is_business_day(d) {
                n += 1;
            }
        }
        n
    }

    pub fn add_business_days(&self, from: NaiveDate, n: u64) -> NaiveDate {
        let mut d = from;
        let mut left = n;
        while left > 0 {
            d = d + Days::new(1);
            if self.is_business_day(d) {
                left -= 1;
            }
        }
        d
    }

    pub fn next_business_day(&self, d: NaiveDate) -> NaiveDate {
        self.add_business_days(d, 1)
    }

    /// Trading-time year fraction: business days / 252.
    pub fn year_fraction(&self, from: NaiveDate, to: NaiveDate) -> f64 {
        self.business_days_between(from, to) as f64 * crate::DT
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::Data(format!("bad date '{s}': {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSeries {
    pub dates: Vec<NaiveDate>,
    pub closes: Vec<f64>,
    pub returns: Vec<f64>,
}

impl SpotSeries {
    pub fn new(dates: Vec<NaiveDate>, closes: Vec<f64>) -> Result<Self> {
        if dates.len() != closes.len() {
            return Err(invalid("dates and closes differ in length"));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data(format!("dates not strictly increasing at {}", w[1])));
            }
        }
        if let Some(c) = closes.iter().find(|c| !(**c > 0.0)) {
            return Err(Error::Data(format!("non-positive close {c}")));
        }
        let returns = closes.windows(2).map(|w| (w[1] - w[0]) / w[0]).collect();
        Ok(Self { dates, closes, returns })
    }

    pub fn return_on(&self, date: NaiveDate) -> Option<f64> {
        let i = self.dates.binary_search(&date).ok()?;
        self.returns.get(i).copied()
    }
}

#[derive(Debug, Deserialize)]
struct SpotRow {
    date: String,
    close: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct FuturesRow {
    pub date: NaiveDate,
    pub expiry: NaiveDate,
    pub settle: f64,
    pub volume: f64,
}

#[derive(Debug, Deserialize)]
struct FuturesRecord {
    date: String,
    expiry: String,
    settle: f64,
    volume: f64,
}

#[derive(Debug, Deserialize)]
struct LevelRow {
    date: String,
    level: f64,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn row_err(path: &Path, line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: line {line}: {msg}", path.display()))
}

pub fn load_spot(path: &Path) -> Result<SpotSeries> {
    let mut rdr = open_csv(path)?;
    let mut rows = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<SpotRow>().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(path, line, e))?;
        let d = parse_date(&rec.date).map_err(|e| row_err(path, line, e))?;
        if !(rec.close > 0.0) {
            return Err(row_err(path, line, format!("non-positive close {}", rec.close)));
        }
        if rows.insert(d, rec.close).is_some() {
            return Err(row_err(path, line, format!("duplicate date {d}")));
        }
    }
    let (dates, closes) = rows.into_iter().unzip();
    SpotSeries::new(dates, closes)
}

pub fn load_futures(path: &Path) -> Result<Vec<FuturesRow>> {
    let mut rdr = open_csv(path)?;
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in rdr.deserialize::<FuturesRecord>().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(path, line, e))?;
        let date = parse_date(&rec.date).map_err(|e| row_err(path, line, e))?;
        let expiry = parse_date(&rec.expiry).map_err(|e| row_err(path, line, e))?;
        if !(rec.settle > 0.0) {
            return Err(row_err(path, line, format!("non-positive settle {}", rec.settle)));
        }
        if !(rec.volume >= 0.0) {
            return Err(row_err(path, line, format!("negative volume {}", rec.volume)));
        }
        if !seen.insert((date, expiry)) {
            return Err(row_err(path, line, format!("duplicate quote {date} {expiry}")));
        }
        out.push(FuturesRow { date, expiry, settle: rec.settle, volume: rec.volume });
    }
    out.sort_by_key(|r| (r.date, r.expiry));
    Ok(out)
}

/// Loads a `date,level` file (VIX or VVIX).
pub fn load_levels(path: &Path) -> Result<BTreeMap<NaiveDate, f64>> {
    let mut rdr = open_csv(path)?;
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<LevelRow>().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| row_err(path, line, e))?;
        let d = parse_date(&rec.date).map_err(|e| row_err(path, line, e))?;
        if !(rec.level > 0.0) {
            return Err(row_err(path, line, format!("non-positive level {}", rec.level)));
        }
        if out.insert(d, rec.level).is_some() {
            return Err(row_err(path, line, format!("duplicate date {d}")));
        }
    }
    Ok(out)
}

/// Number of business-day returns in the VIX window starting at `start`:
/// business days in `(start, start + 30 calendar days]`.
pub fn window_returns(start: NaiveDate, calendar: &Calendar) -> i64 {
    calendar.business_days_between(start, start + Days::new(30))
}

/// Return-count scaling factor `sqrt(252/365 * 30 / n_ret)`.
pub fn vix_adjustment_factor(n_ret: f64) -> Result<f64> {
    if !(n_ret > 0.0) {
        return Err(invalid("VIX window contains no business days"));
    }
    Ok((252.0 / 365.0 * 30.0 / n_ret).sqrt())
}

/// Rescales a quote on the window starting at `expiry` to the trading-time
/// convention of the model.
pub fn adjust_vix_quote(raw: f64, expiry: NaiveDate, calendar: &Calendar) -> Result<f64> {
    let n = window_returns(expiry, calendar);
    Ok(raw * vix_adjustment_factor(n as f64)?)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiquidityConfig {
    /// Scale `c` in `c / sqrt(volume)`.
    pub scale: f64,
    /// Volume floor.
    pub min_volume: f64,
    /// Half-life in business days of an exponential volume smoother; 0 disables it.
    #[serde(default)]
    pub smoothing_half_life: f64,
}

impl Default for LiquidityConfig {
    fn default() -> Self {
        Self { scale: 12.0, min_volume: 100.0, smoothing_half_life: 0.0 }
    }
}

/// Annualised quote-error vol `c / sqrt(max(volume, v_min))`.
pub fn liquidity_sigma(volume: f64, cfg: &LiquidityConfig) -> f64 {
    cfg.scale / volume.max(cfg.min_volume).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutureQuote {
    pub expiry: NaiveDate,
    /// Trading-time years to expiry.
    pub tau: f64,
    /// Adjusted price, decimal.
    pub price: f64,
    pub volume: f64,
    /// Annualised error vol.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuturesObservation {
    pub date: NaiveDate,
    /// Adjusted VIX index, decimal. Used for curve extraction only.
    pub vix_cash: Option<f64>,
    pub futures: Vec<FutureQuote>,
}

impl FuturesObservation {
    pub fn quote(&self, expiry: NaiveDate) -> Option<&FutureQuote> {
        self.futures.iter().find(|q| q.expiry == expiry)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSet {
    pub days: Vec<FuturesObservation>,
    pub calendar: Calendar,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub liquidity: LiquidityConfig,
    /// Apply the return-count scaling to futures and index quotes.
    #[serde(default = "yes")]
    pub adjust: bool,
}

fn yes() -> bool {
    true
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self { liquidity: LiquidityConfig::default(), adjust: true }
    }
}

/// Groups futures rows by date and attaches adjusted prices and error vols.
/// Expired contracts (expiry before the quote date) are dropped.
pub fn build_observations(
    rows: &[FuturesRow],
    vix: Option<&BTreeMap<NaiveDate, f64>>,
    calendar: &Calendar,
    cfg: &IngestConfig,
) -> Result<ObservationSet> {
    let mut by_date: BTreeMap<NaiveDate, Vec<&FuturesRow>> = BTreeMap::new();
    for r in rows {
        if r.expiry >= r.date {
            by_date.entry(r.date).or_default().push(r);
        }
    }
    let mut smoothed: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    let decay = if cfg.liquidity.smoothing_half_life > 0.0 {
        Some((-std::f64::consts::LN_2 / cfg.liquidity.smoothing_half_life).exp())
    } else {
        None
    };
    let mut days = Vec::with_capacity(by_date.len());
    for (date, mut quotes) in by_date {
        quotes.sort_by_key(|q| q.expiry);
        let mut futures = Vec::with_capacity(quotes.len());
        for q in quotes {
            let factor = if cfg.adjust { vix_adjustment_factor(window_returns(q.expiry, calendar) as f64)? } else { 1.0 };
            let volume = match decay {
                Some(d) => {
                    let v = smoothed.get(&q.expiry).map_or(q.volume, |prev| d * prev + (1.0 - d) * q.volume);
                    smoothed.insert(q.expiry, v);
                    v
                }
                None => q.volume,
            };
            futures.push(FutureQuote {
                expiry: q.expiry,
                tau: calendar.year_fraction(date, q.expiry),
                price: q.settle * factor / 100.0,
                volume,
                sigma: liquidity_sigma(volume, &cfg.liquidity),
            });
        }
        let vix_cash = match vix.and_then(|m| m.get(&date)) {
            Some(level) => {
                let factor = if cfg.adjust { vix_adjustment_factor(window_returns(date, calendar) as f64)? } else { 1.0 };
                Some(level * factor / 100.0)
            }
            None => None,
        };
        days.push(FuturesObservation { date, vix_cash, futures });
    }
    Ok(ObservationSet { days, calendar: calendar.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn spot_returns_and_duplicates() {
        let f = write("date,close\n2020-01-02,100.0\n2020-01-03,101.0\n");
        let s = load_spot(f.path()).unwrap();
        assert!((s.returns[0] - 0.01).abs() < 1e-15);
        let f = write("date,close\n2020-01-02,100\n2020-01-02,100\n");
        let err = load_spot(f.path()).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        let f = write("date,close\n2020-01-02,100\n2020-01-03,abc\n");
        let err = load_spot(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let f = write("date,close\n2020-01-02,-1\n");
        assert!(load_spot(f.path()).is_err());
    }

    #[test]
    fn constant_spot_has_zero_returns() {
        let cal = Calendar::weekdays();
        let mut day = d("2020-01-01");
        let mut text = String::from("date,close\n");
        for _ in 0..252 {
            day = cal.next_business_day(day);
            text.push_str(&format!("{day},100\n"));
        }
        let f = write(&text);
        let s = load_spot(f.path()).unwrap();
        assert_eq!(s.returns.len(), 251);
        assert!(s.returns.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn adjustment_factor_values() {
        let fixed = 30.0 * 252.0 / 365.0;
        assert!((vix_adjustment_factor(fixed).unwrap() - 1.0).abs() < 1e-15);
        assert!((20.0 * vix_adjustment_factor(20.0).unwrap() - 20.3530).abs() < 5e-4);
        assert!((20.0 * vix_adjustment_factor(22.0).unwrap() - 19.4059).abs() < 5e-4);
        assert!(vix_adjustment_factor(0.0).is_err());
        // (Fri 3 Jan, Sun 2 Feb 2020]: weekdays 6 to 31 Jan
        assert_eq!(window_returns(d("2020-01-03"), &Calendar::weekdays()), 20);
        // (Wed 1 Jan, Fri 31 Jan 2020]: weekdays 2 to 31 Jan
        assert_eq!(window_returns(d("2020-01-01"), &Calendar::weekdays()), 22);
    }

    #[test]
    fn liquidity_floor_and_scaling() {
        let cfg = LiquidityConfig { scale: 1.0, min_volume: 50.0, smoothing_half_life: 0.0 };
        assert!((liquidity_sigma(50.0, &cfg) - 1.0 / 50f64.sqrt()).abs() < 1e-15);
        assert_eq!(liquidity_sigma(0.0, &cfg), liquidity_sigma(50.0, &cfg));
        assert!((liquidity_sigma(400.0, &cfg) / liquidity_sigma(100.0, &cfg) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn calendar_counts() {
        let cal = Calendar::weekdays();
        assert_eq!(cal.business_days_between(d("2020-01-03"), d("2020-01-06")), 1);
        assert_eq!(cal.add_business_days(d("2020-01-03"), 1), d("2020-01-06"));
        assert_eq!(cal.business_days_between(d("2020-01-06"), d("2020-01-03")), -1);
    }
}
