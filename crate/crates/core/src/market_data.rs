//! Price ingestion and log returns.
//!
//! Input files are plain CSV with a `date,close` header and ISO-8601 dates.
//! Closes are used as given; adjusting for splits and dividends is left to
//! whoever produced the file. Missing trading days are not imputed.

use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dated closing prices, strictly increasing in date, all positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    ticker: String,
    dates: Vec<NaiveDate>,
    closes: Vec<f64>,
}

impl PriceSeries {
    /// Builds a series from unsorted observations. Observations are sorted by
    /// date; duplicate dates and non-positive (or non-finite) closes are
    /// rejected.
    pub fn new(ticker: impl Into<String>, mut observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        if let Some((date, close)) = observations
            .iter()
            .find(|(_, c)| !(c.is_finite() && *c > 0.0))
        {
            return Err(Error::Validation(format!(
                "close on {date} must be positive and finite, got {close}"
            )));
        }
        observations.sort_by_key(|(d, _)| *d);
        if let Some(w) = observations.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!("duplicate date {}", w[0].0)));
        }
        let (dates, closes) = observations.into_iter().unzip();
        Ok(Self {
            ticker: ticker.into(),
            dates,
            closes,
        })
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn closes(&self) -> &[f64] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Observations with `from <= date < to`.
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> PriceSeries {
        let lo = self.dates.partition_point(|d| *d < from);
        let hi = self.dates.partition_point(|d| *d < to);
        PriceSeries {
            ticker: self.ticker.clone(),
            dates: self.dates[lo..hi.max(lo)].to_vec(),
            closes: self.closes[lo..hi.max(lo)].to_vec(),
        }
    }

    /// Writes the series in the same `date,close` format `load_prices` reads.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "date,close")?;
        for (d, c) in self.dates.iter().zip(&self.closes) {
            writeln!(out, "{},{}", d.format("%Y-%m-%d"), c)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Dated log returns. Entry `t` is `ln(p_t / p_{t-1})`, stamped with the later date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    ticker: String,
    dates: Vec<NaiveDate>,
    values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(ticker: impl Into<String>, dates: Vec<NaiveDate>, values: Vec<f64>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::Contract(format!(
                "{} dates for {} returns",
                dates.len(),
                values.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("return dates must be strictly increasing".into()));
        }
        Ok(Self {
            ticker: ticker.into(),
            dates,
            values,
        })
    }

    /// Undated returns, stamped with consecutive days from 2000-01-01. Used for
    /// synthetic streams where only the ordering matters.
    pub fn from_values(ticker: impl Into<String>, values: Vec<f64>) -> Self {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let dates = start.iter_days().take(values.len()).collect();
        Self {
            ticker: ticker.into(),
            dates,
            values,
        }
    }

    pub fn ticker(&self) -> &str {
        &self.ticker
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    date: String,
    close: String,
}

/// Reads a `date,close` CSV file into a validated, date-sorted series.
pub fn load_prices(path: impl AsRef<Path>, ticker: &str) -> Result<PriceSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "date" || &headers[1] != "close" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header `date,close`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut observations = Vec::new();
    for record in reader.deserialize::<CsvRow>() {
        let row = record.map_err(|e| csv_error(path, e))?;
        // header is line 1, so the n-th data row is line n + 1
        let line = observations.len() as u64 + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| parse_err(format!("bad date `{}`: {e}", row.date)))?;
        let close: f64 = row
            .close
            .parse()
            .map_err(|e| parse_err(format!("bad close `{}`: {e}", row.close)))?;
        observations.push((date, close));
    }
    PriceSeries::new(ticker, observations)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub fn log_returns(prices: &PriceSeries) -> Result<ReturnSeries> {
    if prices.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: prices.len(),
        });
    }
    let values = prices
        .closes
        .windows(2)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    Ok(ReturnSeries {
        ticker: prices.ticker.clone(),
        dates: prices.dates[1..].to_vec(),
        values,
    })
}

/// Simple (arithmetic) returns `p_t / p_{t-1} - 1`, stamped with the later date.
pub fn simple_returns(prices: &PriceSeries) -> Vec<(NaiveDate, f64)> {
    prices
        .dates
        .iter()
        .skip(1)
        .zip(prices.closes.windows(2))
        .map(|(d, w)| (*d, w[1] / w[0] - 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_rows() {
        let f = write("date,close\n2020-01-02,100.0\n2020-01-03,110.0\n");
        let p = load_prices(f.path(), "SPY").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.closes(), &[100.0, 110.0]);
        assert_eq!(p.ticker(), "SPY");
    }

    #[test]
    fn rejects_zero_price() {
        let f = write("date,close\n2020-01-02,100.0\n2020-01-03,0.0\n");
        assert!(matches!(load_prices(f.path(), "X"), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_duplicate_date() {
        let f = write("date,close\n2020-01-02,100.0\n2020-01-02,101.0\n");
        assert!(matches!(load_prices(f.path(), "X"), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write("date,close\n2020-01-02,100.0\n2020-01-03,abc\n");
        match load_prices(f.path(), "X") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = write("date,close\n2020/01/02,100.0\n");
        match load_prices(f.path(), "X") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_parse_error() {
        let f = write("day,price\n2020-01-02,100.0\n");
        assert!(matches!(load_prices(f.path(), "X"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn out_of_order_rows_are_sorted() {
        let rows = [
            ("2020-01-06", 103.0),
            ("2020-01-02", 100.0),
            ("2020-01-07", 99.5),
            ("2020-01-03", 101.0),
        ];
        let mut text = String::from("date,close\n");
        for (d, c) in rows {
            text.push_str(&format!("{d},{c}\n"));
        }
        let p = load_prices(write(&text).path(), "X").unwrap();

        let mut oracle: Vec<(NaiveDate, f64)> = rows.iter().map(|(d, c)| (day(d), *c)).collect();
        oracle.sort_by_key(|r| r.0);
        let got: Vec<(NaiveDate, f64)> = p.dates().iter().copied().zip(p.closes().iter().copied()).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn log_return_examples() {
        let series = |closes: &[f64]| {
            let obs = closes
                .iter()
                .enumerate()
                .map(|(i, c)| (day("2020-01-01") + chrono::Days::new(i as u64), *c))
                .collect();
            PriceSeries::new("X", obs).unwrap()
        };
        let r = log_returns(&series(&[100.0, 110.0])).unwrap();
        assert!((r.values()[0] - 0.095_310_179_804_324_87).abs() < 1e-15);
        assert_eq!(r.dates()[0], day("2020-01-02"));

        let r = log_returns(&series(&[100.0, 100.0, 100.0])).unwrap();
        assert_eq!(r.values(), &[0.0, 0.0]);

        let r = log_returns(&series(&[100.0, 90.0, 99.0])).unwrap();
        assert!((r.values()[0] - 0.9f64.ln()).abs() < 1e-15);
        assert!((r.values()[1] - 1.1f64.ln()).abs() < 1e-15);

        assert!(matches!(
            log_returns(&series(&[100.0])),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn csv_roundtrip_through_writer() {
        let p = PriceSeries::new(
            "X",
            vec![(day("2021-03-01"), 12.5), (day("2021-03-02"), 12.75)],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        p.write_csv(f.path()).unwrap();
        assert_eq!(load_prices(f.path(), "X").unwrap(), p);
    }

    proptest! {
        #[test]
        fn cumulative_returns_reconstruct_prices(
            closes in prop::collection::vec(0.01f64..1e4, 2..200)
        ) {
            let obs = closes
                .iter()
                .enumerate()
                .map(|(i, c)| (day("2010-01-01") + chrono::Days::new(i as u64), *c))
                .collect();
            let p = PriceSeries::new("X", obs).unwrap();
            let r = log_returns(&p).unwrap();
            prop_assert_eq!(r.len(), p.len() - 1);
            let mut cum = 0.0;
            for (t, ret) in r.values().iter().enumerate() {
                cum += ret;
                let rebuilt = closes[0] * cum.exp();
                prop_assert!(((rebuilt - closes[t + 1]) / closes[t + 1]).abs() < 1e-10);
            }
        }

        #[test]
        fn constant_prices_give_zero_returns(c in 0.01f64..1e4, n in 2usize..50) {
            let obs = (0..n).map(|i| (day("2010-01-01") + chrono::Days::new(i as u64), c)).collect();
            let r = log_returns(&PriceSeries::new("X", obs).unwrap()).unwrap();
            prop_assert!(r.values().iter().all(|v| *v == 0.0));
        }
    }
}
