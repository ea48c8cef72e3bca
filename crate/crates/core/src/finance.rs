//! Two-asset price ingestion: daily closes → weekly 2×2 covariance
//! observations.
//!
//! Weeks are Monday–Friday. Missing weekday closes (holidays) are filled by
//! carrying the last previous observation forward. Each full week yields the
//! four daily log-return vectors Q_j = (log S¹_{j+1}/S¹_j, log S²_{j+1}/S²_j)
//! and the uncentered sum Y = Σ Q_j Q_jᵀ, so that under a zero-mean normal
//! return model Y has exactly four degrees of freedom. Weeks whose Y is
//! singular (e.g. entirely carried forward) are flagged degenerate and
//! excluded from estimation. Partial leading/trailing weeks are dropped.

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{deconvolve, DeconvolveOutput, EstimatorConfig, EstimatorError};
use crate::spd::{EigenPair, SpdMatrix};

/// Ingestion failures.
#[derive(Debug, Error)]
pub enum FinanceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("line {line}: expected header 'date,close1,close2'")]
    MissingHeader { line: usize },

    #[error("line {line}: {message}")]
    MalformedRow { line: usize, message: String },

    #[error("line {line}: price {value} is not positive")]
    NonPositivePrice { line: usize, value: f64 },

    #[error("line {line}: dates must be strictly increasing")]
    UnsortedDates { line: usize },

    #[error("series does not span a full Monday-Friday week")]
    NoFullWeek,

    #[error("estimation needs at least 2 non-degenerate weeks, got {weeks}")]
    InsufficientData { weeks: usize },

    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Aligned daily closing prices of two assets.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub close1: Vec<f64>,
    pub close2: Vec<f64>,
}

impl PriceSeries {
    pub fn new(
        dates: Vec<NaiveDate>,
        close1: Vec<f64>,
        close2: Vec<f64>,
    ) -> Result<Self, FinanceError> {
        assert_eq!(dates.len(), close1.len());
        assert_eq!(dates.len(), close2.len());
        for (k, w) in dates.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(FinanceError::UnsortedDates { line: k + 3 });
            }
        }
        for (k, (&c1, &c2)) in close1.iter().zip(&close2).enumerate() {
            let bad = if c1 <= 0.0 { Some(c1) } else if c2 <= 0.0 { Some(c2) } else { None };
            if let Some(value) = bad {
                return Err(FinanceError::NonPositivePrice { line: k + 2, value });
            }
        }
        Ok(Self {
            dates,
            close1,
            close2,
        })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// One week's covariance observation. The raw entries are always present;
/// `degenerate` marks weeks whose matrix is singular and excluded from
/// estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyCovariance {
    pub week_start: NaiveDate,
    pub y11: f64,
    pub y12: f64,
    pub y22: f64,
    pub degenerate: bool,
}

impl WeeklyCovariance {
    /// The observation as an SPD matrix, when non-degenerate.
    pub fn spd(&self) -> Option<SpdMatrix> {
        if self.degenerate {
            None
        } else {
            SpdMatrix::new(self.y11, self.y12, self.y22).ok()
        }
    }
}

/// Parses a `date,close1,close2` CSV (ISO-8601 dates) from a file.
pub fn parse_prices(path: &std::path::Path) -> Result<PriceSeries, FinanceError> {
    let text = std::fs::read_to_string(path).map_err(|source| FinanceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_prices_str(&text)
}

/// Parses the CSV from a string; line numbers in errors are 1-based.
pub fn parse_prices_str(text: &str) -> Result<PriceSeries, FinanceError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "date,close1,close2" => {}
        _ => return Err(FinanceError::MissingHeader { line: 1 }),
    }
    let mut dates = Vec::new();
    let mut close1 = Vec::new();
    let mut close2 = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 3 {
            return Err(FinanceError::MalformedRow {
                line,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let date = NaiveDate::parse_from_str(fields[0].trim(), "%Y-%m-%d").map_err(|e| {
            FinanceError::MalformedRow {
                line,
                message: format!("bad date '{}': {e}", fields[0]),
            }
        })?;
        let parse_price = |s: &str| -> Result<f64, FinanceError> {
            s.trim().parse::<f64>().map_err(|e| FinanceError::MalformedRow {
                line,
                message: format!("bad price '{s}': {e}"),
            })
        };
        let c1 = parse_price(fields[1])?;
        let c2 = parse_price(fields[2])?;
        if c1 <= 0.0 || c2 <= 0.0 {
            return Err(FinanceError::NonPositivePrice {
                line,
                value: if c1 <= 0.0 { c1 } else { c2 },
            });
        }
        if let Some(last) = dates.last() {
            if *last >= date {
                return Err(FinanceError::UnsortedDates { line });
            }
        }
        dates.push(date);
        close1.push(c1);
        close2.push(c2);
    }
    if dates.is_empty() {
        return Err(FinanceError::MalformedRow {
            line: 2,
            message: "no data rows".into(),
        });
    }
    Ok(PriceSeries {
        dates,
        close1,
        close2,
    })
}

fn monday_of(date: NaiveDate) -> NaiveDate {
    date - Duration::days(date.weekday().num_days_from_monday() as i64)
}

/// Weekly covariance observations with carry-forward holiday fill.
///
/// A week is emitted iff its Monday-to-Friday span lies inside the series'
/// date span; leading/trailing fragments are dropped. Every observation date
/// therefore belongs to exactly one emitted week or to one of those two
/// fragments.
pub fn fill_and_weekly(series: &PriceSeries) -> Result<Vec<WeeklyCovariance>, FinanceError> {
    let first = *series.dates.first().expect("validated non-empty");
    let last = *series.dates.last().expect("validated non-empty");

    let mut start = monday_of(first);
    if start < first {
        start += Duration::days(7); // partial leading week dropped
    }
    let mut out = Vec::new();
    let mut cursor = 0usize; // index into the observation arrays
    let mut carried: Option<(f64, f64)> = None;

    let mut monday = start;
    while monday + Duration::days(4) <= last {
        // Advance the carry-forward cursor through all observations before
        // this week, then collect the five weekday closes.
        let mut closes = [(0.0f64, 0.0f64); 5];
        for (offset, close) in closes.iter_mut().enumerate() {
            let day = monday + Duration::days(offset as i64);
            while cursor < series.len() && series.dates[cursor] <= day {
                carried = Some((series.close1[cursor], series.close2[cursor]));
                cursor += 1;
            }
            match carried {
                Some(c) => *close = c,
                // Unreachable for emitted weeks: monday >= first observation.
                None => return Err(FinanceError::NoFullWeek),
            }
        }

        let mut y11 = 0.0;
        let mut y12 = 0.0;
        let mut y22 = 0.0;
        for j in 0..4 {
            let q1 = (closes[j + 1].0 / closes[j].0).ln();
            let q2 = (closes[j + 1].1 / closes[j].1).ln();
            y11 += q1 * q1;
            y12 += q1 * q2;
            y22 += q2 * q2;
        }
        let degenerate = SpdMatrix::new(y11, y12, y22).is_err();
        out.push(WeeklyCovariance {
            week_start: monday,
            y11,
            y12,
            y22,
            degenerate,
        });
        monday += Duration::days(7);
    }

    if out.is_empty() {
        return Err(FinanceError::NoFullWeek);
    }
    Ok(out)
}

/// CSV serialization of the weekly table:
/// `week_start,y11,y12,y22,degenerate`.
pub fn weekly_to_csv(weeks: &[WeeklyCovariance]) -> String {
    let mut out = String::from("week_start,y11,y12,y22,degenerate\n");
    for w in weeks {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            w.week_start, w.y11, w.y12, w.y22, w.degenerate as u8
        ));
    }
    out
}

/// Full pipeline: weekly covariances → eigenvalues of the non-degenerate
/// weeks → deconvolution under the configured noise (four degrees of freedom
/// for the weekly-return model).
pub fn estimate_from_prices(
    series: &PriceSeries,
    cfg: &EstimatorConfig,
) -> Result<(Vec<WeeklyCovariance>, DeconvolveOutput), FinanceError> {
    let weeks = fill_and_weekly(series)?;
    let eigs: Vec<EigenPair> = weeks
        .iter()
        .filter_map(|w| w.spd())
        .map(|y| y.eigen_sorted())
        .collect();
    if eigs.len() < 2 {
        return Err(FinanceError::InsufficientData { weeks: eigs.len() });
    }
    let out = deconvolve(&eigs, cfg)?;
    Ok((weeks, out))
}
