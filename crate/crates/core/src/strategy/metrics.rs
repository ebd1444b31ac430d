//! Performance metrics of a daily simple-return stream.

use serde::{Deserialize, Serialize};

/// Six summary metrics plus an annualized volatility. Ratios are `None` when
/// their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Annualized compounded return.
    pub ar: f64,
    /// Sample standard deviation of daily returns.
    pub sd: f64,
    pub sd_annualized: f64,
    pub sr: Option<f64>,
    /// Maximum drawdown as a fraction of the running peak.
    pub md: f64,
    pub sor: Option<f64>,
    pub cr: Option<f64>,
}

/// Equity path starting from 1.0 (not included) compounding `returns`.
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    returns
        .iter()
        .scan(1.0, |e, r| {
            *e *= 1.0 + r;
            Some(*e)
        })
        .collect()
}

/// Largest relative fall from a running peak. The starting value 1.0 counts
/// as a peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = 1.0f64;
    let mut md = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        md = md.max((peak - e) / peak);
    }
    md
}

/// Computes the metrics of a nonempty daily return stream. `risk_free_rate`
/// is annual; `periods` is the number of trading days per year.
pub fn metrics(returns: &[f64], risk_free_rate: f64, periods: f64) -> Metrics {
    assert!(!returns.is_empty(), "metrics need at least one return");
    let t = returns.len() as f64;
    let equity = equity_curve(returns);
    let growth = *equity.last().unwrap();
    let ar = growth.powf(periods / t) - 1.0;
    let mean = returns.iter().sum::<f64>() / t;
    let sd = if returns.len() < 2 {
        0.0
    } else {
        (returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (t - 1.0)).sqrt()
    };
    let excess = mean - risk_free_rate / periods;
    let downside = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / t).sqrt();
    let md = max_drawdown(&equity);
    let ratio = |den: f64| (den > 0.0).then(|| excess / den * periods.sqrt());
    Metrics {
        ar,
        sd,
        sd_annualized: sd * periods.sqrt(),
        sr: ratio(sd),
        md,
        sor: ratio(downside),
        cr: (md > 0.0).then(|| ar / md),
    }
}
