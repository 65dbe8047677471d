//! Outcome analyses: corrected per-subject log odds, a pooled fixed-effects
//! logistic test, and error-curve summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::session::{Baseline, SessionResult};
use crate::stats::{mean, normal_cdf, percentile_sorted};

/// Log odds of choosing the baseline in `k` of `n` duels, with a half count
/// added to each outcome.
pub fn log_odds(k: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::NoDuels);
    }
    if k > n {
        return Err(Error::InvalidParam(format!("k = {k} exceeds n = {n}")));
    }
    let p = (k as f64 + 0.5) / (n as f64 + 1.0);
    Ok((p / (1.0 - p)).ln())
}

/// Intercept-only logistic regression over all subjects' duels with a
/// two-sided Wald test of a zero intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledTest {
    pub k: usize,
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Pooled estimate from `(k, n)` tallies. The corrected proportion keeps
/// the estimate finite when every duel went one way.
pub fn pooled_log_odds(tallies: &[(usize, usize)]) -> Result<PooledTest> {
    let k: usize = tallies.iter().map(|t| t.0).sum();
    let n: usize = tallies.iter().map(|t| t.1).sum();
    let estimate = log_odds(k, n)?;
    let p = (k as f64 + 0.5) / (n as f64 + 1.0);
    let std_error = 1.0 / (n as f64 * p * (1.0 - p)).sqrt();
    let z = estimate / std_error;
    Ok(PooledTest {
        k,
        n,
        estimate,
        std_error,
        z,
        p_value: 2.0 * normal_cdf(-z.abs()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MseSummary {
    /// One-based duel index.
    pub duel: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Per-index median and quartiles across equal-length traces.
pub fn summarize_mse_curves(traces: &[Vec<f64>]) -> Result<Vec<MseSummary>> {
    let Some(first) = traces.first() else {
        return Err(Error::InvalidParam("no traces".into()));
    };
    let len = first.len();
    if let Some(t) = traces.iter().find(|t| t.len() != len) {
        return Err(shape_err(format!("traces of length {len}"), t.len()));
    }
    Ok((0..len)
        .map(|i| {
            let mut col: Vec<f64> = traces.iter().map(|t| t[i]).collect();
            col.sort_by(f64::total_cmp);
            MseSummary {
                duel: i + 1,
                median: percentile_sorted(&col, 0.5),
                q25: percentile_sorted(&col, 0.25),
                q75: percentile_sorted(&col, 0.75),
            }
        })
        .collect())
}

pub fn write_mse_curves<W: Write>(curves: &[MseSummary], mut w: W) -> Result<()> {
    writeln!(w, "duel_index,median,q25,q75")?;
    for c in curves {
        writeln!(w, "{},{},{},{}", c.duel, c.median, c.q25, c.q75)?;
    }
    Ok(())
}

pub fn write_log_odds<W: Write>(results: &[SessionResult], mut w: W) -> Result<()> {
    writeln!(w, "subject,baseline,k,n,log_odds")?;
    for r in results {
        for t in &r.tallies {
            writeln!(w, "{},{},{},{},{}", r.subject.id, t.baseline.name(), t.k, t.n, t.log_odds)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub baseline: Baseline,
    /// Subjects whose log odds favor the optimized encoder.
    pub subjects_favoring_hilo: usize,
    pub subjects: usize,
    pub mean_log_odds: f64,
    pub sem_log_odds: f64,
    pub pooled: PooledTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub subjects: usize,
    pub baselines: Vec<BaselineSummary>,
    pub mse_curve: Vec<MseSummary>,
    pub mean_agreement: f64,
}

impl ConditionSummary {
    pub fn from_results(results: &[SessionResult]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::InvalidParam("no session results".into()));
        }
        let mut baselines = Vec::new();
        for b in Baseline::ALL {
            let tallies: Vec<(usize, usize, f64)> = results
                .iter()
                .filter_map(|r| r.tally(b).map(|t| (t.k, t.n, t.log_odds)))
                .collect();
            if tallies.is_empty() {
                continue;
            }
            let lo: Vec<f64> = tallies.iter().map(|t| t.2).collect();
            let m = mean(&lo);
            let sem = if lo.len() > 1 {
                (lo.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (lo.len() - 1) as f64).sqrt() / (lo.len() as f64).sqrt()
            } else {
                0.0
            };
            baselines.push(BaselineSummary {
                baseline: b,
                subjects_favoring_hilo: lo.iter().filter(|&&x| x < 0.0).count(),
                subjects: lo.len(),
                mean_log_odds: m,
                sem_log_odds: sem,
                pooled: pooled_log_odds(&tallies.iter().map(|t| (t.0, t.1)).collect::<Vec<_>>())?,
            });
        }
        let traces: Vec<Vec<f64>> = results.iter().map(|r| r.mse_trace.clone()).collect();
        Ok(Self {
            subjects: results.len(),
            baselines,
            mse_curve: summarize_mse_curves(&traces)?,
            mean_agreement: mean(&results.iter().map(|r| r.agreement).collect::<Vec<_>>()),
        })
    }

    pub fn baseline(&self, b: Baseline) -> Option<&BaselineSummary> {
        self.baselines.iter().find(|s| s.baseline == b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corrected_log_odds() {
        let lo = log_odds(0, 39).unwrap();
        assert!((lo - (0.0125f64 / 0.9875).ln()).abs() < 1e-12);
        assert!((lo + 4.37).abs() < 0.005);
        assert_eq!(log_odds(20, 40).unwrap(), 0.0);
        assert!(matches!(log_odds(0, 0), Err(Error::NoDuels)));
        assert!(log_odds(3, 2).is_err());
    }

    #[test]
    fn pooled_test_detects_a_strong_preference() {
        let t = pooled_log_odds(&[(2, 20), (3, 20), (1, 19)]).unwrap();
        assert!(t.estimate < 0.0 && t.p_value < 1e-6);
        let even = pooled_log_odds(&[(10, 20), (10, 20)]).unwrap();
        assert!(even.estimate.abs() < 1e-12 && (even.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_examples() {
        let one = summarize_mse_curves(&[vec![0.3, 0.2]]).unwrap();
        assert!(one.iter().all(|c| c.q25 == c.median && c.q75 == c.median));
        let three = summarize_mse_curves(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        assert_eq!(three.iter().map(|c| c.median).collect::<Vec<_>>(), vec![3.0, 4.0]);
        assert!(summarize_mse_curves(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(summarize_mse_curves(&[]).is_err());
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_mse_curves(&[MseSummary { duel: 1, median: 0.5, q25: 0.4, q75: 0.6 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "duel_index,median,q25,q75\n1,0.5,0.4,0.6\n");
    }

    proptest! {
        #[test]
        fn percentiles_match_sorting_oracle(values in prop::collection::vec(-10.0f64..10.0, 1..40)) {
            let traces: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
            let s = &summarize_mse_curves(&traces).unwrap()[0];
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            // Linear interpolation between order statistics.
            let oracle = |q: f64| {
                let pos = q * (n - 1) as f64;
                let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
                sorted[lo] * (1.0 - (pos - lo as f64)) + sorted[hi] * (pos - lo as f64)
            };
            prop_assert!((s.median - oracle(0.5)).abs() < 1e-12);
            prop_assert!((s.q25 - oracle(0.25)).abs() < 1e-12);
            prop_assert!((s.q75 - oracle(0.75)).abs() < 1e-12);
            prop_assert!(s.q25 <= s.median && s.median <= s.q75);
        }

        #[test]
        fn log_odds_is_antisymmetric(n in 1usize..100, frac in 0.0f64..=1.0) {
            let k = ((n as f64) * frac).floor() as usize;
            prop_assert!((log_odds(k, n).unwrap() + log_odds(n - k, n).unwrap()).abs() < 1e-12);
        }
    }
}
