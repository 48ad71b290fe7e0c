//! Evaluation statistics: Welch t-tests, chi-square matching checks, weekly
//! cohort comparisons, engagement funnels, dose-response buckets and report
//! emission.

pub mod dist;
mod dose;
mod engagement;
mod report;
mod weekly;

pub use dose::{dose_inputs, dose_response, dose_response_from_inputs, DoseBucket, DoseInput, DoseResponseRow, DoseStepsWindow};
pub use engagement::{engagement_table, format_rate, EngagementCounts, EngagementRow, EngagementTable, GroupBy};
pub use report::{build_report, emit_report, Report, ReportInputs, ReportTable};
pub use weekly::{study_means, test_hypotheses, weekly_comparison, Hypotheses, Metric, WeekRow};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Significance level used throughout.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 2 observations per group, got {0}")]
    TooFewSamples(u64),
    #[error("both groups have zero variance")]
    DegenerateVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error("category sets differ: `{0}`")]
    CategoryMismatch(String),
    #[error("zero expected count in cell ({cohort}, {category})")]
    ZeroExpected { cohort: usize, category: String },
    #[error("unknown nudge `{0}` in event log")]
    UnknownNudge(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tail {
    /// H1: the second group's mean exceeds the first's.
    OneSidedGreater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub tail: Tail,
    pub significant: bool,
}

impl TestResult {
    fn new(statistic: f64, degrees_of_freedom: f64, p_value: f64, tail: Tail) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            degrees_of_freedom,
            p_value,
            tail,
            significant: p_value <= ALPHA,
        }
    }
}

/// Mean, sample standard deviation and size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSummary {
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

impl SampleSummary {
    pub fn new(mean: f64, sd: f64, n: u64) -> Self {
        Self { mean, sd, n }
    }

    /// Two-pass mean and (n - 1)-denominator SD; SD is 0 below two values.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::new(0.0, 0.0, 0);
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self::new(mean, sd, n as u64)
    }
}

impl fmt::Display for SampleSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2} (n = {})", self.mean, self.sd, self.n)
    }
}

/// Welch's unequal-variance t-test of `second` against `first`:
/// t = (mean2 - mean1) / sqrt(sd1²/n1 + sd2²/n2), Welch–Satterthwaite df.
pub fn welch_t(first: SampleSummary, second: SampleSummary, tail: Tail) -> Result<TestResult, StatsError> {
    for s in [first, second] {
        if s.n < 2 {
            return Err(StatsError::TooFewSamples(s.n));
        }
        if !(s.mean.is_finite() && s.sd.is_finite()) || s.sd < 0.0 {
            return Err(StatsError::NonFinite);
        }
    }
    let v1 = first.sd * first.sd / first.n as f64;
    let v2 = second.sd * second.sd / second.n as f64;
    let se2 = v1 + v2;
    if se2 <= 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let t = (second.mean - first.mean) / se2.sqrt();
    let df = se2 * se2 / (v1 * v1 / (first.n - 1) as f64 + v2 * v2 / (second.n - 1) as f64);
    let p = match tail {
        Tail::OneSidedGreater => dist::student_t_sf(t, df),
        Tail::TwoSided => 2.0 * dist::student_t_sf(t.abs(), df),
    };
    Ok(TestResult::new(t, df, p, tail))
}

pub type CategoryCounts = BTreeMap<String, u64>;

/// Pearson chi-square on the 2×k table formed by two cohorts' counts.
pub fn chi_square_match(first: &CategoryCounts, second: &CategoryCounts) -> Result<TestResult, StatsError> {
    if let Some(c) = first.keys().find(|c| !second.contains_key(*c)) {
        return Err(StatsError::CategoryMismatch(c.clone()));
    }
    if let Some(c) = second.keys().find(|c| !first.contains_key(*c)) {
        return Err(StatsError::CategoryMismatch(c.clone()));
    }
    let rows = [first, second];
    let row_totals: Vec<f64> = rows.iter().map(|r| r.values().sum::<u64>() as f64).collect();
    let grand: f64 = row_totals.iter().sum();
    let mut stat = 0.0;
    for category in first.keys() {
        let col = (first[category] + second[category]) as f64;
        for (i, r) in rows.iter().enumerate() {
            let expected = row_totals[i] * col / grand.max(f64::MIN_POSITIVE);
            if expected <= 0.0 {
                return Err(StatsError::ZeroExpected {
                    cohort: i,
                    category: category.clone(),
                });
            }
            let o = r[category] as f64;
            stat += (o - expected) * (o - expected) / expected;
        }
    }
    let df = (first.len() as f64 - 1.0).max(1.0);
    Ok(TestResult::new(stat, df, dist::chi_square_sf(stat, df), Tail::TwoSided))
}

/// Per-attribute summary of one cohort.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortSummary {
    pub label: String,
    pub n: u64,
    pub continuous: BTreeMap<String, SampleSummary>,
    pub categorical: BTreeMap<String, CategoryCounts>,
}

/// Two-sided Welch tests on continuous attributes and chi-square tests on
/// categorical ones, keyed by attribute name.
pub fn compare_cohorts(a: &CohortSummary, b: &CohortSummary) -> Result<BTreeMap<String, TestResult>, StatsError> {
    let mut out = BTreeMap::new();
    for (k, sa) in &a.continuous {
        if let Some(sb) = b.continuous.get(k) {
            out.insert(k.clone(), welch_t(*sa, *sb, Tail::TwoSided)?);
        }
    }
    for (k, ca) in &a.categorical {
        if let Some(cb) = b.categorical.get(k) {
            out.insert(k.clone(), chi_square_match(ca, cb)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(mean: f64, sd: f64, n: u64) -> SampleSummary {
        SampleSummary::new(mean, sd, n)
    }

    #[test]
    fn welch_reproduces_printed_rows() {
        let r = welch_t(s(3678.2, 4265.6, 84903), s(3783.2, 5328.4, 84764), Tail::OneSidedGreater).unwrap();
        assert!((r.statistic - 4.479).abs() <= 0.01, "{}", r.statistic);
        assert!(((r.p_value - 3.756e-6) / 3.756e-6).abs() < 0.05, "{}", r.p_value);
        let r = welch_t(s(2977.4, 3791.4, 7465), s(3226.4, 4034.9, 7436), Tail::OneSidedGreater).unwrap();
        assert!((r.statistic - 3.883).abs() <= 0.01);
        assert!(((r.p_value - 5.186e-5) / 5.186e-5).abs() < 0.05);
        assert!(r.significant);
    }

    #[test]
    fn identical_samples_and_errors() {
        let r = welch_t(s(10.0, 2.0, 30), s(10.0, 2.0, 30), Tail::OneSidedGreater).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 0.5);
        assert!(matches!(welch_t(s(1.0, 0.0, 5), s(2.0, 0.0, 5), Tail::TwoSided), Err(StatsError::DegenerateVariance)));
        assert!(matches!(welch_t(s(1.0, 1.0, 1), s(2.0, 1.0, 5), Tail::TwoSided), Err(StatsError::TooFewSamples(1))));
        assert!(matches!(welch_t(s(f64::NAN, 1.0, 3), s(2.0, 1.0, 5), Tail::TwoSided), Err(StatsError::NonFinite)));
    }

    #[test]
    fn welch_matches_raw_sample_oracle() {
        // Hand-expanded definition from raw observations.
        let a = [3.0, 4.5, 2.0, 8.0, 5.5];
        let b = [6.0, 7.5, 5.0, 9.0, 4.0, 8.5];
        let r = welch_t(SampleSummary::from_values(&a), SampleSummary::from_values(&b), Tail::TwoSided).unwrap();
        let var = |x: &[f64]| {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
        };
        let (ma, mb) = (a.iter().sum::<f64>() / 5.0, b.iter().sum::<f64>() / 6.0);
        let t = (mb - ma) / (var(&a) / 5.0 + var(&b) / 6.0).sqrt();
        assert!((r.statistic - t).abs() < 1e-12);
    }

    fn counts(pairs: &[(&str, u64)]) -> CategoryCounts {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn chi_square_identical_and_sex_split() {
        let a = counts(&[("F", 40), ("M", 60)]);
        let r = chi_square_match(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        // Group 1 sex split: 48.0% of 7,465 vs 47.7% of 7,436 female
        let ctl = counts(&[("F", 3583), ("M", 3882)]);
        let trt = counts(&[("F", 3547), ("M", 3889)]);
        assert!(chi_square_match(&ctl, &trt).unwrap().p_value > 0.05);
    }

    #[test]
    fn chi_square_errors_name_the_cell() {
        let a = counts(&[("iOS", 0), ("Android", 5)]);
        let b = counts(&[("iOS", 0), ("Android", 7)]);
        match chi_square_match(&a, &b) {
            Err(StatsError::ZeroExpected { category, .. }) => assert_eq!(category, "iOS"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            chi_square_match(&counts(&[("F", 1)]), &counts(&[("M", 1)])),
            Err(StatsError::CategoryMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn chi_square_matches_direct_formula(o in prop::array::uniform4(1u64..500)) {
            let a = counts(&[("x", o[0]), ("y", o[1])]);
            let b = counts(&[("x", o[2]), ("y", o[3])]);
            let n = (o[0] + o[1] + o[2] + o[3]) as f64;
            let rows = [(o[0] + o[1]) as f64, (o[2] + o[3]) as f64];
            let cols = [(o[0] + o[2]) as f64, (o[1] + o[3]) as f64];
            let mut want = 0.0;
            for (i, obs) in o.iter().enumerate() {
                let e = rows[i / 2] * cols[i % 2] / n;
                want += (*obs as f64 - e).powi(2) / e;
            }
            let got = chi_square_match(&a, &b).unwrap().statistic;
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }

        #[test]
        fn t_is_scale_invariant(m1 in 1.0f64..1e4, m2 in 1.0f64..1e4, s1 in 1.0f64..1e3, s2 in 1.0f64..1e3, k in 0.01f64..100.0) {
            let a = welch_t(s(m1, s1, 50), s(m2, s2, 60), Tail::OneSidedGreater).unwrap();
            let b = welch_t(s(k * m1, k * s1, 50), s(k * m2, k * s2, 60), Tail::OneSidedGreater).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * a.statistic.abs().max(1.0));
            prop_assert!((0.0..=1.0).contains(&a.p_value));
            prop_assert_eq!(a.significant, a.p_value <= ALPHA);
        }
    }
}
