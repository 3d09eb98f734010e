//! Paired t-tests, Bonferroni adjustment, Pearson correlation and
//! dropout trajectory tables.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::alignment::AlignmentScore;
use crate::error::{Error, Result};
use crate::uncertainty::UncertaintySummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSamples {
    pub labels: Vec<String>,
    pub baseline: Vec<f64>,
    pub treated: Vec<f64>,
}

impl PairedSamples {
    pub fn new(labels: Vec<String>, baseline: Vec<f64>, treated: Vec<f64>) -> Result<Self> {
        if baseline.len() != treated.len() || labels.len() != baseline.len() {
            return Err(Error::Shape(format!(
                "{} labels, {} baseline, {} treated",
                labels.len(),
                baseline.len(),
                treated.len()
            )));
        }
        if baseline.len() < 2 {
            return Err(Error::InvalidArgument("paired test needs n >= 2".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate unit `{dup}`")));
        }
        Ok(PairedSamples {
            labels,
            baseline,
            treated,
        })
    }

    /// Unlabelled pairs; units are numbered.
    pub fn unlabelled(baseline: Vec<f64>, treated: Vec<f64>) -> Result<Self> {
        let labels = (0..baseline.len()).map(|i| i.to_string()).collect();
        Self::new(labels, baseline, treated)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub mean_diff: f64,
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> Result<f64> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).clamp(0.0, 1.0))
}

/// Paired t-test on `treated - baseline`.
pub fn paired_ttest(s: &PairedSamples) -> Result<TTest> {
    let d: Vec<f64> = s
        .treated
        .iter()
        .zip(&s.baseline)
        .map(|(t, b)| t - b)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired samples".into()));
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || var.sqrt() <= 1e-12 * mean.abs().max(1e-300) {
        return Err(Error::DegeneratePairs);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let df = n - 1.0;
    Ok(TTest {
        t,
        df,
        p: t_two_sided(t, df)?,
        mean_diff: mean,
    })
}

/// min(1, m·p) for each p.
pub fn bonferroni(p_values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m < p_values.len() || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "m = {m} for {} tests",
            p_values.len()
        )));
    }
    p_values
        .iter()
        .map(|p| {
            if !(0.0..=1.0).contains(p) {
                Err(Error::OutOfDomain {
                    value: *p,
                    lo: 0.0,
                    hi: 1.0,
                })
            } else {
                Ok((m as f64 * p).min(1.0))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub r: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64], m_tests: usize) -> Result<CorrelationResult> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument("pearson needs n >= 3".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if !(sxx > 0.0) {
        return Err(Error::ZeroVariance("x"));
    }
    if !(syy > 0.0) {
        return Err(Error::ZeroVariance("y"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let p_raw = if 1.0 - r.abs() < 1e-15 {
        0.0
    } else {
        let t = r * ((nf - 2.0) / (1.0 - r * r)).sqrt();
        t_two_sided(t, nf - 2.0)?
    };
    let p_adjusted = bonferroni(&[p_raw], m_tests.max(1))?[0];
    Ok(CorrelationResult {
        r,
        p_raw,
        p_adjusted,
        n,
    })
}

/// "*" below 0.05, otherwise "ns".
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub model: String,
    pub from_dropout: f64,
    pub to_dropout: f64,
    pub d_te: f64,
    pub d_ce: f64,
    pub d_mi: f64,
    pub d_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryTable {
    pub rows: Vec<TrajectoryRow>,
    pub ledger: Vec<String>,
}

fn rate_key(r: f64) -> i64 {
    (r * 1e6).round() as i64
}

/// Mean TE/CE/MI over dimensions, keyed by (model, dropout).
fn model_means(summaries: &[UncertaintySummary]) -> BTreeMap<String, BTreeMap<i64, [f64; 4]>> {
    let mut acc: BTreeMap<String, BTreeMap<i64, [f64; 4]>> = BTreeMap::new();
    for s in summaries {
        let e = acc
            .entry(s.model.clone())
            .or_default()
            .entry(rate_key(s.dropout_rate))
            .or_insert([0.0; 4]);
        e[0] += s.total_entropy;
        e[1] += s.conditional_entropy;
        e[2] += s.mutual_information;
        e[3] += 1.0;
    }
    for rates in acc.values_mut() {
        for v in rates.values_mut() {
            let n = v[3];
            for x in v.iter_mut().take(3) {
                *x /= n;
            }
        }
    }
    acc
}

/// Per model, one row per nonzero dropout rate relative to dropout 0.
/// Uncertainty values are averaged over dimensions first.
pub fn trajectory_table(
    summaries: &[UncertaintySummary],
    scores: &[AlignmentScore],
) -> TrajectoryTable {
    let means = model_means(summaries);
    let mut l2: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for s in scores {
        if let Some(r) = s.dropout_rate {
            l2.insert((s.model_id.clone(), rate_key(r)), s.l2);
        }
    }
    let mut table = TrajectoryTable::default();
    for (model, rates) in &means {
        let Some(base) = rates.get(&0) else {
            table
                .ledger
                .push(format!("{model}: no dropout-0 baseline, excluded"));
            continue;
        };
        let base_l2 = l2.get(&(model.clone(), 0));
        for (rate, v) in rates.range(1..) {
            let d_l2 = match (base_l2, l2.get(&(model.clone(), *rate))) {
                (Some(b), Some(t)) => Some(t - b),
                _ => None,
            };
            table.rows.push(TrajectoryRow {
                model: model.clone(),
                from_dropout: 0.0,
                to_dropout: *rate as f64 / 1e6,
                d_te: v[0] - base[0],
                d_ce: v[1] - base[1],
                d_mi: v[2] - base[2],
                d_l2,
            });
        }
    }
    table
}

pub const TRAJECTORY_CSV_HEADER: &str = "model,from_dropout,to_dropout,d_te,d_ce,d_mi,d_l2";

pub fn trajectory_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::from(TRAJECTORY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.model,
            r.from_dropout,
            r.to_dropout,
            r.d_te,
            r.d_ce,
            r.d_mi,
            r.d_l2.map(|v| v.to_string()).unwrap_or_default()
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub quantity: String,
    pub comparison: String,
    pub n: usize,
    pub t: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: String,
}

pub const TEST_CSV_HEADER: &str = "quantity,comparison,n,t,df,p_raw,p_adjusted,significance";

pub fn tests_to_csv(rows: &[TestRow]) -> String {
    let mut out = String::from(TEST_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{:e},{:e},{}\n",
            r.quantity, r.comparison, r.n, r.t, r.df, r.p_raw, r.p_adjusted, r.stars
        ));
    }
    out
}

/// Paired tests of TE, CE and MI between dropout 0 and each other rate,
/// pairing units by (model, dimension). Bonferroni over all tests run.
pub fn dropout_tests(summaries: &[UncertaintySummary]) -> Result<(Vec<TestRow>, Vec<String>)> {
    let mut by_rate: BTreeMap<i64, BTreeMap<(String, String), &UncertaintySummary>> = BTreeMap::new();
    for s in summaries {
        by_rate
            .entry(rate_key(s.dropout_rate))
            .or_default()
            .insert((s.model.clone(), s.dimension.name().to_string()), s);
    }
    let mut ledger = Vec::new();
    let Some(base) = by_rate.get(&0) else {
        return Err(Error::InvalidArgument("no dropout-0 summaries".into()));
    };
    let mut raw = Vec::new();
    for (rate, units) in by_rate.range(1..) {
        let keys: Vec<_> = base.keys().filter(|k| units.contains_key(*k)).cloned().collect();
        if keys.len() < base.len() || keys.len() < units.len() {
            ledger.push(format!(
                "dropout {}: {} unpaired units dropped",
                *rate as f64 / 1e6,
                base.len() + units.len() - 2 * keys.len()
            ));
        }
        let labels: Vec<String> = keys.iter().map(|(m, d)| format!("{m}/{d}")).collect();
        type Get = fn(&UncertaintySummary) -> f64;
        let quantities: [(&str, Get); 3] = [
            ("TE", |s| s.total_entropy),
            ("CE", |s| s.conditional_entropy),
            ("MI", |s| s.mutual_information),
        ];
        for (q, get) in quantities {
            let b: Vec<f64> = keys.iter().map(|k| get(base[k])).collect();
            let t: Vec<f64> = keys.iter().map(|k| get(units[k])).collect();
            let comparison = format!("0 vs {}", *rate as f64 / 1e6);
            match PairedSamples::new(labels.clone(), b, t).and_then(|p| paired_ttest(&p)) {
                Ok(r) => raw.push((q.to_string(), comparison, keys.len(), r)),
                Err(e) => ledger.push(format!("{q} {comparison}: {e}")),
            }
        }
    }
    let m = raw.len().max(1);
    let adjusted = bonferroni(&raw.iter().map(|r| r.3.p).collect::<Vec<_>>(), m)?;
    let rows = raw
        .into_iter()
        .zip(adjusted)
        .map(|((quantity, comparison, n, r), p_adj)| TestRow {
            quantity,
            comparison,
            n,
            t: r.t,
            df: r.df,
            p_raw: r.p,
            p_adjusted: p_adj,
            stars: significance_stars(p_adj).to_string(),
        })
        .collect();
    Ok((rows, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Dimension;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Two-sided t tail by Simpson integration of the density over [0, |t|].
    fn t_tail_oracle(t: f64, df: f64) -> f64 {
        let ln_c = ln_gamma((df + 1.0) / 2.0)
            - ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let f = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 200_000;
        let h = t.abs() / n as f64;
        let mut s = f(0.0) + f(t.abs());
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        1.0 - 2.0 * s * h / 3.0
    }

    /// Lanczos approximation, independent of statrs.
    fn ln_gamma(x: f64) -> f64 {
        const G: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = G[0];
        let t = x + 7.5;
        for (i, g) in G.iter().enumerate().skip(1) {
            a += g / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn paired_example() {
        let s = PairedSamples::unlabelled(vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
        let r = paired_ttest(&s).unwrap();
        assert!((r.t - 3.4641).abs() < 1e-4);
        assert_eq!(r.df, 2.0);
        assert!((r.p - t_tail_oracle(r.t, 2.0)).abs() < 1e-8);
        assert!((r.p - 0.0742).abs() < 1e-3);
    }

    #[test]
    fn tail_matches_integration_oracle() {
        for (t, df) in [(0.5, 3.0), (1.7, 9.0), (2.5, 30.0), (4.0, 287.0)] {
            assert!((t_two_sided(t, df).unwrap() - t_tail_oracle(t, df)).abs() < 1e-8);
        }
    }

    #[test]
    fn degenerate_and_antisymmetric() {
        let zero = PairedSamples::unlabelled(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(paired_ttest(&zero), Err(Error::DegeneratePairs)));
        let constant = PairedSamples::unlabelled(vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(paired_ttest(&constant), Err(Error::DegeneratePairs)));
        let a = PairedSamples::unlabelled(vec![0.1, 0.4, 0.3, 0.9], vec![0.3, 0.5, 0.2, 1.4]).unwrap();
        let b = PairedSamples::unlabelled(a.treated.clone(), a.baseline.clone()).unwrap();
        let (ra, rb) = (paired_ttest(&a).unwrap(), paired_ttest(&b).unwrap());
        assert!((ra.t + rb.t).abs() < 1e-12 && (ra.p - rb.p).abs() < 1e-15);
        assert!(PairedSamples::new(vec!["x".into(), "x".into()], vec![0.0; 2], vec![1.0; 2]).is_err());
    }

    #[test]
    fn bonferroni_examples() {
        let v = bonferroni(&[0.02, 0.5, 1e-11], 3).unwrap();
        assert!((v[0] - 0.06).abs() < 1e-15);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 3e-11).abs() < 1e-25);
        assert!(bonferroni(&[1.2], 1).is_err());
        assert!(bonferroni(&[0.1, 0.2], 1).is_err());
    }

    #[test]
    fn pearson_examples() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(pearson(&x, &y, 1).unwrap().r, 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg, 1).unwrap().r, -1.0);
        assert!(matches!(pearson(&x, &[1.0; 10], 1), Err(Error::ZeroVariance("y"))));
    }

    #[test]
    fn pearson_planted_fixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let g = Normal::new(0.0, 1.0).unwrap();
        let (mut x, mut y) = (vec![], vec![]);
        for _ in 0..10 {
            let a: f64 = g.sample(&mut rng);
            let b: f64 = g.sample(&mut rng);
            x.push(a);
            y.push(0.7 * a + (1.0f64 - 0.49).sqrt() * b);
        }
        // covariance-formula oracle: E[xy] - E[x]E[y] over population sds
        let n = 10.0;
        let ex = x.iter().sum::<f64>() / n;
        let ey = y.iter().sum::<f64>() / n;
        let cov = x.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / n - ex * ey;
        let sx = (x.iter().map(|a| a * a).sum::<f64>() / n - ex * ex).sqrt();
        let sy = (y.iter().map(|b| b * b).sum::<f64>() / n - ey * ey).sqrt();
        let r = pearson(&x, &y, 2).unwrap();
        assert!((r.r - cov / (sx * sy)).abs() < 0.02);
        assert!((r.p_adjusted - (2.0 * r.p_raw).min(1.0)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn ttest_location_invariant(d in proptest::collection::vec(-5.0f64..5.0, 3..20), c in -100.0f64..100.0) {
            let base: Vec<f64> = (0..d.len()).map(|i| i as f64 * 0.1).collect();
            let treated: Vec<f64> = base.iter().zip(&d).map(|(b, x)| b + x).collect();
            let s = PairedSamples::unlabelled(base.clone(), treated.clone()).unwrap();
            let shifted = PairedSamples::unlabelled(
                base.iter().map(|v| v + c).collect(),
                treated.iter().map(|v| v + c).collect(),
            ).unwrap();
            if let (Ok(a), Ok(b)) = (paired_ttest(&s), paired_ttest(&shifted)) {
                prop_assert!((a.t - b.t).abs() <= 1e-6 * a.t.abs().max(1.0));
                prop_assert!((a.p - b.p).abs() <= 1e-6);
            }
        }

        #[test]
        fn pearson_scale_invariant(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            a in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
            b in -3.0f64..3.0,
            d in -3.0f64..3.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok(r) = pearson(&x, &y, 1) {
                let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
                let r2 = pearson(&xs, &ys, 1).unwrap();
                prop_assert!((r2.r - (a * c).signum() * r.r).abs() < 1e-9);
            }
        }

        #[test]
        fn bonferroni_monotone_and_identity(mut ps in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            ps.sort_by(f64::total_cmp);
            let adj = bonferroni(&ps, ps.len()).unwrap();
            prop_assert!(adj.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(bonferroni(&ps[..1], 1).unwrap()[0], ps[0]);
        }
    }

    fn summary(model: &str, dim: Dimension, r: f64, te: f64, ce: f64) -> UncertaintySummary {
        UncertaintySummary {
            model: model.into(),
            dimension: dim,
            dropout_rate: r,
            n: 10,
            total_entropy: te,
            conditional_entropy: ce,
            mutual_information: te - ce,
            mean_confidence: 0.5,
        }
    }

    fn score(model: &str, r: f64, l2: f64) -> AlignmentScore {
        AlignmentScore {
            model_id: model.into(),
            dropout_rate: Some(r),
            l2,
            delta_l2: None,
            baseline: None,
        }
    }

    #[test]
    fn trajectories_and_exclusion() {
        let mut s = vec![];
        let mut sc = vec![];
        for (i, r) in [0.0, 0.05, 0.1].iter().enumerate() {
            let te = 0.5 + 0.1 * i as f64;
            s.push(summary("m1", Dimension::Age, *r, te, 0.3));
            sc.push(score("m1", *r, 1.0 - 0.1 * i as f64));
        }
        s.push(summary("m2", Dimension::Age, 0.05, 0.5, 0.3));
        let t = trajectory_table(&s, &sc);
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.d_mi > 0.0 && r.d_l2.unwrap() < 0.0 && r.d_ce == 0.0));
        assert_eq!(t.rows[1].to_dropout, 0.1);
        assert_eq!(t.ledger.len(), 1);
        assert!(t.ledger[0].starts_with("m2"));
        assert!(trajectory_to_csv(&t.rows).starts_with(TRAJECTORY_CSV_HEADER));
    }

    #[test]
    fn dropout_tests_adjust_over_family() {
        let mut s = vec![];
        for (k, dim) in Dimension::ALL.iter().enumerate() {
            for (i, r) in [0.0, 0.1].iter().enumerate() {
                let te = 0.5 + 0.05 * i as f64 + 0.01 * (k * k % 5) as f64 * i as f64;
                s.push(summary("m", *dim, *r, te, 0.3 + 0.001 * k as f64));
            }
        }
        let (rows, ledger) = dropout_tests(&s).unwrap();
        // CE differences are all zero: degenerate, ledgered
        assert_eq!(rows.len(), 2);
        assert_eq!(ledger.len(), 1);
        assert!(rows.iter().all(|r| r.stars == "*" && r.p_adjusted == (2.0 * r.p_raw).min(1.0)));
    }
}
