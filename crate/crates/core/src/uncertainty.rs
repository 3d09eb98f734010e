//! Confidence, binary entropy and the total / conditional / mutual
//! information decomposition, all in bits.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backend::ChoiceRecord;
use crate::error::{Error, Result};
use crate::scenario::{Dimension, Scenario};

const SUM_TOL: f64 = 1e-9;

fn check_unit(p: f64) -> Result<()> {
    if !p.is_finite() {
        return Err(Error::NonFinite(format!("probability {p}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfDomain {
            value: p,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// Squared margin (p1 - p2)^2, equal to (2 max(p1,p2) - 1)^2.
pub fn confidence(p1: f64, p2: f64) -> Result<f64> {
    check_unit(p1)?;
    check_unit(p2)?;
    if ((p1 + p2) - 1.0).abs() > SUM_TOL {
        return Err(Error::NotNormalized(p1, p2));
    }
    let p = p1.max(p2);
    Ok((2.0 * p - 1.0).powi(2))
}

fn xlog2x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary entropy in bits, with 0 log 0 = 0.
pub fn binary_entropy(p: f64) -> Result<f64> {
    check_unit(p)?;
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: f64) -> f64 {
    let h = -xlog2x(p) - xlog2x(1.0 - p);
    // -0.0 at the endpoints
    h.max(0.0)
}

/// Quadratic expansion of binary entropy around p = 1/2.
pub fn taylor_entropy(p: f64) -> Result<f64> {
    check_unit(p)?;
    Ok(1.0 - (2.0 / std::f64::consts::LN_2) * (p - 0.5).powi(2))
}

/// Probability of one fixed outcome for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ProbSample(f64);

impl ProbSample {
    pub fn new(p: f64) -> Result<Self> {
        check_unit(p)?;
        Ok(ProbSample(p))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Entropy decomposition for one group of samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub total_entropy: f64,
    pub conditional_entropy: f64,
    pub mutual_information: f64,
    pub n: usize,
}

/// TE = H(E[p]), CE = E[H(p)], MI = TE - CE.
pub fn decompose(samples: &[ProbSample]) -> Result<Decomposition> {
    if samples.is_empty() {
        return Err(Error::Empty("probability samples"));
    }
    let n = samples.len() as f64;
    // sorted summation keeps the result permutation-invariant bit for bit
    let mut ps: Vec<f64> = samples.iter().map(|s| s.0).collect();
    ps.sort_by(f64::total_cmp);
    if ps[0] == ps[ps.len() - 1] {
        let h = entropy_unchecked(ps[0]);
        return Ok(Decomposition {
            total_entropy: h,
            conditional_entropy: h,
            mutual_information: 0.0,
            n: samples.len(),
        });
    }
    let mean = (ps.iter().sum::<f64>() / n).clamp(0.0, 1.0);
    let total_entropy = entropy_unchecked(mean);
    let mut hs: Vec<f64> = ps.iter().map(|p| entropy_unchecked(*p)).collect();
    hs.sort_by(f64::total_cmp);
    let mut conditional_entropy = hs.iter().sum::<f64>() / n;
    let mut mutual_information = total_entropy - conditional_entropy;
    if mutual_information < 0.0 {
        // Jensen gives MI >= 0; a negative value here is rounding in the
        // two means, so collapse it onto the equality case.
        conditional_entropy = total_entropy;
        mutual_information = 0.0;
    }
    Ok(Decomposition {
        total_entropy,
        conditional_entropy,
        mutual_information,
        n: samples.len(),
    })
}

/// Jensen-Shannon divergence in bits between two distributions on the
/// same support.
pub fn jsd(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "support sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    for d in [a, b] {
        for &x in d {
            check_unit(x)?;
        }
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "distribution sums to {s}"
            )));
        }
    }
    let kl_to_mid = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| {
                let m = 0.5 * (pi + qi);
                if pi == 0.0 {
                    0.0
                } else {
                    pi * (pi / m).log2()
                }
            })
            .sum()
    };
    let v = 0.5 * kl_to_mid(a, b) + 0.5 * kl_to_mid(b, a);
    Ok(v.clamp(0.0, 1.0))
}

/// Probability that the model spares the focal side of an isolated
/// scenario, given its probability of answering case 1.
pub fn focal_probability(s: &Scenario, p_case1: f64) -> Option<f64> {
    let dim = s.dimension()?;
    let focal = s.contrast(dim)?.focal;
    Some(if s.case_sparing(focal) == 0 {
        p_case1
    } else {
        1.0 - p_case1
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub model: String,
    pub dimension: Dimension,
    pub dropout_rate: f64,
    pub n: usize,
    pub total_entropy: f64,
    pub conditional_entropy: f64,
    pub mutual_information: f64,
    pub mean_confidence: f64,
}

impl UncertaintySummary {
    /// Build from focal-oriented probabilities `p` (for TE/CE/MI) and raw
    /// case-1 probabilities `p1` (for confidence).
    pub fn from_samples(
        model: &str,
        dimension: Dimension,
        dropout_rate: f64,
        focal: &[f64],
        p1: &[f64],
    ) -> Result<Self> {
        let samples = focal
            .iter()
            .map(|p| ProbSample::new(*p))
            .collect::<Result<Vec<_>>>()?;
        let d = decompose(&samples)?;
        if p1.is_empty() {
            return Err(Error::Empty("confidence samples"));
        }
        let conf = p1
            .iter()
            .map(|p| confidence(*p, 1.0 - *p))
            .collect::<Result<Vec<_>>>()?;
        Ok(UncertaintySummary {
            model: model.to_string(),
            dimension,
            dropout_rate,
            n: d.n,
            total_entropy: d.total_entropy,
            conditional_entropy: d.conditional_entropy,
            mutual_information: d.mutual_information,
            mean_confidence: conf.iter().sum::<f64>() / conf.len() as f64,
        })
    }
}

/// One summary per dimension present among isolated scenarios. Records
/// for mixed or unknown scenarios are skipped.
pub fn summarize_records(
    records: &[ChoiceRecord],
    scenarios: &[Scenario],
    model: &str,
    dropout_rate: f64,
) -> Result<Vec<UncertaintySummary>> {
    let by_id: HashMap<&str, &Scenario> = scenarios.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let Some(s) = by_id.get(r.scenario_id.as_str()) else {
            continue;
        };
        let (Some(dim), Some(f)) = (s.dimension(), focal_probability(s, r.p1)) else {
            continue;
        };
        let g = groups.entry(dim.index()).or_default();
        g.0.push(f);
        g.1.push(r.p1);
    }
    groups
        .into_iter()
        .map(|(i, (focal, p1))| {
            UncertaintySummary::from_samples(model, Dimension::ALL[i], dropout_rate, &focal, &p1)
        })
        .collect()
}

pub const SUMMARY_CSV_HEADER: &str =
    "model,dimension,dropout,n,total_entropy,conditional_entropy,mutual_information,mean_confidence";

pub fn summaries_to_csv(rows: &[UncertaintySummary]) -> String {
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.12},{:.12},{:.12},{:.12}",
            r.model,
            r.dimension,
            r.dropout_rate,
            r.n,
            r.total_entropy,
            r.conditional_entropy,
            r.mutual_information,
            r.mean_confidence
        );
    }
    out
}

pub fn summaries_from_csv(text: &str) -> Result<Vec<UncertaintySummary>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SUMMARY_CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!(
                "unexpected summary header {other:?}"
            )))
        }
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Parse(format!("summary row `{l}`")));
            }
            Ok(UncertaintySummary {
                model: f[0].to_string(),
                dimension: f[1].parse()?,
                dropout_rate: num(f[2])?,
                n: f[3]
                    .parse()
                    .map_err(|e| Error::Parse(format!("n `{}`: {e}", f[3])))?,
                total_entropy: num(f[4])?,
                conditional_entropy: num(f[5])?,
                mutual_information: num(f[6])?,
                mean_confidence: num(f[7])?,
            })
        })
        .collect()
}
