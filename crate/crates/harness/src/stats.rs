//! Rank correlation and sign tests for the trend experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};
use statrs::statistics::{OrderStatistics, RankTieBreaker};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    statrs::statistics::Data::new(v.to_vec()).ranks(RankTieBreaker::Average)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman's ρ with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanTest {
    pub rho: f64,
    pub n: usize,
    /// One-sided p-value for a trend in `direction`, from the t
    /// approximation `t = ρ·√((n−2)/(1−ρ²))`.
    pub p_value: f64,
    pub direction: Direction,
}

pub fn spearman_test(x: &[f64], y: &[f64], direction: Direction) -> SpearmanTest {
    let n = x.len();
    let rho = spearman(x, y);
    let signed = direction.sign() * rho;
    let p_value = if n < 3 {
        1.0
    } else if signed >= 1.0 {
        0.0
    } else {
        let t = signed * ((n as f64 - 2.0) / (1.0 - signed * signed)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 2.0).expect("n > 2");
        1.0 - dist.cdf(t)
    };
    SpearmanTest { rho, n, p_value, direction }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub agree: u64,
    pub total: u64,
    /// One-sided `P[X ≥ agree]` for `X ~ Binomial(total, ½)`.
    pub p_value: f64,
}

/// Sign test over non-zero per-unit statistics; ties are dropped.
pub fn sign_test(values: &[f64], direction: Direction) -> SignTest {
    let nonzero: Vec<f64> = values.iter().copied().filter(|v| *v != 0.0).collect();
    let total = nonzero.len() as u64;
    let agree = nonzero.iter().filter(|v| direction.sign() * **v > 0.0).count() as u64;
    let p_value = if total == 0 || agree == 0 {
        1.0
    } else {
        let b = Binomial::new(0.5, total).expect("valid binomial");
        1.0 - b.cdf(agree - 1)
    };
    SignTest { agree, total, p_value }
}
