//! Regression and two-sample statistics over uncertainty levels.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// A t statistic that may be a signed infinity (perfect fit).
///
/// Serializes finite values as JSON numbers and infinities as `"inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct TStat(pub f64);

impl TStat {
    pub fn is_perfect_fit(self) -> bool {
        self.0.is_infinite()
    }
}

impl std::fmt::Display for TStat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for TStat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for TStat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TStat(v)),
            Raw::Str(s) => match s.as_str() {
                "inf" | "+inf" => Ok(TStat(f64::INFINITY)),
                "-inf" => Ok(TStat(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!("bad t statistic {other:?}"))),
            },
        }
    }
}

/// Least-squares slope of `ys` against their index, with its t statistic.
///
/// Deviations are paired symmetrically around the mid index, so an all-equal
/// series gives a slope of exactly zero and reversing a series negates the
/// slope exactly. Zero residual variance yields a signed infinite t.
pub fn ols_index_slope(ys: &[f64]) -> Option<(f64, TStat)> {
    let n = ys.len();
    if n < 2 {
        return None;
    }
    let mid = (n as f64 - 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let dx = j as f64 - mid;
        sxy += dx * (ys[j] - ys[i]);
        sxx += 2.0 * dx * dx;
    }
    let slope = sxy / sxx;
    if slope == 0.0 {
        return Some((0.0, TStat(0.0)));
    }
    let mean = ys.iter().sum::<f64>() / n as f64;
    let ssr: f64 = ys
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let r = (y - mean) - slope * (i as f64 - mid);
            r * r
        })
        .sum();
    let scale = ys.iter().fold(1.0_f64, |m, y| m.max(y.abs()));
    let noise_floor = n as f64 * (64.0 * f64::EPSILON * scale).powi(2);
    if n == 2 || ssr <= noise_floor {
        return Some((slope, TStat(f64::INFINITY.copysign(slope))));
    }
    let se = (ssr / (n as f64 - 2.0) / sxx).sqrt();
    Some((slope, TStat(slope / se)))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided Welch t test of `a` against `b`. Both need two or more samples.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> WelchResult {
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_variance(a) / a.len() as f64, sample_variance(b) / b.len() as f64);
    let diff = ma - mb;
    let se2 = va + vb;
    if se2 == 0.0 {
        return if diff == 0.0 {
            WelchResult {
                t: 0.0,
                df: (a.len() + b.len() - 2) as f64,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                t: f64::INFINITY.copysign(diff),
                df: (a.len() + b.len() - 2) as f64,
                p_value: 0.0,
            }
        };
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2
        / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    let p_value = (2.0 * dist.sf(t.abs())).min(1.0);
    WelchResult { t, df, p_value }
}

/// Cohen's d of `treatment` relative to `reference`, over the pooled standard deviation.
pub fn cohens_d(treatment: &[f64], reference: &[f64]) -> f64 {
    let (n1, n2) = (treatment.len() as f64, reference.len() as f64);
    let pooled = (((n1 - 1.0) * sample_variance(treatment) + (n2 - 1.0) * sample_variance(reference))
        / (n1 + n2 - 2.0))
        .sqrt();
    let diff = mean(treatment) - mean(reference);
    if pooled == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(diff)
        }
    } else {
        diff / pooled
    }
}
