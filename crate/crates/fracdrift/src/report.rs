//! Structured pass/fail records.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Series,
    Mc,
    Quadrature,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Series => "series",
            Provenance::Mc => "mc",
            Provenance::Quadrature => "quadrature",
        }
    }
}

/// How the statistic is compared against the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// statistic ≤ tolerance
    AtMost,
    /// statistic ≥ tolerance
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    #[serde(with = "ext_float")]
    pub max: f64,
    #[serde(with = "ext_float")]
    pub min: f64,
    pub argmax: usize,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        let mut out: Option<Stats> = None;
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() {
                continue;
            }
            match &mut out {
                None => out = Some(Stats { max: v, min: v, argmax: i }),
                Some(s) => {
                    if v > s.max {
                        s.max = v;
                        s.argmax = i;
                    }
                    s.min = s.min.min(v);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_id: String,
    pub provenance: Provenance,
    pub params: Value,
    pub n_samples: usize,
    pub n_excluded: usize,
    pub lhs: Option<Stats>,
    pub rhs: Option<Stats>,
    #[serde(with = "ext_float::opt")]
    pub max_ratio: Option<f64>,
    #[serde(with = "ext_float::opt")]
    pub min_ratio: Option<f64>,
    pub argmax_sample: Value,
    #[serde(with = "ext_float::opt")]
    pub fitted_constant: Option<f64>,
    #[serde(with = "ext_float")]
    pub statistic: f64,
    #[serde(with = "ext_float")]
    pub tolerance: f64,
    pub comparison: Comparison,
    pub pass: bool,
    pub surrogate: bool,
    pub notes: Vec<String>,
}

impl CheckReport {
    pub fn new(check_id: impl Into<String>, provenance: Provenance) -> Self {
        CheckReport {
            check_id: check_id.into(),
            provenance,
            params: Value::Null,
            n_samples: 0,
            n_excluded: 0,
            lhs: None,
            rhs: None,
            max_ratio: None,
            min_ratio: None,
            argmax_sample: Value::Null,
            fitted_constant: None,
            statistic: f64::NAN,
            tolerance: f64::NAN,
            comparison: Comparison::AtMost,
            pass: false,
            surrogate: false,
            notes: Vec::new(),
        }
    }

    pub fn with_params(mut self, params: Value) -> Self {
        self.params = params;
        self
    }

    pub fn with_samples(mut self, n: usize, excluded: usize) -> Self {
        self.n_samples = n;
        self.n_excluded = excluded;
        self
    }

    pub fn with_sides(mut self, lhs: &[f64], rhs: &[f64]) -> Self {
        self.lhs = Stats::of(lhs);
        self.rhs = Stats::of(rhs);
        let ratios: Vec<f64> = lhs.iter().zip(rhs).map(|(l, r)| l / r).collect();
        if let Some(s) = Stats::of(&ratios) {
            self.max_ratio = Some(s.max);
            self.min_ratio = Some(s.min);
        }
        self
    }

    pub fn with_ratios(mut self, ratios: &[f64]) -> Self {
        if let Some(s) = Stats::of(ratios) {
            self.max_ratio = Some(s.max);
            self.min_ratio = Some(s.min);
        }
        self
    }

    pub fn with_argmax(mut self, sample: Value) -> Self {
        self.argmax_sample = sample;
        self
    }

    pub fn with_fitted(mut self, c: f64) -> Self {
        self.fitted_constant = Some(c);
        self
    }

    pub fn surrogate(mut self) -> Self {
        self.surrogate = true;
        self
    }

    pub fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    /// Records the decisive statistic and sets `pass` from it.
    pub fn decide(mut self, statistic: f64, tolerance: f64, comparison: Comparison) -> Self {
        self.statistic = statistic;
        self.tolerance = tolerance;
        self.comparison = comparison;
        self.pass = self.recompute_pass();
        self
    }

    /// `pass` as a pure function of the recorded statistic and tolerance.
    pub fn recompute_pass(&self) -> bool {
        if !self.statistic.is_finite() || self.tolerance.is_nan() {
            return false;
        }
        match self.comparison {
            Comparison::AtMost => self.statistic <= self.tolerance,
            Comparison::AtLeast => self.statistic >= self.tolerance,
        }
    }
}

/// JSON floats that keep ±inf and NaN as the strings "inf", "-inf", "nan".
pub mod ext_float {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Str("nan".into())
        } else if v > 0.0 {
            Repr::Str("inf".into())
        } else {
            Repr::Str("-inf".into())
        }
    }

    fn from_repr<E: Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "nan" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(E::custom(format!("not a float: {s}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod opt {
        use super::*;

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.map(to_repr).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_follows_statistic() {
        let r = CheckReport::new("x", Provenance::Quadrature).decide(0.5, 1.0, Comparison::AtMost);
        assert!(r.pass);
        let r = r.decide(f64::NAN, 1.0, Comparison::AtMost);
        assert!(!r.pass);
        let r = CheckReport::new("y", Provenance::Mc).decide(0.5, 1.0, Comparison::AtLeast);
        assert!(!r.pass);
    }

    #[test]
    fn non_finite_floats_roundtrip() {
        let r = CheckReport::new("z", Provenance::Series)
            .with_ratios(&[f64::INFINITY, 1.0])
            .decide(2.0, f64::INFINITY, Comparison::AtMost);
        let back: CheckReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let r = r.decide(f64::NAN, 1.0, Comparison::AtMost);
        let back: CheckReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert!(back.statistic.is_nan() && !back.pass);
    }
}
