use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UndefinedTag {
    Undefined,
}

/// A metric value, or an explicit marker saying why there is none.
/// Serializes as a bare number or `{"value": "undefined", "reason": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Defined(f64),
    Undefined { value: UndefinedTag, reason: String },
}

impl MetricValue {
    pub fn undefined(reason: impl Into<String>) -> Self {
        MetricValue::Undefined {
            value: UndefinedTag::Undefined,
            reason: reason.into(),
        }
    }

    /// Non-finite results become undefined with `reason`.
    pub fn finite_or(v: f64, reason: impl Into<String>) -> Self {
        if v.is_finite() {
            MetricValue::Defined(v)
        } else {
            MetricValue::undefined(reason)
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined { .. } => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            MetricValue::Defined(_) => None,
            MetricValue::Undefined { reason, .. } => Some(reason),
        }
    }

    pub fn is_defined(&self) -> bool {
        matches!(self, MetricValue::Defined(_))
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            MetricValue::Defined(v) => MetricValue::Defined(f(v)),
            other => other,
        }
    }
}

impl From<f64> for MetricValue {
    fn from(v: f64) -> Self {
        MetricValue::finite_or(v, "non-finite value")
    }
}

impl<E: std::fmt::Display> From<std::result::Result<f64, E>> for MetricValue {
    fn from(r: std::result::Result<f64, E>) -> Self {
        match r {
            Ok(v) => v.into(),
            Err(e) => MetricValue::undefined(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFlag {
    PoorPlFit,
    InsufficientTail,
    NegativeMargin,
    DegenerateSpectrum,
    SigmaAtLowerBracket,
    SigmaAtUpperBracket,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        for v in [MetricValue::Defined(1.25), MetricValue::undefined("zero matrix")] {
            let s = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<MetricValue>(&s).unwrap(), v);
        }
        assert_eq!(
            serde_json::to_string(&MetricValue::undefined("x")).unwrap(),
            r#"{"value":"undefined","reason":"x"}"#
        );
    }

    #[test]
    fn non_finite_is_undefined() {
        assert!(!MetricValue::from(f64::NEG_INFINITY).is_defined());
        assert_eq!(MetricValue::from(2.0).value(), Some(2.0));
    }
}
