//! Check records and the machine-readable verification report.
//!
//! Every check is phrased as an inequality `lhs ≤ rhs·(1 + rtol) + atol`; the
//! `passes` flag is derived from the recorded numbers and never set by hand.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// JSON has no infinities or NaN; those are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
mod real {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(E::custom(format!("not a number: {other:?}"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod map {
        use super::*;

        pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
            m.iter().map(|(k, v)| (k, to_repr(*v))).collect::<BTreeMap<_, _>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
            BTreeMap::<String, Repr>::deserialize(d)?
                .into_iter()
                .map(|(k, r)| Ok((k, from_repr(r)?)))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    #[serde(with = "real")]
    pub lhs: f64,
    #[serde(with = "real")]
    pub rhs: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Fitted constants and auxiliary measurements, keyed by name.
    #[serde(with = "real::map")]
    pub constants: BTreeMap<String, f64>,
    pub passes: bool,
    /// `rhs·(1 + rtol) + atol − lhs`; negative when the check fails.
    #[serde(with = "real")]
    pub margin: f64,
}

impl CheckEntry {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, rtol: f64, atol: f64) -> Self {
        let bound = rhs * (1.0 + rtol) + atol;
        let passes = lhs <= bound && lhs.is_finite() && !rhs.is_nan();
        Self {
            name: name.into(),
            lhs,
            rhs,
            rtol,
            atol,
            constants: BTreeMap::new(),
            passes,
            margin: bound - lhs,
        }
    }

    /// `lhs ≤ rhs` with no slack.
    pub fn exact(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self::new(name, lhs, rhs, 0.0, 0.0)
    }

    pub fn with(mut self, key: impl Into<String>, value: f64) -> Self {
        self.constants.insert(key.into(), value);
        self
    }

    /// Re-derives `passes` and `margin` from the stored numbers.
    pub fn is_consistent(&self) -> bool {
        let again = Self::new(self.name.clone(), self.lhs, self.rhs, self.rtol, self.atol);
        again.passes == self.passes
    }
}

/// A named collection of checks; `passes()` is the conjunction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn passes(&self) -> bool {
        self.entries.iter().all(|e| e.passes)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn constant(&self, entry: &str, key: &str) -> Option<f64> {
        self.entry(entry).and_then(|e| e.constants.get(key).copied())
    }
}

/// Aggregated output of a verification run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub metadata: BTreeMap<String, String>,
    pub checks: Vec<CheckReport>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.insert(key.into(), value.to_string());
    }

    pub fn add(&mut self, report: CheckReport) {
        self.checks.push(report);
    }

    pub fn passes(&self) -> bool {
        self.checks.iter().all(CheckReport::passes)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &CheckEntry)> {
        self.checks
            .iter()
            .flat_map(|c| c.entries.iter().map(move |e| (c.name.as_str(), e)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Metadata as `# key=value` lines, then columns
    /// `check,name,lhs,rhs,rtol,atol,passes,margin,constants`, where
    /// `constants` is `key=value` pairs joined by `;`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "check", "name", "lhs", "rhs", "rtol", "atol", "passes", "margin", "constants",
        ])?;
        for (check, e) in self.entries() {
            let constants = e
                .constants
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            w.write_record([
                check.to_string(),
                e.name.clone(),
                e.lhs.to_string(),
                e.rhs.to_string(),
                e.rtol.to_string(),
                e.atol.to_string(),
                e.passes.to_string(),
                e.margin.to_string(),
                constants,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_flag_follows_numbers() {
        assert!(CheckEntry::new("a", 1.0, 1.0, 0.0, 0.0).passes);
        assert!(!CheckEntry::new("b", 1.0 + 1e-9, 1.0, 0.0, 0.0).passes);
        assert!(CheckEntry::new("c", 1.0 + 1e-9, 1.0, 1e-6, 0.0).passes);
        assert!(CheckEntry::new("d", 1e-13, 0.0, 0.0, 1e-12).passes);
        assert!(!CheckEntry::new("e", f64::NAN, 1.0, 0.0, 0.0).passes);
        assert!(!CheckEntry::new("f", f64::INFINITY, f64::INFINITY, 0.0, 0.0).passes);
    }

    #[test]
    fn json_roundtrip() {
        let mut r = VerificationReport::new();
        r.meta("seed", 42);
        let mut c = CheckReport::new("x");
        c.push(CheckEntry::exact("e", 0.5, 1.0).with("C", 2.0));
        r.add(c);
        let back = VerificationReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(back.passes());
        assert!(back.entries().all(|(_, e)| e.is_consistent()));
    }

    #[test]
    fn non_finite_values_roundtrip() {
        let mut r = VerificationReport::new();
        let mut c = CheckReport::new("x");
        c.push(CheckEntry::exact("inf", 1.0, f64::INFINITY).with("nan", f64::NAN).with("neg", f64::NEG_INFINITY));
        c.push(CheckEntry::exact("nan", f64::NAN, 1.0));
        r.add(c);
        let json = r.to_json().unwrap();
        assert!(json.contains("\"inf\""));
        let back = VerificationReport::from_json(&json).unwrap();
        let e = &back.checks[0].entries;
        assert_eq!(e[0].rhs, f64::INFINITY);
        assert!(e[0].constants["nan"].is_nan());
        assert_eq!(e[0].constants["neg"], f64::NEG_INFINITY);
        assert!(e[1].lhs.is_nan() && !e[1].passes);
    }
}
