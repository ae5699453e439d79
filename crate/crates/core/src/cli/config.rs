//! Experiment specification files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env_model::{assert_regime, classify_regime, Family, IncrementLaw, RegimeClass, CLOSED_FORM_TOL, QUADRATURE_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeOverride {
    /// `strong`, `intermediate` or `weak`.
    pub kind: String,
    /// Tolerance on `|E[X e^X]|` when checking the asserted regime.
    #[serde(default = "default_override_tol")]
    pub tol: f64,
}

fn default_override_tol() -> f64 {
    QUADRATURE_TOL
}

fn default_samples() -> usize {
    100_000
}

fn default_output() -> PathBuf {
    PathBuf::from("bpire-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub target: String,
    pub law: Family,
    #[serde(default)]
    pub regime: Option<RegimeOverride>,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default = "default_samples", deserialize_with = "de_count")]
    pub n_samples: usize,
    #[serde(default, deserialize_with = "de_seed")]
    pub master_seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub format: Format,
    /// Clan index for the ratio targets.
    #[serde(default)]
    pub i: Option<usize>,
    /// Distance `n - i` for the fixed-`N` targets.
    #[serde(default, rename = "N")]
    pub big_n: Option<usize>,
    #[serde(default, deserialize_with = "de_opt_count")]
    pub inner: Option<usize>,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    /// Renewal-series horizon.
    #[serde(default, deserialize_with = "de_opt_count")]
    pub horizon: Option<usize>,
    /// Evaluation points for the harmonicity check.
    #[serde(default)]
    pub x_values: Option<Vec<f64>>,
    /// Number of environments for the oracle and bridge checks.
    #[serde(default)]
    pub envs: Option<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Int(i64),
    Float(f64),
    Text(String),
}

fn count_of(n: Num) -> std::result::Result<usize, String> {
    match n {
        Num::Int(v) if v >= 0 => Ok(v as usize),
        Num::Float(v) if v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 => Ok(v as usize),
        Num::Text(t) => t.trim().parse::<f64>().map_err(|e| e.to_string()).and_then(|v| count_of(Num::Float(v))),
        _ => Err("expected a non-negative integer".into()),
    }
}

fn de_count<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    count_of(Num::deserialize(d)?).map_err(serde::de::Error::custom)
}

fn de_opt_count<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<usize>, D::Error> {
    de_count(d).map(Some)
}

fn de_seed<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    match Num::deserialize(d)? {
        Num::Int(v) if v >= 0 => Ok(v as u64),
        Num::Text(t) => t.trim().parse::<u64>().map_err(serde::de::Error::custom),
        _ => Err(serde::de::Error::custom("seed must be an unsigned 64-bit integer")),
    }
}

/// TOML integers are signed; seeds above `i64::MAX` are quoted before parsing.
fn quote_large_seed(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    for line in text.lines() {
        let quoted = line.split_once('=').and_then(|(k, v)| {
            let v = v.split('#').next().unwrap_or("").trim();
            (k.trim() == "master_seed" && v.parse::<i64>().is_err() && v.parse::<u64>().is_ok())
                .then(|| format!("{} = \"{v}\"", k.trim_end()))
        });
        out.push_str(quoted.as_deref().unwrap_or(line));
        out.push('\n');
    }
    out
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let text = &quote_large_seed(text);
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config { field: "<file>".into(), message: e.to_string() })?;
        for key in ["target", "law"] {
            if !table.contains_key(key) {
                return Err(Error::Config { field: key.into(), message: "missing required field".into() });
            }
        }
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e: toml::de::Error| {
            let field = field_of(&e, text);
            Error::Config { field, message: e.message().to_string() }
        })?;
        spec.law.validate().map_err(|e| Error::Config { field: "law".into(), message: e.to_string() })?;
        if spec.n_samples < 2 {
            return Err(Error::Config { field: "n_samples".into(), message: "need at least 2 samples".into() });
        }
        if spec.n_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config { field: "n_values".into(), message: "must be strictly increasing".into() });
        }
        Ok(spec)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config { field: "<file>".into(), message: format!("{}: {e}", path.as_ref().display()) })?;
        Self::parse(&text)
    }

    /// The validated law. Laws violating the subcriticality constraints are
    /// reported as regime errors.
    pub fn increment_law(&self) -> Result<IncrementLaw> {
        IncrementLaw::new(self.law)
    }

    /// Classified regime, or the asserted one after checking it.
    pub fn regime_class(&self, law: &IncrementLaw) -> Result<RegimeClass> {
        match &self.regime {
            Some(o) => assert_regime(law, &o.kind, o.tol),
            None => classify_regime(law, CLOSED_FORM_TOL),
        }
    }
}

/// Best effort at naming the offending key of a deserialization error,
/// as `section.key` when the key sits inside a table.
fn field_of(e: &toml::de::Error, text: &str) -> String {
    let msg = e.message();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    let Some(span) = e.span() else { return "<file>".into() };
    let mut section = String::new();
    let mut offset = 0;
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        let end = offset + line.len() + 1;
        if span.start < end {
            if let Some((k, _)) = t.split_once('=') {
                let k = k.trim();
                return if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
            }
            return if section.is_empty() { format!("<byte {}>", span.start) } else { section };
        }
        offset = end;
    }
    "<file>".into()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
target = "T1_ratio"
n_values = [22, 42]
n_samples = 1e4
master_seed = 18446744073709551615
i = 2

[law]
family = "gaussian"
mu = -1.5
sigma2 = 1.0
"#;

    #[test]
    fn parses_a_full_spec() {
        let s = ExperimentSpec::parse(SPEC).unwrap();
        assert_eq!(s.n_samples, 10_000);
        assert_eq!(s.target, "T1_ratio");
        assert_eq!(s.law, Family::Gaussian { mu: -1.5, sigma2: 1.0 });
        assert_eq!(s.master_seed, u64::MAX);
        assert_eq!(s.format, Format::Csv);
        assert_eq!(s.i, Some(2));
    }

    #[test]
    fn missing_law_names_the_field() {
        let text = "target = \"T1_ratio\"\nn_values = [10]\n";
        match ExperimentSpec::parse(text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "law"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_values_are_config_errors() {
        let frac = SPEC.replace("1e4", "1.5");
        match ExperimentSpec::parse(&frac) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_samples"),
            other => panic!("{other:?}"),
        }
        let bad = SPEC.replace("1e4", "100").replace("sigma2 = 1.0", "sigma2 = -1.0");
        match ExperimentSpec::parse(&bad) {
            Err(Error::Config { field, .. }) => assert!(field.starts_with("law"), "{field}"),
            other => panic!("{other:?}"),
        }
        let typo = SPEC.replace("\ni = 2", "\nj = 2");
        match ExperimentSpec::parse(&typo) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "j"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn regime_override_is_checked() {
        let s = ExperimentSpec::parse(&format!("{}\n[regime]\nkind = \"weak\"\n", SPEC.replace("1e4", "100"))).unwrap();
        let law = s.increment_law().unwrap();
        assert!(matches!(s.regime_class(&law), Err(Error::WrongRegime { .. })));
    }
}
