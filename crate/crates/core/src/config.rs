//! TOML experiment configuration.
//!
//! A config file holds one table per module (`[experiment]`, `[descent]`,
//! `[smad]`, …). Missing keys take the defaults of the selected experiment;
//! unknown keys are rejected with a suggestion.

use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::experiments::{ExperimentId, ExperimentSpec};

/// Common alternative spellings mapped to their canonical `section.key`.
const ALIASES: &[(&str, &str)] = &[
    ("stepsize", "descent.eta"),
    ("step_size", "descent.eta"),
    ("learning_rate", "descent.eta"),
    ("lr", "descent.eta"),
    ("step", "descent.eta"),
    ("k", "descent.inner_steps"),
    ("steps", "descent.inner_steps"),
    ("repetitions", "experiment.reps"),
    ("runs", "experiment.reps"),
    ("t", "experiment.horizon"),
    ("rounds", "experiment.horizon"),
    ("ar_order", "predictors.order"),
    ("lag", "predictors.order"),
    ("mixing", "smad.beta"),
    ("temperature", "smad.gamma"),
    ("risk_free_asset", "market.risk_free"),
];

fn defaults_table(id: ExperimentId) -> Result<Table> {
    match Value::try_from(ExperimentSpec::defaults(id)) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => unreachable!("a struct serializes to a table"),
        Err(e) => Err(Error::config("<defaults>", e.to_string())),
    }
}

fn suggest(section: Option<&str>, key: &str, defaults: &Table) -> Option<String> {
    let lower = key.to_ascii_lowercase();
    if let Some((_, target)) = ALIASES.iter().find(|(alias, _)| *alias == lower) {
        return Some((*target).to_string());
    }
    let mut candidates: Vec<String> = Vec::new();
    for (sec, body) in defaults {
        candidates.push(sec.clone());
        if let Value::Table(t) = body {
            candidates.extend(t.keys().map(|k| format!("{sec}.{k}")));
        }
    }
    // Right key in the wrong section.
    if let Some(hit) = candidates
        .iter()
        .find(|c| c.rsplit('.').next() == Some(lower.as_str()) && c.contains('.'))
    {
        return Some(hit.clone());
    }
    let score = |c: &String| {
        let leaf = c.rsplit('.').next().unwrap_or(c);
        let same_section = section.map_or(!c.contains('.'), |s| c.starts_with(&format!("{s}.")));
        (strsim::levenshtein(&lower, leaf), !same_section)
    };
    candidates
        .iter()
        .map(|c| (score(c), c))
        .filter(|((d, _), _)| *d <= 2.max(lower.len() / 3))
        .min()
        .map(|(_, c)| c.clone())
}

fn unknown(path: &str, section: Option<&str>, key: &str, defaults: &Table) -> Error {
    let message = match suggest(section, key, defaults) {
        Some(s) => format!("unknown key; did you mean `{s}`?"),
        None => "unknown key".to_string(),
    };
    Error::config(path, message)
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "a string",
        Value::Integer(_) => "an integer",
        Value::Float(_) => "a number",
        Value::Boolean(_) => "a boolean",
        Value::Datetime(_) => "a datetime",
        Value::Array(_) => "a list",
        Value::Table(_) => "a table",
    }
}

/// Checks `user` against the shape of `default`, widening integers to
/// floats where a float is expected. Returns the value to merge.
fn conform(path: &str, user: Value, default: &Value) -> Result<Value> {
    let mismatch = |user: &Value| {
        Error::config(
            path,
            format!("expected {}, found {}", type_name(default), type_name(user)),
        )
    };
    match (default, user) {
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::String(s)) if path.ends_with("seed") => Ok(Value::String(s)),
        (Value::Float(_), Value::String(s)) if path == "smad.gamma" && s == "auto" => {
            Ok(Value::String(s))
        }
        (Value::Array(d), Value::Array(items)) => {
            let Some(proto) = d.first() else {
                return Ok(Value::Array(items));
            };
            items
                .into_iter()
                .enumerate()
                .map(|(i, v)| conform(&format!("{path}[{i}]"), v, proto))
                .collect::<Result<Vec<_>>>()
                .map(Value::Array)
        }
        (d, u) if std::mem::discriminant(d) == std::mem::discriminant(&u) => Ok(u),
        (_, u) => Err(mismatch(&u)),
    }
}

/// Parses config text. The experiment comes from `[experiment] id` in the
/// text, else from `default_id`; the two must agree when both are given.
pub fn parse_config_str(text: &str, default_id: Option<ExperimentId>) -> Result<ExperimentSpec> {
    let user: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    let file_id = match user.get("experiment").and_then(|e| e.get("id")) {
        Some(Value::String(s)) => Some(
            Value::String(s.clone())
                .try_into::<ExperimentId>()
                .map_err(|_| {
                    Error::config(
                        "experiment.id",
                        format!("expected one of exp1, exp2, exp3, custom; found {s:?}"),
                    )
                })?,
        ),
        Some(other) => {
            return Err(Error::config(
                "experiment.id",
                format!("expected a string, found {}", type_name(other)),
            ))
        }
        None => None,
    };
    let id = match (file_id, default_id) {
        (Some(f), Some(d)) if f != d => {
            return Err(Error::config(
                "experiment.id",
                format!(
                    "file describes {} but the command runs {}",
                    f.as_str(),
                    d.as_str()
                ),
            ))
        }
        (Some(f), _) => f,
        (None, Some(d)) => d,
        (None, None) => {
            return Err(Error::config(
                "experiment.id",
                "missing; set it or use a run-exp command",
            ))
        }
    };

    let mut merged = defaults_table(id)?;
    let defaults = merged.clone();
    for (section, body) in user {
        let Some(Value::Table(target)) = merged.get_mut(&section) else {
            return Err(unknown(&section, None, &section, &defaults));
        };
        let Value::Table(body) = body else {
            return Err(Error::config(
                &section,
                format!("expected a table, found {}", type_name(&body)),
            ));
        };
        for (key, value) in body {
            let path = format!("{section}.{key}");
            let Some(default) = target.get(&key) else {
                return Err(unknown(&path, Some(&section), &key, &defaults));
            };
            let value = conform(&path, value, default)?;
            target.insert(key, value);
        }
    }
    let spec: ExperimentSpec = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(path: &Path, default_id: Option<ExperimentId>) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config(
            path.display().to_string(),
            format!("cannot read config: {e}"),
        )
    })?;
    parse_config_str(&text, default_id)
}

/// The full resolved configuration as TOML; parsing it back yields the same spec.
pub fn emit_config(spec: &ExperimentSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| Error::config("<emit>", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_only_config_takes_defaults() {
        let spec = parse_config_str("[experiment]\nseed = 7\n", Some(ExperimentId::Exp1)).unwrap();
        let mut expected = ExperimentSpec::defaults(ExperimentId::Exp1);
        expected.experiment.seed = 7;
        assert_eq!(spec, expected);
    }

    #[test]
    fn stepsize_suggests_eta() {
        for text in ["stepsize = 0.1\n", "[descent]\nstepsize = 0.1\n"] {
            let err = parse_config_str(text, Some(ExperimentId::Exp1)).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains("stepsize") && msg.contains("descent.eta"),
                "{msg}"
            );
        }
    }

    #[test]
    fn misplaced_and_misspelled_keys() {
        let err =
            parse_config_str("[experiment]\neta = 0.001\n", Some(ExperimentId::Exp1)).unwrap_err();
        assert!(err.to_string().contains("descent.eta"));
        let err = parse_config_str("[smad]\nbetta = 0.3\n", Some(ExperimentId::Exp2)).unwrap_err();
        assert!(err.to_string().contains("smad.beta"));
    }

    #[test]
    fn type_errors_name_the_key() {
        let err =
            parse_config_str("[descent]\neta = \"fast\"\n", Some(ExperimentId::Exp1)).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("descent.eta") && msg.contains("number"),
            "{msg}"
        );
    }

    #[test]
    fn integers_widen_to_floats() {
        let spec = parse_config_str("[domains]\nradius = 40\n", Some(ExperimentId::Exp1)).unwrap();
        assert_eq!(spec.domains.radius, 40.0);
    }

    #[test]
    fn large_eta_with_bound_checks_is_rejected() {
        let err = parse_config_str("[descent]\neta = 0.5\n", Some(ExperimentId::Exp1)).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "descent.eta"));
    }

    #[test]
    fn round_trip() {
        for id in [
            ExperimentId::Exp1,
            ExperimentId::Exp2,
            ExperimentId::Exp3,
            ExperimentId::Custom,
        ] {
            let mut spec = ExperimentSpec::defaults(id);
            spec.experiment.seed = u64::MAX;
            let text = emit_config(&spec).unwrap();
            assert_eq!(parse_config_str(&text, None).unwrap(), spec);
        }
    }

    #[test]
    fn gamma_auto() {
        let spec =
            parse_config_str("[smad]\ngamma = \"auto\"\n", Some(ExperimentId::Exp2)).unwrap();
        assert_eq!(spec.smad.gamma, crate::experiments::Gamma::Auto);
        assert_eq!(
            parse_config_str(&emit_config(&spec).unwrap(), None).unwrap(),
            spec
        );
        assert!(parse_config_str("[smad]\ngamma = \"fast\"\n", Some(ExperimentId::Exp2)).is_err());
        assert!(parse_config_str("[smad]\ngamma = \"auto\"\n", Some(ExperimentId::Exp3)).is_err());
    }

    #[test]
    fn id_conflicts() {
        let err = parse_config_str("[experiment]\nid = \"exp2\"\n", Some(ExperimentId::Exp1))
            .unwrap_err();
        assert!(err.to_string().contains("exp2"));
        assert!(parse_config_str("", None).is_err());
    }
}
