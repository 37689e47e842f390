//! Stored job descriptions with `${name}` placeholders, filled in at
//! submit time.

use std::collections::BTreeMap;

use enclave_core::jobqueue::JobDescription;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("template references undeclared parameter {0:?}")]
    Undeclared(String),
    #[error("missing value for parameter {0:?}")]
    Missing(String),
    #[error("unknown parameter {0:?}")]
    Unknown(String),
    #[error("unterminated placeholder in {0:?}")]
    Unterminated(String),
    #[error("substituted description is invalid: {0}")]
    Invalid(String),
}

/// The caller's user id; always available without being declared.
pub const OWNER_PARAM: &str = "owner";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub params: BTreeMap<String, Param>,
    /// A job description in JSON form; any string may hold placeholders.
    pub description: Value,
    #[serde(default)]
    pub created_by: Option<String>,
}

/// A declared parameter; without a default it must be given at submit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Param {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

impl Param {
    pub fn with_default(v: impl Into<String>) -> Self {
        Param { default: Some(v.into()) }
    }
}

fn placeholders(s: &str) -> Result<Vec<&str>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find("${") {
        let after = &rest[i + 2..];
        let end = after.find('}').ok_or_else(|| TemplateError::Unterminated(s.to_owned()))?;
        out.push(&after[..end]);
        rest = &after[end + 1..];
    }
    Ok(out)
}

fn walk_strings<'a>(v: &'a Value, f: &mut dyn FnMut(&'a str) -> Result<(), TemplateError>) -> Result<(), TemplateError> {
    match v {
        Value::String(s) => f(s),
        Value::Array(a) => a.iter().try_for_each(|x| walk_strings(x, f)),
        Value::Object(m) => m.values().try_for_each(|x| walk_strings(x, f)),
        _ => Ok(()),
    }
}

fn fill(v: &Value, values: &BTreeMap<String, String>) -> Value {
    match v {
        Value::String(s) => {
            // a string that is exactly one placeholder may become a number
            if let Some(name) = s.strip_prefix("${").and_then(|r| r.strip_suffix('}')).filter(|n| !n.contains('}')) {
                let raw = &values[name];
                if let Ok(n) = raw.parse::<serde_json::Number>() {
                    return Value::Number(n);
                }
                return Value::String(raw.clone());
            }
            let mut out = String::new();
            let mut rest = s.as_str();
            while let Some(i) = rest.find("${") {
                out.push_str(&rest[..i]);
                let after = &rest[i + 2..];
                let end = after.find('}').expect("checked by validate");
                out.push_str(&values[&after[..end]]);
                rest = &after[end + 1..];
            }
            out.push_str(rest);
            Value::String(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| fill(x, values)).collect()),
        Value::Object(m) => Value::Object(m.iter().map(|(k, x)| (k.clone(), fill(x, values))).collect()),
        other => other.clone(),
    }
}

impl Template {
    /// Every placeholder must be declared (or be `owner`).
    pub fn validate(&self) -> Result<(), TemplateError> {
        let declared = &self.params;
        walk_strings(&self.description, &mut |s| {
            for p in placeholders(s)? {
                if p != OWNER_PARAM && !declared.contains_key(p) {
                    return Err(TemplateError::Undeclared(p.to_owned()));
                }
            }
            Ok(())
        })
    }

    pub fn instantiate(&self, owner: &str, given: &BTreeMap<String, String>) -> Result<JobDescription, TemplateError> {
        self.validate()?;
        if let Some(k) = given.keys().find(|k| !self.params.contains_key(*k)) {
            return Err(TemplateError::Unknown(k.clone()));
        }
        let mut values = BTreeMap::new();
        for (name, spec) in &self.params {
            let v = given.get(name).or(spec.default.as_ref()).ok_or_else(|| TemplateError::Missing(name.clone()))?;
            values.insert(name.clone(), v.clone());
        }
        values.entry(OWNER_PARAM.to_owned()).or_insert_with(|| owner.to_owned());
        let filled = fill(&self.description, &values);
        serde_json::from_value(filled).map_err(|e| TemplateError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn tpl() -> Template {
        Template {
            name: "wordcount".into(),
            summary: String::new(),
            params: BTreeMap::from([("input".into(), Param::default()), ("hours".into(), Param::with_default("1"))]),
            description: json!({
                "owner": "${owner}",
                "queue": "prod",
                "inputs": ["${input}"],
                "script": "sleep ${hours}",
                "outputs": ["counts-${hours}h.out"],
                "max_walltime_secs": "${hours}"
            }),
            created_by: None,
        }
    }

    #[test]
    fn fills_placeholders_and_numbers() {
        let d = tpl().instantiate("ann", &BTreeMap::from([("input".into(), "wos/2016/a.dat".into())])).unwrap();
        assert_eq!(d.owner.as_str(), "ann");
        assert_eq!(d.script, "sleep 1");
        assert_eq!(d.outputs, vec!["counts-1h.out".to_string()]);
        assert_eq!(d.max_walltime_secs, 1);
        assert_eq!(d.inputs[0].to_string(), "wos/2016/a.dat");
    }

    #[test]
    fn rejects_missing_unknown_and_undeclared() {
        let t = tpl();
        assert_eq!(t.instantiate("a", &BTreeMap::new()), Err(TemplateError::Missing("input".into())));
        let extra = BTreeMap::from([("input".into(), "b/k".into()), ("x".into(), "1".into())]);
        assert_eq!(t.instantiate("a", &extra), Err(TemplateError::Unknown("x".into())));
        let mut bad = tpl();
        bad.description["script"] = json!("run ${nope}");
        assert_eq!(bad.validate(), Err(TemplateError::Undeclared("nope".into())));
        bad.description["script"] = json!("run ${open");
        assert!(matches!(bad.validate(), Err(TemplateError::Unterminated(_))));
    }

    #[test]
    fn bad_result_is_reported() {
        let mut t = tpl();
        t.description["queue"] = json!("${hours}");
        let r = t.instantiate("a", &BTreeMap::from([("input".into(), "b/k".into())]));
        assert!(matches!(r, Err(TemplateError::Invalid(_))));
    }
}
