use std::fmt;

use serde_yaml::{Mapping, Value};

use super::{
    ActionKind, Condition, ConditionKind, ContractSpec, DataRef, DetectorFamily, DetectorMethod,
    ModelRef, TriggerConditions, ValidationModelSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownConditionKind,
    UnknownAction,
    MissingRequiredField,
    ThresholdOutOfRange,
    UnknownKey,
    InvalidValue,
    UnknownValidationType,
    UnknownMethod,
}

impl ParseErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParseErrorKind::Syntax => "syntax_error",
            ParseErrorKind::UnknownConditionKind => "unknown_condition_kind",
            ParseErrorKind::UnknownAction => "unknown_action",
            ParseErrorKind::MissingRequiredField => "missing_required_field",
            ParseErrorKind::ThresholdOutOfRange => "threshold_out_of_range",
            ParseErrorKind::UnknownKey => "unknown_key",
            ParseErrorKind::InvalidValue => "invalid_value",
            ParseErrorKind::UnknownValidationType => "unknown_validation_type",
            ParseErrorKind::UnknownMethod => "unknown_method",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseIssue {
    pub kind: ParseErrorKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {}", self.kind.as_str(), self.path, self.message)
    }
}

/// All problems found in a contract document. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    pub issues: Vec<ParseIssue>,
}

impl ParseError {
    pub fn count(&self, kind: ParseErrorKind) -> usize {
        self.issues.iter().filter(|i| i.kind == kind).count()
    }

    pub fn first(&self) -> &ParseIssue {
        &self.issues[0]
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Parse a contract document. Every problem in the document is reported, not
/// just the first one.
pub fn parse_contract(text: &str) -> Result<ContractSpec, ParseError> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| ParseError {
        issues: vec![ParseIssue {
            kind: ParseErrorKind::Syntax,
            path: location_of(&e),
            message: e.to_string(),
        }],
    })?;
    let mut p = Parser::default();
    let spec = p.document(&doc);
    match spec {
        Some(spec) if p.issues.is_empty() => Ok(spec),
        _ => {
            if p.issues.is_empty() {
                p.push(ParseErrorKind::Syntax, "Contract", "document is not a contract");
            }
            Err(ParseError { issues: p.issues })
        }
    }
}

fn location_of(e: &serde_yaml::Error) -> String {
    match e.location() {
        Some(loc) => format!("line {} column {}", loc.line(), loc.column()),
        None => "<document>".to_string(),
    }
}

static EMPTY_MAPPING: std::sync::LazyLock<Mapping> = std::sync::LazyLock::new(Mapping::new);

#[derive(Default)]
struct Parser {
    issues: Vec<ParseIssue>,
}

/// A mapping view that tracks which keys were consumed so leftovers can be
/// reported as unknown.
struct Fields<'a> {
    map: &'a Mapping,
    path: String,
    used: Vec<&'a str>,
}

impl Parser {
    fn push(&mut self, kind: ParseErrorKind, path: impl Into<String>, message: impl Into<String>) {
        self.issues.push(ParseIssue {
            kind,
            path: path.into(),
            message: message.into(),
        });
    }

    fn fields<'a>(&mut self, value: &'a Value, path: &str) -> Option<Fields<'a>> {
        match value {
            Value::Mapping(map) => {
                for key in map.keys() {
                    if !key.is_string() {
                        self.push(
                            ParseErrorKind::InvalidValue,
                            path,
                            format!("non-string key {key:?}"),
                        );
                    }
                }
                Some(Fields {
                    map,
                    path: path.to_string(),
                    used: Vec::new(),
                })
            }
            // A key with all of its children removed; report the children
            // as missing rather than the shape as wrong.
            Value::Null => Some(Fields {
                map: &EMPTY_MAPPING,
                path: path.to_string(),
                used: Vec::new(),
            }),
            _ => {
                self.push(ParseErrorKind::InvalidValue, path, "expected a mapping");
                None
            }
        }
    }

    fn finish(&mut self, fields: Fields<'_>) {
        for key in fields.map.keys().filter_map(Value::as_str) {
            if !fields.used.contains(&key) {
                self.push(
                    ParseErrorKind::UnknownKey,
                    format!("{}.{key}", fields.path),
                    format!("unknown key `{key}`"),
                );
            }
        }
    }

    fn required<'a>(&mut self, f: &mut Fields<'a>, key: &'static str) -> Option<&'a Value> {
        let v = f.get(key);
        if v.is_none() {
            self.push(
                ParseErrorKind::MissingRequiredField,
                format!("{}.{key}", f.path),
                format!("missing required field `{key}`"),
            );
        }
        v
    }

    fn string(&mut self, value: &Value, path: &str) -> Option<String> {
        match value {
            Value::String(s) if !s.is_empty() => Some(s.clone()),
            Value::String(_) => {
                self.push(ParseErrorKind::InvalidValue, path, "must not be empty");
                None
            }
            _ => {
                self.push(ParseErrorKind::InvalidValue, path, "expected a string");
                None
            }
        }
    }

    fn number(&mut self, value: &Value, path: &str) -> Option<f64> {
        match value.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.push(ParseErrorKind::InvalidValue, path, "expected a finite number");
                None
            }
        }
    }

    fn req_string(&mut self, f: &mut Fields<'_>, key: &'static str) -> Option<String> {
        let v = self.required(f, key)?;
        self.string(v, &format!("{}.{key}", f.path))
    }

    fn opt_string(&mut self, f: &mut Fields<'_>, key: &'static str) -> Option<Option<String>> {
        match f.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.string(v, &format!("{}.{key}", f.path)).map(Some),
        }
    }

    fn opt_number(&mut self, f: &mut Fields<'_>, key: &'static str) -> Option<Option<f64>> {
        match f.get(key) {
            None | Some(Value::Null) => Some(None),
            Some(v) => self.number(v, &format!("{}.{key}", f.path)).map(Some),
        }
    }

    fn action(&mut self, f: &mut Fields<'_>) -> Option<ActionKind> {
        let path = format!("{}.Action_if_violated", f.path);
        let raw = self.req_string(f, "Action_if_violated")?;
        match raw.parse() {
            Ok(a) => Some(a),
            Err(()) => {
                self.push(
                    ParseErrorKind::UnknownAction,
                    path,
                    format!(
                        "unknown action `{raw}` (expected log_warning, exception or propagate_uncertainty)"
                    ),
                );
                None
            }
        }
    }

    fn document(&mut self, doc: &Value) -> Option<ContractSpec> {
        let mut top = self.fields(doc, "<document>")?;
        top.path.clear();
        let contract = match top.get("Contract") {
            Some(c) => c,
            None => {
                self.push(
                    ParseErrorKind::MissingRequiredField,
                    "Contract",
                    "missing required field `Contract`",
                );
                return None;
            }
        };
        self.finish(top);

        let mut c = self.fields(contract, "Contract")?;
        let model = self.required(&mut c, "Model").and_then(|m| self.model(m));
        let data = self.required(&mut c, "Data").and_then(|d| self.data(d));
        let pre = self.section(&mut c, "Preconditions");
        let post = self.section(&mut c, "Postconditions");
        self.finish(c);

        Some(ContractSpec {
            model: model?,
            data: data?,
            preconditions: pre?,
            postconditions: post?,
        })
    }

    fn model(&mut self, value: &Value) -> Option<ModelRef> {
        let mut f = self.fields(value, "Contract.Model")?;
        let name = self.req_string(&mut f, "Name");
        let location = self.req_string(&mut f, "Location");
        let documentation = self.opt_string(&mut f, "Documentation");
        self.finish(f);
        Some(ModelRef {
            name: name?,
            location: location?,
            documentation: documentation?,
        })
    }

    fn data(&mut self, value: &Value) -> Option<Vec<DataRef>> {
        let items = match value {
            Value::Null => return Some(Vec::new()),
            Value::Sequence(items) => items,
            _ => {
                self.push(ParseErrorKind::InvalidValue, "Contract.Data", "expected a list");
                return None;
            }
        };
        let mut out = Vec::with_capacity(items.len());
        let mut ok = true;
        for (i, item) in items.iter().enumerate() {
            match self.string(item, &format!("Contract.Data[{i}]")) {
                Some(s) => out.push(DataRef(s)),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn section(&mut self, c: &mut Fields<'_>, key: &'static str) -> Option<Vec<Condition>> {
        let path = format!("Contract.{key}");
        let value = match c.get(key) {
            None | Some(Value::Null) => return Some(Vec::new()),
            Some(v) => v,
        };
        let map = match value {
            Value::Mapping(m) => m,
            _ => {
                self.push(ParseErrorKind::InvalidValue, path, "expected a mapping of conditions");
                return None;
            }
        };
        let mut out = Vec::with_capacity(map.len());
        let mut ok = true;
        for (k, v) in map {
            let Some(name) = k.as_str() else {
                self.push(ParseErrorKind::InvalidValue, &path, format!("non-string key {k:?}"));
                ok = false;
                continue;
            };
            let cpath = format!("{path}.{name}");
            let kind = match name {
                ConditionKind::DISTRIBUTION_MATCHES => self.distribution_matches(v, &cpath),
                ConditionKind::SCHEMA_MATCHES => self.schema_matches(v, &cpath),
                ConditionKind::PROBABILITIES_SUM_TO_ONE => self.probabilities_sum(v, &cpath),
                ConditionKind::RANGE_CHECK => self.range_check(v, &cpath),
                other => {
                    self.push(
                        ParseErrorKind::UnknownConditionKind,
                        cpath,
                        format!("unknown condition kind `{other}`"),
                    );
                    None
                }
            };
            match kind {
                Some(kind) => out.push(Condition { kind }),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn data_ref(&mut self, f: &mut Fields<'_>, key: &'static str) -> Option<DataRef> {
        self.req_string(f, key).map(DataRef)
    }

    fn distribution_matches(&mut self, v: &Value, path: &str) -> Option<ConditionKind> {
        let mut f = self.fields(v, path)?;
        let dataset_a = self.data_ref(&mut f, "DatasetA");
        let dataset_b = self.data_ref(&mut f, "DatasetB");
        let validation_model = self
            .required(&mut f, "Validation_model")
            .and_then(|vm| self.validation_model(vm, &format!("{path}.Validation_model")));
        let trigger = self
            .required(&mut f, "Trigger_conditions")
            .and_then(|t| self.trigger(t, &format!("{path}.Trigger_conditions")));
        let action = self.action(&mut f);
        self.finish(f);
        Some(ConditionKind::DistributionMatches {
            dataset_a: dataset_a?,
            dataset_b: dataset_b?,
            validation_model: validation_model?,
            trigger: trigger?,
            action: action?,
        })
    }

    fn validation_model(&mut self, v: &Value, path: &str) -> Option<ValidationModelSpec> {
        let mut f = self.fields(v, path)?;
        let family = self.req_string(&mut f, "Type").and_then(|t| match t.parse() {
            Ok(fam) => Some(fam),
            Err(()) => {
                self.push(
                    ParseErrorKind::UnknownValidationType,
                    format!("{path}.Type"),
                    format!("unregistered validation model type `{t}`"),
                );
                None
            }
        });
        let method = self.opt_string(&mut f, "Method").and_then(|m| match m {
            None => Some(None),
            Some(m) => match m.parse::<DetectorMethod>() {
                Ok(method) => Some(Some(method)),
                Err(()) => {
                    self.push(
                        ParseErrorKind::UnknownMethod,
                        format!("{path}.Method"),
                        format!("unknown validation method `{m}`"),
                    );
                    None
                }
            },
        });
        self.finish(f);
        let family: DetectorFamily = family?;
        Some(ValidationModelSpec {
            family,
            method: method?,
        })
    }

    fn trigger(&mut self, v: &Value, path: &str) -> Option<TriggerConditions> {
        let mut f = self.fields(v, path)?;
        let key_path = format!("{path}.Confidence_threshold");
        let threshold = self
            .required(&mut f, "Confidence_threshold")
            .and_then(|t| self.number(t, &key_path));
        self.finish(f);
        let threshold = threshold?;
        if !(threshold > 0.0 && threshold < 1.0) {
            self.push(
                ParseErrorKind::ThresholdOutOfRange,
                key_path,
                format!("confidence threshold {threshold} is outside the open interval (0, 1)"),
            );
            return None;
        }
        Some(TriggerConditions {
            confidence_threshold: threshold,
        })
    }

    fn schema_matches(&mut self, v: &Value, path: &str) -> Option<ConditionKind> {
        let mut f = self.fields(v, path)?;
        let dataset = self.data_ref(&mut f, "Dataset");
        let schema = self.req_string(&mut f, "Schema");
        let action = self.action(&mut f);
        self.finish(f);
        Some(ConditionKind::SchemaMatches {
            dataset: dataset?,
            schema: schema?,
            action: action?,
        })
    }

    fn probabilities_sum(&mut self, v: &Value, path: &str) -> Option<ConditionKind> {
        let mut f = self.fields(v, path)?;
        let dataset = self.data_ref(&mut f, "Dataset");
        let tolerance = self.opt_number(&mut f, "Tolerance");
        let action = self.action(&mut f);
        self.finish(f);
        let tolerance = tolerance?;
        if let Some(t) = tolerance {
            if t <= 0.0 {
                self.push(
                    ParseErrorKind::InvalidValue,
                    format!("{path}.Tolerance"),
                    "tolerance must be positive",
                );
                return None;
            }
        }
        Some(ConditionKind::ProbabilitiesSumToOne {
            dataset: dataset?,
            tolerance,
            action: action?,
        })
    }

    fn range_check(&mut self, v: &Value, path: &str) -> Option<ConditionKind> {
        let mut f = self.fields(v, path)?;
        let dataset = self.data_ref(&mut f, "Dataset");
        let field = self.req_string(&mut f, "Field");
        let min = self.opt_number(&mut f, "Min");
        let max = self.opt_number(&mut f, "Max");
        let action = self.action(&mut f);
        self.finish(f);
        let (min, max) = (min?, max?);
        match (min, max) {
            (None, None) => {
                self.push(ParseErrorKind::InvalidValue, path, "Range_Check needs `Min` or `Max`");
                return None;
            }
            (Some(lo), Some(hi)) if lo > hi => {
                self.push(ParseErrorKind::InvalidValue, path, format!("Min {lo} exceeds Max {hi}"));
                return None;
            }
            _ => {}
        }
        Some(ConditionKind::RangeCheck {
            dataset: dataset?,
            field: field?,
            min,
            max,
            action: action?,
        })
    }
}

impl<'a> Fields<'a> {
    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        let v = self.map.get(key);
        if v.is_some() {
            self.used.push(key);
        }
        v
    }
}
