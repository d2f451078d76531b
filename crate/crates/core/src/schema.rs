//! Tabular schemas: loading, inference and the `Schema_Matches` check.
//!
//! Column order is not significant, names are. Integer values are accepted
//! where a real is declared; reals are never accepted as integers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{RecordBatch, Value};
use crate::resolve::{ResourceKind, ResourceResolver};

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("schema `{0}` not found")]
    NotFound(String),
    #[error("malformed schema `{locator}`: {reason}")]
    MalformedSchema { locator: String, reason: String },
    #[error("cannot infer a schema from an empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Real,
    Integer,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub dtype: Dtype,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

impl SchemaDef {
    /// Checks the structural invariants of a schema.
    pub fn validate(&self) -> Result<(), String> {
        if self.fields.is_empty() {
            return Err("schema declares no fields".into());
        }
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if !seen.insert(f.name.as_str()) {
                return Err(format!("duplicate field `{}`", f.name));
            }
            if let (Some(lo), Some(hi)) = (f.min, f.max) {
                if lo > hi {
                    return Err(format!("field `{}` has min {lo} > max {hi}", f.name));
                }
            }
            match (&f.dtype, &f.categories) {
                (Dtype::Categorical, None) => {
                    return Err(format!("categorical field `{}` has no categories", f.name))
                }
                (_, Some(c)) if c.is_empty() => {
                    return Err(format!("field `{}` has an empty category list", f.name))
                }
                (Dtype::Real | Dtype::Integer, Some(_)) => {
                    return Err(format!("numeric field `{}` declares categories", f.name))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema JSON")
    }
}

/// Parse and validate a schema document. `locator` only labels errors.
pub fn parse_schema(text: &str, locator: &str) -> Result<SchemaDef, SchemaError> {
    let malformed = |reason: String| SchemaError::MalformedSchema {
        locator: locator.to_string(),
        reason,
    };
    let schema: SchemaDef = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    schema.validate().map_err(malformed)?;
    Ok(schema)
}

pub fn load_schema(locator: &str, env: &dyn ResourceResolver) -> Result<SchemaDef, SchemaError> {
    let path = env
        .resolve(locator, ResourceKind::Schema)
        .ok_or_else(|| SchemaError::NotFound(locator.to_string()))?;
    let text =
        std::fs::read_to_string(&path).map_err(|_| SchemaError::NotFound(locator.to_string()))?;
    parse_schema(&text, locator)
}

/// Infer one field per column: integer if every value is an integer, real if
/// every value is numeric, categorical otherwise.
pub fn infer_schema(data: &RecordBatch) -> Result<SchemaDef, SchemaError> {
    if data.is_empty() {
        return Err(SchemaError::EmptyBatch);
    }
    let fields = data
        .columns()
        .iter()
        .map(|name| {
            let values: Vec<&Value> = data.column(name).expect("own column").collect();
            let all_int = values.iter().all(|v| matches!(v, Value::Int(_)));
            let all_num = values.iter().all(|v| v.is_numeric());
            if all_num {
                let nums = values.iter().filter_map(|v| v.as_f64());
                let (lo, hi) = nums.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                });
                FieldDef {
                    name: name.clone(),
                    dtype: if all_int { Dtype::Integer } else { Dtype::Real },
                    min: lo.is_finite().then_some(lo),
                    max: hi.is_finite().then_some(hi),
                    categories: None,
                }
            } else {
                FieldDef {
                    name: name.clone(),
                    dtype: Dtype::Categorical,
                    min: None,
                    max: None,
                    categories: Some(values.iter().map(|v| v.to_string()).collect()),
                }
            }
        })
        .collect();
    Ok(SchemaDef {
        name: "inferred".into(),
        fields,
        metadata: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationReason {
    MissingColumn,
    ExtraColumn,
    DtypeMismatch,
    OutOfRange,
    UnknownCategory,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    /// `None` for column-level violations.
    pub row: Option<usize>,
    pub column: String,
    pub reason: ViolationReason,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "{:?} at row {r} column `{}`", self.reason, self.column),
            None => write!(f, "{:?} column `{}`", self.reason, self.column),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaVerdict {
    pub ok: bool,
    pub violations: Vec<SchemaViolation>,
}

/// Check every cell of `data` against `schema`, reporting all violations.
pub fn check_schema(data: &RecordBatch, schema: &SchemaDef) -> SchemaVerdict {
    let mut violations = Vec::new();

    for field in &schema.fields {
        if data.column_index(&field.name).is_none() {
            violations.push(SchemaViolation {
                row: None,
                column: field.name.clone(),
                reason: ViolationReason::MissingColumn,
            });
        }
    }
    for col in data.columns() {
        if schema.field(col).is_none() {
            violations.push(SchemaViolation {
                row: None,
                column: col.clone(),
                reason: ViolationReason::ExtraColumn,
            });
        }
    }

    let checked: Vec<(usize, &FieldDef)> = schema
        .fields
        .iter()
        .filter_map(|f| data.column_index(&f.name).map(|i| (i, f)))
        .collect();
    for (r, row) in data.rows().iter().enumerate() {
        for &(i, field) in &checked {
            if let Some(reason) = check_cell(&row[i], field) {
                violations.push(SchemaViolation {
                    row: Some(r),
                    column: field.name.clone(),
                    reason,
                });
            }
        }
    }

    SchemaVerdict {
        ok: violations.is_empty(),
        violations,
    }
}

fn check_cell(value: &Value, field: &FieldDef) -> Option<ViolationReason> {
    match field.dtype {
        Dtype::Categorical => {
            let cats = field.categories.as_ref()?;
            (!cats.contains(&value.to_string())).then_some(ViolationReason::UnknownCategory)
        }
        Dtype::Integer | Dtype::Real => {
            let x = match (field.dtype, value) {
                (_, Value::Int(i)) => *i as f64,
                (Dtype::Real, Value::Real(x)) => *x,
                _ => return Some(ViolationReason::DtypeMismatch),
            };
            // Negated so that NaN counts as out of range.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            let below = field.min.is_some_and(|lo| !(x >= lo));
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            let above = field.max.is_some_and(|hi| !(x <= hi));
            (below || above).then_some(ViolationReason::OutOfRange)
        }
    }
}
