use serde_yaml::{Mapping, Value};

use super::{Condition, ConditionKind, ContractSpec};

/// Render a contract as YAML using the document's key names.
///
/// Optional keys are only written when present, so `parse_contract` of the
/// output reproduces the input exactly.
pub fn serialize_contract(spec: &ContractSpec) -> String {
    let mut model = Mapping::new();
    put(&mut model, "Name", spec.model.name.as_str());
    put(&mut model, "Location", spec.model.location.as_str());
    if let Some(doc) = &spec.model.documentation {
        put(&mut model, "Documentation", doc.as_str());
    }

    let data: Vec<Value> = spec.data.iter().map(|d| Value::from(d.as_str())).collect();

    let mut contract = Mapping::new();
    contract.insert("Model".into(), Value::Mapping(model));
    contract.insert("Data".into(), Value::Sequence(data));
    contract.insert("Preconditions".into(), section(&spec.preconditions));
    contract.insert("Postconditions".into(), section(&spec.postconditions));

    let mut root = Mapping::new();
    root.insert("Contract".into(), Value::Mapping(contract));
    // Serializing a tree of strings, numbers and mappings cannot fail.
    serde_yaml::to_string(&Value::Mapping(root)).expect("contract YAML")
}

fn put(map: &mut Mapping, key: &str, value: impl Into<Value>) {
    map.insert(Value::from(key), value.into());
}

fn section(conditions: &[Condition]) -> Value {
    let mut map = Mapping::new();
    for c in conditions {
        map.insert(Value::from(c.name()), condition_body(&c.kind));
    }
    Value::Mapping(map)
}

fn condition_body(kind: &ConditionKind) -> Value {
    let mut m = Mapping::new();
    match kind {
        ConditionKind::DistributionMatches {
            dataset_a,
            dataset_b,
            validation_model,
            trigger,
            action,
        } => {
            put(&mut m, "DatasetA", dataset_a.as_str());
            put(&mut m, "DatasetB", dataset_b.as_str());
            let mut vm = Mapping::new();
            put(&mut vm, "Type", validation_model.family.as_str());
            if let Some(method) = validation_model.method {
                put(&mut vm, "Method", method.as_str());
            }
            m.insert("Validation_model".into(), Value::Mapping(vm));
            let mut t = Mapping::new();
            put(&mut t, "Confidence_threshold", trigger.confidence_threshold);
            m.insert("Trigger_conditions".into(), Value::Mapping(t));
            put(&mut m, "Action_if_violated", action.as_str());
        }
        ConditionKind::SchemaMatches {
            dataset,
            schema,
            action,
        } => {
            put(&mut m, "Dataset", dataset.as_str());
            put(&mut m, "Schema", schema.as_str());
            put(&mut m, "Action_if_violated", action.as_str());
        }
        ConditionKind::ProbabilitiesSumToOne {
            dataset,
            tolerance,
            action,
        } => {
            put(&mut m, "Dataset", dataset.as_str());
            if let Some(t) = tolerance {
                put(&mut m, "Tolerance", *t);
            }
            put(&mut m, "Action_if_violated", action.as_str());
        }
        ConditionKind::RangeCheck {
            dataset,
            field,
            min,
            max,
            action,
        } => {
            put(&mut m, "Dataset", dataset.as_str());
            put(&mut m, "Field", field.as_str());
            if let Some(lo) = min {
                put(&mut m, "Min", *lo);
            }
            if let Some(hi) = max {
                put(&mut m, "Max", *hi);
            }
            put(&mut m, "Action_if_violated", action.as_str());
        }
    }
    Value::Mapping(m)
}
