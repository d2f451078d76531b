use super::{condition_path, ConditionKind, ContractSpec, Section, SpecDiagnostic};
use crate::resolve::{ResourceKind, ResourceResolver};
use crate::schema;

/// How the runtime will reach the guarded model, decided from `Location`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelLocation {
    BuiltinJson(String),
    Http(String),
    Onnx(String),
    Unknown(String),
}

impl ModelLocation {
    pub fn classify(location: &str) -> Self {
        let lower = location.to_ascii_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") {
            ModelLocation::Http(location.to_string())
        } else if lower.ends_with(".json") {
            ModelLocation::BuiltinJson(location.to_string())
        } else if lower.ends_with(".onnx") {
            ModelLocation::Onnx(location.to_string())
        } else {
            ModelLocation::Unknown(location.to_string())
        }
    }
}

/// Check a parsed contract against its environment. An empty result, or one
/// holding only warnings, means the contract can be compiled into a bundle.
pub fn validate_contract(spec: &ContractSpec, env: &dyn ResourceResolver) -> Vec<SpecDiagnostic> {
    let mut out = Vec::new();

    if spec.model.documentation.is_none() {
        out.push(SpecDiagnostic::warning(
            "Contract.Model.Documentation",
            "model has no documentation locator",
        ));
    }
    match ModelLocation::classify(&spec.model.location) {
        ModelLocation::BuiltinJson(loc) => {
            if env.resolve(&loc, ResourceKind::Model).is_none() {
                out.push(SpecDiagnostic::error(
                    "Contract.Model.Location",
                    format!("model file `{loc}` cannot be resolved"),
                ));
            }
        }
        ModelLocation::Http(_) => {}
        ModelLocation::Onnx(loc) => out.push(SpecDiagnostic::warning(
            "Contract.Model.Location",
            format!(
                "ONNX model `{loc}` is not loadable by the runtime; guarded predictions will fail \
                 with UnsupportedModelFormat (use a builtin .json model or an http(s) endpoint)"
            ),
        )),
        ModelLocation::Unknown(loc) => out.push(SpecDiagnostic::error(
            "Contract.Model.Location",
            format!("unsupported model locator `{loc}` (expected .json, .onnx or http(s)://)"),
        )),
    }

    for (section, condition) in spec.conditions() {
        let path = condition_path(section, condition);

        for id in condition.data_refs() {
            if !spec.declares(id) {
                out.push(SpecDiagnostic::error(
                    &path,
                    format!("dataset `{id}` is not declared under Contract.Data"),
                ));
            }
        }

        let placement_ok = !matches!(
            (&condition.kind, section),
            (ConditionKind::DistributionMatches { .. }, Section::Postconditions)
                | (ConditionKind::SchemaMatches { .. }, Section::Postconditions)
                | (ConditionKind::ProbabilitiesSumToOne { .. }, Section::Preconditions)
        );
        if !placement_ok {
            out.push(SpecDiagnostic::error(
                &path,
                format!(
                    "`{}` is not supported under {}",
                    condition.name(),
                    section.key()
                ),
            ));
        }

        match &condition.kind {
            ConditionKind::DistributionMatches { dataset_b, .. } => {
                if !dataset_b.is_dataset_path() {
                    out.push(SpecDiagnostic::error(
                        &path,
                        format!(
                            "training reference `{dataset_b}` is a stream id, not a materializable dataset"
                        ),
                    ));
                } else if env.resolve(dataset_b.as_str(), ResourceKind::Dataset).is_none() {
                    out.push(SpecDiagnostic::error(
                        &path,
                        format!("training dataset `{dataset_b}` cannot be resolved"),
                    ));
                }
            }
            ConditionKind::SchemaMatches { schema: loc, .. } => {
                if let Err(e) = schema::load_schema(loc, env) {
                    out.push(SpecDiagnostic::error(format!("{path}.Schema"), e.to_string()));
                }
            }
            ConditionKind::ProbabilitiesSumToOne { .. } | ConditionKind::RangeCheck { .. } => {}
        }
    }
    out
}
