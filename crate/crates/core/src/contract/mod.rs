//! The ML contract meta-model and its YAML surface syntax.
//!
//! A contract document looks like this:
//!
//! ```yaml
//! Contract:
//!    Model:
//!       Name: seizure_detection_ml_model
//!       Location: /pretrained/seizure_model.onnx
//!    Data:
//!       - input_steam
//!       - /data/eeg_train
//!    Preconditions:
//!       Distribution_Matches:
//!          DatasetA: input_steam
//!          DatasetB: /data/eeg_train
//!          Validation_model:
//!             Type: out_of_distribution_detector
//!             Method: likelihood_ratios_for_ood
//!          Trigger_conditions:
//!             Confidence_threshold: 0.95
//!          Action_if_violated: log_warning
//! ```
//!
//! Key names are case-sensitive. Conditions keep their document order, which
//! is also the order in which the guard evaluates them.

mod parse;
mod serialize;
mod validate;

use std::fmt;
use std::str::FromStr;

pub use parse::{parse_contract, ParseError, ParseErrorKind, ParseIssue};
pub use serialize::serialize_contract;
pub use validate::{validate_contract, ModelLocation};

/// Default tolerance of `Probabilities_sum_to_one` when `Tolerance` is absent.
pub const DEFAULT_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub model: ModelRef,
    pub data: Vec<DataRef>,
    pub preconditions: Vec<Condition>,
    pub postconditions: Vec<Condition>,
}

impl ContractSpec {
    /// Preconditions followed by postconditions, each tagged with its section.
    pub fn conditions(&self) -> impl Iterator<Item = (Section, &Condition)> {
        self.preconditions
            .iter()
            .map(|c| (Section::Preconditions, c))
            .chain(self.postconditions.iter().map(|c| (Section::Postconditions, c)))
    }

    pub fn declares(&self, id: &DataRef) -> bool {
        self.data.iter().any(|d| d == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    Preconditions,
    Postconditions,
}

impl Section {
    pub fn key(self) -> &'static str {
        match self {
            Section::Preconditions => "Preconditions",
            Section::Postconditions => "Postconditions",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRef {
    pub name: String,
    pub location: String,
    pub documentation: Option<String>,
}

/// A stream name (`input_steam`) or a filesystem-style dataset path
/// (`/data/eeg_train`). Compared by exact string equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataRef(pub String);

impl DataRef {
    pub fn new(id: impl Into<String>) -> Self {
        DataRef(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Path-like ids (containing `/`) name materializable datasets; anything
    /// else is a runtime stream.
    pub fn is_dataset_path(&self) -> bool {
        self.0.contains('/')
    }
}

impl fmt::Display for DataRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One named condition. The name is the condition-kind key from the document.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub kind: ConditionKind,
}

impl Condition {
    pub fn name(&self) -> &'static str {
        self.kind.key()
    }

    pub fn action(&self) -> ActionKind {
        match &self.kind {
            ConditionKind::DistributionMatches { action, .. }
            | ConditionKind::SchemaMatches { action, .. }
            | ConditionKind::ProbabilitiesSumToOne { action, .. }
            | ConditionKind::RangeCheck { action, .. } => *action,
        }
    }

    /// Every data id the condition reads, in key order.
    pub fn data_refs(&self) -> Vec<&DataRef> {
        match &self.kind {
            ConditionKind::DistributionMatches {
                dataset_a,
                dataset_b,
                ..
            } => vec![dataset_a, dataset_b],
            ConditionKind::SchemaMatches { dataset, .. }
            | ConditionKind::ProbabilitiesSumToOne { dataset, .. }
            | ConditionKind::RangeCheck { dataset, .. } => vec![dataset],
        }
    }
}

impl From<ConditionKind> for Condition {
    fn from(kind: ConditionKind) -> Self {
        Condition { kind }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionKind {
    DistributionMatches {
        dataset_a: DataRef,
        dataset_b: DataRef,
        validation_model: ValidationModelSpec,
        trigger: TriggerConditions,
        action: ActionKind,
    },
    SchemaMatches {
        dataset: DataRef,
        schema: String,
        action: ActionKind,
    },
    ProbabilitiesSumToOne {
        dataset: DataRef,
        tolerance: Option<f64>,
        action: ActionKind,
    },
    RangeCheck {
        dataset: DataRef,
        field: String,
        min: Option<f64>,
        max: Option<f64>,
        action: ActionKind,
    },
}

impl ConditionKind {
    pub const DISTRIBUTION_MATCHES: &'static str = "Distribution_Matches";
    pub const SCHEMA_MATCHES: &'static str = "Schema_Matches";
    pub const PROBABILITIES_SUM_TO_ONE: &'static str = "Probabilities_sum_to_one";
    pub const RANGE_CHECK: &'static str = "Range_Check";

    pub const ALL_KEYS: [&'static str; 4] = [
        Self::DISTRIBUTION_MATCHES,
        Self::SCHEMA_MATCHES,
        Self::PROBABILITIES_SUM_TO_ONE,
        Self::RANGE_CHECK,
    ];

    pub fn key(&self) -> &'static str {
        match self {
            ConditionKind::DistributionMatches { .. } => Self::DISTRIBUTION_MATCHES,
            ConditionKind::SchemaMatches { .. } => Self::SCHEMA_MATCHES,
            ConditionKind::ProbabilitiesSumToOne { .. } => Self::PROBABILITIES_SUM_TO_ONE,
            ConditionKind::RangeCheck { .. } => Self::RANGE_CHECK,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationModelSpec {
    pub family: DetectorFamily,
    /// `None` when the document omits `Method`; see [`Self::effective_method`].
    pub method: Option<DetectorMethod>,
}

impl ValidationModelSpec {
    pub fn effective_method(&self) -> DetectorMethod {
        self.method.unwrap_or(DetectorMethod::LikelihoodRatio)
    }
}

/// Registered validation-model families (`Validation_model.Type`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectorFamily {
    OutOfDistribution,
}

impl DetectorFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            DetectorFamily::OutOfDistribution => "out_of_distribution_detector",
        }
    }
}

impl FromStr for DetectorFamily {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "out_of_distribution_detector" => Ok(DetectorFamily::OutOfDistribution),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorMethod {
    LikelihoodRatio,
    KolmogorovSmirnov,
    Mahalanobis,
}

impl DetectorMethod {
    pub const ALL: [DetectorMethod; 3] = [
        DetectorMethod::LikelihoodRatio,
        DetectorMethod::KolmogorovSmirnov,
        DetectorMethod::Mahalanobis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorMethod::LikelihoodRatio => "likelihood_ratios_for_ood",
            DetectorMethod::KolmogorovSmirnov => "kolmogorov_smirnov",
            DetectorMethod::Mahalanobis => "mahalanobis_distance",
        }
    }
}

impl FromStr for DetectorMethod {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        DetectorMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for DetectorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerConditions {
    /// Strictly inside (0, 1).
    pub confidence_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    LogWarning,
    Exception,
    PropagateUncertainty,
}

impl ActionKind {
    pub const ALL: [ActionKind; 3] = [
        ActionKind::LogWarning,
        ActionKind::Exception,
        ActionKind::PropagateUncertainty,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::LogWarning => "log_warning",
            ActionKind::Exception => "exception",
            ActionKind::PropagateUncertainty => "propagate_uncertainty",
        }
    }
}

impl FromStr for ActionKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        ActionKind::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or(())
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

/// A finding from [`validate_contract`], located by dotted key path.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct SpecDiagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl SpecDiagnostic {
    pub fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecDiagnostic {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        SpecDiagnostic {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for SpecDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}: {}", self.path, self.message)
    }
}

/// Dotted key path of a condition, e.g. `Contract.Preconditions.Schema_Matches`.
pub fn condition_path(section: Section, condition: &Condition) -> String {
    format!("Contract.{}.{}", section.key(), condition.name())
}
