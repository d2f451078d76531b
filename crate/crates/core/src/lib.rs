//! MLGuard: machine-checkable contracts for ML models.
//!
//! A contract (YAML) declares preconditions on the data fed to a model,
//! postconditions on its outputs, the validation models used to detect
//! probabilistic violations, and the action to take when a condition is
//! violated. The crate covers the whole pipeline:
//!
//! * [`contract`]: the contract language (parse, serialize, validate).
//! * [`schema`]: tabular schemas, `Schema_Matches` checks and inference.
//! * [`detectors`]: trained validation models and their calibration.
//! * [`bundle`]: deterministic guard bundles with content digests.
//! * [`guard`]: the runtime wrapper that enforces a bundle around a model.
//! * [`harness`]: replay of datasets with injected shifts.
//! * [`cli`]: the `mlguard` command line.

pub mod bundle;
pub mod cli;
pub mod contract;
pub mod data;
pub mod detectors;
pub mod guard;
pub mod harness;
pub mod resolve;
pub mod schema;

pub use bundle::{build_bundle, load_bundle, write_bundle, GuardBundle, Manifest};
pub use contract::{parse_contract, serialize_contract, validate_contract, ContractSpec};
pub use data::{NumericMatrix, RecordBatch, Value};
pub use detectors::{DetectorModel, Verdict};
pub use guard::{guard_predict, Guard, GuardedOutput};
pub use resolve::{FsResolver, ResourceKind, ResourceResolver};
pub use schema::SchemaDef;
