//! Guard bundles: a contract compiled together with its trained detectors,
//! schemas and model adapter into a directory whose every file is pinned by
//! a SHA-256 digest in `manifest.json`.
//!
//! ```text
//! manifest.json
//! contract.yaml
//! adapter.json
//! WRAPPER.md
//! schemas/<locator>.json
//! detectors/<condition_name>.json
//! ```
//!
//! Builds are byte-for-byte reproducible: nothing time-dependent is written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contract::{
    parse_contract, serialize_contract, validate_contract, ConditionKind, ContractSpec,
    ModelLocation, SpecDiagnostic,
};
use crate::data::RecordBatch;
use crate::detectors::{train_detector_from_batch, DetectorError, DetectorModel, TrainConfig};
use crate::guard::{AdapterConfig, BuiltinLinear, ExternalHttp, DEFAULT_RETRIES, DEFAULT_TIMEOUT_MS};
use crate::resolve::{ResourceKind, ResourceResolver};
use crate::schema::{load_schema, parse_schema, SchemaDef};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const DIGEST_ALGORITHM: &str = "sha256";

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONTRACT_FILE: &str = "contract.yaml";
pub const ADAPTER_FILE: &str = "adapter.json";
pub const WRAPPER_FILE: &str = "WRAPPER.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryRole {
    Contract,
    Schema,
    Detector,
    ModelAdapterConfig,
    Documentation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub role: EntryRole,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub bundle_format_version: u32,
    pub digest_algorithm: String,
    pub contract_digest: String,
    /// Sorted by path.
    pub entries: Vec<ManifestEntry>,
    pub created_with_seed: u64,
    /// Digest of this document written with an empty `manifest_digest`.
    pub manifest_digest: String,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest JSON");
        s.push('\n');
        s
    }

    /// The value `manifest_digest` must hold.
    pub fn self_digest(&self) -> String {
        let blank = Manifest {
            manifest_digest: String::new(),
            ..self.clone()
        };
        sha256_hex(blank.to_json().as_bytes())
    }

    pub fn entry(&self, path: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.path == path)
    }
}

/// A verified, loaded bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardBundle {
    pub manifest: Manifest,
    pub contract: ContractSpec,
    /// Keyed by the contract's schema locator.
    pub schemas: BTreeMap<String, SchemaDef>,
    /// Keyed by condition name.
    pub detectors: BTreeMap<String, DetectorModel>,
    pub adapter: AdapterConfig,
}

impl GuardBundle {
    /// Every `Distribution_Matches` has a detector and every `Schema_Matches`
    /// a schema.
    pub fn check(&self) -> Result<(), String> {
        for (_, c) in self.contract.conditions() {
            match &c.kind {
                ConditionKind::DistributionMatches { .. } if !self.detectors.contains_key(c.name()) => {
                    return Err(format!("no detector for `{}`", c.name()));
                }
                ConditionKind::SchemaMatches { schema, .. } if !self.schemas.contains_key(schema) => {
                    return Err(format!("schema `{schema}` is not loaded"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("contract is invalid:\n{}", render(.0))]
    ValidationFailed(Vec<SpecDiagnostic>),
    #[error("training the detector for `{condition}` failed: {source}")]
    TrainingFailed {
        condition: String,
        #[source]
        source: DetectorError,
    },
    #[error("cannot read `{locator}`: {reason}")]
    ResourceFailure { locator: String, reason: String },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("refusing to overwrite {0}: not empty and not a bundle")]
    OutputOccupied(PathBuf),
}

fn render(diags: &[SpecDiagnostic]) -> String {
    diags
        .iter()
        .map(|d| format!("  {d}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("bundle entry `{0}` is missing")]
    MissingEntry(String),
    #[error("digest mismatch in bundle entry `{0}`")]
    DigestMismatch(String),
    #[error("unsupported bundle format version {0}")]
    VersionUnsupported(u32),
    #[error("malformed bundle entry `{path}`: {reason}")]
    MalformedEntry { path: String, reason: String },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Bundle path of the schema stored for `locator`.
pub fn schema_entry_path(locator: &str) -> String {
    let name: String = locator
        .trim_matches('/')
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    format!("schemas/{name}.json")
}

pub fn detector_entry_path(condition: &str) -> String {
    format!("detectors/{condition}.json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuildError + '_ {
    move |source| BuildError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn adapter_for(spec: &ContractSpec, env: &dyn ResourceResolver) -> Result<AdapterConfig, BuildError> {
    let fail = |reason: String| BuildError::ResourceFailure {
        locator: spec.model.location.clone(),
        reason,
    };
    Ok(match ModelLocation::classify(&spec.model.location) {
        ModelLocation::BuiltinJson(loc) => {
            let path = env
                .resolve(&loc, ResourceKind::Model)
                .ok_or_else(|| fail("not found".into()))?;
            let text = std::fs::read_to_string(&path).map_err(|e| fail(e.to_string()))?;
            AdapterConfig::BuiltinLinear(BuiltinLinear::from_json(&text).map_err(|e| fail(e.to_string()))?)
        }
        ModelLocation::Http(endpoint) => AdapterConfig::ExternalHttp(ExternalHttp {
            endpoint,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            retries: DEFAULT_RETRIES,
        }),
        ModelLocation::Onnx(location) | ModelLocation::Unknown(location) => {
            AdapterConfig::Unsupported { location }
        }
    })
}

fn wrapper_summary(spec: &ContractSpec, manifest_entries: &[(String, EntryRole)]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Guard for `{}`\n", spec.model.name);
    let _ = writeln!(s, "Model location: `{}`\n", spec.model.location);
    for (section, conditions) in [
        ("Preconditions", &spec.preconditions),
        ("Postconditions", &spec.postconditions),
    ] {
        let _ = writeln!(s, "## {section}\n");
        if conditions.is_empty() {
            let _ = writeln!(s, "None.\n");
            continue;
        }
        for c in conditions {
            let what = match &c.kind {
                ConditionKind::DistributionMatches {
                    dataset_a,
                    dataset_b,
                    validation_model,
                    trigger,
                    ..
                } => format!(
                    "`{dataset_a}` must match `{dataset_b}` ({}, violation at p >= {})",
                    validation_model.effective_method(),
                    trigger.confidence_threshold
                ),
                ConditionKind::SchemaMatches { dataset, schema, .. } => {
                    format!("`{dataset}` must conform to schema `{schema}`")
                }
                ConditionKind::ProbabilitiesSumToOne { dataset, tolerance, .. } => format!(
                    "rows of `{dataset}` must sum to 1 within {}",
                    tolerance.unwrap_or(crate::contract::DEFAULT_SUM_TOLERANCE)
                ),
                ConditionKind::RangeCheck { dataset, field, min, max, .. } => format!(
                    "`{dataset}.{field}` must lie in [{}, {}]",
                    min.map_or("-inf".to_string(), |v| v.to_string()),
                    max.map_or("+inf".to_string(), |v| v.to_string())
                ),
            };
            let _ = writeln!(s, "- **{}**: {what}; on violation: `{}`", c.name(), c.action());
        }
        s.push('\n');
    }
    let _ = writeln!(s, "## Files\n");
    for (path, role) in manifest_entries {
        let _ = writeln!(s, "- `{path}` ({})", serde_json::to_value(role).unwrap().as_str().unwrap());
    }
    s
}

/// Validate `spec`, train its detectors and write the bundle to `out`.
pub fn build_bundle(
    spec: &ContractSpec,
    env: &dyn ResourceResolver,
    seed: u64,
    out: &Path,
) -> Result<Manifest, BuildError> {
    let diags = validate_contract(spec, env);
    if diags.iter().any(SpecDiagnostic::is_error) {
        return Err(BuildError::ValidationFailed(
            diags.into_iter().filter(SpecDiagnostic::is_error).collect(),
        ));
    }

    // Everything is computed in memory first so a failed build leaves `out`
    // untouched.
    let adapter = adapter_for(spec, env)?;
    let mut schemas = BTreeMap::new();
    let mut detectors = BTreeMap::new();
    for (_, c) in spec.conditions() {
        match &c.kind {
            ConditionKind::SchemaMatches { schema, .. } => {
                let def = load_schema(schema, env).map_err(|e| BuildError::ResourceFailure {
                    locator: schema.clone(),
                    reason: e.to_string(),
                })?;
                schemas.insert(schema.clone(), def);
            }
            ConditionKind::DistributionMatches {
                dataset_b,
                validation_model,
                trigger,
                ..
            } => {
                let locator = dataset_b.as_str();
                let path = env.resolve(locator, ResourceKind::Dataset).ok_or_else(|| {
                    BuildError::ResourceFailure {
                        locator: locator.into(),
                        reason: "not found".into(),
                    }
                })?;
                let data = RecordBatch::read_csv_path(&path).map_err(|e| {
                    BuildError::ResourceFailure {
                        locator: locator.into(),
                        reason: e.to_string(),
                    }
                })?;
                let cfg = TrainConfig {
                    seed,
                    confidence: trigger.confidence_threshold,
                    ..TrainConfig::default()
                };
                let trained = train_detector_from_batch(validation_model, &data, &cfg).map_err(
                    |source| BuildError::TrainingFailed {
                        condition: c.name().into(),
                        source,
                    },
                )?;
                detectors.insert(c.name().to_string(), trained.model);
            }
            ConditionKind::ProbabilitiesSumToOne { .. } | ConditionKind::RangeCheck { .. } => {}
        }
    }
    write_parts(spec, &schemas, &detectors, &adapter, seed, out)
}

/// Write an in-memory bundle (for instance after recalibration) to `out`
/// with a fresh manifest.
pub fn write_bundle(bundle: &GuardBundle, out: &Path) -> Result<Manifest, BuildError> {
    bundle.check().map_err(|reason| BuildError::ResourceFailure {
        locator: CONTRACT_FILE.into(),
        reason,
    })?;
    write_parts(
        &bundle.contract,
        &bundle.schemas,
        &bundle.detectors,
        &bundle.adapter,
        bundle.manifest.created_with_seed,
        out,
    )
}

fn write_parts(
    spec: &ContractSpec,
    schemas: &BTreeMap<String, SchemaDef>,
    detectors: &BTreeMap<String, DetectorModel>,
    adapter: &AdapterConfig,
    seed: u64,
    out: &Path,
) -> Result<Manifest, BuildError> {
    let mut files: BTreeMap<String, (EntryRole, Vec<u8>)> = BTreeMap::new();
    files.insert(
        CONTRACT_FILE.into(),
        (EntryRole::Contract, serialize_contract(spec).into_bytes()),
    );
    files.insert(
        ADAPTER_FILE.into(),
        (EntryRole::ModelAdapterConfig, adapter.to_json().into_bytes()),
    );
    for (locator, def) in schemas {
        let mut text = def.to_json();
        text.push('\n');
        files.insert(schema_entry_path(locator), (EntryRole::Schema, text.into_bytes()));
    }
    for (name, model) in detectors {
        files.insert(
            detector_entry_path(name),
            (EntryRole::Detector, model.to_json().into_bytes()),
        );
    }

    let mut listed: Vec<(String, EntryRole)> =
        files.iter().map(|(p, (r, _))| (p.clone(), *r)).collect();
    listed.push((WRAPPER_FILE.into(), EntryRole::Documentation));
    listed.sort_by(|a, b| a.0.cmp(&b.0));
    files.insert(
        WRAPPER_FILE.into(),
        (EntryRole::Documentation, wrapper_summary(spec, &listed).into_bytes()),
    );

    let entries: Vec<ManifestEntry> = files
        .iter()
        .map(|(path, (role, bytes))| ManifestEntry {
            path: path.clone(),
            role: *role,
            digest: sha256_hex(bytes),
        })
        .collect();
    let mut manifest = Manifest {
        bundle_format_version: BUNDLE_FORMAT_VERSION,
        digest_algorithm: DIGEST_ALGORITHM.into(),
        contract_digest: sha256_hex(&files[CONTRACT_FILE].1),
        entries,
        created_with_seed: seed,
        manifest_digest: String::new(),
    };
    manifest.manifest_digest = manifest.self_digest();

    prepare_output(out)?;
    for (path, (_, bytes)) in &files {
        let target = out.join(path);
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&target, bytes).map_err(io_err(&target))?;
    }
    let target = out.join(MANIFEST_FILE);
    std::fs::write(&target, manifest.to_json()).map_err(io_err(&target))?;
    Ok(manifest)
}

/// Create `out`, or clear it when it holds a previous bundle.
fn prepare_output(out: &Path) -> Result<(), BuildError> {
    if out.exists() {
        let mut entries = std::fs::read_dir(out).map_err(io_err(out))?;
        let empty = entries.next().is_none();
        if !empty {
            if !out.join(MANIFEST_FILE).is_file() {
                return Err(BuildError::OutputOccupied(out.to_path_buf()));
            }
            std::fs::remove_dir_all(out).map_err(io_err(out))?;
        }
    }
    std::fs::create_dir_all(out).map_err(io_err(out))
}

/// Load a bundle, verifying every digest before anything is parsed.
pub fn load_bundle(dir: &Path) -> Result<GuardBundle, LoadError> {
    let read = |rel: &str| -> Result<Vec<u8>, LoadError> {
        let path = dir.join(rel);
        std::fs::read(&path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                LoadError::MissingEntry(rel.to_string())
            } else {
                LoadError::IoFailure { path, source }
            }
        })
    };
    let malformed = |path: &str, reason: String| LoadError::MalformedEntry {
        path: path.to_string(),
        reason,
    };

    let raw = read(MANIFEST_FILE)?;
    let text = std::str::from_utf8(&raw).map_err(|e| malformed(MANIFEST_FILE, e.to_string()))?;
    let manifest: Manifest =
        serde_json::from_str(text).map_err(|e| malformed(MANIFEST_FILE, e.to_string()))?;
    // The manifest is the root of trust; it must be exactly what a build
    // writes and carry its own digest, so that a changed byte is blamed on
    // the manifest rather than on the entry it describes.
    if manifest.to_json().as_bytes() != raw.as_slice() {
        return Err(malformed(MANIFEST_FILE, "not in canonical form".into()));
    }
    if manifest.self_digest() != manifest.manifest_digest {
        return Err(LoadError::DigestMismatch(MANIFEST_FILE.into()));
    }
    if manifest.bundle_format_version != BUNDLE_FORMAT_VERSION {
        return Err(LoadError::VersionUnsupported(manifest.bundle_format_version));
    }
    if manifest.digest_algorithm != DIGEST_ALGORITHM {
        return Err(malformed(
            MANIFEST_FILE,
            format!("unknown digest algorithm `{}`", manifest.digest_algorithm),
        ));
    }
    if !manifest.entries.windows(2).all(|w| w[0].path < w[1].path) {
        return Err(malformed(MANIFEST_FILE, "entries are not sorted by path".into()));
    }

    let mut contents: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    for entry in &manifest.entries {
        if entry.path.split('/').any(|c| c == ".." || c.is_empty()) {
            return Err(malformed(&entry.path, "path escapes the bundle".into()));
        }
        let bytes = read(&entry.path)?;
        if sha256_hex(&bytes) != entry.digest {
            return Err(LoadError::DigestMismatch(entry.path.clone()));
        }
        contents.insert(&entry.path, bytes);
    }
    let utf8 = |path: &str| -> Result<&str, LoadError> {
        let bytes = contents
            .get(path)
            .ok_or_else(|| LoadError::MissingEntry(path.to_string()))?;
        std::str::from_utf8(bytes).map_err(|e| malformed(path, e.to_string()))
    };

    let contract_bytes = contents
        .get(CONTRACT_FILE)
        .ok_or_else(|| LoadError::MissingEntry(CONTRACT_FILE.into()))?;
    if manifest.entry(CONTRACT_FILE).map(|e| e.digest.as_str()) != Some(manifest.contract_digest.as_str()) {
        return Err(malformed(MANIFEST_FILE, "contract digest disagrees with its entry".into()));
    }
    if sha256_hex(contract_bytes) != manifest.contract_digest {
        return Err(LoadError::DigestMismatch(CONTRACT_FILE.into()));
    }
    let contract = parse_contract(utf8(CONTRACT_FILE)?)
        .map_err(|e| malformed(CONTRACT_FILE, e.to_string()))?;
    let adapter: AdapterConfig = serde_json::from_str(utf8(ADAPTER_FILE)?)
        .map_err(|e| malformed(ADAPTER_FILE, e.to_string()))?;
    if let AdapterConfig::BuiltinLinear(m) = &adapter {
        m.check().map_err(|e| malformed(ADAPTER_FILE, e.to_string()))?;
    }

    let mut schemas = BTreeMap::new();
    let mut detectors = BTreeMap::new();
    for (_, c) in contract.conditions() {
        match &c.kind {
            ConditionKind::SchemaMatches { schema, .. } => {
                let path = schema_entry_path(schema);
                let def = parse_schema(utf8(&path)?, schema).map_err(|e| malformed(&path, e.to_string()))?;
                schemas.insert(schema.clone(), def);
            }
            ConditionKind::DistributionMatches { .. } => {
                let path = detector_entry_path(c.name());
                let model =
                    DetectorModel::from_json(utf8(&path)?).map_err(|e| malformed(&path, e.to_string()))?;
                detectors.insert(c.name().to_string(), model);
            }
            _ => {}
        }
    }

    let bundle = GuardBundle {
        manifest,
        contract,
        schemas,
        detectors,
        adapter,
    };
    bundle
        .check()
        .map_err(|reason| malformed(CONTRACT_FILE, reason))?;
    Ok(bundle)
}
