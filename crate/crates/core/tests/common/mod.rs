#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mlguard::guard::BuiltinLinear;
use mlguard::harness::{synth_dataset, Distribution};
use mlguard::schema::{Dtype, FieldDef, SchemaDef};

pub const N_FEATURES: usize = 8;

/// The seizure-detection contract, verbatim.
pub const SEIZURE_CONTRACT: &str = "Contract:
   Model:
      Name: seizure_detection_ml_model
      Location: /pretrained/seizure_model.onnx
      Documentation: /doc/seizure_model_card.html
   Data:
      - input_steam
      - output_stream
      - /data/eeg_train
   Preconditions:
      Distribution_Matches:
         DatasetA: input_steam
         DatasetB: /data/eeg_train
         Validation_model:
            Type: out_of_distribution_detector
            Method: likelihood_ratios_for_ood
         Trigger_conditions:
            Confidence_threshold: 0.95
         Action_if_violated: log_warning
      Schema_Matches:
         Dataset: input_steam
         Schema: /schema/eeg-10-20-system-256hz
         Action_if_violated: exception
   Postconditions:
      Probabilities_sum_to_one:
         Dataset: output_stream
         Action_if_violated: exception
";

pub const MODEL_LOCATOR: &str = "/pretrained/seizure_model.json";

/// The seizure contract pointed at the builtin linear model shipped in the fixture.
pub fn seizure_contract_builtin() -> String {
    SEIZURE_CONTRACT.replace("/pretrained/seizure_model.onnx", MODEL_LOCATOR)
}

pub fn eeg_schema() -> SchemaDef {
    SchemaDef {
        name: "eeg-10-20-system-256hz".into(),
        fields: (0..N_FEATURES)
            .map(|j| FieldDef {
                name: format!("f_{j:02}"),
                dtype: Dtype::Real,
                min: None,
                max: None,
                categories: None,
            })
            .collect(),
        metadata: None,
    }
}

pub fn linear_model() -> BuiltinLinear {
    BuiltinLinear {
        weights: vec![
            (0..N_FEATURES).map(|j| 0.1 * (j as f64 + 1.0)).collect(),
            (0..N_FEATURES).map(|j| -0.05 * j as f64).collect(),
        ],
        bias: vec![0.1, -0.1],
        classes: vec!["no_seizure".into(), "seizure".into()],
    }
}

/// A resource root holding the contract, training data, schema and model.
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new(contract: &str, n_train: usize, seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for sub in ["data", "schema", "pretrained"] {
            std::fs::create_dir_all(root.join(sub)).unwrap();
        }
        std::fs::write(root.join("contract.yaml"), contract).unwrap();
        synth_dataset(n_train, N_FEATURES, Distribution::StandardNormal, seed)
            .write_csv_path(&root.join("data/eeg_train.csv"))
            .unwrap();
        std::fs::write(
            root.join("schema/eeg-10-20-system-256hz.json"),
            eeg_schema().to_json(),
        )
        .unwrap();
        std::fs::write(
            root.join("pretrained/seizure_model.json"),
            serde_json::to_string_pretty(&linear_model()).unwrap(),
        )
        .unwrap();
        Fixture { dir }
    }

    pub fn seizure_contract(seed: u64) -> Self {
        Self::new(&seizure_contract_builtin(), 2000, seed)
    }

    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn contract(&self) -> PathBuf {
        self.root().join("contract.yaml")
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root().join(rel)
    }
}

/// Every file below `dir` with its bytes, keyed by relative path.
pub fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_string_lossy().replace('\\', "/");
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
