mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{linear_model, seizure_contract_builtin, Fixture, N_FEATURES};
use mlguard::contract::ActionKind;
use mlguard::guard::{
    builtin_predict, AdapterError, BuiltinLinear, ExternalHttp, HttpClient, JsonlSink, MemorySink,
    NullSink, Predictor, ReportKind, Status, ViolationReport,
};
use mlguard::harness::{synth_dataset, Distribution};
use mlguard::{build_bundle, load_bundle, FsResolver, Guard, GuardBundle, RecordBatch, Value};

struct Counting {
    inner: BuiltinLinear,
    calls: Arc<AtomicUsize>,
}

impl Predictor for Counting {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.predict(x)
    }

    fn classes(&self) -> Option<&[String]> {
        self.inner.classes()
    }
}

/// Returns fixed, deliberately non-normalised rows.
struct Constant(Vec<f64>);

impl Predictor for Constant {
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, AdapterError> {
        Ok(vec![self.0.clone(); x.len()])
    }
}

fn bundle_for(contract: &str) -> GuardBundle {
    let fx = Fixture::new(contract, 2000, 11);
    let out = fx.path("bundle");
    build_bundle(
        &mlguard::parse_contract(contract).unwrap(),
        &FsResolver::new(fx.root()),
        3,
        &out,
    )
    .unwrap();
    load_bundle(&out).unwrap()
}

fn clean_batch(seed: u64) -> RecordBatch {
    synth_dataset(100, N_FEATURES, Distribution::StandardNormal, seed)
}

fn drifted_batch(seed: u64) -> RecordBatch {
    let mut b = clean_batch(seed);
    for row in b.rows_mut() {
        for v in row.iter_mut() {
            *v = Value::Real(v.as_f64().unwrap() + 3.0);
        }
    }
    b
}

fn counting_guard(bundle: GuardBundle, sink: Arc<MemorySink>) -> (Guard, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    let predictor = Counting {
        inner: linear_model(),
        calls: calls.clone(),
    };
    (Guard::with_predictor(bundle, Box::new(predictor), sink).unwrap(), calls)
}

fn bits(p: &[Vec<f64>]) -> Vec<Vec<u64>> {
    p.iter().map(|r| r.iter().map(|x| x.to_bits()).collect()).collect()
}

#[test]
fn schema_exception_skips_the_model() {
    let sink = Arc::new(MemorySink::new());
    let (guard, calls) = counting_guard(bundle_for(&seizure_contract_builtin()), sink.clone());
    let mut batch = clean_batch(1);
    batch.rows_mut()[5][2] = Value::Str("electrode-off".into());
    let out = guard.predict(&batch).unwrap();
    assert_eq!(out.status, Status::Rejected);
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    assert!(out.predictions.is_none());
    assert_eq!(out.rejections.len(), 1);
    assert_eq!(out.rejections[0].condition_name, "Schema_Matches");
    assert_eq!(out.rejections[0].action_taken, ActionKind::Exception);
    // The detector cannot score a string cell, so it reports too.
    let names: Vec<String> = sink.records().into_iter().map(|r| r.condition_name).collect();
    assert_eq!(names, ["Distribution_Matches", "Schema_Matches"]);
}

#[test]
fn missing_column_is_rejected() {
    let sink = Arc::new(MemorySink::new());
    let (guard, calls) = counting_guard(bundle_for(&seizure_contract_builtin()), sink);
    let mut batch = clean_batch(2);
    batch.drop_column("f_03").unwrap();
    let out = guard.predict(&batch).unwrap();
    assert_eq!(out.status, Status::Rejected);
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn drift_with_log_warning_leaves_predictions_untouched() {
    let fx = Fixture::seizure_contract(5);
    let out_dir = fx.path("bundle");
    build_bundle(
        &mlguard::parse_contract(&seizure_contract_builtin()).unwrap(),
        &FsResolver::new(fx.root()),
        1,
        &out_dir,
    )
    .unwrap();
    let log = fx.path("violations.jsonl");
    let guard = Guard::new(
        load_bundle(&out_dir).unwrap(),
        Arc::new(JsonlSink::open(&log).unwrap()),
    )
    .unwrap();

    let batch = drifted_batch(9);
    let out = guard.predict(&batch).unwrap();
    let unguarded = builtin_predict(&linear_model(), &batch.to_numeric().unwrap().rows).unwrap();
    assert_eq!(out.status, Status::Ok);
    assert_eq!(bits(out.predictions.as_ref().unwrap()), bits(&unguarded));
    assert_eq!(out.warnings.len(), 1);
    assert_eq!(out.warnings[0].kind, ReportKind::Distribution);

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let record: ViolationReport = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(record.condition_name, "Distribution_Matches");
    assert_eq!(record.action_taken, ActionKind::LogWarning);
    assert!(record.p_violation >= 0.95);
}

#[test]
fn clean_batch_passes_silently() {
    let sink = Arc::new(MemorySink::new());
    let (guard, calls) = counting_guard(bundle_for(&seizure_contract_builtin()), sink.clone());
    // Median-based scoring makes a 100-row clean batch violate only rarely;
    // pick one that does not.
    let out = (0..20)
        .map(|s| guard.predict(&clean_batch(100 + s)).unwrap())
        .find(|o| o.warnings.is_empty())
        .expect("some clean batch passes");
    assert_eq!(out.status, Status::Ok);
    assert!(out.uncertainty.is_none());
    assert!(out.predictions.is_some());
    assert!(calls.load(Ordering::SeqCst) >= 1);
}

#[test]
fn propagate_uncertainty_attaches_the_report() {
    let contract = seizure_contract_builtin().replacen(
        "Action_if_violated: log_warning",
        "Action_if_violated: propagate_uncertainty",
        1,
    );
    let sink = Arc::new(MemorySink::new());
    let (guard, _) = counting_guard(bundle_for(&contract), sink.clone());
    let batch = drifted_batch(4);
    let out = guard.predict(&batch).unwrap();
    let unguarded = builtin_predict(&linear_model(), &batch.to_numeric().unwrap().rows).unwrap();
    assert_eq!(out.status, Status::Ok);
    assert!(out.warnings.is_empty());
    let u = out.uncertainty.as_ref().expect("uncertainty present");
    assert_eq!(u.violations.len(), 1);
    assert!(u.violations[0].propagated);
    assert_eq!(bits(out.predictions.as_ref().unwrap()), bits(&unguarded));
    assert_eq!(sink.records().len(), 1);

    let json = serde_json::to_value(&out).unwrap();
    assert!(json["uncertainty"]["violations"].is_array());
}

#[test]
fn bad_probabilities_suppress_predictions() {
    let bundle = bundle_for(&seizure_contract_builtin());
    let sink = Arc::new(MemorySink::new());
    let guard = Guard::with_predictor(bundle, Box::new(Constant(vec![0.7, 0.7])), sink.clone()).unwrap();
    let out = guard.predict(&clean_batch(3)).unwrap();
    assert_eq!(out.status, Status::Rejected);
    assert!(out.predictions.is_none());
    let post: Vec<&ViolationReport> = out
        .rejections
        .iter()
        .filter(|r| r.kind == ReportKind::Postcondition)
        .collect();
    assert_eq!(post.len(), 1);
    assert_eq!(post[0].condition_name, "Probabilities_sum_to_one");
}

#[test]
fn range_check_on_output_class() {
    let contract = seizure_contract_builtin().replace(
        "   Postconditions:\n",
        "   Postconditions:\n      Range_Check:\n         Dataset: output_stream\n         Field: seizure\n         Max: 0.01\n         Action_if_violated: log_warning\n",
    );
    let bundle = bundle_for(&contract);
    let sink = Arc::new(MemorySink::new());
    let guard = Guard::new(bundle, sink).unwrap();
    let out = guard.predict(&clean_batch(8)).unwrap();
    assert_eq!(out.status, Status::Ok);
    assert!(out
        .warnings
        .iter()
        .any(|w| w.condition_name == "Range_Check" && w.kind == ReportKind::Range));
}

#[test]
fn batch_ids_count_up() {
    let (guard, _) = counting_guard(bundle_for(&seizure_contract_builtin()), Arc::new(MemorySink::new()));
    let ids: Vec<u64> = (0..3)
        .map(|s| guard.predict(&clean_batch(s)).unwrap().batch_id)
        .collect();
    assert_eq!(ids, [0, 1, 2]);
}

#[test]
fn unsupported_model_format_is_an_error() {
    let fx = Fixture::new(common::SEIZURE_CONTRACT, 2000, 2);
    let out = fx.path("bundle");
    build_bundle(
        &mlguard::parse_contract(common::SEIZURE_CONTRACT).unwrap(),
        &FsResolver::new(fx.root()),
        0,
        &out,
    )
    .unwrap();
    let guard = Guard::new(load_bundle(&out).unwrap(), Arc::new(NullSink)).unwrap();
    let err = (0..20)
        .map(|s| guard.predict(&clean_batch(s)))
        .find_map(Result::err)
        .expect("the onnx model cannot run");
    assert!(err.to_string().contains("onnx"), "{err}");
}

// HTTP adapter against stub servers.

fn stub<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(usize, &str) -> (u16, String) + Send + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let addr = server.server_addr().to_ip().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            let _ = request.as_reader().read_to_string(&mut body);
            let (code, reply) = if request.url() == "/v1/predict" {
                handler(n, &body)
            } else {
                (404, "{}".to_string())
            };
            let _ = request.respond(tiny_http::Response::from_string(reply).with_status_code(code));
        }
    });
    (format!("http://{addr}"), hits)
}

fn constant_reply(body: &str, row: [f64; 2]) -> String {
    let req: serde_json::Value = serde_json::from_str(body).unwrap();
    let n = req["instances"].as_array().unwrap().len();
    serde_json::json!({ "probabilities": vec![row; n] }).to_string()
}

fn client(endpoint: String, timeout_ms: u64, retries: u32) -> HttpClient {
    HttpClient::new(ExternalHttp {
        endpoint,
        timeout_ms,
        retries,
    })
    .unwrap()
}

#[test]
fn http_adapter_returns_server_probabilities() {
    let (url, hits) = stub(|_, body| (200, constant_reply(body, [0.7, 0.3])));
    let c = client(url, 2000, 0);
    let p = c.predict(&[vec![1.0; 8], vec![2.0; 8]]).unwrap();
    assert_eq!(p, vec![vec![0.7, 0.3]; 2]);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn http_adapter_rejects_non_json() {
    let (url, _) = stub(|_, _| (200, "<html>oops</html>".into()));
    let err = client(url, 2000, 2).predict(&[vec![0.0; 8]]).unwrap_err();
    assert!(matches!(err, AdapterError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn http_adapter_rejects_wrong_row_count() {
    let (url, _) = stub(|_, _| (200, r#"{"probabilities": [[0.5, 0.5]]}"#.into()));
    let err = client(url, 2000, 0).predict(&[vec![0.0; 8], vec![0.0; 8]]).unwrap_err();
    assert!(matches!(err, AdapterError::MalformedResponse(_)), "{err:?}");
}

#[test]
fn http_adapter_retries_transient_failures() {
    let (url, hits) = stub(|n, body| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, constant_reply(body, [0.25, 0.75]))
        }
    });
    let p = client(url, 2000, 3).predict(&[vec![0.0; 8]]).unwrap();
    assert_eq!(p, vec![vec![0.25, 0.75]]);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn http_adapter_gives_up_after_retries() {
    let (url, hits) = stub(|_, _| (500, "down".into()));
    let err = client(url, 2000, 1).predict(&[vec![0.0; 8]]).unwrap_err();
    assert!(
        matches!(err, AdapterError::TransportFailure { attempts: 2, .. }),
        "{err:?}"
    );
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn http_adapter_times_out() {
    let (url, _) = stub(|_, body| {
        std::thread::sleep(Duration::from_millis(600));
        (200, constant_reply(body, [0.5, 0.5]))
    });
    let err = client(url, 100, 0).predict(&[vec![0.0; 8]]).unwrap_err();
    assert!(matches!(err, AdapterError::Timeout(100)), "{err:?}");
}

#[test]
fn unreachable_endpoint_is_a_transport_failure() {
    // Bind and drop to get a port nobody listens on.
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = client(format!("http://127.0.0.1:{port}"), 500, 0)
        .predict(&[vec![0.0; 8]])
        .unwrap_err();
    assert!(
        matches!(err, AdapterError::TransportFailure { attempts: 1, .. } | AdapterError::Timeout(_)),
        "{err:?}"
    );
}

#[test]
fn guard_over_http_matches_builtin() {
    let model = linear_model();
    let served = model.clone();
    let (url, _) = stub(move |_, body| {
        let req: serde_json::Value = serde_json::from_str(body).unwrap();
        let x: Vec<Vec<f64>> = serde_json::from_value(req["instances"].clone()).unwrap();
        let p = builtin_predict(&served, &x).unwrap();
        (200, serde_json::json!({ "probabilities": p }).to_string())
    });
    let bundle = bundle_for(&seizure_contract_builtin());
    let local = Guard::new(bundle.clone(), Arc::new(NullSink)).unwrap();
    let remote = Guard::with_predictor(bundle, Box::new(client(url, 2000, 0)), Arc::new(NullSink)).unwrap();
    for seed in 0..5 {
        let batch = if seed % 2 == 0 { clean_batch(seed) } else { drifted_batch(seed) };
        let a = local.predict(&batch).unwrap();
        let b = remote.predict(&batch).unwrap();
        assert_eq!(a.status, b.status);
        assert_eq!(a.warnings.len(), b.warnings.len());
        let (pa, pb) = (a.predictions.unwrap(), b.predictions.unwrap());
        for (ra, rb) in pa.iter().zip(&pb) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn guard_surfaces_adapter_failure() {
    let (url, _) = stub(|_, _| (200, "nope".into()));
    let bundle = bundle_for(&seizure_contract_builtin());
    let guard = Guard::with_predictor(bundle, Box::new(client(url, 2000, 0)), Arc::new(NullSink)).unwrap();
    let err = (0..20)
        .map(|s| guard.predict(&clean_batch(s)))
        .find_map(Result::err)
        .expect("a malformed response surfaces");
    assert!(err.to_string().contains("malformed"), "{err}");
}
