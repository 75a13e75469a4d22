use std::path::PathBuf;

use serde_json::Value;
use toolgate::backend::wire;
use toolgate::backend::{Reply, ScriptedBackend};
use toolgate::bench::{fixture_report, load_corpus, Table2Fixture};
use toolgate::gate::{Classifier, Gate};
use toolgate::intent::IntentMap;
use toolgate::registry::{serialize_schema, ToolRegistry};
use toolgate::synthetic;
use toolgate::tokens::desk_count;
use std::sync::Arc;

fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(fixture(rel)).unwrap()
}

fn canonical(text: &str) -> String {
    serde_json::from_str::<Value>(text).unwrap().to_string()
}

#[test]
fn desk_token_fixture() {
    let cases: Vec<Value> = serde_json::from_str(&read("desk_tokens.json")).unwrap();
    assert!(cases.len() >= 20);
    for case in &cases {
        let text = case["text"].as_str().unwrap();
        assert_eq!(text.len() as u64, case["bytes"].as_u64().unwrap(), "{text:?}");
        assert_eq!(desk_count(text), case["tokens"].as_u64().unwrap(), "{text:?}");
    }
}

#[test]
fn schema_goldens() {
    let registry = Arc::new(ToolRegistry::load(fixture("synthetic/registry.json")).unwrap());
    let map = Arc::new(IntentMap::load(fixture("synthetic/intent_map.json")).unwrap());
    let gate = Gate::new(registry.clone(), map).unwrap();
    for (query, intent, golden) in [
        (
            "Which model to use for airplane detection?",
            synthetic::INFORMATION_SEEKING,
            "schema/information_seeking_gated.txt",
        ),
        (
            "Plot xview1 images around Tampa Bay, FL, USA",
            synthetic::LOAD_FILTER_PLOT,
            "schema/load_filter_plot_gated.txt",
        ),
    ] {
        let decision = gate.classify_intent("t", query, &Classifier::Rule, "m", 0.0).unwrap();
        assert_eq!(decision.intent_id, intent);
        let schema = gate.gate_toolset(&decision).unwrap();
        assert_eq!(serialize_schema(&schema), read(golden), "{intent}");
    }
    assert_eq!(serialize_schema(&registry.full_schema()), read("schema/full.txt"));
}

#[test]
fn wire_request_golden_round_trips() {
    let text = read("wire/request.json");
    let request = wire::parse_request(&text).unwrap();
    request.validate().unwrap();
    assert_eq!(request.messages.len(), 5);
    assert_eq!(request.messages[2].tool_calls.len(), 2);
    assert!(request.tools.is_gated());
    assert_eq!(wire::encode_request(&request), canonical(&text));
    assert_eq!(wire::parse_request(&wire::encode_request(&request)).unwrap(), request);
}

#[test]
fn wire_response_goldens_round_trip() {
    let text = read("wire/response_tool_calls.json");
    let response = wire::parse_response(&text).unwrap();
    match &response.reply {
        Reply::ToolCalls(calls) => {
            assert_eq!(calls.len(), 2);
            assert_eq!(calls[0].name, "wiki_cite");
            assert_eq!(calls[1].arguments, serde_json::json!({"term": "mAP"}));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(response.usage.unwrap().total(), 1290);
    assert_eq!(wire::encode_response(&response), canonical(&text));

    let text = read("wire/response_content.json");
    let response = wire::parse_response(&text).unwrap();
    assert_eq!(response.reply, Reply::Content("Use YOLOv8 for airplane detection.".into()));
    assert_eq!(wire::encode_response(&response), canonical(&text));
}

#[test]
fn table2_fixture_file() {
    let report = fixture_report(&Table2Fixture::load(fixture("table2.json")).unwrap()).unwrap();
    let reductions: Vec<f64> = report.ab.iter().map(|r| r.reduction_percent).collect();
    assert_eq!(reductions, [21.7, 24.6, 23.7, 22.6]);
    assert_eq!(report.max_reduction, Some(24.6));
}

#[test]
fn checked_in_synthetic_suite_matches_generator() {
    let suite = synthetic::default_suite();
    for (file, expected) in [
        ("registry.json", synthetic::pretty_json(&suite.registry.to_document())),
        ("intent_map.json", synthetic::pretty_json(&suite.intent_map)),
        ("intent_map_identity.json", synthetic::pretty_json(&suite.identity_map)),
        ("corpus.json", synthetic::pretty_json(&suite.corpus)),
        ("script.json", synthetic::pretty_json(&suite.script)),
        ("script_misclassified.json", synthetic::pretty_json(&suite.script_misclassified)),
    ] {
        assert_eq!(read(&format!("synthetic/{file}")), expected, "{file} is stale; rerun `bench synth`");
    }
    let registry = ToolRegistry::load(fixture("synthetic/registry.json")).unwrap();
    assert_eq!(load_corpus(fixture("synthetic/corpus.json"), &registry).unwrap(), suite.corpus);
    ScriptedBackend::load(fixture("synthetic/script.json")).unwrap();
}
