//! Properties checked by the fuzz targets. Each function takes raw bytes and
//! panics only if a property is violated. The workspace tests replay the
//! checked-in corpus through the same functions.

use dualloop_core::navigator::{clamp_budget, parse_action, sanitize_weights, GuardrailConfig, StateSummary};
use dualloop_core::scenarios::read_jsonl;
use dualloop_service::api::{parse_body, BudgetBody, GainsBody, NavigatorBody, PolicyBody};
use dualloop_service::backend::BackendSpec;
use dualloop_service::config::{RuntimeConfig, Trigger};

/// Model output through the parser and the guardrails.
pub fn llm_response(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    let Ok(action) = parse_action(&text) else { return };
    let cfg = GuardrailConfig::default();
    let n = action.weights.len();
    if n > 0 {
        let s = sanitize_weights(&action.weights, n).expect("length matches");
        let w = s.weights.as_slice();
        assert!(w.iter().all(|&x| x.is_finite() && x >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    let p = clamp_budget(action.p_total, 40.0, &cfg);
    assert!(p >= cfg.p_min && p <= cfg.p_max);
}

/// Rendered state summaries parse back after a re-render.
pub fn state_summary(data: &[u8]) {
    let text = String::from_utf8_lossy(data);
    if let Ok(summary) = StateSummary::parse(&text) {
        let rendered = summary.render();
        let again = StateSummary::parse(&rendered).expect("rendered summary parses");
        assert_eq!(again.render(), rendered);
    }
}

/// Valid configurations survive serialization unchanged.
pub fn runtime_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = text.parse::<Trigger>();
    let _ = text.parse::<BackendSpec>();
    if let Ok(cfg) = RuntimeConfig::from_toml_str(text) {
        let again = RuntimeConfig::from_toml_str(&cfg.to_toml_string()).expect("serialized config loads");
        assert_eq!(again, cfg);
    }
}

/// The first byte picks the body type; the rest is the request body.
pub fn api_body(data: &[u8]) {
    let Some((&kind, body)) = data.split_first() else { return };
    fn round_trip<T: serde::de::DeserializeOwned + serde::Serialize>(body: &[u8]) {
        if let Ok(v) = parse_body::<T>(body) {
            let bytes = serde_json::to_vec(&v).expect("body serializes");
            parse_body::<T>(&bytes).expect("serialized body parses");
        }
    }
    match kind % 4 {
        0 => round_trip::<PolicyBody>(body),
        1 => round_trip::<GainsBody>(body),
        2 => round_trip::<BudgetBody>(body),
        _ => round_trip::<NavigatorBody>(body),
    }
}

/// Telemetry logs read back without panicking.
pub fn telemetry_jsonl(data: &[u8]) {
    let _ = read_jsonl(data);
}
