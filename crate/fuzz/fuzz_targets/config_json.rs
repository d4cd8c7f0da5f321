#![no_main]

use libfuzzer_sys::fuzz_target;
use ntklab_cli::config::{parse_config_text, AssumptionConfig, BenignConfig, ConvergeConfig, MinEigConfig, RiskConfig};
use serde_json::Value;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(map) = parse_config_text(text) else { return };
    let v = Value::Object(map);
    let _ = serde_json::from_value::<BenignConfig>(v.clone());
    let _ = serde_json::from_value::<MinEigConfig>(v.clone());
    let _ = serde_json::from_value::<ConvergeConfig>(v.clone());
    let _ = serde_json::from_value::<AssumptionConfig>(v.clone());
    let _ = serde_json::from_value::<RiskConfig>(v);
});
