//! Fuzz the solved-policy file parser.

#![no_main]

use libfuzzer_sys::fuzz_target;
use remest_cli::config::PolicyFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(policy) = PolicyFile::from_json(text) {
        assert_eq!(policy.thresholds_by_tau_plus.len(), policy.mdp.max_elapsed + 1);
        let text = serde_json::to_string(&policy).expect("serializes");
        let _ = PolicyFile::from_json(&text).expect("round trip");
    }
});
