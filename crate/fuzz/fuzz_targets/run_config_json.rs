//! Fuzz the run-configuration parser: validation must reject without
//! panicking, and accepted configs must expose consistent derived values.

#![no_main]

use libfuzzer_sys::fuzz_target;
use remest_cli::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = RunConfig::from_json(text) {
        assert!(!config.kappas().is_empty());
        // Inline system models must construct or error cleanly; path
        // sources are not dereferenced here (no filesystem in the fuzzer).
        if matches!(config.system, remest_cli::config::SystemSource::Inline(_)) {
            if let Ok(model) = config.system_model() {
                let mdp = config.mdp_config(&model, config.mdp.kappa);
                let _ = mdp.validate();
                let _ = mdp.n_levels();
            }
        }
        let text = serde_json::to_string(&config).expect("serializes");
        let _ = RunConfig::from_json(&text).expect("round trip");
    }
});
