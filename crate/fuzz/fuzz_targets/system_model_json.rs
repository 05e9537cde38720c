//! Fuzz the system-model JSON parser: arbitrary bytes must never panic,
//! and accepted models must survive a serialize/parse round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use remest::lin_gauss::SystemModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = SystemModel::from_json(text) {
        // Accepted models are fully validated; exercising the accessors and
        // the round trip must not panic.
        let _ = model.output_rank();
        let again = SystemModel::from_json(&model.to_json()).expect("round trip");
        assert_eq!(again.state_dim(), model.state_dim());
        assert_eq!(again.meas_dim(), model.meas_dim());
    }
});
