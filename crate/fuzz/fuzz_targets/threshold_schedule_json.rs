//! Fuzz the threshold-schedule JSON parser and the lookup methods.

#![no_main]

use libfuzzer_sys::fuzz_target;
use remest::etc_scheme::ThresholdSchedule;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(schedule) = ThresholdSchedule::from_json(text) {
        let _ = schedule.is_monotone_within_silence();
        for k in 1..8 {
            for tau in 0..8 {
                if let Ok(d) = schedule.delta_at(k, tau) {
                    assert!(d > 0.0);
                }
            }
        }
        let back = ThresholdSchedule::from_json(&schedule.to_json()).expect("round trip");
        assert_eq!(back, schedule);
    }
});
