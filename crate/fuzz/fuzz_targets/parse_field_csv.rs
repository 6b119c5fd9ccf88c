#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_core::torus_grid::{field_to_csv, parse_field_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(f) = parse_field_csv(text) {
        assert!(f.values().iter().all(|v| v.is_finite()));
        let back = parse_field_csv(&field_to_csv(&f)).expect("written field parses");
        assert_eq!(back.values(), f.values());
    }
});
