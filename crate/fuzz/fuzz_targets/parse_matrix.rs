#![no_main]

use libfuzzer_sys::fuzz_target;
use pagebench::parse_matrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(scenarios) = parse_matrix(text) {
            for s in &scenarios {
                let _ = s.validate();
                let _ = s.id();
            }
        }
    }
});
