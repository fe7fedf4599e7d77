#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(set) = ftspe::io::parse_feature_csv(text) {
            let back = ftspe::io::parse_feature_csv(&ftspe::io::write_feature_csv(&set)).expect("round trip");
            assert_eq!(back.len(), set.len());
        }
    }
});
