#![no_main]

use ftspe_cli::config::{Preset, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RunConfig::parse(text, None, None);
        if let Ok(c) = RunConfig::parse(text, Some(Preset::Paper72), None) {
            // Emitted configs must parse back to the same value.
            let again = RunConfig::parse(&c.emit(), None, None).expect("emitted config parses");
            assert_eq!(again.emit(), c.emit());
        }
    }
});
