#![no_main]

use earlygest::corpus::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = parse_manifest(data) {
        let _ = m.files();
    }
});
