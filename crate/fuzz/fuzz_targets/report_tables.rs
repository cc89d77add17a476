#![no_main]

use earlygest::metrics::{parse_roc, parse_summary, parse_table, parse_trace, NTTD_HEADER};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_summary(text);
    let _ = parse_table(text, NTTD_HEADER);
    let _ = parse_roc(text);
    let _ = parse_trace(text);
});
