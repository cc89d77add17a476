#![no_main]

use earlygest::config::RunConfig;
use earlygest::detector::parse_tau;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_tau(text);
    if let Ok(cfg) = RunConfig::from_toml_str(text) {
        let _ = cfg.validate();
        if let Ok(echo) = cfg.to_toml() {
            RunConfig::from_toml_str(&echo).expect("echoed config parses");
        }
    }
});
