#![no_main]

use earlygest::model::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // Whatever decodes must survive a re-encode.
        let again = Checkpoint::decode(&ck.encode()).expect("re-encoded checkpoint decodes");
        assert_eq!(again.encode(), ck.encode());
        let _ = ck.to_network();
    }
});
