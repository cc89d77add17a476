#![no_main]

use earlygest::codec::{decode_video, encode_video};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = decode_video(data) {
        let bytes = encode_video(&v).expect("decoded video re-encodes");
        decode_video(&bytes).expect("re-encoded video decodes");
    }
});
