#![no_main]

use earlygest::codec::{decode_video, VideoReader};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(mut reader) = VideoReader::new(data) else { return };
    let mut frames = Vec::new();
    let streamed_ok = loop {
        match reader.next_frame() {
            Ok(Some(f)) => frames.push(f),
            Ok(None) => break true,
            Err(_) => break false,
        }
    };
    // The whole-file decoder accepts exactly what the stream reader reads
    // to the end, with the same samples.
    if let Ok(whole) = decode_video(data) {
        assert!(streamed_ok);
        let flat: Vec<u64> = frames.iter().flat_map(|f| f.data().iter().map(|v| v.to_bits())).collect();
        let s = whole.shape();
        let (c, t, hw) = (s[0], s[1], s[2] * s[3]);
        assert_eq!(frames.len(), t);
        let mut expect = Vec::with_capacity(flat.len());
        for f in 0..t {
            for ch in 0..c {
                let at = (ch * t + f) * hw;
                expect.extend(whole.data()[at..at + hw].iter().map(|v| v.to_bits()));
            }
        }
        assert_eq!(flat, expect);
    }
});
