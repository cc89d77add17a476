#![no_main]

use earlygest::annotation::{parse_annotation_table, write_annotation_table};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = parse_annotation_table(data) {
        let rows: Vec<_> = table.values().flatten().cloned().collect();
        let mut out = Vec::new();
        write_annotation_table(&mut out, &rows).expect("parsed rows write back");
        assert_eq!(parse_annotation_table(out.as_slice()).expect("written table parses"), table);
    }
});
