#![no_main]

use libfuzzer_sys::fuzz_target;
use pagebench::Table;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = Table::from_dump_bytes(data) {
        let mut out = Vec::new();
        table.dump(&mut out).unwrap();
        let again = Table::from_dump_bytes(&out).unwrap();
        assert_eq!(again.encoded_heap(), table.encoded_heap());
    }
});
