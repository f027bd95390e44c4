#![no_main]

use libfuzzer_sys::fuzz_target;
use pagebench::row::{decode_row_prefix, decode_rows};
use pagebench::{decode_row, encode_row};

fuzz_target!(|data: &[u8]| {
    if let Ok(row) = decode_row(data) {
        assert_eq!(encode_row(&row), data);
    }
    if let Ok((row, used)) = decode_row_prefix(data) {
        assert_eq!(encode_row(&row), &data[..used]);
    }
    if let Some((&count, rest)) = data.split_first() {
        if let Ok(rows) = decode_rows(rest, count as usize) {
            assert_eq!(rows.len(), count as usize);
        }
    }
});
