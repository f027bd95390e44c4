//! Fixed-schema rows and their bit-exact binary encoding.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! id: i32 | text_len: u16 | text: [u8; text_len] | int: i32 | bool: u8 | date: i64
//! ```
//!
//! A row therefore occupies `19 + text_len` bytes, between 20 and 69.

use crate::error::{Error, Result};

pub const MIN_TEXT_LEN: usize = 1;
pub const MAX_TEXT_LEN: usize = 50;
/// Encoded size of a row without its text bytes.
pub const FIXED_ROW_BYTES: usize = 4 + 2 + 4 + 1 + 8;
pub const MIN_ROW_BYTES: usize = FIXED_ROW_BYTES + MIN_TEXT_LEN;
pub const MAX_ROW_BYTES: usize = FIXED_ROW_BYTES + MAX_TEXT_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Row {
    pub id: i32,
    pub text_field: String,
    pub int_field: i32,
    pub bool_field: bool,
    /// Seconds since the Unix epoch.
    pub date_field: i64,
}

impl Row {
    pub fn encoded_len(&self) -> usize {
        FIXED_ROW_BYTES + self.text_field.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id <= 0 {
            return Err(Error::protocol(format!(
                "row id {} is not positive",
                self.id
            )));
        }
        validate_text(self.text_field.as_bytes())
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        debug_assert!(self.validate().is_ok(), "encoding invalid row {self:?}");
        out.extend_from_slice(&self.id.to_le_bytes());
        out.extend_from_slice(&(self.text_field.len() as u16).to_le_bytes());
        out.extend_from_slice(self.text_field.as_bytes());
        out.extend_from_slice(&self.int_field.to_le_bytes());
        out.push(self.bool_field as u8);
        out.extend_from_slice(&self.date_field.to_le_bytes());
    }
}

fn validate_text(text: &[u8]) -> Result<()> {
    if !(MIN_TEXT_LEN..=MAX_TEXT_LEN).contains(&text.len()) {
        return Err(Error::protocol(format!(
            "text length {} outside [{MIN_TEXT_LEN}, {MAX_TEXT_LEN}]",
            text.len()
        )));
    }
    if !text.iter().all(u8::is_ascii_alphanumeric) {
        return Err(Error::protocol("text is not ASCII alphanumeric"));
    }
    Ok(())
}

pub fn encode_row(row: &Row) -> Vec<u8> {
    let mut out = Vec::with_capacity(row.encoded_len());
    row.encode_into(&mut out);
    out
}

/// Decodes exactly one row; trailing bytes are an error.
pub fn decode_row(bytes: &[u8]) -> Result<Row> {
    let (row, used) = decode_row_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::protocol(format!(
            "{} trailing bytes after row",
            bytes.len() - used
        )));
    }
    Ok(row)
}

/// Decodes one row from the front of `bytes`, returning it with the number of
/// bytes consumed.
pub fn decode_row_prefix(bytes: &[u8]) -> Result<(Row, usize)> {
    let header = bytes
        .get(..6)
        .ok_or_else(|| Error::protocol("truncated row header"))?;
    let id = i32::from_le_bytes(header[..4].try_into().unwrap());
    let text_len = u16::from_le_bytes(header[4..6].try_into().unwrap()) as usize;
    let total = FIXED_ROW_BYTES + text_len;
    let body = bytes
        .get(6..total)
        .ok_or_else(|| Error::protocol("truncated row body"))?;
    let text = &body[..text_len];
    validate_text(text)?;
    let rest = &body[text_len..];
    let int_field = i32::from_le_bytes(rest[..4].try_into().unwrap());
    let bool_field = match rest[4] {
        0 => false,
        1 => true,
        b => return Err(Error::protocol(format!("invalid bool byte {b}"))),
    };
    let date_field = i64::from_le_bytes(rest[5..13].try_into().unwrap());
    let row = Row {
        id,
        // validated ASCII above
        text_field: String::from_utf8(text.to_vec()).expect("ascii text"),
        int_field,
        bool_field,
        date_field,
    };
    if row.id <= 0 {
        return Err(Error::protocol(format!(
            "row id {} is not positive",
            row.id
        )));
    }
    Ok((row, total))
}

/// Decodes a buffer of back-to-back rows.
pub fn decode_rows(mut bytes: &[u8], expected: usize) -> Result<Vec<Row>> {
    let mut rows = Vec::with_capacity(expected.min(bytes.len() / MIN_ROW_BYTES));
    while !bytes.is_empty() {
        let (row, used) = decode_row_prefix(bytes)?;
        rows.push(row);
        bytes = &bytes[used..];
    }
    if rows.len() != expected {
        return Err(Error::protocol(format!(
            "expected {expected} rows, decoded {}",
            rows.len()
        )));
    }
    Ok(rows)
}

/// The splitmix64 generator; the value stream behind table population.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw from `[0, bound)` by multiply-shift.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }
}

const ALPHANUMERIC: &[u8; 62] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789";
/// 2000-01-01T00:00:00Z
pub const DATE_MIN: i64 = 946_684_800;
/// 2020-12-31T23:59:59Z
pub const DATE_MAX: i64 = 1_609_459_199;

/// Draws the non-id fields of one row. Draw order is part of the table format:
/// text length, text bytes, int, bool, date.
pub fn random_row(id: i32, rng: &mut SplitMix64) -> Row {
    let len = MIN_TEXT_LEN + rng.below((MAX_TEXT_LEN - MIN_TEXT_LEN + 1) as u64) as usize;
    let text: String = (0..len)
        .map(|_| ALPHANUMERIC[rng.below(ALPHANUMERIC.len() as u64) as usize] as char)
        .collect();
    let int_field = rng.below(1 << 31) as i32;
    let bool_field = rng.next_u64() & 1 == 1;
    let date_field = DATE_MIN + rng.below((DATE_MAX - DATE_MIN + 1) as u64) as i64;
    Row {
        id,
        text_field: text,
        int_field,
        bool_field,
        date_field,
    }
}
