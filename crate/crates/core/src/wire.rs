//! Length-prefixed binary protocol between the store tier and the web tier.
//!
//! Every frame is `"PGW1" | opcode: u8 | length: u32 LE | payload`. A request
//! is answered by zero or more `RowBatch` frames of at most
//! [`MAX_BATCH_ROWS`] rows followed by exactly one `Stats` frame, or by a
//! single `Error` frame.
//!
//! Payloads:
//!
//! | opcode | message      | payload                                                        |
//! |--------|--------------|----------------------------------------------------------------|
//! | 1      | ScanAll      | empty                                                          |
//! | 2      | SeekPage     | field u8, page u32, page_size u32, skip_mode u8                |
//! | 3      | TwoPhasePage | same as SeekPage                                               |
//! | 4      | RowBatch     | row_count u32, then encoded rows                               |
//! | 5      | Error        | UTF-8 message                                                  |
//! | 6      | Stats        | rows_fetched u64, spilled u8, runs u32, spilled_bytes u64, elapsed_ns u64 |

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::row::{decode_rows, Row, MAX_ROW_BYTES};
use crate::sortspill::SpillStats;
use crate::strategy::{PageRequest, SkipMode};

pub const WIRE_MAGIC: [u8; 4] = *b"PGW1";
pub const FRAME_HEADER_BYTES: usize = 9;
pub const MAX_BATCH_ROWS: usize = 4096;
/// Largest payload accepted from a peer: one full row batch with headroom.
pub const MAX_PAYLOAD_BYTES: u32 = 4 << 20;

const PAGE_REQUEST_BYTES: usize = 10;
const STATS_BYTES: usize = 29;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    ScanAll = 1,
    SeekPage = 2,
    TwoPhasePage = 3,
    RowBatch = 4,
    Error = 5,
    Stats = 6,
}

impl TryFrom<u8> for Opcode {
    type Error = Error;

    fn try_from(code: u8) -> Result<Self> {
        Ok(match code {
            1 => Opcode::ScanAll,
            2 => Opcode::SeekPage,
            3 => Opcode::TwoPhasePage,
            4 => Opcode::RowBatch,
            5 => Opcode::Error,
            6 => Opcode::Stats,
            other => return Err(Error::protocol(format!("unknown opcode {other}"))),
        })
    }
}

/// One raw frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub opcode: Opcode,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(opcode: Opcode, payload: Vec<u8>) -> Self {
        WireMessage { opcode, payload }
    }

    /// Bytes this frame occupies on the wire.
    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_BYTES + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&WIRE_MAGIC);
        out.push(self.opcode as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one frame from the front of `bytes`; returns it with the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(WireMessage, usize)> {
        let header: &[u8; FRAME_HEADER_BYTES] = bytes
            .get(..FRAME_HEADER_BYTES)
            .ok_or_else(|| Error::protocol("truncated frame header"))?
            .try_into()
            .unwrap();
        let (opcode, len) = parse_header(header)?;
        let payload = bytes
            .get(FRAME_HEADER_BYTES..FRAME_HEADER_BYTES + len)
            .ok_or_else(|| Error::protocol("truncated frame payload"))?;
        Ok((
            WireMessage::new(opcode, payload.to_vec()),
            FRAME_HEADER_BYTES + len,
        ))
    }
}

fn parse_header(header: &[u8; FRAME_HEADER_BYTES]) -> Result<(Opcode, usize)> {
    if header[..4] != WIRE_MAGIC {
        return Err(Error::protocol("bad frame magic"));
    }
    let opcode = Opcode::try_from(header[4])?;
    let len = u32::from_le_bytes(header[5..9].try_into().unwrap());
    if len > MAX_PAYLOAD_BYTES {
        return Err(Error::protocol(format!(
            "payload of {len} bytes exceeds limit {MAX_PAYLOAD_BYTES}"
        )));
    }
    Ok((opcode, len as usize))
}

/// Reads one frame. `Ok(None)` on a clean end of stream before any header byte.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<WireMessage>> {
    let mut header = [0u8; FRAME_HEADER_BYTES];
    let mut filled = 0;
    while filled < header.len() {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::protocol("connection closed inside frame header")),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Transport(e)),
        }
    }
    let (opcode, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::protocol("connection closed inside frame payload"),
        _ => Error::Transport(e),
    })?;
    Ok(Some(WireMessage::new(opcode, payload)))
}

/// Writes one frame and returns its size on the wire.
pub fn write_message<W: Write>(w: &mut W, msg: &WireMessage) -> Result<usize> {
    w.write_all(&msg.encode()).map_err(Error::Transport)?;
    Ok(msg.encoded_len())
}

/// Server-side accounting sent at the end of every successful response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub rows_fetched: u64,
    pub spill: SpillStats,
    pub elapsed_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    ScanAll,
    SeekPage(PageRequest),
    TwoPhasePage(PageRequest),
    RowBatch(Vec<Row>),
    Error(String),
    Stats(ServerStats),
}

pub fn encode_row_batch(rows: &[Row]) -> WireMessage {
    let mut payload = Vec::with_capacity(4 + rows.len() * MAX_ROW_BYTES);
    payload.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for row in rows {
        row.encode_into(&mut payload);
    }
    WireMessage::new(Opcode::RowBatch, payload)
}

fn encode_page_request(req: &PageRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(PAGE_REQUEST_BYTES);
    out.push(req.sort_field.code());
    out.extend_from_slice(&req.page_number.to_le_bytes());
    out.extend_from_slice(&req.page_size.to_le_bytes());
    out.push(req.skip_mode.code());
    out
}

fn decode_page_request(payload: &[u8]) -> Result<PageRequest> {
    if payload.len() != PAGE_REQUEST_BYTES {
        return Err(Error::protocol(format!(
            "page request payload is {} bytes, expected {PAGE_REQUEST_BYTES}",
            payload.len()
        )));
    }
    let sort_field = Field::from_code(payload[0])
        .ok_or_else(|| Error::protocol(format!("unknown field code {}", payload[0])))?;
    let skip_mode = SkipMode::from_code(payload[9])
        .ok_or_else(|| Error::protocol(format!("unknown skip mode {}", payload[9])))?;
    let req = PageRequest {
        sort_field,
        page_number: u32::from_le_bytes(payload[1..5].try_into().unwrap()),
        page_size: u32::from_le_bytes(payload[5..9].try_into().unwrap()),
        skip_mode,
    };
    req.validate().map_err(|e| Error::protocol(e.to_string()))?;
    Ok(req)
}

fn encode_stats(stats: &ServerStats) -> Vec<u8> {
    let mut out = Vec::with_capacity(STATS_BYTES);
    out.extend_from_slice(&stats.rows_fetched.to_le_bytes());
    out.push(stats.spill.spilled as u8);
    out.extend_from_slice(&stats.spill.runs_written.to_le_bytes());
    out.extend_from_slice(&stats.spill.bytes_spilled.to_le_bytes());
    out.extend_from_slice(&stats.elapsed_ns.to_le_bytes());
    out
}

fn decode_stats(payload: &[u8]) -> Result<ServerStats> {
    if payload.len() != STATS_BYTES {
        return Err(Error::protocol(format!(
            "stats payload is {} bytes, expected {STATS_BYTES}",
            payload.len()
        )));
    }
    let u64_at = |i: usize| u64::from_le_bytes(payload[i..i + 8].try_into().unwrap());
    let spilled = match payload[8] {
        0 => false,
        1 => true,
        b => return Err(Error::protocol(format!("invalid spilled flag {b}"))),
    };
    let runs_written = u32::from_le_bytes(payload[9..13].try_into().unwrap());
    if spilled != (runs_written >= 2) {
        return Err(Error::protocol("spilled flag disagrees with run count"));
    }
    Ok(ServerStats {
        rows_fetched: u64_at(0),
        spill: SpillStats {
            spilled,
            runs_written,
            bytes_spilled: u64_at(13),
        },
        elapsed_ns: u64_at(21),
    })
}

impl Message {
    pub fn to_wire(&self) -> WireMessage {
        match self {
            Message::ScanAll => WireMessage::new(Opcode::ScanAll, Vec::new()),
            Message::SeekPage(req) => WireMessage::new(Opcode::SeekPage, encode_page_request(req)),
            Message::TwoPhasePage(req) => {
                WireMessage::new(Opcode::TwoPhasePage, encode_page_request(req))
            }
            Message::RowBatch(rows) => encode_row_batch(rows),
            Message::Error(msg) => WireMessage::new(Opcode::Error, msg.as_bytes().to_vec()),
            Message::Stats(stats) => WireMessage::new(Opcode::Stats, encode_stats(stats)),
        }
    }

    pub fn from_wire(frame: &WireMessage) -> Result<Message> {
        let payload = frame.payload.as_slice();
        Ok(match frame.opcode {
            Opcode::ScanAll => {
                if !payload.is_empty() {
                    return Err(Error::protocol("ScanAll carries no payload"));
                }
                Message::ScanAll
            }
            Opcode::SeekPage => Message::SeekPage(decode_page_request(payload)?),
            Opcode::TwoPhasePage => Message::TwoPhasePage(decode_page_request(payload)?),
            Opcode::RowBatch => {
                let count = payload
                    .get(..4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                    .ok_or_else(|| Error::protocol("truncated row batch"))?;
                if count > MAX_BATCH_ROWS {
                    return Err(Error::protocol(format!(
                        "row batch of {count} rows exceeds {MAX_BATCH_ROWS}"
                    )));
                }
                Message::RowBatch(decode_rows(&payload[4..], count)?)
            }
            Opcode::Error => Message::Error(
                String::from_utf8(payload.to_vec())
                    .map_err(|_| Error::protocol("error message is not UTF-8"))?,
            ),
            Opcode::Stats => Message::Stats(decode_stats(payload)?),
        })
    }

    /// Parses a complete frame buffer into a message.
    pub fn decode(bytes: &[u8]) -> Result<(Message, usize)> {
        let (frame, used) = WireMessage::decode(bytes)?;
        Ok((Message::from_wire(&frame)?, used))
    }
}
