#![no_main]

use libfuzzer_sys::fuzz_target;
use pagebench::wire::read_message;
use pagebench::{Message, WireMessage};

fuzz_target!(|data: &[u8]| {
    if let Ok((frame, used)) = WireMessage::decode(data) {
        assert_eq!(frame.encode(), &data[..used]);
        if let Ok(msg) = Message::from_wire(&frame) {
            assert_eq!(Message::from_wire(&msg.to_wire()).ok(), Some(msg));
        }
    }
    let mut cursor = data;
    while let Ok(Some(_)) = read_message(&mut cursor) {}
});
