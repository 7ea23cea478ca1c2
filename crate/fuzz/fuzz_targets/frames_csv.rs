#![no_main]

use gsi_core::io::{format_frames_csv, parse_frames_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Whatever parses must survive a write and a second read.
    if let Ok(parsed) = parse_frames_csv(text) {
        parse_frames_csv(&format_frames_csv(&parsed)).expect("formatted output parses");
    }
});
