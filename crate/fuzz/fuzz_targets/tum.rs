#![no_main]

use gsi_core::io::{format_tum, parse_tum};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Whatever parses must survive a write and a second read.
    if let Ok(parsed) = parse_tum(text) {
        parse_tum(&format_tum(&parsed)).expect("formatted output parses");
    }
});
