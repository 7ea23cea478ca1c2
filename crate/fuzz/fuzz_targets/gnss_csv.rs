#![no_main]

use gsi_core::io::{format_gnss_csv, parse_gnss_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Whatever parses must survive a write and a second read.
    if let Ok(parsed) = parse_gnss_csv(text) {
        parse_gnss_csv(&format_gnss_csv(&parsed)).expect("formatted output parses");
    }
});
