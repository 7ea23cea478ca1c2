#![no_main]

use gsi_core::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = Config::from_toml(text) {
        let again = Config::from_toml(&config.to_toml()).expect("written config parses");
        assert_eq!(again, config);
    }
});
