#![no_main]

use duallearn_cli::config::parse_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mut cfg) = parse_config(text) {
        if cfg.resolve().is_ok() {
            let echo = serde_json::to_string(&cfg).expect("echo");
            parse_config(&echo).expect("echo reparses");
        }
    }
});
