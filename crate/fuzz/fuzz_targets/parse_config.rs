#![no_main]

use libfuzzer_sys::fuzz_target;
use mfg_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        // whatever parses must survive a round trip through the emitter
        let again = RunConfig::parse(&cfg.emit()).expect("emitted config parses");
        assert_eq!(again, cfg);
    }
});
