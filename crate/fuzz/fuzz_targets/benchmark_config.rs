#![no_main]

use causal_rank::config::BenchmarkSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = BenchmarkSpec::parse(text) {
        // Paths are free text and may contain the comment character.
        if spec.output_dir.is_none() {
            let again = BenchmarkSpec::parse(&spec.to_config_text()).expect("re-parse");
            assert_eq!(again, spec);
        }
    }
});
