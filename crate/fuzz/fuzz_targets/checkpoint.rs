#![no_main]

use causal_rank::nn::ModelParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(params) = ModelParams::from_checkpoint(text) {
        let again = ModelParams::from_checkpoint(&params.to_checkpoint()).expect("re-parse");
        assert_eq!(again, params);
    }
});
