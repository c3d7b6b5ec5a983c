#![no_main]

use causal_rank::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(scores) = io::parse_scores(text) {
        let again = io::parse_scores(&io::scores_to_csv(&scores)).expect("re-parse");
        assert_eq!(again, scores);
    }
});
