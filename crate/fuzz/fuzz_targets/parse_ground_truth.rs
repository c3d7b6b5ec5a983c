#![no_main]

use causal_rank::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(gt) = io::parse_ground_truth(text) {
        let again = io::parse_ground_truth(&io::ground_truth_to_csv(&gt)).expect("re-parse");
        assert_eq!(again, gt);
    }
});
