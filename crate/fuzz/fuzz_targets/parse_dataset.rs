#![no_main]

use causal_rank::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = io::parse_dataset(text) {
        let again = io::parse_dataset(&io::dataset_to_csv(&ds)).expect("re-parse");
        assert_eq!(again, ds);
    }
});
