#![no_main]

use causal_rank::io;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rows) = io::parse_nuisance(text) {
        let again = io::parse_nuisance(&io::nuisance_to_csv(&rows)).expect("re-parse");
        assert_eq!(again, rows);
    }
});
