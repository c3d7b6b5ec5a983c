#![no_main]

use causal_rank::orthocheck::DiscretePopulation;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(pop) = DiscretePopulation::from_fixture(text) {
        let again = DiscretePopulation::from_fixture(&pop.to_fixture()).expect("re-parse");
        assert_eq!(again, pop);
        let _ = pop.validate_for_check();
    }
});
