#![no_main]

use libfuzzer_sys::fuzz_target;
use smoothrnn::io::{read_fit_report, write_fit_report};

// Anything accepted must survive a write/read cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(first) = read_fit_report(data) else {
        return;
    };
    let mut a = Vec::new();
    write_fit_report(&mut a, &first).expect("writing a parsed value");
    let second = read_fit_report(a.as_slice()).expect("re-reading written output");
    let mut b = Vec::new();
    write_fit_report(&mut b, &second).expect("writing a re-read value");
    assert_eq!(a, b);
});
