#![no_main]

use libfuzzer_sys::fuzz_target;
use smoothrnn::io::{read_forecast_csv, write_forecast_csv};

// Anything accepted must survive a write/read cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(first) = read_forecast_csv(data) else {
        return;
    };
    let mut a = Vec::new();
    write_forecast_csv(&mut a, &first).expect("writing a parsed value");
    let second = read_forecast_csv(a.as_slice()).expect("re-reading written output");
    let mut b = Vec::new();
    write_forecast_csv(&mut b, &second).expect("writing a re-read value");
    assert_eq!(a, b);
});
