#![no_main]

use libfuzzer_sys::fuzz_target;
use smoothrnn::io::{read_variational_checkpoint, write_variational_checkpoint};

// Anything accepted must survive a write/read cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(first) = read_variational_checkpoint(data) else {
        return;
    };
    let mut a = Vec::new();
    write_variational_checkpoint(&mut a, &first).expect("writing a parsed value");
    let second = read_variational_checkpoint(a.as_slice()).expect("re-reading written output");
    let mut b = Vec::new();
    write_variational_checkpoint(&mut b, &second).expect("writing a re-read value");
    assert_eq!(a, b);
});
