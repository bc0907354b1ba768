#![no_main]

use libfuzzer_sys::fuzz_target;
use smoothrnn::io::{read_data_csv, write_data_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(df) = read_data_csv(data) else { return };
    for c in &df.columns {
        assert_eq!(c.len(), df.rows());
    }
    let ts = df.timestamps();
    let names: Vec<&str> = df.names.iter().map(String::as_str).collect();
    let cols: Vec<&[f64]> = df.columns.iter().map(Vec::as_slice).collect();
    let mut out = Vec::new();
    if write_data_csv(&mut out, &[], &ts, &names, &cols).is_ok() {
        if let Ok(again) = read_data_csv(out.as_slice()) {
            assert_eq!(again.rows(), df.rows());
        }
    }
});
