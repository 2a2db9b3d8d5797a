//! CSV dataset ingestion must reject malformed input with an error, never
//! a panic or unbounded allocation.

#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = mebart::data::ObservedDataset::from_csv_bytes(data);
});
