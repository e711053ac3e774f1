//! Matrix files: anything that loads must print and load again.

#![no_main]

use libfuzzer_sys::fuzz_target;
use scatchain::smatrix::ScatteringMatrix;

fuzz_target!(|text: &str| {
    if let Ok(loaded) = ScatteringMatrix::from_json_str(text) {
        let again = serde_json::to_string(&loaded.matrix.to_json()).unwrap();
        ScatteringMatrix::from_json_str(&again).unwrap();
    }
});
