#![no_main]

use libfuzzer_sys::fuzz_target;
use rand::SeedableRng;
use scatchain::DisorderModel;

fuzz_target!(|text: &str| {
    if let Ok(model) = DisorderModel::from_json_str(text) {
        let again = DisorderModel::from_json_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(model, again);
        // Accepted models must sample without panicking.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(model.seed);
        for _ in 0..4 {
            let _ = model.sample_generator(&mut rng);
        }
    }
});
