#![no_main]

use libfuzzer_sys::fuzz_target;
use scatchain_cli::config::ExperimentConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = ExperimentConfig::from_json_str(text) {
        let printed = cfg.to_json_string();
        let again = ExperimentConfig::from_json_str(&printed).expect("printed config reloads");
        assert_eq!(printed, again.to_json_string());
        assert_eq!(cfg.hash(), again.hash());
    }
});
