#![no_main]

use libfuzzer_sys::fuzz_target;
use smoothrnn_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(cfg) = RunConfig::from_toml(text) else {
        return;
    };
    let _ = cfg.arch();
    let _ = cfg.spec(1);
    let _ = cfg.mode();
    let _ = cfg.splits();
    let _ = cfg.train_config();
    let _ = cfg.cv_grid();
    let _ = cfg.bayes_config();
    let _ = cfg.predict_options();
    let _ = cfg.llm_config();
    let _ = cfg.dgp_config();
});
