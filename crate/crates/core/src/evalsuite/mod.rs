//! Forecasting metrics, representation similarity, noise injection and the
//! generalization harness.

mod cka;
mod metrics;
mod noise;
mod suite;

pub use cka::{cka, cka_matrix, write_cka_csv};
pub use metrics::{
    ade, best_fde, brier_min_fde, evaluate, fde, format_table, min_ade, min_fde, miss_rate, top_k, write_table_csv,
    MetricReport, TableRow, MISS_THRESHOLD, TABLE_HEADER,
};
pub use noise::{inject_noise, NoiseTarget, NoisyScenes, NOISE_VARIANCE};
pub use suite::{
    constant_velocity_forecast, evaluate_model, generalization_suite, predict_all, require_tags, setting_eval_set,
    setting_train_set, Setting, SuiteConfig, SuiteModel, EVAL_CHUNK, REQUIRED_TAGS,
};
