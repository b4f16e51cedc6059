//! Training orchestration, evaluation campaigns and their statistics.

mod config;
mod eval;
mod metrics;
mod train;

pub use config::{AgentConfig, Curriculum, Lesson, PhaseBudgets, TrainConfig, TrainPhase};
pub use eval::{
    evaluate, evaluate_policies, linear_trend, mean, read_outcomes, run_scripted_loading, std_dev, write_outcomes,
    EvalConfig, EvalReport, IndexMasses, OutcomeRow, PositionHistogram, RandomController, ScriptedLoader, Stat,
    Summary, Trend, HISTOGRAM_BINS,
};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, COLUMNS, SCHEMA_LINE};
pub use train::{train, TrainSummary, Trainer, CHECKPOINT_DIR, METRICS_FILE, STATE_FILE};
