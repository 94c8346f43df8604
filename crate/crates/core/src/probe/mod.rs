//! Fast drift probes: single-step generation, embedding metrics (SSF,
//! SS-FD), self-baselines, drift rates, and tabulation of external scores.

pub mod embedding;
pub mod fep;
pub mod metrics;
pub mod svp;

pub use embedding::{EmbeddingProvider, EmbeddingSet, FrameStatsProvider};
pub use fep::{
    default_prompts, fep_baseline, fep_compare, fep_embed, fep_generate, parse_prompts, probe_noise,
    FepMetrics, FepMonitor, FepSetup, DEFAULT_PROMPTS, PROMPT_CATEGORIES,
};
pub use metrics::{
    drift_rate, frechet_distance, gaussian_fit, gaussian_fit_rows, ssf_score, write_fep_csv,
    DriftPoint, DriftSeries, FepBaseline, GaussianStats, SsfScore,
};
pub use svp::{canonical_metric, svp_ingest, SvpTable, KNOWN_METRICS};
