//! Std companion to `planloop-core`: transcript files, replay and HTTP chat
//! backends, the corpus runner with its report, and the `planloop` binary.

pub mod bench;
pub mod config;
pub mod corpus;
pub mod http;
pub mod labels;
pub mod replay;
pub mod transcript;

pub use bench::{run_corpus, BackendChoice, BenchReport, RunOptions};
pub use corpus::BenchTask;
pub use replay::ReplayBackend;
pub use transcript::{read_records, write_records, EpisodeRecord, RunInfo};

/// Wall clock for episode timing.
pub struct SystemClock(std::time::Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(std::time::Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl planloop_core::Clock for SystemClock {
    fn now_secs(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
