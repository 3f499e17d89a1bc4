use serde::{Deserialize, Serialize};

/// Non-fatal numerical conditions raised while estimating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum Flag {
    /// A fitted probability hit 0 or 1 where the opposite outcome was observed.
    IllConditioned { cells: usize },
    /// An asset's Bernoulli series is perfectly separated; its index was capped.
    Separation { asset: usize },
    /// The index cap |z| <= 15 was binding during a Newton update.
    IndexCapBinding { updates: usize },
    /// A singular matrix was repaired with a ridge.
    Ridge { context: String, lambda: f64 },
    /// Normalized factor second moments have (nearly) tied eigenvalues.
    NonIdentifiable { gap: f64 },
    /// Fewer than two positive eigenvalues for the factor-count selector.
    DegenerateSelection,
    /// A probability was clipped into the admissible range.
    Clipped { context: String, count: usize },
    /// The staleness correction was skipped for near-totally stale pairs.
    Unrecoverable { count: usize },
    /// Trailing observations that do not fill a block were dropped.
    PartialBlockDropped { increments: usize },
    /// Iterative solver stopped at its iteration limit.
    SolverStall { context: String },
}
