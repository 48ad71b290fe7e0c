//! Knowledge-graph driven nudge recommendation: graph store, behavior
//! ingestion, candidate generation, attention-based ranking, constraint
//! filtering, template personalization, population simulation and
//! evaluation statistics.

pub mod graph;
pub mod ingest;
pub mod candidates;
pub mod constraints;
pub mod personalize;
pub mod pipeline;
pub mod ranker;
pub mod sim;
pub mod stats;
