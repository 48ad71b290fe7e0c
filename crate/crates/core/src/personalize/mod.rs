//! Template rendering, delivery sinks and the engagement feedback loop.

mod delivery;
mod events;
mod feedback;
mod render;

pub use delivery::{deliver, DeliveryReport, DeliverySink, FileSink, MemorySink, RenderedNudge, SinkError};
pub use events::{
    read_events, sort_causally, write_events, EngagementEvent, EventKind, EventStatus, Timestamp, TIMESTAMP_FORMAT,
};
pub use feedback::{ingest_engagement, EngagementIngest, FeedbackRejection, FunnelState};
pub use render::{
    format_thousands, placeholders, render, Derivation, PlaceholderCatalogue, RenderContext, RenderError,
};
