//! Observable message queues: per-worker inboxes written directly by
//! senders, and per-LP event queues.

mod event_queue;
mod inbox;

pub use event_queue::{EventQueue, IncorporationReport};
pub use inbox::Inbox;
