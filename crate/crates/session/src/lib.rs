//! Real-time lockstep session server: one cockpit client drives the ego
//! vehicle over a WebSocket while the server owns the ring and the advice.
//!
//! The tick loop is the only writer of simulation state. Network tasks talk
//! to it through a latest-wins [`Mailbox`] (inputs) and a coalescing
//! [`Outbox`] (frames).

pub mod config;
pub mod error;
pub mod loopback;
pub mod mailbox;
pub mod outbox;
pub mod protocol;
pub mod server;

pub use config::{PedalMap, Segment, SegmentKind, SegmentOverrides, SessionConfig, ENV_LOG_DIR, ENV_PORT};
pub use error::SessionError;
pub use loopback::{run_loopback_client, LoopbackOptions, LoopbackReport};
pub use mailbox::Mailbox;
pub use outbox::Outbox;
pub use protocol::{ClientMessage, ControlInput, ServerMessage, TickMessage, PROTOCOL_VERSION};
pub use server::{SegmentReport, SessionReport, SessionServer};
