//! HTTP front end for the credential broker: configuration loading, routes
//! and the server lifecycle. All authorization happens in the broker; this
//! crate only maps wire formats and status codes.

pub mod clock;
pub mod config;
pub mod http;
pub mod server;

pub use clock::{Clock, ManualClock, SystemClock};
pub use config::{BrokerConfig, ConfigError};
pub use http::{router, AppState};
pub use server::{build_broker, serve, serve_on, ServeError, ServiceHandle};
