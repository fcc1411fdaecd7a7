//! IO half of the opinion analytics toolkit: connectors, document store,
//! chat client, CSV/SVG writers and the `opinion-pulse` CLI. All numerics
//! and domain types live in `opinion-pulse-core`; this crate only adds
//! effects around them, every one of which can run from checked-in
//! fixtures with no network.

pub mod cli;
pub mod connectors;
pub mod csvio;
pub mod extract;
pub mod llm;
pub mod scenario;
pub mod store;
pub mod svg;
pub mod transport;
