//! Language-valued policy evaluation and policy iteration on small tabular MDPs.
//!
//! States, transitions and values are rendered as text; values are aggregated
//! either by a deterministic symbolic operator over concept documents or by a
//! chat model behind a caching gateway.

pub mod aggregate;
pub mod exec;
pub mod gpi;
pub mod language;
pub mod mdp;
pub mod report;
pub mod textify;
