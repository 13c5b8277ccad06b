//! The guide's chapters, mounted as doc-tested modules.
//!
//! Every fenced Rust block under `book/src/` compiles and runs as part of
//! `cargo test --doc`, so the guide cannot drift from the library. This
//! module tree only exists while rustdoc collects doc-tests; it is absent
//! from normal builds and from rendered documentation. One module per
//! chapter keeps failure output traceable to the file it came from.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/quickstart.md")]
pub mod quickstart {}

#[doc = include_str!("../../../book/src/markets.md")]
pub mod markets {}

#[doc = include_str!("../../../book/src/learners.md")]
pub mod learners {}

#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
