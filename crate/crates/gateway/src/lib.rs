//! Operator surface for the testbed: a headless runner, and an HTTP API
//! with a server-sent event stream that a dashboard can drive.
//!
//! The kernel stays single-threaded. It runs on its own thread and owns the
//! [`Testbed`](nin_dsm::testbed::Testbed). HTTP handlers see only two things:
//! the latest published snapshot and a serialized command queue.

pub mod api;
pub mod cli;
pub mod kernel;
