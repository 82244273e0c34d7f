//! Shared test support: envelope generators, a raw-file oracle over the
//! three storage formats, in-process stacks and fault-injecting probes.

pub mod fixtures;
pub mod gen;
pub mod raw;
pub mod stack;
pub mod stubs;
pub mod suite;
