//! Service fabric for a federated university information system: an
//! envelope codec, WSDD deployment descriptors, a service engine with
//! WSDL-lite discovery, a registry broker, departmental services over
//! heterogeneous storage, and the no-dues verification orchestrator.

pub mod broker;
pub mod depts;
pub mod domain;
pub mod emis;
pub mod engine;
pub mod envelope;
pub mod net;
pub mod node;
pub mod storage;
pub mod wsdd;
pub mod xml;
