//! Discrete-event simulator of a recursive inter-process communication
//! network: layered DIFs of IPC processes over point-to-point links.

pub mod conformance;
pub mod daf;
pub mod efcp;
pub mod engine;
pub mod flow_alloc;
pub mod identifiers;
pub mod medium;
pub mod mgmt;
pub mod rmt;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use engine::{Engine, EventHandle, RngStreams, SimDuration, SimTime};
pub use identifiers::{
    Address, Apn, CepId, ConnectionId, Dan, PortId, QosCube, QosId, QosRequirements,
};
