//! Names and local identifiers: application names, DIF names, addresses,
//! port-ids, CEP-ids, connection-ids and QoS matching.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimDuration;

/// Application process name. Location independent; the optional instance
/// distinguishes several running copies of the same program.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Apn {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
}

impl Apn {
    pub fn new(name: impl Into<String>) -> Self {
        Apn {
            name: name.into(),
            instance: None,
        }
    }

    pub fn with_instance(name: impl Into<String>, instance: impl Into<String>) -> Self {
        Apn {
            name: name.into(),
            instance: Some(instance.into()),
        }
    }

    /// Parses `name` or `name:instance`.
    pub fn parse(s: &str) -> Option<Self> {
        let (name, instance) = match s.split_once(':') {
            Some((n, i)) => (n, Some(i.to_string())),
            None => (s, None),
        };
        if name.is_empty() || instance.as_deref() == Some("") {
            return None;
        }
        Some(Apn {
            name: name.to_string(),
            instance,
        })
    }
}

impl fmt::Display for Apn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.instance {
            Some(i) => write!(f, "{}:{}", self.name, i),
            None => f.write_str(&self.name),
        }
    }
}

/// Name of a set of application processes; a DIF name is a DAN.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dan(pub String);

impl fmt::Display for Dan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An IPCP's address, only meaningful inside its own DIF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub u32);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Handle binding an (N)-IPCP to its (N+1) user; unique per computing system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub u32);

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Connection endpoint id; unique within one IPCP.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct CepId(pub u16);

impl fmt::Display for CepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// QoS cube identifier. Zero is reserved for management flows.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct QosId(pub u8);

impl QosId {
    pub const MANAGEMENT: QosId = QosId(0);
}

impl fmt::Display for QosId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Source CEP, destination CEP and QoS id, from the point of view of the
/// endpoint that holds it.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct ConnectionId {
    pub src_cep: CepId,
    pub dst_cep: CepId,
    pub qos_id: QosId,
}

impl ConnectionId {
    pub fn reversed(self) -> Self {
        ConnectionId {
            src_cep: self.dst_cep,
            dst_cep: self.src_cep,
            qos_id: self.qos_id,
        }
    }
}

impl fmt::Display for ConnectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.src_cep, self.dst_cep, self.qos_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosRequirements {
    #[serde(default)]
    pub reliable: bool,
    #[serde(default)]
    pub ordered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay: Option<SimDuration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_bandwidth: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QosCube {
    pub id: QosId,
    pub reliable: bool,
    pub ordered: bool,
    pub max_delay: Option<SimDuration>,
    pub avg_bandwidth: Option<u64>,
}

impl QosCube {
    /// The implicit cube used by management flows: no retransmission, no
    /// rate limit.
    pub fn management() -> Self {
        QosCube {
            id: QosId::MANAGEMENT,
            reliable: false,
            ordered: false,
            max_delay: None,
            avg_bandwidth: None,
        }
    }

    pub fn satisfies(&self, req: &QosRequirements) -> bool {
        if req.reliable && !self.reliable {
            return false;
        }
        if req.ordered && !self.ordered {
            return false;
        }
        if let Some(bound) = req.max_delay {
            match self.max_delay {
                Some(d) if d <= bound => {}
                _ => return false,
            }
        }
        if let Some(bw) = req.avg_bandwidth {
            match self.avg_bandwidth {
                Some(c) if c >= bw => {}
                _ => return false,
            }
        }
        true
    }
}

/// Picks the lowest-id cube that satisfies every requested field.
pub fn select_cube(req: &QosRequirements, cubes: &[QosCube]) -> Option<QosId> {
    cubes
        .iter()
        .filter(|c| c.satisfies(req))
        .map(|c| c.id)
        .min()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdError {
    #[error("identifier space exhausted ({capacity} values in use)")]
    Exhausted { capacity: u32 },
}

/// Smallest-free allocator over `1..=capacity`. Zero means "unset".
#[derive(Debug, Clone)]
pub struct IdAllocator {
    capacity: u32,
    live: BTreeSet<u32>,
}

impl IdAllocator {
    pub fn new(capacity: u32) -> Self {
        IdAllocator {
            capacity,
            live: BTreeSet::new(),
        }
    }

    pub fn allocate(&mut self) -> Result<u32, IdError> {
        let mut candidate = 1;
        for &v in &self.live {
            if v != candidate {
                break;
            }
            candidate += 1;
        }
        if candidate > self.capacity {
            return Err(IdError::Exhausted {
                capacity: self.capacity,
            });
        }
        self.live.insert(candidate);
        Ok(candidate)
    }

    /// Returns false if the value was not allocated.
    pub fn release(&mut self, value: u32) -> bool {
        self.live.remove(&value)
    }

    pub fn is_live(&self, value: u32) -> bool {
        self.live.contains(&value)
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn live(&self) -> impl Iterator<Item = u32> + '_ {
        self.live.iter().copied()
    }
}

/// Port-id registry for one computing system.
#[derive(Debug, Clone)]
pub struct PortIdSpace(IdAllocator);

impl PortIdSpace {
    pub fn new(capacity: u32) -> Self {
        PortIdSpace(IdAllocator::new(capacity))
    }

    pub fn allocate_port_id(&mut self) -> Result<PortId, IdError> {
        self.0.allocate().map(PortId)
    }

    pub fn release(&mut self, port: PortId) -> bool {
        self.0.release(port.0)
    }

    pub fn is_live(&self, port: PortId) -> bool {
        self.0.is_live(port.0)
    }

    pub fn live(&self) -> Vec<PortId> {
        self.0.live().map(PortId).collect()
    }
}

/// CEP-id registry for one IPCP. Values fit the 16-bit wire field.
#[derive(Debug, Clone)]
pub struct CepIdSpace(IdAllocator);

impl Default for CepIdSpace {
    fn default() -> Self {
        CepIdSpace(IdAllocator::new(u16::MAX as u32))
    }
}

impl CepIdSpace {
    pub fn allocate_cep_id(&mut self) -> Result<CepId, IdError> {
        self.0.allocate().map(|v| CepId(v as u16))
    }

    pub fn release(&mut self, cep: CepId) -> bool {
        self.0.release(cep.0 as u32)
    }

    pub fn live(&self) -> Vec<CepId> {
        self.0.live().map(|v| CepId(v as u16)).collect()
    }
}
