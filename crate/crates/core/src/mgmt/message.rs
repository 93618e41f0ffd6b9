use std::fmt;

use serde::{Deserialize, Serialize};

use crate::identifiers::{Address, Apn, CepId, QosId};
use crate::mgmt::routing::Lsa;

/// Who is asking for a flow, to whom, and which endpoint ids each side
/// picked. Responses echo the request's descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowDescriptor {
    pub src_apn: Apn,
    pub dst_apn: Apn,
    pub src_cep: CepId,
    pub dst_cep: CepId,
    pub qos_id: QosId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MgmtBody {
    CreateFlowRequest {
        flow: FlowDescriptor,
    },
    CreateFlowResponse {
        flow: FlowDescriptor,
        positive: bool,
    },
    DeleteFlowRequest {
        flow: FlowDescriptor,
    },
    DeleteFlowResponse {
        flow: FlowDescriptor,
        positive: bool,
    },
    MConnect {
        dif: String,
        auth: String,
    },
    MConnectResponse {
        dif: String,
        positive: bool,
    },
    RoutingUpdate {
        lsa: Lsa,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MgmtKind {
    CreateFlowRequest,
    CreateFlowResponse,
    DeleteFlowRequest,
    DeleteFlowResponse,
    MConnect,
    MConnectResponse,
    RoutingUpdate,
}

impl MgmtKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MgmtKind::CreateFlowRequest => "CreateFlowRequest",
            MgmtKind::CreateFlowResponse => "CreateFlowResponse",
            MgmtKind::DeleteFlowRequest => "DeleteFlowRequest",
            MgmtKind::DeleteFlowResponse => "DeleteFlowResponse",
            MgmtKind::MConnect => "MConnect",
            MgmtKind::MConnectResponse => "MConnectResponse",
            MgmtKind::RoutingUpdate => "RoutingUpdate",
        }
    }
}

impl fmt::Display for MgmtKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MgmtMessage {
    pub src: Address,
    pub dst: Address,
    pub body: MgmtBody,
}

impl MgmtMessage {
    pub fn kind(&self) -> MgmtKind {
        match &self.body {
            MgmtBody::CreateFlowRequest { .. } => MgmtKind::CreateFlowRequest,
            MgmtBody::CreateFlowResponse { .. } => MgmtKind::CreateFlowResponse,
            MgmtBody::DeleteFlowRequest { .. } => MgmtKind::DeleteFlowRequest,
            MgmtBody::DeleteFlowResponse { .. } => MgmtKind::DeleteFlowResponse,
            MgmtBody::MConnect { .. } => MgmtKind::MConnect,
            MgmtBody::MConnectResponse { .. } => MgmtKind::MConnectResponse,
            MgmtBody::RoutingUpdate { .. } => MgmtKind::RoutingUpdate,
        }
    }

    pub fn flow(&self) -> Option<&FlowDescriptor> {
        match &self.body {
            MgmtBody::CreateFlowRequest { flow }
            | MgmtBody::CreateFlowResponse { flow, .. }
            | MgmtBody::DeleteFlowRequest { flow }
            | MgmtBody::DeleteFlowResponse { flow, .. } => Some(flow),
            _ => None,
        }
    }

    /// Result flag of response kinds.
    pub fn result(&self) -> Option<bool> {
        match &self.body {
            MgmtBody::CreateFlowResponse { positive, .. }
            | MgmtBody::DeleteFlowResponse { positive, .. }
            | MgmtBody::MConnectResponse { positive, .. } => Some(*positive),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("management messages always serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flow() -> FlowDescriptor {
        FlowDescriptor {
            src_apn: Apn::new("A"),
            dst_apn: Apn::new("B"),
            src_cep: CepId(1),
            dst_cep: CepId(0),
            qos_id: QosId(1),
        }
    }

    #[test]
    fn roundtrip_and_kind() {
        let m = MgmtMessage {
            src: Address(1),
            dst: Address(2),
            body: MgmtBody::CreateFlowResponse {
                flow: flow(),
                positive: true,
            },
        };
        let back = MgmtMessage::decode(&m.encode()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.kind(), MgmtKind::CreateFlowResponse);
        assert_eq!(back.result(), Some(true));
        assert_eq!(back.flow(), Some(&flow()));
    }

    #[test]
    fn unknown_kind_fails_to_decode() {
        let raw = br#"{"src":1,"dst":2,"body":{"kind":"Bogus"}}"#;
        assert!(MgmtMessage::decode(raw).is_err());
    }
}
