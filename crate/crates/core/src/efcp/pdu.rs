//! PDU framing.
//!
//! Every PDU carries a fixed 32-byte header:
//!
//! ```text
//! 0      4      8     10     12  13   14     16             24     28     32
//! | src  | dst  | scep | dcep |qos|kind| flags |     seq      |sdu-id|offset|
//! ```
//!
//! followed by an optional 4-byte checksum (flag bit 1) and the payload.
//! Flag bit 0 marks the last fragment, bit 2 the data-run flag.
//! All integers are big-endian.

use thiserror::Error;

use crate::identifiers::{Address, CepId, ConnectionId, QosId};

pub const HEADER_LEN: usize = 32;

const FLAG_LAST_FRAGMENT: u16 = 1 << 0;
const FLAG_CHECKSUM: u16 = 1 << 1;
const FLAG_DATA_RUN: u16 = 1 << 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PduKind {
    Data,
    Ack,
    Mgmt,
}

impl PduKind {
    fn code(self) -> u8 {
        match self {
            PduKind::Data => 1,
            PduKind::Ack => 2,
            PduKind::Mgmt => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(PduKind::Data),
            2 => Some(PduKind::Ack),
            3 => Some(PduKind::Mgmt),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PduKind::Data => "DATA",
            PduKind::Ack => "ACK",
            PduKind::Mgmt => "MGMT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdu {
    pub src_addr: Address,
    pub dst_addr: Address,
    pub connection_id: ConnectionId,
    /// Sequence number on DATA, cumulative ack value on ACK.
    pub seq: u64,
    pub kind: PduKind,
    pub checksum: Option<u32>,
    pub sdu_id: u32,
    pub frag_offset: u32,
    pub last_fragment: bool,
    /// Data-run flag: the sender has not yet seen an ack in this run, so
    /// the run started at sequence number 1.
    pub drf: bool,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer of {0} bytes is shorter than the PDU header")]
    Truncated(usize),
    #[error("unknown PDU kind {0}")]
    UnknownKind(u8),
}

impl Pdu {
    pub fn qos_id(&self) -> QosId {
        self.connection_id.qos_id
    }

    /// A management PDU addressed between two IPCPs; it has no connection.
    pub fn management(src: Address, dst: Address, payload: Vec<u8>) -> Self {
        Pdu {
            src_addr: src,
            dst_addr: dst,
            connection_id: ConnectionId::default(),
            seq: 0,
            kind: PduKind::Mgmt,
            checksum: None,
            sdu_id: 0,
            frag_offset: 0,
            last_fragment: true,
            drf: false,
            payload,
        }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + if self.checksum.is_some() { 4 } else { 0 } + self.payload.len()
    }

    pub fn wire_bits(&self) -> u64 {
        self.wire_len() as u64 * 8
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.src_addr.0.to_be_bytes());
        out.extend_from_slice(&self.dst_addr.0.to_be_bytes());
        out.extend_from_slice(&self.connection_id.src_cep.0.to_be_bytes());
        out.extend_from_slice(&self.connection_id.dst_cep.0.to_be_bytes());
        out.push(self.connection_id.qos_id.0);
        out.push(self.kind.code());
        let mut flags = 0u16;
        if self.last_fragment {
            flags |= FLAG_LAST_FRAGMENT;
        }
        if self.checksum.is_some() {
            flags |= FLAG_CHECKSUM;
        }
        if self.drf {
            flags |= FLAG_DATA_RUN;
        }
        out.extend_from_slice(&flags.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.sdu_id.to_be_bytes());
        out.extend_from_slice(&self.frag_offset.to_be_bytes());
        if let Some(c) = self.checksum {
            out.extend_from_slice(&c.to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self, DecodeError> {
        if buf.len() < HEADER_LEN {
            return Err(DecodeError::Truncated(buf.len()));
        }
        let u32_at = |i: usize| u32::from_be_bytes(buf[i..i + 4].try_into().unwrap());
        let u16_at = |i: usize| u16::from_be_bytes(buf[i..i + 2].try_into().unwrap());
        let kind = PduKind::from_code(buf[13]).ok_or(DecodeError::UnknownKind(buf[13]))?;
        let flags = u16_at(14);
        let mut body = HEADER_LEN;
        let checksum = if flags & FLAG_CHECKSUM != 0 {
            if buf.len() < HEADER_LEN + 4 {
                return Err(DecodeError::Truncated(buf.len()));
            }
            body += 4;
            Some(u32_at(HEADER_LEN))
        } else {
            None
        };
        Ok(Pdu {
            src_addr: Address(u32_at(0)),
            dst_addr: Address(u32_at(4)),
            connection_id: ConnectionId {
                src_cep: CepId(u16_at(8)),
                dst_cep: CepId(u16_at(10)),
                qos_id: QosId(buf[12]),
            },
            kind,
            seq: u64::from_be_bytes(buf[16..24].try_into().unwrap()),
            sdu_id: u32_at(24),
            frag_offset: u32_at(28),
            last_fragment: flags & FLAG_LAST_FRAGMENT != 0,
            drf: flags & FLAG_DATA_RUN != 0,
            checksum,
            payload: buf[body..].to_vec(),
        })
    }
}

/// Encapsulates an (N)-PDU as the SDU of an (N-1)-flow.
pub fn mux(pdu: &Pdu) -> Vec<u8> {
    pdu.encode()
}

/// Recovers the (N)-PDU from an (N-1)-SDU.
pub fn demux(sdu: &[u8]) -> Result<Pdu, DecodeError> {
    Pdu::decode(sdu)
}

#[cfg(test)]
pub(crate) mod strategies {
    use super::*;
    use proptest::prelude::*;

    pub fn arb_pdu() -> impl Strategy<Value = Pdu> {
        (
            (
                any::<u32>(),
                any::<u32>(),
                any::<u16>(),
                any::<u16>(),
                any::<u8>(),
            ),
            prop_oneof![Just(PduKind::Data), Just(PduKind::Ack), Just(PduKind::Mgmt)],
            any::<u64>(),
            proptest::option::of(any::<u32>()),
            (any::<u32>(), any::<u32>(), any::<bool>(), any::<bool>()),
            proptest::collection::vec(any::<u8>(), 0..256),
        )
            .prop_map(
                |((s, d, sc, dc, q), kind, seq, checksum, (sdu_id, off, last, drf), payload)| Pdu {
                    src_addr: Address(s),
                    dst_addr: Address(d),
                    connection_id: ConnectionId {
                        src_cep: CepId(sc),
                        dst_cep: CepId(dc),
                        qos_id: QosId(q),
                    },
                    seq,
                    kind,
                    checksum,
                    sdu_id,
                    frag_offset: off,
                    last_fragment: last,
                    drf,
                    payload,
                },
            )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_32_bytes() {
        let p = Pdu::management(Address(1), Address(2), vec![]);
        assert_eq!(p.encode().len(), HEADER_LEN);
        let mut q = p.clone();
        q.payload = vec![0; 10];
        q.checksum = Some(5);
        assert_eq!(q.encode().len(), 46);
        assert_eq!(q.wire_len(), 46);
    }

    #[test]
    fn rejects_short_and_unknown() {
        assert_eq!(Pdu::decode(&[0; 5]), Err(DecodeError::Truncated(5)));
        let mut raw = Pdu::management(Address(1), Address(2), vec![]).encode();
        raw[13] = 9;
        assert_eq!(Pdu::decode(&raw), Err(DecodeError::UnknownKind(9)));
    }

    #[test]
    fn nested_encapsulation() {
        let inner = Pdu::management(Address(3), Address(4), b"hello".to_vec());
        let mut outer = Pdu::management(Address(1), Address(2), mux(&inner));
        outer.kind = PduKind::Data;
        let back = demux(&Pdu::decode(&outer.encode()).unwrap().payload).unwrap();
        assert_eq!(back, inner);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn demux_inverts_mux(pdu in strategies::arb_pdu()) {
            let wire = mux(&pdu);
            prop_assert_eq!(wire.len(), pdu.wire_len());
            prop_assert_eq!(demux(&wire).unwrap(), pdu);
        }
    }
}
