use std::fmt;

use thiserror::Error;

use crate::identifiers::{Address, Dan};
use crate::mgmt::message::MgmtBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EnrollState {
    NotEnrolled,
    Connecting,
    Enrolled,
    Failed,
}

impl EnrollState {
    pub fn as_str(self) -> &'static str {
        match self {
            EnrollState::NotEnrolled => "NOT_ENROLLED",
            EnrollState::Connecting => "CONNECTING",
            EnrollState::Enrolled => "ENROLLED",
            EnrollState::Failed => "FAILED",
        }
    }
}

impl fmt::Display for EnrollState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnrollError {
    #[error("enrollment with {peer} cannot start from state {state}")]
    InvalidState { peer: Address, state: EnrollState },
}

/// Enrollment with one neighbour: an MConnect carrying the DIF name and a
/// shared secret, answered by MConnectResponse(+/-).
#[derive(Debug, Clone)]
pub struct EnrollmentFsm {
    pub state: EnrollState,
    pub peer: Address,
    pub dif: Dan,
    pub auth: String,
}

impl EnrollmentFsm {
    pub fn new(peer: Address, dif: Dan, auth: impl Into<String>) -> Self {
        EnrollmentFsm {
            state: EnrollState::NotEnrolled,
            peer,
            dif,
            auth: auth.into(),
        }
    }

    /// Initiator side: produces the MConnect and moves to CONNECTING.
    pub fn enroll_initiate(&mut self) -> Result<MgmtBody, EnrollError> {
        if self.state != EnrollState::NotEnrolled {
            return Err(EnrollError::InvalidState {
                peer: self.peer,
                state: self.state,
            });
        }
        self.state = EnrollState::Connecting;
        Ok(MgmtBody::MConnect {
            dif: self.dif.0.clone(),
            auth: self.auth.clone(),
        })
    }

    /// Initiator side: the peer answered. Late answers after a timeout are
    /// ignored.
    pub fn on_response(&mut self, positive: bool) -> EnrollState {
        if self.state == EnrollState::Connecting {
            self.state = if positive {
                EnrollState::Enrolled
            } else {
                EnrollState::Failed
            };
        }
        self.state
    }

    pub fn on_timeout(&mut self) -> EnrollState {
        if self.state == EnrollState::Connecting {
            self.state = EnrollState::Failed;
        }
        self.state
    }

    /// Responder side: checks the MConnect and returns the response body.
    pub fn on_mconnect(&mut self, dif: &str, auth: &str) -> MgmtBody {
        let positive = dif == self.dif.0 && auth == self.auth;
        if positive {
            self.state = EnrollState::Enrolled;
        } else if self.state != EnrollState::Enrolled {
            self.state = EnrollState::Failed;
        }
        MgmtBody::MConnectResponse {
            dif: self.dif.0.clone(),
            positive,
        }
    }

    pub fn is_enrolled(&self) -> bool {
        self.state == EnrollState::Enrolled
    }
}
