//! Management plane: RIB daemon messages, enrollment, routing.

pub mod enrollment;
pub mod message;
pub mod routing;

pub use enrollment::{EnrollError, EnrollState, EnrollmentFsm};
pub use message::{FlowDescriptor, MgmtBody, MgmtKind, MgmtMessage};
pub use routing::{
    shortest_paths, LinkStateDb, Lsa, Route, RoutingPolicy, RoutingState, RoutingStep,
};
