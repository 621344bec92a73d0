//! Quorum-sensing population models: vector fields, integration,
//! equilibria, continuation, normal forms and chaos diagnostics.

pub mod models;
pub mod solve;
pub mod equilibria;
pub mod normalform;
pub mod chaos;
pub mod continuation;
