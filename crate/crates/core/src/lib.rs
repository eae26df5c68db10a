//! Joint shortest-time routing and signal-free intersection coordination for
//! connected automated vehicles.

pub mod coord;
pub mod motion;
pub mod netgraph;
pub mod poly;
pub mod route;
pub mod sim;
