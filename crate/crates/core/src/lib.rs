pub mod model;
pub mod scenario;
pub mod solver;
pub mod dispatch;
pub mod pricing;
pub mod settlement;
pub mod harness;
