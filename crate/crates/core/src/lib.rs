pub mod controller;
pub mod error;
pub mod interval;
pub mod sampling;
pub mod simlab;
pub mod steadystate;
pub mod sysmodel;
pub mod zonegen;

pub use error::{Result, ZempcError};
pub use interval::IntervalBox;
