//! Optical-flow input maps for micro-expression models.
//!
//! Produces the three-channel model input `[Vx, Vy, Vz]` from an
//! onset/apex frame pair: a robust coarse-to-fine flow solver with a
//! Lorentzian penalty, the optical-strain channel derived from the
//! flow's first-order derivatives, and bilinear resizing to the model
//! resolution. Also owns the on-disk formats for grayscale frames (P5)
//! and flow maps (RCNF).

mod apex;
mod error;
mod flowmap;
mod frame;
mod grid;
mod pgm;
mod rcnf;
mod solver;
mod strain;

pub use apex::locate_apex;
pub use error::{FlowError, Result};
pub use flowmap::{assemble_flow_map, FlowMap};
pub use frame::Frame;
pub use grid::Grid;
pub use pgm::{read_frame, write_frame, write_gray_image};
pub use rcnf::{read_flow_map, write_flow_map, RCNF_MAGIC, RCNF_VERSION};
pub use solver::{
    estimate_flow, estimate_flow_with_trace, FlowField, FlowSolverConfig, SolverTrace,
};
pub use strain::optical_strain;
