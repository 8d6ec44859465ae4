//! Robust joint source/relay beamforming for a two-hop relay wiretap network.

use openblas_src as _;

pub mod alternating;
pub mod harness;
pub mod linalg;
pub mod rounding;
pub mod subproblem;
pub mod sysmodel;
