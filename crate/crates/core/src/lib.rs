//! W1 displacement interpolations on finite graphs, computed both as the limit
//! of entropic problems over slowed-down random walks and directly from the
//! optimal face of the transport problem and its geodesic bridges.
//!
//! ```
//! use lazywalk::displacement::{limit_plan, Interpolation};
//! use lazywalk::graph::{build_simple_walk, intrinsic_distance, Graph};
//!
//! let g = Graph::path(4);
//! let d = intrinsic_distance(&g)?;
//! let (kernel, m) = build_simple_walk(&g);
//! let plan = limit_plan(&g, &d, &kernel, &m, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0])?;
//! let flow = Interpolation::from_coupling(&g, &d, &kernel, &plan.coupling);
//! let mid = flow.marginal(&0.5);
//! assert!((mid[1] - 0.375).abs() < 1e-15);
//! # Ok::<(), lazywalk::Error>(())
//! ```

pub mod bridge;
pub mod ctmc;
pub mod displacement;
pub mod error;
pub mod geodesy;
pub mod graph;
pub mod harness;
pub mod scalar;
pub mod schrodinger;
pub mod transport;

pub use error::{Error, Result};
