//! Primal-dual saddle-point dynamics for nonsmooth convex programs.
//!
//! The crate integrates two continuous-time flows on the augmented Lagrangian
//!
//! ```text
//! L(x, λ) = f(x) + ‖Ax − b‖² / (2μ) + ⟨λ, Ax − b⟩ + κ Σ_k max(0, g_k(x))
//! ```
//!
//! * [`dynamics::Mode::Spd`]: subgradient descent in `x`, ascent in `λ`.
//! * [`dynamics::Mode::Spld`]: the same flow with the exact penalty replaced by a
//!   projection onto the tangent cone of `{g ≤ 0}`, which needs no `κ`.
//!
//! [`certify`] turns a trajectory into Lyapunov and exponential-rate checks and
//! [`network`] runs the projected flow as a message-passing protocol between
//! agents that each own one coordinate of `x`.

pub mod calculus;
pub mod certify;
pub mod dynamics;
pub mod error;
pub mod lagrangian;
pub mod network;
pub mod problem;
pub mod sparse;

pub use error::{Error, Result};
pub use sparse::SparseMatrix;
