//! Problem model and search environment for one-to-one pickup-and-delivery
//! tours (PDTSP and its LIFO-loading variant).
//!
//! A problem instance has a depot plus `n` pickup-delivery requests laid out
//! in the unit square. A solution is a single cyclic tour visiting every node
//! once. Under `Pdtsp` each pickup must precede its delivery; under
//! `PdtspLifo` the vehicle additionally loads rear-only, so goods can only be
//! delivered while on top of the stack (equivalently: request intervals along
//! the tour are nested or disjoint).
//!
//! The crate provides the tour representation, feasibility and insertion-mask
//! rules, the improvement-step environment (remove a request pair, reinsert
//! it, reward = reduction of the best cost so far), an exhaustive oracle for
//! small instances, and plain-text instance I/O.

pub mod construct;
pub mod error;
pub mod feasibility;
pub mod history;
pub mod instance;
pub mod io;
pub mod oracle;
pub mod route;
pub mod state;

pub use error::{Error, Result};
pub use feasibility::{is_feasible, lifo_stack_trace, reinsertion_mask, LifoViolation, ReinsertionMask};
pub use history::ActionHistory;
pub use instance::{Instance, Variant};
pub use oracle::{brute_force_solve, BruteForceResult};
pub use route::{apply_action, PairAction, Route};
pub use state::{reward, SearchState, StepOutcome};
