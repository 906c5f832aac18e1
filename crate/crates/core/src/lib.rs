pub mod circuits;
pub mod error;
pub mod evolution;
pub mod lattice;
pub mod observables;
pub mod oracle;
pub mod statevector;

pub use circuits::CircuitMode;
pub use error::{Error, Result};
pub use evolution::{AdiabaticSchedule, DecompositionKind, Direction};
pub use lattice::Lattice;
pub use statevector::StateVector;
