pub mod error;
pub mod fluct;
pub mod freeprob;
pub mod linearize;
pub mod linmat;
pub mod ncalg;
pub mod outlier;
pub mod pipeline;
pub mod simulate;

pub use error::{Error, Result};
pub use linmat::{ComplexMatrix, HermitianMatrix};
pub use linearize::Linearization;
pub use ncalg::{Monomial, NCPolynomial};
