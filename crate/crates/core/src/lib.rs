pub mod blowup;
pub mod error;
pub mod fit;
pub mod minimality;
pub mod norms;
mod pchip;
pub mod perturbation;
pub mod quadrature;
pub mod radial;
pub mod report;

pub use error::{Error, Result};
