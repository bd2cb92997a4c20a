pub mod error;
pub mod grid;
pub mod io;
pub mod levy;
pub mod heat_kernel;
pub mod stepping;
pub mod hamiltonian;
pub mod hjb;
pub mod measure;
mod transport;
pub mod fokker_planck;
pub mod coupling;
mod parallel;
pub mod mfg;
pub mod linearized;
pub mod master;
