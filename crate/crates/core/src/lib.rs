//! Finite element solver for the three-dimensional quad-curl problem
//! `curl^4 u = f`, `div u = 0`, split into a Maxwell, a Stokes and a second
//! Maxwell solve, with residual estimators and an adaptive refinement loop.

pub mod afem;
pub mod assembly;
pub mod cases;
pub mod estimator;
pub mod fespace;
pub mod linsolve;
pub mod mesh;
pub mod pipeline;
pub mod quadrature;
pub mod sparse;
pub mod vec3;
