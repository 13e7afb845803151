//! A unified first-order hyperbolic model of nonlinear hyperelasticity with
//! material failure, and the solvers built on top of it.
//!
//! The model describes an elastoplastic solid with a scalar damage field
//! through a single symmetric-hyperbolic PDE system: mass, momentum and total
//! energy conservation coupled to the evolution of a distortion field `A`
//! (whose Finger tensor `G = AᵀA` carries the elastic strain), a thermal
//! impulse `J`, a damage variable `ξ ∈ [0,1]`, and a diffuse-interface volume
//! fraction `α` for free surfaces. Intact and fully damaged material respond
//! with different elastic moduli and different shear-stress relaxation times;
//! the constitutive closure mixes the two branches as functions of `ξ`, so
//! failure is the (possibly very stiff) relaxation of strength, not a mesh
//! surgery operation.
//!
//! Crate layout:
//!
//! * [`materials`] — parameter tables, the damage-mixture closure and every
//!   thermodynamic derivative (pressure, temperature, stress, equivalent
//!   stress measures).
//! * [`state`] — the 24-component conserved state vector and conversions.
//! * [`pde`] — fluxes, non-conservative products, algebraic sources and
//!   signal speeds of the first-order system.
//! * [`expint`] — an adaptive exponential time integrator for the stiff
//!   damage/relaxation kinetics, plus blunt reference integrators (RK4,
//!   backward Euler) used as accuracy baselines.
//! * [`material_point`] — a zero-dimensional "virtual laboratory" driving a
//!   single material point with a prescribed strain rate; produces
//!   stress–strain diagrams, rate sweeps and fatigue (Wöhler-type) curves.
//! * [`ader`] — a one-step space-time discontinuous Galerkin solver on 2D
//!   Cartesian grids with an a-posteriori subcell finite-volume limiter.
//! * [`scenario`] — run configuration, built-in presets, initial-condition
//!   builders and CSV/VTK writers behind the `gprfail` command line.

pub mod ader;
pub mod expint;
pub mod material_point;
pub mod materials;
pub mod pde;
pub mod scenario;
pub mod state;
