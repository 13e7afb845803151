//! The conserved state vector of the first-order system and conversions.
//!
//! One grid point carries 24 scalars in a fixed order:
//!
//! | slot  | field     | meaning                                        |
//! |-------|-----------|------------------------------------------------|
//! | 0     | `alpha`   | solid volume fraction (diffuse interface)      |
//! | 1     | `rho`     | density [kg·m⁻³]                               |
//! | 2–4   | `m1..m3`  | momentum `α ρ v_i` [kg·m⁻²·s⁻¹]                |
//! | 5–13  | `A11..A33`| distortion field, row-major                    |
//! | 14–16 | `J1..J3`  | thermal impulse                                |
//! | 17    | `xi`      | damage ∈ [0,1]                                 |
//! | 18    | `rhoE`    | volumetric total energy `ρ E` [J·m⁻³]          |
//! | 19    | `lam`     | advected local first Lamé parameter [Pa]       |
//! | 20    | `mu`      | advected local shear modulus [Pa]              |
//! | 21    | `y0`      | advected local damage-onset stress [Pa]        |
//! | 22    | `rho0`    | advected local reference density [kg·m⁻³]      |
//! | 23    | `mblend`  | advected material-table blend weight ∈ [0,1]   |
//!
//! The trailing five slots are *material carriers*: they move with the flow
//! (pure advection, no flux) so heterogeneous setups keep their local
//! parameters without any Lagrangian bookkeeping. The kinetic pair `(ξ, A)`
//! integrated by the stiff-source integrator is gathered into a
//! [`KineticState`] ten-vector (damage first, then the distortion rows).

use nalgebra::{Matrix3, Vector3};

/// Number of conserved components per point.
pub const NV: usize = 24;

/// Component indices into a [`State`].
pub mod idx {
    /// Solid volume fraction.
    pub const ALPHA: usize = 0;
    /// Density.
    pub const RHO: usize = 1;
    /// Momentum `α ρ v_x`.
    pub const MX: usize = 2;
    /// Momentum `α ρ v_y`.
    pub const MY: usize = 3;
    /// Momentum `α ρ v_z`.
    pub const MZ: usize = 4;
    /// First distortion component `A11`; row-major, `A(r,c)` at `A + 3r + c`.
    pub const A: usize = 5;
    /// First thermal-impulse component `J1`.
    pub const J: usize = 14;
    /// Damage variable.
    pub const XI: usize = 17;
    /// Volumetric total energy `ρE`.
    pub const RHOE: usize = 18;
    /// Advected first Lamé parameter (intact).
    pub const LAM: usize = 19;
    /// Advected shear modulus (intact).
    pub const MU: usize = 20;
    /// Advected damage-onset stress.
    pub const Y0: usize = 21;
    /// Advected reference density.
    pub const RHO0: usize = 22;
    /// Advected material blend weight.
    pub const MBLEND: usize = 23;
}

/// Conserved state at one point.
pub type State = [f64; NV];

/// The `(ξ, A11..A33)` ten-vector evolved by the stiff kinetics integrator
/// (damage first, then the distortion rows).
pub type KineticState = [f64; 10];

/// Extracts the distortion matrix from a state.
#[inline]
pub fn distortion(q: &State) -> Matrix3<f64> {
    Matrix3::new(
        q[idx::A], q[idx::A + 1], q[idx::A + 2],
        q[idx::A + 3], q[idx::A + 4], q[idx::A + 5],
        q[idx::A + 6], q[idx::A + 7], q[idx::A + 8],
    )
}

/// Writes a distortion matrix into a state.
#[inline]
pub fn set_distortion(q: &mut State, a: &Matrix3<f64>) {
    for r in 0..3 {
        for c in 0..3 {
            q[idx::A + 3 * r + c] = a[(r, c)];
        }
    }
}

/// Extracts the thermal impulse vector.
#[inline]
pub fn thermal_impulse(q: &State) -> Vector3<f64> {
    Vector3::new(q[idx::J], q[idx::J + 1], q[idx::J + 2])
}

/// Velocity `v = m / (max(α, eps_alpha) ρ)`.
///
/// The clamp keeps the division well-defined in void (`α → 0`) regions,
/// where the momentum is zero as well.
#[inline]
pub fn velocity(q: &State, eps_alpha: f64) -> Vector3<f64> {
    let denom = q[idx::ALPHA].max(eps_alpha) * q[idx::RHO];
    Vector3::new(q[idx::MX], q[idx::MY], q[idx::MZ]) / denom
}

/// Gathers the kinetic `(ξ, A)` ten-vector from a state.
#[inline]
pub fn kinetic_from_state(q: &State) -> KineticState {
    let mut k = [0.0; 10];
    k[0] = q[idx::XI];
    k[1..10].copy_from_slice(&q[idx::A..idx::A + 9]);
    k
}

/// Scatters a kinetic ten-vector back into a state.
#[inline]
pub fn kinetic_into_state(k: &KineticState, q: &mut State) {
    q[idx::XI] = k[0];
    q[idx::A..idx::A + 9].copy_from_slice(&k[1..10]);
}

/// Distortion matrix view of a kinetic ten-vector.
#[inline]
pub fn kinetic_distortion(k: &KineticState) -> Matrix3<f64> {
    Matrix3::new(k[1], k[2], k[3], k[4], k[5], k[6], k[7], k[8], k[9])
}

/// Primitive description of one point, used by initial-condition builders.
#[derive(Debug, Clone, Copy)]
pub struct Primitive {
    /// Solid volume fraction.
    pub alpha: f64,
    /// Density [kg·m⁻³].
    pub rho: f64,
    /// Velocity [m·s⁻¹].
    pub v: Vector3<f64>,
    /// Distortion field.
    pub a: Matrix3<f64>,
    /// Thermal impulse.
    pub j: Vector3<f64>,
    /// Damage.
    pub xi: f64,
    /// Specific entropy [J·kg⁻¹·K⁻¹].
    pub s: f64,
    /// Advected intact Lamé parameter [Pa].
    pub lam: f64,
    /// Advected intact shear modulus [Pa].
    pub mu: f64,
    /// Advected damage-onset stress [Pa].
    pub y0: f64,
    /// Advected reference density [kg·m⁻³].
    pub rho0: f64,
    /// Material blend weight.
    pub mblend: f64,
}

impl Primitive {
    /// Quiescent reference state of a material: `ρ = ρ0`, `A = I`, `v = 0`,
    /// `S = 0`, intact, fully solid.
    pub fn reference(mat: &crate::materials::MaterialParams) -> Primitive {
        Primitive {
            alpha: 1.0,
            rho: mat.rho0,
            v: Vector3::zeros(),
            a: Matrix3::identity(),
            j: Vector3::zeros(),
            xi: 0.0,
            s: 0.0,
            lam: mat.lam_i,
            mu: mat.mu_i,
            y0: mat.y0,
            rho0: mat.rho0,
            mblend: 0.0,
        }
    }
}

/// Converts a primitive point description to the conserved state.
///
/// The total energy slot is filled from the energy potential of the
/// *effective* material at this point, which must therefore be supplied by
/// the caller (see [`crate::pde::Model::effective_material`]).
pub fn prim_to_cons(p: &Primitive, mat: &crate::materials::MaterialParams) -> State {
    let mut q = [0.0; NV];
    q[idx::ALPHA] = p.alpha;
    q[idx::RHO] = p.rho;
    q[idx::MX] = p.alpha * p.rho * p.v.x;
    q[idx::MY] = p.alpha * p.rho * p.v.y;
    q[idx::MZ] = p.alpha * p.rho * p.v.z;
    set_distortion(&mut q, &p.a);
    q[idx::J] = p.j.x;
    q[idx::J + 1] = p.j.y;
    q[idx::J + 2] = p.j.z;
    q[idx::XI] = p.xi;
    let st = crate::materials::ThermoState {
        rho: p.rho,
        s: p.s,
        a: p.a,
        j: p.j,
        xi: p.xi,
    };
    q[idx::RHOE] = p.rho * crate::materials::specific_total_energy(&st, &p.v, mat);
    q[idx::LAM] = p.lam;
    q[idx::MU] = p.mu;
    q[idx::Y0] = p.y0;
    q[idx::RHO0] = p.rho0;
    q[idx::MBLEND] = p.mblend;
    q
}
