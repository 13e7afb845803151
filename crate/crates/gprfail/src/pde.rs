//! Fluxes, non-conservative products, algebraic sources and signal speeds of
//! the first-order system.
//!
//! The governing equations on the 24-component [`State`] are, per direction
//! `k` (summation over repeated indices, 2D: `k ∈ {x, y}`):
//!
//! ```text
//! ∂α/∂t  + v_k ∂α/∂x_k                                    = 0
//! ∂ρ/∂t  + ∂(ρ v_k)/∂x_k                                  = 0
//! ∂(αρv_i)/∂t + ∂(αρ v_i v_k + α p δ_ik − α σ_ik)/∂x_k    = 0
//! ∂A_ik/∂t + ∂(A_im v_m)/∂x_k + v_m(∂A_ik/∂x_m − ∂A_im/∂x_k) = −(3/τ1)(det A)^{5/3}(A G̊)_ik
//! ∂J_k/∂t + ∂(v_m J_m + T)/∂x_k + v_m(∂J_k/∂x_m − ∂J_m/∂x_k) = −(ρT/τ2) J_k
//! ∂ξ/∂t  + v_k ∂ξ/∂x_k                                    = −θ E_ξ
//! ∂(ρE)/∂t + ∂(v_k ρE + v_i(p δ_ik − σ_ik))/∂x_k          = 0
//! ∂λ/∂t + v_k ∂λ/∂x_k = 0   (same for μ, Y0, ρ0, mblend)
//! ```
//!
//! The splitting into a conservative flux, a non-conservative product
//! `B(Q)·∇Q` and an algebraic source mirrors the equations exactly: the
//! curl-type distortion/impulse terms and all material-carrier advection are
//! non-conservative, sources touch only `(ξ, A, J)`, so mass, momentum and
//! total energy are conserved by construction.

use crate::materials::{
    self, damage_rate_theta, energy_xi_derivative, equivalent_stress, finger_deviator,
    relaxation_time, EosError, EquivalentStressSpec, MaterialParams,
};
use crate::state::{idx, velocity, KineticState, Primitive, State, NV};
use nalgebra::{Matrix3, SMatrix, Vector3};

/// Default volume-fraction floor for velocity recovery in void regions.
pub const EPS_ALPHA: f64 = 1e-3;

/// The model a run is solving: up to two material tables blended by the
/// advected `mblend` field, the equivalent-stress criterion, and the
/// volume-fraction floor.
#[derive(Debug, Clone)]
pub struct Model {
    /// Material tables selected by `mblend = 0` / `mblend = 1`.
    pub mats: [MaterialParams; 2],
    /// Equivalent-stress criterion used by relaxation and damage rates.
    pub eq_stress: EquivalentStressSpec,
    /// Volume-fraction floor for velocity recovery.
    pub eps_alpha: f64,
}

impl Model {
    /// Single-material model with the von Mises criterion.
    pub fn single(mat: MaterialParams) -> Model {
        Model {
            mats: [mat, mat],
            eq_stress: EquivalentStressSpec::VonMises,
            eps_alpha: EPS_ALPHA,
        }
    }

    /// Effective material parameters at one point.
    ///
    /// The two tables are blended linearly by the advected `mblend` weight;
    /// the advected per-point fields then override the intact moduli
    /// (`lam_i`, `mu_i`), the damage-onset stress `y0` and the reference
    /// density `rho0`, so heterogeneous single-family setups (e.g. a stiff
    /// inclusion) only need the carrier fields.
    pub fn effective_material(&self, q: &State) -> MaterialParams {
        let mut mat = if q[idx::MBLEND] <= 0.0 {
            self.mats[0]
        } else if q[idx::MBLEND] >= 1.0 {
            self.mats[1]
        } else {
            self.mats[0].blend(&self.mats[1], q[idx::MBLEND])
        };
        mat.lam_i = q[idx::LAM];
        mat.mu_i = q[idx::MU];
        mat.y0 = q[idx::Y0];
        mat.rho0 = q[idx::RHO0];
        mat
    }

    /// Full thermodynamic evaluation of one state.
    pub fn thermo(&self, q: &State) -> Result<PointThermo, EosError> {
        let mat = self.effective_material(q);
        let v = velocity(q, self.eps_alpha);
        let a = crate::state::distortion(q);
        let j = crate::state::thermal_impulse(q);
        let rho = q[idx::RHO];
        let xi = q[idx::XI];
        let s = materials::entropy_from_energy(rho, &v, &a, &j, xi, q[idx::RHOE], &mat)?;
        let (p, t) = materials::thermodynamic_closure(rho, s, xi, &mat);
        let st = materials::ThermoState { rho, s, a, j, xi };
        let (sigma_total, sigma) = materials::stress_tensor(&st, &mat);
        let y = equivalent_stress(&sigma_total, &self.eq_stress);
        Ok(PointThermo {
            mat,
            v,
            s,
            p,
            t,
            sigma,
            sigma_total,
            y,
        })
    }

    /// Conserved → primitive conversion. `degenerate_alpha` flags points
    /// where the volume fraction had to be clipped for velocity recovery.
    pub fn cons_to_prim(&self, q: &State) -> Result<(Primitive, bool), EosError> {
        let th = self.thermo(q)?;
        let prim = Primitive {
            alpha: q[idx::ALPHA],
            rho: q[idx::RHO],
            v: th.v,
            a: crate::state::distortion(q),
            j: crate::state::thermal_impulse(q),
            xi: q[idx::XI],
            s: th.s,
            lam: q[idx::LAM],
            mu: q[idx::MU],
            y0: q[idx::Y0],
            rho0: q[idx::RHO0],
            mblend: q[idx::MBLEND],
        };
        Ok((prim, q[idx::ALPHA] < self.eps_alpha))
    }

    /// Primitive → conserved conversion using the effective material implied
    /// by the primitive's own carrier fields.
    pub fn prim_to_cons(&self, p: &Primitive) -> State {
        let mut probe: State = [0.0; NV];
        probe[idx::MBLEND] = p.mblend;
        probe[idx::LAM] = p.lam;
        probe[idx::MU] = p.mu;
        probe[idx::Y0] = p.y0;
        probe[idx::RHO0] = p.rho0;
        let mat = self.effective_material(&probe);
        crate::state::prim_to_cons(p, &mat)
    }

    /// Conservative flux in direction `dir` (0 = x, 1 = y).
    pub fn flux(&self, q: &State, th: &PointThermo, dir: usize) -> State {
        let mut f = [0.0; NV];
        let v = &th.v;
        let vd = v[dir];
        let alpha = q[idx::ALPHA];
        // mass
        f[idx::RHO] = q[idx::RHO] * vd;
        // momentum: α ρ v_i v_d + α p δ_id − α σ_id
        for i in 0..3 {
            f[idx::MX + i] = q[idx::MX + i] * vd - alpha * th.sigma[(i, dir)];
        }
        f[idx::MX + dir] += alpha * th.p;
        // distortion: column `dir` carries (A v)_i
        let a = crate::state::distortion(q);
        let av = a * v;
        for i in 0..3 {
            f[idx::A + 3 * i + dir] = av[i];
        }
        // thermal impulse: slot `dir` carries v·J + T
        let j = crate::state::thermal_impulse(q);
        f[idx::J + dir] = v.dot(&j) + th.t;
        // total energy: v_d ρE + p v_d − (σ v)_d
        let sv = th.sigma * v;
        f[idx::RHOE] = vd * q[idx::RHOE] + th.p * vd - sv[dir];
        f
    }

    /// Non-conservative product `B_x(Q)·∂Q/∂x + B_y(Q)·∂Q/∂y` given the two
    /// physical-space gradients.
    pub fn noncons_product(&self, v: &Vector3<f64>, gx: &State, gy: &State) -> State {
        let mut r = [0.0; NV];
        let adv = |slot: usize, r: &mut State| {
            r[slot] = v.x * gx[slot] + v.y * gy[slot];
        };
        adv(idx::ALPHA, &mut r);
        adv(idx::XI, &mut r);
        adv(idx::LAM, &mut r);
        adv(idx::MU, &mut r);
        adv(idx::Y0, &mut r);
        adv(idx::RHO0, &mut r);
        adv(idx::MBLEND, &mut r);
        // curl-type terms: v_m (∂A_ik/∂x_m − ∂A_im/∂x_k); only k ∈ {x,y}
        // has a resolved gradient in 2D.
        for i in 0..3 {
            for k in 0..3 {
                let slot = idx::A + 3 * i + k;
                let mut val = v.x * gx[slot] + v.y * gy[slot];
                if k < 2 {
                    let gk = if k == 0 { gx } else { gy };
                    for (m, vm) in [v.x, v.y, v.z].iter().enumerate() {
                        val -= vm * gk[idx::A + 3 * i + m];
                    }
                }
                r[slot] = val;
            }
        }
        for k in 0..3 {
            let slot = idx::J + k;
            let mut val = v.x * gx[slot] + v.y * gy[slot];
            if k < 2 {
                let gk = if k == 0 { gx } else { gy };
                for (m, vm) in [v.x, v.y, v.z].iter().enumerate() {
                    val -= vm * gk[idx::J + m];
                }
            }
            r[slot] = val;
        }
        r
    }

    /// Directional non-conservative matrix applied to a jump:
    /// `B_d(v)·Δq` for a gradient concentrated along axis `dir`.
    ///
    /// This is the building block of the path integral in the fluctuation
    /// solver: `B` depends on the state only through the velocity, so the
    /// straight-line path integral reduces to this form with the
    /// path-averaged velocity.
    pub fn noncons_normal(v: &Vector3<f64>, dir: usize, dq: &State) -> State {
        let mut r = [0.0; NV];
        let vd = v[dir];
        for slot in [
            idx::ALPHA,
            idx::XI,
            idx::LAM,
            idx::MU,
            idx::Y0,
            idx::RHO0,
            idx::MBLEND,
        ] {
            r[slot] = vd * dq[slot];
        }
        // Curl terms: a jump along axis `dir` contributes
        // v_d Δq − δ_{k,dir} Σ_m v_m ΔA_im (and likewise for J).
        for i in 0..3 {
            for k in 0..3 {
                let slot = idx::A + 3 * i + k;
                let mut val = vd * dq[slot];
                if k == dir {
                    for (m, vm) in [v.x, v.y, v.z].iter().enumerate() {
                        val -= vm * dq[idx::A + 3 * i + m];
                    }
                }
                r[slot] = val;
            }
        }
        for k in 0..3 {
            let mut val = vd * dq[idx::J + k];
            if k == dir {
                for (m, vm) in [v.x, v.y, v.z].iter().enumerate() {
                    val -= vm * dq[idx::J + m];
                }
            }
            r[idx::J + k] = val;
        }
        r
    }

    /// Velocity averaged along the straight-line path between two states
    /// with 3-point Gauss–Legendre quadrature.
    pub fn path_average_velocity(&self, ql: &State, qr: &State) -> Vector3<f64> {
        // Gauss-Legendre nodes/weights on [0,1], exact for degree 5.
        const S: [f64; 3] = [0.112701665379258, 0.5, 0.887298334620742];
        const W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
        let mut v = Vector3::zeros();
        for (s, w) in S.iter().zip(W.iter()) {
            let mut qs: State = [0.0; NV];
            for c in 0..NV {
                qs[c] = ql[c] + s * (qr[c] - ql[c]);
            }
            v += velocity(&qs, self.eps_alpha) * *w;
        }
        v
    }

    /// Algebraic source vector: strain relaxation on the distortion slots,
    /// damage growth on `ξ`, thermal-impulse relaxation on `J`. All
    /// conservative slots are exactly zero.
    pub fn algebraic_source(&self, q: &State, th: &PointThermo) -> State {
        let mut s = [0.0; NV];
        let kin = crate::state::kinetic_from_state(q);
        let rates = kinetic_source(&kin, q[idx::RHO], th.y, &th.mat);
        s[idx::XI] = rates[0];
        s[idx::A..idx::A + 9].copy_from_slice(&rates[1..10]);
        // J relaxation: −E_J/θ2 with θ2 = τ2 ch²/(ρT) reduces to −(ρT/τ2) J.
        let jfac = -q[idx::RHO] * th.t / th.mat.tau2;
        for k in 0..3 {
            s[idx::J + k] = jfac * q[idx::J + k];
        }
        s
    }

    /// Signal-speed estimate `|v·n| + max(√((λ+2μ)/ρ), ch)` in direction
    /// `dir`, using the advected (intact) moduli — an upper bound for the
    /// mixture's true characteristic speeds.
    pub fn max_signal_speed(&self, q: &State, dir: usize) -> f64 {
        let v = velocity(q, self.eps_alpha);
        let elastic = ((q[idx::LAM] + 2.0 * q[idx::MU]) / q[idx::RHO]).sqrt();
        let mat = self.effective_material(q);
        v[dir].abs() + elastic.max(mat.ch)
    }
}

/// Thermodynamic byproducts of one state evaluation.
#[derive(Debug, Clone)]
pub struct PointThermo {
    /// Effective (blended, carrier-overridden) material.
    pub mat: MaterialParams,
    /// Velocity [m/s].
    pub v: Vector3<f64>,
    /// Specific entropy.
    pub s: f64,
    /// Pressure [Pa].
    pub p: f64,
    /// Temperature [K].
    pub t: f64,
    /// Shear/thermal stress part σ [Pa].
    pub sigma: Matrix3<f64>,
    /// Total stress Σ = −pI + σ [Pa].
    pub sigma_total: Matrix3<f64>,
    /// Equivalent stress Y(Σ) [Pa].
    pub y: f64,
}

/// Kinetic `(ξ, A)` source rates with a frozen environment.
///
/// `rho` is the density used inside `E_ξ`; the PDE passes the conserved
/// density, the material-point laboratory passes `ρ0 · det A`.
pub fn kinetic_source(q: &KineticState, rho: f64, y: f64, mat: &MaterialParams) -> KineticState {
    let xi = q[0];
    let a = crate::state::kinetic_distortion(q);
    let (_, gdev) = finger_deviator(&a);
    let tau1 = relaxation_time(xi.clamp(0.0, 1.0), y, mat);
    let det_a = a.determinant();
    let factor = -3.0 / tau1 * det_a.powf(5.0 / 3.0);
    let agdev = a * gdev;
    let mut s = [0.0; 10];
    s[0] = -damage_rate_theta(xi.clamp(0.0, 1.0), y, mat) * energy_xi_derivative(rho, &gdev, xi.clamp(0.0, 1.0), mat);
    for r in 0..3 {
        for c in 0..3 {
            s[1 + 3 * r + c] = factor * agdev[(r, c)];
        }
    }
    s
}

/// Block split of the kinetic source Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSplit {
    /// `{ξ} ∪ {all nine A components}`.
    TwoBlock,
    /// `{ξ} ∪ {A11,A22,A33} ∪ {A12,A13,A21} ∪ {A23,A31,A32}`.
    FourBlock,
}

/// Index groups of the three 3×3 distortion blocks in the four-block split
/// (positions within the 9-vector `A11..A33`).
pub const FOUR_BLOCK_GROUPS: [[usize; 3]; 3] = [[0, 4, 8], [1, 2, 3], [5, 6, 7]];

/// Block-diagonal Jacobian of the kinetic source.
#[derive(Debug, Clone)]
pub enum SourceJacobian {
    /// ξ-block plus one 9×9 distortion block.
    Two { j_xi: f64, j_a: SMatrix<f64, 9, 9> },
    /// ξ-block plus three 3×3 distortion blocks (diagonal, upper, lower).
    Four {
        j_xi: f64,
        blocks: [SMatrix<f64, 3, 3>; 3],
    },
}

/// Assembles the block source Jacobian and the exact nonlinear source at
/// `q`, with the equivalent stress `y` and the relaxation time frozen.
///
/// The ξ-derivative is a central finite difference of the full damage rate
/// with the stress (hence `y`) frozen; the distortion derivatives are the
/// analytic Jacobian of `S_A = −(3/τ1)(det A)^{5/3} A G̊` at frozen `τ1`. All
/// couplings between ξ and A (and, in the four-block split, between the
/// distortion groups) are suppressed.
pub fn source_jacobian_blocks(
    q: &KineticState,
    rho: f64,
    y: f64,
    mat: &MaterialParams,
    split: BlockSplit,
) -> (SourceJacobian, KineticState) {
    let source = kinetic_source(q, rho, y, mat);

    // ξ block: central difference with evaluation points clamped into [0,1].
    // The step is proportional to the damage level (floored by the seed ξε):
    // during bootstrap ξ sits many decades below any fixed step, and a fixed
    // step's secant would sample the convex damage law across those decades,
    // overestimating the local slope by orders of magnitude — enough to turn
    // the midpoint relinearization that consumes this block into a divergent
    // oscillation whose negative ξ excursions destroy the bootstrap.
    let xi = q[0].clamp(0.0, 1.0);
    let h = 1e-6 * (xi + mat.xi_eps);
    let xi_p = (xi + h).min(1.0);
    let xi_m = (xi - h).max(0.0);
    let a = crate::state::kinetic_distortion(q);
    let (_, gdev) = finger_deviator(&a);
    let s_xi = |x: f64| -damage_rate_theta(x, y, mat) * energy_xi_derivative(rho, &gdev, x, mat);
    let j_xi = if xi_p > xi_m {
        (s_xi(xi_p) - s_xi(xi_m)) / (xi_p - xi_m)
    } else {
        0.0
    };

    let j_a = distortion_jacobian(&a, relaxation_time(xi, y, mat));

    let jac = match split {
        BlockSplit::TwoBlock => SourceJacobian::Two { j_xi, j_a },
        BlockSplit::FourBlock => {
            let mut blocks = [SMatrix::<f64, 3, 3>::zeros(); 3];
            for (g, group) in FOUR_BLOCK_GROUPS.iter().enumerate() {
                for (r, &gr) in group.iter().enumerate() {
                    for (c, &gc) in group.iter().enumerate() {
                        blocks[g][(r, c)] = j_a[(gr, gc)];
                    }
                }
            }
            SourceJacobian::Four { j_xi, blocks }
        }
    };
    (jac, source)
}

/// Analytic 9×9 Jacobian of `S_A = −(3/τ1)(det A)^{5/3} A G̊` with `τ1`
/// frozen. Row-major component order `A11..A33`.
///
/// With `f(A) = (det A)^{5/3} (A G̊)`:
///
/// ```text
/// ∂f_ik/∂A_pq = 5/3 (det A)^{5/3} (A⁻ᵀ)_pq (A G̊)_ik
///             + (det A)^{5/3} [ δ_ip G̊_qk + A_iq A_pk + δ_kq (A Aᵀ)_ip − 2/3 A_ik A_pq ]
/// ```
fn distortion_jacobian(a: &Matrix3<f64>, tau1: f64) -> SMatrix<f64, 9, 9> {
    let (_, gdev) = finger_deviator(a);
    let det_a = a.determinant();
    let det53 = det_a.powf(5.0 / 3.0);
    let agdev = a * gdev;
    let aat = a * a.transpose();
    let a_inv_t = a
        .try_inverse()
        .map(|inv| inv.transpose())
        .unwrap_or_else(Matrix3::zeros);
    let scale = -3.0 / tau1;
    let mut jac = SMatrix::<f64, 9, 9>::zeros();
    for i in 0..3 {
        for k in 0..3 {
            let row = 3 * i + k;
            for p in 0..3 {
                for qc in 0..3 {
                    let col = 3 * p + qc;
                    let mut d = 5.0 / 3.0 * det53 * a_inv_t[(p, qc)] * agdev[(i, k)];
                    let mut inner = 0.0;
                    if i == p {
                        inner += gdev[(qc, k)];
                    }
                    inner += a[(i, qc)] * a[(p, k)];
                    if k == qc {
                        inner += aat[(i, p)];
                    }
                    inner -= 2.0 / 3.0 * a[(i, k)] * a[(p, qc)];
                    d += det53 * inner;
                    jac[(row, col)] = scale * d;
                }
            }
        }
    }
    jac
}
