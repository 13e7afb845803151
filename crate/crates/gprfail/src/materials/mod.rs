//! Material parameter tables, the damage-mixture constitutive closure, and
//! all thermodynamic derivatives of the total energy potential.
//!
//! The solid is modelled as a mixture of an *intact* phase (subscript `_i`)
//! and a *fully damaged* phase (subscript `_d`), weighted by the scalar
//! damage variable `ξ ∈ [0,1]` (`ξ = 0` intact, `ξ = 1` damaged). Both phases
//! are hyperelastic with their own Lamé moduli and their own shear-stress
//! relaxation times; the mixture closure below interpolates compliances, so
//! the softer phase dominates as soon as it appears:
//!
//! ```text
//! μ(ξ) = μ_i μ_d / μ̃,   μ̃ = ξ μ_i + (1-ξ) μ_d
//! K(ξ) = K_i K_d / K̃,   K̃ = ξ K_i + (1-ξ) K_d,   K_* = λ_* + 2/3 μ_*
//! λ(ξ) = K(ξ) - 2/3 μ(ξ)
//! ```
//!
//! The specific total energy splits into a volumetric/thermal part `E1`, a
//! mesoscale (shear + thermal impulse) part `E2` and kinetic energy `E3`:
//!
//! ```text
//! E1 = K/(2 ρ0) (1 - ρ/ρ0)² + cv T0 (ρ/ρ0)(e^{S/cv} - 1)
//! E2 = 1/4 cs² tr(G̊ G̊) + 1/2 ch² J·J,    cs² = μ(ξ)/ρ0,  G̊ = dev(AᵀA)
//! E3 = 1/2 v·v
//! ```
//!
//! Pressure, temperature and the stress tensor are the exact analytic
//! derivatives of this potential (`p = ρ² E_ρ`, `T = E_S`,
//! `σ_ik = -ρ A_ji E_{A_jk} + ρ J_i E_{J_k}`); the unit tests check every one
//! of them against central finite differences of [`specific_total_energy`].
//!
//! All functions here are pure; there is no shared mutable state.

mod table;

pub use table::{builtin_material_names, material_by_name};

use nalgebra::{Matrix3, Vector3};
use serde::Deserialize;

/// Exponent clamp used inside [`relaxation_time`]. Relaxation times beyond
/// `e^{700}` s are indistinguishable from infinity for the dynamics, and the
/// clamp keeps `exp` away from floating-point overflow/underflow.
pub const EXP_CLAMP: f64 = 700.0;

fn default_xi_eps() -> f64 {
    1e-16
}
fn default_cv() -> f64 {
    1000.0
}
fn default_t0() -> f64 {
    300.0
}
fn default_ch() -> f64 {
    0.0
}
fn default_tau2() -> f64 {
    1.0
}

/// Parameter set of one damageable material (SI units).
///
/// The `_i`/`_d` pairs are the intact/fully-damaged values mixed by the
/// damage variable `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Reference density [kg·m⁻³].
    pub rho0: f64,
    /// Intact shear modulus [Pa].
    pub mu_i: f64,
    /// Damaged shear modulus [Pa].
    pub mu_d: f64,
    /// Intact first Lamé parameter [Pa].
    pub lam_i: f64,
    /// Damaged first Lamé parameter [Pa].
    pub lam_d: f64,
    /// Intact relaxation-time prefactor [s].
    pub tau0_i: f64,
    /// Damaged relaxation-time prefactor [s].
    pub tau0_d: f64,
    /// Intact relaxation exponent offset [–].
    pub alpha_i: f64,
    /// Damaged relaxation exponent offset [–].
    pub alpha_d: f64,
    /// Intact stress sensitivity of the relaxation time [Pa⁻¹].
    pub beta_i: f64,
    /// Damaged stress sensitivity of the relaxation time [Pa⁻¹].
    pub beta_d: f64,
    /// Damage-rate prefactor [–].
    pub theta0: f64,
    /// Damage-onset yield stress [Pa].
    pub y0: f64,
    /// Propagation yield stress [Pa].
    pub y1: f64,
    /// Damage-onset exponent [–].
    pub a: f64,
    /// Seed damage keeping the rate equation away from the `ξ = 0` fixed
    /// point [–].
    #[serde(default = "default_xi_eps")]
    pub xi_eps: f64,
    /// Specific heat capacity [J·kg⁻¹·K⁻¹].
    #[serde(default = "default_cv")]
    pub cv: f64,
    /// Reference temperature [K].
    #[serde(default = "default_t0")]
    pub t0: f64,
    /// Heat-wave (thermal impulse) speed [m·s⁻¹].
    #[serde(default = "default_ch")]
    pub ch: f64,
    /// Thermal-impulse relaxation time [s].
    #[serde(default = "default_tau2")]
    pub tau2: f64,
}

impl MaterialParams {
    /// Intact bulk modulus `K_i = λ_i + 2/3 μ_i` [Pa].
    pub fn k_i(&self) -> f64 {
        self.lam_i + 2.0 / 3.0 * self.mu_i
    }

    /// Damaged bulk modulus `K_d = λ_d + 2/3 μ_d` [Pa].
    pub fn k_d(&self) -> f64 {
        self.lam_d + 2.0 / 3.0 * self.mu_d
    }

    /// Longitudinal (pressure-wave) speed of the intact material [m/s].
    pub fn pressure_wave_speed(&self) -> f64 {
        ((self.lam_i + 2.0 * self.mu_i) / self.rho0).sqrt()
    }

    /// Acoustic impedance `ρ0 · c_p` of the intact material [kg·m⁻²·s⁻¹].
    pub fn impedance(&self) -> f64 {
        self.rho0 * self.pressure_wave_speed()
    }

    /// Linear interpolation of every scalar parameter between `self`
    /// (weight `1-m`) and `other` (weight `m`).
    ///
    /// Used for diffuse two-material regions: the blend weight is itself an
    /// advected field, so cells inside a smeared material interface see a
    /// continuous parameter set.
    pub fn blend(&self, other: &MaterialParams, m: f64) -> MaterialParams {
        let w = m.clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + (b - a) * w;
        MaterialParams {
            rho0: lerp(self.rho0, other.rho0),
            mu_i: lerp(self.mu_i, other.mu_i),
            mu_d: lerp(self.mu_d, other.mu_d),
            lam_i: lerp(self.lam_i, other.lam_i),
            lam_d: lerp(self.lam_d, other.lam_d),
            tau0_i: lerp(self.tau0_i, other.tau0_i),
            tau0_d: lerp(self.tau0_d, other.tau0_d),
            alpha_i: lerp(self.alpha_i, other.alpha_i),
            alpha_d: lerp(self.alpha_d, other.alpha_d),
            beta_i: lerp(self.beta_i, other.beta_i),
            beta_d: lerp(self.beta_d, other.beta_d),
            theta0: lerp(self.theta0, other.theta0),
            y0: lerp(self.y0, other.y0),
            y1: lerp(self.y1, other.y1),
            a: lerp(self.a, other.a),
            xi_eps: lerp(self.xi_eps, other.xi_eps),
            cv: lerp(self.cv, other.cv),
            t0: lerp(self.t0, other.t0),
            ch: lerp(self.ch, other.ch),
            tau2: lerp(self.tau2, other.tau2),
        }
    }

    /// Copy of `self` with yield stresses pushed beyond any reachable stress
    /// and the damage rate switched off — an "unbreakable" variant used by
    /// verification scenarios that need pure hyperelasticity.
    pub fn unbreakable(&self) -> MaterialParams {
        MaterialParams {
            y0: 1e22,
            y1: 1e22,
            theta0: 0.0,
            ..*self
        }
    }
}

/// Scalar equivalent-stress measure extracted from the total stress tensor.
///
/// `Ys = √(3/2 tr(devΣ · devΣ))` is the von Mises shear intensity and
/// `Yp = tr(Σ)/3` the mean (tensile-positive) stress. The variants weight
/// the two differently; all reduce to functions `Y(Σ)` used both by the
/// relaxation time and by the damage rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquivalentStressSpec {
    /// `Y = Ys`: purely deviatoric, pressure-insensitive.
    VonMises,
    /// `Y = A·Ys + B·|Yp|`: shear plus a symmetric pressure contribution.
    LinearCombination { a: f64, b: f64 },
    /// `Y = B·|Yp| + A·(Ys - s0)/2 · [1 + erf((Ys - s0)/eps)]`: the shear
    /// term switches on smoothly once `Ys` exceeds the offset `s0`.
    ErfSmoothed { a: f64, b: f64, s0: f64, eps: f64 },
    /// `Y = A·Ys + B·Yp + C`: pressure-*signed* combination; compression
    /// (negative `Yp`) strengthens the material.
    DruckerPrager { a: f64, b: f64, c: f64 },
}

impl EquivalentStressSpec {
    /// Shear/pressure weights used by the plate-impact studies.
    pub fn linear_default() -> Self {
        EquivalentStressSpec::LinearCombination { a: 0.9, b: 0.05 }
    }

    /// Smoothed criterion with the published offset `s0 = 1.8 GPa`; the
    /// smoothing width scales with the damage-onset stress of the material.
    pub fn erf_default(y0: f64) -> Self {
        EquivalentStressSpec::ErfSmoothed {
            a: 0.3,
            b: 0.33,
            s0: 1.8e9,
            eps: 1e-3 * y0,
        }
    }

    /// Drucker–Prager-like weights used by the diametral-compression test.
    pub fn drucker_prager_default() -> Self {
        EquivalentStressSpec::DruckerPrager {
            a: 1.0,
            b: 1.5,
            c: -2.0e6,
        }
    }
}

/// Thermodynamic state of one material point (velocity carried separately).
#[derive(Debug, Clone, Copy)]
pub struct ThermoState {
    /// Density [kg·m⁻³], `> 0`.
    pub rho: f64,
    /// Specific entropy [J·kg⁻¹·K⁻¹].
    pub s: f64,
    /// Distortion field (local basis triad), `det A > 0`.
    pub a: Matrix3<f64>,
    /// Thermal impulse [model units].
    pub j: Vector3<f64>,
    /// Damage variable in `[0,1]`.
    pub xi: f64,
}

/// Errors from the equation-of-state inversion.
#[derive(Debug, Clone, thiserror::Error)]
pub enum EosError {
    /// The conserved total energy leaves no room for a positive thermal
    /// contribution: the argument of the entropy logarithm dropped to
    /// `{arg} ≤ 0`. The state is corrupted and the caller must reject it
    /// (e.g. flag the cell for limiting).
    #[error("non-physical total energy: entropy logarithm argument {arg:.6e} <= 0")]
    NonPhysicalEnergy { arg: f64 },
}

/// Mixture elastic moduli `(λ(ξ), μ(ξ), K(ξ))` [Pa].
///
/// Compliance-type interpolation: exact intact moduli at `ξ = 0`, exact
/// damaged moduli at `ξ = 1`, and the soft phase dominating in between
/// (`μ(1/2)` is twice the harmonic mean's half, not the arithmetic mean).
pub fn mixture_moduli(xi: f64, mat: &MaterialParams) -> (f64, f64, f64) {
    let k_i = mat.k_i();
    let k_d = mat.k_d();
    let k_tilde = xi * k_i + (1.0 - xi) * k_d;
    let mu_tilde = xi * mat.mu_i + (1.0 - xi) * mat.mu_d;
    let mu = mat.mu_i * mat.mu_d / mu_tilde;
    let k = k_i * k_d / k_tilde;
    let lambda = k - 2.0 / 3.0 * mu;
    (lambda, mu, k)
}

/// Mixture shear-stress relaxation time `τ1(ξ, Y)` [s].
///
/// Each phase relaxes on a stress-dependent time scale
/// `τ_i = tau0_i · exp(α_i - β_i (1-ξ) Y)` and
/// `τ_d = tau0_d · exp(α_d - β_d ξ Y)`; the mixture combines the *rates*:
/// `τ1 = [(1-ξ)/τ_i + ξ/τ_d]⁻¹`. Exponent arguments are clamped to
/// `±`[`EXP_CLAMP`] so extreme stresses saturate instead of overflowing.
pub fn relaxation_time(xi: f64, y: f64, mat: &MaterialParams) -> f64 {
    let e_i = (mat.alpha_i - mat.beta_i * (1.0 - xi) * y).clamp(-EXP_CLAMP, EXP_CLAMP);
    let e_d = (mat.alpha_d - mat.beta_d * xi * y).clamp(-EXP_CLAMP, EXP_CLAMP);
    let tau_i = mat.tau0_i * e_i.exp();
    let tau_d = mat.tau0_d * e_d.exp();
    1.0 / ((1.0 - xi) / tau_i + xi / tau_d)
}

/// Damage-rate prefactor `θ(ξ, Y) ≥ 0` multiplying `-E_ξ` in the damage
/// source `dξ/dt = -θ E_ξ`.
///
/// `θ = θ0 (1-ξ)(ξ+ξ_eps) [ (1-ξ)(Y/Y0)^a + ξ (Y/Y1) ]`. The `(Y/Y0)^a`
/// term (typically with a large exponent `a`) gates damage *onset*; the
/// `ξ·Y/Y1` term drives propagation once damage exists. The seed `ξ_eps`
/// keeps `ξ = 0` from being an exact fixed point. Negative equivalent
/// stresses (possible for signed criteria) are clamped to zero: stress
/// states inside the yield surface do no damage.
pub fn damage_rate_theta(xi: f64, y: f64, mat: &MaterialParams) -> f64 {
    let y = y.max(0.0);
    let onset = (y / mat.y0).powf(mat.a);
    let propagation = y / mat.y1;
    mat.theta0 * (1.0 - xi) * (xi + mat.xi_eps) * ((1.0 - xi) * onset + xi * propagation)
}

/// Finger tensor `G = AᵀA` and its deviator `G̊ = G - (tr G / 3) I`.
pub fn finger_deviator(a: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let g = a.transpose() * a;
    let third_trace = g.trace() / 3.0;
    let mut gdev = g;
    gdev[(0, 0)] -= third_trace;
    gdev[(1, 1)] -= third_trace;
    gdev[(2, 2)] -= third_trace;
    (g, gdev)
}

/// Derivative of the specific total energy with respect to damage,
/// `E_ξ` [J·kg⁻¹]. Non-positive whenever the intact phase is the stiffer
/// one, so the damage source `-θ E_ξ` is non-negative.
pub fn energy_xi_derivative(rho: f64, gdev: &Matrix3<f64>, xi: f64, mat: &MaterialParams) -> f64 {
    let k_i = mat.k_i();
    let k_d = mat.k_d();
    let k_tilde = xi * k_i + (1.0 - xi) * k_d;
    let mu_tilde = xi * mat.mu_i + (1.0 - xi) * mat.mu_d;
    let strain = 1.0 - rho / mat.rho0;
    let gdev_sq = (gdev * gdev).trace();
    let vol = -((k_i - k_d) * k_i * k_d / (k_tilde * k_tilde)) * strain * strain
        / (2.0 * mat.rho0);
    let shear = -((mat.mu_i - mat.mu_d) * mat.mu_i * mat.mu_d / (mu_tilde * mu_tilde)) * gdev_sq
        / (4.0 * mat.rho0);
    vol + shear
}

/// Specific total energy `E = E1 + E2 + E3` [J·kg⁻¹].
pub fn specific_total_energy(st: &ThermoState, v: &Vector3<f64>, mat: &MaterialParams) -> f64 {
    let (_, mu, k) = mixture_moduli(st.xi, mat);
    let (_, gdev) = finger_deviator(&st.a);
    let strain = 1.0 - st.rho / mat.rho0;
    // exp_m1 keeps the thermal term accurate for |S| << cv, where e^{S/cv}-1
    // would lose all significant digits.
    let e1 = k / (2.0 * mat.rho0) * strain * strain
        + mat.cv * mat.t0 * (st.rho / mat.rho0) * (st.s / mat.cv).exp_m1();
    let cs2 = mu / mat.rho0;
    let e2 = 0.25 * cs2 * (gdev * gdev).trace() + 0.5 * mat.ch * mat.ch * st.j.norm_squared();
    let e3 = 0.5 * v.norm_squared();
    e1 + e2 + e3
}

/// Inverts the total-energy potential for the specific entropy `S`.
///
/// The solver evolves the conserved volumetric energy `ρE`; every
/// thermodynamic evaluation therefore starts by peeling off the kinetic,
/// mesoscale and volumetric contributions and solving
/// `cv T0 (ρ/ρ0)(e^{S/cv}-1) = E_thermal` for `S`. The `ln_1p`/`exp_m1`
/// pair keeps the round trip exact to machine precision even when the
/// thermal energy is many orders of magnitude below the elastic one.
pub fn entropy_from_energy(
    rho: f64,
    v: &Vector3<f64>,
    a: &Matrix3<f64>,
    j: &Vector3<f64>,
    xi: f64,
    rho_e: f64,
    mat: &MaterialParams,
) -> Result<f64, EosError> {
    let (_, mu, k) = mixture_moduli(xi, mat);
    let (_, gdev) = finger_deviator(a);
    let strain = 1.0 - rho / mat.rho0;
    let e_vol = k / (2.0 * mat.rho0) * strain * strain;
    let cs2 = mu / mat.rho0;
    let e_meso = 0.25 * cs2 * (gdev * gdev).trace() + 0.5 * mat.ch * mat.ch * j.norm_squared();
    let e_kin = 0.5 * v.norm_squared();
    let e_thermal = rho_e / rho - e_vol - e_meso - e_kin;
    let x = e_thermal / (mat.cv * mat.t0 * (rho / mat.rho0));
    if x <= -1.0 {
        return Err(EosError::NonPhysicalEnergy { arg: 1.0 + x });
    }
    Ok(mat.cv * x.ln_1p())
}

/// Pressure `p = ρ² E_ρ` [Pa] and temperature `T = E_S` [K] from the exact
/// analytic derivatives of the energy potential.
pub fn thermodynamic_closure(rho: f64, s: f64, xi: f64, mat: &MaterialParams) -> (f64, f64) {
    let (_, _, k) = mixture_moduli(xi, mat);
    // dE1/drho = -K/rho0^2 (1 - rho/rho0) + cv T0 / rho0 (e^{S/cv} - 1)
    let p = rho * rho
        * (-k / (mat.rho0 * mat.rho0) * (1.0 - rho / mat.rho0)
            + mat.cv * mat.t0 / mat.rho0 * (s / mat.cv).exp_m1());
    let t = mat.t0 * (rho / mat.rho0) * (s / mat.cv).exp();
    (p, t)
}

/// Shear/thermal stress part `σ` and total stress `Σ = -p I + σ` [Pa].
///
/// `σ_ik = -ρ A_ji E_{A_jk} + ρ J_i E_{J_k}` with the closed-form
/// derivatives `E_A = cs² A G̊` and `E_J = ch² J`, which collapse to
/// `σ = -ρ cs² G G̊ + ρ ch² J⊗J` (symmetric because `G` and `G̊` commute).
pub fn stress_tensor(st: &ThermoState, mat: &MaterialParams) -> (Matrix3<f64>, Matrix3<f64>) {
    let (_, mu, _) = mixture_moduli(st.xi, mat);
    let cs2 = mu / mat.rho0;
    let (g, gdev) = finger_deviator(&st.a);
    let mut sigma = (g * gdev) * (-st.rho * cs2);
    if mat.ch != 0.0 {
        let jj = st.j * st.j.transpose();
        sigma += jj * (st.rho * mat.ch * mat.ch);
    }
    let (p, _) = thermodynamic_closure(st.rho, st.s, st.xi, mat);
    let mut total = sigma;
    total[(0, 0)] -= p;
    total[(1, 1)] -= p;
    total[(2, 2)] -= p;
    (total, sigma)
}

/// Scalar equivalent stress `Y(Σ)` [Pa] for the chosen criterion.
pub fn equivalent_stress(sigma_total: &Matrix3<f64>, spec: &EquivalentStressSpec) -> f64 {
    let y_p = sigma_total.trace() / 3.0;
    let mut dev = *sigma_total;
    dev[(0, 0)] -= y_p;
    dev[(1, 1)] -= y_p;
    dev[(2, 2)] -= y_p;
    let y_s = (1.5 * (dev * dev).trace()).max(0.0).sqrt();
    match *spec {
        EquivalentStressSpec::VonMises => y_s,
        EquivalentStressSpec::LinearCombination { a, b } => a * y_s + b * y_p.abs(),
        EquivalentStressSpec::ErfSmoothed { a, b, s0, eps } => {
            let z = (y_s - s0) / eps;
            b * y_p.abs() + a * 0.5 * (y_s - s0) * (1.0 + libm::erf(z))
        }
        EquivalentStressSpec::DruckerPrager { a, b, c } => a * y_s + b * y_p + c,
    }
}
