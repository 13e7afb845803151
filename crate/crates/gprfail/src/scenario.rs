//! Run configuration, built-in scenario presets, initial-condition builders
//! and the CSV/VTK writers behind the `simulate` command line.
//!
//! A scenario is described by a flat text format of `[section]` headers and
//! `key = value` lines (`#` starts a comment). Five presets ship embedded in
//! the binary; a config file may start from one with `preset = <name>` and
//! override individual keys. The geometric initial-condition machinery is
//! deliberately generic: a scenario is a base material plus
//!
//! * an optional Gaussian longitudinal wave packet (`[pwave]`),
//! * a uniform pre-stress / velocity (`[initial]`), and
//! * an ordered list of `[region]` blocks whose smoothed indicator fields
//!   modify the volume fraction, damage, material-blend weight, advected
//!   material parameters, or velocity inside a shape.
//!
//! The distortion field realizing a prescribed stress is computed per node
//! by a Newton inversion of the exact stress map ([`init_a_from_stress`]).

use crate::ader::{build_basis, Boundary, BoundaryConfig, Grid2D, SolverError, StepReport};
use crate::materials::{
    material_by_name, stress_tensor, EquivalentStressSpec, MaterialParams, ThermoState,
};
use crate::pde::Model;
use crate::state::{distortion, Primitive, State};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Configuration-file rejection, always carrying a location.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    /// Malformed line or value.
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },
    /// A key that no section defines.
    #[error("{source_name}:{line}: unknown key `{key}` in section [{section}]")]
    UnknownKey {
        source_name: String,
        line: usize,
        section: String,
        key: String,
    },
    /// A required key that never appeared.
    #[error("{source_name}: section [{section}] is missing required key `{key}`")]
    MissingKey {
        source_name: String,
        section: String,
        key: String,
    },
    /// `preset = <name>` named something that is not shipped.
    #[error("unknown preset `{name}` (shipped: {})", preset_names().join(", "))]
    UnknownPreset { name: String },
    /// Config file could not be read.
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Newton inversion of the stress map did not converge.
#[derive(Debug, Clone, thiserror::Error)]
#[error(
    "distortion initialization did not converge within {iterations} iterations \
     (residual {residual:.3e}, target {target:.3e})"
)]
pub struct NewtonFailure {
    /// Iterations spent.
    pub iterations: usize,
    /// Final residual norm ‖f(s) − Σ⁰‖ [Pa].
    pub residual: f64,
    /// Convergence threshold that was not met [Pa].
    pub target: f64,
}

/// Anything that can abort a scenario run.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// The grid solver failed irrecoverably.
    #[error("solver failure at t = {t:.6e} s after {steps} steps: {source}")]
    Solver {
        t: f64,
        steps: usize,
        #[source]
        source: SolverError,
    },
    /// Initial-condition construction failed.
    #[error("initial condition at (x, y) = ({x:.6e}, {y:.6e}): {source}")]
    InitialCondition {
        x: f64,
        y: f64,
        #[source]
        source: NewtonFailure,
    },
    /// Output files could not be written.
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

// ---------------------------------------------------------------------------
// Distortion from stress (Newton inversion of the exact stress map)
// ---------------------------------------------------------------------------

/// In-plane rotation by `theta` about the z axis.
pub fn rotation_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Result of [`init_a_from_stress`].
#[derive(Debug, Clone, Copy)]
pub struct DistortionInit {
    /// Distortion field realizing the requested stress.
    pub a: Matrix3<f64>,
    /// Density consistent with the distortion, `ρ = ρ0 · det A` [kg·m⁻³].
    pub rho: f64,
    /// Newton iterations spent.
    pub iterations: usize,
    /// Final residual norm ‖f(s) − Σ⁰‖ [Pa].
    pub residual: f64,
}

/// Total stress components `(Σ11, Σ22, Σ33, Σ12, Σ23, Σ13)` of the intact
/// material at rest entropy for a lower-triangular-times-rotation distortion
/// parameterized by `s`, with the density held consistent (`ρ = ρ0 det A`).
fn stress_of_params(s: &Vector6<f64>, theta: f64, mat: &MaterialParams) -> Vector6<f64> {
    let l = Matrix3::new(s[0], 0.0, 0.0, s[1], s[2], 0.0, s[3], s[4], s[5]);
    let a = l * rotation_z(theta);
    let rho = mat.rho0 * a.determinant();
    let st = ThermoState {
        rho,
        s: 0.0,
        a,
        j: Vector3::zeros(),
        xi: 0.0,
    };
    let (total, _) = stress_tensor(&st, mat);
    Vector6::new(
        total[(0, 0)],
        total[(1, 1)],
        total[(2, 2)],
        total[(0, 1)],
        total[(1, 2)],
        total[(0, 2)],
    )
}

/// Inverts the stress map: finds the distortion `A = L(s)·R(theta)`, with
/// `L` lower triangular, whose total stress at rest entropy equals `sigma0 =
/// (Σ11, Σ22, Σ33, Σ12, Σ23, Σ13)` in the intact material.
///
/// Newton iteration from the unstressed guess `s = (1,0,1,0,0,1)` with a
/// forward-difference Jacobian (relative step `1e-7`); converged when
/// `‖f(s) − Σ⁰‖ ≤ 1e-9 · max(1, ‖Σ⁰‖)`, failed after 100 iterations. The
/// returned density satisfies the algebraic constraint `ρ = ρ0 · det A`.
pub fn init_a_from_stress(
    sigma0: &[f64; 6],
    theta: f64,
    mat: &MaterialParams,
) -> Result<DistortionInit, NewtonFailure> {
    let target_vec = Vector6::from_column_slice(sigma0);
    let tol = 1e-9 * target_vec.norm().max(1.0);
    let mut s = Vector6::new(1.0, 0.0, 1.0, 0.0, 0.0, 1.0);
    let mut f = stress_of_params(&s, theta, mat) - target_vec;
    let mut res = f.norm();
    for it in 0..100 {
        if res <= tol {
            let l = Matrix3::new(s[0], 0.0, 0.0, s[1], s[2], 0.0, s[3], s[4], s[5]);
            let a = l * rotation_z(theta);
            return Ok(DistortionInit {
                a,
                rho: mat.rho0 * a.determinant(),
                iterations: it,
                residual: res,
            });
        }
        let mut jac = Matrix6::zeros();
        for j in 0..6 {
            let h = 1e-7 * s[j].abs().max(1.0);
            let mut sp = s;
            sp[j] += h;
            let fp = stress_of_params(&sp, theta, mat) - target_vec;
            for i in 0..6 {
                jac[(i, j)] = (fp[i] - f[i]) / h;
            }
        }
        let Some(delta) = jac.lu().solve(&f) else {
            return Err(NewtonFailure {
                iterations: it,
                residual: res,
                target: tol,
            });
        };
        s -= delta;
        f = stress_of_params(&s, theta, mat) - target_vec;
        res = f.norm();
    }
    Err(NewtonFailure {
        iterations: 100,
        residual: res,
        target: tol,
    })
}

// ---------------------------------------------------------------------------
// Diffuse-interface profile
// ---------------------------------------------------------------------------

/// Diffuse volume-fraction profile of a signed distance `s` (negative inside
/// the solid) with smoothing length `d`: `α = ½ (1 − erf(s/d))`. Exactly ½
/// on the surface, saturating to 1 inside and 0 outside within a few `d`.
pub fn smooth_volume_fraction(signed_distance: f64, d: f64) -> f64 {
    assert!(d > 0.0, "smoothing length must be positive");
    0.5 * (1.0 - libm::erf(signed_distance / d))
}

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

/// Geometric primitive used by `[region]` blocks. Every shape provides a
/// signed distance (negative inside; approximate but exact on the surface),
/// which drives either a sharp indicator or the erf profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Disc of radius `r` centered at `(cx, cy)`.
    Disc { cx: f64, cy: f64, r: f64 },
    /// Rectangle rotated by `angle` about its center `(cx, cy)`, with half
    /// extents `half_length` (along the rotated axis) and `half_width`.
    Strip {
        cx: f64,
        cy: f64,
        angle: f64,
        half_length: f64,
        half_width: f64,
    },
    /// Points below the surface `y = base − amplitude · sin(wavenumber · x)`.
    SineBelow {
        base: f64,
        amplitude: f64,
        wavenumber: f64,
    },
}

impl Shape {
    /// Signed distance to the shape boundary, negative inside.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        match *self {
            Shape::Rect { x0, x1, y0, y1 } => {
                (x0 - x).max(x - x1).max(y0 - y).max(y - y1)
            }
            Shape::Disc { cx, cy, r } => ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r,
            Shape::Strip {
                cx,
                cy,
                angle,
                half_length,
                half_width,
            } => {
                let (s, c) = angle.sin_cos();
                let dx = x - cx;
                let dy = y - cy;
                let u = c * dx + s * dy;
                let w = -s * dx + c * dy;
                (u.abs() - half_length).max(w.abs() - half_width)
            }
            Shape::SineBelow {
                base,
                amplitude,
                wavenumber,
            } => y - (base - amplitude * (wavenumber * x).sin()),
        }
    }
}

/// Field modifications applied inside one region. Unset fields are left
/// untouched; set fields are blended toward the region value with the
/// region's indicator weight.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegionSet {
    /// Solid volume fraction.
    pub alpha: Option<f64>,
    /// Damage variable.
    pub xi: Option<f64>,
    /// Material blend weight (0 = first material, 1 = second).
    pub mblend: Option<f64>,
    /// Advected intact first Lamé parameter [Pa].
    pub lam: Option<f64>,
    /// Advected intact shear modulus [Pa].
    pub mu: Option<f64>,
    /// Advected damage-onset stress [Pa].
    pub y0: Option<f64>,
    /// Advected reference density [kg·m⁻³].
    pub rho0: Option<f64>,
    /// Velocity override [m·s⁻¹].
    pub velocity: Option<Vector3<f64>>,
}

/// One `[region]` block: a shape, an optional smoothing length for its
/// indicator, and the fields it modifies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub shape: Shape,
    /// Smoothing length of the indicator [m]; `0` means a sharp indicator.
    pub smooth: f64,
    pub set: RegionSet,
}

impl Region {
    /// Indicator weight at a point: 1 deep inside, 0 far outside, the erf
    /// profile of [`smooth_volume_fraction`] across the boundary when a
    /// smoothing length is set.
    pub fn weight(&self, x: f64, y: f64) -> f64 {
        let s = self.shape.signed_distance(x, y);
        if self.smooth > 0.0 {
            smooth_volume_fraction(s, self.smooth)
        } else if s <= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

/// Gaussian longitudinal wave packet: along the propagation axis `c`,
/// stress `σ = ε·R_σ·exp(−½ ((c−center)/delta)²)` and velocity
/// `v = ε·R_v·exp(−½ ((c−center)/delta)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PWave {
    /// Propagation axis: 0 = x, 1 = y.
    pub axis: usize,
    /// Packet center along the axis [m].
    pub center: f64,
    /// Gaussian width δ [m].
    pub delta: f64,
    /// Amplitude factor ε.
    pub epsilon: f64,
    /// Stress direction `(R_11, R_22, R_33, R_12, R_23, R_13)` [Pa].
    pub rsigma: [f64; 6],
    /// Velocity direction [m·s⁻¹].
    pub rvel: Vector3<f64>,
}

/// One `[probe]` block: a time-series sampling point.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub x: f64,
    pub y: f64,
    /// Output file stem (`<name>.csv`).
    pub name: String,
}

/// Fully resolved run description.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    /// Run name (used in output file names).
    pub name: String,
    /// Domain bounds `(x0, x1, y0, y1)` [m].
    pub bounds: (f64, f64, f64, f64),
    /// Cells per direction.
    pub nx: usize,
    pub ny: usize,
    /// Polynomial degree of the DG solver.
    pub degree: usize,
    /// CFL number.
    pub cfl: f64,
    /// Final time [s].
    pub t_end: f64,
    /// Snapshot interval [s]; `0` writes only the initial and final frames.
    pub output_every: f64,
    /// First (carrier) material.
    pub material: MaterialParams,
    /// Second material blended in by `mblend`; equals the first when absent.
    pub material2: MaterialParams,
    /// Equivalent-stress criterion for relaxation and damage.
    pub eq_stress: EquivalentStressSpec,
    /// Boundary treatment of the four sides.
    pub boundaries: BoundaryConfig,
    /// Uniform initial total stress `(Σ11, Σ22, Σ33, Σ12, Σ23, Σ13)` [Pa].
    pub sigma0: [f64; 6],
    /// Principal-direction angle used by the distortion initialization.
    pub theta: f64,
    /// Uniform initial velocity [m·s⁻¹].
    pub velocity0: Vector3<f64>,
    /// Base solid volume fraction before regions apply.
    pub alpha0: f64,
    /// Optional wave packet.
    pub pwave: Option<PWave>,
    /// Ordered region list.
    pub regions: Vec<Region>,
    /// Probe points.
    pub probes: Vec<Probe>,
}

impl ScenarioConfig {
    fn validate(&self, source_name: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::Parse {
            source_name: source_name.to_string(),
            line: 0,
            msg,
        };
        let (x0, x1, y0, y1) = self.bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(bad(format!(
                "domain bounds must be ordered: x {x0}..{x1}, y {y0}..{y1}"
            )));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(bad("nx and ny must be positive".into()));
        }
        if self.degree > 4 {
            return Err(bad(format!("degree {} not supported (0..=4)", self.degree)));
        }
        if !(self.t_end > 0.0) {
            return Err(bad(format!("t_end must be positive, got {}", self.t_end)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(bad(format!("cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if self.output_every < 0.0 {
            return Err(bad("output_every must be non-negative".into()));
        }
        let px = self.boundaries.west == Boundary::Periodic;
        if px != (self.boundaries.east == Boundary::Periodic) {
            return Err(bad("periodic boundaries must pair up in x".into()));
        }
        let py = self.boundaries.south == Boundary::Periodic;
        if py != (self.boundaries.north == Boundary::Periodic) {
            return Err(bad("periodic boundaries must pair up in y".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

/// Shipped preset names.
pub fn preset_names() -> Vec<&'static str> {
    vec![
        "stiff_inclusion",
        "plate_impact_1d",
        "brazilian_disc",
        "rupture_2d",
        "sine_surface",
    ]
}

/// Embedded preset text by name.
pub fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "stiff_inclusion" => Some(PRESET_STIFF_INCLUSION),
        "plate_impact_1d" => Some(PRESET_PLATE_IMPACT_1D),
        "brazilian_disc" => Some(PRESET_BRAZILIAN_DISC),
        "rupture_2d" => Some(PRESET_RUPTURE_2D),
        "sine_surface" => Some(PRESET_SINE_SURFACE),
        _ => None,
    }
}

/// One parsed `key = value` occurrence.
#[derive(Debug, Clone)]
struct RawEntry {
    line: usize,
    key: String,
    value: String,
}

/// One `[section]` instance in source order.
#[derive(Debug, Clone)]
struct RawSection {
    name: String,
    line: usize,
    entries: Vec<RawEntry>,
}

/// Lexed config file: the top-level entries plus section instances.
#[derive(Debug, Clone, Default)]
struct RawConfig {
    top: Vec<RawEntry>,
    sections: Vec<RawSection>,
}

fn lex_config(text: &str, source_name: &str) -> Result<RawConfig, ConfigError> {
    let mut raw = RawConfig::default();
    let mut current: Option<RawSection> = None;
    for (i, full_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match full_line.find('#') {
            Some(p) => &full_line[..p],
            None => full_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                return Err(ConfigError::Parse {
                    source_name: source_name.to_string(),
                    line: line_no,
                    msg: format!("malformed section header `{line}`"),
                });
            };
            if let Some(sec) = current.take() {
                raw.sections.push(sec);
            }
            current = Some(RawSection {
                name: name.trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                source_name: source_name.to_string(),
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let entry = RawEntry {
            line: line_no,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        };
        match current.as_mut() {
            Some(sec) => sec.entries.push(entry),
            None => raw.top.push(entry),
        }
    }
    if let Some(sec) = current.take() {
        raw.sections.push(sec);
    }
    Ok(raw)
}

/// Typed accessor over one section's key/value entries with unknown-key
/// detection and line-located errors.
struct SectionReader<'a> {
    source_name: &'a str,
    section: &'a str,
    entries: BTreeMap<&'a str, (usize, &'a str)>,
    known: Vec<&'static str>,
}

impl<'a> SectionReader<'a> {
    fn new(source_name: &'a str, section: &'a str, entries: &'a [RawEntry]) -> Self {
        let mut map = BTreeMap::new();
        for e in entries {
            // Later occurrences override earlier ones (preset overlay).
            map.insert(e.key.as_str(), (e.line, e.value.as_str()));
        }
        SectionReader {
            source_name,
            section,
            entries: map,
            known: Vec::new(),
        }
    }

    fn raw(&mut self, key: &'static str) -> Option<(usize, &'a str)> {
        self.known.push(key);
        self.entries.get(key).copied()
    }

    fn parse_err(&self, line: usize, msg: String) -> ConfigError {
        ConfigError::Parse {
            source_name: self.source_name.to_string(),
            line,
            msg,
        }
    }

    fn f64(&mut self, key: &'static str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.parse_err(line, format!("`{key}` expects a number, got `{v}`"))),
        }
    }

    fn f64_req(&mut self, key: &'static str) -> Result<f64, ConfigError> {
        self.f64(key)?.ok_or_else(|| ConfigError::MissingKey {
            source_name: self.source_name.to_string(),
            section: self.section.to_string(),
            key: key.to_string(),
        })
    }

    fn usize(&mut self, key: &'static str) -> Result<Option<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<usize>().map(Some).map_err(|_| {
                self.parse_err(line, format!("`{key}` expects a non-negative integer, got `{v}`"))
            }),
        }
    }

    fn bool(&mut self, key: &'static str) -> Result<Option<bool>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => match v {
                "true" => Ok(Some(true)),
                "false" => Ok(Some(false)),
                _ => Err(self.parse_err(line, format!("`{key}` expects true/false, got `{v}`"))),
            },
        }
    }

    fn string(&mut self, key: &'static str) -> Option<&'a str> {
        self.raw(key).map(|(_, v)| v)
    }

    /// Whitespace/comma separated list of numbers of exact length `n`.
    fn floats(&mut self, key: &'static str, n: usize) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => {
                let parts: Result<Vec<f64>, _> = v
                    .split([',', ' ', '\t'])
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<f64>())
                    .collect();
                match parts {
                    Ok(list) if list.len() == n => Ok(Some(list)),
                    Ok(list) => Err(self.parse_err(
                        line,
                        format!("`{key}` expects {n} numbers, got {}", list.len()),
                    )),
                    Err(_) => Err(self
                        .parse_err(line, format!("`{key}` expects {n} numbers, got `{v}`"))),
                }
            }
        }
    }

    /// Rejects any entry whose key was never requested.
    fn finish(self) -> Result<(), ConfigError> {
        for (key, (line, _)) in &self.entries {
            if !self.known.contains(key) {
                return Err(ConfigError::UnknownKey {
                    source_name: self.source_name.to_string(),
                    line: *line,
                    section: self.section.to_string(),
                    key: key.to_string(),
                });
            }
        }
        Ok(())
    }
}

fn parse_boundary(
    source_name: &str,
    line: usize,
    side: &str,
    value: &str,
) -> Result<Boundary, ConfigError> {
    let err = |msg: String| ConfigError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let tokens: Vec<&str> = value
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .collect();
    match tokens.as_slice() {
        ["periodic"] => Ok(Boundary::Periodic),
        ["extrapolation"] => Ok(Boundary::Extrapolation),
        ["velocity", rest @ ..] if rest.len() == 3 => {
            let mut v = [0.0; 3];
            for (i, t) in rest.iter().enumerate() {
                v[i] = t.parse::<f64>().map_err(|_| {
                    err(format!("`{side}` velocity component `{t}` is not a number"))
                })?;
            }
            Ok(Boundary::PrescribedVelocity(Vector3::new(v[0], v[1], v[2])))
        }
        ["gaussian_velocity", rest @ ..] if rest.len() == 5 => {
            let mut v = [0.0; 5];
            for (i, t) in rest.iter().enumerate() {
                v[i] = t.parse::<f64>().map_err(|_| {
                    err(format!("`{side}` gaussian_velocity value `{t}` is not a number"))
                })?;
            }
            Ok(Boundary::GaussianVelocity {
                amplitude: Vector3::new(v[0], v[1], v[2]),
                decay: v[3],
                center: v[4],
            })
        }
        _ => Err(err(format!(
            "`{side}` expects `periodic`, `extrapolation`, `velocity vx vy vz`, \
             or `gaussian_velocity ax ay az decay center`, got `{value}`"
        ))),
    }
}

fn parse_eq_stress(
    source_name: &str,
    line: usize,
    value: &str,
) -> Result<EquivalentStressSpec, ConfigError> {
    let err = |msg: String| ConfigError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let tokens: Vec<&str> = value
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .collect();
    let nums = |rest: &[&str]| -> Result<Vec<f64>, ConfigError> {
        rest.iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(format!("equivalent_stress value `{t}` is not a number")))
            })
            .collect()
    };
    match tokens.as_slice() {
        ["von_mises"] => Ok(EquivalentStressSpec::VonMises),
        ["linear", rest @ ..] if rest.len() == 2 => {
            let v = nums(rest)?;
            Ok(EquivalentStressSpec::LinearCombination { a: v[0], b: v[1] })
        }
        ["drucker_prager", rest @ ..] if rest.len() == 3 => {
            let v = nums(rest)?;
            Ok(EquivalentStressSpec::DruckerPrager {
                a: v[0],
                b: v[1],
                c: v[2],
            })
        }
        ["erf", rest @ ..] if rest.len() == 4 => {
            let v = nums(rest)?;
            Ok(EquivalentStressSpec::ErfSmoothed {
                a: v[0],
                b: v[1],
                s0: v[2],
                eps: v[3],
            })
        }
        _ => Err(err(format!(
            "equivalent_stress expects `von_mises`, `linear a b`, \
             `drucker_prager a b c`, or `erf a b s0 eps`, got `{value}`"
        ))),
    }
}

/// Parses a config from text. `source_name` labels error locations.
///
/// If the text carries a top-level `preset = <name>` line, the embedded
/// preset text is loaded first and the user's entries overlay it: scalar
/// keys override the preset's, while `[region]` and `[probe]` instances are
/// appended after the preset's.
pub fn parse_config_str(text: &str, source_name: &str) -> Result<ScenarioConfig, ConfigError> {
    let user = lex_config(text, source_name)?;
    let mut preset_name: Option<String> = None;
    let mut name_override: Option<String> = None;
    for e in &user.top {
        match e.key.as_str() {
            "preset" => preset_name = Some(e.value.clone()),
            "name" => name_override = Some(e.value.clone()),
            other => {
                return Err(ConfigError::UnknownKey {
                    source_name: source_name.to_string(),
                    line: e.line,
                    section: "<top level>".to_string(),
                    key: other.to_string(),
                })
            }
        }
    }
    let merged = match &preset_name {
        None => user,
        Some(p) => {
            let text = preset_text(p).ok_or_else(|| ConfigError::UnknownPreset { name: p.clone() })?;
            let base = lex_config(text, p).expect("embedded presets must lex");
            merge_raw(base, user)
        }
    };
    resolve_config(merged, source_name, name_override)
}

/// Overlays `user` on `base`: scalar sections merge per key (user entries
/// appended after the preset's, so the later occurrence wins in the
/// [`SectionReader`]); `[region]`/`[probe]` instances are appended.
fn merge_raw(mut base: RawConfig, user: RawConfig) -> RawConfig {
    for usec in user.sections {
        if usec.name == "region" || usec.name == "probe" {
            base.sections.push(usec);
            continue;
        }
        match base
            .sections
            .iter_mut()
            .find(|s| s.name == usec.name)
        {
            Some(bsec) => bsec.entries.extend(usec.entries),
            None => base.sections.push(usec),
        }
    }
    // User top-level `name` wins; `preset` is consumed by the caller.
    base
}

fn resolve_config(
    raw: RawConfig,
    source_name: &str,
    name_override: Option<String>,
) -> Result<ScenarioConfig, ConfigError> {
    let mut name = name_override;
    for e in &raw.top {
        if e.key == "name" && name.is_none() {
            name = Some(e.value.clone());
        }
    }

    let mut grid: Option<&RawSection> = None;
    let mut time: Option<&RawSection> = None;
    let mut material: Option<&RawSection> = None;
    let mut boundary: Option<&RawSection> = None;
    let mut initial: Option<&RawSection> = None;
    let mut pwave_sec: Option<&RawSection> = None;
    let mut regions: Vec<&RawSection> = Vec::new();
    let mut probes: Vec<&RawSection> = Vec::new();
    for sec in &raw.sections {
        match sec.name.as_str() {
            "grid" => grid = Some(sec),
            "time" => time = Some(sec),
            "material" => material = Some(sec),
            "boundary" => boundary = Some(sec),
            "initial" => initial = Some(sec),
            "pwave" => pwave_sec = Some(sec),
            "region" => regions.push(sec),
            "probe" => probes.push(sec),
            other => {
                return Err(ConfigError::Parse {
                    source_name: source_name.to_string(),
                    line: sec.line,
                    msg: format!("unknown section [{other}]"),
                })
            }
        }
    }
    let missing_section = |section: &str| ConfigError::MissingKey {
        source_name: source_name.to_string(),
        section: section.to_string(),
        key: "<section>".to_string(),
    };

    // [grid]
    let gsec = grid.ok_or_else(|| missing_section("grid"))?;
    let mut g = SectionReader::new(source_name, "grid", &gsec.entries);
    let x0 = g.f64_req("x0")?;
    let x1 = g.f64_req("x1")?;
    let y0 = g.f64_req("y0")?;
    let y1 = g.f64_req("y1")?;
    let nx = g.usize("nx")?.ok_or_else(|| ConfigError::MissingKey {
        source_name: source_name.to_string(),
        section: "grid".into(),
        key: "nx".into(),
    })?;
    let ny = g.usize("ny")?.ok_or_else(|| ConfigError::MissingKey {
        source_name: source_name.to_string(),
        section: "grid".into(),
        key: "ny".into(),
    })?;
    let degree = g.usize("degree")?.unwrap_or(2);
    let cfl = g.f64("cfl")?.unwrap_or(0.9);
    g.finish()?;

    // [time]
    let tsec = time.ok_or_else(|| missing_section("time"))?;
    let mut t = SectionReader::new(source_name, "time", &tsec.entries);
    let t_end = t.f64_req("t_end")?;
    let output_every = t.f64("output_every")?.unwrap_or(0.0);
    t.finish()?;

    // [material]
    let msec = material.ok_or_else(|| missing_section("material"))?;
    let mut m = SectionReader::new(source_name, "material", &msec.entries);
    let mat_line = msec.line;
    let mat_name = m.string("name").map(str::to_string);
    let mat2_name = m.string("name2").map(str::to_string);
    let unbreakable = m.bool("unbreakable")?.unwrap_or(false);
    let unbreakable2 = m.bool("unbreakable2")?.unwrap_or(false);
    let eq_entry = m.raw("equivalent_stress").map(|(l, v)| (l, v.to_string()));
    m.finish()?;
    let mat_name = mat_name.ok_or_else(|| ConfigError::MissingKey {
        source_name: source_name.to_string(),
        section: "material".into(),
        key: "name".into(),
    })?;
    let lookup = |n: &str| {
        material_by_name(n).ok_or_else(|| ConfigError::Parse {
            source_name: source_name.to_string(),
            line: mat_line,
            msg: format!(
                "unknown material `{n}` (built in: {})",
                crate::materials::builtin_material_names().join(", ")
            ),
        })
    };
    let mut mat1 = lookup(&mat_name)?;
    let mut mat2 = match &mat2_name {
        Some(n) => lookup(n)?,
        None => mat1,
    };
    if unbreakable {
        mat1 = mat1.unbreakable();
        if mat2_name.is_none() {
            mat2 = mat1;
        }
    }
    if unbreakable2 {
        mat2 = mat2.unbreakable();
    }
    let eq_stress = match eq_entry {
        None => EquivalentStressSpec::VonMises,
        Some((line, v)) => parse_eq_stress(source_name, line, &v)?,
    };

    // [boundary]
    let mut boundaries = BoundaryConfig::periodic();
    if let Some(bsec) = boundary {
        let mut b = SectionReader::new(source_name, "boundary", &bsec.entries);
        let west = b.raw("west");
        let east = b.raw("east");
        let south = b.raw("south");
        let north = b.raw("north");
        b.finish()?;
        if let Some((line, v)) = west {
            boundaries.west = parse_boundary(source_name, line, "west", v)?;
        }
        if let Some((line, v)) = east {
            boundaries.east = parse_boundary(source_name, line, "east", v)?;
        }
        if let Some((line, v)) = south {
            boundaries.south = parse_boundary(source_name, line, "south", v)?;
        }
        if let Some((line, v)) = north {
            boundaries.north = parse_boundary(source_name, line, "north", v)?;
        }
    }

    // [initial]
    let mut sigma0 = [0.0; 6];
    let mut theta = 0.0;
    let mut velocity0 = Vector3::zeros();
    let mut alpha0 = 1.0;
    if let Some(isec) = initial {
        let mut i = SectionReader::new(source_name, "initial", &isec.entries);
        sigma0[0] = i.f64("sxx")?.unwrap_or(0.0);
        sigma0[1] = i.f64("syy")?.unwrap_or(0.0);
        sigma0[2] = i.f64("szz")?.unwrap_or(0.0);
        sigma0[3] = i.f64("sxy")?.unwrap_or(0.0);
        sigma0[4] = i.f64("syz")?.unwrap_or(0.0);
        sigma0[5] = i.f64("sxz")?.unwrap_or(0.0);
        theta = i.f64("theta")?.unwrap_or(0.0);
        velocity0.x = i.f64("u")?.unwrap_or(0.0);
        velocity0.y = i.f64("v")?.unwrap_or(0.0);
        velocity0.z = i.f64("w")?.unwrap_or(0.0);
        alpha0 = i.f64("alpha")?.unwrap_or(1.0);
        i.finish()?;
    }

    // [pwave]
    let pwave = match pwave_sec {
        None => None,
        Some(psec) => {
            let mut p = SectionReader::new(source_name, "pwave", &psec.entries);
            let axis = match p.string("axis") {
                None | Some("x") => 0,
                Some("y") => 1,
                Some(other) => {
                    return Err(ConfigError::Parse {
                        source_name: source_name.to_string(),
                        line: psec.line,
                        msg: format!("pwave axis must be x or y, got `{other}`"),
                    })
                }
            };
            let center = p.f64_req("center")?;
            let delta = p.f64_req("delta")?;
            let epsilon = p.f64_req("epsilon")?;
            let rs = p.floats("rsigma", 6)?.unwrap_or_default();
            let rv = p.floats("rvel", 3)?.unwrap_or_else(|| vec![0.0; 3]);
            p.finish()?;
            let mut rsigma = [0.0; 6];
            rsigma[..rs.len().min(6)].copy_from_slice(&rs[..rs.len().min(6)]);
            Some(PWave {
                axis,
                center,
                delta,
                epsilon,
                rsigma,
                rvel: Vector3::new(rv[0], rv[1], rv[2]),
            })
        }
    };

    // [region]*
    let mut region_list = Vec::new();
    for rsec in regions {
        let mut r = SectionReader::new(source_name, "region", &rsec.entries);
        let shape_val = r.raw("shape");
        let smooth = r.f64("smooth")?.unwrap_or(0.0);
        let set = RegionSet {
            alpha: r.f64("alpha")?,
            xi: r.f64("xi")?,
            mblend: r.f64("mblend")?,
            lam: r.f64("lam")?,
            mu: r.f64("mu")?,
            y0: r.f64("y0")?,
            rho0: r.f64("rho0")?,
            velocity: r
                .floats("velocity", 3)?
                .map(|v| Vector3::new(v[0], v[1], v[2])),
        };
        r.finish()?;
        let Some((line, sv)) = shape_val else {
            return Err(ConfigError::MissingKey {
                source_name: source_name.to_string(),
                section: "region".into(),
                key: "shape".into(),
            });
        };
        let shape = parse_shape(source_name, line, sv)?;
        region_list.push(Region { shape, smooth, set });
    }

    // [probe]*
    let mut probe_list = Vec::new();
    for (k, psec) in probes.into_iter().enumerate() {
        let mut p = SectionReader::new(source_name, "probe", &psec.entries);
        let x = p.f64_req("x")?;
        let y = p.f64_req("y")?;
        let name = p
            .string("name")
            .map(str::to_string)
            .unwrap_or_else(|| format!("probe_{k}"));
        p.finish()?;
        probe_list.push(Probe { x, y, name });
    }

    let cfg = ScenarioConfig {
        name: name.unwrap_or_else(|| "scenario".to_string()),
        bounds: (x0, x1, y0, y1),
        nx,
        ny,
        degree,
        cfl,
        t_end,
        output_every,
        material: mat1,
        material2: mat2,
        eq_stress,
        boundaries,
        sigma0,
        theta,
        velocity0,
        alpha0,
        pwave,
        regions: region_list,
        probes: probe_list,
    };
    cfg.validate(source_name)?;
    Ok(cfg)
}

fn parse_shape(source_name: &str, line: usize, value: &str) -> Result<Shape, ConfigError> {
    let err = |msg: String| ConfigError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let tokens: Vec<&str> = value
        .split([',', ' ', '\t'])
        .filter(|t| !t.is_empty())
        .collect();
    let nums = |rest: &[&str]| -> Result<Vec<f64>, ConfigError> {
        rest.iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(format!("shape value `{t}` is not a number")))
            })
            .collect()
    };
    match tokens.as_slice() {
        ["rect", rest @ ..] if rest.len() == 4 => {
            let v = nums(rest)?;
            Ok(Shape::Rect {
                x0: v[0],
                x1: v[1],
                y0: v[2],
                y1: v[3],
            })
        }
        ["disc", rest @ ..] if rest.len() == 3 => {
            let v = nums(rest)?;
            Ok(Shape::Disc {
                cx: v[0],
                cy: v[1],
                r: v[2],
            })
        }
        ["strip", rest @ ..] if rest.len() == 5 => {
            let v = nums(rest)?;
            Ok(Shape::Strip {
                cx: v[0],
                cy: v[1],
                angle: v[2],
                half_length: v[3],
                half_width: v[4],
            })
        }
        ["sine_below", rest @ ..] if rest.len() == 3 => {
            let v = nums(rest)?;
            Ok(Shape::SineBelow {
                base: v[0],
                amplitude: v[1],
                wavenumber: v[2],
            })
        }
        _ => Err(err(format!(
            "shape expects `rect x0 x1 y0 y1`, `disc cx cy r`, \
             `strip cx cy angle half_length half_width`, \
             or `sine_below base amplitude wavenumber`, got `{value}`"
        ))),
    }
}

/// Parses a config file from disk (see [`parse_config_str`]).
pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_config_str(&text, &path.display().to_string())
}

/// Loads a shipped preset by name.
pub fn preset_config(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = preset_text(name).ok_or_else(|| ConfigError::UnknownPreset { name: name.to_string() })?;
    parse_config_str(text, name)
}

// ---------------------------------------------------------------------------
// Scenario construction
// ---------------------------------------------------------------------------

/// Model implied by a config (material pair + equivalent-stress criterion).
pub fn model_of(cfg: &ScenarioConfig) -> Model {
    let mut model = Model::single(cfg.material);
    model.mats[1] = cfg.material2;
    model.eq_stress = cfg.eq_stress;
    model
}

/// Pointwise initial condition of a scenario: a pure function of position.
///
/// Field assembly order at a point: base material + uniform stress/velocity,
/// plus the wave packet, then the `[region]` list in file order (each region
/// blends its fields in with its indicator weight; a region that sets
/// `mblend` but no explicit material parameters also pulls the advected
/// parameter slots toward the second material). The distortion realizing
/// the accumulated stress is found per point by [`init_a_from_stress`] on
/// the local effective material, and the density obeys `ρ = ρ0 · det A`.
pub fn scenario_initializer(
    cfg: &ScenarioConfig,
) -> impl Fn(f64, f64) -> Result<State, NewtonFailure> + '_ {
    let model = model_of(cfg);
    move |x: f64, y: f64| {
        let mat1 = &cfg.material;
        let mat2 = &cfg.material2;
        let mut alpha = cfg.alpha0;
        let mut xi: f64 = 0.0;
        let mut mblend = 0.0;
        let mut lam = mat1.lam_i;
        let mut mu = mat1.mu_i;
        let mut y0 = mat1.y0;
        let mut rho0 = mat1.rho0;
        let mut v = cfg.velocity0;
        let mut sigma = cfg.sigma0;
        if let Some(w) = &cfg.pwave {
            let c = if w.axis == 0 { x } else { y };
            let g = w.epsilon * (-0.5 * ((c - w.center) / w.delta).powi(2)).exp();
            for k in 0..6 {
                sigma[k] += g * w.rsigma[k];
            }
            v += w.rvel * g;
        }
        for region in &cfg.regions {
            let w = region.weight(x, y);
            if w <= 0.0 {
                continue;
            }
            let set = &region.set;
            let lerp = |cur: f64, to: f64| cur + (to - cur) * w;
            if let Some(a) = set.alpha {
                alpha = lerp(alpha, a);
            }
            if let Some(z) = set.xi {
                xi = lerp(xi, z);
            }
            if let Some(m) = set.mblend {
                mblend = lerp(mblend, m);
                // Blending toward the second material moves the advected
                // parameter slots with it unless overridden explicitly.
                let t = m.clamp(0.0, 1.0);
                let to = |a: f64, b: f64| a + (b - a) * t;
                lam = lerp(lam, set.lam.unwrap_or(to(mat1.lam_i, mat2.lam_i)));
                mu = lerp(mu, set.mu.unwrap_or(to(mat1.mu_i, mat2.mu_i)));
                y0 = lerp(y0, set.y0.unwrap_or(to(mat1.y0, mat2.y0)));
                rho0 = lerp(rho0, set.rho0.unwrap_or(to(mat1.rho0, mat2.rho0)));
            } else {
                if let Some(l) = set.lam {
                    lam = lerp(lam, l);
                }
                if let Some(m) = set.mu {
                    mu = lerp(mu, m);
                }
                if let Some(yy) = set.y0 {
                    y0 = lerp(y0, yy);
                }
                if let Some(r) = set.rho0 {
                    rho0 = lerp(rho0, r);
                }
            }
            if let Some(rv) = set.velocity {
                v += (rv - v) * w;
            }
        }

        let mut prim = Primitive::reference(mat1);
        prim.alpha = alpha;
        prim.xi = xi;
        prim.mblend = mblend;
        prim.lam = lam;
        prim.mu = mu;
        prim.y0 = y0;
        prim.rho0 = rho0;
        prim.v = v;
        // Effective material at this point (carriers already applied).
        let probe = model.prim_to_cons(&prim);
        let mat_eff = model.effective_material(&probe);
        if sigma.iter().all(|&c| c == 0.0) {
            prim.a = rotation_z(cfg.theta);
            prim.rho = mat_eff.rho0;
        } else {
            let init = init_a_from_stress(&sigma, cfg.theta, &mat_eff)?;
            prim.a = init.a;
            prim.rho = init.rho;
        }
        Ok(model.prim_to_cons(&prim))
    }
}

/// Builds the initialized grid of a scenario.
pub fn build_scenario(cfg: &ScenarioConfig) -> Result<Grid2D, RunError> {
    let basis = build_basis(cfg.degree).expect("validated degree");
    let init = scenario_initializer(cfg);
    let failure: RefCell<Option<(f64, f64, NewtonFailure)>> = RefCell::new(None);
    let fallback = model_of(cfg).prim_to_cons(&Primitive::reference(&cfg.material));
    let grid = Grid2D::new(
        model_of(cfg),
        basis,
        cfg.nx,
        cfg.ny,
        cfg.bounds,
        cfg.boundaries,
        |x, y| match init(x, y) {
            Ok(q) => q,
            Err(e) => {
                failure.borrow_mut().get_or_insert((x, y, e));
                fallback
            }
        },
    );
    if let Some((x, y, e)) = failure.into_inner() {
        return Err(RunError::InitialCondition { x, y, source: e });
    }
    Ok(grid)
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

/// Cell-mean derived fields written by the VTK snapshot writer.
const VTK_FIELDS: [&str; 9] = [
    "alpha",
    "rho",
    "u",
    "v",
    "xi",
    "Y_vonMises",
    "p",
    "detA",
    "limiter",
];

fn vtk_cell_values(grid: &Grid2D, i: usize, j: usize) -> [f64; 9] {
    let q = grid.cell_average(i, j);
    let limited = grid.cells[j * grid.nx + i].limited;
    let a = distortion(&q);
    let deta = a.determinant();
    let (u, vv, p, yvm) = match grid.model.thermo(&q) {
        Ok(th) => {
            let yvm = crate::materials::equivalent_stress(
                &th.sigma_total,
                &EquivalentStressSpec::VonMises,
            );
            (th.v.x, th.v.y, th.p, yvm)
        }
        Err(_) => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
    };
    [
        q[crate::state::idx::ALPHA],
        q[crate::state::idx::RHO],
        u,
        vv,
        q[crate::state::idx::XI],
        yvm,
        p,
        deta,
        if limited { 1.0 } else { 0.0 },
    ]
}

/// Writes one legacy-ASCII VTK `STRUCTURED_POINTS` snapshot with the cell
/// means of the nine derived fields. Byte-stable for identical grids.
pub fn write_snapshot_vtk(grid: &Grid2D, path: &Path) -> io::Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "# vtk DataFile Version 3.0");
    let _ = writeln!(text, "gprfail snapshot t={:.9e}", grid.t);
    let _ = writeln!(text, "ASCII");
    let _ = writeln!(text, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(text, "DIMENSIONS {} {} 1", grid.nx + 1, grid.ny + 1);
    let _ = writeln!(text, "ORIGIN {:.9e} {:.9e} 0", grid.x0, grid.y0);
    let _ = writeln!(text, "SPACING {:.9e} {:.9e} 1", grid.dx, grid.dy);
    let _ = writeln!(text, "CELL_DATA {}", grid.nx * grid.ny);
    let mut values = vec![[0.0; 9]; grid.nx * grid.ny];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            values[j * grid.nx + i] = vtk_cell_values(grid, i, j);
        }
    }
    for (k, field) in VTK_FIELDS.iter().enumerate() {
        let _ = writeln!(text, "SCALARS {field} double 1");
        let _ = writeln!(text, "LOOKUP_TABLE default");
        for row in &values {
            let _ = writeln!(text, "{:.9e}", row[k]);
        }
    }
    fs::write(path, text)
}

/// Time series recorded at one probe point.
#[derive(Debug, Clone)]
pub struct ProbeSeries {
    /// Probe definition this series belongs to.
    pub probe: Probe,
    /// Rows `(t, σxx, σyy, σxy, Y, ξ, u, v)`.
    pub rows: Vec<[f64; 8]>,
}

impl ProbeSeries {
    /// Samples the grid at the probe point and appends one row.
    pub fn record(&mut self, grid: &Grid2D) {
        let q = grid.sample(self.probe.x, self.probe.y);
        let row = match grid.model.thermo(&q) {
            Ok(th) => [
                grid.t,
                th.sigma_total[(0, 0)],
                th.sigma_total[(1, 1)],
                th.sigma_total[(0, 1)],
                th.y,
                q[crate::state::idx::XI],
                th.v.x,
                th.v.y,
            ],
            Err(_) => [
                grid.t,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                f64::NAN,
                q[crate::state::idx::XI],
                f64::NAN,
                f64::NAN,
            ],
        };
        self.rows.push(row);
    }
}

/// Writes one probe's time series as CSV with the header
/// `t,sigma_xx,sigma_yy,sigma_xy,Y,xi,u,v`.
pub fn write_probe_csv(series: &ProbeSeries, path: &Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t,sigma_xx,sigma_yy,sigma_xy,Y,xi,u,v")?;
    for row in &series.rows {
        writeln!(
            f,
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            row[0], row[1], row[2], row[3], row[4], row[5], row[6], row[7]
        )?;
    }
    f.flush()
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

/// Summary of a completed scenario run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Steps taken.
    pub steps: usize,
    /// Final time reached [s].
    pub t: f64,
    /// Peak number of limited cells in any step.
    pub max_limited: usize,
    /// Snapshot files written (in order).
    pub snapshots: Vec<PathBuf>,
    /// Probe files written.
    pub probe_files: Vec<PathBuf>,
    /// Relative drift of the conserved totals (ρ, momentum, ρE) between the
    /// initial and final states, scaled like the conservation diagnostics.
    pub conservation_drift: [f64; 5],
}

/// Runs a scenario to `t_end`, writing snapshots every `output_every`
/// seconds (plus the initial and final frames) and probe CSVs at the end.
/// `out_dir = None` runs without writing anything.
///
/// `report` is called after every step with the step index and report --
/// pass `|_, _| {}` when no progress output is wanted.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    out_dir: Option<&Path>,
    mut report: impl FnMut(usize, &StepReport),
) -> Result<(Grid2D, RunSummary), RunError> {
    let mut grid = build_scenario(cfg)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| RunError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    let t0 = grid.conserved_totals();
    let mut series: Vec<ProbeSeries> = cfg
        .probes
        .iter()
        .map(|p| ProbeSeries {
            probe: p.clone(),
            rows: Vec::new(),
        })
        .collect();
    let mut snapshots = Vec::new();
    let mut snap_count = 0usize;
    let write_snapshot = |grid: &Grid2D,
                              snap_count: &mut usize,
                              snapshots: &mut Vec<PathBuf>|
     -> Result<(), RunError> {
        if let Some(dir) = out_dir {
            let path = dir.join(format!("{}_{:04}.vtk", cfg.name, *snap_count));
            write_snapshot_vtk(grid, &path).map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            snapshots.push(path);
            *snap_count += 1;
        }
        Ok(())
    };

    write_snapshot(&grid, &mut snap_count, &mut snapshots)?;
    for s in series.iter_mut() {
        s.record(&grid);
    }
    let mut steps = 0usize;
    let mut max_limited = 0usize;
    let mut next_output = if cfg.output_every > 0.0 {
        cfg.output_every
    } else {
        f64::INFINITY
    };
    let t_eps = 1e-12 * cfg.t_end;
    while grid.t < cfg.t_end - t_eps {
        let rep = grid
            .advance_adaptive(cfg.cfl, cfg.t_end)
            .map_err(|e| RunError::Solver {
                t: grid.t,
                steps,
                source: e,
            })?;
        steps += 1;
        max_limited = max_limited.max(rep.limited);
        report(steps, &rep);
        for s in series.iter_mut() {
            s.record(&grid);
        }
        if grid.t >= next_output - t_eps && grid.t < cfg.t_end - t_eps {
            write_snapshot(&grid, &mut snap_count, &mut snapshots)?;
            while next_output <= grid.t + t_eps {
                next_output += cfg.output_every;
            }
        }
    }
    write_snapshot(&grid, &mut snap_count, &mut snapshots)?;

    let mut probe_files = Vec::new();
    if let Some(dir) = out_dir {
        for s in &series {
            let path = dir.join(format!("{}.csv", s.probe.name));
            write_probe_csv(s, &path).map_err(|e| RunError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            probe_files.push(path);
        }
    }
    let t1 = grid.conserved_totals();
    let mut drift = [0.0; 5];
    for k in 0..5 {
        let scale = t0[k].abs().max(1e-30);
        drift[k] = (t1[k] - t0[k]).abs() / scale;
    }
    let summary = RunSummary {
        steps,
        t: grid.t,
        max_limited,
        snapshots,
        probe_files,
        conservation_drift: drift,
    };
    Ok((grid, summary))
}

/// Returns the probe series of a run without touching the file system.
pub fn run_scenario_probes(
    cfg: &ScenarioConfig,
) -> Result<(Grid2D, Vec<ProbeSeries>), RunError> {
    let mut grid = build_scenario(cfg)?;
    let mut series: Vec<ProbeSeries> = cfg
        .probes
        .iter()
        .map(|p| ProbeSeries {
            probe: p.clone(),
            rows: Vec::new(),
        })
        .collect();
    for s in series.iter_mut() {
        s.record(&grid);
    }
    let mut steps = 0usize;
    let t_eps = 1e-12 * cfg.t_end;
    while grid.t < cfg.t_end - t_eps {
        grid.advance_adaptive(cfg.cfl, cfg.t_end)
            .map_err(|e| RunError::Solver {
                t: grid.t,
                steps,
                source: e,
            })?;
        steps += 1;
        for s in series.iter_mut() {
            s.record(&grid);
        }
    }
    Ok((grid, series))
}

// ---------------------------------------------------------------------------
// Shipped presets
// ---------------------------------------------------------------------------

/// Longitudinal wave through a 100x-stiffer inclusion between two free
/// surfaces, all fields dimensionless. The quiet region ahead of the wave
/// must stay free of spurious pressure oscillations even though the
/// advected moduli jump by two orders of magnitude.
const PRESET_STIFF_INCLUSION: &str = r#"
name = stiff_inclusion

[grid]
x0 = -1.0
x1 = 1.0
y0 = -0.52
y1 = 0.52
nx = 100
ny = 52
degree = 2
cfl = 0.9

[time]
t_end = 0.3
output_every = 0.1

[material]
name = unitsolid
equivalent_stress = von_mises

[boundary]
west = extrapolation
east = extrapolation
south = extrapolation
north = extrapolation

[initial]
alpha = 0.0

# Solid slab between free surfaces at y = +-0.5 (the x extent overshoots the
# domain so only the horizontal surfaces are diffuse).
[region]
shape = rect -10.0 10.0 -0.5 0.5
alpha = 1.0
smooth = 0.02

# Stiff inclusion: advected moduli 100x the carrier's.
[region]
shape = rect -0.5 0.5 -0.1 0.1
lam = 200.0
mu = 100.0

[pwave]
axis = x
center = -0.8
delta = 0.01
epsilon = 1.0e-4
rsigma = 4.0, 2.0, 2.0, 0.0, 0.0, 0.0
rvel = -2.0, 0.0, 0.0
"#;

/// 1D impact of a copper flyer onto a pyrex target: a periodic strip in y,
/// copper fed in from the west boundary at the impact velocity. Probes
/// record the stress history inside the target.
const PRESET_PLATE_IMPACT_1D: &str = r#"
name = plate_impact_1d

[grid]
x0 = -0.001
x1 = 0.021
y0 = -0.001
y1 = 0.001
nx = 108
ny = 8
degree = 3
cfl = 0.9

[time]
t_end = 1.6e-6
output_every = 0.0

[material]
name = pyrex
name2 = copper
equivalent_stress = linear 0.9 0.05

[boundary]
west = velocity 250.0 0.0 0.0
east = extrapolation
south = periodic
north = periodic

# Copper flyer occupying x < 0, moving at the impact velocity.
[region]
shape = rect -0.01 0.0 -1.0 1.0
mblend = 1.0
velocity = 250.0 0.0 0.0
smooth = 2.0e-4

[probe]
x = 0.0025
y = 0.0
name = probe_x2p5mm

[probe]
x = 0.0075
y = 0.0
name = probe_x7p5mm
"#;

/// Diametral compression of a pre-damaged disc: unbreakable loading platens
/// press on the top and bottom with a Gaussian contact-velocity profile; a
/// slit inclined 35 degrees to the x axis is pre-damaged.
const PRESET_BRAZILIAN_DISC: &str = r#"
name = brazilian_disc

[grid]
x0 = -1.1
x1 = 1.1
y0 = -1.1
y1 = 1.1
nx = 48
ny = 48
degree = 3
cfl = 0.9

[time]
t_end = 2.0e-3
output_every = 2.0e-4

[material]
name = rock2
name2 = rock2
unbreakable2 = true
equivalent_stress = drucker_prager 1.0 1.5 -2.0e6

[boundary]
west = extrapolation
east = extrapolation
south = gaussian_velocity 0.0 4.0 0.0 25.0 0.0
north = gaussian_velocity 0.0 -4.0 0.0 25.0 0.0

[initial]
alpha = 0.0

# The disc.
[region]
shape = disc 0.0 0.0 1.0
alpha = 1.0
smooth = 0.02

# Loading platens bridging the disc to the driven boundaries; blended to the
# unbreakable material copy.
[region]
shape = rect -0.12 0.12 0.9 1.2
alpha = 1.0
mblend = 1.0
smooth = 0.02

[region]
shape = rect -0.12 0.12 -1.2 -0.9
alpha = 1.0
mblend = 1.0
smooth = 0.02

# Pre-damaged slit through the center, inclined 35 degrees (0.6109 rad).
[region]
shape = strip 0.0 0.0 0.6108652381980153 0.3 0.04
xi = 1.0
smooth = 0.02
"#;

/// Out-of-plane rupture: a uniformly sheared and compressed plate with a
/// pre-damaged horizontal strip through the origin. The crack pattern must
/// stay point-symmetric about the origin.
const PRESET_RUPTURE_2D: &str = r#"
name = rupture_2d

[grid]
x0 = -5000.0
x1 = 5000.0
y0 = -7500.0
y1 = 7500.0
nx = 30
ny = 24
degree = 3
cfl = 0.9

[time]
t_end = 5.0
output_every = 1.0

[material]
name = rock1
equivalent_stress = von_mises

[boundary]
west = extrapolation
east = extrapolation
south = extrapolation
north = extrapolation

[initial]
syy = -120.0e6
sxy = 70.0e6

# Pre-damaged strip |x| < 1000, |y| < 66, smoothed to be representable on
# the coarse grid.
[region]
shape = rect -1000.0 1000.0 -66.0 66.0
xi = 1.0
smooth = 66.0
"#;

/// Longitudinal wave climbing toward a sinusoidal free surface, rupturing a
/// pre-damaged inclined line on the way.
const PRESET_SINE_SURFACE: &str = r#"
name = sine_surface

[grid]
x0 = -8000.0
x1 = 8000.0
y0 = -8000.0
y1 = 8000.0
nx = 25
ny = 25
degree = 3
cfl = 0.9

[time]
t_end = 2.0
output_every = 0.25

[material]
name = rock1
equivalent_stress = von_mises

[boundary]
west = extrapolation
east = extrapolation
south = extrapolation
north = extrapolation

[initial]
alpha = 0.0

# Solid below the sinusoidal topography y = 6000 - 500 sin(1e-3 x),
# smoothed over 300 m.
[region]
shape = sine_below 6000.0 500.0 1.0e-3
alpha = 1.0
smooth = 300.0

# Pre-damaged line of x extent 2000*sqrt(2) inclined 45 degrees through
# (3000, -2000).
[region]
shape = strip 3000.0 -2000.0 0.7853981633974483 2000.0 66.0
xi = 1.0
smooth = 66.0

# Upward-travelling longitudinal wave packet: stress amplitude
# eps*(lam+2mu) = 1.79e8/(2 mu) * 9.612e10 = 2.685e8 Pa, velocity matched
# to the characteristic relation sigma_yy = -rho c_p v.
[pwave]
axis = y
center = -4000.0
delta = 1000.0
epsilon = 2.7933832709113606e-3
rsigma = 32.04e9, 96.12e9, 32.04e9, 0.0, 0.0, 0.0
rvel = 0.0, -6000.0, 0.0
"#;

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::idx;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unstressed_distortion_is_the_bare_rotation() {
        let mat = material_by_name("brittle").unwrap();
        let zero = [0.0; 6];
        let out = init_a_from_stress(&zero, 0.0, &mat).unwrap();
        assert!((out.a - Matrix3::identity()).norm() < 1e-12);
        assert_relative_eq!(out.rho, mat.rho0, max_relative = 1e-12);
        let theta = std::f64::consts::FRAC_PI_4;
        let rot = init_a_from_stress(&zero, theta, &mat).unwrap();
        assert!((rot.a - rotation_z(theta)).norm() < 1e-9);
        // A pure rotation leaves the material unstressed.
        let s = stress_of_params(
            &Vector6::new(1.0, 0.0, 1.0, 0.0, 0.0, 1.0),
            theta,
            &mat,
        );
        assert!(s.norm() < 1e-9 * mat.mu_i);
    }

    #[test]
    fn random_stress_round_trips_through_the_newton_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(20260816);
        for mat_name in ["brittle", "rock1", "pyrex"] {
            let mat = material_by_name(mat_name).unwrap();
            let scale = 1e-3 * mat.mu_i;
            for k in 0..100 {
                let mut sigma0 = [0.0; 6];
                for c in sigma0.iter_mut() {
                    *c = rng.gen_range(-1.0..1.0);
                }
                let norm: f64 = sigma0.iter().map(|c| c * c).sum::<f64>().sqrt();
                let target = rng.gen_range(0.1..1.0) * scale;
                for c in sigma0.iter_mut() {
                    *c *= target / norm;
                }
                let theta = rng.gen_range(-1.5..1.5);
                let out = init_a_from_stress(&sigma0, theta, &mat)
                    .unwrap_or_else(|e| panic!("{mat_name} sample {k}: {e}"));
                assert!(
                    out.iterations <= 15,
                    "{mat_name} sample {k}: {} iterations",
                    out.iterations
                );
                // Independent forward check through the public stress map.
                let st = ThermoState {
                    rho: out.rho,
                    s: 0.0,
                    a: out.a,
                    j: Vector3::zeros(),
                    xi: 0.0,
                };
                let (total, _) = stress_tensor(&st, &mat);
                let achieved = [
                    total[(0, 0)],
                    total[(1, 1)],
                    total[(2, 2)],
                    total[(0, 1)],
                    total[(1, 2)],
                    total[(0, 2)],
                ];
                let res: f64 = achieved
                    .iter()
                    .zip(sigma0.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(
                    res <= 1e-9 * target.max(1.0),
                    "{mat_name} sample {k}: residual {res:e}"
                );
            }
        }
    }

    #[test]
    fn volume_fraction_profile_matches_the_error_function() {
        let d = 300.0;
        assert_eq!(smooth_volume_fraction(0.0, d), 0.5);
        assert!(smooth_volume_fraction(-10.0 * d, d) > 0.999999);
        assert!(smooth_volume_fraction(10.0 * d, d) < 1e-6);
        // Midslope derivative: dα/ds(0) = −1/(d·√π).
        let h = 1e-3 * d;
        let slope =
            (smooth_volume_fraction(h, d) - smooth_volume_fraction(-h, d)) / (2.0 * h);
        assert_relative_eq!(
            slope,
            -1.0 / (d * std::f64::consts::PI.sqrt()),
            max_relative = 1e-6
        );
    }

    #[test]
    fn all_shipped_presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = preset_config(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cfg.name, name);
            assert!(cfg.t_end > 0.0);
        }
        assert!(matches!(
            preset_config("nonexistent"),
            Err(ConfigError::UnknownPreset { .. })
        ));
    }

    #[test]
    fn parser_rejects_unknown_keys_and_missing_required_ones_with_location() {
        let bad_key = "\
[grid]
x0 = 0\nx1 = 1\ny0 = 0\ny1 = 1\nnx = 4\nny = 4
warp_factor = 9
[time]
t_end = 1.0
[material]
name = brittle
";
        let err = parse_config_str(bad_key, "test.cfg").unwrap_err();
        match err {
            ConfigError::UnknownKey { line, ref key, .. } => {
                assert_eq!(key, "warp_factor");
                assert_eq!(line, 8);
            }
            other => panic!("expected UnknownKey, got {other}"),
        }

        let missing = "\
[grid]
x0 = 0\nx1 = 1\ny0 = 0\ny1 = 1\nnx = 4\nny = 4
[time]
output_every = 0.5
[material]
name = brittle
";
        let err = parse_config_str(missing, "test.cfg").unwrap_err();
        match err {
            ConfigError::MissingKey { ref key, .. } => assert_eq!(key, "t_end"),
            other => panic!("expected MissingKey, got {other}"),
        }

        let bad_value = "\
[grid]
x0 = 0\nx1 = 1\ny0 = 0\ny1 = 1\nnx = four\nny = 4
[time]
t_end = 1.0
[material]
name = brittle
";
        let err = parse_config_str(bad_value, "test.cfg").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 6),
            other => panic!("expected Parse, got {other}"),
        }
    }

    #[test]
    fn preset_overlay_merges_scalars_and_appends_regions() {
        let cfg = parse_config_str(
            "preset = rupture_2d\n[grid]\nnx = 10\nny = 8\n[probe]\nx = 0\ny = 0\n",
            "override.cfg",
        )
        .unwrap();
        assert_eq!(cfg.nx, 10);
        assert_eq!(cfg.ny, 8);
        // Everything else still comes from the preset.
        assert_eq!(cfg.degree, 3);
        assert_eq!(cfg.sigma0[1], -120.0e6);
        assert_eq!(cfg.sigma0[3], 70.0e6);
        assert_eq!(cfg.regions.len(), 1);
        assert_eq!(cfg.probes.len(), 1);
        assert_eq!(cfg.name, "rupture_2d");
    }

    #[test]
    fn initializer_is_a_pure_function_of_position() {
        let cfg = preset_config("rupture_2d").unwrap();
        let init = scenario_initializer(&cfg);
        let a = init(123.4, -567.8).unwrap();
        let b = init(123.4, -567.8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rupture_preset_places_stress_and_damage_as_configured() {
        let cfg = preset_config("rupture_2d").unwrap();
        let model = model_of(&cfg);
        let init = scenario_initializer(&cfg);
        // Center of the pre-damaged strip: the smoothed indicator of a strip
        // whose half width equals the smoothing length peaks at ½(1+erf 1),
        // and the uniform pre-stress holds everywhere.
        let q = init(0.0, 0.0).unwrap();
        assert_relative_eq!(
            q[idx::XI],
            0.5 * (1.0 + libm::erf(1.0)),
            max_relative = 1e-12
        );
        // The distortion realizes the pre-stress through the intact stress
        // map; evaluated at the local damage the mixture is weaker, and that
        // imbalance is what nucleates rupture at the strip.
        let st = ThermoState {
            rho: q[idx::RHO],
            s: 0.0,
            a: distortion(&q),
            j: Vector3::zeros(),
            xi: 0.0,
        };
        let (intact, _) = stress_tensor(&st, &cfg.material);
        assert_relative_eq!(intact[(1, 1)], -120.0e6, max_relative = 1e-6);
        assert_relative_eq!(intact[(0, 1)], 70.0e6, max_relative = 1e-6);
        let th = model.thermo(&q).unwrap();
        assert!(th.sigma_total[(1, 1)].abs() < 120.0e6);
        // Far away: intact, same stress.
        let q = init(4000.0, 5000.0).unwrap();
        assert!(q[idx::XI] < 1e-12);
        let th = model.thermo(&q).unwrap();
        assert_relative_eq!(th.sigma_total[(1, 1)], -120.0e6, max_relative = 1e-6);
        // The algebraic constraint holds by construction.
        let a = distortion(&q);
        assert_relative_eq!(
            q[idx::RHO],
            q[idx::RHO0] * a.determinant(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn stiff_inclusion_preset_realizes_the_wave_and_interface_profiles() {
        let cfg = preset_config("stiff_inclusion").unwrap();
        let model = model_of(&cfg);
        let init = scenario_initializer(&cfg);
        // Wave center: total stress (4, 2, 2)·ε and velocity −2ε.
        let q = init(-0.8, 0.0).unwrap();
        let th = model.thermo(&q).unwrap();
        let eps = 1.0e-4;
        assert_relative_eq!(th.sigma_total[(0, 0)], 4.0 * eps, max_relative = 1e-6);
        assert_relative_eq!(th.sigma_total[(1, 1)], 2.0 * eps, max_relative = 1e-6);
        assert_relative_eq!(th.sigma_total[(2, 2)], 2.0 * eps, max_relative = 1e-6);
        assert_relative_eq!(th.v.x, -2.0 * eps, max_relative = 1e-12);
        // Free surfaces: α crosses ½ at y = ±0.5.
        assert_relative_eq!(init(0.0, 0.5).unwrap()[idx::ALPHA], 0.5, epsilon = 1e-12);
        assert!(init(0.0, 0.3).unwrap()[idx::ALPHA] > 0.999999);
        assert!(init(0.0, 0.51).unwrap()[idx::ALPHA] < 0.5);
        // Inclusion carries the 100x moduli in the advected slots.
        let q = init(0.0, 0.0).unwrap();
        assert_eq!(q[idx::LAM], 200.0);
        assert_eq!(q[idx::MU], 100.0);
        let q = init(0.7, 0.0).unwrap();
        assert_eq!(q[idx::LAM], 2.0);
        assert_eq!(q[idx::MU], 1.0);
    }

    #[test]
    fn plate_impact_preset_blends_the_flyer_into_the_target() {
        let cfg = preset_config("plate_impact_1d").unwrap();
        let model = model_of(&cfg);
        let init = scenario_initializer(&cfg);
        let copper = material_by_name("copper").unwrap();
        let pyrex = material_by_name("pyrex").unwrap();
        // Deep in the flyer (4 smoothing lengths from the contact, so the
        // erf tail still leaves ~1e-8): copper parameters moving at 250 m/s.
        let q = init(-0.0008, 0.0).unwrap();
        assert_relative_eq!(q[idx::MBLEND], 1.0, max_relative = 1e-6);
        assert_relative_eq!(q[idx::RHO0], copper.rho0, max_relative = 1e-6);
        let th = model.thermo(&q).unwrap();
        assert_relative_eq!(th.v.x, 250.0, max_relative = 1e-6);
        // Deep in the target (25 smoothing lengths): resting pyrex.
        let q = init(0.005, 0.0).unwrap();
        assert!(q[idx::MBLEND] < 1e-12);
        assert_relative_eq!(q[idx::RHO0], pyrex.rho0, max_relative = 1e-12);
        let th = model.thermo(&q).unwrap();
        assert!(th.v.x.abs() < 1e-9);
        // The blend midpoint sits at the contact plane.
        let q = init(0.0, 0.0).unwrap();
        assert_relative_eq!(q[idx::MBLEND], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn snapshot_writer_emits_stable_structured_points_files() {
        let cfg_text = "\
[grid]
x0 = 0.0\nx1 = 1.0\ny0 = 0.0\ny1 = 1.0\nnx = 2\nny = 2\ndegree = 1
[time]
t_end = 1.0
[material]
name = brittle
";
        let cfg = parse_config_str(cfg_text, "inline.cfg").unwrap();
        let grid = build_scenario(&cfg).unwrap();
        let dir = std::env::temp_dir().join("gprfail_vtk_test");
        fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("snap_a.vtk");
        let p2 = dir.join("snap_b.vtk");
        write_snapshot_vtk(&grid, &p1).unwrap();
        write_snapshot_vtk(&grid, &p2).unwrap();
        let b1 = fs::read(&p1).unwrap();
        let b2 = fs::read(&p2).unwrap();
        assert_eq!(b1, b2, "writer must be byte-stable");
        let text = String::from_utf8(b1).unwrap();
        assert!(text.contains("DIMENSIONS 3 3 1"));
        assert!(text.contains("CELL_DATA 4"));
        for field in VTK_FIELDS {
            assert!(text.contains(&format!("SCALARS {field} double 1")));
        }
        // Uniform rest state: ξ = 0 everywhere, limiter untouched.
        let xi_block: Vec<&str> = text
            .split("SCALARS xi double 1\nLOOKUP_TABLE default\n")
            .nth(1)
            .unwrap()
            .lines()
            .take(4)
            .collect();
        for line in xi_block {
            assert_eq!(line.parse::<f64>().unwrap(), 0.0);
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn probe_csv_has_header_and_rows() {
        let dir = std::env::temp_dir().join("gprfail_csv_test");
        fs::create_dir_all(&dir).unwrap();
        let empty = ProbeSeries {
            probe: Probe {
                x: 0.0,
                y: 0.0,
                name: "p".into(),
            },
            rows: Vec::new(),
        };
        let path = dir.join("empty.csv");
        write_probe_csv(&empty, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,sigma_xx,sigma_yy,sigma_xy,Y,xi,u,v\n");
        let mut one = empty.clone();
        one.rows.push([0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        write_probe_csv(&one, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().starts_with("0.000000000e0,1.000000000e0"));
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn grid_nodes_match_the_pointwise_initializer() {
        // Mesh independence: the grid's nodal values are the pure-function
        // initializer evaluated at the node positions, at every resolution.
        let cfg = parse_config_str(
            "preset = rupture_2d\n[grid]\nnx = 6\nny = 4\n",
            "coarse.cfg",
        )
        .unwrap();
        let grid = build_scenario(&cfg).unwrap();
        let init = scenario_initializer(&cfg);
        let n = grid.basis.n;
        for (i, j, ix, iy) in [(0, 0, 0, 0), (3, 2, 1, 2), (5, 3, 3, 3)] {
            let x = grid.x0 + (i as f64 + grid.basis.nodes[ix]) * grid.dx;
            let y = grid.y0 + (j as f64 + grid.basis.nodes[iy]) * grid.dy;
            let expect = init(x, y).unwrap();
            let got = grid.cells[j * grid.nx + i].dofs[iy * n + ix];
            assert_eq!(got, expect);
        }
    }
}
