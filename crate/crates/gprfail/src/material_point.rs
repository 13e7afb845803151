//! Zero-dimensional virtual laboratory: one homogeneous material sample
//! driven by a prescribed uniaxial strain rate.
//!
//! The sample carries only the kinetic variables `(ξ, A)`. Density is
//! slaved to the distortion (`ρ = ρ0 det A`), the entropy stays at its
//! reference value and the thermal impulse stays zero, so the full
//! conserved state never appears. The drive enters the distortion
//! equation as `dA/dt = −A ε̇(t)` with only the (1,1) strain-rate entry
//! nonzero; the rest of the right-hand side is the relaxation/damage
//! source shared with the PDE. On top of the kinetic integrators this
//! module offers stress–strain diagrams, strain-rate sweeps, and
//! cyclic-load fatigue experiments (residual strength after N load cycles,
//! and the strength-vs-N durability curve they produce).

use crate::expint::{
    expint_integrate_until, IndicatorVector, IntegrateError, KineticOde, LinearizedSource,
    Tolerances, Trajectory, TrajectorySample, INDICATOR_RATE_FLOOR,
};
use crate::materials::{
    equivalent_stress, relaxation_time, stress_tensor, EquivalentStressSpec, MaterialParams,
    ThermoState,
};
use crate::pde::{kinetic_source, source_jacobian_blocks, BlockSplit, SourceJacobian};
use crate::state::{kinetic_distortion, KineticState};
use nalgebra::Vector3;
use std::f64::consts::PI;
use std::io::{self, Write};

/// Damage level at which a driven test is considered failed (the damage
/// jump is near-instantaneous for brittle sets, so the exact threshold is
/// insensitive).
pub const FAILURE_XI: f64 = 0.5;

/// Damage level at which the destructive phase of a fatigue experiment
/// stops integrating: beyond it the sample is rubble and continued driving
/// only piles up distortion.
pub const FATIGUE_STOP_XI: f64 = 0.99;

/// Prescribed uniaxial strain-rate program `ε̇11(t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum StrainDrive {
    /// Constant strain rate.
    Constant {
        /// Strain rate [s⁻¹].
        rate: f64,
    },
    /// `ε̇11(t) = amplitude · sin(2π·frequency·t)`: one-sided cyclic
    /// loading whose strain returns to zero after every full period.
    Sinusoidal {
        /// Strain-rate amplitude [s⁻¹].
        amplitude: f64,
        /// Cycle frequency [Hz].
        frequency: f64,
    },
    /// Segments of given durations played back to back; past the last
    /// segment the rate is zero (the sample is simply held).
    Composite {
        /// `(duration [s], drive)` pairs; durations must be positive.
        segments: Vec<(f64, StrainDrive)>,
    },
}

impl StrainDrive {
    /// Strain rate at time `t ≥ 0`.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            StrainDrive::Constant { rate } => *rate,
            StrainDrive::Sinusoidal {
                amplitude,
                frequency,
            } => amplitude * (2.0 * PI * frequency * t).sin(),
            StrainDrive::Composite { segments } => {
                let mut local = t;
                for (duration, drive) in segments {
                    debug_assert!(*duration > 0.0, "segment durations must be positive");
                    if local < *duration {
                        return drive.rate_at(local);
                    }
                    local -= duration;
                }
                0.0
            }
        }
    }

    /// Integrated prescribed strain `∫₀ᵗ ε̇11 dτ` (closed form).
    pub fn strain_at(&self, t: f64) -> f64 {
        match self {
            StrainDrive::Constant { rate } => rate * t,
            StrainDrive::Sinusoidal {
                amplitude,
                frequency,
            } => {
                let w = 2.0 * PI * frequency;
                amplitude * (1.0 - (w * t).cos()) / w
            }
            StrainDrive::Composite { segments } => {
                let mut local = t;
                let mut strain = 0.0;
                for (duration, drive) in segments {
                    if local < *duration {
                        return strain + drive.strain_at(local);
                    }
                    strain += drive.strain_at(*duration);
                    local -= duration;
                }
                strain
            }
        }
    }

    /// Collects the instants (offset by `offset`) where the rate may jump:
    /// every segment boundary, including nested ones. Integration is split
    /// at these points so that no step straddles a rate discontinuity.
    fn collect_breakpoints(&self, offset: f64, out: &mut Vec<f64>) {
        if let StrainDrive::Composite { segments } = self {
            let mut t = offset;
            for (duration, drive) in segments {
                drive.collect_breakpoints(t, out);
                t += duration;
                out.push(t);
            }
        }
    }
}

/// One recorded point of a driven-sample experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramSample {
    /// Time [s].
    pub t: f64,
    /// Integrated prescribed strain [–] (negative in compression).
    pub strain: f64,
    /// Equivalent stress [Pa].
    pub y: f64,
    /// Damage variable [–].
    pub xi: f64,
    /// First distortion component [–].
    pub a11: f64,
}

/// Uniformly resampled record of one driven-sample experiment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagram {
    /// Samples in strictly increasing time order.
    pub samples: Vec<DiagramSample>,
}

impl Diagram {
    /// Largest recorded equivalent stress.
    pub fn peak_y(&self) -> f64 {
        self.samples.iter().map(|s| s.y).fold(0.0, f64::max)
    }

    /// Writes the record as CSV with a `t,strain,Y,xi,A11` header.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,strain,Y,xi,A11")?;
        for s in &self.samples {
            writeln!(
                w,
                "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                s.t, s.strain, s.y, s.xi, s.a11
            )?;
        }
        Ok(())
    }
}

/// Kinetic state of an intact resting sample (`ξ = 0`, `A = I`).
pub fn rest_state() -> KineticState {
    let mut q = [0.0; 10];
    q[1] = 1.0;
    q[5] = 1.0;
    q[9] = 1.0;
    q
}

/// Kinetic slots of the first distortion column `A11, A21, A31` — the only
/// entries a uniaxial (1,1) strain rate feeds, since `(A ε̇)_ik = ε̇11 A_i1
/// δ_k1`. Values are positions within the 9-component distortion part.
const DRIVEN_POSITIONS: [usize; 3] = [0, 3, 6];

/// Adds the prescribed-drive contribution `−(A ε̇)` to a kinetic source.
fn add_drive_source(rate: f64, q: &KineticState, s: &mut KineticState) {
    for pos in DRIVEN_POSITIONS {
        s[1 + pos] -= rate * q[1 + pos];
    }
}

/// Adds the drive's (diagonal) derivative to a block Jacobian:
/// `∂(−ε̇11 A_i1)/∂A_p1 = −ε̇11 δ_ip`.
fn add_drive_jacobian(rate: f64, jac: &mut SourceJacobian) {
    match jac {
        SourceJacobian::Two { j_a, .. } => {
            for pos in DRIVEN_POSITIONS {
                j_a[(pos, pos)] -= rate;
            }
        }
        SourceJacobian::Four { blocks, .. } => {
            for pos in DRIVEN_POSITIONS {
                let (b, i) = four_block_position(pos);
                blocks[b][(i, i)] -= rate;
            }
        }
    }
}

/// Locates a distortion position inside the four-block grouping.
fn four_block_position(pos: usize) -> (usize, usize) {
    for (b, group) in crate::pde::FOUR_BLOCK_GROUPS.iter().enumerate() {
        if let Some(i) = group.iter().position(|&p| p == pos) {
            return (b, i);
        }
    }
    unreachable!("position {pos} outside the 9-component distortion vector")
}

/// The kinetic ODE of one material point: the relaxation/damage source
/// shared with the PDE plus an optional prescribed strain-rate drive.
///
/// Also used by the PDE solver's per-cell source substeps, where the drive
/// is absent and the conserved density is frozen for the substep.
#[derive(Debug, Clone)]
pub struct DamageKinetics<'a> {
    /// Material parameters.
    pub mat: MaterialParams,
    /// Prescribed drive; `None` leaves pure relaxation kinetics.
    pub drive: Option<&'a StrainDrive>,
    /// Jacobian split used by the linearization.
    pub split: BlockSplit,
    /// Equivalent-stress measure entering the relaxation time and the
    /// damage rate.
    pub stress_spec: EquivalentStressSpec,
    /// Density seen by the stress closure: `None` slaves it to the
    /// distortion (`ρ = ρ0 det A`, a homogeneous sample), `Some` freezes
    /// it (source substeps, where the conserved density cannot change).
    pub frozen_rho: Option<f64>,
    /// Specific entropy seen by the stress closure [J·kg⁻¹·K⁻¹].
    pub entropy: f64,
}

impl<'a> DamageKinetics<'a> {
    /// A driven homogeneous sample at reference entropy.
    pub fn laboratory(mat: MaterialParams, drive: &'a StrainDrive) -> Self {
        DamageKinetics {
            mat,
            drive: Some(drive),
            split: BlockSplit::TwoBlock,
            stress_spec: EquivalentStressSpec::VonMises,
            frozen_rho: None,
            entropy: 0.0,
        }
    }

    /// Undriven relaxation kinetics at frozen density and entropy (one
    /// cell's source substep).
    pub fn relaxation(
        mat: MaterialParams,
        rho: f64,
        entropy: f64,
        stress_spec: EquivalentStressSpec,
    ) -> DamageKinetics<'static> {
        DamageKinetics {
            mat,
            drive: None,
            split: BlockSplit::TwoBlock,
            stress_spec,
            frozen_rho: Some(rho),
            entropy,
        }
    }

    fn density(&self, q: &KineticState) -> f64 {
        self.frozen_rho
            .unwrap_or_else(|| self.mat.rho0 * kinetic_distortion(q).determinant())
    }

    /// Equivalent stress of the current state.
    pub fn stress(&self, q: &KineticState) -> f64 {
        let st = ThermoState {
            rho: self.density(q),
            s: self.entropy,
            a: kinetic_distortion(q),
            j: Vector3::zeros(),
            xi: q[0].clamp(0.0, 1.0),
        };
        let (total, _) = stress_tensor(&st, &self.mat);
        equivalent_stress(&total, &self.stress_spec)
    }

    fn rate(&self, t: f64) -> f64 {
        self.drive.map_or(0.0, |d| d.rate_at(t))
    }
}

impl KineticOde for DamageKinetics<'_> {
    fn source(&self, q: &KineticState, t: f64) -> KineticState {
        let y = self.stress(q);
        let mut s = kinetic_source(q, self.density(q), y, &self.mat);
        let r = self.rate(t);
        if r != 0.0 {
            add_drive_source(r, q, &mut s);
        }
        s
    }

    fn linearize(&self, q: &KineticState, t: f64) -> LinearizedSource {
        let y = self.stress(q);
        let (mut jstar, mut bstar) =
            source_jacobian_blocks(q, self.density(q), y, &self.mat, self.split);
        let r = self.rate(t);
        if r != 0.0 {
            add_drive_source(r, q, &mut bstar);
            add_drive_jacobian(r, &mut jstar);
        }
        LinearizedSource {
            bstar,
            jstar,
            qstar: *q,
            tstar: t,
        }
    }

    fn indicator(&self, q: &KineticState, t: f64) -> IndicatorVector {
        let y = self.stress(q);
        let s = self.source(q, t);
        let tau1 = relaxation_time(q[0].clamp(0.0, 1.0), y, &self.mat);
        let tau_xi = 1.0 / (s[0].abs() + INDICATOR_RATE_FLOOR);
        let mut c = [0.0; 12];
        c[..10].copy_from_slice(q);
        c[10] = tau1;
        c[11] = tau_xi;
        IndicatorVector(c)
    }

    fn equivalent_stress(&self, q: &KineticState, _t: f64) -> f64 {
        self.stress(q)
    }
}

/// Exact right-hand side of one driven material point at `(q, t)`.
pub fn material_point_rhs(
    q: &KineticState,
    t: f64,
    drive: &StrainDrive,
    mat: &MaterialParams,
) -> KineticState {
    DamageKinetics::laboratory(*mat, drive).source(q, t)
}

/// Adaptive integration of one driven sample from rest, split at the
/// drive's rate discontinuities so no step straddles a kink, stopping
/// early once `stop` accepts a sample.
fn integrate_lab(
    mat: &MaterialParams,
    drive: &StrainDrive,
    tend: f64,
    dt0: f64,
    stop: impl Fn(&TrajectorySample) -> bool + Copy,
) -> Result<Trajectory, IntegrateError> {
    let lab = DamageKinetics::laboratory(*mat, drive);
    let mut breaks = Vec::new();
    drive.collect_breakpoints(0.0, &mut breaks);
    breaks.retain(|&b| b > 0.0 && b < tend);
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup();
    breaks.push(tend);

    let tol = Tolerances::default();
    let mut traj = Trajectory::default();
    let mut q = rest_state();
    let mut t = 0.0;
    for &b in &breaks {
        if b <= t {
            continue;
        }
        let part = expint_integrate_until(&lab, &q, t, b, &tol, dt0.min(b - t), stop)?;
        let skip = usize::from(!traj.samples.is_empty());
        traj.samples.extend(part.samples.iter().skip(skip));
        let last = *traj.samples.last().expect("a segment always yields samples");
        q = last.q;
        t = last.t;
        if stop(&last) {
            break;
        }
    }
    Ok(traj)
}

/// Uniform resampling of a trajectory into a [`Diagram`] on `nsamples`
/// points across `[0, tend]`.
fn resample_diagram(
    traj: &Trajectory,
    drive: &StrainDrive,
    tend: f64,
    nsamples: usize,
) -> Diagram {
    let mut samples = Vec::with_capacity(nsamples);
    for i in 0..nsamples {
        let t = tend * i as f64 / (nsamples - 1) as f64;
        let q = traj.q_at(t);
        samples.push(DiagramSample {
            t,
            strain: drive.strain_at(t),
            y: traj.y_at(t),
            xi: q[0],
            a11: q[1],
        });
    }
    Diagram { samples }
}

/// Drives an intact sample at a constant strain rate and records the
/// stress–strain response.
pub fn stress_strain_test(
    mat: &MaterialParams,
    rate: f64,
    tend: f64,
    nsamples: usize,
) -> Result<Diagram, IntegrateError> {
    assert!(rate != 0.0, "the prescribed strain rate must be nonzero");
    assert!(tend > 0.0, "the horizon must be positive");
    assert!(nsamples >= 2, "a diagram needs at least two samples");
    let drive = StrainDrive::Constant { rate };
    let traj = integrate_lab(mat, &drive, tend, 1e-3 * tend, |_| false)?;
    Ok(resample_diagram(&traj, &drive, tend, nsamples))
}

/// One stress–strain diagram per strain rate, same horizon and sampling.
pub fn rate_sweep(
    mat: &MaterialParams,
    rates: &[f64],
    tend: f64,
    nsamples: usize,
) -> Result<Vec<Diagram>, IntegrateError> {
    rates
        .iter()
        .map(|&r| stress_strain_test(mat, r, tend, nsamples))
        .collect()
}

/// Result of one cyclic-loading experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FatigueOutcome {
    /// Peak equivalent stress reached during the destructive phase [Pa];
    /// NaN when the experiment has no destructive phase.
    pub residual_strength: f64,
    /// Logarithmically thinned `(t, ξ)` history of the whole experiment.
    pub xi_history: Vec<(f64, f64)>,
}

/// Cyclic-load fatigue experiment: `ncycles` sinusoidal periods followed
/// by a constant-rate destructive test that runs until the sample fails
/// (`ξ > 0.99`) or the accumulated destructive strain reaches 100.
///
/// `ncycles = 0` measures the virgin strength (no cyclic phase).
/// `destructive_rate = 0` skips the destructive phase: the residual
/// strength is undefined and reported as NaN with a warning.
pub fn fatigue_test(
    mat: &MaterialParams,
    amplitude: f64,
    frequency: f64,
    ncycles: usize,
    destructive_rate: f64,
) -> Result<FatigueOutcome, IntegrateError> {
    assert!(frequency > 0.0, "the cycle frequency must be positive");
    let t_cyc = ncycles as f64 / frequency;
    let mut segments = Vec::new();
    if ncycles > 0 {
        segments.push((
            t_cyc,
            StrainDrive::Sinusoidal {
                amplitude,
                frequency,
            },
        ));
    }
    let destructive = destructive_rate != 0.0;
    if destructive {
        segments.push((
            100.0 / destructive_rate.abs(),
            StrainDrive::Constant {
                rate: destructive_rate,
            },
        ));
    } else {
        eprintln!(
            "warning: fatigue test with a zero destructive rate has no destructive phase; \
             residual strength is undefined (NaN)"
        );
    }
    let tend: f64 = segments.iter().map(|(d, _)| d).sum();
    if tend == 0.0 {
        return Ok(FatigueOutcome {
            residual_strength: f64::NAN,
            xi_history: vec![(0.0, 0.0)],
        });
    }
    let drive = StrainDrive::Composite { segments };
    let dt0 = if ncycles > 0 {
        1e-3 / frequency
    } else {
        1e-3 * tend
    };
    let traj = integrate_lab(mat, &drive, tend, dt0, |s: &TrajectorySample| {
        s.t >= t_cyc && s.q[0] > FATIGUE_STOP_XI
    })?;
    let residual_strength = if destructive {
        traj.samples
            .iter()
            .filter(|s| s.t >= t_cyc)
            .map(|s| s.y)
            .fold(f64::NAN, f64::max)
    } else {
        f64::NAN
    };
    Ok(FatigueOutcome {
        residual_strength,
        xi_history: log_thinned_history(&traj, 800),
    })
}

/// Strength-vs-cycle-count durability curve: one fatigue experiment per
/// entry of the ascending `nlist`.
pub fn wohler_curve(
    mat: &MaterialParams,
    nlist: &[usize],
    amplitude: f64,
    frequency: f64,
    destructive_rate: f64,
) -> Result<Vec<(usize, f64)>, IntegrateError> {
    assert!(!nlist.is_empty(), "the cycle-count list must be non-empty");
    assert!(
        nlist.windows(2).all(|w| w[0] < w[1]),
        "cycle counts must be strictly ascending"
    );
    nlist
        .iter()
        .map(|&n| {
            fatigue_test(mat, amplitude, frequency, n, destructive_rate)
                .map(|o| (n, o.residual_strength))
        })
        .collect()
}

/// Thins a trajectory's damage history to at most `max_points` samples at
/// logarithmically spaced times (all samples when there are few).
fn log_thinned_history(traj: &Trajectory, max_points: usize) -> Vec<(f64, f64)> {
    let s = &traj.samples;
    if s.len() <= max_points {
        return s.iter().map(|x| (x.t, x.q[0])).collect();
    }
    let t_last = s.last().unwrap().t;
    let t_first = s
        .iter()
        .map(|x| x.t)
        .find(|&t| t > 0.0)
        .unwrap_or(t_last);
    let mut out = vec![(s[0].t, s[0].q[0])];
    if t_last <= t_first {
        out.push((t_last, s.last().unwrap().q[0]));
        return out;
    }
    let ratio = (t_last / t_first).powf(1.0 / (max_points as f64 - 2.0));
    let mut next = t_first;
    for x in s.iter().skip(1) {
        if x.t >= next {
            out.push((x.t, x.q[0]));
            while next <= x.t {
                next *= ratio;
            }
        }
    }
    if out.last().map(|&(t, _)| t) != Some(t_last) {
        out.push((t_last, s.last().unwrap().q[0]));
    }
    out
}

/// First time the damage variable crosses `threshold`, treating any
/// non-finite sample or non-positive distortion determinant as the failure
/// instant. Explicit reference integrators cannot cross the failure
/// singularity — they blow up within a step of entering it — so their
/// blow-up time is the sharpest failure estimate they provide.
pub fn failure_time_robust(traj: &Trajectory, threshold: f64) -> Option<f64> {
    let mut prev: Option<&TrajectorySample> = None;
    for s in &traj.samples {
        let finite = s.q.iter().all(|x| x.is_finite());
        if !finite || kinetic_distortion(&s.q).determinant() <= 0.0 {
            return Some(prev.map_or(s.t, |p| p.t));
        }
        if s.q[0] >= threshold {
            return Some(match prev {
                Some(p) if s.q[0] > p.q[0] => {
                    p.t + (threshold - p.q[0]) / (s.q[0] - p.q[0]) * (s.t - p.t)
                }
                _ => s.t,
            });
        }
        prev = Some(s);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expint::{expint_integrate, oracle_rk4_integrate};
    use crate::materials::{
        damage_rate_theta, material_by_name, specific_total_energy,
    };
    use nalgebra::Matrix3;

    fn mat(name: &str) -> MaterialParams {
        material_by_name(name).unwrap()
    }

    #[test]
    fn resting_intact_sample_has_zero_rhs() {
        let drive = StrainDrive::Constant { rate: 0.0 };
        for name in ["brittle", "ductile", "fatigue"] {
            let s = material_point_rhs(&rest_state(), 0.0, &drive, &mat(name));
            assert_eq!(s, [0.0; 10], "{name}");
        }
    }

    #[test]
    fn drive_scales_first_distortion_column() {
        let m = mat("brittle").unbreakable();
        let drive = StrainDrive::Constant { rate: 0.3 };
        let s = material_point_rhs(&rest_state(), 0.0, &drive, &m);
        assert_eq!(s[1], -0.3);
        for (i, v) in s.iter().enumerate() {
            if i != 1 {
                assert_eq!(*v, 0.0, "slot {i}");
            }
        }
        // Away from the identity the whole first column is driven. The
        // perturbation is kept small so the relaxation part of the source
        // (nonzero once the deviatoric strain is) stays far below the
        // drive and the drive term is isolated.
        let mut q = rest_state();
        q[4] = 1e-6; // A21
        q[7] = -2e-6; // A31
        let s = material_point_rhs(&q, 0.0, &drive, &m);
        assert!((s[4] - (-0.3 * 1e-6)).abs() < 1e-18);
        assert!((s[7] - (-0.3 * -2e-6)).abs() < 1e-18);
    }

    #[test]
    fn drive_jacobian_fills_the_expected_diagonal_slots() {
        let m = mat("brittle").unbreakable();
        let drive = StrainDrive::Constant { rate: 0.7 };
        for split in [BlockSplit::TwoBlock, BlockSplit::FourBlock] {
            let mut lab = DamageKinetics::laboratory(m, &drive);
            lab.split = split;
            let lin = lab.linearize(&rest_state(), 0.0);
            // At A = I the relaxation Jacobian is ~1e−19 (tiny 1/τ1), so
            // the drive's −0.7 diagonal dominates every populated entry.
            let mut dense = [[0.0; 9]; 9];
            match &lin.jstar {
                SourceJacobian::Two { j_a, .. } => {
                    for r in 0..9 {
                        for c in 0..9 {
                            dense[r][c] = j_a[(r, c)];
                        }
                    }
                }
                SourceJacobian::Four { blocks, .. } => {
                    for (b, group) in crate::pde::FOUR_BLOCK_GROUPS.iter().enumerate() {
                        for (i, &r) in group.iter().enumerate() {
                            for (j, &c) in group.iter().enumerate() {
                                dense[r][c] = blocks[b][(i, j)];
                            }
                        }
                    }
                }
            }
            for r in 0..9 {
                for c in 0..9 {
                    let expected = if r == c && DRIVEN_POSITIONS.contains(&r) {
                        -0.7
                    } else {
                        0.0
                    };
                    assert!(
                        (dense[r][c] - expected).abs() < 1e-9,
                        "{split:?} entry ({r},{c}) = {}",
                        dense[r][c]
                    );
                }
            }
            assert_eq!(lin.bstar[1], -0.7);
        }
    }

    #[test]
    fn damage_rhs_matches_energy_derivative_finite_difference() {
        let m = mat("brittle");
        let mut q = rest_state();
        q[0] = 0.3;
        let a = Matrix3::new(1.02, 0.01, 0.0, -0.005, 0.99, 0.004, 0.0, -0.01, 1.005);
        for (i, v) in a.transpose().iter().enumerate() {
            q[1 + i] = *v; // nalgebra iterates column-major; store row-major
        }
        let drive = StrainDrive::Constant { rate: 0.0 };
        let lab = DamageKinetics::laboratory(m, &drive);
        let rho = m.rho0 * kinetic_distortion(&q).determinant();
        let y = lab.stress(&q);

        let h = 1e-6;
        let energy = |xi: f64| {
            let st = ThermoState {
                rho,
                s: 0.0,
                a: kinetic_distortion(&q),
                j: Vector3::zeros(),
                xi,
            };
            specific_total_energy(&st, &Vector3::zeros(), &m)
        };
        let e_xi_fd = (energy(0.3 + h) - energy(0.3 - h)) / (2.0 * h);
        let expected = damage_rate_theta(0.3, y, &m) * (-e_xi_fd);

        let s = material_point_rhs(&q, 0.0, &drive, &m);
        assert!(expected > 0.0);
        assert!(
            ((s[0] - expected) / expected).abs() < 1e-6,
            "rhs {} vs finite difference {expected}",
            s[0]
        );
    }

    /// Closed form for the undamaged uniaxially driven response: with
    /// `A = diag(e^{−rt}, 1, 1)` and `g = e^{−2rt}`, the equivalent
    /// stress is `Y = (μ/3)·√g·(g−1)·(2g+1)`, whose small-strain slope
    /// against |∫ε̇ dt| is exactly `2μ`.
    fn uniaxial_elastic_y(mu: f64, rate: f64, t: f64) -> f64 {
        let g = (-2.0 * rate * t).exp();
        mu / 3.0 * g.sqrt() * (g - 1.0).abs() * (2.0 * g + 1.0)
    }

    #[test]
    fn elastic_response_matches_closed_form_and_rk4() {
        let m = mat("brittle").unbreakable();
        let rate = -0.001;
        let tend = 2.0;
        let drive = StrainDrive::Constant { rate };
        let lab = DamageKinetics::laboratory(m, &drive);
        let traj = expint_integrate(
            &lab,
            &rest_state(),
            0.0,
            tend,
            &Tolerances::default(),
            1e-3 * tend,
        )
        .unwrap();
        let last = traj.samples.last().unwrap();
        let a11_exact = (-rate * tend).exp();
        assert!((last.q[1] - a11_exact).abs() < 1e-12 * a11_exact);
        let y_exact = uniaxial_elastic_y(m.mu_i, rate, tend);
        assert!(((last.y - y_exact) / y_exact).abs() < 1e-10);

        let rk = oracle_rk4_integrate(&lab, &rest_state(), 0.0, tend, 20_000);
        let rk_last = rk.samples.last().unwrap();
        assert!((rk_last.q[1] - a11_exact).abs() < 1e-12 * a11_exact);
        assert!(((rk_last.y - last.y) / y_exact).abs() < 1e-10);
    }

    #[test]
    fn elastic_slope_is_twice_the_intact_shear_modulus() {
        let m = mat("brittle").unbreakable();
        let diagram = stress_strain_test(&m, -0.001, 2.0, 401).unwrap();
        // Least-squares slope through the origin over the early branch.
        let (mut num, mut den) = (0.0, 0.0);
        for s in &diagram.samples {
            let x = s.strain.abs();
            if x > 0.0 && x <= 4e-4 {
                num += s.y * x;
                den += x * x;
            }
        }
        let slope = num / den;
        let predicted = 2.0 * m.mu_i;
        assert!(
            ((slope - predicted) / predicted).abs() < 0.02,
            "slope {slope:.4e} vs {predicted:.4e}"
        );
    }

    #[test]
    fn loading_then_unloading_is_reversible() {
        let m = mat("brittle").unbreakable();
        let drive = StrainDrive::Composite {
            segments: vec![
                (2.0, StrainDrive::Constant { rate: -0.001 }),
                (2.0, StrainDrive::Constant { rate: 0.001 }),
            ],
        };
        let traj = integrate_lab(&m, &drive, 4.0, 4e-3, |_| false).unwrap();
        let peak = traj.peak_y();
        let final_y = traj.samples.last().unwrap().y;
        assert!(peak > 1e8, "peak {peak:.3e}");
        assert!(final_y <= 1e-6 * peak, "final {final_y:.3e} peak {peak:.3e}");
    }

    #[test]
    fn identical_inputs_give_identical_diagrams() {
        let m = mat("brittle");
        let d1 = stress_strain_test(&m, -0.004, 3.0, 101).unwrap();
        let d2 = stress_strain_test(&m, -0.004, 3.0, 101).unwrap();
        assert_eq!(d1, d2);
        let sweep = rate_sweep(&m, &[-0.004, -0.004], 3.0, 101).unwrap();
        assert_eq!(sweep[0], sweep[1]);
    }

    #[test]
    fn rate_sign_flip_keeps_the_elastic_stress_within_one_percent() {
        let m = mat("brittle");
        let plus = stress_strain_test(&m, 0.001, 1.0, 101).unwrap();
        let minus = stress_strain_test(&m, -0.001, 1.0, 101).unwrap();
        for (p, q) in plus.samples.iter().zip(minus.samples.iter()) {
            if p.strain.abs() < 1e-4 {
                continue;
            }
            let rel = (p.y - q.y).abs() / q.y.max(p.y);
            assert!(rel < 0.01, "t = {} rel = {rel}", p.t);
        }
    }

    #[test]
    fn damage_is_monotone_along_a_failing_trajectory() {
        let m = mat("brittle");
        let drive = StrainDrive::Constant { rate: -0.004 };
        let traj = integrate_lab(&m, &drive, 4.2, 4.2e-3, |s| s.q[0] >= 0.95).unwrap();
        let mut worst = 0.0f64;
        for w in traj.samples.windows(2) {
            worst = worst.min(w[1].q[0] - w[0].q[0]);
        }
        assert!(worst >= -1e-14, "worst backward step {worst:.3e}");
        assert!(traj.samples.last().unwrap().q[0] > FAILURE_XI);
    }

    #[test]
    fn adaptive_integrator_tracks_rk4_through_failure() {
        // Failure at this rate: brittle ≈ 3.93 s, ductile ≈ 7.11 s; the
        // horizons sit just past those so neither run wastes time on the
        // post-failure flow regime.
        for (name, tend) in [("brittle", 4.4), ("ductile", 7.8)] {
            let m = mat(name);
            let rate = -0.004;
            let drive = StrainDrive::Constant { rate };
            let lab = DamageKinetics::laboratory(m, &drive);
            let traj =
                integrate_lab(&m, &drive, tend, 1e-3 * tend, |s| s.q[0] >= 0.9).unwrap();
            let nsteps = (tend / 2.5e-5) as usize;
            let rk = oracle_rk4_integrate(&lab, &rest_state(), 0.0, tend, nsteps);
            let t_ad = failure_time_robust(&traj, FAILURE_XI)
                .unwrap_or_else(|| panic!("{name}: no adaptive failure within {tend} s"));
            let t_rk = failure_time_robust(&rk, FAILURE_XI)
                .unwrap_or_else(|| panic!("{name}: no reference failure within {tend} s"));
            let rel_t = (t_ad - t_rk).abs() / t_rk;
            assert!(rel_t < 5e-3, "{name}: failure {t_ad} vs {t_rk} ({rel_t:.2e})");
            // Stress agreement on the pre-failure branch.
            let mut worst = 0.0f64;
            for i in 1..400 {
                let t = 0.05 * t_rk + (0.90 * t_rk) * i as f64 / 400.0;
                let y_ref = rk.y_at(t);
                if y_ref > 1e5 {
                    worst = worst.max((traj.y_at(t) - y_ref).abs() / y_ref);
                }
            }
            assert!(worst < 1e-3, "{name}: worst stress deviation {worst:.2e}");
        }
    }

    #[test]
    fn fatigue_outcome_is_well_formed() {
        let m = mat("fatigue");
        let out = fatigue_test(&m, -0.001, 1.0, 5, -1e-5).unwrap();
        assert!(out.residual_strength.is_finite());
        assert!(out.residual_strength > 1e7);
        assert!(!out.xi_history.is_empty());
        let mut worst = 0.0f64;
        for w in out.xi_history.windows(2) {
            assert!(w[1].0 > w[0].0);
            worst = worst.min(w[1].1 - w[0].1);
        }
        assert!(worst >= -1e-14);

        // Virgin test: no cyclic phase at all.
        let virgin = fatigue_test(&m, -0.001, 1.0, 0, -1e-5).unwrap();
        assert!(virgin.residual_strength.is_finite());

        // No destructive phase: strength undefined.
        let undefined = fatigue_test(&m, -0.001, 1.0, 2, 0.0).unwrap();
        assert!(undefined.residual_strength.is_nan());
        assert!(!undefined.xi_history.is_empty());
    }

    #[test]
    fn few_load_cycles_leave_the_strength_unchanged() {
        let m = mat("fatigue");
        let curve = wohler_curve(&m, &[10, 100], -0.001, 1.0, -1e-5).unwrap();
        let (s10, s100) = (curve[0].1, curve[1].1);
        assert!(s10.is_finite() && s100.is_finite());
        assert!(s100 <= s10 * (1.0 + 1e-12), "{s100:.6e} vs {s10:.6e}");
        assert!(
            ((s10 - s100) / s10).abs() < 0.01,
            "short-durability strengths differ: {s10:.6e} vs {s100:.6e}"
        );
    }

    #[test]
    fn drive_closed_forms_are_consistent() {
        let drive = StrainDrive::Composite {
            segments: vec![
                (1.5, StrainDrive::Sinusoidal { amplitude: -0.002, frequency: 2.0 }),
                (2.0, StrainDrive::Constant { rate: 0.003 }),
            ],
        };
        // Strain is the integral of the rate: check against the trapezoid
        // rule on a fine grid, including past the end of the program. The
        // tolerance covers the O(Δrate·dt) error of the one interval that
        // straddles each segment boundary (the rate is discontinuous there).
        let tend = 4.0;
        let n = 200_000;
        let dt = tend / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let t0 = i as f64 * dt;
            acc += 0.5 * (drive.rate_at(t0) + drive.rate_at(t0 + dt)) * dt;
            let t = t0 + dt;
            let exact = drive.strain_at(t);
            assert!(
                (acc - exact).abs() < 1e-7,
                "t = {t}: {acc} vs {exact}"
            );
        }
        assert_eq!(drive.rate_at(5.0), 0.0);
        let mut breaks = Vec::new();
        drive.collect_breakpoints(0.0, &mut breaks);
        assert_eq!(breaks, vec![1.5, 3.5]);
    }
}
