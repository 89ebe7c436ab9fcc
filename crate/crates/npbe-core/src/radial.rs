//! Radial reduction of the nPBE on balls: the nonlinear spherical Bessel
//! equation
//!
//! ```text
//!   r y'' + A y' + kt^2 r sinh(y) = r lambda,    A = d - 1,
//! ```
//!
//! integrated as the first-order system `y' = w`,
//! `w' = -kt^2 sinh(y) - A w/(r + eps) + lambda` from `(y, w)(0) = (c, 0)`.
//!
//! For `A = 0` the system is Hamiltonian with
//! `H(y, w) = w^2/2 + kt^2 (cosh y - 1) - lambda y` conserved; for `A > 0`
//! the exact decay identity `dH/dr = -A w^2 / (r + eps)` holds, which bounds
//! every forward orbit inside the level set of `H(c, 0)` and forces the
//! oscillation to cross the boundary target `asinh(lambda / kt^2)` at an
//! infinite ladder of radii `R_1 < R_2 < ...`. Posing the boundary-value
//! problem at such an `R` yields two distinct solutions with identical
//! boundary data, and the ball is large enough that the linear-part
//! invertibility condition fails; both facts are packaged as an executable
//! certificate.

use std::io::Write;

use crate::{Error, Result};

/// First positive zero of the Bessel function J0; principal Dirichlet
/// eigenvalue of the unit disk is its square.
const BESSEL_J0_FIRST_ZERO: f64 = 2.404825557695773;

/// Parameters of the radial problem.
#[derive(Debug, Clone, Copy)]
pub struct RadialProblem {
    /// Damping coefficient A >= 0; equals d - 1 on a d-ball.
    pub a_coef: f64,
    /// Integer dimension when the problem came from a ball; needed by the
    /// non-uniqueness certificate for the eigenvalue witness.
    pub dimension: Option<usize>,
    pub kappa_tilde: f64,
    pub lambda: f64,
    /// Initial value y(0).
    pub c0: f64,
    /// Regularization offset for the start-at-zero mode.
    pub eps_reg: f64,
    pub r_max: f64,
    /// Replace `sinh(y)` by `y` (linear comparison mode).
    pub linearized: bool,
}

impl RadialProblem {
    /// Ball problem in integer dimension `d` (A = d - 1).
    pub fn on_ball(d: usize, kappa_tilde: f64, lambda: f64, c0: f64, r_max: f64) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidParameter {
                name: "dimension",
                reason: "must be >= 1".into(),
            });
        }
        Self::validate(kappa_tilde, lambda, r_max)?;
        Ok(RadialProblem {
            a_coef: (d - 1) as f64,
            dimension: Some(d),
            kappa_tilde,
            lambda,
            c0,
            eps_reg: 1e-4,
            r_max,
            linearized: false,
        })
    }

    /// General damping coefficient A >= 0.
    pub fn with_damping(
        a_coef: f64,
        kappa_tilde: f64,
        lambda: f64,
        c0: f64,
        r_max: f64,
    ) -> Result<Self> {
        if !(a_coef >= 0.0 && a_coef.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "a_coef",
                reason: "must be finite and >= 0".into(),
            });
        }
        Self::validate(kappa_tilde, lambda, r_max)?;
        Ok(RadialProblem {
            a_coef,
            dimension: None,
            kappa_tilde,
            lambda,
            c0,
            eps_reg: 1e-4,
            r_max,
            linearized: false,
        })
    }

    fn validate(kappa_tilde: f64, lambda: f64, r_max: f64) -> Result<()> {
        if !(kappa_tilde > 0.0 && kappa_tilde.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "kappa_tilde",
                reason: "must be finite and > 0".into(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "must be finite and >= 0".into(),
            });
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "r_max",
                reason: "must be finite and > 0".into(),
            });
        }
        Ok(())
    }

    /// Boundary target: the constant equilibrium value. `asinh(lambda/kt^2)`
    /// for the nonlinear problem, `lambda/kt^2` for the linearized one.
    pub fn y_target(&self) -> f64 {
        let q = self.lambda / (self.kappa_tilde * self.kappa_tilde);
        if self.linearized {
            q
        } else {
            q.asinh()
        }
    }

    /// Hamiltonian `w^2/2 + kt^2 (cosh y - 1) - lambda y`.
    pub fn hamiltonian(&self, y: f64, w: f64) -> f64 {
        let k2 = self.kappa_tilde * self.kappa_tilde;
        0.5 * w * w + k2 * (y.cosh() - 1.0) - self.lambda * y
    }

    fn sigma(&self, y: f64) -> f64 {
        if self.linearized {
            y
        } else {
            y.sinh()
        }
    }

    /// Auto-extension cap for the zero-radius search.
    pub fn r_cap(&self) -> f64 {
        100.0 * (2.0 * std::f64::consts::PI / self.kappa_tilde).max(1.0)
    }
}

/// One sample of a trajectory, with the Hamiltonian value attached.
#[derive(Debug, Clone, Copy)]
pub struct PhaseState {
    pub r: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// How to launch the integration at the coordinate singularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Integrate the regularized vector field `-A w/(r + eps_reg)` from
    /// r = 0 exactly.
    Regularized,
    /// Start the unregularized field at `r0 = 1e-6` from the series
    /// `y = c + a r^2`, `a = (lambda - kt^2 sinh c) / (2(A+1))`.
    TaylorStart,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    /// Relative and absolute tolerance of the embedded 4/5 pair.
    pub tol: f64,
    pub max_step: f64,
    pub mode: StartMode,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            tol: 1e-10,
            max_step: 0.02,
            mode: StartMode::TaylorStart,
        }
    }
}

const TAYLOR_START_R: f64 = 1e-6;
/// Accepted steps may not move y by more than this (dense-output guarantee).
const MAX_DY_PER_STEP: f64 = 0.1;

/// Dormand-Prince 5(4) step: returns (y5, w5, err_y, err_w).
#[allow(clippy::too_many_arguments)]
fn dp_step(
    p: &RadialProblem,
    eps_eff: f64,
    r: f64,
    y: f64,
    w: f64,
    h: f64,
) -> (f64, f64, f64, f64) {
    let f = |r: f64, y: f64, w: f64| -> (f64, f64) {
        let k2 = p.kappa_tilde * p.kappa_tilde;
        (w, -k2 * p.sigma(y) - p.a_coef * w / (r + eps_eff) + p.lambda)
    };
    let (k1y, k1w) = f(r, y, w);
    let (k2y, k2w) = f(r + h / 5.0, y + h / 5.0 * k1y, w + h / 5.0 * k1w);
    let (k3y, k3w) = f(
        r + 3.0 / 10.0 * h,
        y + h * (3.0 / 40.0 * k1y + 9.0 / 40.0 * k2y),
        w + h * (3.0 / 40.0 * k1w + 9.0 / 40.0 * k2w),
    );
    let (k4y, k4w) = f(
        r + 4.0 / 5.0 * h,
        y + h * (44.0 / 45.0 * k1y - 56.0 / 15.0 * k2y + 32.0 / 9.0 * k3y),
        w + h * (44.0 / 45.0 * k1w - 56.0 / 15.0 * k2w + 32.0 / 9.0 * k3w),
    );
    let (k5y, k5w) = f(
        r + 8.0 / 9.0 * h,
        y + h * (19372.0 / 6561.0 * k1y - 25360.0 / 2187.0 * k2y + 64448.0 / 6561.0 * k3y
            - 212.0 / 729.0 * k4y),
        w + h * (19372.0 / 6561.0 * k1w - 25360.0 / 2187.0 * k2w + 64448.0 / 6561.0 * k3w
            - 212.0 / 729.0 * k4w),
    );
    let (k6y, k6w) = f(
        r + h,
        y + h * (9017.0 / 3168.0 * k1y - 355.0 / 33.0 * k2y + 46732.0 / 5247.0 * k3y
            + 49.0 / 176.0 * k4y
            - 5103.0 / 18656.0 * k5y),
        w + h * (9017.0 / 3168.0 * k1w - 355.0 / 33.0 * k2w + 46732.0 / 5247.0 * k3w
            + 49.0 / 176.0 * k4w
            - 5103.0 / 18656.0 * k5w),
    );
    let y5 = y
        + h * (35.0 / 384.0 * k1y + 500.0 / 1113.0 * k3y + 125.0 / 192.0 * k4y
            - 2187.0 / 6784.0 * k5y
            + 11.0 / 84.0 * k6y);
    let w5 = w
        + h * (35.0 / 384.0 * k1w + 500.0 / 1113.0 * k3w + 125.0 / 192.0 * k4w
            - 2187.0 / 6784.0 * k5w
            + 11.0 / 84.0 * k6w);
    let (k7y, k7w) = f(r + h, y5, w5);
    // difference of the 5th- and 4th-order weights
    let ey = h
        * (71.0 / 57600.0 * k1y - 71.0 / 16695.0 * k3y + 71.0 / 1920.0 * k4y
            - 17253.0 / 339200.0 * k5y
            + 22.0 / 525.0 * k6y
            - 1.0 / 40.0 * k7y);
    let ew = h
        * (71.0 / 57600.0 * k1w - 71.0 / 16695.0 * k3w + 71.0 / 1920.0 * k4w
            - 17253.0 / 339200.0 * k5w
            + 22.0 / 525.0 * k6w
            - 1.0 / 40.0 * k7w);
    (y5, w5, ey, ew)
}

/// Integrates from `(r0, y0, w0)` to exactly `r_end`, invoking `sink` after
/// every accepted step. Returns the final state.
#[allow(clippy::too_many_arguments)]
fn dp45_run(
    p: &RadialProblem,
    eps_eff: f64,
    mut r: f64,
    mut y: f64,
    mut w: f64,
    r_end: f64,
    tol: f64,
    max_step: f64,
    sink: &mut dyn FnMut(f64, f64, f64),
) -> Result<(f64, f64, f64)> {
    let mut h = max_step.min((r_end - r).max(0.0)).min(1e-3).max(1e-12);
    while r < r_end {
        let remaining = r_end - r;
        if remaining <= 1e-13 * r_end.abs().max(1.0) {
            break; // target reached to floating-point resolution
        }
        h = h.min(remaining).min(max_step);
        if h < 1e-14 * r.max(1.0) {
            return Err(Error::NoConvergence {
                iterations: 0,
                context: format!("step-size underflow at r = {r}"),
            });
        }
        let (y5, w5, ey, ew) = dp_step(p, eps_eff, r, y, w, h);
        if !(y5.is_finite() && w5.is_finite()) {
            return Err(Error::NonFinite(format!(
                "radial state at r = {r} (y = {y}, w = {w}, h = {h})"
            )));
        }
        let sy = tol + tol * y.abs().max(y5.abs());
        let sw = tol + tol * w.abs().max(w5.abs());
        let err = ((ey / sy).powi(2) + (ew / sw).powi(2)).sqrt() / std::f64::consts::SQRT_2;
        if err <= 1.0 && (y5 - y).abs() <= MAX_DY_PER_STEP {
            r += h;
            y = y5;
            w = w5;
            sink(r, y, w);
        }
        let grow = if err > 0.0 {
            0.9 * err.powf(-0.2)
        } else {
            5.0
        };
        let mut factor = grow.clamp(0.2, 5.0);
        if (y5 - y).abs() > MAX_DY_PER_STEP {
            factor = factor.min(0.5);
        }
        h *= factor;
    }
    Ok((r, y, w))
}

fn start_state(p: &RadialProblem, mode: StartMode) -> (f64, f64, f64, f64) {
    match mode {
        StartMode::Regularized => (0.0, p.c0, 0.0, p.eps_reg),
        StartMode::TaylorStart => {
            let k2 = p.kappa_tilde * p.kappa_tilde;
            let a = (p.lambda - k2 * p.sigma(p.c0)) / (2.0 * (p.a_coef + 1.0));
            let r0 = TAYLOR_START_R;
            (r0, p.c0 + a * r0 * r0, 2.0 * a * r0, 0.0)
        }
    }
}

/// Adaptive integration of the radial system up to `p.r_max`; the returned
/// trajectory starts at the exact initial state `(0, c, 0)`.
pub fn integrate_radial(p: &RadialProblem, opts: &IntegrateOptions) -> Result<Vec<PhaseState>> {
    if !(opts.tol > 0.0 && opts.tol <= 1e-3) {
        return Err(Error::InvalidParameter {
            name: "tol",
            reason: format!("must lie in (0, 1e-3], got {}", opts.tol),
        });
    }
    let mut traj = vec![PhaseState {
        r: 0.0,
        y: p.c0,
        w: 0.0,
        h: p.hamiltonian(p.c0, 0.0),
    }];
    let (r0, y0, w0, eps_eff) = start_state(p, opts.mode);
    if r0 > 0.0 {
        traj.push(PhaseState {
            r: r0,
            y: y0,
            w: w0,
            h: p.hamiltonian(y0, w0),
        });
    }
    let mut sink = |r: f64, y: f64, w: f64| {
        traj.push(PhaseState {
            r,
            y,
            w,
            h: p.hamiltonian(y, w),
        });
    };
    dp45_run(
        p, eps_eff, r0, y0, w0, p.r_max, opts.tol, opts.max_step, &mut sink,
    )?;
    Ok(traj)
}

/// Integrates and samples the trajectory exactly at the given radii
/// (ascending, first >= start of integration).
pub fn integrate_on_grid(
    p: &RadialProblem,
    opts: &IntegrateOptions,
    radii: &[f64],
) -> Result<Vec<PhaseState>> {
    let (mut r, mut y, mut w, eps_eff) = start_state(p, opts.mode);
    let mut out = Vec::with_capacity(radii.len());
    let mut discard = |_: f64, _: f64, _: f64| {};
    for &rq in radii {
        if rq < r {
            // grid point inside the series-start offset: use the start value
            out.push(PhaseState {
                r: rq,
                y: p.c0,
                w: 0.0,
                h: p.hamiltonian(p.c0, 0.0),
            });
            continue;
        }
        let (rn, yn, wn) = dp45_run(
            p,
            eps_eff,
            r,
            y,
            w,
            rq,
            opts.tol,
            opts.max_step,
            &mut discard,
        )?;
        r = rn;
        y = yn;
        w = wn;
        out.push(PhaseState {
            r,
            y,
            w,
            h: p.hamiltonian(y, w),
        });
    }
    Ok(out)
}

/// Writes a trajectory as CSV rows `r, y, w, H`.
pub fn write_trajectory_csv<W: Write>(traj: &[PhaseState], mut out: W) -> std::io::Result<()> {
    writeln!(out, "r,y,w,H")?;
    for s in traj {
        writeln!(out, "{},{},{},{}", s.r, s.y, s.w, s.h)?;
    }
    Ok(())
}

/// Result of the vanishing-regularization study.
#[derive(Debug, Clone)]
pub struct RegularizationLimit {
    /// Trajectory at the finest regularization, on the comparison grid.
    pub trajectory: Vec<PhaseState>,
    /// Max pointwise |y| differences between consecutive levels.
    pub diffs: Vec<f64>,
    /// Cauchy evidence: the last difference is at most 10x the previous one.
    pub cauchy_ok: bool,
}

/// Integrates the regularized system for each eps in a strictly decreasing
/// sequence (all >= 1e-8) and compares consecutive levels pointwise on a
/// shared uniform grid.
pub fn regularization_limit(
    p: &RadialProblem,
    eps_sequence: &[f64],
    opts: &IntegrateOptions,
) -> Result<RegularizationLimit> {
    if eps_sequence.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "eps_sequence",
            reason: "need at least two levels".into(),
        });
    }
    for pair in eps_sequence.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidParameter {
                name: "eps_sequence",
                reason: "must be strictly decreasing".into(),
            });
        }
    }
    if *eps_sequence.last().unwrap() < 1e-8 {
        return Err(Error::InvalidParameter {
            name: "eps_sequence",
            reason: "levels below 1e-8 are not resolvable".into(),
        });
    }
    let n_compare = 801;
    let radii: Vec<f64> = (0..n_compare)
        .map(|i| p.r_max * i as f64 / (n_compare - 1) as f64)
        .collect();
    let mut prev: Option<Vec<PhaseState>> = None;
    let mut diffs = Vec::new();
    let mut finest = Vec::new();
    for &eps in eps_sequence {
        let mut level_problem = *p;
        level_problem.eps_reg = eps;
        let level_opts = IntegrateOptions {
            mode: StartMode::Regularized,
            ..*opts
        };
        let traj = integrate_on_grid(&level_problem, &level_opts, &radii)?;
        if let Some(prev_traj) = &prev {
            let d = traj
                .iter()
                .zip(prev_traj)
                .map(|(a, b)| (a.y - b.y).abs())
                .fold(0.0, f64::max);
            diffs.push(d);
        }
        prev = Some(traj.clone());
        finest = traj;
    }
    let cauchy_ok = if diffs.len() >= 2 {
        let last = diffs[diffs.len() - 1];
        let before = diffs[diffs.len() - 2];
        last <= 10.0 * before.max(1e-14)
    } else {
        true
    };
    Ok(RegularizationLimit {
        trajectory: finest,
        diffs,
        cauchy_ok,
    })
}

/// Max residual of the decay identity `dH/dr + A w^2/(r + eps) = 0` along a
/// stored trajectory, using midpoint differencing (second-order in the
/// sample spacing).
pub fn hamiltonian_decay_check(traj: &[PhaseState], a_coef: f64, eps_reg: f64) -> f64 {
    let mut worst = 0.0f64;
    for pair in traj.windows(2) {
        let dr = pair[1].r - pair[0].r;
        if dr <= 0.0 {
            continue;
        }
        let dh = (pair[1].h - pair[0].h) / dr;
        let wm = 0.5 * (pair[0].w + pair[1].w);
        let rm = 0.5 * (pair[0].r + pair[1].r);
        let res = dh + a_coef * wm * wm / (rm + eps_reg);
        worst = worst.max(res.abs());
    }
    worst
}

/// Zero radii located on a trajectory.
#[derive(Debug, Clone)]
pub struct ZeroRadii {
    pub radii: Vec<f64>,
    /// False when fewer than the requested crossings fit below the cap.
    pub complete: bool,
}

/// Locates the first `n_wanted` radii where `y(r)` crosses the boundary
/// target, bisecting each bracket down to 1e-10 in `r` with fresh
/// high-accuracy integrations from the bracketing sample. The trajectory is
/// extended (up to `p.r_cap()`) if it holds too few crossings.
pub fn find_zero_radii(
    p: &RadialProblem,
    traj: &[PhaseState],
    n_wanted: usize,
    opts: &IntegrateOptions,
) -> Result<ZeroRadii> {
    let target = p.y_target();
    let mut samples: Vec<PhaseState> = traj.to_vec();
    let mut radii = Vec::new();
    let eps_eff = match opts.mode {
        StartMode::Regularized => p.eps_reg,
        StartMode::TaylorStart => 0.0,
    };
    let fine_tol = opts.tol.min(1e-12);
    loop {
        radii.clear();
        for k in 1..samples.len() {
            if radii.len() >= n_wanted {
                break;
            }
            let (s0, s1) = (samples[k - 1], samples[k]);
            let f0 = s0.y - target;
            let f1 = s1.y - target;
            if f0 == 0.0 && s0.r == 0.0 {
                continue; // degenerate start on the target
            }
            if f0 * f1 < 0.0 {
                // bisection; evaluate by re-integrating from the left sample
                let eval = |rq: f64| -> Result<f64> {
                    if rq <= s0.r {
                        return Ok(f0);
                    }
                    let mut discard = |_: f64, _: f64, _: f64| {};
                    let (_, yq, _) = dp45_run(
                        p,
                        eps_eff,
                        s0.r.max(if s0.r == 0.0 { TAYLOR_START_R } else { s0.r }),
                        s0.y,
                        s0.w,
                        rq,
                        fine_tol,
                        opts.max_step,
                        &mut discard,
                    )?;
                    Ok(yq - target)
                };
                let mut lo = s0.r;
                let mut hi = s1.r;
                let mut flo = f0;
                while hi - lo > 1e-10 {
                    let mid = 0.5 * (lo + hi);
                    let fm = eval(mid)?;
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if flo * fm < 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                radii.push(0.5 * (lo + hi));
            }
        }
        if radii.len() >= n_wanted {
            return Ok(ZeroRadii {
                radii,
                complete: true,
            });
        }
        // extend the trajectory up to the cap
        let last = *samples.last().unwrap();
        if last.r >= p.r_cap() {
            return Ok(ZeroRadii {
                radii,
                complete: false,
            });
        }
        let new_end = (2.0 * last.r.max(1.0)).min(p.r_cap());
        let mut sink = |r: f64, y: f64, w: f64| {
            samples.push(PhaseState {
                r,
                y,
                w,
                h: p.hamiltonian(y, w),
            });
        };
        dp45_run(
            p,
            eps_eff,
            last.r,
            last.y,
            last.w,
            new_end,
            opts.tol,
            opts.max_step,
            &mut sink,
        )?;
    }
}

/// Executable witness of non-uniqueness: at radius `R`, the trivial constant
/// solution and a distinct oscillating solution share the same boundary
/// value, and the linear-part invertibility condition fails on the ball of
/// radius `R`.
#[derive(Debug, Clone)]
pub struct NonUniquenessCertificate {
    pub radius: f64,
    pub y_target: f64,
    pub dimension: usize,
    /// Max 4th-order finite-difference ODE residual of the oscillating
    /// solution on the verification grid.
    pub nontrivial_residual: f64,
    /// Same residual for the constant solution (identically zero up to
    /// rounding).
    pub trivial_residual: f64,
    /// Max pointwise separation of the two solutions on [0, R].
    pub max_deviation: f64,
    /// mu/theta for the equivalent coefficients (eps = 1, kappa^2 = -kt^2).
    pub mu_over_theta: f64,
    /// Principal Dirichlet eigenvalue of the d-ball of radius R.
    pub lambda1_ball: f64,
    pub hypothesis3_violated: bool,
    /// Oscillating solution sampled on the verification grid.
    pub verification: Vec<PhaseState>,
}

/// Principal Dirichlet eigenvalue of the radius-R ball, d = 1..=3.
pub fn ball_lambda1(d: usize, radius: f64) -> f64 {
    use std::f64::consts::PI;
    match d {
        1 => (PI / (2.0 * radius)).powi(2),
        2 => (BESSEL_J0_FIRST_ZERO / radius).powi(2),
        _ => (PI / radius).powi(2),
    }
}

/// Builds the non-uniqueness certificate for an integer-dimension ball
/// problem. The selected radius is the first crossing beyond `pi / kt`,
/// which guarantees the invertibility condition fails (and the certificate
/// re-checks that directly).
pub fn nonuniqueness_certificate(
    p: &RadialProblem,
    opts: &IntegrateOptions,
) -> Result<NonUniquenessCertificate> {
    let d = p.dimension.ok_or_else(|| Error::InvalidParameter {
        name: "dimension",
        reason: "certificate needs an integer ball dimension".into(),
    })?;
    let target = p.y_target();
    if (p.c0 - target).abs() < 1e-12 {
        return Err(Error::InvalidParameter {
            name: "c0",
            reason: "initial value equals the trivial solution".into(),
        });
    }
    let traj = integrate_radial(p, opts)?;
    let zeros = find_zero_radii(p, &traj, 64, opts)?;
    let threshold = std::f64::consts::PI / p.kappa_tilde;
    let radius = zeros
        .radii
        .iter()
        .copied()
        .find(|&r| r > threshold)
        .ok_or_else(|| Error::NoConvergence {
            iterations: zeros.radii.len(),
            context: format!(
                "no boundary radius beyond {threshold} within the cap {}",
                p.r_cap()
            ),
        })?;

    // verification grid and 4th-order finite-difference residual
    let n_ver = 2001usize;
    let radii: Vec<f64> = (0..n_ver)
        .map(|i| radius * i as f64 / (n_ver - 1) as f64)
        .collect();
    let fine_opts = IntegrateOptions {
        tol: opts.tol.min(1e-12),
        ..*opts
    };
    let states = integrate_on_grid(p, &fine_opts, &radii)?;
    let dr = radius / (n_ver - 1) as f64;
    let k2 = p.kappa_tilde * p.kappa_tilde;
    let mut nontrivial_residual = 0.0f64;
    for j in 2..n_ver - 2 {
        let y = |i: usize| states[i].y;
        let yp = (-y(j + 2) + 8.0 * y(j + 1) - 8.0 * y(j - 1) + y(j - 2)) / (12.0 * dr);
        let ypp = (-y(j + 2) + 16.0 * y(j + 1) - 30.0 * y(j) + 16.0 * y(j - 1) - y(j - 2))
            / (12.0 * dr * dr);
        let r = states[j].r;
        let res = r * ypp + p.a_coef * yp + k2 * r * p.sigma(y(j)) - r * p.lambda;
        nontrivial_residual = nontrivial_residual.max(res.abs());
    }
    // constant solution: derivatives vanish, kt^2 sigma(target) = lambda
    let trivial_residual = radii
        .iter()
        .map(|&r| (k2 * r * p.sigma(target) - r * p.lambda).abs())
        .fold(0.0, f64::max);
    let max_deviation = states
        .iter()
        .map(|s| (s.y - target).abs())
        .fold(0.0, f64::max);

    let lambda1 = ball_lambda1(d, radius);
    let mu_over_theta = k2; // eps = 1 (theta = 1), kappa^2 = -kt^2 (mu = kt^2)
    Ok(NonUniquenessCertificate {
        radius,
        y_target: target,
        dimension: d,
        nontrivial_residual,
        trivial_residual,
        max_deviation,
        mu_over_theta,
        lambda1_ball: lambda1,
        hypothesis3_violated: mu_over_theta >= lambda1,
        verification: states,
    })
}

impl NonUniquenessCertificate {
    /// Structured text report.
    pub fn write_report<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "non-uniqueness certificate")?;
        writeln!(out, "dimension            = {}", self.dimension)?;
        writeln!(out, "radius R             = {}", self.radius)?;
        writeln!(out, "boundary value       = {}", self.y_target)?;
        writeln!(out, "trivial residual     = {}", self.trivial_residual)?;
        writeln!(out, "nontrivial residual  = {}", self.nontrivial_residual)?;
        writeln!(out, "max deviation        = {}", self.max_deviation)?;
        writeln!(
            out,
            "hypothesis-3 witness : mu/theta = {} >= lambda1(B_R) = {} : {}",
            self.mu_over_theta, self.lambda1_ball, self.hypothesis3_violated
        )?;
        Ok(())
    }
}
