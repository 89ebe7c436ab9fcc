//! Continuation of the nontrivial solution branch of the homogeneous scalar
//! nPBE
//!
//! ```text
//!   -Delta u + (eta - lambda_1) sinh(u) = 0,   u = 0 on the boundary,
//! ```
//!
//! through the bifurcation point `(u, eta) = (0, 0)`.
//!
//! The branch with `eta'(0) = 0`, `eta''(0) < 0` — the one carrying
//! nontrivial small solutions for `eta` slightly below zero — runs along
//! the imaginary axis of the complexified equation: writing `u = i v` with
//! `v` real reduces it exactly to
//!
//! ```text
//!   -Delta v + (eta - lambda_1) sin(v) = 0,
//! ```
//!
//! since `sinh(iv) = i sin(v)`. (Along the real axis the branch bends the
//! other way, `eta''(0) > 0`: `sinh` stiffens while `sin` softens.) The
//! solver therefore continues the real field `v`; every stored branch point
//! satisfies the complex equation at `u = i v`, which
//! [`complex_residual`] verifies without going through the reduction.
//!
//! The amplitude parameter is pinned Lyapunov-Schmidt style by the
//! constraint `<v, v0>_h = s` against the principal eigenfunction, which
//! keeps the Newton system nonsingular through the fold at `s = 0`.

use std::io::Write;

use num_complex::Complex64;

use crate::constants::{dirichlet_eigenpair, EigenOptions};
use crate::linear_pbe::{apply_operator, assemble_l, restrict_interior, CoefficientSet, LinearSystem};
use crate::mesh::{Grid, GridFunction, NormKind};
use crate::{Error, Result};

/// Principal Dirichlet eigenpair with the eigenfunction normalized to unit
/// discrete L2 norm and positive interior values.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub lambda1: f64,
    pub v0: GridFunction,
}

pub fn principal_eigenpair(grid: &Grid) -> Result<Eigenpair> {
    let (lambda1, v0) = dirichlet_eigenpair(grid, &EigenOptions::default())?;
    Ok(Eigenpair { lambda1, v0 })
}

/// One point of the bifurcating branch. `u` stores the real amplitude
/// profile `v`; the solution of the complex scalar equation is `i v`.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub s: f64,
    pub eta: f64,
    pub u: GridFunction,
    pub newton_residual: f64,
    pub u_h2_norm: f64,
    /// Set on the `s = 0` point, where `eta` is not isolated (the trivial
    /// family passes through every eta).
    pub trivial: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BranchOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Largest admissible |s|.
    pub s_cap: f64,
}

impl Default for BranchOptions {
    fn default() -> Self {
        BranchOptions {
            newton_tol: 1e-12,
            max_newton: 50,
            s_cap: 0.5,
        }
    }
}

struct BranchWorkspace {
    grid: Grid,
    lambda1: f64,
    /// -Delta_h on the interior.
    laplacian: LinearSystem,
    /// Interior values of v0.
    v0_int: Vec<f64>,
    /// Quadrature weights on interior nodes.
    weights: Vec<f64>,
}

impl BranchWorkspace {
    fn new(grid: &Grid, eig: &Eigenpair) -> Result<Self> {
        let unit = CoefficientSet::scalar_const(grid, Complex64::ONE, Complex64::ZERO)?;
        let laplacian = assemble_l(&unit, grid)?;
        let v0_int: Vec<f64> = restrict_interior(grid, &eig.v0)
            .iter()
            .map(|z| z.re)
            .collect();
        let weights: Vec<f64> = (0..grid.node_count())
            .filter(|&i| !grid.is_boundary(i))
            .map(|i| grid.weight(i))
            .collect();
        Ok(BranchWorkspace {
            grid: *grid,
            lambda1: eig.lambda1,
            laplacian,
            v0_int,
            weights,
        })
    }

    /// `-Delta_h v` on the interior (real arithmetic through the complex
    /// band).
    fn neg_laplacian(&self, v: &[f64]) -> Vec<f64> {
        let x: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let mut y = vec![Complex64::ZERO; v.len()];
        self.laplacian.matvec(&x, &mut y);
        y.iter().map(|z| z.re).collect()
    }

    /// PDE residual `G(v, eta)` on the interior.
    fn residual(&self, v: &[f64], eta: f64) -> Vec<f64> {
        let mut g = self.neg_laplacian(v);
        for (gi, &vi) in g.iter_mut().zip(v) {
            *gi += (eta - self.lambda1) * vi.sin();
        }
        g
    }

    fn residual_norm(&self, g: &[f64], constraint: f64) -> f64 {
        let pde: f64 = g
            .iter()
            .zip(&self.weights)
            .map(|(gi, wi)| wi * gi * gi)
            .sum::<f64>()
            .sqrt();
        pde + constraint.abs()
    }

    fn projection(&self, v: &[f64]) -> f64 {
        v.iter()
            .zip(&self.v0_int)
            .zip(&self.weights)
            .map(|((vi, v0i), wi)| wi * vi * v0i)
            .sum()
    }

    /// Newton on the bordered system {G(v, eta) = 0, <v, v0> = s} with
    /// unknowns (v, eta). `eta` is frozen when `fixed_eta` is set, in which
    /// case the constraint row is dropped.
    fn newton(
        &self,
        v: &mut Vec<f64>,
        eta: &mut f64,
        s: f64,
        fixed_eta: bool,
        opts: &BranchOptions,
    ) -> Result<f64> {
        for _ in 0..opts.max_newton {
            let g = self.residual(v, *eta);
            let c = if fixed_eta {
                0.0
            } else {
                self.projection(v) - s
            };
            let norm = self.residual_norm(&g, c);
            if norm <= opts.newton_tol {
                return Ok(norm);
            }
            // Jacobian A = -Delta_h + (eta - lambda1) diag(cos v)
            let mut jac = self.laplacian.clone();
            let diag: Vec<Complex64> = v
                .iter()
                .map(|&vi| Complex64::new((*eta - self.lambda1) * vi.cos(), 0.0))
                .collect();
            jac.add_to_diagonal(&diag);
            let lu = jac.factor().map_err(|_| {
                Error::SolveFailure("singular branch jacobian (constraint removed?)".into())
            })?;
            let to_c = |r: &[f64]| -> Vec<Complex64> {
                r.iter().map(|&x| Complex64::new(x, 0.0)).collect()
            };
            let p = lu.solve(&to_c(&g));
            if fixed_eta {
                for (vi, pi) in v.iter_mut().zip(&p) {
                    *vi -= pi.re;
                }
                continue;
            }
            // bordered elimination: b = dG/deta = sin(v)
            let b: Vec<Complex64> = v
                .iter()
                .map(|&vi| Complex64::new(vi.sin(), 0.0))
                .collect();
            let q = lu.solve(&b);
            let gdot = |x: &[Complex64]| -> f64 {
                x.iter()
                    .zip(&self.v0_int)
                    .zip(&self.weights)
                    .map(|((xi, v0i), wi)| wi * xi.re * v0i)
                    .sum()
            };
            let gq = gdot(&q);
            if gq.abs() < 1e-300 {
                return Err(Error::SolveFailure(
                    "degenerate bordered system (g^T q = 0)".into(),
                ));
            }
            let d_eta = (c - gdot(&p)) / gq;
            for ((vi, pi), qi) in v.iter_mut().zip(&p).zip(&q) {
                *vi += -pi.re - qi.re * d_eta;
            }
            *eta += d_eta;
        }
        Err(Error::NoConvergence {
            iterations: opts.max_newton,
            context: format!("branch newton at s = {s}"),
        })
    }

    fn make_point(&self, v: &[f64], eta: f64, s: f64, residual: f64) -> BranchPoint {
        let mut u = GridFunction::zeros(self.grid);
        let mut k = 0;
        for idx in 0..self.grid.node_count() {
            if !self.grid.is_boundary(idx) {
                u.values_mut()[idx] = Complex64::new(v[k], 0.0);
                k += 1;
            }
        }
        let u_h2_norm = u.norm(NormKind::H2);
        BranchPoint {
            s,
            eta,
            u,
            newton_residual: residual,
            u_h2_norm,
            trivial: false,
        }
    }
}

/// Solves the constrained system {scalar nPBE, <u, v0> = s} for `(u, eta)`
/// from the initial guess `u = s v0`, `eta = eta_guess`. `s = 0` returns
/// the trivial point flagged as non-isolated.
pub fn solve_on_branch(
    grid: &Grid,
    eig: &Eigenpair,
    s: f64,
    eta_guess: f64,
    opts: &BranchOptions,
) -> Result<BranchPoint> {
    if s.abs() > opts.s_cap {
        return Err(Error::InvalidParameter {
            name: "s",
            reason: format!("|s| must be <= {}, got {s}", opts.s_cap),
        });
    }
    let ws = BranchWorkspace::new(grid, eig)?;
    if s == 0.0 {
        let mut point = ws.make_point(&vec![0.0; ws.v0_int.len()], eta_guess, 0.0, 0.0);
        point.trivial = true;
        return Ok(point);
    }
    let mut v: Vec<f64> = ws.v0_int.iter().map(|&x| s * x).collect();
    let mut eta = eta_guess;
    let res = ws.newton(&mut v, &mut eta, s, false, opts)?;
    Ok(ws.make_point(&v, eta, s, res))
}

/// Sequential continuation over a symmetric set of amplitudes, marching
/// outward from zero on each side with the previous point as the next
/// guess. Returns points sorted by `s`.
pub fn continue_branch(
    grid: &Grid,
    eig: &Eigenpair,
    s_values: &[f64],
    opts: &BranchOptions,
) -> Result<Vec<BranchPoint>> {
    if s_values.is_empty() {
        return Err(Error::InvalidParameter {
            name: "s_values",
            reason: "empty amplitude set".into(),
        });
    }
    for &s in s_values {
        if s.abs() > opts.s_cap {
            return Err(Error::InvalidParameter {
                name: "s_values",
                reason: format!("|s| must be <= {}, got {s}", opts.s_cap),
            });
        }
        if s != 0.0 && !s_values.iter().any(|&t| (t + s).abs() < 1e-12) {
            return Err(Error::InvalidParameter {
                name: "s_values",
                reason: format!("amplitude set must be symmetric around 0; {s} unmatched"),
            });
        }
    }
    let ws = BranchWorkspace::new(grid, eig)?;
    let mut points = Vec::new();
    if s_values.contains(&0.0) {
        let mut p = ws.make_point(&vec![0.0; ws.v0_int.len()], 0.0, 0.0, 0.0);
        p.trivial = true;
        points.push(p);
    }
    for side in [1.0f64, -1.0] {
        let mut chain: Vec<f64> = s_values
            .iter()
            .copied()
            .filter(|&s| s * side > 0.0)
            .collect();
        chain.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());
        let mut v: Option<Vec<f64>> = None;
        let mut eta = 0.0f64;
        for s in chain {
            let mut v_cur = match &v {
                Some(prev) => prev.clone(),
                None => ws.v0_int.iter().map(|&x| s * x).collect(),
            };
            let res = ws.newton(&mut v_cur, &mut eta, s, false, opts).map_err(|e| {
                Error::SolveFailure(format!("continuation failed at s = {s}: {e}"))
            })?;
            points.push(ws.make_point(&v_cur, eta, s, res));
            v = Some(v_cur);
        }
    }
    points.sort_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
    Ok(points)
}

/// Least-squares fit `eta(s) ~ b1 s + b2 s^2 + b3 s^3 + b4 s^4` over the
/// nontrivial branch points.
#[derive(Debug, Clone, Copy)]
pub struct BranchFit {
    /// Fitted eta'(0) (should vanish).
    pub eta_prime0: f64,
    /// Fitted quadratic coefficient (eta''(0)/2).
    pub eta2: f64,
}

pub fn fit_branch(points: &[BranchPoint]) -> Result<BranchFit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| !p.trivial)
        .map(|p| (p.s, p.eta))
        .collect();
    if data.len() < 4 {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: "need at least 4 nontrivial points for the quartic fit".into(),
        });
    }
    // normal equations for the basis (s, s^2, s^3, s^4)
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for &(s, eta) in &data {
        let basis = [s, s * s, s * s * s, s * s * s * s];
        for i in 0..4 {
            atb[i] += basis[i] * eta;
            for j in 0..4 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    // tiny dense Gaussian elimination with partial pivoting
    let mut a = ata;
    let mut b = atb;
    for col in 0..4 {
        let piv = (col..4)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            return Err(Error::SolveFailure("degenerate branch fit".into()));
        }
        for row in (col + 1)..4 {
            let m = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut acc = b[row];
        for k in (row + 1)..4 {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(BranchFit {
        eta_prime0: x[0],
        eta2: x[1],
    })
}

/// Weakly-nonlinear reference for the branch curvature: projecting the
/// cubic term of the nonlinearity along the branch direction onto the
/// eigenfunction gives
///
/// ```text
///   eta_2 = -lambda_1 * int v0^4 / (6 int v0^2),
/// ```
///
/// the sign being that of the cubic coefficient of `sin` (the branch
/// direction is imaginary, and `sinh(i t v0) = i sin(t v0)`). Evaluated
/// with discrete quadrature; fully independent of the Newton continuation.
pub fn eta2_oracle(grid: &Grid, eig: &Eigenpair) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, z) in eig.v0.values().iter().enumerate() {
        let w = grid.weight(idx);
        let v = z.re;
        num += w * v.powi(4);
        den += w * v * v;
    }
    -eig.lambda1 * num / (6.0 * den)
}

/// Residual of the complex scalar equation
/// `-Delta u + (eta - lambda_1) sinh(u)` at `u = i v`, evaluated in complex
/// arithmetic (no reduction); discrete L2 norm over the interior.
pub fn complex_residual(
    grid: &Grid,
    lambda1: f64,
    eta: f64,
    v: &GridFunction,
) -> Result<f64> {
    let unit = CoefficientSet::scalar_const(grid, Complex64::ONE, Complex64::ZERO)?;
    let iu = v.scaled(Complex64::new(0.0, 1.0));
    let lap = apply_operator(&unit, grid, &iu)?;
    let iu_vals = restrict_interior(grid, &iu);
    let mut res_sq = 0.0;
    let mut k = 0;
    for idx in 0..grid.node_count() {
        if !grid.is_boundary(idx) {
            let r = lap[k] + (eta - lambda1) * iu_vals[k].sinh();
            res_sq += grid.weight(idx) * r.norm_sqr();
            k += 1;
        }
    }
    Ok(res_sq.sqrt())
}

/// Recovers the solutions of the homogeneous scalar nPBE at a fixed
/// `eta < 0` from the continuation data: inverts the fitted `s -> eta(s)`,
/// refines by Newton at frozen `eta`, and returns the pair `{u, -u}` of
/// nontrivial solutions together with the trivial zero solution.
pub fn solutions_for_eta(
    grid: &Grid,
    eig: &Eigenpair,
    branch: &[BranchPoint],
    eta: f64,
    c_cap: f64,
    opts: &BranchOptions,
) -> Result<Vec<BranchPoint>> {
    if !(eta < 0.0) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: "nontrivial small solutions exist for eta < 0 only".into(),
        });
    }
    // eta range covered by the branch within the norm cap
    let eta_star = branch
        .iter()
        .filter(|p| !p.trivial && p.s > 0.0 && p.u_h2_norm <= c_cap)
        .map(|p| p.eta)
        .fold(f64::INFINITY, f64::min);
    if !eta_star.is_finite() || eta < eta_star {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("outside the covered range [{eta_star}, 0)"),
        });
    }
    let fit = fit_branch(branch)?;
    if !(fit.eta2 < 0.0) {
        return Err(Error::SolveFailure(
            "branch curvature is not negative; inversion undefined".into(),
        ));
    }
    let s0 = (eta / fit.eta2).sqrt();
    let ws = BranchWorkspace::new(grid, eig)?;
    let mut v: Vec<f64> = ws.v0_int.iter().map(|&x| s0 * x).collect();
    let mut eta_fixed = eta;
    let res = ws.newton(&mut v, &mut eta_fixed, s0, true, opts)?;
    let s_rec = ws.projection(&v);
    let plus = ws.make_point(&v, eta, s_rec, res);
    let minus_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let minus = ws.make_point(&minus_v, eta, -s_rec, res);
    let mut trivial = ws.make_point(&vec![0.0; v.len()], eta, 0.0, 0.0);
    trivial.trivial = true;
    if plus.u_h2_norm >= c_cap {
        return Err(Error::SolveFailure(format!(
            "recovered solution norm {} exceeds the cap {c_cap}",
            plus.u_h2_norm
        )));
    }
    Ok(vec![plus, minus, trivial])
}

/// Branch table CSV: `s, eta, u_h2_norm, newton_residual`.
pub fn write_branch_csv<W: Write>(points: &[BranchPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "s,eta,u_h2_norm,newton_residual")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.s, p.eta, p.u_h2_norm, p.newton_residual
        )?;
    }
    Ok(())
}
