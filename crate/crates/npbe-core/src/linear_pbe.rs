//! The complex linear operator `L = -div(eps grad .) + kappa^2` on structured
//! grids: coefficient handling, hypothesis checks, flux-form assembly,
//! harmonic boundary lifts, and direct/iterative solves with Dirichlet data.
//!
//! Ellipticity is certified through `theta`, the minimum over nodes of the
//! smallest eigenvalue of `Re eps` (symmetrized); `mu` is the worst negative
//! real part of `kappa^2`. Invertibility of `L` requires `mu/theta <
//! lambda_1`, checked against a supplied principal-eigenvalue estimate.

use num_complex::Complex64;

use crate::band::{BandLu, BandMatrix};
use crate::mesh::{self, Grid, GridFunction, NormKind};
use crate::rng::CounterRng;
use crate::{Error, Result};

/// Dielectric tensor and Debye-Hueckel coefficient sampled on grid nodes,
/// with the ellipticity/lower-bound parameters extracted at construction.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    dim: usize,
    /// d*d complex entries per node, row-major, symmetric.
    eps: Vec<Complex64>,
    kappa_sq: Vec<Complex64>,
    /// min over nodes of the smallest eigenvalue of the symmetrized Re eps.
    pub theta: f64,
    /// max(0, -min over nodes of Re kappa^2).
    pub mu: f64,
}

impl CoefficientSet {
    /// Scalar dielectric: `eps(x) * I`.
    pub fn scalar(
        grid: &Grid,
        eps_fn: impl Fn(&[f64]) -> Complex64,
        kappa_sq_fn: impl Fn(&[f64]) -> Complex64,
    ) -> Result<Self> {
        let d = grid.dim();
        let mut eps = vec![Complex64::ZERO; grid.node_count() * d * d];
        let mut kappa_sq = vec![Complex64::ZERO; grid.node_count()];
        for idx in 0..grid.node_count() {
            let x = grid.coord(idx);
            let e = eps_fn(&x[..d]);
            for i in 0..d {
                eps[idx * d * d + i * d + i] = e;
            }
            kappa_sq[idx] = kappa_sq_fn(&x[..d]);
        }
        Self::from_raw(d, eps, kappa_sq)
    }

    pub fn scalar_const(grid: &Grid, eps: Complex64, kappa_sq: Complex64) -> Result<Self> {
        Self::scalar(grid, |_| eps, |_| kappa_sq)
    }

    /// Full symmetric tensor dielectric. `eps_fn` returns the row-major d*d
    /// tensor at a point; symmetry is validated.
    pub fn tensor(
        grid: &Grid,
        eps_fn: impl Fn(&[f64]) -> Vec<Complex64>,
        kappa_sq_fn: impl Fn(&[f64]) -> Complex64,
    ) -> Result<Self> {
        let d = grid.dim();
        let mut eps = vec![Complex64::ZERO; grid.node_count() * d * d];
        let mut kappa_sq = vec![Complex64::ZERO; grid.node_count()];
        for idx in 0..grid.node_count() {
            let x = grid.coord(idx);
            let e = eps_fn(&x[..d]);
            if e.len() != d * d {
                return Err(Error::InvalidParameter {
                    name: "eps",
                    reason: format!("tensor must have {} entries, got {}", d * d, e.len()),
                });
            }
            eps[idx * d * d..(idx + 1) * d * d].copy_from_slice(&e);
            kappa_sq[idx] = kappa_sq_fn(&x[..d]);
        }
        Self::from_raw(d, eps, kappa_sq)
    }

    fn from_raw(dim: usize, eps: Vec<Complex64>, kappa_sq: Vec<Complex64>) -> Result<Self> {
        let d = dim;
        for v in eps.iter().chain(kappa_sq.iter()) {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite("coefficient field".into()));
            }
        }
        let nodes = kappa_sq.len();
        let mut theta = f64::INFINITY;
        for idx in 0..nodes {
            let t = &eps[idx * d * d..(idx + 1) * d * d];
            for i in 0..d {
                for j in (i + 1)..d {
                    let diff = (t[i * d + j] - t[j * d + i]).norm();
                    let scale = t[i * d + j].norm().max(t[j * d + i].norm()).max(1.0);
                    if diff > 1e-12 * scale {
                        return Err(Error::InvalidParameter {
                            name: "eps",
                            reason: format!("tensor not symmetric at node {idx}"),
                        });
                    }
                }
            }
            // smallest eigenvalue of the symmetrized real part
            let mut s = [[0.0f64; 3]; 3];
            for i in 0..d {
                for j in 0..d {
                    s[i][j] = 0.5 * (t[i * d + j].re + t[j * d + i].re);
                }
            }
            theta = theta.min(sym_min_eigenvalue(&s, d));
        }
        let min_re_k2 = kappa_sq.iter().map(|k| k.re).fold(f64::INFINITY, f64::min);
        let mu = (-min_re_k2).max(0.0);
        Ok(CoefficientSet {
            dim,
            eps,
            kappa_sq,
            theta,
            mu,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.kappa_sq.len()
    }

    pub fn eps_at(&self, node: usize, i: usize, j: usize) -> Complex64 {
        self.eps[node * self.dim * self.dim + i * self.dim + j]
    }

    pub fn kappa_sq(&self) -> &[Complex64] {
        &self.kappa_sq
    }

    /// True when every off-diagonal tensor entry vanishes.
    pub fn is_diagonal(&self) -> bool {
        let d = self.dim;
        for node in 0..self.node_count() {
            for i in 0..d {
                for j in 0..d {
                    if i != j && self.eps[node * d * d + i * d + j] != Complex64::ZERO {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// True when the tensor is `eps(x) I`: diagonal with equal entries.
    pub fn is_scalar(&self) -> bool {
        if !self.is_diagonal() {
            return false;
        }
        let d = self.dim;
        for node in 0..self.node_count() {
            let e0 = self.eps[node * d * d];
            for i in 1..d {
                if self.eps[node * d * d + i * d + i] != e0 {
                    return false;
                }
            }
        }
        true
    }

    /// `||kappa^2||_{L^inf}` (max modulus over nodes).
    pub fn kappa_sq_inf(&self) -> f64 {
        self.kappa_sq.iter().map(|k| k.norm()).fold(0.0, f64::max)
    }

    /// Discrete `W^{1,inf}` norm of the tensor field: max over nodes and
    /// components of the modulus and of the forward difference quotients.
    pub fn eps_w1inf(&self, grid: &Grid) -> f64 {
        let mut m: f64 = 0.0;
        for v in &self.eps {
            m = m.max(v.norm());
        }
        m.max(self.eps_grad_inf(grid))
    }

    /// `max_a ||d_a eps||_inf` over all tensor components, by forward
    /// difference quotients.
    pub fn eps_grad_inf(&self, grid: &Grid) -> f64 {
        let d = self.dim;
        let mut m: f64 = 0.0;
        for axis in 0..d {
            let stride = mesh::axis_stride(grid, axis);
            for idx in 0..grid.node_count() {
                if grid.multi_index(idx)[axis] + 1 >= grid.nodes(axis) {
                    continue;
                }
                for c in 0..d * d {
                    let a = self.eps[idx * d * d + c];
                    let b = self.eps[(idx + stride) * d * d + c];
                    m = m.max((b - a).norm() / grid.spacing(axis));
                }
            }
        }
        m
    }
}

/// Smallest eigenvalue of a `d x d` real symmetric matrix (d <= 3) by cyclic
/// Jacobi rotations.
fn sym_min_eigenvalue(s: &[[f64; 3]; 3], d: usize) -> f64 {
    let mut a = *s;
    for _sweep in 0..50 {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += a[i][j] * a[i][j];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s_ = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s_ * akq;
                    a[k][q] = s_ * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s_ * aqk;
                    a[q][k] = s_ * apk + c * aqk;
                }
            }
        }
    }
    (0..d).map(|i| a[i][i]).fold(f64::INFINITY, f64::min)
}

/// Outcome of the ellipticity and invertibility checks.
#[derive(Debug, Clone, Copy)]
pub struct HypothesesVerdict {
    pub h2_ok: bool,
    pub h3_ok: bool,
    /// mu / (theta * lambda_1); invertibility needs this < 1.
    pub ratio: f64,
    pub theta: f64,
    pub mu: f64,
}

/// Checks uniform ellipticity (theta > 0) and the invertibility condition
/// mu/theta < lambda_1.
pub fn check_hypotheses(coeffs: &CoefficientSet, lambda1: f64) -> HypothesesVerdict {
    let theta = coeffs.theta;
    let mu = coeffs.mu;
    let h2_ok = theta > 0.0;
    let ratio = if theta > 0.0 {
        mu / (theta * lambda1)
    } else {
        f64::INFINITY
    };
    HypothesesVerdict {
        h2_ok,
        h3_ok: h2_ok && ratio < 1.0,
        ratio,
        theta,
        mu,
    }
}

/// Boundary data stored as the restriction to the boundary node set, aligned
/// with `grid.boundary_indices()`.
#[derive(Debug, Clone)]
pub struct BoundaryValues {
    values: Vec<Complex64>,
}

impl BoundaryValues {
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = grid
            .boundary_indices()
            .iter()
            .map(|&i| f(&grid.coord(i)[..grid.dim()]))
            .collect();
        BoundaryValues { values }
    }

    pub fn constant(grid: &Grid, c: Complex64) -> Self {
        BoundaryValues {
            values: vec![c; grid.boundary_indices().len()],
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, Complex64::ZERO)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        BoundaryValues {
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn conjugated(&self) -> Self {
        BoundaryValues {
            values: self.values.iter().map(|v| v.conj()).collect(),
        }
    }

    /// Grid function equal to the data on the boundary, zero inside.
    pub fn extended_by_zero(&self, grid: &Grid) -> GridFunction {
        let mut u = GridFunction::zeros(*grid);
        for (k, &i) in grid.boundary_indices().iter().enumerate() {
            u.values_mut()[i] = self.values[k];
        }
        u
    }
}

/// A nPBE instance on a grid: coefficients plus data (f, g).
#[derive(Debug, Clone)]
pub struct PbeProblem {
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub f: GridFunction,
    pub g: BoundaryValues,
}

/// Assembled interior system for `L_h` with zero Dirichlet conditions.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub grid: Grid,
    band: BandMatrix,
}

/// Flux-form second-order assembly of `L = -div(eps grad .) + kappa^2` on
/// the interior nodes. Face coefficients are arithmetic averages of the
/// nodal diagonal entries; the stencil has at most `2d + 1` entries per row,
/// so dielectric tensors with off-diagonal entries are rejected.
pub fn assemble_l(coeffs: &CoefficientSet, grid: &Grid) -> Result<LinearSystem> {
    if coeffs.node_count() != grid.node_count() || coeffs.dim() != grid.dim() {
        return Err(Error::GridMismatch(
            "coefficient field does not match grid".into(),
        ));
    }
    if !coeffs.is_diagonal() {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: "flux-form assembly supports diagonal dielectric tensors only".into(),
        });
    }
    let d = grid.dim();
    let m: [usize; 3] = {
        let mut m = [1usize; 3];
        for a in 0..d {
            m[a] = grid.nodes(a) - 2;
        }
        m
    };
    let n_int: usize = m[..d].iter().product();
    let bw: usize = m[..d.saturating_sub(1).max(0)].iter().product::<usize>().max(1);
    let bw = if d == 1 { 1 } else { bw };
    let mut band = BandMatrix::zeros(n_int, bw, bw);

    // interior lattice lexicographic index
    let int_index = |mi: &[usize; 3]| -> usize {
        let mut k = 0;
        for a in (0..d).rev() {
            k = k * m[a] + (mi[a] - 1);
        }
        k
    };

    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            continue;
        }
        let mi = grid.multi_index(idx);
        let row = int_index(&mi);
        let mut diag = coeffs.kappa_sq[idx];
        for a in 0..d {
            let stride = mesh::axis_stride(grid, a);
            let h2 = grid.spacing(a) * grid.spacing(a);
            let e0 = coeffs.eps_at(idx, a, a);
            let e_plus = 0.5 * (e0 + coeffs.eps_at(idx + stride, a, a));
            let e_minus = 0.5 * (e0 + coeffs.eps_at(idx - stride, a, a));
            diag += (e_plus + e_minus) / h2;
            let mut nb = mi;
            nb[a] += 1;
            if nb[a] < grid.nodes(a) - 1 {
                band.add(row, int_index(&nb), -e_plus / h2);
            }
            nb[a] = mi[a] - 1;
            if nb[a] > 0 {
                band.add(row, int_index(&nb), -e_minus / h2);
            }
        }
        band.add(row, row, diag);
    }
    Ok(LinearSystem { grid: *grid, band })
}

impl LinearSystem {
    pub fn interior_dim(&self) -> usize {
        self.band.dim()
    }

    /// Adds `values[k]` to the k-th interior diagonal entry (used by Newton
    /// linearizations of the nonlinear term).
    pub fn add_to_diagonal(&mut self, values: &[Complex64]) {
        assert_eq!(values.len(), self.band.dim());
        for (k, &v) in values.iter().enumerate() {
            self.band.add(k, k, v);
        }
    }

    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.band.matvec(x, y);
    }

    pub fn factor(self) -> Result<FactoredSystem> {
        Ok(FactoredSystem {
            grid: self.grid,
            lu: self.band.factor()?,
        })
    }
}

/// LU-factored interior system; reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct FactoredSystem {
    pub grid: Grid,
    lu: BandLu,
}

impl FactoredSystem {
    pub fn interior_dim(&self) -> usize {
        self.lu.dim()
    }

    pub fn solve(&self, rhs_interior: &[Complex64]) -> Vec<Complex64> {
        let mut x = rhs_interior.to_vec();
        self.lu.solve(&mut x);
        x
    }

    pub fn solve_adjoint(&self, rhs_interior: &[Complex64]) -> Vec<Complex64> {
        let mut x = rhs_interior.to_vec();
        self.lu.solve_adjoint(&mut x);
        x
    }
}

/// Applies the flux-form `L_h` to a full grid function (boundary values
/// included) and returns the result at interior nodes, in interior order.
pub fn apply_operator(
    coeffs: &CoefficientSet,
    grid: &Grid,
    u: &GridFunction,
) -> Result<Vec<Complex64>> {
    if coeffs.node_count() != grid.node_count() {
        return Err(Error::GridMismatch("coefficients vs grid".into()));
    }
    if !coeffs.is_diagonal() {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: "flux-form operator supports diagonal dielectric tensors only".into(),
        });
    }
    let d = grid.dim();
    let vals = u.values();
    let mut out = Vec::with_capacity(grid.interior_count());
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            continue;
        }
        let mut acc = coeffs.kappa_sq[idx] * vals[idx];
        for a in 0..d {
            let stride = mesh::axis_stride(grid, a);
            let h2 = grid.spacing(a) * grid.spacing(a);
            let e0 = coeffs.eps_at(idx, a, a);
            let e_plus = 0.5 * (e0 + coeffs.eps_at(idx + stride, a, a));
            let e_minus = 0.5 * (e0 + coeffs.eps_at(idx - stride, a, a));
            acc += (e_plus * (vals[idx] - vals[idx + stride])
                + e_minus * (vals[idx] - vals[idx - stride]))
                / h2;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Embeds interior-ordered values into a full grid function with the given
/// boundary data.
pub fn compose_solution(grid: &Grid, interior: &[Complex64], g: &BoundaryValues) -> GridFunction {
    let mut u = g.extended_by_zero(grid);
    let mut k = 0;
    for idx in 0..grid.node_count() {
        if !grid.is_boundary(idx) {
            u.values_mut()[idx] = interior[k];
            k += 1;
        }
    }
    u
}

/// Restricts a full grid function to its interior values, interior order.
pub fn restrict_interior(grid: &Grid, u: &GridFunction) -> Vec<Complex64> {
    let vals = u.values();
    (0..grid.node_count())
        .filter(|&i| !grid.is_boundary(i))
        .map(|i| vals[i])
        .collect()
}

/// Solver selection and tolerances.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Interior sizes up to this use direct banded LU; larger fall back to
    /// BiCGStab.
    pub direct_threshold: usize,
    pub iterative_tol: f64,
    pub iterative_max: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            direct_threshold: 200_000,
            iterative_tol: 1e-10,
            iterative_max: 10_000,
        }
    }
}

/// Diagnostics from a linear solve.
#[derive(Debug, Clone, Copy)]
pub struct SolveInfo {
    /// `||L_h u - f||_{L2,h}` over the interior.
    pub residual: f64,
    pub relative_residual: f64,
    pub u_h2: f64,
    pub w_h2: f64,
    pub f_l2: f64,
}

/// Discrete harmonic lift: solves `Laplace w = 0` with `w = g` on the
/// boundary.
pub fn harmonic_lift(g: &BoundaryValues, grid: &Grid) -> Result<GridFunction> {
    if !g.is_finite() {
        return Err(Error::NonFinite("boundary data".into()));
    }
    let unit = CoefficientSet::scalar_const(grid, Complex64::ONE, Complex64::ZERO)?;
    let g_ext = g.extended_by_zero(grid);
    let mut rhs = apply_operator(&unit, grid, &g_ext)?;
    for v in rhs.iter_mut() {
        *v = -*v;
    }
    let sys = assemble_l(&unit, grid)?.factor()?;
    let w_int = sys.solve(&rhs);
    Ok(compose_solution(grid, &w_int, g))
}

/// Solves the linear PBE `L_h u = f` in the interior with `u = g` on the
/// boundary, by eliminating the boundary through the harmonic lift `w`:
/// `L_h (u - w) = f - L_h w`, `u - w = 0` on the boundary.
///
/// Preconditions: hypotheses must hold for `lambda1` (rejected otherwise).
pub fn solve_linear_pbe(
    problem: &PbeProblem,
    lambda1: f64,
    config: &SolverConfig,
) -> Result<(GridFunction, SolveInfo)> {
    let verdict = check_hypotheses(&problem.coeffs, lambda1);
    if !verdict.h2_ok {
        return Err(Error::HypothesisViolation(format!(
            "ellipticity failed: theta = {}",
            verdict.theta
        )));
    }
    if !verdict.h3_ok {
        return Err(Error::HypothesisViolation(format!(
            "invertibility failed: mu/theta = {} >= lambda1 = {}",
            verdict.mu / verdict.theta,
            lambda1
        )));
    }
    let w = harmonic_lift(&problem.g, &problem.grid)?;
    let system = assemble_l(&problem.coeffs, &problem.grid)?;
    solve_with_lift(problem, system, &w, config)
}

/// Inner solve reusing a pre-assembled system and precomputed lift.
pub fn solve_with_lift(
    problem: &PbeProblem,
    system: LinearSystem,
    w: &GridFunction,
    config: &SolverConfig,
) -> Result<(GridFunction, SolveInfo)> {
    let grid = &problem.grid;
    let lw = apply_operator(&problem.coeffs, grid, w)?;
    let f_int = restrict_interior(grid, &problem.f);
    let rhs: Vec<Complex64> = f_int
        .iter()
        .zip(&lw)
        .map(|(fi, lwi)| fi - lwi)
        .collect();
    let tilde = if system.interior_dim() <= config.direct_threshold {
        system.factor()?.solve(&rhs)
    } else {
        bicgstab(&system, &rhs, config)?
    };
    let mut u = w.clone();
    let mut k = 0;
    for idx in 0..grid.node_count() {
        if !grid.is_boundary(idx) {
            u.values_mut()[idx] += tilde[k];
            k += 1;
        }
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("linear solve output".into()));
    }
    let info = solve_diagnostics(problem, &u, w)?;
    Ok((u, info))
}

fn solve_diagnostics(
    problem: &PbeProblem,
    u: &GridFunction,
    w: &GridFunction,
) -> Result<SolveInfo> {
    let grid = &problem.grid;
    let lu_vals = apply_operator(&problem.coeffs, grid, u)?;
    let f_int = restrict_interior(grid, &problem.f);
    let mut res_sq = 0.0;
    let mut k = 0;
    for idx in 0..grid.node_count() {
        if !grid.is_boundary(idx) {
            res_sq += grid.weight(idx) * (lu_vals[k] - f_int[k]).norm_sqr();
            k += 1;
        }
    }
    let residual = res_sq.sqrt();
    let f_l2 = problem.f.norm(NormKind::L2);
    Ok(SolveInfo {
        residual,
        relative_residual: residual / f_l2.max(1e-300),
        u_h2: u.norm(NormKind::H2),
        w_h2: w.norm(NormKind::H2),
        f_l2,
    })
}

/// A-priori regularity audit: checks
/// `||u||_{H2,h} <= C_H ||f|| + (C_H C_D + 1) ||w||_{H2,h}` up to `slack`.
#[derive(Debug, Clone, Copy)]
pub struct AprioriAudit {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

pub fn apriori_audit(info: &SolveInfo, ch_bound: f64, cd_bound: f64, slack: f64) -> AprioriAudit {
    let rhs = (ch_bound * info.f_l2 + (ch_bound * cd_bound + 1.0) * info.w_h2) * (1.0 + slack);
    AprioriAudit {
        lhs: info.u_h2,
        rhs,
        ok: info.u_h2 <= rhs,
    }
}

/// Unpreconditioned BiCGStab on the assembled interior system.
fn bicgstab(
    system: &LinearSystem,
    rhs: &[Complex64],
    config: &SolverConfig,
) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    let mut x = vec![Complex64::ZERO; n];
    let mut r = rhs.to_vec();
    let r0 = r.clone();
    let bnorm = dot_norm(&r).max(1e-300);
    let (mut rho, mut alpha, mut omega) = (Complex64::ONE, Complex64::ONE, Complex64::ONE);
    let mut v = vec![Complex64::ZERO; n];
    let mut p = vec![Complex64::ZERO; n];
    let mut t = vec![Complex64::ZERO; n];
    for _ in 0..config.iterative_max {
        let rho_new: Complex64 = r0.iter().zip(&r).map(|(a, b)| a.conj() * b).sum();
        if rho_new.norm() < 1e-290 {
            return Err(Error::SolveFailure("bicgstab breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        system.matvec(&p, &mut v);
        let denom: Complex64 = r0.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
        alpha = rho_new / denom;
        let s: Vec<Complex64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if dot_norm(&s) / bnorm < config.iterative_tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(x);
        }
        system.matvec(&s, &mut t);
        let tt: f64 = t.iter().map(|z| z.norm_sqr()).sum();
        let ts: Complex64 = t.iter().zip(&s).map(|(a, b)| a.conj() * b).sum();
        omega = ts / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if dot_norm(&r) / bnorm < config.iterative_tol {
            return Ok(x);
        }
        rho = rho_new;
    }
    Err(Error::NoConvergence {
        iterations: config.iterative_max,
        context: "bicgstab".into(),
    })
}

fn dot_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// H2 Gram operator on interior vectors: `v -> restrict(G extend(v))` where
/// `u^H G u = ||u||_{H2,h}^2` for grid functions vanishing on the boundary.
pub(crate) fn h2_gram_apply(grid: &Grid, v_int: &[Complex64]) -> Vec<Complex64> {
    let n = grid.node_count();
    let mut full = vec![Complex64::ZERO; n];
    let mut k = 0;
    for idx in 0..n {
        if !grid.is_boundary(idx) {
            full[idx] = v_int[k];
            k += 1;
        }
    }
    let mut acc = vec![Complex64::ZERO; n];
    for idx in 0..n {
        acc[idx] = grid.weight(idx) * full[idx];
    }
    let mut t1 = vec![Complex64::ZERO; n];
    let mut t2 = vec![Complex64::ZERO; n];
    let weight_into = |grid: &Grid, buf: &mut [Complex64]| {
        for idx in 0..buf.len() {
            buf[idx] *= grid.weight(idx);
        }
    };
    for a in 0..grid.dim() {
        mesh::diff1(grid, a, &full, &mut t1);
        weight_into(grid, &mut t1);
        mesh::diff1_transpose(grid, a, &t1, &mut t2);
        for idx in 0..n {
            acc[idx] += t2[idx];
        }
        mesh::diff2(grid, a, &full, &mut t1);
        weight_into(grid, &mut t1);
        mesh::diff2_transpose(grid, a, &t1, &mut t2);
        for idx in 0..n {
            acc[idx] += t2[idx];
        }
    }
    let mut t3 = vec![Complex64::ZERO; n];
    for a in 0..grid.dim() {
        for b in (a + 1)..grid.dim() {
            mesh::diff1(grid, a, &full, &mut t1);
            mesh::diff1(grid, b, &t1, &mut t2);
            weight_into(grid, &mut t2);
            mesh::diff1_transpose(grid, b, &t2, &mut t1);
            mesh::diff1_transpose(grid, a, &t1, &mut t3);
            for idx in 0..n {
                acc[idx] += t3[idx];
            }
        }
    }
    (0..n)
        .filter(|&idx| !grid.is_boundary(idx))
        .map(|idx| acc[idx])
        .collect()
}

/// Empirical discrete estimate of `||L^-1||` as an operator from L2 to H2:
/// the largest ratio `||u||_{H2,h} / ||f||_{L2,h}` over interior-supported
/// right-hand sides, located by random probing refined with power iteration
/// on the normal operator.
pub fn probe_discrete_ch(
    coeffs: &CoefficientSet,
    grid: &Grid,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let system = assemble_l(coeffs, grid)?.factor()?;
    let m = system.interior_dim();
    let weights: Vec<f64> = (0..grid.node_count())
        .filter(|&i| !grid.is_boundary(i))
        .map(|i| grid.weight(i))
        .collect();
    let w_norm = |v: &[Complex64]| -> f64 {
        v.iter()
            .zip(&weights)
            .map(|(z, w)| w * z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    let root = CounterRng::new(seed);
    let mut best = 0.0f64;
    for trial in 0..trials.max(1) {
        let mut rng = root.stream(trial as u64);
        let mut x: Vec<Complex64> = (0..m)
            .map(|_| Complex64::new(rng.symmetric(), rng.symmetric()))
            .collect();
        let nx = w_norm(&x);
        for z in x.iter_mut() {
            *z /= nx;
        }
        let mut sigma_sq = 0.0f64;
        for _ in 0..200 {
            let u = system.solve(&x);
            let g = h2_gram_apply(grid, &u);
            let y = system.solve_adjoint(&g);
            let new_sigma: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (a.conj() * b).re)
                .sum::<f64>();
            let mut z: Vec<Complex64> = y
                .iter()
                .zip(&weights)
                .map(|(yi, wi)| yi / *wi)
                .collect();
            let nz = w_norm(&z);
            if nz == 0.0 {
                break;
            }
            for v in z.iter_mut() {
                *v /= nz;
            }
            x = z;
            if (new_sigma - sigma_sq).abs() <= 1e-10 * new_sigma.abs() {
                sigma_sq = new_sigma;
                break;
            }
            sigma_sq = new_sigma;
        }
        best = best.max(sigma_sq.max(0.0).sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainSpec;
    use std::f64::consts::PI;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn unit_interval(n: usize) -> Grid {
        Grid::cartesian(DomainSpec::interval(1.0).unwrap(), &[n]).unwrap()
    }

    fn unit_square(n: usize) -> Grid {
        Grid::cartesian(DomainSpec::box_nd(&[1.0, 1.0]).unwrap(), &[n, n]).unwrap()
    }

    #[test]
    fn theta_mu_extraction() {
        let g = unit_square(5);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ONE).unwrap();
        assert!((cs.theta - 1.0).abs() < 1e-14);
        assert_eq!(cs.mu, 0.0);
        let v = check_hypotheses(&cs, 2.0 * PI * PI);
        assert!(v.h2_ok && v.h3_ok && v.ratio == 0.0);

        // constructed violation: kappa^2 = -2 lambda1
        let lam = 2.0 * PI * PI;
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, c(-2.0 * lam)).unwrap();
        assert!((cs.mu - 2.0 * lam).abs() < 1e-10);
        let v = check_hypotheses(&cs, lam);
        assert!(v.h2_ok && !v.h3_ok && (v.ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn theta_for_complex_offdiagonal_tensor() {
        // eps = [[1, i],[i, 1]]: Re eps = I, so theta = 1
        let g = unit_square(5);
        let i = Complex64::new(0.0, 1.0);
        let cs = CoefficientSet::tensor(
            &g,
            |_| vec![Complex64::ONE, i, i, Complex64::ONE],
            |_| Complex64::ZERO,
        )
        .unwrap();
        assert!((cs.theta - 1.0).abs() < 1e-12);
        assert!(!cs.is_diagonal());
        // such tensors are outside the flux-form stencil
        assert!(assemble_l(&cs, &g).is_err());
    }

    #[test]
    fn rejects_asymmetric_tensor() {
        let g = unit_square(4);
        let r = CoefficientSet::tensor(
            &g,
            |_| vec![Complex64::ONE, c(0.5), c(-0.5), Complex64::ONE],
            |_| Complex64::ZERO,
        );
        assert!(r.is_err());
    }

    #[test]
    fn operator_exact_on_affine_and_quadratic() {
        let g = unit_square(9);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ZERO).unwrap();
        let affine = GridFunction::from_fn(g, |x| c(1.0 + 2.0 * x[0] - 0.5 * x[1]));
        for v in apply_operator(&cs, &g, &affine).unwrap() {
            assert!(v.norm() < 1e-13);
        }

        let g1 = unit_interval(21);
        let cs1 = CoefficientSet::scalar_const(&g1, Complex64::ONE, Complex64::ZERO).unwrap();
        let quad = GridFunction::from_fn(g1, |x| c(x[0] * (1.0 - x[0]) / 2.0));
        for v in apply_operator(&cs1, &g1, &quad).unwrap() {
            assert!((v - Complex64::ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn operator_linear_in_eps() {
        let g = unit_square(7);
        let cs1 = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ZERO).unwrap();
        let cs2 = CoefficientSet::scalar_const(&g, c(2.0), Complex64::ZERO).unwrap();
        let u = GridFunction::from_fn(g, |x| {
            Complex64::new((3.0 * x[0]).sin(), (2.0 * x[1]).cos())
        });
        let a = apply_operator(&cs1, &g, &u).unwrap();
        let b = apply_operator(&cs2, &g, &u).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 2.0 * x).norm() < 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn harmonic_lift_reproduces_constants_and_harmonic_polynomials() {
        let g = unit_square(9);
        let cval = Complex64::new(0.7, -0.3);
        let w = harmonic_lift(&BoundaryValues::constant(&g, cval), &g).unwrap();
        for v in w.values() {
            assert!((v - cval).norm() < 1e-12);
        }

        // g = x restricted to the boundary lifts to w = x
        let bv = BoundaryValues::from_fn(&g, |x| c(x[0]));
        let w = harmonic_lift(&bv, &g).unwrap();
        for idx in 0..g.node_count() {
            let x = g.coord(idx);
            assert!((w.values()[idx] - c(x[0])).norm() < 1e-12);
        }
    }

    #[test]
    fn harmonic_lift_max_principle_random_data() {
        let g = unit_square(11);
        let root = CounterRng::new(31);
        for t in 0..50 {
            let mut rng = root.stream(t);
            let vals: Vec<Complex64> = g
                .boundary_indices()
                .iter()
                .map(|_| Complex64::new(rng.symmetric(), rng.symmetric()))
                .collect();
            let bmax = vals.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
            let bv = BoundaryValues { values: vals };
            let w = harmonic_lift(&bv, &g).unwrap();
            let imax = g
                .interior_indices()
                .iter()
                .map(|&i| w.values()[i].re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(imax <= bmax + 1e-12, "max principle violated: {imax} > {bmax}");
        }
    }

    #[test]
    fn poisson_textbook_solution() {
        // -u'' = 1, u(0)=u(1)=0  =>  u = x(1-x)/2, max 1/8
        let g = unit_interval(41);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ZERO).unwrap();
        let problem = PbeProblem {
            grid: g,
            coeffs: cs,
            f: GridFunction::constant(g, Complex64::ONE),
            g: BoundaryValues::zeros(&g),
        };
        let (u, info) = solve_linear_pbe(&problem, PI * PI, &SolverConfig::default()).unwrap();
        for idx in 0..g.node_count() {
            let x = g.coord(idx)[0];
            assert!((u.values()[idx] - c(x * (1.0 - x) / 2.0)).norm() < 1e-12);
        }
        let max = u.norm(NormKind::LInf);
        assert!((max - 0.125).abs() < 1e-12);
        assert!(info.relative_residual < 1e-12);
    }

    #[test]
    fn constant_boundary_data_gives_constant_solution() {
        let g = unit_square(9);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ZERO).unwrap();
        let cval = Complex64::new(1.0, 2.0);
        let problem = PbeProblem {
            grid: g,
            coeffs: cs,
            f: GridFunction::zeros(g),
            g: BoundaryValues::constant(&g, cval),
        };
        let (u, _) = solve_linear_pbe(&problem, 2.0 * PI * PI, &SolverConfig::default()).unwrap();
        for v in u.values() {
            assert!((v - cval).norm() < 1e-12);
        }
    }

    #[test]
    fn solve_is_linear_in_f() {
        let g = unit_square(9);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::new(0.3, 0.4))
            .unwrap();
        let f = GridFunction::from_fn(g, |x| Complex64::new(x[0], x[1] * x[1]));
        let factor = Complex64::new(-2.0, 0.5);
        let p1 = PbeProblem {
            grid: g,
            coeffs: cs.clone(),
            f: f.clone(),
            g: BoundaryValues::zeros(&g),
        };
        let p2 = PbeProblem {
            grid: g,
            coeffs: cs,
            f: f.scaled(factor),
            g: BoundaryValues::zeros(&g),
        };
        let lam = 2.0 * PI * PI;
        let (u1, _) = solve_linear_pbe(&p1, lam, &SolverConfig::default()).unwrap();
        let (u2, _) = solve_linear_pbe(&p2, lam, &SolverConfig::default()).unwrap();
        let scaled = u1.scaled(factor);
        let diff = u2.difference(&scaled).unwrap().norm(NormKind::L2);
        assert!(diff <= 1e-12 * u2.norm(NormKind::L2));
    }

    #[test]
    fn hypothesis_violation_rejected_by_solver() {
        let g = unit_interval(11);
        let lam = PI * PI;
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, c(-2.0 * lam)).unwrap();
        let problem = PbeProblem {
            grid: g,
            coeffs: cs,
            f: GridFunction::zeros(g),
            g: BoundaryValues::zeros(&g),
        };
        assert!(matches!(
            solve_linear_pbe(&problem, lam, &SolverConfig::default()),
            Err(Error::HypothesisViolation(_))
        ));
    }

    #[test]
    fn coercivity_certificate_random_fields() {
        // Re<L_h v, v> >= (theta - mu/lambda1_h) * face-difference energy
        // for zero-boundary fields; lambda1_h is the exact discrete value
        // sum_a (4/h^2) sin^2(pi h / (2 L_a)) on a box.
        let g = unit_square(9);
        let h = g.spacing(0);
        let lam1_h = 2.0 * (4.0 / (h * h)) * (PI * h / 2.0).sin().powi(2);
        let cs =
            CoefficientSet::scalar_const(&g, Complex64::new(1.0, 0.5), c(-0.25 * lam1_h)).unwrap();
        let gap = cs.theta - cs.mu / lam1_h;
        assert!(gap > 0.0);
        let root = CounterRng::new(5);
        for t in 0..100 {
            let mut rng = root.stream(t);
            let mut v = GridFunction::zeros(g);
            for &i in &g.interior_indices() {
                v.values_mut()[i] = Complex64::new(rng.symmetric(), rng.symmetric());
            }
            let lv = apply_operator(&cs, &g, &v).unwrap();
            let vi = restrict_interior(&g, &v);
            let mut lhs = 0.0;
            let mut k = 0;
            for idx in 0..g.node_count() {
                if !g.is_boundary(idx) {
                    lhs += g.weight(idx) * (lv[k] * vi[k].conj()).re;
                    k += 1;
                }
            }
            // face-difference Dirichlet energy with unit coefficient
            let mut energy = 0.0;
            let cell = g.spacing(0) * g.spacing(1);
            for a in 0..2 {
                let stride = mesh::axis_stride(&g, a);
                let ha = g.spacing(a);
                for idx in 0..g.node_count() {
                    if g.multi_index(idx)[a] + 1 < g.nodes(a) {
                        let d = v.values()[idx + stride] - v.values()[idx];
                        energy += cell * d.norm_sqr() / (ha * ha);
                    }
                }
            }
            assert!(
                lhs >= gap * energy - 1e-10 * (1.0 + energy),
                "coercivity failed: lhs={lhs}, bound={}",
                gap * energy
            );
        }
    }

    #[test]
    fn probe_ch_seed_stability_and_bound_ordering() {
        let g = unit_interval(41);
        let cs = CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::ZERO).unwrap();
        let p1 = probe_discrete_ch(&cs, &g, 3, 101).unwrap();
        let p2 = probe_discrete_ch(&cs, &g, 3, 202).unwrap();
        assert!((p1 - p2).abs() <= 0.02 * p1.max(p2), "p1={p1}, p2={p2}");

        // analytic bound lambda1^-1 <1 + lambda1^{2/3}>^{3/2} for eps=1, k2=0
        let lam = PI * PI;
        let bound = (1.0 / lam) * (1.0 + lam.powf(2.0 / 3.0)).powf(1.5);
        assert!(p1 <= bound, "probe {p1} exceeds analytic bound {bound}");

        // scaling kappa^2 by 10 (mu = 0) keeps probe under its bound
        let cs10 = CoefficientSet::scalar_const(&g, Complex64::ONE, c(10.0)).unwrap();
        let p10 = probe_discrete_ch(&cs10, &g, 3, 101).unwrap();
        let bound10 = (1.0 / lam) * (1.0 + lam.powf(2.0 / 3.0)).powf(1.5) * (1.0 + 10.0 / lam);
        assert!(p10 <= bound10);
    }

    #[test]
    fn bicgstab_agrees_with_direct() {
        let g = unit_square(11);
        let cs =
            CoefficientSet::scalar_const(&g, Complex64::ONE, Complex64::new(0.5, 0.5)).unwrap();
        let f = GridFunction::from_fn(g, |x| Complex64::new((PI * x[0]).sin(), x[1]));
        let problem = PbeProblem {
            grid: g,
            coeffs: cs,
            f,
            g: BoundaryValues::zeros(&g),
        };
        let lam = 2.0 * PI * PI;
        let (ud, _) = solve_linear_pbe(&problem, lam, &SolverConfig::default()).unwrap();
        let iter_cfg = SolverConfig {
            direct_threshold: 0,
            iterative_tol: 1e-12,
            ..SolverConfig::default()
        };
        let (ui, info) = solve_linear_pbe(&problem, lam, &iter_cfg).unwrap();
        assert!(info.relative_residual < 1e-8);
        let diff = ud.difference(&ui).unwrap().norm(NormKind::L2);
        assert!(diff < 1e-8 * ud.norm(NormKind::L2).max(1e-9));
    }
}
