//! Explicit constants and smallness conditions.
//!
//! This module evaluates every closed-form constant the solver's
//! certificates rest on: the principal Dirichlet eigenvalue `lambda_1`
//! (discrete estimate plus the convex-domain lower bound `pi^2/d_Omega^2`),
//! the Sobolev embedding bracket `C_S(2)` for convex 3-D domains, the
//! operator bounds `C_D` for `L` and `C_H` for `L^-1` (scalar and tensor
//! dielectric forms), the critical fixed-point radius `M0`, and the boolean
//! existence/uniqueness verdicts.
//!
//! All bounds are floating-point evaluations of closed forms, not interval
//! arithmetic.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use statrs::function::gamma::gamma;

use crate::linear_pbe::CoefficientSet;
use crate::mesh::{DomainSpec, Grid, GridFunction};
use crate::{Error, Result};

/// Options for the inverse-power eigenvalue iteration.
#[derive(Debug, Clone, Copy)]
pub struct EigenOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            rel_tol: 1e-10,
            max_iter: 10_000,
            cg_tol: 1e-12,
        }
    }
}

/// Matrix-free application of the (negative) Dirichlet Laplacian stencil to
/// an interior-ordered real vector; values beyond the interior are zero.
fn apply_neg_laplacian(grid: &Grid, v: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    let mut m = [1usize; 3];
    for a in 0..d {
        m[a] = grid.nodes(a) - 2;
    }
    let mut strides = [1usize; 3];
    for a in 1..d {
        strides[a] = strides[a - 1] * m[a - 1];
    }
    let count: usize = m[..d].iter().product();
    for k in 0..count {
        let mut rest = k;
        let mut mi = [0usize; 3];
        for a in 0..d {
            mi[a] = rest % m[a];
            rest /= m[a];
        }
        let mut acc = 0.0;
        for a in 0..d {
            let h2 = grid.spacing(a) * grid.spacing(a);
            let left = if mi[a] > 0 { v[k - strides[a]] } else { 0.0 };
            let right = if mi[a] + 1 < m[a] { v[k + strides[a]] } else { 0.0 };
            acc += (2.0 * v[k] - left - right) / h2;
        }
        out[k] = acc;
    }
}

fn cg_solve_laplacian(grid: &Grid, b: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let bnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let max_iter = 20 * n + 100;
    for _ in 0..max_iter {
        if rs.sqrt() / bnorm <= tol {
            return Ok(x);
        }
        apply_neg_laplacian(grid, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        context: "cg on dirichlet laplacian".into(),
    })
}

/// Principal Dirichlet eigenpair by inverse power iteration. The eigenvector
/// is returned as a grid function vanishing on the boundary, normalized to
/// unit discrete L2 norm and positive in the interior.
pub fn dirichlet_eigenpair(grid: &Grid, opts: &EigenOptions) -> Result<(f64, GridFunction)> {
    let n = grid.interior_count();
    if n == 0 {
        return Err(Error::InvalidGrid("no interior nodes".into()));
    }
    let mut x = vec![1.0f64; n];
    let mut lambda_prev = f64::INFINITY;
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let y = cg_solve_laplacian(grid, &x, opts.cg_tol)?;
        // A y = x  =>  Rayleigh quotient of y is <y,x>/<y,y>
        let yx: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        lambda = yx / yy;
        let ny = yy.sqrt();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if (lambda - lambda_prev).abs() <= opts.rel_tol * lambda.abs() {
            converged = true;
            break;
        }
        lambda_prev = lambda;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: opts.max_iter,
            context: "inverse power iteration".into(),
        });
    }
    // sign and quadrature normalization
    let cell: f64 = (0..grid.dim()).map(|a| grid.spacing(a)).product();
    let sum: f64 = x.iter().sum();
    let flip = if sum < 0.0 { -1.0 } else { 1.0 };
    let l2 = (cell * x.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let mut v0 = GridFunction::zeros(*grid);
    let mut k = 0;
    for idx in 0..grid.node_count() {
        if !grid.is_boundary(idx) {
            v0.values_mut()[idx] = Complex64::new(flip * x[k] / l2, 0.0);
            k += 1;
        }
    }
    Ok((lambda, v0))
}

/// Smallest eigenvalue of the discrete Dirichlet Laplacian together with the
/// convex-domain lower bound `pi^2 / d_Omega^2`.
pub fn lambda1_estimate(grid: &Grid) -> Result<(f64, f64)> {
    let (lambda, _) = dirichlet_eigenpair(grid, &EigenOptions::default())?;
    let d = grid.domain.diameter();
    Ok((lambda, PI * PI / (d * d)))
}

/// Convex-domain verdict `lambda_1 >= pi^2 / d_Omega^2` evaluated from the
/// discrete estimate.
///
/// On box grids the 3-point stencil eigenvalue sits below the continuum one
/// by at most the factor `max_a (pi h_a / (2 L_a))^2 / 3` (from
/// `sin(x)^2/x^2 >= 1 - x^2/3` applied per axis), so the comparison carries
/// exactly that slack; the interval is the equality case of the bound and
/// would otherwise fail at every finite resolution.
#[derive(Debug, Clone, Copy)]
pub struct PoincareVerdict {
    pub ok: bool,
    pub lambda1: f64,
    pub lower_bound: f64,
    /// Relative one-sided discretization allowance.
    pub slack: f64,
    /// Dimensionless ratio `lambda1 * d_Omega^2` (tight value is pi^2 on
    /// the interval).
    pub scaled_ratio: f64,
}

pub fn payne_weinberger_verdict(grid: &Grid, lambda1: f64) -> PoincareVerdict {
    let d = grid.domain.diameter();
    let lower_bound = PI * PI / (d * d);
    let slack = (0..grid.dim())
        .map(|a| {
            let x = PI * grid.spacing(a) / (2.0 * grid.domain.extent(a));
            x * x / 3.0
        })
        .fold(0.0, f64::max);
    PoincareVerdict {
        ok: lambda1 >= lower_bound * (1.0 - slack),
        lambda1,
        lower_bound,
        slack,
        scaled_ratio: lambda1 * d * d,
    }
}

/// Embedding constants for `H^2 -> W^{1,p} -> L^inf` on a convex 3-D domain.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingConstants {
    pub d2p: f64,
    pub c2p: f64,
    pub dpinf: f64,
    pub cpinf: f64,
    pub cs_upper: f64,
    pub cs_lower: f64,
}

/// Evaluates the closed-form embedding constants for `p` in (3,6):
///
/// ```text
/// D_{2,p}   = d^{1+3(p+2)/(2p)} pi^{3(p+2)/(4p)} / (3|O|)
///             * G(3(p-2)/(4p)) / G(3(p+2)/(4p))
///             * sqrt(G(3/p) / G(3(p-1)/p)) * (4/sqrt(pi))^{(p-2)/(2p)}
/// C_{2,p}   = 2^{1/2} max(|O|^{1/p-1/2}, D_{2,p})
/// D_{p,inf} = d^3/(3|O|) * (4 pi / (3-2p'))^{1/p'} d^{(3-2p')/p'}
/// C_{p,inf} = 2^{1-1/p} max(|O|^{-1/p}, D_{p,inf})
/// C_S^up    = 2^{1/p} C_{2,p} C_{p,inf},    C_S^low = |O|^{-1/2}
/// ```
///
/// where `p' = p/(p-1)` and the `D_{p,inf}` radial integral is taken over
/// the difference body enclosed in the ball of radius `d_Omega`; it blows up
/// exactly when p <= 3, hence the admissible range.
pub fn embedding_constants(domain: &DomainSpec, p: f64) -> Result<EmbeddingConstants> {
    if domain.dimension != 3 {
        return Err(Error::InvalidParameter {
            name: "domain",
            reason: "embedding constants are defined for 3-D domains".into(),
        });
    }
    if !(p > 3.0 && p < 6.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            reason: format!("must lie in (3,6), got {p}"),
        });
    }
    let (measure, diam) = (domain.measure(), domain.diameter());
    let d2p = diam.powf(1.0 + 3.0 * (p + 2.0) / (2.0 * p))
        * PI.powf(3.0 * (p + 2.0) / (4.0 * p))
        / (3.0 * measure)
        * gamma(3.0 * (p - 2.0) / (4.0 * p))
        / gamma(3.0 * (p + 2.0) / (4.0 * p))
        * (gamma(3.0 / p) / gamma(3.0 * (p - 1.0) / p)).sqrt()
        * (4.0 / PI.sqrt()).powf((p - 2.0) / (2.0 * p));
    let c2p = 2f64.sqrt() * measure.powf(1.0 / p - 0.5).max(d2p);
    let pp = p / (p - 1.0);
    let radial = (4.0 * PI / (3.0 - 2.0 * pp)).powf(1.0 / pp) * diam.powf((3.0 - 2.0 * pp) / pp);
    let dpinf = diam.powi(3) / (3.0 * measure) * radial;
    let cpinf = 2f64.powf(1.0 - 1.0 / p) * measure.powf(-1.0 / p).max(dpinf);
    Ok(EmbeddingConstants {
        d2p,
        c2p,
        dpinf,
        cpinf,
        cs_upper: 2f64.powf(1.0 / p) * c2p * cpinf,
        cs_lower: measure.powf(-0.5),
    })
}

/// Result of minimizing `C_S^up` over the p-grid {3.1, 3.2, ..., 5.9}.
#[derive(Debug, Clone, Copy)]
pub struct CsScan {
    pub best_p: f64,
    pub cs_upper: f64,
    pub cs_lower: f64,
}

pub fn cs_bracket_scan(domain: &DomainSpec) -> Result<CsScan> {
    let mut best: Option<(f64, f64)> = None;
    let mut lower = f64::NAN;
    for i in 1..=29 {
        let p = 3.0 + i as f64 / 10.0;
        let e = embedding_constants(domain, p)?;
        lower = e.cs_lower;
        if best.map(|(_, cs)| e.cs_upper < cs).unwrap_or(true) {
            best = Some((p, e.cs_upper));
        }
    }
    let (best_p, cs_upper) = best.unwrap();
    Ok(CsScan {
        best_p,
        cs_upper,
        cs_lower: lower,
    })
}

/// Bound on `||L||: H^2 -> L^2`: `2 d^2 ||eps||_{W^{1,inf}} + ||kappa^2||_inf`.
pub fn cd_bound(coeffs: &CoefficientSet, grid: &Grid) -> f64 {
    let d = grid.dim() as f64;
    2.0 * d * d * coeffs.eps_w1inf(grid) + coeffs.kappa_sq_inf()
}

/// `<t> = (1 + t^2)^{1/2}`.
fn bracket(t: f64) -> f64 {
    (1.0 + t * t).sqrt()
}

/// Bound on `||L^-1||: L^2 -> H^2` for a scalar dielectric:
///
/// ```text
/// lambda1^-1 <lambda1^{1/3}>^3 / theta
///   * (1 + (||kappa^2||_inf + d^{1/2} max_i ||d_i eps||_inf lambda1^{1/2})
///          / (theta lambda1 - mu))
/// ```
pub fn ch_bound_scalar(coeffs: &CoefficientSet, grid: &Grid, lambda1: f64) -> Result<f64> {
    if !coeffs.is_scalar() {
        return Err(Error::InvalidParameter {
            name: "eps",
            reason: "scalar regularity bound needs a scalar dielectric".into(),
        });
    }
    let gap = coeffs.theta * lambda1 - coeffs.mu;
    if gap <= 0.0 {
        return Err(Error::HypothesisViolation(format!(
            "theta*lambda1 - mu = {gap} <= 0"
        )));
    }
    let d = grid.dim() as f64;
    let c1 = bracket(lambda1.powf(1.0 / 3.0)).powi(3) / lambda1;
    let perturbation =
        (coeffs.kappa_sq_inf() + d.sqrt() * coeffs.eps_grad_inf(grid) * lambda1.sqrt()) / gap;
    Ok(c1 / coeffs.theta * (1.0 + perturbation))
}

/// Bound on `||L^-1||` for a full symmetric tensor dielectric, parameterized
/// by the covering number `n_omega` and the cutoff gradient bound
/// `grad_zeta_inf` (both chosen by the caller):
///
/// ```text
/// C1 = ||eps||_{W^{1,inf}} (||grad zeta||_inf + 1/2),   delta = theta/(2 C1)
/// C2 = ||eps||_{W^{1,inf}} (2||grad zeta||_inf + (1 + 2||grad zeta||_inf)/(2 delta))
/// C0 = (4/theta) [ (2/theta)(1 + ||kappa^2||_inf/(theta lambda1 - mu))^2
///                  + lambda1 (C2 + theta ||grad zeta||_inf^2)/(theta lambda1 - mu)^2 ]
/// bound = n_omega (((1+lambda1)/(theta lambda1 - mu))^2 + d C0)^{1/2}
/// ```
pub fn ch_bound_tensor(
    coeffs: &CoefficientSet,
    grid: &Grid,
    lambda1: f64,
    n_omega: usize,
    grad_zeta_inf: f64,
) -> Result<f64> {
    if n_omega < 1 {
        return Err(Error::InvalidParameter {
            name: "n_omega",
            reason: "covering number must be >= 1".into(),
        });
    }
    let theta = coeffs.theta;
    let gap = theta * lambda1 - coeffs.mu;
    if gap <= 0.0 {
        return Err(Error::HypothesisViolation(format!(
            "theta*lambda1 - mu = {gap} <= 0"
        )));
    }
    let eps_norm = coeffs.eps_w1inf(grid);
    let gz = grad_zeta_inf;
    let c1 = eps_norm * (gz + 0.5);
    let delta = theta / (2.0 * c1);
    let c2 = eps_norm * (2.0 * gz + (1.0 + 2.0 * gz) / (2.0 * delta));
    let k2 = coeffs.kappa_sq_inf();
    let c0 = 4.0 / theta
        * (2.0 / theta * (1.0 + k2 / gap).powi(2) + lambda1 * (c2 + theta * gz * gz) / (gap * gap));
    let d = grid.dim() as f64;
    Ok(n_omega as f64 * (((1.0 + lambda1) / gap).powi(2) + d * c0).sqrt())
}

/// Inputs to the smallness conditions; all norms are the continuum-side
/// bounds or measured discrete values the caller trusts.
#[derive(Debug, Clone, Copy)]
pub struct SmallnessInputs {
    pub cs: f64,
    pub ch: f64,
    pub cd: f64,
    pub kappa_sq_inf: f64,
    pub measure: f64,
    pub f_norm: f64,
    pub w_h2_norm: f64,
}

/// Verdicts of the existence (self-map) and uniqueness (contraction)
/// conditions at ball radius `m`.
#[derive(Debug, Clone, Copy)]
pub struct SmallnessReport {
    pub m0: f64,
    pub schauder_ok: bool,
    pub banach_ok: bool,
    /// `m - F(m)` where `F` is the self-map bound; nonnegative iff
    /// `schauder_ok`.
    pub margin: f64,
}

/// The self-map bound
/// `F(M) = C_H ||f|| + (C_H C_D + 1)||w|| + C_H ||k^2|| |O|^{1/2} (sinh(C_S M) - C_S M)`.
pub fn fixed_point_map(inp: &SmallnessInputs, m: f64) -> f64 {
    let y0 = inp.ch * inp.f_norm + (inp.ch * inp.cd + 1.0) * inp.w_h2_norm;
    y0 + inp.ch * inp.kappa_sq_inf * inp.measure.sqrt() * ((inp.cs * m).sinh() - inp.cs * m)
}

/// Critical radius `M0 = C_S^-1 acosh(1 + 1/(C_H ||k^2|| |O|^{1/2} C_S))`;
/// infinite when the nonlinearity has zero weight.
pub fn critical_radius(inp: &SmallnessInputs) -> f64 {
    let q = inp.ch * inp.kappa_sq_inf * inp.measure.sqrt() * inp.cs;
    if q <= 0.0 {
        return f64::INFINITY;
    }
    (1.0 + 1.0 / q).acosh() / inp.cs
}

/// Contraction factor `C_H C_S ||k^2|| |O|^{1/2} (cosh(C_S M) - 1)`;
/// strictly below 1 exactly when `M < M0`.
pub fn contraction_factor(inp: &SmallnessInputs, m: f64) -> f64 {
    inp.ch * inp.cs * inp.kappa_sq_inf * inp.measure.sqrt() * ((inp.cs * m).cosh() - 1.0)
}

pub fn m0_and_conditions(inp: &SmallnessInputs, m: f64) -> SmallnessReport {
    let lhs = fixed_point_map(inp, m);
    SmallnessReport {
        m0: critical_radius(inp),
        schauder_ok: lhs <= m,
        banach_ok: contraction_factor(inp, m) < 1.0,
        margin: m - lhs,
    }
}

/// All constants and verdicts for a problem instance, ready to serialize.
#[derive(Debug, Clone)]
pub struct ConstantsReport {
    pub lambda1: f64,
    pub lambda1_lower: f64,
    pub cs_lower: f64,
    pub cs_upper: f64,
    pub best_p: f64,
    pub cd_bound: f64,
    pub ch_bound: f64,
    pub ch_probe: f64,
    pub m0: f64,
    pub schauder_ok: bool,
    pub banach_ok: bool,
    pub margin: f64,
    pub theta: f64,
    pub mu: f64,
    pub n_omega: usize,
    pub m: f64,
}

/// Knobs for [`build_report`].
#[derive(Debug, Clone, Copy)]
pub struct ReportParams {
    /// None selects the p minimizing `C_S^up` over the grid {3.1,...,5.9}.
    pub p: Option<f64>,
    pub n_omega: usize,
    /// None defaults to `2 / d_Omega`.
    pub grad_zeta_inf: Option<f64>,
    pub m: f64,
    pub f_norm: f64,
    pub w_h2_norm: f64,
    pub probe_trials: usize,
    pub seed: u64,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams {
            p: None,
            n_omega: 1,
            grad_zeta_inf: None,
            m: 0.0,
            f_norm: 0.0,
            w_h2_norm: 0.0,
            probe_trials: 3,
            seed: 0,
        }
    }
}

/// Computes the full constants report for a (3-D) problem instance. When
/// `params.m` is zero, the radius is set to `0.9 M0` so the verdicts probe
/// the certified regime.
pub fn build_report(
    grid: &Grid,
    coeffs: &CoefficientSet,
    params: &ReportParams,
) -> Result<ConstantsReport> {
    let (lambda1, lambda1_lower) = lambda1_estimate(grid)?;
    let (cs_lower, cs_upper, best_p) = match params.p {
        Some(p) => {
            let e = embedding_constants(&grid.domain, p)?;
            (e.cs_lower, e.cs_upper, p)
        }
        None => {
            let s = cs_bracket_scan(&grid.domain)?;
            (s.cs_lower, s.cs_upper, s.best_p)
        }
    };
    let cd = cd_bound(coeffs, grid);
    let ch = if coeffs.is_scalar() {
        ch_bound_scalar(coeffs, grid, lambda1)?
    } else {
        let gz = params
            .grad_zeta_inf
            .unwrap_or(2.0 / grid.domain.diameter());
        ch_bound_tensor(coeffs, grid, lambda1, params.n_omega, gz)?
    };
    let ch_probe = crate::linear_pbe::probe_discrete_ch(
        coeffs,
        grid,
        params.probe_trials,
        params.seed,
    )?;
    let inputs = SmallnessInputs {
        cs: cs_upper,
        ch,
        cd,
        kappa_sq_inf: coeffs.kappa_sq_inf(),
        measure: grid.domain.measure(),
        f_norm: params.f_norm,
        w_h2_norm: params.w_h2_norm,
    };
    let m = if params.m > 0.0 {
        params.m
    } else {
        let m0 = critical_radius(&inputs);
        if m0.is_finite() {
            0.9 * m0
        } else {
            1.0
        }
    };
    let rep = m0_and_conditions(&inputs, m);
    Ok(ConstantsReport {
        lambda1,
        lambda1_lower,
        cs_lower,
        cs_upper,
        best_p,
        cd_bound: cd,
        ch_bound: ch,
        ch_probe,
        m0: rep.m0,
        schauder_ok: rep.schauder_ok,
        banach_ok: rep.banach_ok,
        margin: rep.margin,
        theta: coeffs.theta,
        mu: coeffs.mu,
        n_omega: params.n_omega,
        m,
    })
}

impl ConstantsReport {
    fn rows(&self) -> Vec<(&'static str, String, &'static str)> {
        vec![
            ("lambda1", format!("{}", self.lambda1), "estimate"),
            ("lambda1_lower", format!("{}", self.lambda1_lower), "bound"),
            ("cs_lower", format!("{}", self.cs_lower), "bound"),
            ("cs_upper", format!("{}", self.cs_upper), "bound"),
            ("best_p", format!("{}", self.best_p), "estimate"),
            ("cd_bound", format!("{}", self.cd_bound), "bound"),
            ("ch_bound", format!("{}", self.ch_bound), "bound"),
            ("ch_probe", format!("{}", self.ch_probe), "estimate"),
            ("m0", format!("{}", self.m0), "estimate"),
            ("m", format!("{}", self.m), "estimate"),
            ("theta", format!("{}", self.theta), "estimate"),
            ("mu", format!("{}", self.mu), "estimate"),
            ("n_omega", format!("{}", self.n_omega), "estimate"),
            ("margin", format!("{}", self.margin), "estimate"),
            ("schauder_ok", format!("{}", self.schauder_ok), "verdict"),
            ("banach_ok", format!("{}", self.banach_ok), "verdict"),
        ]
    }

    /// Flat `key = value` text.
    pub fn write_kv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (name, value, _) in self.rows() {
            writeln!(out, "{name} = {value}")?;
        }
        Ok(())
    }

    /// CSV rows `name, value, kind` with kind in {bound, estimate, verdict}.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "name,value,kind")?;
        for (name, value, kind) in self.rows() {
            writeln!(out, "{name},{value},{kind}")?;
        }
        Ok(())
    }
}
