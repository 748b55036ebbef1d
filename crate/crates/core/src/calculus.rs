//! Finite-difference derivatives and the p-Laplacian in its various forms.
//!
//! Gradients and Hessians are two-component arrays; in 1D the second
//! component (and the corresponding Hessian row/column) is zero, so traces
//! and quadratic forms need no special casing.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Point, ScalarField};
use crate::gallery::GalleryEntry;

pub type Grad = [f64; 2];
pub type Hess = [[f64; 2]; 2];

pub fn norm(g: &Grad) -> f64 {
    (g[0] * g[0] + g[1] * g[1]).sqrt()
}

pub fn trace(h: &Hess) -> f64 {
    h[0][0] + h[1][1]
}

/// `H g · g`.
pub fn quad_form(h: &Hess, g: &Grad) -> f64 {
    let hg = [
        h[0][0] * g[0] + h[0][1] * g[1],
        h[1][0] * g[0] + h[1][1] * g[1],
    ];
    hg[0] * g[0] + hg[1] * g[1]
}

/// Central first differences `(u(x+h e_i) - u(x-h e_i)) / 2h`.
pub fn gradient(u: &ScalarField, idx: usize) -> Result<Grad> {
    let grid = u.grid();
    if !grid.is_interior(idx) {
        return Err(Error::BoundaryNode(idx));
    }
    let h = grid.spacing();
    let mut g = [0.0; 2];
    for (k, gk) in g.iter_mut().enumerate().take(grid.dim()) {
        let (plus, minus) = axis_neighbours(u, idx, k);
        *gk = (u.get(plus) - u.get(minus)) / (2.0 * h[k]);
    }
    Ok(g)
}

/// Second differences: 3-point diagonal and the 4-corner mixed stencil,
/// stored symmetrized.
pub fn hessian(u: &ScalarField, idx: usize) -> Result<Hess> {
    let grid = u.grid();
    if !grid.is_interior(idx) {
        return Err(Error::BoundaryNode(idx));
    }
    let h = grid.spacing();
    let c = u.get(idx);
    let mut out = [[0.0; 2]; 2];
    for k in 0..grid.dim() {
        let (plus, minus) = axis_neighbours(u, idx, k);
        out[k][k] = (u.get(plus) - 2.0 * c + u.get(minus)) / (h[k] * h[k]);
    }
    if grid.dim() == 2 {
        let at = |d: [i64; 2]| u.get(grid.offset(idx, d).expect("interior node"));
        let mixed =
            (at([1, 1]) - at([1, -1]) - at([-1, 1]) + at([-1, -1])) / (4.0 * h[0] * h[1]);
        out[0][1] = mixed;
        out[1][0] = mixed;
    }
    Ok(out)
}

fn axis_neighbours(u: &ScalarField, idx: usize, axis: usize) -> (usize, usize) {
    let mut d = [0i64; 2];
    d[axis] = 1;
    let plus = u.grid().offset(idx, d).expect("interior node");
    d[axis] = -1;
    let minus = u.grid().offset(idx, d).expect("interior node");
    (plus, minus)
}

/// A central-difference gradient together with a flag telling whether the
/// node sits on a concave kink (one-sided slopes drop by more than
/// `kink_tol` on some axis), where the gradient does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGradient {
    pub grad: Grad,
    pub reliable: bool,
}

/// Gradient estimates at every interior node; `None` on the boundary.
pub fn gradient_field(u: &ScalarField, kink_tol: f64) -> Vec<Option<NodeGradient>> {
    let grid = u.grid();
    let h = grid.spacing();
    grid.nodes()
        .map(|idx| {
            let grad = gradient(u, idx).ok()?;
            let c = u.get(idx);
            let reliable = (0..grid.dim()).all(|k| {
                let (plus, minus) = axis_neighbours(u, idx, k);
                let forward = (u.get(plus) - c) / h[k];
                let backward = (c - u.get(minus)) / h[k];
                backward - forward <= kink_tol
            });
            Some(NodeGradient { grad, reliable })
        })
        .collect()
}

/// The negative p-Laplacian in expanded (non-divergence) form,
/// `-|Du|^(p-2) (Δu + (p-2) D²u (Du/|Du|)·(Du/|Du|))`.
///
/// Returns `None` when `1 < p < 2` and `|grad| <= grad_tol`; the operator
/// has no meaning there. For `p = 2` this is `-Δu` everywhere, and for
/// `p > 2` the value at `grad = 0` is the continuous extension `0`.
pub fn p_laplacian_expanded(grad: &Grad, hess: &Hess, p: f64, grad_tol: f64) -> Option<f64> {
    let g = norm(grad);
    if p < 2.0 && g <= grad_tol {
        return None;
    }
    if p == 2.0 {
        return Some(-trace(hess));
    }
    if g == 0.0 {
        return Some(0.0);
    }
    let normal = quad_form(hess, grad) / (g * g);
    Some(-g.powf(p - 2.0) * (trace(hess) + (p - 2.0) * normal))
}

/// `-div((|Du|^2 + δ)^((p-2)/2) Du)` expanded with the given derivatives.
/// Defined for every gradient, including zero.
pub fn regularized_divergence(grad: &Grad, hess: &Hess, p: f64, delta: f64) -> f64 {
    assert!(delta > 0.0, "regularization parameter must be positive");
    let s = grad[0] * grad[0] + grad[1] * grad[1] + delta;
    -s.powf((p - 2.0) / 2.0) * (trace(hess) + (p - 2.0) / s * quad_form(hess, grad))
}

fn check_dual(p: f64, q: f64) -> Result<()> {
    let dual = p / (p - 1.0);
    if !(q > dual) {
        return Err(Error::Inadmissible { p, q, dual });
    }
    Ok(())
}

/// Uniform bound `C` with `-(n+p-2)(q-1)/ε |Du_ε|^(p-2+(q-2)/(q-1)) >= -C`
/// for `|Du_ε| <= lip`, in the singular range `1 < p < 2`.
///
/// The exponent `p-2+(q-2)/(q-1)` is positive exactly when `q > p/(p-1)`,
/// which is enforced.
pub fn fatou_lower_bound(dim: usize, p: f64, q: f64, eps: f64, lip: f64) -> Result<f64> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidParameter(format!(
            "the regularized bound is for 1 < p < 2, got p = {p}; use degenerate_lower_bound"
        )));
    }
    check_dual(p, q)?;
    let exponent = p - 2.0 + (q - 2.0) / (q - 1.0);
    Ok((dim as f64 + p - 2.0) * (q - 1.0) / eps * lip.powf(exponent))
}

/// A lower-bound constant that holds for every `δ > 0`, not only in the
/// limit `δ → 0`.
///
/// With `t = |g|^2 / (|g|^2 + δ)` the regularized operator under
/// `D²u <= K I` is bounded below by `-K |g|^(p-2) t^a (n - 2a t)`,
/// `a = (2-p)/2`. The factor `t^a (n - 2a t)` peaks at `t* = n/(4-p)`; for
/// `n >= 3` that is outside `(0, 1]` and the constant reduces to
/// [`fatou_lower_bound`], while for `n <= 2` it is strictly larger.
pub fn regularized_lower_bound(dim: usize, p: f64, q: f64, eps: f64, lip: f64) -> Result<f64> {
    let limit = fatou_lower_bound(dim, p, q, eps, lip)?;
    let n = dim as f64;
    let a = (2.0 - p) / 2.0;
    let t_star = n / (4.0 - p);
    if t_star >= 1.0 {
        return Ok(limit);
    }
    let peak = t_star.powf(a) * (n - 2.0 * a * t_star);
    Ok(limit * peak / (n + p - 2.0))
}

/// `grad_bound^(p-2) (n+p-2) / ε`: the magnitude of the uniform lower bound
/// on `-Δ_p` of a smoothed envelope with `D² <= I/ε`, for `p >= 2`.
pub fn degenerate_lower_bound(dim: usize, p: f64, eps: f64, grad_bound: f64) -> Result<f64> {
    if p < 2.0 {
        return Err(Error::InvalidParameter(format!(
            "degenerate bound needs p >= 2, got {p}; use fatou_lower_bound"
        )));
    }
    Ok(grad_bound.powf(p - 2.0) * (dim as f64 + p - 2.0) / eps)
}

/// An ordered exponent triple `1 < lower < p < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentTriple {
    pub lower: f64,
    pub p: f64,
    pub upper: f64,
}

impl ExponentTriple {
    pub fn new(lower: f64, p: f64, upper: f64) -> Result<Self> {
        if !(1.0 < lower && lower < p && p < upper && upper.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 1 < {lower} < {p} < {upper} < inf"
            )));
        }
        Ok(ExponentTriple { lower, p, upper })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl IdentityResidual {
    /// Relative check `|lhs - rhs| <= tol (1 + |lhs|)`.
    pub fn within(&self, tol: f64) -> bool {
        self.residual <= tol * (1.0 + self.lhs.abs())
    }
}

fn delta_s(grad: &Grad, hess: &Hess, s: f64) -> f64 {
    let g = norm(grad);
    g.powf(s - 2.0) * (trace(hess) + (s - 2.0) * quad_form(hess, grad) / (g * g))
}

/// Residual of
/// `(r-q)|Du|^(2-p) Δ_p u = (r-p)|Du|^(2-q) Δ_q u + (p-q)|Du|^(2-r) Δ_r u`
/// evaluated with the entry's analytic derivatives at `x`.
pub fn pointwise_identity_residual(
    entry: &GalleryEntry,
    x: &Point,
    exps: &ExponentTriple,
) -> Result<IdentityResidual> {
    let grad = entry.gradient(x);
    let hess = entry.hessian(x);
    let g = norm(&grad);
    if g == 0.0 {
        return Err(Error::ZeroGradient(x[..entry.dim].to_vec()));
    }
    let (q, p, r) = (exps.lower, exps.p, exps.upper);
    let scaled = |s: f64| g.powf(2.0 - s) * delta_s(&grad, &hess, s);
    let lhs = (r - q) * scaled(p);
    let rhs = (r - p) * scaled(q) + (p - q) * scaled(r);
    Ok(IdentityResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

/// All derivative-based quantities at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorSample {
    pub x: Point,
    pub grad: Grad,
    pub hess: Hess,
    pub p_lap: Option<f64>,
    pub reg_div: f64,
}

pub fn operator_sample(
    u: &ScalarField,
    idx: usize,
    p: f64,
    delta: f64,
    grad_tol: f64,
) -> Result<OperatorSample> {
    let grad = gradient(u, idx)?;
    let hess = hessian(u, idx)?;
    Ok(OperatorSample {
        x: u.grid().coord(idx),
        grad,
        hess,
        p_lap: p_laplacian_expanded(&grad, &hess, p, grad_tol),
        reg_div: regularized_divergence(&grad, &hess, p, delta),
    })
}

/// Operator dump as CSV:
/// `index,gx(,gy),hxx(,hxy,hyy),plap_defined,plap,regdiv(delta=...)`.
pub fn write_operator_csv<W: std::io::Write>(
    u: &ScalarField,
    p: f64,
    delta: f64,
    grad_tol: f64,
    mut w: W,
) -> Result<()> {
    use crate::field::fmt_f64;
    let dim = u.grid().dim();
    let head = if dim == 1 {
        "index,gx,hxx"
    } else {
        "index,gx,gy,hxx,hxy,hyy"
    };
    writeln!(w, "{head},plap_defined,plap,regdiv(delta={delta})")?;
    for idx in u.grid().nodes() {
        let Ok(s) = operator_sample(u, idx, p, delta, grad_tol) else {
            continue;
        };
        let mut row = vec![idx.to_string(), fmt_f64(s.grad[0])];
        if dim == 2 {
            row.push(fmt_f64(s.grad[1]));
        }
        row.push(fmt_f64(s.hess[0][0]));
        if dim == 2 {
            row.push(fmt_f64(s.hess[0][1]));
            row.push(fmt_f64(s.hess[1][1]));
        }
        row.push(u8::from(s.p_lap.is_some()).to_string());
        row.push(s.p_lap.map(fmt_f64).unwrap_or_else(|| "nan".into()));
        row.push(fmt_f64(s.reg_div));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::gallery;

    const I2: Hess = [[1.0, 0.0], [0.0, 1.0]];

    #[test]
    fn stencils_exact_on_quadratics() {
        let grid = Grid::new(&[-1.0, -0.5], &[1.0, 1.5], &[9, 17]).unwrap();
        let a = [[1.3, -0.4], [-0.4, 0.7]];
        let u = ScalarField::from_fn(&grid, |x| {
            0.5 * (a[0][0] * x[0] * x[0] + 2.0 * a[0][1] * x[0] * x[1] + a[1][1] * x[1] * x[1])
                + 0.2 * x[0]
                - 3.0
        })
        .unwrap();
        for idx in grid.nodes().filter(|&i| grid.is_interior(i)) {
            let x = grid.coord(idx);
            let g = gradient(&u, idx).unwrap();
            let h = hessian(&u, idx).unwrap();
            let ga = [a[0][0] * x[0] + a[0][1] * x[1] + 0.2, a[1][0] * x[0] + a[1][1] * x[1]];
            for k in 0..2 {
                assert!((g[k] - ga[k]).abs() < 1e-12);
                for l in 0..2 {
                    assert!((h[k][l] - a[k][l]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn stencil_examples() {
        let grid = Grid::line(0.0, 1.0, 11).unwrap();
        let aff = ScalarField::from_fn(&grid, |x| 3.0 * x[0] - 1.0).unwrap();
        let c = ScalarField::constant(&grid, 2.0).unwrap();
        for idx in 1..10 {
            assert!((gradient(&aff, idx).unwrap()[0] - 3.0).abs() < 1e-13);
            assert!(hessian(&aff, idx).unwrap()[0][0].abs() < 1e-10);
            assert_eq!(gradient(&c, idx).unwrap(), [0.0, 0.0]);
            assert_eq!(hessian(&c, idx).unwrap(), [[0.0; 2]; 2]);
        }
        let q = ScalarField::from_fn(&grid, |x| 0.5 * x[0] * x[0]).unwrap();
        assert!((gradient(&q, 4).unwrap()[0] - 0.4).abs() < 1e-14);
        assert!(matches!(gradient(&q, 0), Err(Error::BoundaryNode(0))));
        assert!(matches!(hessian(&q, 10), Err(Error::BoundaryNode(10))));
    }

    #[test]
    fn p_laplacian_examples() {
        // Affine: hess = 0.
        for p in [1.3, 2.0, 4.0] {
            assert_eq!(p_laplacian_expanded(&[0.6, -0.8], &[[0.0; 2]; 2], p, 1e-3), Some(0.0));
        }
        // |x|^2/2 at |x| = 1 in two dimensions: -(n + p - 2).
        let g = [0.6, 0.8];
        for p in [1.5, 2.0, 3.0, 5.5] {
            let v = p_laplacian_expanded(&g, &I2, p, 1e-3).unwrap();
            assert!((v + (2.0 + p - 2.0)).abs() < 1e-14, "p = {p}: {v}");
        }
        // 1D version: n = 1.
        let v = p_laplacian_expanded(&[1.0, 0.0], &[[1.0, 0.0], [0.0, 0.0]], 3.0, 0.0).unwrap();
        assert!((v + 2.0).abs() < 1e-14);
        // Critical points.
        assert_eq!(p_laplacian_expanded(&[0.0, 0.0], &I2, 1.5, 1e-3), None);
        assert_eq!(p_laplacian_expanded(&[1e-4, 0.0], &I2, 1.5, 1e-3), None);
        assert_eq!(p_laplacian_expanded(&[0.0, 0.0], &I2, 2.0, 1e-3), Some(-2.0));
        assert_eq!(p_laplacian_expanded(&[0.0, 0.0], &I2, 3.0, 1e-3), Some(0.0));
    }

    #[test]
    fn fd_p_laplacian_on_radial_profile() {
        // |x|^-1 is 1.5-harmonic off the origin; FD error is O(h^2).
        let e = gallery::get("radial-p1.5").unwrap();
        let mut errs = Vec::new();
        for n in [33, 65, 129] {
            let grid = Grid::square(0.5, 1.5, n).unwrap();
            let u = crate::field::sample(e, &grid).unwrap();
            let idx = grid.nearest_node(&[1.0, 1.0]).unwrap();
            let s = operator_sample(&u, idx, 1.5, 1e-3, 0.0).unwrap();
            errs.push(s.p_lap.unwrap().abs());
        }
        assert!(errs[2] < 1e-4);
        assert!((errs[1] / errs[2]).log2() > 1.9, "{errs:?}");
    }

    #[test]
    fn regularized_divergence_examples() {
        for delta in [1e-6, 0.1, 3.0] {
            assert_eq!(regularized_divergence(&[0.3, 0.1], &[[0.0; 2]; 2], 1.5, delta), -0.0);
        }
        // |x|^2/2 at the origin: -δ^((p-2)/2) n.
        for (p, delta) in [(1.5, 0.01), (3.0, 0.5), (1.2, 2.0)] {
            let v = regularized_divergence(&[0.0, 0.0], &I2, p, delta);
            let oracle = -delta.powf((p - 2.0) / 2.0) * 2.0;
            assert!((v - oracle).abs() < 1e-12 * oracle.abs());
        }
    }

    #[test]
    fn regularized_converges_to_expanded_at_first_order() {
        let g = [0.5, -0.3];
        let h = [[0.7, 0.2], [0.2, -1.1]];
        for p in [1.5, 3.0] {
            let exact = p_laplacian_expanded(&g, &h, p, 0.0).unwrap();
            let errs: Vec<f64> = [1e-3, 1e-4, 1e-5]
                .iter()
                .map(|&d| (regularized_divergence(&g, &h, p, d) - exact).abs())
                .collect();
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log10();
                assert!((order - 1.0).abs() < 0.05, "p = {p}: {errs:?}");
            }
        }
    }

    #[test]
    fn fatou_bound_examples() {
        assert!(matches!(
            fatou_lower_bound(2, 1.5, 3.0, 1.0, 1.0),
            Err(Error::Inadmissible { .. })
        ));
        // Exponent -0.5 + 2/3 = 1/6; lip = 1 makes it irrelevant.
        let c = fatou_lower_bound(2, 1.5, 4.0, 1.0, 1.0).unwrap();
        assert!((c - 4.5).abs() < 1e-15);
        let c = fatou_lower_bound(2, 1.5, 4.0, 1.0, 2.0).unwrap();
        assert!((c - 4.5 * 2f64.powf(1.0 / 6.0)).abs() < 1e-14);
        assert_eq!(fatou_lower_bound(2, 1.5, 4.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(fatou_lower_bound(2, 2.5, 4.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn regularized_bound_is_sharp_at_its_peak() {
        // H = K I with |g| = lip and δ chosen so that t = t*.
        let (dim, p, q, eps, lip) = (2usize, 1.5, 4.0, 1.0, 1.0);
        let c = regularized_lower_bound(dim, p, q, eps, lip).unwrap();
        let k = (q - 1.0) / eps * lip.powf((q - 2.0) / (q - 1.0));
        let t_star = 2.0 / (4.0 - p);
        let delta = lip * lip * (1.0 / t_star - 1.0);
        let v = regularized_divergence(&[lip, 0.0], &[[k, 0.0], [0.0, k]], p, delta);
        assert!((v + c).abs() < 1e-12, "{v} vs {c}");
        assert!(c > fatou_lower_bound(dim, p, q, eps, lip).unwrap());
        // Three dimensions: the peak is at t = 1 and the constants agree.
        assert_eq!(
            regularized_lower_bound(3, p, q, eps, lip).unwrap(),
            fatou_lower_bound(3, p, q, eps, lip).unwrap()
        );
    }

    #[test]
    fn degenerate_bound_examples() {
        assert_eq!(degenerate_lower_bound(2, 2.0, 0.25, 17.0).unwrap(), 8.0);
        assert_eq!(degenerate_lower_bound(1, 3.0, 0.5, 2.0).unwrap(), 8.0);
        assert_eq!(degenerate_lower_bound(2, 3.0, 0.5, 0.0).unwrap(), 0.0);
        assert!(degenerate_lower_bound(2, 1.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn identity_examples() {
        let t = ExponentTriple::new(1.5, 2.0, 3.0).unwrap();
        let quad = gallery::get("quad-2d").unwrap();
        let r = pointwise_identity_residual(quad, &[0.6, 0.8], &t).unwrap();
        // Δ_s u = n + s - 2 at |x| = 1: (r-q)(n+p-2) = 1.5 * 2 = 3.
        assert!((r.lhs - 3.0).abs() < 1e-14);
        assert!(r.within(1e-10));

        let aff = gallery::get("affine-2d").unwrap();
        let r = pointwise_identity_residual(aff, &[0.1, 0.2], &t).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));

        assert!(matches!(
            pointwise_identity_residual(quad, &[0.0, 0.0], &t),
            Err(Error::ZeroGradient(_))
        ));
        assert!(ExponentTriple::new(2.0, 1.5, 3.0).is_err());
        assert!(ExponentTriple::new(1.0, 1.5, 3.0).is_err());
    }

    #[test]
    fn gradient_field_flags_concave_kinks() {
        let grid = Grid::line(-1.0, 1.0, 21).unwrap();
        let u = ScalarField::from_fn(&grid, |x| -x[0].abs()).unwrap();
        let gf = gradient_field(&u, 0.5);
        assert!(gf[0].is_none() && gf[20].is_none());
        let mid = gf[10].unwrap();
        assert!(mid.grad[0].abs() < 1e-14);
        assert!(!mid.reliable);
        assert!(gf[11].unwrap().reliable);
        // Convex kinks are not flagged.
        let v = ScalarField::from_fn(&grid, |x| x[0].abs()).unwrap();
        assert!(gradient_field(&v, 0.5)[10].unwrap().reliable);
    }
}
