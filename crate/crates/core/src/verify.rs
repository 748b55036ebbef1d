//! Pass/fail checks: weak-form residuals against bump functions, the
//! critical-set sign condition, the touching-test decay, envelope lemma
//! checks and parameter sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{self, gradient_field, norm, p_laplacian_expanded, Grad, NodeGradient};
use crate::envelope::{inf_convolve_fast, EnvelopeParams, EnvelopeResult};
use crate::error::{Error, Result};
use crate::field::{self, Grid, Point, ScalarField, ShrunkDomain};
use crate::gallery::{GalleryEntry, Role};
use crate::report::{log_slope, VerificationReport};

/// Tolerance multipliers. Every tolerance scales with the grid spacing `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// `|Du| <= grad * h` counts as a vanishing gradient.
    pub grad: f64,
    /// First-order bound checks use `first_order * h`.
    pub first_order: f64,
    /// Second-difference checks add `second_order * h^2`.
    pub second_order: f64,
    /// Weak-form scans pass when every normalized residual is `>= -weak * h`.
    pub weak: f64,
}

/// Default multiplier of the weak-form tolerance `K h`.
pub const WEAK_K: f64 = 2.0;

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            grad: 10.0,
            first_order: 10.0,
            second_order: 10.0,
            weak: WEAK_K,
        }
    }
}

impl Tolerances {
    pub fn grad_tol(&self, h: f64) -> f64 {
        self.grad * h
    }

    pub fn first(&self, h: f64) -> f64 {
        self.first_order * h
    }

    pub fn second(&self, h: f64) -> f64 {
        self.second_order * h * h
    }

    pub fn weak_tol(&self, h: f64) -> f64 {
        self.weak * h
    }
}

/// `ψ(x) = A exp(-1 / (1 - |x-c|^2/ρ^2))` inside `B_ρ(c)`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunction {
    center: Point,
    rho: f64,
    amplitude: f64,
}

impl TestFunction {
    pub fn new(center: Point, rho: f64, amplitude: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) || !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bump needs rho > 0 and amplitude > 0, got {rho}, {amplitude}"
            )));
        }
        Ok(TestFunction {
            center,
            rho,
            amplitude,
        })
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Value at the centre, `A / e`.
    pub fn peak(&self) -> f64 {
        self.amplitude * (-1.0f64).exp()
    }

    fn s(&self, x: &Point) -> f64 {
        let d0 = x[0] - self.center[0];
        let d1 = x[1] - self.center[1];
        (d0 * d0 + d1 * d1) / (self.rho * self.rho)
    }

    pub fn value(&self, x: &Point) -> f64 {
        let s = self.s(x);
        if s >= 1.0 {
            return 0.0;
        }
        self.amplitude * (-1.0 / (1.0 - s)).exp()
    }

    pub fn gradient(&self, x: &Point) -> Grad {
        let s = self.s(x);
        if s >= 1.0 {
            return [0.0; 2];
        }
        let w = 1.0 - s;
        let k = -self.amplitude * (-1.0 / w).exp() / (w * w) * 2.0 / (self.rho * self.rho);
        [k * (x[0] - self.center[0]), k * (x[1] - self.center[1])]
    }

    /// Same bump with the amplitude replaced.
    pub fn with_amplitude(&self, amplitude: f64) -> Result<Self> {
        Self::new(self.center, self.rho, amplitude)
    }
}

/// An axis-aligned box that test-function supports must stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRegion {
    pub lo: Point,
    pub hi: Point,
    dim: usize,
}

impl ScanRegion {
    pub fn new(dim: usize, lo: Point, hi: Point) -> Result<Self> {
        if (0..dim).any(|k| !(hi[k] > lo[k])) {
            return Err(Error::Support(format!("empty region {lo:?}..{hi:?}")));
        }
        Ok(ScanRegion { lo, hi, dim })
    }

    /// The grid box minus a one-node margin.
    pub fn interior(grid: &Grid) -> Result<Self> {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for k in 0..grid.dim() {
            lo[k] = grid.lo()[k] + grid.spacing()[k];
            hi[k] = grid.hi()[k] - grid.spacing()[k];
        }
        Self::new(grid.dim(), lo, hi)
    }

    /// Bounding box of a shrunk domain, minus a one-node margin.
    pub fn from_domain(grid: &Grid, domain: &ShrunkDomain) -> Result<Self> {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for i in domain.indices() {
            let x = grid.coord(i);
            for k in 0..grid.dim() {
                lo[k] = lo[k].min(x[k]);
                hi[k] = hi[k].max(x[k]);
            }
        }
        for k in 0..2 {
            if k >= grid.dim() {
                lo[k] = 0.0;
                hi[k] = 0.0;
                continue;
            }
            lo[k] += grid.spacing()[k];
            hi[k] -= grid.spacing()[k];
        }
        Self::new(grid.dim(), lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    /// Largest radius of a ball that fits.
    pub fn max_radius(&self) -> f64 {
        (0..self.dim)
            .map(|k| 0.5 * (self.hi[k] - self.lo[k]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_ball(&self, c: &Point, rho: f64) -> bool {
        // Small slack so that the largest centred bump is admitted.
        let slack = 1e-12 * (1.0 + rho);
        (0..self.dim).all(|k| c[k] - rho >= self.lo[k] - slack && c[k] + rho <= self.hi[k] + slack)
    }
}

/// The flux `|Du|^(p-2) Du` at every interior node, zero where
/// `|Du| <= grad_tol` and on the boundary.
#[derive(Debug, Clone)]
pub struct FluxField {
    grid: Grid,
    flux: Vec<Grad>,
}

impl FluxField {
    pub fn new(u: &ScalarField, p: f64, grad_tol: f64) -> Self {
        let grid = u.grid().clone();
        let flux = grid
            .nodes()
            .map(|i| match calculus::gradient(u, i) {
                Ok(g) => {
                    let n = norm(&g);
                    if n <= grad_tol {
                        [0.0; 2]
                    } else {
                        let s = n.powf(p - 2.0);
                        [s * g[0], s * g[1]]
                    }
                }
                Err(_) => [0.0; 2],
            })
            .collect();
        FluxField { grid, flux }
    }

    /// `sum [flux·Dψ - f ψ] h^d` over the nodes of the bump's support.
    pub fn residual(&self, psi: &TestFunction, f: Option<&ScalarField>) -> Result<f64> {
        let g = &self.grid;
        let region = ScanRegion::interior(g)?;
        if !region.contains_ball(&psi.center, psi.rho) {
            return Err(Error::Support(format!(
                "ball of radius {} at {:?} leaves the interior of the grid",
                psi.rho,
                &psi.center[..g.dim()]
            )));
        }
        let mut range = [(0usize, 0usize); 2];
        for k in 0..g.dim() {
            let h = g.spacing()[k];
            let a = ((psi.center[k] - psi.rho - g.lo()[k]) / h).floor().max(0.0) as usize;
            let b = ((psi.center[k] + psi.rho - g.lo()[k]) / h).ceil() as usize;
            range[k] = (a, b.min(g.shape()[k] - 1));
        }
        let mut sum = 0.0;
        for i1 in range[1].0..=range[1].1 {
            for i0 in range[0].0..=range[0].1 {
                let idx = g.index([i0, i1]);
                let x = g.coord(idx);
                let dpsi = psi.gradient(&x);
                let fl = self.flux[idx];
                let mut term = fl[0] * dpsi[0] + fl[1] * dpsi[1];
                if let Some(f) = f {
                    term -= f.get(idx) * psi.value(&x);
                }
                sum += term;
            }
        }
        Ok(sum * g.cell_volume())
    }
}

/// `R = sum [|Du|^(p-2) Du·Dψ - f ψ] h^d`; `R >= 0` for every admissible
/// `ψ` is the weak supersolution inequality.
pub fn weak_residual(
    u: &ScalarField,
    psi: &TestFunction,
    p: f64,
    f: Option<&ScalarField>,
    grad_tol: f64,
) -> Result<f64> {
    FluxField::new(u, p, grad_tol).residual(psi, f)
}

/// Generalized golden-ratio increments for a `d`-dimensional Kronecker
/// sequence.
fn kronecker_alphas(d: usize) -> Vec<f64> {
    // Root of x^(d+1) = x + 1.
    let mut phi: f64 = 2.0;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    (1..=d).map(|k| (1.0 / phi.powi(k as i32)).fract()).collect()
}

/// A reproducible family of bumps inside `region`.
///
/// Trial 0 is the largest bump at the centre with unit amplitude. The rest
/// come from a Kronecker sequence over `(centre, radius, amplitude)` whose
/// offset is drawn from ChaCha8 seeded with `seed`.
pub fn trial_family(region: &ScanRegion, h: f64, count: usize, seed: u64) -> Result<Vec<TestFunction>> {
    let rho_max = region.max_radius();
    let rho_min = (4.0 * h).max(0.25 * rho_max).min(rho_max);
    if rho_max < 2.0 * h {
        return Err(Error::Support(format!(
            "region half-width {rho_max} is too small for bumps at h = {h}"
        )));
    }
    let dim = region.dim();
    let d = dim + 2;
    let alphas = kronecker_alphas(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(TestFunction::new(region.center(), rho_max, 1.0)?);
    }
    for i in 1..count {
        let t: Vec<f64> = (0..d)
            .map(|k| (shift[k] + i as f64 * alphas[k]).fract())
            .collect();
        let rho = rho_min + t[dim] * (rho_max - rho_min);
        let amplitude = 0.5 + 1.5 * t[dim + 1];
        let mut c = [0.0; 2];
        for k in 0..dim {
            let lo = region.lo[k] + rho;
            let hi = region.hi[k] - rho;
            c[k] = lo + t[k] * (hi - lo).max(0.0);
        }
        out.push(TestFunction::new(c, rho, amplitude)?);
    }
    Ok(out)
}

/// Weak residuals per unit amplitude over a family of bumps. Passes iff
/// every residual is at least `-tol`.
pub fn supersolution_scan(
    u: &ScalarField,
    p: f64,
    f: Option<&ScalarField>,
    trials: &[TestFunction],
    grad_tol: f64,
    tol: f64,
) -> Result<VerificationReport> {
    if trials.is_empty() {
        return Err(Error::InvalidParameter("trial count must be >= 1".into()));
    }
    let flux = FluxField::new(u, p, grad_tol);
    let residuals: Vec<f64> = trials
        .par_iter()
        .map(|psi| Ok(flux.residual(psi, f)? / psi.amplitude))
        .collect::<Result<_>>()?;
    let grid = u.grid();
    let mut rep = VerificationReport::new("supersolution_scan")
        .param("p", p)
        .param("h", grid.h_max())
        .param("trials", trials.len() as f64)
        .param("tol", tol);
    for (i, (psi, r)) in trials.iter().zip(&residuals).enumerate() {
        rep.observe_residual(*r);
        rep.check(i, &psi.center[..grid.dim()], -r, tol);
    }
    Ok(rep)
}

/// Per-node minimum of `f` over the grid nodes within distance `r`.
///
/// The ball is decomposed into rows; each row is a centred segment whose
/// half-width depends only on the row offset, so one sliding minimum per
/// distinct half-width covers every row.
pub fn f_window_inf(f: &ScalarField, r: f64) -> Result<ScalarField> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter(format!("window radius must be >= 0, got {r}")));
    }
    let g = f.grid();
    let h = g.spacing();
    let n0 = g.shape()[0];
    let n1 = if g.dim() == 2 { g.shape()[1] } else { 1 };
    let reach = r * (1.0 + 1e-12);
    let inside = |d0: usize, d1: usize| {
        let a = d0 as f64 * h[0];
        let b = if g.dim() == 2 { d1 as f64 * h[1] } else { 0.0 };
        (a * a + b * b).sqrt() <= reach
    };
    // Half-width of the row at offset d1, for every d1 inside the ball.
    let mut widths = Vec::new();
    for d1 in 0..n1 {
        if !inside(0, d1) {
            break;
        }
        let mut w = 0;
        while w + 1 < n0 && inside(w + 1, d1) {
            w += 1;
        }
        widths.push(w);
    }
    let mut distinct = widths.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let slid: Vec<Vec<f64>> = distinct
        .par_iter()
        .map(|&w| {
            let mut out = vec![0.0; g.len()];
            for (row, o) in f.values().chunks(n0).zip(out.chunks_mut(n0)) {
                sliding_min(row, w, o);
            }
            out
        })
        .collect();
    let by_width = |w: usize| &slid[distinct.binary_search(&w).expect("width present")];
    let values = g
        .nodes()
        .map(|x| {
            let [x0, x1] = g.multi_index(x);
            let mut best = f64::INFINITY;
            for (d1, &w) in widths.iter().enumerate() {
                let m = by_width(w);
                if x1 + d1 < n1 {
                    best = best.min(m[x0 + n0 * (x1 + d1)]);
                }
                if d1 > 0 && d1 <= x1 {
                    best = best.min(m[x0 + n0 * (x1 - d1)]);
                }
            }
            best
        })
        .collect();
    ScalarField::new(g.clone(), values)
}

/// `out[i] = min row[i-w..=i+w]` (clamped), via a monotone deque.
fn sliding_min(row: &[f64], w: usize, out: &mut [f64]) {
    let n = row.len();
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + w).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&b| row[b] >= row[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&f| f + w < i) {
            dq.pop_front();
        }
        *o = row[*dq.front().expect("window is nonempty")];
    }
}

/// At valid-mask nodes where `|Du_ε| <= grad_tol`: `f <= tol` and
/// `u_ε >= u - tol`.
pub fn critical_sign_check(
    u: &ScalarField,
    env: &EnvelopeResult,
    f: &ScalarField,
    p: f64,
    tols: &Tolerances,
) -> Result<VerificationReport> {
    env.params().check_admissible(p)?;
    let grid = u.grid();
    let h = grid.h_max();
    let (gtol, tol) = (tols.grad_tol(h), tols.first(h));
    let mut rep = VerificationReport::new("critical_sign")
        .param("p", p)
        .param("q", env.params().q())
        .param("eps", env.params().eps())
        .param("h", h)
        .param("tol", tol);
    let mut critical = 0usize;
    for idx in env.valid().indices() {
        let Ok(g) = calculus::gradient(env.u_eps(), idx) else {
            continue;
        };
        if norm(&g) > gtol {
            continue;
        }
        critical += 1;
        let x = grid.coord(idx);
        rep.check(idx, &x[..grid.dim()], f.get(idx), tol);
        rep.check(idx, &x[..grid.dim()], u.get(idx) - env.u_eps().get(idx), tol);
    }
    rep.params.insert("critical_nodes".into(), critical as f64);
    Ok(rep)
}

/// Samples `count` pairs `(Du, D²u)` with `|Du| <= lip` and
/// `D²u <= ((q-1)/ε) |Du|^((q-2)/(q-1)) I`, together with `δ` log-uniform in
/// `lip² [1e-6, 1]`, and checks `regularized_divergence >= -fatou_lower_bound`.
///
/// A quarter of the draws put `|Du|` on `lip` and each Hessian eigenvalue
/// on its cap independently, so the extremal corner is sampled. The same
/// draws are also held against [`calculus::regularized_lower_bound`]; that
/// count is stored as `sharp_violations`.
pub fn fatou_sampling_check(
    dim: usize,
    p: f64,
    q: f64,
    eps: f64,
    lip: f64,
    count: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if !(1..=2).contains(&dim) {
        return Err(Error::InvalidParameter(format!("dimension must be 1 or 2, got {dim}")));
    }
    let c = calculus::fatou_lower_bound(dim, p, q, eps, lip)?;
    let sharp = calculus::regularized_lower_bound(dim, p, q, eps, lip)?;
    let mut rep = VerificationReport::new("fatou_sampling")
        .param("dim", dim as f64)
        .param("p", p)
        .param("q", q)
        .param("eps", eps)
        .param("lip", lip)
        .param("bound", c)
        .param("sharp_bound", sharp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sharp_violations = 0usize;
    let mut lowest = f64::INFINITY;
    let atom = |rng: &mut ChaCha8Rng| rng.gen::<f64>() < 0.25;
    for k in 0..count {
        let r = if atom(&mut rng) { lip } else { lip * rng.gen::<f64>() };
        let th = rng.gen::<f64>() * std::f64::consts::TAU;
        let grad = if dim == 1 {
            [if th < std::f64::consts::PI { r } else { -r }, 0.0]
        } else {
            [r * th.cos(), r * th.sin()]
        };
        let cap = (q - 1.0) / eps * r.powf((q - 2.0) / (q - 1.0));
        let mut eig = [0.0; 2];
        for e in eig.iter_mut().take(dim) {
            *e = if atom(&mut rng) { cap } else { cap - 3.0 * cap * rng.gen::<f64>() };
        }
        let phi = rng.gen::<f64>() * std::f64::consts::PI;
        let (cs, sn) = (phi.cos(), phi.sin());
        let hess = if dim == 1 {
            [[eig[0], 0.0], [0.0, 0.0]]
        } else {
            [
                [eig[0] * cs * cs + eig[1] * sn * sn, (eig[0] - eig[1]) * cs * sn],
                [(eig[0] - eig[1]) * cs * sn, eig[0] * sn * sn + eig[1] * cs * cs],
            ]
        };
        let delta = lip * lip * 10f64.powf(-6.0 * rng.gen::<f64>());
        let v = calculus::regularized_divergence(&grad, &hess, p, delta);
        lowest = lowest.min(v);
        if -v > sharp {
            sharp_violations += 1;
        }
        rep.check(k, &grad[..dim], -v, c);
    }
    rep.observe_residual(lowest);
    rep.params.insert("sharp_violations".into(), sharp_violations as f64);
    Ok(rep)
}

/// Pointwise identity residuals at `count` uniform random points of each
/// entry's box, for each exponent triple. Points closer than `clearance` to
/// an irregular point, or with `|Du| < min_grad`, are redrawn.
pub fn identity_sweep(
    entries: &[&GalleryEntry],
    triples: &[calculus::ExponentTriple],
    count: usize,
    seed: u64,
    tol: f64,
) -> Result<VerificationReport> {
    const CLEARANCE: f64 = 1e-2;
    const MIN_GRAD: f64 = 1e-3;
    let mut rep = VerificationReport::new("identity")
        .param("points", count as f64)
        .param("tol", tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for e in entries {
        let mut pts = Vec::with_capacity(count);
        let mut draws = 0usize;
        while pts.len() < count {
            draws += 1;
            if draws > 100 * count + 1000 {
                return Err(Error::InvalidParameter(format!(
                    "{}: too few non-critical points",
                    e.name
                )));
            }
            let mut x = [0.0; 2];
            for k in 0..e.dim {
                x[k] = rng.gen_range(e.lo[k]..e.hi[k]);
            }
            if e.irregular_distance(&x) < CLEARANCE || norm(&e.gradient(&x)) < MIN_GRAD {
                continue;
            }
            pts.push(x);
        }
        for t in triples {
            for (i, x) in pts.iter().enumerate() {
                let r = calculus::pointwise_identity_residual(e, x, t)?;
                worst = worst.max(r.residual);
                rep.check(i, &x[..e.dim], r.residual, tol);
            }
        }
    }
    rep.params.insert("max_residual".into(), worst);
    Ok(rep)
}

/// Supremum over `|y - x| <= r` of `-Δ_p ψ` for the touching function
/// `ψ(y) = -|y - x|^q / (q ε^(q-1))`, against `r`.
///
/// The supremum is sampled on shells of radius `r k / 8`, `k = 1..=8`, in
/// 16 directions. The fitted log-log slope is compared with
/// `(q-1)(p-1) - 1` within `slope_tol`.
pub fn touching_test_decay(
    dim: usize,
    p: f64,
    q: f64,
    eps: f64,
    radii: &[f64],
    slope_tol: f64,
) -> Result<VerificationReport> {
    strictly_monotone(radii)?;
    let expected = (q - 1.0) * (p - 1.0) - 1.0;
    let scale = eps.powf(q - 1.0);
    let mut rep = VerificationReport::new("touching_test_decay")
        .param("dim", dim as f64)
        .param("p", p)
        .param("q", q)
        .param("eps", eps)
        .param("expected_exponent", expected);
    let dirs = if dim == 1 { 2 } else { 16 };
    for &r in radii {
        let mut sup = f64::NEG_INFINITY;
        for k in 1..=8 {
            let rho = r * k as f64 / 8.0;
            for j in 0..dirs {
                let th = 2.0 * std::f64::consts::PI * j as f64 / dirs as f64;
                let z = if dim == 1 {
                    [rho * th.cos().signum(), 0.0]
                } else {
                    [rho * th.cos(), rho * th.sin()]
                };
                let n = norm(&z);
                let grad = [-n.powf(q - 2.0) * z[0] / scale, -n.powf(q - 2.0) * z[1] / scale];
                let mut hess = [[0.0; 2]; 2];
                for a in 0..dim {
                    for b in 0..dim {
                        let id = if a == b { 1.0 } else { 0.0 };
                        hess[a][b] = -(n.powf(q - 2.0) * id + (q - 2.0) * n.powf(q - 4.0) * z[a] * z[b]) / scale;
                    }
                }
                if let Some(v) = p_laplacian_expanded(&grad, &hess, p, 0.0) {
                    sup = sup.max(v);
                }
            }
        }
        rep.push_row(r, sup);
    }
    let pts: Vec<(f64, f64)> = rep
        .table
        .iter()
        .map(|row| (row.param.ln(), row.residual.abs().ln()))
        .collect();
    let observed = log_slope(&pts).unwrap_or(f64::NAN);
    rep.order = Some(observed);
    rep.params.insert("observed_exponent".into(), observed);
    let decays = observed > 1e-6;
    rep.params.insert("decays".into(), if decays { 1.0 } else { 0.0 });
    rep.pass = (observed - expected).abs() <= slope_tol;
    Ok(rep)
}

fn strictly_monotone(s: &[f64]) -> Result<()> {
    let up = s.windows(2).all(|w| w[1] > w[0]);
    let down = s.windows(2).all(|w| w[1] < w[0]);
    if s.is_empty() || !(up || down) || s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schedule(s.to_vec()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Eps,
    Delta,
    H,
}

impl SweepKind {
    pub fn name(&self) -> &'static str {
        match self {
            SweepKind::Eps => "eps",
            SweepKind::Delta => "delta",
            SweepKind::H => "h",
        }
    }
}

/// Runs `point` at every schedule value (in parallel, results kept in
/// schedule order) and fits the log-log order of the residuals.
pub fn sweep<F>(kind: SweepKind, schedule: &[f64], point: F) -> Result<VerificationReport>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    strictly_monotone(schedule)?;
    let values: Vec<f64> = schedule.par_iter().map(|&s| point(s)).collect::<Result<_>>()?;
    let mut rep = VerificationReport::new(format!("sweep_{}", kind.name()));
    for (&s, &v) in schedule.iter().zip(&values) {
        rep.push_row(s, v);
        if !v.is_finite() {
            rep.fail(format!("non-finite residual at {s}"));
        }
    }
    rep.fit_order();
    Ok(rep)
}

/// `max (u - u_ε)` on the valid mask against `(1 - 1/q) L^(q/(q-1)) ε + tol`
/// along an ε schedule.
pub fn eps_gap_sweep(
    u: &ScalarField,
    lip: f64,
    q: f64,
    schedule: &[f64],
    tols: &Tolerances,
) -> Result<VerificationReport> {
    let h = u.grid().h_max();
    let envs: Vec<EnvelopeResult> = schedule
        .iter()
        .map(|&e| Ok(inf_convolve_fast(u, EnvelopeParams::new(e, q)?)))
        .collect::<Result<_>>()?;
    let mut rep = sweep(SweepKind::Eps, schedule, |e| {
        let i = schedule.iter().position(|&s| s == e).expect("schedule value");
        Ok(envs[i].max_gap(u))
    })?;
    rep.name = "lipschitz_gap".into();
    rep.params.insert("q".into(), q);
    rep.params.insert("lip".into(), lip);
    rep.params.insert("h".into(), h);
    let rows = rep.table.clone();
    for (i, row) in rows.iter().enumerate() {
        let bound = (1.0 - 1.0 / q) * lip.powf(q / (q - 1.0)) * row.param + tols.first(h);
        rep.check(i, &[row.param], row.residual, bound);
    }
    Ok(rep)
}

/// `|sum (|Du|^2 + δ)^((p-2)/2) Du·Dψ h^d - sum |Du|^(p-2) Du·Dψ h^d|`
/// along a δ schedule; the δ = 0 sum zeroes critical nodes.
pub fn delta_sweep(
    u: &ScalarField,
    psi: &TestFunction,
    p: f64,
    schedule: &[f64],
    grad_tol: f64,
) -> Result<VerificationReport> {
    let base = weak_residual(u, psi, p, None, grad_tol)?;
    let grid = u.grid();
    let grads: Vec<Option<Grad>> = grid.nodes().map(|i| calculus::gradient(u, i).ok()).collect();
    let mut rep = sweep(SweepKind::Delta, schedule, |delta| {
        let mut s = 0.0;
        for i in grid.nodes() {
            let Some(g) = grads[i] else { continue };
            let x = grid.coord(i);
            let d = psi.gradient(&x);
            if d == [0.0, 0.0] {
                continue;
            }
            let w = (g[0] * g[0] + g[1] * g[1] + delta).powf((p - 2.0) / 2.0);
            s += w * (g[0] * d[0] + g[1] * d[1]);
        }
        Ok((s * grid.cell_volume() - base).abs())
    })?;
    rep.params.insert("p".into(), p);
    rep.params.insert("h".into(), grid.h_max());
    Ok(rep)
}

/// `|weak_residual|` of a gallery entry sampled at each spacing in
/// `schedule`, with a fixed bump.
pub fn h_sweep(
    entry: &GalleryEntry,
    psi: &TestFunction,
    p: f64,
    schedule: &[f64],
    tols: &Tolerances,
) -> Result<VerificationReport> {
    let mut rep = sweep(SweepKind::H, schedule, |h| {
        let grid = entry.reference_grid(h)?;
        let u = field::sample(entry, &grid)?;
        Ok(weak_residual(&u, psi, p, None, tols.grad_tol(grid.h_max()))?.abs())
    })?;
    rep.params.insert("p".into(), p);
    Ok(rep)
}

/// `u_{ε1} <= u_{ε2} <= u` at every node for every `ε1 > ε2` in the
/// schedule, with no tolerance.
pub fn monotonicity_check(u: &ScalarField, q: f64, schedule: &[f64]) -> Result<VerificationReport> {
    strictly_monotone(schedule)?;
    let mut eps = schedule.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let envs: Vec<ScalarField> = eps
        .par_iter()
        .map(|&e| Ok(inf_convolve_fast(u, EnvelopeParams::new(e, q)?).u_eps().clone()))
        .collect::<Result<_>>()?;
    let grid = u.grid();
    let mut rep = VerificationReport::new("monotone_in_eps").param("q", q);
    let mut chain: Vec<&ScalarField> = envs.iter().collect();
    chain.push(u);
    for w in chain.windows(2) {
        for i in grid.nodes() {
            let x = grid.coord(i);
            rep.check(i, &x[..grid.dim()], w[0].get(i), w[1].get(i));
        }
    }
    Ok(rep)
}

fn second_difference(u: &ScalarField, idx: usize, d: [i64; 2]) -> Option<f64> {
    let g = u.grid();
    let a = g.offset(idx, d)?;
    let b = g.offset(idx, [-d[0], -d[1]])?;
    Some(u.get(a) + u.get(b) - 2.0 * u.get(idx))
}

fn axis_steps(dim: usize) -> &'static [[i64; 2]] {
    if dim == 1 {
        &[[1, 0]]
    } else {
        &[[1, 0], [0, 1]]
    }
}

fn step_len2(g: &Grid, d: [i64; 2]) -> f64 {
    let h = g.spacing();
    let mut s = 0.0;
    for k in 0..g.dim() {
        let t = d[k] as f64 * h[k];
        s += t * t;
    }
    s
}

/// Axis second differences of `u_ε` on the valid mask against `2C|h|^2 + tol`.
pub fn semiconcavity_check(env: &EnvelopeResult, tols: &Tolerances) -> VerificationReport {
    let u = env.u_eps();
    let g = u.grid();
    let h = g.h_max();
    let c = env.semiconcavity();
    let tol = tols.second(h);
    let mut rep = VerificationReport::new("semiconcavity")
        .param("eps", env.params().eps())
        .param("q", env.params().q())
        .param("h", h)
        .param("C", c)
        .param("tol", tol);
    for idx in env.valid().indices() {
        let x = g.coord(idx);
        for &d in axis_steps(g.dim()) {
            if let Some(sd) = second_difference(u, idx, d) {
                rep.check(idx, &x[..g.dim()], sd, 2.0 * c * step_len2(g, d) + tol);
            }
        }
    }
    rep
}

/// At valid-mask nodes with a reliable gradient, axis second differences
/// against `((q-1)/ε) |Du_ε|^((q-2)/(q-1)) |h|^2 + tol`.
pub fn refined_hessian_check(
    env: &EnvelopeResult,
    grads: &[Option<NodeGradient>],
    tols: &Tolerances,
) -> VerificationReport {
    let u = env.u_eps();
    let g = u.grid();
    let h = g.h_max();
    let (eps, q) = (env.params().eps(), env.params().q());
    let tol = tols.second(h);
    let mut rep = VerificationReport::new("refined_hessian_bound")
        .param("eps", eps)
        .param("q", q)
        .param("h", h)
        .param("tol", tol);
    for idx in env.valid().indices() {
        let Some(ng) = grads[idx] else { continue };
        if !ng.reliable {
            continue;
        }
        let k = (q - 1.0) / eps * norm(&ng.grad).powf((q - 2.0) / (q - 1.0));
        let x = g.coord(idx);
        for &d in axis_steps(g.dim()) {
            if let Some(sd) = second_difference(u, idx, d) {
                rep.check(idx, &x[..g.dim()], sd, k * step_len2(g, d) + tol);
            }
        }
    }
    rep
}

/// At valid-mask nodes with `|Du_ε| <= grad_tol`, every axis and diagonal
/// second difference is at most `((q-1)/ε) grad_tol^((q-2)/(q-1)) |h|^2 + tol`.
/// The first term is what a node that is only critical up to `grad_tol` may
/// still carry; it is `o(h^2)` for `q > 2`.
pub fn critical_concavity_check(
    env: &EnvelopeResult,
    grads: &[Option<NodeGradient>],
    tols: &Tolerances,
) -> VerificationReport {
    let u = env.u_eps();
    let g = u.grid();
    let h = g.h_max();
    let (gtol, tol) = (tols.grad_tol(h), tols.second(h));
    let (eps, q) = (env.params().eps(), env.params().q());
    let k = (q - 1.0) / eps * gtol.powf((q - 2.0) / (q - 1.0));
    let mut rep = VerificationReport::new("critical_concavity")
        .param("eps", env.params().eps())
        .param("q", env.params().q())
        .param("h", h)
        .param("tol", tol);
    let steps: &[[i64; 2]] = if g.dim() == 1 {
        &[[1, 0]]
    } else {
        &[[1, 0], [0, 1], [1, 1], [1, -1]]
    };
    let mut critical = 0usize;
    for idx in env.valid().indices() {
        let Some(ng) = grads[idx] else { continue };
        if norm(&ng.grad) > gtol {
            continue;
        }
        critical += 1;
        let x = g.coord(idx);
        for &d in steps {
            if let Some(sd) = second_difference(u, idx, d) {
                rep.check(idx, &x[..g.dim()], sd, k * step_len2(g, d) + tol);
            }
        }
    }
    rep.params.insert("critical_nodes".into(), critical as f64);
    rep
}

/// Argmin-distance modulus along an h schedule. Passes when the modulus
/// stays bounded: the value at the finest grid does not exceed the value at
/// the coarsest plus that coarsest spacing.
pub fn usc_refinement(entry: &GalleryEntry, params: EnvelopeParams, schedule: &[f64]) -> Result<VerificationReport> {
    let mut rep = sweep(SweepKind::H, schedule, |h| {
        let grid = entry.reference_grid(h)?;
        let u = field::sample(entry, &grid)?;
        let env = inf_convolve_fast(&u, params);
        Ok(crate::envelope::upper_semicontinuity_check(&env).params["modulus"])
    })?;
    rep.name = "usc_modulus".into();
    rep.params.insert("eps".into(), params.eps());
    rep.params.insert("q".into(), params.q());
    let coarse = schedule.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let fine = schedule.iter().cloned().fold(f64::INFINITY, f64::min);
    let at = |h: f64| rep.table.iter().find(|r| r.param == h).map(|r| r.residual).unwrap_or(0.0);
    let (mc, mf) = (at(coarse), at(fine));
    if mf > mc + coarse {
        rep.fail(format!("modulus grew from {mc} to {mf} under refinement"));
    }
    Ok(rep)
}

/// Every lemma check on one field: monotonicity, the Lipschitz gap (when
/// `lip` is known), semiconcavity, refined Hessian bound, critical-set
/// concavity and the argmin-distance bound at each ε.
pub fn lemma_suite(
    u: &ScalarField,
    lip: Option<f64>,
    q: f64,
    schedule: &[f64],
    tols: &Tolerances,
) -> Result<Vec<VerificationReport>> {
    let h = u.grid().h_max();
    let mut out = vec![monotonicity_check(u, q, schedule)?];
    if let Some(l) = lip {
        out.push(eps_gap_sweep(u, l, q, schedule, tols)?);
    }
    for &eps in schedule {
        let env = inf_convolve_fast(u, EnvelopeParams::new(eps, q)?);
        let grads = gradient_field(env.u_eps(), tols.grad_tol(h));
        let mut batch = vec![
            semiconcavity_check(&env, tols),
            refined_hessian_check(&env, &grads, tols),
            critical_concavity_check(&env, &grads, tols),
            crate::envelope::argmin_distance_bound_check(&env, &grads, tols.first(h)),
        ];
        if env.valid().is_empty() {
            for r in &mut batch {
                r.note(format!("valid mask is empty at eps = {eps}; nothing was checked"));
            }
        }
        out.extend(batch);
    }
    Ok(out)
}

/// One run of the truncate, inf-convolve, windowed-datum, weak-scan chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub p: f64,
    pub q: f64,
    pub eps: f64,
    /// Truncation level as a fraction of the oscillation above the minimum.
    pub truncate_fraction: f64,
    pub trials: usize,
    pub seed: u64,
}

impl PipelineConfig {
    /// `q = 2` for `p >= 2`, otherwise `q = 4`.
    pub fn default_q(p: f64) -> f64 {
        if p >= 2.0 {
            2.0
        } else {
            4.0
        }
    }
}

/// Largest ε whose shrink radius is at most `r` for oscillation `osc`.
pub fn eps_for_radius(q: f64, r: f64, osc: f64) -> f64 {
    if osc <= 0.0 {
        return f64::INFINITY;
    }
    (r.powf(q) / (q * osc)).powf(1.0 / (q - 1.0))
}

/// Runs the chain on `entry` at spacing `h`. The ε actually used is capped
/// so that the valid region keeps at least half of the shortest box side.
pub fn pipeline(
    entry: &GalleryEntry,
    h: f64,
    cfg: &PipelineConfig,
    tols: &Tolerances,
) -> Result<VerificationReport> {
    let params0 = EnvelopeParams::new(cfg.eps, cfg.q)?;
    params0.check_admissible(cfg.p)?;
    let role = crate::gallery::label_oracle(entry, cfg.p)?;
    let grid = entry.reference_grid(h)?;
    let u = field::sample(entry, &grid)?;
    let (sup, inf) = field::oscillation(&u);
    let k = inf + cfg.truncate_fraction * (sup - inf);
    let ut = field::truncate(&u, k);
    let (sup_t, inf_t) = field::oscillation(&ut);
    let side = (0..grid.dim())
        .map(|a| grid.hi()[a] - grid.lo()[a])
        .fold(f64::INFINITY, f64::min);
    let eps = cfg.eps.min(eps_for_radius(cfg.q, side / 4.0, sup_t - inf_t));
    let env = inf_convolve_fast(&ut, EnvelopeParams::new(eps, cfg.q)?);
    let datum = role.datum();
    let f = ScalarField::from_fn(&grid, |x| datum.eval(x))?;
    let f_eps = f_window_inf(&f, env.r_eps())?;
    let region = ScanRegion::from_domain(&grid, env.valid())?;
    let trials = trial_family(&region, grid.h_max(), cfg.trials, cfg.seed)?;
    let gh = grid.h_max();
    let mut rep = supersolution_scan(env.u_eps(), cfg.p, Some(&f_eps), &trials, tols.grad_tol(gh), tols.weak_tol(gh))?;
    rep.name = format!("pipeline:{}", entry.name);
    rep.params.insert("q".into(), cfg.q);
    rep.params.insert("eps".into(), eps);
    rep.params.insert("r_eps".into(), env.r_eps());
    rep.params.insert("truncate_level".into(), k);
    if !matches!(role, Role::Harmonic | Role::Supersolution(_)) {
        rep.note("entry is not labeled as a supersolution at this p");
    }
    Ok(rep)
}
