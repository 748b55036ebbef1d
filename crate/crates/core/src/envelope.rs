//! q-power infimal convolution on a grid.
//!
//! `u_ε(x) = min_y u(y) + |x-y|^q / (q ε^(q-1))` over all grid nodes `y`,
//! with every minimizing node recorded. Two engines compute it: a
//! brute-force oracle and a fast engine (separable parabola envelopes for
//! `q = 2`, a shrink-radius window otherwise). Both evaluate the cost with
//! the same arithmetic, so their minima agree bit for bit:
//!
//! * `q = 2`: `fl(fl(u(y) + c0) + c1)` with `c_k = (d_k h_k)^2 / (2ε)` and
//!   `d_k` the integer offset along axis `k`;
//! * `q != 2`: `u(y) + |d h|^q / (q ε^(q-1))` from one shared table.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::NodeGradient;
use crate::error::{Error, Result};
use crate::field::{fmt_f64, oscillation, shrink, Grid, ScalarField, ShrunkDomain};
use crate::report::VerificationReport;

/// Relative width of the band of near-minimal values kept as ties.
pub const TIE_TOL: f64 = 1e-12;

fn tie_tol(min: f64) -> f64 {
    TIE_TOL * (1.0 + min.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeParams {
    eps: f64,
    q: f64,
}

impl EnvelopeParams {
    pub fn new(eps: f64, q: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
        }
        if !(q >= 2.0 && q.is_finite()) {
            return Err(Error::InvalidParameter(format!("q must be >= 2, got {q}")));
        }
        Ok(EnvelopeParams { eps, q })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Rejects `q <= p/(p-1)` for `1 < p < 2`; every `q >= 2` is fine for
    /// `p >= 2`.
    pub fn check_admissible(&self, p: f64) -> Result<()> {
        if !(p > 1.0) {
            return Err(Error::InvalidParameter(format!("p must be > 1, got {p}")));
        }
        if p < 2.0 {
            let dual = p / (p - 1.0);
            if !(self.q > dual) {
                return Err(Error::Inadmissible { p, q: self.q, dual });
            }
        }
        Ok(())
    }

    fn is_quadratic(&self) -> bool {
        self.q == 2.0
    }
}

/// Radius `r` with `r^q / (q ε^(q-1)) = M - m`: every minimizer lies within
/// `r` of its node.
pub fn shrink_radius(q: f64, eps: f64, sup: f64, inf: f64) -> f64 {
    (q * eps.powf(q - 1.0) * (sup - inf).max(0.0)).powf(1.0 / q)
}

/// `C = (q-1) / (2 ε^(q-1)) r^(q-2)`; `u_ε - C|x|^2` is concave on the
/// shrunk domain.
pub fn semiconcavity_constant(q: f64, eps: f64, r: f64) -> f64 {
    (q - 1.0) / (2.0 * eps.powf(q - 1.0)) * r.powf(q - 2.0)
}

/// Minimum of the cost at one node and all nodes attaining it (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct ArgminSet {
    pub min: f64,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EnvelopeResult {
    params: EnvelopeParams,
    u_eps: ScalarField,
    argmin: Vec<ArgminSet>,
    r_eps: f64,
    c: f64,
    valid: ShrunkDomain,
}

impl EnvelopeResult {
    fn assemble(u: &ScalarField, params: EnvelopeParams, argmin: Vec<ArgminSet>) -> Self {
        let (sup, inf) = oscillation(u);
        let r_eps = shrink_radius(params.q, params.eps, sup, inf);
        let values = argmin.iter().map(|a| a.min).collect();
        let u_eps = ScalarField::new(u.grid().clone(), values)
            .expect("minima of finite values are finite");
        let u_eps = match u.meta() {
            Some(m) => u_eps.with_meta(format!("{m}_eps")),
            None => u_eps,
        };
        EnvelopeResult {
            params,
            u_eps,
            argmin,
            r_eps,
            c: semiconcavity_constant(params.q, params.eps, r_eps),
            valid: shrink(u.grid(), r_eps).expect("radius is nonnegative"),
        }
    }

    pub fn params(&self) -> EnvelopeParams {
        self.params
    }

    pub fn u_eps(&self) -> &ScalarField {
        &self.u_eps
    }

    pub fn argmin(&self, idx: usize) -> &ArgminSet {
        &self.argmin[idx]
    }

    pub fn argmins(&self) -> &[ArgminSet] {
        &self.argmin
    }

    pub fn r_eps(&self) -> f64 {
        self.r_eps
    }

    pub fn semiconcavity(&self) -> f64 {
        self.c
    }

    pub fn valid(&self) -> &ShrunkDomain {
        &self.valid
    }

    /// `max_{y in Y(x)} |x - y|`.
    pub fn max_argmin_distance(&self, idx: usize) -> f64 {
        let grid = self.u_eps.grid();
        self.argmin[idx]
            .nodes
            .iter()
            .map(|&y| node_distance(grid, idx, y))
            .fold(0.0, f64::max)
    }

    /// `max (u - u_ε)` over the valid mask; 0 when the mask is empty.
    pub fn max_gap(&self, u: &ScalarField) -> f64 {
        self.valid
            .indices()
            .map(|i| u.get(i) - self.u_eps.get(i))
            .fold(0.0, f64::max)
    }

    pub fn summary(&self, u: &ScalarField) -> EnvelopeSummary {
        EnvelopeSummary {
            eps: self.params.eps,
            q: self.params.q,
            r_eps: self.r_eps,
            c: self.c,
            max_gap_u_minus_ueps: self.max_gap(u),
        }
    }

    /// Sidecar CSV: `index,r_eps,C,n_argmins,argmin_indices...`.
    pub fn write_sidecar_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,r_eps,C,n_argmins,argmin_indices")?;
        let r = fmt_f64(self.r_eps);
        let c = fmt_f64(self.c);
        for (i, a) in self.argmin.iter().enumerate() {
            write!(w, "{i},{r},{c},{}", a.nodes.len())?;
            for y in &a.nodes {
                write!(w, ",{y}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeSummary {
    pub eps: f64,
    pub q: f64,
    pub r_eps: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub max_gap_u_minus_ueps: f64,
}

fn node_distance(grid: &Grid, a: usize, b: usize) -> f64 {
    let (ma, mb) = (grid.multi_index(a), grid.multi_index(b));
    let h = grid.spacing();
    let mut s = 0.0;
    for k in 0..grid.dim() {
        let d = (ma[k] as f64 - mb[k] as f64) * h[k];
        s += d * d;
    }
    s.sqrt()
}

/// Cost tables indexed by absolute integer offsets.
enum Cost {
    /// Per-axis `(d h_k)^2 / (2ε)`.
    Quadratic([Vec<f64>; 2]),
    /// `|d h|^q / (q ε^(q-1))` on a `(w0 + 1) x (w1 + 1)` table.
    Power { table: Vec<f64>, stride: usize },
}

impl Cost {
    fn quadratic_axis(n: usize, h: f64, eps: f64) -> Vec<f64> {
        (0..n)
            .map(|d| {
                let t = d as f64 * h;
                t * t / (2.0 * eps)
            })
            .collect()
    }

    fn build(grid: &Grid, params: &EnvelopeParams, reach: [usize; 2]) -> Cost {
        let h = grid.spacing();
        let hk = |k: usize| h.get(k).copied().unwrap_or(0.0);
        if params.is_quadratic() {
            return Cost::Quadratic([
                Self::quadratic_axis(reach[0] + 1, hk(0), params.eps),
                Self::quadratic_axis(reach[1] + 1, hk(1), params.eps),
            ]);
        }
        let denom = params.q * params.eps.powf(params.q - 1.0);
        let stride = reach[0] + 1;
        let mut table = Vec::with_capacity(stride * (reach[1] + 1));
        for d1 in 0..=reach[1] {
            for d0 in 0..=reach[0] {
                let a = d0 as f64 * hk(0);
                let b = d1 as f64 * hk(1);
                table.push((a * a + b * b).sqrt().powf(params.q) / denom);
            }
        }
        Cost::Power { table, stride }
    }

    #[inline]
    fn value(&self, uy: f64, d0: usize, d1: usize) -> f64 {
        match self {
            Cost::Quadratic([c0, c1]) => (uy + c0[d0]) + c1[d1],
            Cost::Power { table, stride } => uy + table[d0 + stride * d1],
        }
    }
}

fn full_reach(grid: &Grid) -> [usize; 2] {
    let s = grid.shape();
    [s[0] - 1, s.get(1).map_or(0, |n| n - 1)]
}

/// Brute-force envelope: every node against every node.
pub fn inf_convolve_oracle(u: &ScalarField, params: EnvelopeParams) -> EnvelopeResult {
    let grid = u.grid();
    let cost = Cost::build(grid, &params, full_reach(grid));
    let argmin = grid
        .nodes()
        .into_par_iter()
        .map(|x| {
            let mx = grid.multi_index(x);
            let eval = |y: usize| {
                let my = grid.multi_index(y);
                cost.value(u.get(y), mx[0].abs_diff(my[0]), mx[1].abs_diff(my[1]))
            };
            let min = grid.nodes().map(eval).fold(f64::INFINITY, f64::min);
            let cut = min + tie_tol(min);
            let nodes = grid.nodes().filter(|&y| eval(y) <= cut).collect();
            ArgminSet { min, nodes }
        })
        .collect();
    EnvelopeResult::assemble(u, params, argmin)
}

/// Fast envelope with the same minima and argmin sets as the oracle.
pub fn inf_convolve_fast(u: &ScalarField, params: EnvelopeParams) -> EnvelopeResult {
    let argmin = if params.is_quadratic() {
        separable_argmins(u, &params)
    } else {
        window_argmins(u, &params)
    };
    EnvelopeResult::assemble(u, params, argmin)
}

/// Envelope values only. For `q = 2` this is the linear-time separable
/// transform with no tie bookkeeping.
pub fn envelope_values(u: &ScalarField, params: EnvelopeParams) -> ScalarField {
    let values = if params.is_quadratic() {
        separable_values(u, &params)
    } else {
        window_argmins(u, &params).into_iter().map(|a| a.min).collect()
    };
    ScalarField::new(u.grid().clone(), values).expect("finite minima")
}

/// Lower envelope of the parabolas `f[k] + a (x - k)^2`, returning for
/// every `x` the index of the parabola on top of the envelope.
fn parabola_envelope(f: &[f64], a: f64, v: &mut Vec<usize>, z: &mut Vec<f64>, out: &mut [usize]) {
    let n = f.len();
    v.clear();
    z.clear();
    let key = |k: usize| f[k] / a + (k * k) as f64;
    v.push(0);
    z.push(f64::NEG_INFINITY);
    for k in 1..n {
        // z[0] = -inf, so this stops at the first parabola at the latest.
        let mut s = (key(k) - key(v[v.len() - 1])) / (2.0 * (k - v[v.len() - 1]) as f64);
        while s <= z[z.len() - 1] {
            v.pop();
            z.pop();
            let j = v[v.len() - 1];
            s = (key(k) - key(j)) / (2.0 * (k - j) as f64);
        }
        v.push(k);
        z.push(s);
    }
    let mut j = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while j + 1 < v.len() && z[j + 1] <= x as f64 {
            j += 1;
        }
        *o = v[j];
    }
}

/// Exact minimum and near-ties along one line.
///
/// `f` holds the line values, `cost[d]` the offset costs and
/// `band(min)` the tie width. The parabola envelope supplies an attained
/// value that bounds the offsets worth scanning.
fn line_argmins(
    f: &[f64],
    cost: &[f64],
    a: f64,
    band: &dyn Fn(f64) -> f64,
) -> Vec<(f64, Vec<u32>)> {
    let n = f.len();
    let line_min = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut cand = vec![0usize; n];
    parabola_envelope(f, a, &mut Vec::new(), &mut Vec::new(), &mut cand);
    let mut buf: Vec<(f64, u32)> = Vec::new();
    (0..n)
        .map(|x| {
            let c = cand[x];
            let attained = f[c] + cost[x.abs_diff(c)];
            let width = band(attained.abs().max(line_min.abs()));
            let reach = attained - line_min + width;
            let reach = reach + 1e-9 * (1.0 + attained.abs() + line_min.abs());
            buf.clear();
            for d in 0..n {
                if cost[d] > reach {
                    break;
                }
                if d <= x {
                    buf.push((f[x - d] + cost[d], (x - d) as u32));
                }
                if d > 0 && x + d < n {
                    buf.push((f[x + d] + cost[d], (x + d) as u32));
                }
            }
            let min = buf.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
            let cut = min + band(min);
            let mut ties: Vec<u32> = buf.iter().filter(|b| b.0 <= cut).map(|b| b.1).collect();
            ties.sort_unstable();
            (min, ties)
        })
        .collect()
}

fn separable_argmins(u: &ScalarField, params: &EnvelopeParams) -> Vec<ArgminSet> {
    let grid = u.grid();
    let shape = grid.shape();
    let h = grid.spacing();
    let n0 = shape[0];
    let c0 = Cost::quadratic_axis(n0, h[0], params.eps);
    let a0 = h[0] * h[0] / (2.0 * params.eps);

    if grid.dim() == 1 {
        return line_argmins(u.values(), &c0, a0, &tie_tol)
            .into_iter()
            .map(|(min, ties)| ArgminSet {
                min,
                nodes: ties.into_iter().map(|y| y as usize).collect(),
            })
            .collect();
    }

    let n1 = shape[1];
    let c1 = Cost::quadratic_axis(n1, h[1], params.eps);
    let a1 = h[1] * h[1] / (2.0 * params.eps);
    let (sup, inf) = oscillation(u);
    // Any final tie lies within this band of its row minimum.
    let row_band = 4.0 * TIE_TOL * (1.0 + sup.abs().max(inf.abs()));
    let band = move |_: f64| row_band;

    // Pass along axis 0, one row per fixed y1.
    let rows: Vec<Vec<(f64, Vec<u32>)>> = (0..n1)
        .into_par_iter()
        .map(|y1| line_argmins(&u.values()[y1 * n0..(y1 + 1) * n0], &c0, a0, &band))
        .collect();

    // Pass along axis 1 over the row minima, one column per fixed x0.
    let cols: Vec<Vec<(f64, Vec<u32>)>> = (0..n0)
        .into_par_iter()
        .map(|x0| {
            let g: Vec<f64> = (0..n1).map(|y1| rows[y1][x0].0).collect();
            line_argmins(&g, &c1, a1, &tie_tol)
        })
        .collect();

    grid.nodes()
        .into_par_iter()
        .map(|x| {
            let [x0, x1] = grid.multi_index(x);
            let (min, ref ys1) = cols[x0][x1];
            let cut = min + tie_tol(min);
            let mut nodes = Vec::new();
            for &y1 in ys1 {
                let y1 = y1 as usize;
                for &y0 in &rows[y1][x0].1 {
                    let y0 = y0 as usize;
                    let y = grid.index([y0, y1]);
                    let v = (u.get(y) + c0[x0.abs_diff(y0)]) + c1[x1.abs_diff(y1)];
                    if v <= cut {
                        nodes.push(y);
                    }
                }
            }
            nodes.sort_unstable();
            ArgminSet { min, nodes }
        })
        .collect()
}

fn line_values(f: &[f64], cost: &[f64], a: f64, out: &mut [f64], scratch: &mut Scratch) {
    let n = f.len();
    scratch.cand.resize(n, 0);
    parabola_envelope(f, a, &mut scratch.v, &mut scratch.z, &mut scratch.cand);
    for (x, o) in out.iter_mut().enumerate() {
        let c = scratch.cand[x];
        let mut best = f[c] + cost[x.abs_diff(c)];
        // Guard against the envelope picking a neighbour by rounding.
        for k in [c.wrapping_sub(1), c + 1] {
            if k < n {
                best = best.min(f[k] + cost[x.abs_diff(k)]);
            }
        }
        *o = best;
    }
}

#[derive(Default)]
struct Scratch {
    v: Vec<usize>,
    z: Vec<f64>,
    cand: Vec<usize>,
}

fn separable_values(u: &ScalarField, params: &EnvelopeParams) -> Vec<f64> {
    let grid = u.grid();
    let shape = grid.shape();
    let h = grid.spacing();
    let n0 = shape[0];
    let c0 = Cost::quadratic_axis(n0, h[0], params.eps);
    let a0 = h[0] * h[0] / (2.0 * params.eps);
    let mut rows = vec![0.0; grid.len()];
    rows.par_chunks_mut(n0)
        .zip(u.values().par_chunks(n0))
        .for_each_init(Scratch::default, |s, (out, f)| line_values(f, &c0, a0, out, s));
    if grid.dim() == 1 {
        return rows;
    }
    let n1 = shape[1];
    let c1 = Cost::quadratic_axis(n1, h[1], params.eps);
    let a1 = h[1] * h[1] / (2.0 * params.eps);
    let cols: Vec<Vec<f64>> = (0..n0)
        .into_par_iter()
        .map_init(Scratch::default, |s, x0| {
            let g: Vec<f64> = (0..n1).map(|y1| rows[x0 + n0 * y1]).collect();
            let mut out = vec![0.0; n1];
            line_values(&g, &c1, a1, &mut out, s);
            out
        })
        .collect();
    grid.nodes()
        .map(|x| {
            let [x0, x1] = grid.multi_index(x);
            cols[x0][x1]
        })
        .collect()
}

/// Per-node search over the box of half-width `ceil(r/h) + 1`, where `r`
/// is the shrink radius widened by the tie band.
fn window_argmins(u: &ScalarField, params: &EnvelopeParams) -> Vec<ArgminSet> {
    let grid = u.grid();
    let (sup, inf) = oscillation(u);
    let band = tie_tol(sup.abs().max(inf.abs()));
    let r = shrink_radius(params.q, params.eps, sup + band, inf);
    let r = r.min(lipschitz_reach(u, params, band)) * (1.0 + 1e-9);
    let full = full_reach(grid);
    let h = grid.spacing();
    let mut reach = [0usize; 2];
    for k in 0..grid.dim() {
        let w = (r / h[k]).ceil() as usize + 1;
        reach[k] = w.min(full[k]);
    }
    let cost = Cost::build(grid, params, reach);
    grid.nodes()
        .into_par_iter()
        .map_init(Vec::new, |buf: &mut Vec<(f64, usize)>, x| {
            let [x0, x1] = grid.multi_index(x);
            buf.clear();
            let (lo1, hi1) = (x1.saturating_sub(reach[1]), (x1 + reach[1]).min(full[1]));
            let (lo0, hi0) = (x0.saturating_sub(reach[0]), (x0 + reach[0]).min(full[0]));
            for y1 in lo1..=hi1 {
                for y0 in lo0..=hi0 {
                    let y = grid.index([y0, y1]);
                    buf.push((cost.value(u.get(y), x0.abs_diff(y0), x1.abs_diff(y1)), y));
                }
            }
            let min = buf.iter().map(|b| b.0).fold(f64::INFINITY, f64::min);
            let cut = min + tie_tol(min);
            // Row-major window order is ascending node order.
            let nodes = buf.iter().filter(|b| b.0 <= cut).map(|b| b.1).collect();
            ArgminSet { min, nodes }
        })
        .collect()
}

/// Largest `t` with `t^q / (q ε^(q-1)) <= L t + band`, where `L` bounds the
/// slope of `u` between any two nodes. A node farther than `t` cannot come
/// within `band` of the cost of staying put.
fn lipschitz_reach(u: &ScalarField, params: &EnvelopeParams, band: f64) -> f64 {
    let grid = u.grid();
    let mut slope2 = 0.0;
    for k in 0..grid.dim() {
        let mut d = [0i64; 2];
        d[k] = 1;
        let hk = grid.spacing()[k];
        let lk = grid
            .nodes()
            .filter_map(|i| grid.offset(i, d).map(|j| (u.get(j) - u.get(i)).abs() / hk))
            .fold(0.0, f64::max);
        slope2 += lk * lk;
    }
    // Axis-wise paths give |u(x) - u(y)| <= sqrt(L0^2 + L1^2) |x - y|.
    let lip = slope2.sqrt() * (1.0 + 1e-12);
    let denom = params.q * params.eps.powf(params.q - 1.0);
    let excess = |t: f64| t.powf(params.q) / denom - lip * t - band;
    let mut hi = 1.0;
    while excess(hi) <= 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Checks `(|x - y| / ε)^(q-1) <= |Du_ε(x)| + tol` for every recorded
/// minimizer at valid-mask nodes with a usable gradient. Nodes on concave
/// kinks, where the gradient does not exist, are skipped and counted.
pub fn argmin_distance_bound_check(
    res: &EnvelopeResult,
    grads: &[Option<NodeGradient>],
    tol: f64,
) -> VerificationReport {
    let EnvelopeParams { eps, q } = res.params;
    let grid = res.u_eps.grid();
    let mut rep = VerificationReport::new("argmin_distance_bound")
        .param("eps", eps)
        .param("q", q)
        .param("h", grid.h_max())
        .param("tol", tol);
    // A grid minimiser sits up to one cell diagonal away from a continuum one.
    let slack = grid.h_max() * (grid.dim() as f64).sqrt();
    let mut skipped = 0usize;
    for idx in res.valid.indices() {
        let Some(g) = grads[idx] else { continue };
        if !g.reliable {
            skipped += 1;
            continue;
        }
        let gn = crate::calculus::norm(&g.grad);
        let x = grid.coord(idx);
        for &y in &res.argmin[idx].nodes {
            let d = (node_distance(grid, idx, y) - slack).max(0.0);
            let lhs = (d / eps).powf(q - 1.0);
            rep.check(idx, &x[..grid.dim()], lhs, gn + tol);
        }
    }
    rep.params.insert("skipped_kinks".into(), skipped as f64);
    rep
}

/// Largest upward jump of `x -> max_{y in Y(x)} |x - y|` between
/// neighbouring nodes of the valid mask (axis and diagonal neighbours).
///
/// A single grid cannot decide upper semicontinuity; the modulus is the
/// quantity whose behaviour under refinement is judged.
pub fn upper_semicontinuity_check(res: &EnvelopeResult) -> VerificationReport {
    let grid = res.u_eps.grid();
    let dmax: Vec<f64> = grid.nodes().map(|i| res.max_argmin_distance(i)).collect();
    let offsets: &[[i64; 2]] = if grid.dim() == 1 {
        &[[1, 0], [-1, 0]]
    } else {
        &[[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]]
    };
    let mut modulus: f64 = 0.0;
    let mut worst = None;
    for x in res.valid.indices() {
        for &d in offsets {
            if let Some(nb) = grid.offset(x, d).filter(|&n| res.valid.contains(n)) {
                let jump = dmax[nb] - dmax[x];
                if jump > modulus {
                    modulus = jump;
                    worst = Some(x);
                }
            }
        }
    }
    let mut rep = VerificationReport::new("upper_semicontinuity")
        .param("eps", res.params.eps)
        .param("q", res.params.q)
        .param("h", grid.h_max())
        .param("modulus", modulus);
    rep.checked = res.valid.count();
    if let Some(w) = worst {
        rep.note(format!("largest jump next to node {w}"));
    }
    rep
}
