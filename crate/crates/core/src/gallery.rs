//! Closed-form test functions with analytic derivatives and ground-truth
//! labels.
//!
//! Every entry lives on a reference box. Singular entries (radial profiles)
//! use boxes that keep the origin at a positive distance; the kinks listed
//! per entry are points where the value is defined but derivatives are not,
//! and analytic-derivative checks stay away from them.

use std::fmt;

use crate::calculus::{Grad, Hess};
use crate::error::{Error, Result};
use crate::field::{Grid, Point};

/// The range of exponents a label is claimed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PRange {
    /// Every `1 < p < ∞`.
    All,
    Exactly(f64),
}

impl PRange {
    pub fn contains(&self, p: f64) -> bool {
        match *self {
            PRange::All => p > 1.0 && p.is_finite(),
            PRange::Exactly(v) => p == v,
        }
    }
}

impl fmt::Display for PRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PRange::All => write!(f, "(1,inf)"),
            PRange::Exactly(v) => write!(f, "{{{v}}}"),
        }
    }
}

/// Right-hand side `f` of `-Δ_p u >= f`.
#[derive(Clone, Copy)]
pub struct Datum {
    pub name: &'static str,
    pub f: fn(&Point) -> f64,
}

impl Datum {
    pub const ZERO: Datum = Datum {
        name: "0",
        f: |_| 0.0,
    };

    pub fn eval(&self, x: &Point) -> f64 {
        (self.f)(x)
    }
}

impl fmt::Debug for Datum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Datum({})", self.name)
    }
}

impl PartialEq for Datum {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Role {
    /// Weak solution with zero datum; both `u` and `-u` are supersolutions.
    Harmonic,
    Supersolution(Datum),
    /// Fails the supersolution inequality with `f = 0`; `strict_at` names a
    /// point where `-Δ_p u < 0` (possibly as a measure).
    Subsolution { strict_at: Point },
}

impl Role {
    /// The datum a supersolution check should be run against.
    pub fn datum(&self) -> Datum {
        match self {
            Role::Supersolution(d) => *d,
            _ => Datum::ZERO,
        }
    }

    pub fn is_supersolution(&self) -> bool {
        matches!(self, Role::Harmonic | Role::Supersolution(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Role::Harmonic => "harmonic",
            Role::Supersolution(_) => "supersolution",
            Role::Subsolution { .. } => "subsolution",
        }
    }
}

/// How a label was established.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Immediate from the form of the function.
    Immediate,
    /// Follows from a short symbolic calculation, given in `recipe`.
    Calculation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub p_range: PRange,
    pub role: Role,
    pub basis: Basis,
    pub recipe: &'static str,
}

pub struct GalleryEntry {
    pub name: &'static str,
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
    value: fn(&Point) -> f64,
    gradient: fn(&Point) -> Grad,
    hessian: fn(&Point) -> Hess,
    /// Points where the function is undefined; never sampled.
    pub singular_points: &'static [Point],
    /// Points where the value is defined but derivatives are not.
    pub kinks: &'static [Point],
    pub label: Option<Label>,
    /// Lipschitz constant on the reference box, if finite.
    pub lipschitz: Option<f64>,
    pub note: &'static str,
}

impl fmt::Debug for GalleryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GalleryEntry")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl GalleryEntry {
    pub fn value(&self, x: &Point) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Point) -> Grad {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &Point) -> Hess {
        (self.hessian)(x)
    }

    pub fn reference_lo(&self) -> &[f64] {
        &self.lo[..self.dim]
    }

    pub fn reference_hi(&self) -> &[f64] {
        &self.hi[..self.dim]
    }

    /// The reference box meshed with spacing `h`.
    pub fn reference_grid(&self, h: f64) -> Result<Grid> {
        Grid::with_spacing(self.reference_lo(), self.reference_hi(), h)
    }

    /// Distance from `x` to the nearest kink or singular point.
    pub fn irregular_distance(&self, x: &Point) -> f64 {
        self.kinks
            .iter()
            .chain(self.singular_points)
            .map(|k| crate::field::dist(x, k))
            .fold(f64::INFINITY, f64::min)
    }

    /// One line of `gallery list`: `name dim p-range role f`.
    pub fn list_line(&self) -> String {
        match &self.label {
            Some(l) => format!(
                "{} {} {} {} {}",
                self.name,
                self.dim,
                l.p_range,
                l.role.name(),
                l.role.datum().name
            ),
            None => format!("{} {} - unlabeled -", self.name, self.dim),
        }
    }
}

fn radial(x: &Point, v1: f64, v2: f64) -> (Grad, Hess) {
    let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let e = [x[0] / r, x[1] / r];
    let g = [v1 * e[0], v1 * e[1]];
    let t = v1 / r;
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            h[i][j] = v2 * e[i] * e[j] + t * (id - e[i] * e[j]);
        }
    }
    (g, h)
}

fn norm(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1]).sqrt()
}

const ZERO_G: Grad = [0.0; 2];
const ZERO_H: Hess = [[0.0; 2]; 2];
const ORIGIN: [Point; 1] = [[0.0, 0.0]];
const HUBER_EPS: f64 = 0.5;
const ANISO: [[f64; 2]; 2] = [[1.0, 0.3], [0.3, 0.5]];

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const fn harmonic(basis: Basis, recipe: &'static str) -> Option<Label> {
    Some(Label {
        p_range: PRange::All,
        role: Role::Harmonic,
        basis,
        recipe,
    })
}

const fn super_zero(recipe: &'static str) -> Option<Label> {
    Some(Label {
        p_range: PRange::All,
        role: Role::Supersolution(Datum::ZERO),
        basis: Basis::Calculation,
        recipe,
    })
}

const fn sub_at_origin(recipe: &'static str) -> Option<Label> {
    Some(Label {
        p_range: PRange::All,
        role: Role::Subsolution {
            strict_at: [0.0, 0.0],
        },
        basis: Basis::Calculation,
        recipe,
    })
}

const TWO_D: Point = [-1.0, -1.0];
const TWO_D_HI: Point = [1.0, 1.0];
const ONE_D: Point = [-1.0, 0.0];
const ONE_D_HI: Point = [1.0, 0.0];
const ANNULUS_LO: Point = [0.5, 0.5];
const ANNULUS_HI: Point = [1.5, 1.5];

static ENTRIES: &[GalleryEntry] = &[
    GalleryEntry {
        name: "const-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |_| 3.0,
        gradient: |_| ZERO_G,
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &[],
        label: harmonic(Basis::Immediate, "Du = 0"),
        lipschitz: Some(0.0),
        note: "u = 3",
    },
    GalleryEntry {
        name: "const-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |_| 3.0,
        gradient: |_| ZERO_G,
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &[],
        label: harmonic(Basis::Immediate, "Du = 0"),
        lipschitz: Some(0.0),
        note: "u = 3",
    },
    GalleryEntry {
        name: "affine-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| 2.0 * x[0] + 1.0,
        gradient: |_| [2.0, 0.0],
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &[],
        label: harmonic(Basis::Immediate, "Du constant, D2u = 0"),
        lipschitz: Some(2.0),
        note: "u = 2x + 1",
    },
    GalleryEntry {
        name: "affine-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| 0.7 * x[0] - 0.4 * x[1] + 0.2,
        gradient: |_| [0.7, -0.4],
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &[],
        label: harmonic(Basis::Immediate, "Du constant, D2u = 0"),
        lipschitz: Some(0.806_225_774_829_855),
        note: "u = 0.7x - 0.4y + 0.2",
    },
    GalleryEntry {
        name: "quad-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| 0.5 * x[0] * x[0],
        gradient: |x| [x[0], 0.0],
        hessian: |_| [[1.0, 0.0], [0.0, 0.0]],
        singular_points: &[],
        kinks: &[],
        label: sub_at_origin("-Δ_p u = -(p-1)|x|^(p-2) < 0 off the origin"),
        lipschitz: Some(1.0),
        note: "u = x^2/2",
    },
    GalleryEntry {
        name: "quad-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| 0.5 * (x[0] * x[0] + x[1] * x[1]),
        gradient: |x| [x[0], x[1]],
        hessian: |_| [[1.0, 0.0], [0.0, 1.0]],
        singular_points: &[],
        kinks: &[],
        label: sub_at_origin("-Δ_p u = -(n+p-2)|x|^(p-2) < 0 off the origin"),
        lipschitz: Some(std::f64::consts::SQRT_2),
        note: "u = |x|^2/2",
    },
    GalleryEntry {
        name: "aniso-quad-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| {
            0.5 * (ANISO[0][0] * x[0] * x[0]
                + 2.0 * ANISO[0][1] * x[0] * x[1]
                + ANISO[1][1] * x[1] * x[1])
        },
        gradient: |x| {
            [
                ANISO[0][0] * x[0] + ANISO[0][1] * x[1],
                ANISO[1][0] * x[0] + ANISO[1][1] * x[1],
            ]
        },
        hessian: |_| ANISO,
        singular_points: &[],
        kinks: &[],
        label: sub_at_origin("A positive definite: Δu > 0 and D2u ξ·ξ > 0"),
        lipschitz: Some(1.526_433_752_247_9),
        note: "u = x^T A x / 2, A = [[1, 0.3], [0.3, 0.5]]",
    },
    GalleryEntry {
        name: "cap-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| -0.5 * x[0] * x[0],
        gradient: |x| [-x[0], 0.0],
        hessian: |_| [[-1.0, 0.0], [0.0, 0.0]],
        singular_points: &[],
        kinks: &[],
        label: super_zero("-Δ_p u = (p-1)|x|^(p-2) >= 0"),
        lipschitz: Some(1.0),
        note: "u = -x^2/2",
    },
    GalleryEntry {
        name: "cap-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| -0.5 * (x[0] * x[0] + x[1] * x[1]),
        gradient: |x| [-x[0], -x[1]],
        hessian: |_| [[-1.0, 0.0], [0.0, -1.0]],
        singular_points: &[],
        kinks: &[],
        label: super_zero("-Δ_p u = (n+p-2)|x|^(p-2) >= 0"),
        lipschitz: Some(std::f64::consts::SQRT_2),
        note: "u = -|x|^2/2",
    },
    GalleryEntry {
        name: "neg-cone-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| -x[0].abs(),
        gradient: |x| [-sign(x[0]), 0.0],
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &ORIGIN,
        label: super_zero("|u'|^(p-2)u' = -sign(x), so -Δ_p u = 2δ_0"),
        lipschitz: Some(1.0),
        note: "u = -|x|",
    },
    GalleryEntry {
        name: "neg-cone-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| -norm(x),
        gradient: |x| {
            let r = norm(x);
            if r == 0.0 {
                ZERO_G
            } else {
                [-x[0] / r, -x[1] / r]
            }
        },
        hessian: |x| {
            if norm(x) == 0.0 {
                ZERO_H
            } else {
                radial(x, -1.0, 0.0).1
            }
        },
        singular_points: &[],
        kinks: &ORIGIN,
        label: super_zero("radial formula: -Δ_p u = (n-1)/|x| >= 0 off the origin"),
        lipschitz: Some(1.0),
        note: "u = -|x|",
    },
    GalleryEntry {
        name: "pos-cone-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| x[0].abs(),
        gradient: |x| [sign(x[0]), 0.0],
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &ORIGIN,
        label: sub_at_origin("sign flip of neg-cone-1d: -Δ_p u = -2δ_0"),
        lipschitz: Some(1.0),
        note: "u = |x|",
    },
    GalleryEntry {
        name: "pos-cone-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: norm,
        gradient: |x| {
            let r = norm(x);
            if r == 0.0 {
                ZERO_G
            } else {
                [x[0] / r, x[1] / r]
            }
        },
        hessian: |x| {
            if norm(x) == 0.0 {
                ZERO_H
            } else {
                radial(x, 1.0, 0.0).1
            }
        },
        singular_points: &[],
        kinks: &ORIGIN,
        label: sub_at_origin("sign flip of neg-cone-2d: -Δ_p u = -(n-1)/|x|"),
        lipschitz: Some(1.0),
        note: "u = |x|",
    },
    GalleryEntry {
        name: "radial-p1.5",
        dim: 2,
        lo: ANNULUS_LO,
        hi: ANNULUS_HI,
        value: |x| 1.0 / norm(x),
        gradient: |x| {
            let r = norm(x);
            radial(x, -1.0 / (r * r), 2.0 / (r * r * r)).0
        },
        hessian: |x| {
            let r = norm(x);
            radial(x, -1.0 / (r * r), 2.0 / (r * r * r)).1
        },
        singular_points: &ORIGIN,
        kinks: &[],
        label: Some(Label {
            p_range: PRange::Exactly(1.5),
            role: Role::Harmonic,
            basis: Basis::Calculation,
            recipe: "|x|^β with β = (p-n)/(p-1) = -1: ρ^(n-1)|v'|^(p-2)v' is constant",
        }),
        lipschitz: Some(2.0),
        note: "u = |x|^-1 on [0.5,1.5]^2",
    },
    GalleryEntry {
        name: "radial-p3",
        dim: 2,
        lo: ANNULUS_LO,
        hi: ANNULUS_HI,
        value: |x| norm(x).sqrt(),
        gradient: |x| {
            let r = norm(x);
            radial(x, 0.5 / r.sqrt(), -0.25 / (r * r.sqrt())).0
        },
        hessian: |x| {
            let r = norm(x);
            radial(x, 0.5 / r.sqrt(), -0.25 / (r * r.sqrt())).1
        },
        singular_points: &ORIGIN,
        kinks: &[],
        label: Some(Label {
            p_range: PRange::Exactly(3.0),
            role: Role::Harmonic,
            basis: Basis::Calculation,
            recipe: "|x|^β with β = (p-n)/(p-1) = 1/2: ρ^(n-1)|v'|^(p-2)v' is constant",
        }),
        lipschitz: Some(0.594_603_557_501_360_5),
        note: "u = |x|^(1/2) on [0.5,1.5]^2",
    },
    GalleryEntry {
        name: "log-p2",
        dim: 2,
        lo: ANNULUS_LO,
        hi: ANNULUS_HI,
        value: |x| -norm(x).ln(),
        gradient: |x| {
            let r = norm(x);
            radial(x, -1.0 / r, 1.0 / (r * r)).0
        },
        hessian: |x| {
            let r = norm(x);
            radial(x, -1.0 / r, 1.0 / (r * r)).1
        },
        singular_points: &ORIGIN,
        kinks: &[],
        label: Some(Label {
            p_range: PRange::Exactly(2.0),
            role: Role::Harmonic,
            basis: Basis::Calculation,
            recipe: "v = -ln ρ: ρ v' = -1 is constant",
        }),
        lipschitz: Some(std::f64::consts::SQRT_2),
        note: "u = -ln|x| on [0.5,1.5]^2",
    },
    GalleryEntry {
        name: "huber-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| {
            let a = x[0].abs();
            if a <= HUBER_EPS {
                a * a / (2.0 * HUBER_EPS)
            } else {
                a - HUBER_EPS / 2.0
            }
        },
        gradient: |x| {
            if x[0].abs() <= HUBER_EPS {
                [x[0] / HUBER_EPS, 0.0]
            } else {
                [sign(x[0]), 0.0]
            }
        },
        hessian: |x| {
            if x[0].abs() < HUBER_EPS {
                [[1.0 / HUBER_EPS, 0.0], [0.0, 0.0]]
            } else {
                ZERO_H
            }
        },
        singular_points: &[],
        kinks: &[[-HUBER_EPS, 0.0], [HUBER_EPS, 0.0]],
        label: sub_at_origin("convex with u'' = 1/ε on |x| < ε"),
        lipschitz: Some(1.0),
        note: "Moreau envelope of |x| with q = 2, ε = 0.5",
    },
    GalleryEntry {
        name: "step-1d",
        dim: 1,
        lo: ONE_D,
        hi: ONE_D_HI,
        value: |x| if x[0] > 0.0 { 1.0 } else { 0.0 },
        gradient: |_| ZERO_G,
        hessian: |_| ZERO_H,
        singular_points: &[],
        kinks: &ORIGIN,
        label: None,
        lipschitz: None,
        note: "lower semicontinuous step: value 0 at the jump node x = 0",
    },
    GalleryEntry {
        name: "smooth-2d",
        dim: 2,
        lo: TWO_D,
        hi: TWO_D_HI,
        value: |x| (0.5 * x[0]).exp() * x[1].sin(),
        gradient: |x| {
            let e = (0.5 * x[0]).exp();
            [0.5 * e * x[1].sin(), e * x[1].cos()]
        },
        hessian: |x| {
            let e = (0.5 * x[0]).exp();
            let (s, c) = x[1].sin_cos();
            [[0.25 * e * s, 0.5 * e * c], [0.5 * e * c, -e * s]]
        },
        singular_points: &[],
        kinks: &[],
        label: None,
        lipschitz: Some(1.648_721_270_700_128_2),
        note: "u = exp(x/2) sin(y)",
    },
];

pub fn entries() -> &'static [GalleryEntry] {
    ENTRIES
}

pub fn get(name: &str) -> Result<&'static GalleryEntry> {
    ENTRIES
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownEntry(name.to_string()))
}

/// The ground-truth role of `entry` at exponent `p`.
pub fn label_oracle(entry: &GalleryEntry, p: f64) -> Result<Role> {
    match &entry.label {
        Some(l) if l.p_range.contains(p) => Ok(l.role),
        _ => Err(Error::OutOfRange {
            entry: entry.name.to_string(),
            p,
        }),
    }
}
