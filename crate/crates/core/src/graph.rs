//! Scalar maximal monotone graphs `β = ∂j` and their convex calculus.
//!
//! Every catalog member has `D(β) = ℝ`, `0 ∈ β(0)` and a potential `j` with
//! `j(0) = 0`, `j ≥ 0`. Potentials, conjugates and minimal sections are closed
//! form. Proximal maps are closed form where the graph is piecewise linear and
//! otherwise come from a safeguarded Newton/bisection solve.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Iteration cap for scalar proximal solves.
pub const SCALAR_MAX_ITER: usize = 200;
/// Residual tolerance for scalar proximal solves, relative to `max(1, |r|)`.
pub const SCALAR_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MonotoneGraph {
    /// `β(r) = c r`, `c ≥ 0`.
    Linear { slope: f64 },
    /// `β(r) = |r|^{m-1} r`, `m > 0`.
    PowerLaw { exponent: f64 },
    /// `β = ∂|·|`, the sign graph with `β(0) = [-1, 1]`.
    SoftSign,
    /// `β(r) = sign(r) (e^{|r|} - 1)`.
    Exponential,
    /// `β(r) = r + b` for `r > 0`, `r + a` for `r < 0`, `[a, b]` at the origin.
    JumpAtZero { lower: f64, upper: f64 },
}

impl MonotoneGraph {
    pub fn linear(slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(Error::InvalidParameter(format!("linear slope must be >= 0, got {slope}")));
        }
        Ok(Self::Linear { slope })
    }

    pub fn power_law(exponent: f64) -> Result<Self> {
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "power-law exponent must be > 0, got {exponent}"
            )));
        }
        Ok(Self::PowerLaw { exponent })
    }

    /// The jump must straddle the origin so that `0 ∈ β(0)`.
    pub fn jump_at_zero(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower <= 0.0 && 0.0 <= upper) {
            return Err(Error::InvalidParameter(format!(
                "jump endpoints must satisfy a <= 0 <= b, got ({lower}, {upper})"
            )));
        }
        Ok(Self::JumpAtZero { lower, upper })
    }

    /// The default catalog used by property sweeps.
    pub fn catalog() -> Vec<Self> {
        vec![
            Self::Linear { slope: 1.0 },
            Self::Linear { slope: 3.5 },
            Self::PowerLaw { exponent: 3.0 },
            Self::PowerLaw { exponent: 0.5 },
            Self::SoftSign,
            Self::Exponential,
            Self::JumpAtZero { lower: -1.0, upper: 2.0 },
        ]
    }

    /// Whether `β(r)` is a nontrivial interval.
    pub fn is_multivalued_at(&self, r: f64) -> bool {
        match *self {
            Self::SoftSign => r == 0.0,
            Self::JumpAtZero { lower, upper } => r == 0.0 && lower < upper,
            _ => false,
        }
    }

    /// The closed interval `β(r)`.
    pub fn section_bounds(&self, r: f64) -> (f64, f64) {
        match *self {
            Self::SoftSign if r == 0.0 => (-1.0, 1.0),
            Self::JumpAtZero { lower, upper } if r == 0.0 => (lower, upper),
            _ => {
                let v = self.minimal_section(r);
                (v, v)
            }
        }
    }

    /// The potential `j` with `j(0) = 0` and `∂j = β`.
    pub fn potential(&self, r: f64) -> f64 {
        match *self {
            Self::Linear { slope } => 0.5 * slope * r * r,
            Self::PowerLaw { exponent } => r.abs().powf(exponent + 1.0) / (exponent + 1.0),
            Self::SoftSign => r.abs(),
            Self::Exponential => {
                let a = r.abs();
                a.exp_m1() - a
            }
            Self::JumpAtZero { lower, upper } => {
                0.5 * r * r + if r > 0.0 { upper * r } else { lower * r }
            }
        }
    }

    /// The Fenchel conjugate `j*(s) = sup_r (rs - j(r))`; `+∞` where the supremum diverges.
    pub fn conjugate(&self, s: f64) -> f64 {
        match *self {
            Self::Linear { slope } => {
                if slope > 0.0 {
                    0.5 * s * s / slope
                } else if s == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::PowerLaw { exponent } => {
                let q = (exponent + 1.0) / exponent;
                s.abs().powf(q) / q
            }
            Self::SoftSign => {
                if s.abs() <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            Self::Exponential => {
                let a = s.abs();
                (1.0 + a) * a.ln_1p() - a
            }
            Self::JumpAtZero { lower, upper } => {
                let d = if s < lower {
                    lower - s
                } else if s > upper {
                    s - upper
                } else {
                    0.0
                };
                0.5 * d * d
            }
        }
    }

    /// Element of `β(r)` with least absolute value.
    pub fn minimal_section(&self, r: f64) -> f64 {
        match *self {
            Self::Linear { slope } => slope * r,
            Self::PowerLaw { exponent } => {
                if r == 0.0 {
                    0.0
                } else {
                    r.signum() * r.abs().powf(exponent)
                }
            }
            Self::SoftSign => {
                if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::Exponential => r.signum() * r.abs().exp_m1(),
            Self::JumpAtZero { lower, upper } => {
                if r > 0.0 {
                    r + upper
                } else if r < 0.0 {
                    r + lower
                } else {
                    0.0_f64.clamp(lower, upper)
                }
            }
        }
    }

    /// `j(r) + j*(s) - rs`, which vanishes exactly on the graph.
    pub fn fenchel_gap(&self, r: f64, s: f64) -> f64 {
        let conj = self.conjugate(s);
        if conj.is_infinite() {
            return f64::INFINITY;
        }
        self.potential(r) + conj - r * s
    }

    /// The proximal map `(I + λβ)^{-1}(r)` of `λj`.
    pub fn resolvent(&self, lambda: f64, r: f64) -> Result<f64> {
        Ok(self.prox(lambda, r)?.point)
    }

    /// The Yosida approximation `β_λ(r) = (r - (I + λβ)^{-1} r) / λ`.
    pub fn yosida(&self, lambda: f64, r: f64) -> Result<f64> {
        Ok(self.prox(lambda, r)?.yosida)
    }

    /// Moreau envelope `j_λ(r) = min_u { j(u) + |r - u|² / (2λ) }`.
    pub fn moreau_envelope(&self, lambda: f64, r: f64) -> Result<f64> {
        let p = self.prox(lambda, r)?;
        let d = r - p.point;
        Ok(self.potential(p.point) + 0.5 * d * d / lambda)
    }

    /// Resolvent, Yosida value and Yosida slope in one solve.
    ///
    /// The slope is the derivative of `β_λ` at `r` (one-sided at kinks) and
    /// always lies in `[0, 1/λ]`.
    pub fn prox(&self, lambda: f64, r: f64) -> Result<Prox> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
        }
        if !r.is_finite() {
            return Err(Error::InvalidParameter(format!("prox argument must be finite, got {r}")));
        }
        let out = match *self {
            Self::Linear { slope } => {
                let denom = 1.0 + lambda * slope;
                Prox { point: r / denom, yosida: slope * r / denom, slope: slope / denom }
            }
            Self::SoftSign => {
                if r.abs() < lambda {
                    Prox { point: 0.0, yosida: r / lambda, slope: 1.0 / lambda }
                } else {
                    let sign = r.signum();
                    Prox { point: r - sign * lambda, yosida: sign, slope: 0.0 }
                }
            }
            Self::JumpAtZero { lower, upper } => {
                let denom = 1.0 + lambda;
                if r > lambda * upper {
                    let u = (r - lambda * upper) / denom;
                    Prox { point: u, yosida: u + upper, slope: 1.0 / denom }
                } else if r < lambda * lower {
                    let u = (r - lambda * lower) / denom;
                    Prox { point: u, yosida: u + lower, slope: 1.0 / denom }
                } else if lower < upper {
                    Prox { point: 0.0, yosida: r / lambda, slope: 1.0 / lambda }
                } else {
                    Prox { point: 0.0, yosida: upper, slope: 1.0 / denom }
                }
            }
            Self::PowerLaw { exponent } => {
                let a = r.abs();
                let branch = |u: f64| power_branch(exponent, u);
                let guess = a.min((a / lambda).powf(1.0 / exponent));
                let u = odd_prox(lambda, a, a, guess, branch)?;
                smooth_prox(lambda, r, u, branch)
            }
            Self::Exponential => {
                let a = r.abs();
                let upper = a.min((a / lambda).ln_1p());
                let u = odd_prox(lambda, a, upper, upper, |u| (u.exp_m1(), u.exp()))?;
                smooth_prox(lambda, r, u, |u| (u.exp_m1(), u.exp()))
            }
        };
        Ok(out)
    }

    /// Empirical symmetry constant `sup j(r) / max(j(-r), ε)` over a log-spaced
    /// probe of `|r| ∈ [1, 10⁶]`. Probes where both potentials overflow are skipped.
    pub fn symmetry_constant(&self) -> f64 {
        let probes = 61;
        let mut worst: f64 = 0.0;
        for i in 0..probes {
            let r = 10f64.powf(6.0 * i as f64 / (probes - 1) as f64);
            for x in [r, -r] {
                let num = self.potential(x);
                let den = self.potential(-x);
                if num.is_infinite() && den.is_infinite() {
                    continue;
                }
                worst = worst.max(num / den.max(f64::EPSILON));
            }
        }
        worst
    }
}

/// Output of a proximal solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prox {
    /// `(I + λβ)^{-1} r`
    pub point: f64,
    /// `β_λ(r)`, an element of `β(point)`
    pub yosida: f64,
    /// `β_λ'(r) ∈ [0, 1/λ]`
    pub slope: f64,
}

// (β(u), β'(u)) for u >= 0.
fn power_branch(exponent: f64, u: f64) -> (f64, f64) {
    if u == 0.0 {
        let d = match exponent.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 1.0,
            _ => 0.0,
        };
        (0.0, d)
    } else {
        let p = u.powf(exponent - 1.0);
        (p * u, exponent * p)
    }
}

// Recovers the signed prox from the solve on |r|; `branch` returns (β(u), β'(u)) for u >= 0.
fn smooth_prox(lambda: f64, r: f64, magnitude: f64, branch: impl Fn(f64) -> (f64, f64)) -> Prox {
    let sign = if r < 0.0 { -1.0 } else { 1.0 };
    let (beta, dbeta) = branch(magnitude);
    let jac = 1.0 / (1.0 + lambda * dbeta);
    Prox {
        point: sign * magnitude,
        yosida: sign * beta,
        slope: ((1.0 - jac) / lambda).clamp(0.0, 1.0 / lambda),
    }
}

/// Solves `u + λφ(u) = a` for `u ∈ [0, hi]`, with `φ` odd, increasing and `φ(0) = 0`.
fn odd_prox(
    lambda: f64,
    a: f64,
    hi: f64,
    guess: f64,
    branch: impl Fn(f64) -> (f64, f64),
) -> Result<f64> {
    if a == 0.0 {
        return Ok(0.0);
    }
    let tol = SCALAR_TOL * a.max(1.0);
    let f = |u: f64| {
        let (v, d) = branch(u);
        (u + lambda * v - a, 1.0 + lambda * d)
    };
    let (mut lo, mut hi) = (0.0, hi);
    let mut u = guess.clamp(lo, hi);
    let mut residual = f64::INFINITY;
    for _ in 0..SCALAR_MAX_ITER {
        let (g, dg) = f(u);
        residual = g.abs();
        if residual <= tol {
            return Ok(u);
        }
        if g > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            return Ok(u);
        }
        let newton = u - g / dg;
        u = if dg.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NonConvergence { iterations: SCALAR_MAX_ITER, residual })
}

impl fmt::Display for MonotoneGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Linear { slope } => write!(f, "linear:{slope}"),
            Self::PowerLaw { exponent } => write!(f, "power:{exponent}"),
            Self::SoftSign => f.write_str("softsign"),
            Self::Exponential => f.write_str("exp"),
            Self::JumpAtZero { lower, upper } => write!(f, "jump:{lower},{upper}"),
        }
    }
}

impl FromStr for MonotoneGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, args) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s, None),
        };
        let number = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{v}' in graph id '{s}'")))
        };
        match (kind, args) {
            ("linear", Some(c)) => Self::linear(number(c)?),
            ("power", Some(m)) => Self::power_law(number(m)?),
            ("softsign", None) => Ok(Self::SoftSign),
            ("exp", None) => Ok(Self::Exponential),
            ("jump", Some(ab)) => {
                let (a, b) = ab
                    .split_once(',')
                    .ok_or_else(|| Error::Parse(format!("jump graph needs 'jump:a,b', got '{s}'")))?;
                Self::jump_at_zero(number(a)?, number(b)?)
            }
            _ => Err(Error::Parse(format!("unknown graph id '{s}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn power3() -> MonotoneGraph {
        MonotoneGraph::PowerLaw { exponent: 3.0 }
    }

    // Composite Simpson rule, independent of the closed-form potentials.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn grid_conjugate(g: &MonotoneGraph, s: f64, lo: f64, hi: f64) -> f64 {
        let n = 400_000;
        (0..=n)
            .map(|i| {
                let r = lo + (hi - lo) * i as f64 / n as f64;
                r * s - g.potential(r)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn potential_examples() {
        assert_eq!(MonotoneGraph::Linear { slope: 1.0 }.potential(2.0), 2.0);
        for g in MonotoneGraph::catalog() {
            assert_eq!(g.potential(0.0), 0.0, "{g}");
        }
        let quad = simpson(|r| power3().minimal_section(r), 0.0, 2.0, 1000);
        assert!((quad - 4.0).abs() < 1e-10);
        assert!((power3().potential(2.0) - quad).abs() < 1e-10);
    }

    #[test]
    fn potential_matches_quadrature_of_minimal_section() {
        for g in MonotoneGraph::catalog() {
            for r in [-2.3, -0.7, 0.4, 1.9] {
                // one-sided limit of the section at the origin
                let side = f64::MIN_POSITIVE.copysign(r);
                let quad = simpson(|x| g.minimal_section(if x == 0.0 { side } else { x }), 0.0, r, 2000);
                // sqrt-type singularity at the origin degrades Simpson to O(h^1.5)
                let tol = match g {
                    MonotoneGraph::PowerLaw { exponent } if exponent < 1.0 => 1e-4,
                    _ => 1e-8,
                };
                assert!((g.potential(r) - quad).abs() < tol, "{g} at {r}");
            }
        }
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(MonotoneGraph::Linear { slope: 1.0 }.conjugate(3.0), 4.5);
        assert_eq!(MonotoneGraph::SoftSign.conjugate(0.5), 0.0);
        assert_eq!(MonotoneGraph::SoftSign.conjugate(2.0), f64::INFINITY);
        let oracle = grid_conjugate(&power3(), 8.0, -5.0, 5.0);
        assert!((oracle - 12.0).abs() < 1e-6);
        assert!((power3().conjugate(8.0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn conjugate_matches_grid_maximization() {
        let cases = [
            (MonotoneGraph::Exponential, [-3.0, 0.5, 7.0]),
            (MonotoneGraph::JumpAtZero { lower: -1.0, upper: 2.0 }, [-4.0, 0.5, 3.5]),
            (MonotoneGraph::PowerLaw { exponent: 0.5 }, [-1.5, 0.3, 2.0]),
            (MonotoneGraph::Linear { slope: 3.5 }, [-2.0, 0.1, 5.0]),
        ];
        for (g, ss) in cases {
            for s in ss {
                let oracle = grid_conjugate(&g, s, -30.0, 30.0);
                assert!((g.conjugate(s) - oracle).abs() < 1e-5 * (1.0 + oracle.abs()), "{g} at {s}");
            }
        }
    }

    #[test]
    fn resolvent_examples() {
        let lin = MonotoneGraph::Linear { slope: 1.0 };
        assert_eq!(lin.resolvent(0.5, 3.0).unwrap(), 2.0);
        assert_eq!(MonotoneGraph::SoftSign.resolvent(0.5, 0.3).unwrap(), 0.0);
        let oracle = bisect(|u| u + u * u * u - 2.0, 0.0, 2.0);
        assert!((oracle - 1.0).abs() < 1e-14);
        assert!((power3().resolvent(1.0, 2.0).unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn resolvent_matches_bisection_oracle() {
        for g in MonotoneGraph::catalog() {
            for lambda in [1e-3, 0.1, 1.0, 10.0] {
                for r in [-50.0, -3.0, -0.2, 0.0, 0.05, 1.7, 40.0] {
                    let u = g.resolvent(lambda, r).unwrap();
                    // u + λβ(u) ∋ r  <=>  (r - u)/λ ∈ β(u)
                    let oracle = bisect(|u| u + lambda * g.minimal_section(u) - r, -60.0, 60.0);
                    let tol = 1e-10 * (1.0 + r.abs());
                    if !g.is_multivalued_at(oracle) {
                        assert!((u - oracle).abs() < tol, "{g} λ={lambda} r={r}: {u} vs {oracle}");
                    } else {
                        assert!(u.abs() < tol);
                    }
                }
            }
        }
    }

    #[test]
    fn yosida_examples() {
        assert_eq!(MonotoneGraph::SoftSign.yosida(0.1, 5.0).unwrap(), 1.0);
        let (c, lambda, r) = (2.5, 0.3, -1.7);
        let y = MonotoneGraph::Linear { slope: c }.yosida(lambda, r).unwrap();
        assert!((y - c * r / (1.0 + lambda * c)).abs() < 1e-15);
        assert!((power3().yosida(1.0, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn yosida_slope_matches_finite_differences() {
        for g in MonotoneGraph::catalog() {
            for lambda in [0.05, 0.5] {
                for r in [-2.1, -0.013, 0.37, 3.3] {
                    let eps = 1e-6;
                    let fd = (g.yosida(lambda, r + eps).unwrap() - g.yosida(lambda, r - eps).unwrap())
                        / (2.0 * eps);
                    let p = g.prox(lambda, r).unwrap();
                    assert!((p.slope - fd).abs() < 1e-5 * (1.0 + fd.abs()), "{g} {lambda} {r}");
                    assert!(p.slope >= 0.0 && p.slope <= 1.0 / lambda);
                }
            }
        }
    }

    #[test]
    fn moreau_envelope_gradient_is_yosida() {
        for g in MonotoneGraph::catalog() {
            let lambda = 0.2;
            for r in [-1.3, 0.11, 2.4] {
                let eps = 1e-6;
                let fd = (g.moreau_envelope(lambda, r + eps).unwrap()
                    - g.moreau_envelope(lambda, r - eps).unwrap())
                    / (2.0 * eps);
                assert!((fd - g.yosida(lambda, r).unwrap()).abs() < 1e-6 * (1.0 + fd.abs()), "{g}");
            }
        }
    }

    #[test]
    fn minimal_section_examples() {
        assert_eq!(MonotoneGraph::SoftSign.minimal_section(0.0), 0.0);
        assert_eq!(MonotoneGraph::JumpAtZero { lower: -1.0, upper: 2.0 }.minimal_section(0.0), 0.0);
        assert_eq!(power3().minimal_section(2.0), 8.0);
        assert_eq!(power3().minimal_section(-2.0), -8.0);
    }

    #[test]
    fn fenchel_gap_examples() {
        let lin = MonotoneGraph::Linear { slope: 1.0 };
        assert_eq!(lin.fenchel_gap(2.0, 2.0), 0.0);
        assert_eq!(lin.fenchel_gap(2.0, 0.0), 2.0);
        assert_eq!(MonotoneGraph::SoftSign.fenchel_gap(1.5, 1.0), 0.0);
        assert_eq!(MonotoneGraph::SoftSign.fenchel_gap(1.5, 1.1), f64::INFINITY);
    }

    #[test]
    fn yosida_converges_to_minimal_section() {
        for g in MonotoneGraph::catalog() {
            for r in [-1.5, 0.0, 0.3, 2.0] {
                let target = g.minimal_section(r);
                let mut prev = f64::INFINITY;
                for k in 1..=6 {
                    let lambda = 10f64.powi(-k);
                    let d = (g.yosida(lambda, r).unwrap() - target).abs();
                    assert!(d <= prev + 1e-12, "{g} r={r} λ={lambda}: {d} > {prev}");
                    prev = d;
                }
                assert!(prev < 1e-4 * (1.0 + target.abs()), "{g} r={r}: {prev}");
            }
        }
    }

    #[test]
    fn symmetry_constants_are_finite() {
        for g in MonotoneGraph::catalog() {
            let c = g.symmetry_constant();
            assert!(c.is_finite(), "{g}: {c}");
        }
        let jump = MonotoneGraph::JumpAtZero { lower: -1.0, upper: 2.0 };
        // ratio at r = 1: (1/2 + 2) / (1/2 + 1)
        assert!((jump.symmetry_constant() - 2.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn parse_round_trips() {
        for g in MonotoneGraph::catalog() {
            assert_eq!(g.to_string().parse::<MonotoneGraph>().unwrap(), g);
        }
        assert_eq!("jump:-1,2".parse::<MonotoneGraph>().unwrap(), MonotoneGraph::JumpAtZero {
            lower: -1.0,
            upper: 2.0
        });
        assert!("jump:1,2".parse::<MonotoneGraph>().is_err());
        assert!("power:-1".parse::<MonotoneGraph>().is_err());
        assert!("cubic".parse::<MonotoneGraph>().is_err());
    }

    #[test]
    fn rejects_bad_lambda() {
        assert!(matches!(power3().resolvent(0.0, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(power3().resolvent(-1.0, 1.0), Err(Error::InvalidParameter(_))));
    }
}
