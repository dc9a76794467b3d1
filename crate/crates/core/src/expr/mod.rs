//! Scalar expressions of the state vector.
//!
//! Entries of `A(x)`, `B(x)` and the components of basis libraries are
//! written as small infix expressions (`"1 + 0.1*sinc(x1)"`). They can be
//! evaluated pointwise and bounded over boxes with interval arithmetic.

mod interval;
mod parse;

use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use interval::Interval;
pub use parse::parse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier '{name}' at {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("'{name}' at {pos} takes {expected} argument(s), got {found}")]
    Arity { name: String, expected: usize, found: usize, pos: usize },
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("expression uses x{needed} but the state has dimension {dim}")]
    Dimension { needed: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Func {
    Abs,
    Sin,
    Cos,
    Tan,
    Exp,
    /// `sin(x)/x`, continuous at zero.
    Sinc,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Sinc => "sinc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Zero-based state index; printed as `x{i+1}`.
    Var(usize),
    Const(f64),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

/// How a bound over the ball `B_r` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundMode {
    /// Interval arithmetic over the enclosing box `[-r, r]^n`. Sound.
    IntervalBox,
    /// Min/max over a dense sample of the ball, widened by `inflation`
    /// times the sampled range and clipped to the sound box enclosure.
    /// Not sound.
    Grid { per_axis: usize, inflation: f64 },
}

impl BoundMode {
    pub const DEFAULT_GRID: BoundMode = BoundMode::Grid { per_axis: 201, inflation: 0.02 };

    pub fn is_sound(&self) -> bool {
        matches!(self, BoundMode::IntervalBox)
    }
}

impl Default for BoundMode {
    fn default() -> Self {
        BoundMode::IntervalBox
    }
}

/// Points sampled from the ball `B_r ⊂ R^n`.
///
/// For `n <= 3` this is the tensor grid with `per_axis` points on
/// `[-r, r]` filtered to the ball. Above that a full grid is out of reach,
/// so the sample is the axis extremes `±r e_i` plus `random` seeded points
/// drawn uniformly from the ball (a third of them on the sphere).
pub fn ball_samples(n: usize, r: f64, per_axis: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 0 {
        return vec![vec![]];
    }
    if r == 0.0 {
        return vec![vec![0.0; n]];
    }
    if n <= 3 {
        let k = per_axis.max(2);
        let axis: Vec<f64> = (0..k).map(|i| -r + 2.0 * r * i as f64 / (k - 1) as f64).collect();
        let total = k.pow(n as u32);
        let mut out = Vec::new();
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; n];
            for coord in p.iter_mut() {
                *coord = axis[rem % k];
                rem /= k;
            }
            let norm2: f64 = p.iter().map(|v| v * v).sum();
            if norm2 <= r * r * (1.0 + 1e-12) {
                out.push(p);
            }
        }
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(random + 2 * n + 1);
    out.push(vec![0.0; n]);
    for i in 0..n {
        for s in [-r, r] {
            let mut p = vec![0.0; n];
            p[i] = s;
            out.push(p);
        }
    }
    for j in 0..random {
        let dir: Vec<f64> = loop {
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-3 && norm <= 1.0 {
                break g.into_iter().map(|v| v / norm).collect();
            }
        };
        let radius = if j % 3 == 0 { r } else { r * rng.gen::<f64>().powf(1.0 / n as f64) };
        out.push(dir.into_iter().map(|v| v * radius).collect());
    }
    out
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        parse(src)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    /// Number of state coordinates referenced: `1 + max index`, or 0.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Const(_) => 0,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => a.arity().max(b.arity()),
        }
    }

    /// True when no state variable occurs.
    pub fn is_constant(&self) -> bool {
        self.arity() == 0
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        let v = match self {
            Expr::Var(i) => *x.get(*i).ok_or(ExprError::Dimension { needed: i + 1, dim: x.len() })?,
            Expr::Const(c) => *c,
            Expr::Neg(a) => -a.eval(x)?,
            Expr::Add(a, b) => a.eval(x)? + b.eval(x)?,
            Expr::Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Expr::Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Expr::Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(ExprError::Domain(format!("division by zero in {self}")));
                }
                a.eval(x)? / d
            }
            Expr::Pow(a, k) => {
                let base = a.eval(x)?;
                if base == 0.0 && *k < 0 {
                    return Err(ExprError::Domain(format!("zero raised to {k} in {self}")));
                }
                base.powi(*k)
            }
            Expr::Call(f, a) => {
                let t = a.eval(x)?;
                match f {
                    Func::Abs => t.abs(),
                    Func::Sin => t.sin(),
                    Func::Cos => t.cos(),
                    Func::Exp => t.exp(),
                    Func::Sinc => interval::sinc(t),
                    Func::Tan => {
                        if t.cos().abs() < 1e-15 {
                            return Err(ExprError::Domain(format!("tan pole at {t}")));
                        }
                        t.tan()
                    }
                }
            }
        };
        if !v.is_finite() {
            return Err(ExprError::Domain(format!("{self} is not finite at {x:?}")));
        }
        Ok(v)
    }

    /// Outer enclosure of the range of `self` over the axis-aligned box.
    pub fn bound_over_box(&self, bx: &[Interval]) -> Result<Interval, ExprError> {
        Ok(match self {
            Expr::Var(i) => *bx.get(*i).ok_or(ExprError::Dimension { needed: i + 1, dim: bx.len() })?,
            Expr::Const(c) => Interval::point(*c),
            Expr::Neg(a) => a.bound_over_box(bx)?.neg(),
            Expr::Add(a, b) => a.bound_over_box(bx)?.add(b.bound_over_box(bx)?),
            Expr::Sub(a, b) => a.bound_over_box(bx)?.sub(b.bound_over_box(bx)?),
            Expr::Mul(a, b) => {
                // x*x is a square, not an independent product
                if a == b {
                    a.bound_over_box(bx)?.powi(2)?
                } else {
                    a.bound_over_box(bx)?.mul(b.bound_over_box(bx)?)
                }
            }
            Expr::Div(a, b) => a.bound_over_box(bx)?.div(b.bound_over_box(bx)?)?,
            Expr::Pow(a, k) => a.bound_over_box(bx)?.powi(*k)?,
            Expr::Call(f, a) => {
                let t = a.bound_over_box(bx)?;
                match f {
                    Func::Abs => t.abs(),
                    Func::Sin => t.sin(),
                    Func::Cos => t.cos(),
                    Func::Tan => t.tan()?,
                    Func::Exp => t.exp(),
                    Func::Sinc => t.sinc(),
                }
            }
        })
    }

    /// Bound over the ball `B_r ⊂ R^n`.
    pub fn bound_over_ball(&self, n: usize, r: f64, mode: BoundMode) -> Result<Interval, ExprError> {
        if self.arity() > n {
            return Err(ExprError::Dimension { needed: self.arity(), dim: n });
        }
        let bx = vec![Interval::symmetric(r); n];
        let sound = self.bound_over_box(&bx);
        match mode {
            BoundMode::IntervalBox => sound,
            BoundMode::Grid { per_axis, inflation } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in ball_samples(n, r, per_axis, 20_000, 0) {
                    let v = self.eval(&p)?;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                let pad = inflation * (hi - lo);
                let sampled = Interval::new(lo - pad, hi + pad);
                Ok(match sound {
                    Ok(s) => s.intersect(&sampled).unwrap_or(sampled),
                    Err(_) => sampled,
                })
            }
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized; `parse(e.to_string())` reproduces `e`'s values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => {
                if *k < 0 {
                    write!(f, "({a}^(-{}))", -(*k as i64))
                } else {
                    write!(f, "({a}^{k})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        parse(&src).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse(s).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(p("1 + 0.1*sinc(x1)").eval(&[0.0]).unwrap(), 1.1);
        let v = p("0.1*exp(x1)").eval(&[1.1]).unwrap();
        assert!((v - 0.300_416_602).abs() < 1e-8, "{v}");
        assert_eq!(p("x1^2 * x2").eval(&[2.0, 3.0]).unwrap(), 12.0);
    }

    #[test]
    fn eval_examples() {
        let v = p("sinc(x1)").eval(&[1.1]).unwrap();
        assert!((v - 1.1f64.sin() / 1.1).abs() < 1e-15);
        assert!((v - 0.81019).abs() < 1e-5);
        assert_eq!(p("abs(x2)").eval(&[0.0, -0.4]).unwrap(), 0.4);
        assert_eq!(p("exp(x1)").eval(&[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn sinc_is_continuous_at_zero() {
        let e = p("sinc(x1)");
        assert_eq!(e.eval(&[0.0]).unwrap(), 1.0);
        for x in [1e-9, -1e-9] {
            assert!((e.eval(&[x]).unwrap() - 1.0).abs() < 1e-15);
        }
        // the series branch agrees with sin(x)/x where both are accurate
        for x in [9.9e-5, 1.01e-4, -5e-5] {
            assert!((e.eval(&[x]).unwrap() - f64::sin(x) / x).abs() < 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(p("1/x1").eval(&[0.0]), Err(ExprError::Domain(_))));
        assert!(matches!(p("tan(x1)").eval(&[std::f64::consts::FRAC_PI_2]), Err(ExprError::Domain(_))));
        assert!(matches!(p("x2").eval(&[1.0]), Err(ExprError::Dimension { needed: 2, dim: 1 })));
        let bx = [Interval::new(1.0, 2.0)];
        assert!(matches!(p("tan(x1)").bound_over_box(&bx), Err(ExprError::Domain(_))));
        assert!(matches!(p("1/(x1 - 1.5)").bound_over_box(&bx), Err(ExprError::Domain(_))));
    }

    #[test]
    fn box_bounds_example_entries() {
        let bx = [Interval::symmetric(1.1)];
        let a11 = p("1 + 0.1*sinc(x1)").bound_over_box(&bx).unwrap();
        assert!((a11.lo - (1.0 + 0.1 * 1.1f64.sin() / 1.1)).abs() < 1e-12);
        assert!((a11.hi - 1.1).abs() < 1e-12);
        let b21 = p("0.1*exp(x1)").bound_over_box(&bx).unwrap();
        assert!((b21.lo - 0.0332).abs() < 1e-4 && (b21.hi - 0.3004).abs() < 1e-4);
        let c = p("0.2").bound_over_box(&[Interval::new(-3.0, 5.0)]).unwrap();
        assert_eq!(c, Interval::point(0.2));
    }

    #[test]
    fn ball_bounds_example_entries() {
        for mode in [BoundMode::IntervalBox, BoundMode::DEFAULT_GRID] {
            let a22 = p("0.9 + 0.1*x1^2").bound_over_ball(2, 1.1, mode).unwrap();
            assert!((a22.lo - 0.9).abs() < 1e-9 && (a22.hi - 1.021).abs() < 1e-9, "{a22}");
            let b11 = p("0.1 + 0.1*abs(x2)").bound_over_ball(2, 1.1, mode).unwrap();
            assert!((b11.lo - 0.1).abs() < 1e-9 && (b11.hi - 0.21).abs() < 1e-9, "{b11}");
        }
    }

    #[test]
    fn zero_radius_gives_point() {
        for src in ["1 + 0.1*sinc(x1)", "0.1*exp(x1) + cos(x2)", "x1*x2 - 3"] {
            let e = p(src);
            let at0 = e.eval(&[0.0, 0.0]).unwrap();
            for mode in [BoundMode::IntervalBox, BoundMode::DEFAULT_GRID] {
                assert_eq!(e.bound_over_ball(2, 0.0, mode).unwrap(), Interval::point(at0));
            }
        }
    }

    #[test]
    fn grid_is_tighter_than_box_on_products() {
        let e = p("x1*x2");
        let bx = e.bound_over_ball(2, 1.0, BoundMode::IntervalBox).unwrap();
        let grid = e.bound_over_ball(2, 1.0, BoundMode::DEFAULT_GRID).unwrap();
        assert!(bx.contains_interval(&grid));
        // true range on the unit disc is [-1/2, 1/2]
        assert!(grid.hi < 0.6 && grid.hi >= 0.5);
    }

    #[test]
    fn display_round_trip() {
        for src in ["-x1^2", "1 - (-2)", "pow(x1, -2) + sinc(x2)/3", "1e-7*x1", "-(x1 - -0.5)"] {
            let e = p(src);
            let back = p(&e.to_string());
            for x in [[0.3, -1.2], [1.7, 0.4]] {
                assert_eq!(e.eval(&x).unwrap(), back.eval(&x).unwrap(), "{src} -> {e}");
            }
        }
    }

    #[test]
    fn ball_samples_cover_axis_extremes() {
        let pts = ball_samples(2, 1.1, 201, 0, 0);
        assert!(pts.iter().any(|p| p == &vec![1.1, 0.0]));
        assert!(pts.iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 1.21 + 1e-9));
        let pts = ball_samples(6, 0.4, 0, 100, 3);
        assert_eq!(pts.len(), 1 + 12 + 100);
        assert!(pts.iter().all(|p| p.iter().map(|v| v * v).sum::<f64>() <= 0.16 + 1e-12));
    }
}
