//! Second-order forward-mode numbers over three variables.
//!
//! A [`Jet`] carries a value together with its gradient and Hessian with
//! respect to a point in R^3. Closed-form maps written against the [`Real`]
//! trait can then be evaluated either on plain `f64` or on jets, which is how
//! analytic surfaces and analytic scalar fields get exact first and second
//! derivatives without any finite differencing.

use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::{Matrix3, Vector3};

/// Scalar operations needed by the closed-form maps in this crate.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn constant(c: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn powi(self, n: i32) -> Self {
        let mut acc = Self::constant(1.0);
        for _ in 0..n.unsigned_abs() {
            acc = acc * self;
        }
        if n < 0 {
            Self::constant(1.0) / acc
        } else {
            acc
        }
    }
}

impl Real for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: Vector3<f64>,
    pub h: Matrix3<f64>,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, g: Vector3::zeros(), h: Matrix3::zeros() }
    }

    /// The coordinate function `x[axis]` seeded at `x`.
    pub fn variable(x: &Vector3<f64>, axis: usize) -> Self {
        let mut g = Vector3::zeros();
        g[axis] = 1.0;
        Jet { v: x[axis], g, h: Matrix3::zeros() }
    }

    /// Seeds all three coordinates at `x`.
    pub fn seed(x: &Vector3<f64>) -> [Jet; 3] {
        [Jet::variable(x, 0), Jet::variable(x, 1), Jet::variable(x, 2)]
    }

    fn chain(self, f: f64, df: f64, ddf: f64) -> Jet {
        Jet { v: f, g: self.g * df, h: self.h * df + self.g * self.g.transpose() * ddf }
    }

    /// Chain rule for a function of two jets with the given partials.
    #[allow(clippy::too_many_arguments)]
    fn chain2(a: Jet, b: Jet, f: f64, fa: f64, fb: f64, faa: f64, fab: f64, fbb: f64) -> Jet {
        let ga = a.g;
        let gb = b.g;
        Jet {
            v: f,
            g: ga * fa + gb * fb,
            h: a.h * fa
                + b.h * fb
                + ga * ga.transpose() * faa
                + (ga * gb.transpose() + gb * ga.transpose()) * fab
                + gb * gb.transpose() * fbb,
        }
    }

    pub fn recip(self) -> Jet {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet { v: self.v + o.v, g: self.g + o.g, h: self.h + o.h }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet { v: self.v - o.v, g: self.g - o.g, h: self.h - o.h }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet { v: -self.v, g: -self.g, h: -self.h }
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        Jet {
            v: self.v * o.v,
            g: o.g * self.v + self.g * o.v,
            h: o.h * self.v + self.h * o.v + self.g * o.g.transpose() + o.g * self.g.transpose(),
        }
    }
}

impl Div for Jet {
    type Output = Jet;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn div(self, o: Jet) -> Jet {
        self * o.recip()
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        Jet { v: self.v * c, g: self.g * c, h: self.h * c }
    }
}

impl Real for Jet {
    fn constant(c: f64) -> Self {
        Jet::constant(c)
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e, e)
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn atan2(self, x: Self) -> Self {
        let (yv, xv) = (self.v, x.v);
        let r2 = xv * xv + yv * yv;
        if r2 == 0.0 {
            // Derivatives are undefined on the axis; report the value only.
            return Jet::constant(yv.atan2(xv));
        }
        let r4 = r2 * r2;
        Jet::chain2(
            self,
            x,
            yv.atan2(xv),
            xv / r2,
            -yv / r2,
            -2.0 * xv * yv / r4,
            (yv * yv - xv * xv) / r4,
            2.0 * xv * yv / r4,
        )
    }
}
