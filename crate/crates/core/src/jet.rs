//! Third-order Taylor jets for forward-mode differentiation of user-written
//! potentials.
//!
//! A [`Jet`] carries `(f, f', f'', f''')` at a point. Arithmetic and the
//! elementary functions below propagate all three derivatives exactly, so a
//! potential written once as `Fn(Jet) -> Jet` yields `φ` and its first three
//! derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet(pub [f64; 4]);

impl Jet {
    /// The independent variable at `x`.
    pub fn variable(x: f64) -> Self {
        Jet([x, 1.0, 0.0, 0.0])
    }

    pub fn constant(c: f64) -> Self {
        Jet([c, 0.0, 0.0, 0.0])
    }

    pub fn value(&self) -> f64 {
        self.0[0]
    }

    pub fn derivative(&self, order: usize) -> f64 {
        self.0[order]
    }

    /// Chain rule for `g(self)` given `g, g', g'', g'''` at the current value.
    pub fn compose(self, g: [f64; 4]) -> Self {
        let [_, u1, u2, u3] = self.0;
        Jet([
            g[0],
            g[1] * u1,
            g[2] * u1 * u1 + g[1] * u2,
            g[3] * u1 * u1 * u1 + 3.0 * g[2] * u1 * u2 + g[1] * u3,
        ])
    }

    pub fn exp(self) -> Self {
        let e = self.0[0].exp();
        self.compose([e; 4])
    }

    pub fn ln(self) -> Self {
        let x = self.0[0];
        self.compose([x.ln(), 1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)])
    }

    pub fn sqrt(self) -> Self {
        let x = self.0[0];
        let r = x.sqrt();
        self.compose([r, 0.5 / r, -0.25 / (r * x), 0.375 / (r * x * x)])
    }

    pub fn powi(self, n: i32) -> Self {
        let x = self.0[0];
        let nf = n as f64;
        self.compose([
            x.powi(n),
            nf * x.powi(n - 1),
            nf * (nf - 1.0) * x.powi(n - 2),
            nf * (nf - 1.0) * (nf - 2.0) * x.powi(n - 3),
        ])
    }

    /// `log(1 + exp(u))`.
    pub fn softplus(self) -> Self {
        let x = self.0[0];
        let s = crate::density::sigmoid(x);
        let s1 = s * (1.0 - s);
        self.compose([crate::density::softplus(x), s, s1, s1 * (1.0 - 2.0 * s)])
    }

    pub fn recip(self) -> Self {
        let x = self.0[0];
        self.compose([1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x)])
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        Jet(self.0.map(|v| -v))
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let [a0, a1, a2, a3] = self.0;
        let [b0, b1, b2, b3] = o.0;
        Jet([
            a0 * b0,
            a1 * b0 + a0 * b1,
            a2 * b0 + 2.0 * a1 * b1 + a0 * b2,
            a3 * b0 + 3.0 * a2 * b1 + 3.0 * a1 * b2 + a0 * b3,
        ])
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
        self.0[0] += c;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, c: f64) -> Jet {
        self.0[0] -= c;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        Jet(self.0.map(|v| v * c))
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, c: f64) -> Jet {
        Jet(self.0.map(|v| v / c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_derivatives_are_exact() {
        let x = Jet::variable(1.5);
        let p = x * x * x * 2.0 - x * 3.0 + 1.0;
        assert_eq!(p.0, [2.0 * 3.375 - 4.5 + 1.0, 6.0 * 2.25 - 3.0, 12.0 * 1.5, 12.0]);
    }

    #[test]
    fn composed_functions_match_finite_differences() {
        let f = |x: Jet| (x * 0.7).exp() * (x * x + 1.0).ln() / (x.softplus() + 2.0).sqrt();
        let x0 = 0.4;
        let jet = f(Jet::variable(x0));
        let v = |x: f64| f(Jet::constant(x)).value();
        let h = 1e-3;
        let d1 = (v(x0 + h) - v(x0 - h)) / (2.0 * h);
        let d2 = (v(x0 + h) - 2.0 * v(x0) + v(x0 - h)) / (h * h);
        let d3 = (v(x0 + 2.0 * h) - 2.0 * v(x0 + h) + 2.0 * v(x0 - h) - v(x0 - 2.0 * h)) / (2.0 * h * h * h);
        assert!((jet.0[1] - d1).abs() < 1e-5);
        assert!((jet.0[2] - d2).abs() < 1e-4);
        assert!((jet.0[3] - d3).abs() < 1e-3);
    }
}
