//! Gauss rules on the unit interval and collapsed (Duffy) Gauss rules on the
//! reference triangle `{ξ ≥ 0, η ≥ 0, ξ + η ≤ 1}`.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Polynomials up to this degree are integrated exactly.
    pub degree: usize,
}

impl LineRule {
    /// `m`-point Gauss–Legendre rule, exact to degree `2m - 1`.
    pub fn gauss(m: usize) -> Self {
        assert!(m >= 1, "Gauss rule needs at least one point");
        let mut points = Vec::with_capacity(m);
        let mut weights = Vec::with_capacity(m);
        for i in 0..m {
            // Chebyshev-like initial guess, then Newton on P_m.
            let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(m, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(m, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            points.push(0.5 * (1.0 - x));
            weights.push(0.5 * w);
        }
        LineRule { points, weights, degree: 2 * m - 1 }
    }

    /// Smallest Gauss rule exact to `degree`.
    pub fn with_degree(degree: usize) -> Self {
        Self::gauss(degree / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature rule on the reference triangle (weights sum to 1/2).
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Collapsed Gauss rule exact for all polynomials of total degree `<= degree`.
    pub fn with_degree(degree: usize) -> Self {
        // The collapse adds one power of (1 - u) in the u direction.
        let ru = LineRule::with_degree(degree + 1);
        let rv = LineRule::with_degree(degree);
        let mut points = Vec::with_capacity(ru.len() * rv.len());
        let mut weights = Vec::with_capacity(ru.len() * rv.len());
        for (&u, &wu) in ru.points.iter().zip(&ru.weights) {
            for (&v, &wv) in rv.points.iter().zip(&rv.weights) {
                points.push([u, v * (1.0 - u)]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        TriangleRule { points, weights, degree }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn line_rules_exact() {
        for m in 1..=10 {
            let rule = LineRule::gauss(m);
            for p in 0..=rule.degree {
                let approx: f64 = rule.points.iter().zip(&rule.weights).map(|(x, w)| w * x.powi(p as i32)).sum();
                let exact = 1.0 / (p as f64 + 1.0);
                assert!((approx - exact).abs() <= 1e-14 * exact.max(1.0), "m={m} p={p}");
            }
        }
    }

    #[test]
    fn triangle_monomials_exact() {
        for d in 0..=16 {
            let rule = TriangleRule::with_degree(d);
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let approx = rule.integrate(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    assert!((approx - exact).abs() <= 1e-12 * exact, "d={d} a={a} b={b}");
                }
            }
        }
    }

    #[test]
    fn points_inside_reference_triangle() {
        let rule = TriangleRule::with_degree(12);
        assert!(rule.points.iter().all(|p| p[0] > 0.0 && p[1] > 0.0 && p[0] + p[1] < 1.0));
        assert!(rule.weights.iter().all(|&w| w > 0.0));
    }
}
