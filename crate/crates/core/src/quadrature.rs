//! Gauss–Legendre rules and composite panel integration.

use std::f64::consts::PI;

/// Gauss–Legendre rule on [-1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Rule with `n` nodes (exact for polynomials of degree 2n - 1).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped to [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }

    /// Sum of the rule over consecutive panels `edges[k]..edges[k+1]`.
    pub fn integrate_panels<F: FnMut(f64) -> f64>(&self, edges: &[f64], mut f: F) -> f64 {
        edges
            .windows(2)
            .map(|e| self.integrate(e[0], e[1], &mut f))
            .sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
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

/// Geometric panel edges from `a` to `b` (both positive) with `per_decade` panels per decade.
pub fn log_edges(a: f64, b: f64, per_decade: usize) -> Vec<f64> {
    assert!(a > 0.0 && b > a);
    let decades = (b / a).log10();
    let n = ((decades * per_decade as f64).ceil() as usize).max(1);
    let ratio = (b / a).powf(1.0 / n as f64);
    let mut out = Vec::with_capacity(n + 1);
    let mut x = a;
    out.push(a);
    for _ in 1..n {
        x *= ratio;
        out.push(x);
    }
    out.push(b);
    out
}

/// Uniform panel edges on [a, b] with width at most `width`.
pub fn uniform_edges(a: f64, b: f64, width: f64) -> Vec<f64> {
    let n = (((b - a) / width).ceil() as usize).max(1);
    (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect()
}

/// Merge sorted breakpoints into panel edges, dropping near-duplicates.
pub fn insert_breakpoints(edges: &mut Vec<f64>, breakpoints: &[f64]) {
    let (lo, hi) = (edges[0], *edges.last().unwrap());
    for &b in breakpoints {
        if b > lo && b < hi {
            edges.push(b);
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1e-300));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 64, 257] {
            let g = GaussLegendre::new(n);
            let s: f64 = g.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exact_for_polynomials() {
        let g = GaussLegendre::new(8);
        for deg in 0..16 {
            let exact = 3f64.powi(deg + 1) / (deg + 1) as f64;
            let got = g.integrate(0.0, 3.0, |x| x.powi(deg));
            assert!((got - exact).abs() < 1e-11 * exact, "deg {deg}");
        }
    }

    #[test]
    fn known_nodes() {
        let g = GaussLegendre::new(2);
        assert!((g.nodes()[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let g3 = GaussLegendre::new(3);
        assert!((g3.nodes()[2] - (0.6f64).sqrt()).abs() < 1e-15);
        assert!((g3.weights()[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn log_edges_cover_range() {
        let e = log_edges(1e-6, 1e4, 4);
        assert_eq!(e[0], 1e-6);
        assert_eq!(*e.last().unwrap(), 1e4);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn panels_handle_kinks() {
        let g = GaussLegendre::new(10);
        let mut edges = uniform_edges(-1.0, 2.0, 0.7);
        insert_breakpoints(&mut edges, &[0.0]);
        let got = g.integrate_panels(&edges, f64::abs);
        assert!((got - 2.5).abs() < 1e-13);
    }
}
