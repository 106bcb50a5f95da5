//! Gauss–Legendre rules and tensor-product integration over boxes.

use std::f64::consts::PI;

/// Nodes and weights of an n-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
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
            if d != 0.0 {
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
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[lo, hi]`.
    pub fn mapped(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| (mid + half * x, half * w))
            .collect()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, lo: f64, hi: f64, f: F) -> f64 {
        self.mapped(lo, hi).iter().map(|&(x, w)| w * f(x)).sum()
    }

    /// Tensor-product rule over the box `[lo[d], hi[d]]` in three dimensions.
    pub fn integrate_box3<F: Fn([f64; 3]) -> f64>(&self, lo: [f64; 3], hi: [f64; 3], f: F) -> f64 {
        let axes: Vec<Vec<(f64, f64)>> = (0..3).map(|d| self.mapped(lo[d], hi[d])).collect();
        let mut total = 0.0;
        for &(x, wx) in &axes[0] {
            for &(y, wy) in &axes[1] {
                let mut inner = 0.0;
                for &(z, wz) in &axes[2] {
                    inner += wz * f([x, y, z]);
                }
                total += wx * wy * inner;
            }
        }
        total
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_tables() {
        let r = GaussLegendre::new(2);
        assert!((r.nodes()[1] - 0.577_350_269_189_625_8).abs() < 1e-15);
        assert!((r.weights()[0] - 1.0).abs() < 1e-15);
        let r = GaussLegendre::new(5);
        assert!((r.nodes()[4] - 0.906_179_845_938_664).abs() < 1e-14);
        assert!((r.weights()[2] - 0.568_888_888_888_888_9).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 4, 7, 16, 32, 64] {
            let s: f64 = GaussLegendre::new(n).weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let r = GaussLegendre::new(6);
        for k in 0..12 {
            let got = r.integrate(0.0, 1.0, |x| x.powi(k));
            assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn box_volume_and_separable_product() {
        let r = GaussLegendre::new(8);
        let v = r.integrate_box3([0.0, -1.0, 2.0], [1.0, 1.0, 5.0], |_| 1.0);
        assert!((v - 6.0).abs() < 1e-13);
        let got = r.integrate_box3([0.0; 3], [1.0; 3], |p| p[0] * p[1] * p[1] * p[2].exp());
        let want = 0.5 * (1.0 / 3.0) * (1f64.exp() - 1.0);
        assert!((got - want).abs() < 1e-13);
    }
}
