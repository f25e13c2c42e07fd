//! Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson slopes).

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing with at least two entries.
    pub(crate) fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let k = x.len();
        debug_assert!(k >= 2 && y.len() == k);
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..k - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; k];
        if k == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for i in 1..k - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[k - 1] = end_slope(h[k - 2], h[k - 3], delta[k - 2], delta[k - 3]);
        }
        Self { x, y, d }
    }

    fn locate(&self, t: f64) -> usize {
        let k = self.x.len();
        match self.x.partition_point(|&xi| xi <= t) {
            0 => 0,
            i if i >= k => k - 2,
            i => i - 1,
        }
    }

    /// Value at `t`; constant extension outside the sampled range.
    pub(crate) fn eval(&self, t: f64) -> f64 {
        let k = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[k - 1] {
            return self.y[k - 1];
        }
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
            s * (1.0 - s) * (1.0 - s),
            s * s * (3.0 - 2.0 * s),
            s * s * (s - 1.0),
        );
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }

    pub(crate) fn derivative(&self, t: f64) -> f64 {
        let k = self.x.len();
        if t < self.x[0] || t > self.x[k - 1] {
            return 0.0;
        }
        let i = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let dy = self.y[i + 1] - self.y[i];
        6.0 * s * (1.0 - s) * dy / h
            + (1.0 - 4.0 * s + 3.0 * s * s) * self.d[i]
            + (3.0 * s * s - 2.0 * s) * self.d[i + 1]
    }

    pub(crate) fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.x.iter().copied().zip(self.y.iter().copied())
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_nodes_and_reproduces_lines() {
        let p = Pchip::new(vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 3.0]);
        for (x, y) in [(0.0, 1.0), (0.25, 1.5), (0.5, 2.0), (0.8, 2.6), (1.0, 3.0)] {
            assert!((p.eval(x) - y).abs() < 1e-14);
            assert!((p.derivative(x) - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stays_within_data_range() {
        let x = vec![0.0, 0.1, 0.2, 0.5, 0.9, 1.0];
        let y = vec![1.0, 3.0, 0.5, 0.5, 4.0, 0.2];
        let p = Pchip::new(x, y);
        for i in 0..=1000 {
            let v = p.eval(i as f64 / 1000.0);
            assert!((0.2 - 1e-12..=4.0 + 1e-12).contains(&v), "{v}");
        }
    }
}
