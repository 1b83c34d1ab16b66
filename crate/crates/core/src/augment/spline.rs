//! Natural cubic spline and linear resampling.

/// Interpolating cubic spline with zero second derivative at both ends.
#[derive(Debug, Clone)]
pub struct NaturalCubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl NaturalCubicSpline {
    /// `xs` must be strictly increasing with at least two knots.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        assert!(xs.len() >= 2 && xs.len() == ys.len(), "spline needs ≥ 2 matching knots");
        assert!(xs.windows(2).all(|w| w[1] > w[0]), "spline knots must increase");
        let n = xs.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior equations
            //   h[i-1] m[i-1] + 2(h[i-1]+h[i]) m[i] + h[i] m[i+1] = 6 (slope[i] - slope[i-1])
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let slope: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            for j in 0..k {
                let i = j + 1;
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                rhs[j] = 6.0 * (slope[i] - slope[i - 1]);
            }
            for j in 1..k {
                let w = h[j] / diag[j - 1];
                diag[j] -= w * h[j];
                rhs[j] -= w * rhs[j - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for j in (0..k - 1).rev() {
                m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
            }
        }
        Self { xs, ys, m }
    }

    /// Knots evenly spaced over `[0, span]`.
    pub fn evenly_spaced(span: f64, ys: Vec<f64>) -> Self {
        let n = ys.len();
        let xs = (0..n).map(|i| span * i as f64 / (n - 1) as f64).collect();
        Self::new(xs, ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&k| k <= x) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let a = (x1 - x) / h;
        let b = (x - x0) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// Evaluates at `0, 1, ..., len - 1`.
    pub fn sample(&self, len: usize) -> Vec<f64> {
        (0..len).map(|t| self.eval(t as f64)).collect()
    }
}

/// Linear interpolation of `x` (defined at integer positions) at real
/// position `p`, clamped to the ends.
#[inline]
pub fn interp_at(x: &[f64], p: f64) -> f64 {
    let last = x.len() - 1;
    if p <= 0.0 {
        return x[0];
    }
    if p >= last as f64 {
        return x[last];
    }
    let i = p.floor() as usize;
    let f = p - i as f64;
    if f == 0.0 {
        x[i]
    } else {
        x[i] + f * (x[i + 1] - x[i])
    }
}

/// Resamples `x` to `n` points spanning the same extent (first and last
/// samples preserved).
pub fn resample_linear(x: &[f64], n: usize) -> Vec<f64> {
    match (x.len(), n) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; n],
        (1, _) => vec![x[0]; n],
        (_, 1) => vec![x[0]],
        (len, _) => {
            let step = (len - 1) as f64 / (n - 1) as f64;
            (0..n).map(|i| interp_at(x, i as f64 * step)).collect()
        }
    }
}
