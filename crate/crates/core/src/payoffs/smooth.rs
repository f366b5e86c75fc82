//! Logistic surrogates for step functions.

/// `σ(z) = 1 / (1 + e^{-z})`, evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Smoothed `1{u <= a}` at temperature `tau`, i.e. `σ((a - u)/tau)`, for a
/// fixed list of thresholds. Exponentials of the thresholds are tabulated so
/// each query costs one exponential plus a division per threshold.
#[derive(Debug, Clone)]
pub struct SmoothStep {
    thresholds: Vec<f64>,
    tau: f64,
    /// `exp(-a/tau)` per threshold when representable, else empty.
    table: Vec<f64>,
}

impl SmoothStep {
    pub fn new(thresholds: Vec<f64>, tau: f64) -> Self {
        let fits = thresholds.iter().all(|a| (a / tau).abs() < 600.0) && 1.0 / tau < 600.0;
        let table = if fits {
            thresholds.iter().map(|a| (-a / tau).exp()).collect()
        } else {
            Vec::new()
        };
        Self { thresholds, tau, table }
    }

    /// Calls `f(i, s_i, ds_i/du)` for every threshold at input `u` in [0, 1].
    pub fn for_each(&self, u: f64, mut f: impl FnMut(usize, f64, f64)) {
        let inv = 1.0 / self.tau;
        if self.table.is_empty() {
            for (i, a) in self.thresholds.iter().enumerate() {
                let s = logistic((a - u) * inv);
                f(i, s, -s * (1.0 - s) * inv);
            }
        } else {
            let e = (u * inv).exp();
            for (i, r) in self.table.iter().enumerate() {
                let s = 1.0 / (1.0 + e * r);
                f(i, s, -s * (1.0 - s) * inv);
            }
        }
    }
}
