//! Append-only observation record shared read-only with fields and schedules.
//!
//! Values are kept in a common power-of-two scale: the true value of a stored
//! entry is `stored · 2^scale_exp`. The scale moves only when a new row would
//! leave a comfortable exponent range, which lets explosive data (an AR(1)
//! process with |θ| > 1) run for arbitrarily many steps. Scale changes are
//! exact multiplications by powers of two, so scale-free quantities such as
//! `X_{t-1}² / Î_t` are bit-for-bit what unscaled arithmetic would produce.

/// Rows whose largest magnitude exceeds 2^RESCALE_LOG2 trigger a rescale.
/// Kept well below 2^256 so fourth powers of stored values stay finite.
const RESCALE_LOG2: i32 = 128;

/// Multiplies `x` by `2^k` without intermediate overflow of the factor.
pub fn ldexp(x: f64, k: i32) -> f64 {
    if k == 0 || x == 0.0 || !x.is_finite() {
        return x;
    }
    let mut v = x;
    let mut k = k;
    while k > 1000 {
        v *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        v *= 2f64.powi(-1000);
        k += 1000;
    }
    v * 2f64.powi(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    width: usize,
    values: Vec<f64>,
    /// Scale exponent each row was stored under.
    row_exp: Vec<i32>,
    sums: Vec<f64>,
    square_sums: Vec<f64>,
    scale_exp: i32,
}

impl ObservationRecord {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            values: Vec::new(),
            row_exp: Vec::new(),
            sums: vec![0.0; width],
            square_sums: vec![0.0; width],
            scale_exp: 0,
        }
    }

    /// Record pre-filled with initial rows (e.g. `X_0` for an AR process).
    pub fn with_rows(width: usize, rows: &[f64]) -> Self {
        assert!(width > 0 && rows.len().is_multiple_of(width), "ragged initial rows");
        let mut rec = Self::new(width);
        for row in rows.chunks(width) {
            rec.push(row);
        }
        rec
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of rows.
    pub fn len(&self) -> usize {
        self.row_exp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_exp.is_empty()
    }

    pub fn scale_exp(&self) -> i32 {
        self.scale_exp
    }

    /// Entry `(i, j)` in the current scale.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        ldexp(self.values[i * self.width + j], self.row_exp[i] - self.scale_exp)
    }

    /// Entry `(i, j)` in true units; may overflow to ±∞ for explosive data.
    pub fn true_value(&self, i: usize, j: usize) -> f64 {
        ldexp(self.values[i * self.width + j], self.row_exp[i])
    }

    /// Component `j` of the most recent row, current scale.
    pub fn last(&self, j: usize) -> Option<f64> {
        self.len().checked_sub(1).map(|i| self.value(i, j))
    }

    /// Σ of component `j` over all rows, current scale.
    pub fn sum(&self, j: usize) -> f64 {
        self.sums[j]
    }

    /// Σ of squares of component `j` over all rows, current scale squared.
    pub fn square_sum(&self, j: usize) -> f64 {
        self.square_sums[j]
    }

    /// Sample mean of component `j` in true units (0 when empty).
    pub fn mean(&self, j: usize) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            ldexp(self.sums[j], self.scale_exp) / self.len() as f64
        }
    }

    /// Appends a row given in the current scale.
    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.width, "observation width mismatch");
        let start = self.values.len();
        self.values.extend_from_slice(row);
        self.row_exp.push(self.scale_exp);
        for (j, &x) in row.iter().enumerate() {
            self.sums[j] += x;
            self.square_sums[j] += x * x;
        }
        let peak = self.values[start..]
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if peak.is_finite() && peak > ldexp(1.0, RESCALE_LOG2) {
            let mut shift = 0;
            while ldexp(peak, -shift) > ldexp(1.0, RESCALE_LOG2) {
                shift += RESCALE_LOG2;
            }
            self.rescale_down(start, shift);
        }
    }

    fn rescale_down(&mut self, last_start: usize, shift: i32) {
        for v in &mut self.values[last_start..] {
            *v = ldexp(*v, -shift);
        }
        for s in &mut self.sums {
            *s = ldexp(*s, -shift);
        }
        for s in &mut self.square_sums {
            *s = ldexp(*s, -2 * shift);
        }
        self.scale_exp += shift;
        if let Some(e) = self.row_exp.last_mut() {
            *e = self.scale_exp;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn running_statistics() {
        let mut h = ObservationRecord::new(1);
        assert_eq!(h.mean(0), 0.0);
        for x in [1.0, 2.0, 3.0] {
            h.push(&[x]);
        }
        assert_eq!(h.len(), 3);
        assert_eq!(h.sum(0), 6.0);
        assert_eq!(h.square_sum(0), 14.0);
        assert_eq!(h.mean(0), 2.0);
        assert_eq!(h.last(0), Some(3.0));
    }

    #[test]
    fn rescale_is_exact_and_transparent() {
        let mut h = ObservationRecord::with_rows(1, &[3.0]);
        let big = ldexp(1.5, 300);
        h.push(&[big]);
        assert_eq!(h.scale_exp(), 256);
        assert_eq!(h.last(0), Some(ldexp(1.5, 44)));
        assert_eq!(h.true_value(1, 0), big);
        assert_eq!(h.value(0, 0), ldexp(3.0, -256));
        // 9 is absorbed by (1.5·2^300)² in f64, so the scaled sum is exactly the scaled square
        assert_eq!(h.square_sum(0), ldexp(2.25, 88));
    }

    #[test]
    fn ldexp_handles_wide_exponents() {
        assert_eq!(ldexp(1.0, 1500), f64::INFINITY);
        assert_eq!(ldexp(ldexp(1.0, 900), -1800), ldexp(1.0, -900));
        assert_eq!(ldexp(0.75, 0), 0.75);
    }
}
