use std::io::{Read, Write};

use crate::error::{invalid, Result};

/// Values sampled on an increasing time grid. Each row carries `width`
/// numbers (a vector, or a row-major matrix for matrix-valued paths).
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    width: usize,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl PathGrid {
    pub fn new(width: usize) -> Self {
        Self { width, times: Vec::new(), values: Vec::new() }
    }

    pub fn with_capacity(width: usize, rows: usize) -> Self {
        Self { width, times: Vec::with_capacity(rows), values: Vec::with_capacity(rows * width) }
    }

    pub fn from_parts(width: usize, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if width == 0 || values.len() != times.len() * width {
            return Err(invalid("path values do not match times × width"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("path times must be strictly increasing"));
        }
        Ok(Self { width, times, values })
    }

    /// Scalar path from `(t, v)` samples of a function on a uniform grid.
    pub fn scalar_from_fn(t0: f64, t1: f64, intervals: usize, f: impl Fn(f64) -> f64) -> Self {
        let mut p = Self::with_capacity(1, intervals + 1);
        for k in 0..=intervals {
            let t = t0 + (t1 - t0) * k as f64 / intervals as f64;
            p.push(t, &[f(t)]);
        }
        p
    }

    pub fn push(&mut self, t: f64, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        self.times.push(t);
        self.values.extend_from_slice(row);
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().skip(j).step_by(self.width).copied().collect()
    }

    pub fn last_row(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    /// Linear interpolation of column `j` at time `t` (clamped to the grid).
    pub fn interpolate(&self, j: usize, t: f64) -> f64 {
        let n = self.len();
        if n == 1 || t <= self.times[0] {
            return self.row(0)[j];
        }
        if t >= self.times[n - 1] {
            return self.row(n - 1)[j];
        }
        let k = self.times.partition_point(|&s| s <= t).saturating_sub(1).min(n - 2);
        let (ta, tb) = (self.times[k], self.times[k + 1]);
        let s = (t - ta) / (tb - ta);
        let (a, b) = (self.row(k)[j], self.row(k + 1)[j]);
        a + s * (b - a)
    }

    /// Maximal uniform step, or `None` when the grid is not uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let h = (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64;
        let uniform = self.times.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
        uniform.then_some(h)
    }

    pub fn sup_distance(&self, other: &PathGrid) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// CSV with header `t,v0,…,v{w-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.width).map(|j| format!("v{j}")));
        wr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![format_float(self.times[k])];
            rec.extend(self.row(k).iter().map(|v| format_float(*v)));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.get(0).map(str::trim) != Some("t") || headers.len() < 2 {
            return Err(invalid("path CSV must start with a 't' column followed by values"));
        }
        let width = headers.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let mut it = rec.iter().map(|s| {
                s.trim().parse::<f64>().map_err(|e| invalid(format!("bad number {s:?}: {e}")))
            });
            times.push(it.next().ok_or_else(|| invalid("empty CSV row"))??);
            for v in it {
                values.push(v?);
            }
        }
        Self::from_parts(width, times, values)
    }
}

/// Shortest round-trip representation, so repeated runs produce identical
/// bytes.
pub(crate) fn format_float(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let p = PathGrid::scalar_from_fn(0.0, 1.0, 7, |t| (3.0 * t).sin() / 7.0);
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,v0\n"));
        let q = PathGrid::read_csv(buf.as_slice()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn interpolation_and_uniformity() {
        let p = PathGrid::scalar_from_fn(0.0, 2.0, 4, |t| 2.0 * t);
        assert!((p.interpolate(0, 0.75) - 1.5).abs() < 1e-15);
        assert!((p.uniform_step().unwrap() - 0.5).abs() < 1e-15);
        assert!(PathGrid::from_parts(1, vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }
}
