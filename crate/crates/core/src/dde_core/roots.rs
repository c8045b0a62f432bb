//! Zeros of `det Δ(λ)` inside a rectangle by argument-principle subdivision.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::measure::DelayMeasure;
use crate::error::{Error, Result};

/// Axis-aligned rectangle in the complex plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Rect {
    pub fn new(re_min: f64, re_max: f64, im_min: f64, im_max: f64) -> Self {
        Self { re_min, re_max, im_min, im_max }
    }

    pub fn width(&self) -> f64 {
        self.re_max - self.re_min
    }

    pub fn height(&self) -> f64 {
        self.im_max - self.im_min
    }

    pub fn center(&self) -> Complex64 {
        Complex64::new(0.5 * (self.re_min + self.re_max), 0.5 * (self.im_min + self.im_max))
    }

    pub fn contains(&self, z: Complex64, slack: f64) -> bool {
        z.re >= self.re_min - slack
            && z.re <= self.re_max + slack
            && z.im >= self.im_min - slack
            && z.im <= self.im_max + slack
    }

    fn corners(&self) -> [Complex64; 4] {
        [
            Complex64::new(self.re_min, self.im_min),
            Complex64::new(self.re_max, self.im_min),
            Complex64::new(self.re_max, self.im_max),
            Complex64::new(self.re_min, self.im_max),
        ]
    }

    fn split(&self, fx: f64, fy: f64) -> [Rect; 4] {
        let xm = self.re_min + fx * self.width();
        let ym = self.im_min + fy * self.height();
        [
            Rect::new(self.re_min, xm, self.im_min, ym),
            Rect::new(xm, self.re_max, self.im_min, ym),
            Rect::new(xm, self.re_max, ym, self.im_max),
            Rect::new(self.re_min, xm, ym, self.im_max),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharacteristicRoot {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
    pub residual: f64,
}

impl CharacteristicRoot {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Accepted residual `|det Δ(λ)|`.
    pub tol: f64,
    /// Cells smaller than this are not split further.
    pub min_cell: f64,
    pub max_retries: usize,
    pub newton_iterations: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { tol: 1e-8, min_cell: 1e-7, max_retries: 8, newton_iterations: 100 }
    }
}

/// Split fractions; off-centre so that symmetric root configurations (real
/// roots, conjugate pairs) do not land on internal edges.
const SPLITS: [(f64, f64); 6] = [
    (0.4871, 0.5127),
    (0.5233, 0.4689),
    (0.4512, 0.5391),
    (0.5619, 0.4431),
    (0.4197, 0.5813),
    (0.6011, 0.3977),
];

const MAX_BISECT_DEPTH: usize = 40;

struct Finder<'a> {
    measure: &'a DelayMeasure,
    opts: RootOptions,
    /// Arg-sampling density along the imaginary direction.
    oscillation: f64,
}

#[derive(Debug)]
enum Contour {
    OnRoot,
}

impl Finder<'_> {
    fn det(&self, z: Complex64) -> Complex64 {
        let d = self.measure.char_delta(z);
        if d.nrows() == 1 { d[(0, 0)] } else { d.determinant() }
    }

    /// `det Δ(z)` and `|d/dz log det Δ(z)| = |tr(Δ⁻¹Δ')|`.
    fn sample(&self, z: Complex64) -> std::result::Result<(Complex64, f64), Contour> {
        let d = self.measure.char_delta(z);
        let f = if d.nrows() == 1 { d[(0, 0)] } else { d.determinant() };
        if f.norm() == 0.0 || !f.is_finite() {
            return Err(Contour::OnRoot);
        }
        let dd = self.measure.char_delta_derivative(z);
        let ld = match d.try_inverse() {
            Some(inv) => (inv * dd).trace().norm(),
            None => f64::INFINITY,
        };
        Ok((f, ld))
    }

    /// Change of `arg det Δ` along the straight edge `p → q`.
    fn arg_change(&self, p: Complex64, q: Complex64) -> std::result::Result<f64, Contour> {
        let len = (q - p).norm();
        let samples = ((len * self.oscillation).ceil() as usize).clamp(8, 1 << 16);
        let mut total = 0.0;
        let mut zp = p;
        let mut sp = self.sample(p)?;
        for k in 1..=samples {
            let zq = p + (q - p) * (k as f64 / samples as f64);
            let sq = self.sample(zq)?;
            total += self.arg_piece(zp, sp, zq, sq, 0)?;
            zp = zq;
            sp = sq;
        }
        Ok(total)
    }

    /// Accepts the principal increment once the segment is short against
    /// the local log-derivative, so a root close to the edge cannot alias.
    fn arg_piece(
        &self,
        a: Complex64,
        (fa, la): (Complex64, f64),
        b: Complex64,
        (fb, lb): (Complex64, f64),
        depth: usize,
    ) -> std::result::Result<f64, Contour> {
        let d = (fb / fa).arg();
        let h = (b - a).norm();
        if d.abs() < PI / 4.0 && h * la.max(lb) < 0.25 {
            return Ok(d);
        }
        if depth >= MAX_BISECT_DEPTH {
            return Err(Contour::OnRoot);
        }
        let m = (a + b) * 0.5;
        let sm = self.sample(m)?;
        Ok(self.arg_piece(a, (fa, la), m, sm, depth + 1)? + self.arg_piece(m, sm, b, (fb, lb), depth + 1)?)
    }

    fn winding(&self, rect: &Rect) -> std::result::Result<i64, Contour> {
        let c = rect.corners();
        let mut total = 0.0;
        for i in 0..4 {
            total += self.arg_change(c[i], c[(i + 1) % 4])?;
        }
        let w = total / (2.0 * PI);
        let rounded = w.round();
        if (w - rounded).abs() > 0.1 {
            return Err(Contour::OnRoot);
        }
        Ok(rounded as i64)
    }

    /// Newton on `det Δ` with the multiplicity-scaled step
    /// `λ ← λ − m / tr(Δ⁻¹Δ')`.
    fn newton(&self, start: Complex64, multiplicity: usize) -> Complex64 {
        let mut z = start;
        for _ in 0..self.opts.newton_iterations {
            let d = self.measure.char_delta(z);
            let dd = self.measure.char_delta_derivative(z);
            let Some(inv) = d.try_inverse() else { break };
            let trace = (inv * dd).trace();
            if trace.norm() == 0.0 || !trace.is_finite() {
                break;
            }
            let step = Complex64::new(multiplicity as f64, 0.0) / trace;
            z -= step;
            if step.norm() <= 1e-15 * (1.0 + z.norm()) {
                break;
            }
        }
        z
    }

    fn refine(&self, rect: Rect, w: i64, out: &mut Vec<CharacteristicRoot>) -> Result<()> {
        if w <= 0 {
            if w < 0 {
                return Err(Error::WindingInconsistency(format!("negative winding {w} in {rect:?}")));
            }
            return Ok(());
        }
        let small = rect.width().max(rect.height()) < self.opts.min_cell;
        if w > 1 && !small {
            let z = self.newton(rect.center(), w as usize);
            let rho = 1e-3 * rect.width().min(rect.height());
            let probe = Rect::new(z.re - rho, z.re + 0.97 * rho, z.im - 1.03 * rho, z.im + rho);
            if self.det(z).norm() < self.opts.tol
                && rect.contains(z, -rho)
                && matches!(self.winding(&probe), Ok(pw) if pw == w)
            {
                let residual = self.det(z).norm();
                out.push(CharacteristicRoot { re: z.re, im: z.im, multiplicity: w as usize, residual });
                return Ok(());
            }
        }
        if w == 1 || small {
            let z = self.newton(rect.center(), w as usize);
            let residual = self.det(z).norm();
            let slack = 1e-9 * (1.0 + z.norm());
            if residual < self.opts.tol && rect.contains(z, slack) {
                out.push(CharacteristicRoot { re: z.re, im: z.im, multiplicity: w as usize, residual });
                return Ok(());
            }
            if small {
                return Err(Error::Numerical(format!(
                    "newton failed in minimal cell {rect:?} (winding {w}, residual {residual:e})"
                )));
            }
        }
        for (retry, &(fx, fy)) in SPLITS.iter().enumerate() {
            let cells = rect.split(fx, fy);
            let windings: std::result::Result<Vec<i64>, Contour> = cells.iter().map(|c| self.winding(c)).collect();
            match windings {
                Ok(ws) => {
                    let sum: i64 = ws.iter().sum();
                    if sum != w {
                        if retry + 1 == SPLITS.len() {
                            return Err(Error::WindingInconsistency(format!(
                                "sub-cells of {rect:?} wind {sum} times, parent {w}"
                            )));
                        }
                        continue;
                    }
                    for (c, wc) in cells.iter().zip(ws) {
                        self.refine(*c, wc, out)?;
                    }
                    return Ok(());
                }
                Err(Contour::OnRoot) => continue,
            }
        }
        Err(Error::RootOnContour { retries: SPLITS.len() })
    }
}

/// All zeros of `det Δ` in `region`, sorted by `(Re, Im)`.
///
/// When a root sits on the outer contour the rectangle is enlarged slightly
/// and the search is retried.
pub fn find_roots(measure: &DelayMeasure, region: Rect, opts: RootOptions) -> Result<(Vec<CharacteristicRoot>, Rect)> {
    let finder = Finder { measure, opts, oscillation: 8.0 * (1.0 + measure.max_delay()) };
    let mut rect = region;
    for attempt in 0..=opts.max_retries {
        match finder.winding(&rect) {
            Ok(w) => {
                let mut roots = Vec::new();
                finder.refine(rect, w, &mut roots)?;
                let total: usize = roots.iter().map(|r| r.multiplicity).sum();
                if total as i64 != w {
                    return Err(Error::WindingInconsistency(format!(
                        "found {total} roots (with multiplicity), contour winding {w}"
                    )));
                }
                roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
                return Ok((roots, rect));
            }
            Err(Contour::OnRoot) => {
                let grow = 1e-3 * (attempt + 1) as f64 * (1.0 + rect.width().max(rect.height()) * 1e-3);
                log::debug!("root on contour of {rect:?}, enlarging by {grow}");
                rect = Rect::new(rect.re_min - grow, rect.re_max + 0.37 * grow, rect.im_min - 0.71 * grow, rect.im_max + grow);
            }
        }
    }
    Err(Error::RootOnContour { retries: opts.max_retries })
}

/// Winding number of `det Δ` around the boundary of `rect`.
pub fn winding_number(measure: &DelayMeasure, rect: &Rect) -> Result<i64> {
    let finder = Finder { measure, opts: RootOptions::default(), oscillation: 8.0 * (1.0 + measure.max_delay()) };
    finder.winding(rect).map_err(|_| Error::RootOnContour { retries: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_system_roots() {
        let m = DelayMeasure::scalar(1.0, &[(0.0, -1.0), (-1.0, 1.0)]).unwrap();
        let (roots, _) = find_roots(&m, Rect::new(-5.0, 1.0, -20.0, 20.0), RootOptions::default()).unwrap();
        let zero: Vec<_> = roots.iter().filter(|r| r.value().norm() < 1e-8).collect();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].multiplicity, 1);
        assert!(roots.iter().filter(|r| r.value().norm() >= 1e-8).all(|r| r.re < 0.0));
        // W_k(e) - 1 for k = ±1, ±2, ±3 lie within |Im| ≤ 20
        assert_eq!(roots.len(), 7);
        let nearest = roots.iter().filter(|r| r.im > 1.0).min_by(|a, b| a.im.total_cmp(&b.im)).unwrap();
        assert!((nearest.re + 1.532_092_121_99).abs() < 1e-9);
        assert!((nearest.im - 4.597_158_013_3).abs() < 1e-9);
    }

    #[test]
    fn double_root_has_multiplicity_two() {
        let m = DelayMeasure::scalar(1.0, &[(0.0, 1.0), (-1.0, -1.0)]).unwrap();
        let w = winding_number(&m, &Rect::new(-0.3, 0.2, -0.25, 0.35)).unwrap();
        assert_eq!(w, 2);
        let (roots, _) = find_roots(&m, Rect::new(-2.0, 0.5, -3.0, 3.0), RootOptions::default()).unwrap();
        let zero = roots.iter().find(|r| r.value().norm() < 1e-6).unwrap();
        assert_eq!(zero.multiplicity, 2);
    }

    #[test]
    fn root_on_contour_is_handled_by_enlarging() {
        let m = DelayMeasure::scalar(1.0, &[(0.0, -1.0), (-1.0, 1.0)]).unwrap();
        // the root λ = 0 lies on the right edge
        let (roots, rect) = find_roots(&m, Rect::new(-1.0, 0.0, -1.0, 1.0), RootOptions::default()).unwrap();
        assert!(rect.re_max > 0.0);
        assert_eq!(roots.len(), 1);
    }
}
