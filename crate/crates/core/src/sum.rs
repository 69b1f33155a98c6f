//! Compensated summation and canonical point ordering.
//!
//! Every reduction over atoms goes through these helpers so that results do
//! not depend on the order in which callers list their atoms or on how many
//! worker threads evaluate the outer loop.

use std::cmp::Ordering;

/// Neumaier-compensated accumulator for a fixed-width vector.
#[derive(Debug, Clone)]
pub struct CompensatedVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    pub fn reset(&mut self) {
        self.sum.iter_mut().for_each(|s| *s = 0.0);
        self.comp.iter_mut().for_each(|c| *c = 0.0);
    }

    #[inline]
    pub fn add(&mut self, values: &[f64]) {
        for ((s, c), &x) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            neumaier_step(s, c, x);
        }
    }

    #[inline]
    pub fn add_scaled(&mut self, alpha: f64, values: &[f64]) {
        for ((s, c), &x) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(values) {
            neumaier_step(s, c, alpha * x);
        }
    }

    pub fn write_into(&self, out: &mut [f64]) {
        for ((o, s), c) in out.iter_mut().zip(&self.sum).zip(&self.comp) {
            *o = s + c;
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.comp).map(|(s, c)| s + c).collect()
    }
}

#[inline]
fn neumaier_step(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Compensated sum of a scalar sequence, in the order given.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = 0.0;
    let mut c = 0.0;
    for x in values {
        neumaier_step(&mut s, &mut c, x);
    }
    s + c
}

/// Lexicographic total order on equal-length coordinate slices.
pub fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Indices of the `stride`-wide points in `flat`, sorted lexicographically by
/// coordinates (then by `tiebreak`, when given). Points that compare equal are
/// bitwise identical, so the resulting summation order is independent of
/// how the caller labelled them.
pub fn canonical_order(flat: &[f64], stride: usize, tiebreak: Option<&[f64]>) -> Vec<usize> {
    let n = if stride == 0 { 0 } else { flat.len() / stride };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| {
        lex_cmp(
            &flat[i * stride..(i + 1) * stride],
            &flat[j * stride..(j + 1) * stride],
        )
        .then_with(|| match tiebreak {
            Some(w) => w[i].total_cmp(&w[j]),
            None => Ordering::Equal,
        })
    });
    idx
}
