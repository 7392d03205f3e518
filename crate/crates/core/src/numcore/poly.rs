//! Real polynomials as coefficient lists in descending powers.

use super::Mat;
use crate::{Error, Result};

/// Drops leading zeros, keeping at least one coefficient.
pub fn trim(p: &[f64]) -> Vec<f64> {
    let first = p.iter().position(|&c| c != 0.0).unwrap_or(p.len().saturating_sub(1));
    if p.is_empty() {
        return vec![0.0];
    }
    p[first..].to_vec()
}

pub fn degree(p: &[f64]) -> usize {
    trim(p).len() - 1
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let (a, b) = (trim(a), trim(b));
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, x) in a.iter().rev().enumerate() {
        out[n - 1 - i] += x;
    }
    for (i, x) in b.iter().rev().enumerate() {
        out[n - 1 - i] += x;
    }
    trim(&out)
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|c| c * k).collect()
}

/// Horner evaluation.
pub fn eval(p: &[f64], x: f64) -> f64 {
    p.iter().fold(0.0, |acc, c| acc * x + c)
}

/// Roots as `(re, im)` pairs via the eigenvalues of the companion matrix.
pub fn roots(p: &[f64]) -> Result<Vec<(f64, f64)>> {
    let p = trim(p);
    if p[0] == 0.0 {
        return Err(Error::Domain("zero polynomial has no roots".into()));
    }
    let n = p.len() - 1;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut comp = Mat::zeros(n, n);
    for j in 0..n {
        comp[(0, j)] = -p[j + 1] / p[0];
    }
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    Ok(comp.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect())
}

/// All roots strictly left of `-margin`. Constants count as Hurwitz.
pub fn is_hurwitz(p: &[f64], margin: f64) -> Result<bool> {
    Ok(roots(p)?.iter().all(|&(re, _)| re < -margin))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic() {
        assert_eq!(mul(&[1.0, 1.0], &[1.0, 1.0]), vec![1.0, 2.0, 1.0]);
        assert_eq!(add(&[1.0, 0.0, 0.0], &[-1.0, 3.0, 2.0]), vec![3.0, 2.0]);
        assert_eq!(eval(&[1.0, 20.0, 100.0], -10.0), 0.0);
        assert_eq!(degree(&[0.0, 0.0, 2.0, 1.0]), 1);
    }

    #[test]
    fn hurwitz() {
        assert!(is_hurwitz(&[1.0, 30.0, 229.0], 1e-9).unwrap());
        assert!(!is_hurwitz(&[1.0, -1.0], 1e-9).unwrap());
        assert!(!is_hurwitz(&[1.0, 0.0, 1.0], 1e-9).unwrap());
        let r = roots(&[1.0, 3.0, 2.0]).unwrap();
        let mut re: Vec<f64> = r.iter().map(|z| z.0).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] + 2.0).abs() < 1e-12 && (re[1] + 1.0).abs() < 1e-12);
    }
}
