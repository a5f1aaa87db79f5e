//! Orthonormal DCT-II, applied as a small matrix product. Filterbank sizes
//! are a few dozen channels at most, so there is no need for a fast
//! transform here.

use crate::error::{FsvError, Result};

/// Rows of the orthonormal DCT-II matrix: `n_coeffs x n_inputs`.
///
/// Entry (k, i) is `s_k * cos(pi * k * (i + 0.5) / n_inputs)` with
/// `s_0 = sqrt(1/n)` and `s_k = sqrt(2/n)` otherwise, which makes the full
/// square matrix orthonormal.
pub fn dct2_matrix(n_coeffs: usize, n_inputs: usize) -> Vec<Vec<f64>> {
    let n = n_inputs as f64;
    (0..n_coeffs)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            (0..n_inputs)
                .map(|i| {
                    scale
                        * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()
                })
                .collect()
        })
        .collect()
}

/// First `n_coeffs` orthonormal DCT-II coefficients of `input`.
pub fn dct2_orthonormal(input: &[f64], n_coeffs: usize) -> Result<Vec<f64>> {
    if n_coeffs > input.len() {
        return Err(FsvError::config(format!(
            "requested {} DCT coefficients from {} inputs",
            n_coeffs,
            input.len()
        )));
    }
    let rows = dct2_matrix(n_coeffs, input.len());
    Ok(rows
        .iter()
        .map(|row| row.iter().zip(input).map(|(w, x)| w * x).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_matrix_is_orthonormal() {
        let n = 23;
        let m = dct2_matrix(n, n);
        for a in 0..n {
            for b in 0..n {
                let dot: f64 = (0..n).map(|i| m[a][i] * m[b][i]).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12, "rows {a},{b}: {dot}");
            }
        }
    }

    #[test]
    fn constant_input_hits_only_c0() {
        let n = 16;
        let coeffs = dct2_orthonormal(&vec![1.0; n], n).unwrap();
        assert!((coeffs[0] - (n as f64).sqrt()).abs() < 1e-12);
        for &c in &coeffs[1..] {
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn too_many_coefficients_is_error() {
        assert!(dct2_orthonormal(&[1.0, 2.0, 3.0], 4).is_err());
    }

    #[test]
    fn full_size_roundtrip_is_identity() {
        let input: Vec<f64> = (0..20).map(|i| ((i * i) % 9) as f64 - 4.0).collect();
        let coeffs = dct2_orthonormal(&input, 20).unwrap();
        // inverse = transpose of the orthonormal matrix
        let m = dct2_matrix(20, 20);
        for (i, &x) in input.iter().enumerate() {
            let back: f64 = (0..20).map(|k| m[k][i] * coeffs[k]).sum();
            assert!((back - x).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_naive_definition() {
        let input: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let coeffs = dct2_orthonormal(&input, 5).unwrap();
        let n = input.len() as f64;
        for (k, &c) in coeffs.iter().enumerate() {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let direct: f64 = input
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    x * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()
                })
                .sum::<f64>()
                * scale;
            assert!((c - direct).abs() < 1e-12);
        }
    }
}
