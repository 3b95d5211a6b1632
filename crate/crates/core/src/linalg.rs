//! Small dense helpers shared across modules.

use faer::{Mat, Side};

/// Ascending eigenvalues of a real symmetric row-major `d×d` matrix.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    match d {
        1 => vec![a[0]],
        2 => {
            let (p, q, r) = (a[0], 0.5 * (a[1] + a[2]), a[3]);
            let mean = 0.5 * (p + r);
            let rad = (0.25 * (p - r) * (p - r) + q * q).sqrt();
            vec![mean - rad, mean + rad]
        }
        _ => {
            let m = Mat::<f64>::from_fn(d, d, |i, j| 0.5 * (a[i * d + j] + a[j * d + i]));
            let mut ev = m
                .self_adjoint_eigenvalues(Side::Lower)
                .expect("symmetric eigenvalues of a small matrix");
            ev.sort_by(f64::total_cmp);
            ev
        }
    }
}

/// Inverse of a real row-major `d×d` matrix.
pub fn inverse(a: &[f64], d: usize) -> Vec<f64> {
    use faer::linalg::solvers::Solve;
    let m = Mat::<f64>::from_fn(d, d, |i, j| a[i * d + j]);
    let inv = m.partial_piv_lu().solve(Mat::<f64>::identity(d, d));
    (0..d * d).map(|e| inv[(e / d, e % d)]).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Smallest odd `n ≥ target` whose prime factors are 3, 5 or 7 (fast FFT sizes).
pub(crate) fn smooth_odd(target: usize) -> usize {
    let mut n = target | 1;
    loop {
        let mut r = n;
        for p in [3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return n;
        }
        n += 2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_2x2_and_3x3() {
        let ev = sym_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert!((ev[0] - 1.0).abs() < 1e-15 && (ev[1] - 3.0).abs() < 1e-15);
        let ev = sym_eigenvalues(&[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0], 3);
        assert!((ev[0] - 1.0).abs() < 1e-13 && (ev[2] - 5.0).abs() < 1e-13);
    }

    #[test]
    fn inverse_2x2() {
        let inv = inverse(&[2.0, 1.0, 1.0, 1.0], 2);
        for (x, y) in inv.iter().zip([1.0, -1.0, -1.0, 2.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_fft_sizes() {
        assert_eq!(smooth_odd(10), 15);
        assert_eq!(smooth_odd(27), 27);
        assert_eq!(smooth_odd(28), 35);
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-2.0)).collect();
        assert!((loglog_slope(&xs, &ys) + 2.0).abs() < 1e-12);
    }
}
