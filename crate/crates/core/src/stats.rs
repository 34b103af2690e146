//! Summary statistics and the hypothesis tests used by experiment reports.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// One-sided paired t-test of `H1: mean(a - b) > 0`. Returns the p-value;
/// constant differences give 0, 0.5 or 1 by their sign.
pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "paired test needs two equal-length samples of size >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&diffs).expect("non-empty");
    let sd = std_dev(&diffs).expect("n >= 2");
    if sd == 0.0 {
        return Ok(if m > 0.0 {
            0.0
        } else if m < 0.0 {
            1.0
        } else {
            0.5
        });
    }
    let t = m / (sd / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(1.0 - dist.cdf(t))
}

/// Pearson chi-square goodness of fit against uniform expected counts.
/// Returns the p-value.
pub fn chi_square_uniform(counts: &[u64]) -> Result<f64> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("chi-square needs >= 2 cells".into()));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("chi-square over zero observations".into()));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), Some(2.0));
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), Some(1.0));
        assert_eq!(mean(&[]), None);
        assert_eq!(std_dev(&[1.0]), None);
    }

    #[test]
    fn paired_test_reference_value() {
        // differences 1,2,3,4: mean 2.5, sd 1.2910, t = 3.873 with 3 dof.
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let p = paired_t_test_greater(&a, &b).unwrap();
        assert_abs_diff_eq!(p, 0.015229, epsilon = 1e-4);
        assert!(paired_t_test_greater(&b, &a).unwrap() > 0.95);
        assert!(paired_t_test_greater(&a, &b[..3]).is_err());
    }

    #[test]
    fn chi_square_reference_value() {
        assert_abs_diff_eq!(
            chi_square_uniform(&[10, 10, 10, 10]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // stat = (25+25)/50 = 1 with 1 dof: p = 0.3173.
        assert_abs_diff_eq!(
            chi_square_uniform(&[55, 45]).unwrap(),
            0.317311,
            epsilon = 1e-5
        );
    }
}
