use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% quantile of Student's t with `df` degrees of freedom.
pub fn student_t_975(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1").inverse_cdf(0.975)
}

/// Sample mean and 95% half-width `t * s / sqrt(n)`; the half-width is 0
/// for a single sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, student_t_975(n - 1) * (var / n as f64).sqrt())
}
