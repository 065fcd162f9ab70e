use super::params::Parameters;

/// Central finite-difference settings.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub epsilon: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Probe at most this many evenly strided coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            floor: 1e-6,
            max_coords_per_tensor: None,
        }
    }
}

/// Max over probed coordinates of `|a - n| / max(|a|, |n|, floor)` where `a` is
/// the analytic gradient and `n` the central difference of `loss`.
///
/// `loss` must be deterministic: freeze every random draw before calling.
pub fn gradient_check<P, G, F>(params: &P, analytic: &G, loss: F, opts: &GradCheck) -> f64
where
    P: Parameters + Clone,
    G: Parameters + ?Sized,
    F: Fn(&P) -> f64,
{
    let analytic = analytic.tensors();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    assert_eq!(analytic.len(), sizes.len(), "gradient/parameter tensor count");

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (ti, &len) in sizes.iter().enumerate() {
        assert_eq!(analytic[ti].len(), len, "gradient tensor {ti} length");
        let stride = match opts.max_coords_per_tensor {
            Some(max) if max > 0 && len > max => len.div_ceil(max),
            _ => 1,
        };
        for j in (0..len).step_by(stride) {
            let original = probe.tensors()[ti][j];
            probe.tensors_mut()[ti][j] = original + opts.epsilon;
            let up = loss(&probe);
            probe.tensors_mut()[ti][j] = original - opts.epsilon;
            let down = loss(&probe);
            probe.tensors_mut()[ti][j] = original;

            let numeric = (up - down) / (2.0 * opts.epsilon);
            let a = analytic[ti][j];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let p = vec![0.7, -1.3, 2.0];
        let coeff = [1.0, 3.0, 0.5];
        let loss = |q: &Vec<f64>| q.iter().zip(coeff).map(|(x, c)| c * x * x).sum::<f64>();
        let grad: Vec<f64> = p.iter().zip(coeff).map(|(x, c)| 2.0 * c * x).collect();
        let err = gradient_check(&p, &grad, loss, &GradCheck::default());
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = vec![1.0, 1.0];
        let loss = |q: &Vec<f64>| q[0] * q[0] + q[1];
        let err = gradient_check(&p, &vec![2.0, 0.5], loss, &GradCheck::default());
        assert!(err > 0.4);
    }

    #[test]
    fn stride_limits_probes() {
        use std::cell::Cell;
        let p = vec![0.0; 100];
        let calls = Cell::new(0);
        let loss = |q: &Vec<f64>| {
            calls.set(calls.get() + 1);
            q.iter().sum::<f64>()
        };
        let opts = GradCheck {
            max_coords_per_tensor: Some(10),
            ..GradCheck::default()
        };
        gradient_check(&p, &vec![1.0; 100], loss, &opts);
        assert_eq!(calls.get(), 20);
    }
}
