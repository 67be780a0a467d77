//! Derivative-free simplex minimization.

/// Outcome of one simplex run.
#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Initial step per coordinate.
    pub steps: Vec<f64>,
    /// Stop once every vertex lies within this distance of the best one
    /// (max-norm, per coordinate).
    pub x_tolerance: f64,
    /// Stop once the spread of function values drops below this.
    pub f_tolerance: f64,
    pub max_iterations: usize,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// Minimizes `f` starting from `x0`. The start point is a simplex vertex, so
/// the returned value never exceeds `f(x0)`.
pub fn minimize(mut f: impl FnMut(&[f64]) -> f64, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    assert_eq!(opts.steps.len(), n, "one step per coordinate");
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0, &mut evaluations);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.steps[i];
        let v = eval(&x, &mut evaluations);
        simplex.push((x, v));
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        // stable sort keeps earlier vertices first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        let f_spread = simplex[n].1 - best.1;
        if x_spread <= opts.x_tolerance && f_spread <= opts.f_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(REFLECT);
        let fr = eval(&xr, &mut evaluations);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe, &mut evaluations);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[n].1 {
            let xc = along(REFLECT * CONTRACT);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        } else {
            let xc = along(-CONTRACT);
            let fc = eval(&xc, &mut evaluations);
            (xc, fc)
        };
        if fc < simplex[n].1.min(fr) {
            simplex[n] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = x_best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + SHRINK * (v - b))
                .collect();
            let v = eval(&x, &mut evaluations);
            *vertex = (x, v);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexResult {
        x,
        value,
        initial_value: f0,
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> SimplexOptions {
        SimplexOptions {
            steps: vec![0.5; n],
            x_tolerance: 1e-8,
            f_tolerance: 1e-14,
            max_iterations: 5000,
        }
    }

    #[test]
    fn quadratic_bowl_six_dims() {
        let target = [1.0, -2.0, 3.0, 0.5, -0.25, 4.0];
        let r = minimize(
            |x| x.iter().zip(&target).enumerate().map(|(i, (a, b))| (i + 1) as f64 * (a - b).powi(2)).sum(),
            &[0.0; 6],
            &opts(6),
        );
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.x);
        }
        assert!(r.value <= r.initial_value);
    }

    #[test]
    fn rosenbrock() {
        let r = minimize(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &opts(2),
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn iteration_cap_reports_not_converged() {
        let mut o = opts(2);
        o.max_iterations = 3;
        let r = minimize(|x| x[0] * x[0] + x[1] * x[1], &[10.0, 10.0], &o);
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
        assert!(r.value <= r.initial_value);
    }

    #[test]
    fn nan_treated_as_worst() {
        let r = minimize(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 1.0).powi(2) },
            &[0.1],
            &opts(1),
        );
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
