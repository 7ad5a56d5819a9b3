//! Small derivative-free and bracketing routines used by the GPD solvers.

/// Nelder-Mead minimization of `f` from `x0` with initial simplex offsets
/// `step`. Stops when the spread of simplex values drops below `ftol` or
/// after `max_iter` iterations.
pub(crate) fn nelder_mead<const N: usize>(
    f: impl Fn(&[f64; N]) -> f64,
    x0: [f64; N],
    step: [f64; N],
    ftol: f64,
    max_iter: usize,
) -> ([f64; N], f64) {
    let mut simplex: Vec<([f64; N], f64)> = Vec::with_capacity(N + 1);
    simplex.push((x0, f(&x0)));
    for i in 0..N {
        let mut x = x0;
        x[i] += step[i];
        simplex.push((x, f(&x)));
    }
    let order = |s: &mut Vec<([f64; N], f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));

    for _ in 0..max_iter {
        order(&mut simplex);
        let best = simplex[0].1;
        let worst = simplex[N].1;
        if (worst - best).abs() <= ftol * (1.0 + best.abs()) && worst.is_finite() {
            break;
        }
        let mut centroid = [0.0; N];
        for (x, _) in &simplex[..N] {
            for j in 0..N {
                centroid[j] += x[j] / N as f64;
            }
        }
        let along = |coef: f64| {
            let mut x = [0.0; N];
            for j in 0..N {
                x[j] = centroid[j] + coef * (simplex[N].0[j] - centroid[j]);
            }
            x
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[N] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[N - 1].1 {
            simplex[N] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst {
            let x = along(-0.5);
            (x, f(&x))
        } else {
            let x = along(0.5);
            (x, f(&x))
        };
        if fc < worst.min(fr) {
            simplex[N] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0;
        for (x, fx) in simplex.iter_mut().skip(1) {
            for j in 0..N {
                x[j] = x_best[j] + 0.5 * (x[j] - x_best[j]);
            }
            *fx = f(x);
        }
    }
    order(&mut simplex);
    simplex[0]
}

/// Bisection for a sign change of `f` on `[lo, hi]`; `f_lo` is `f(lo)`.
/// Runs until the interval can no longer be halved in floating point.
pub(crate) fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, f_lo: f64) -> f64 {
    let lo_sign = f_lo > 0.0;
    for _ in 0..400 {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + 0.5 * (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, fx) = nelder_mead(f, [-1.2, 1.0], [0.1, 0.1], 1e-15, 5000);
        assert!(fx < 1e-10, "{fx}");
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn bisect_sqrt2() {
        let f = |x: f64| x * x - 2.0;
        let r = bisect(f, 0.0, 2.0, f(0.0));
        assert!((r - 2f64.sqrt()).abs() < 1e-15);
    }
}
