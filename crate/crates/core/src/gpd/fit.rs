use super::optim::{bisect, nelder_mead};
use super::{Compressed, ExceedanceSample, GpdError, GpdParams, XI_ZERO};

const POS_GRID: usize = 200;
const NEG_GRID: usize = 200;

/// Compact parameter set for fitting. The scale bounds are relative to the
/// weighted mean positive exceedance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaBox {
    pub sigma_lo_rel: f64,
    pub sigma_hi_rel: f64,
    pub xi_lo: f64,
    pub xi_hi: f64,
}

impl Default for ThetaBox {
    fn default() -> Self {
        Self { sigma_lo_rel: 1e-6, sigma_hi_rel: 1e6, xi_lo: -0.99, xi_hi: 10.0 }
    }
}

impl ThetaBox {
    pub fn with_xi(xi_lo: f64, xi_hi: f64) -> Self {
        Self { xi_lo, xi_hi, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GpdError> {
        let ok = self.sigma_lo_rel > 0.0
            && self.sigma_lo_rel < self.sigma_hi_rel
            && self.sigma_hi_rel.is_finite()
            && self.xi_lo > -1.0
            && self.xi_lo < self.xi_hi
            && self.xi_hi.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GpdError::InvalidSample(format!("invalid parameter box {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    s_lo: f64,
    s_hi: f64,
    x_lo: f64,
    x_hi: f64,
}

impl Bounds {
    fn new(b: &ThetaBox, zbar: f64) -> Self {
        Self { s_lo: b.sigma_lo_rel * zbar, s_hi: b.sigma_hi_rel * zbar, x_lo: b.xi_lo, x_hi: b.xi_hi }
    }

    fn contains(&self, sigma: f64, xi: f64) -> bool {
        (self.s_lo..=self.s_hi).contains(&sigma) && (self.x_lo..=self.x_hi).contains(&xi)
    }

    fn on_xi_edge(&self, xi: f64) -> bool {
        xi <= self.x_lo || xi >= self.x_hi
    }
}

/// Shrinkage of the shape toward `xi_anchor`, added to the likelihood
/// scaled by `k_over_n_scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub xi_anchor: f64,
    pub k_over_n_scale: f64,
}

impl PenaltyConfig {
    pub fn new(lambda: f64, xi_anchor: f64, k_over_n_scale: f64) -> Result<Self, GpdError> {
        let p = Self { lambda, xi_anchor, k_over_n_scale };
        p.validate()?;
        Ok(p)
    }

    pub fn none() -> Self {
        Self { lambda: 0.0, xi_anchor: 0.0, k_over_n_scale: 1.0 }
    }

    pub fn validate(&self) -> Result<(), GpdError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GpdError::InvalidPenalty(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.xi_anchor.is_finite() {
            return Err(GpdError::InvalidPenalty("anchor must be finite".into()));
        }
        if !(self.k_over_n_scale > 0.0 && self.k_over_n_scale.is_finite()) {
            return Err(GpdError::InvalidPenalty(format!(
                "likelihood scale must be positive, got {}",
                self.k_over_n_scale
            )));
        }
        Ok(())
    }
}

/// How a fitted point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitPath {
    /// Stationary point inside the box.
    Interior,
    /// Profile optimum on a shape bound of the box.
    Boundary,
    /// No admissible root of the reduced equation; direct minimization.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpdFit {
    pub params: GpdParams,
    pub path: FitPath,
    /// Deviance averaged with weights renormalized over positive exceedances.
    pub mean_deviance: f64,
}

fn reduced_h(cz: &Compressed, t: f64) -> f64 {
    let (a, c) = cz.log_and_ratio(t);
    a - c - a * c
}

fn ratio(cz: &Compressed, t: f64) -> f64 {
    cz.z.iter().zip(&cz.w).map(|(&z, &w)| w * (t * z) / (1.0 + t * z)).sum()
}

fn roots(cz: &Compressed) -> Vec<f64> {
    let (zbar, zmin, zmax) = (cz.mean(), cz.min(), cz.max());
    let h = |t: f64| reduced_h(cz, t);
    let mut out = Vec::new();
    let mut scan = |grid: &[f64]| {
        let mut prev = (grid[0], h(grid[0]));
        for &t in &grid[1..] {
            let ht = h(t);
            if ht == 0.0 {
                out.push(t);
            } else if prev.1 != 0.0 && (prev.1 > 0.0) != (ht > 0.0) {
                out.push(bisect(h, prev.0, t, prev.1));
            }
            prev = (t, ht);
        }
    };

    let (lo, hi) = ((1e-8 / zbar).ln(), (1e4 / zmin).ln());
    let pos: Vec<f64> =
        (0..POS_GRID).map(|i| (lo + (hi - lo) * i as f64 / (POS_GRID - 1) as f64).exp()).collect();
    scan(&pos);

    // t in (-1/zmax, 0) as t = -v/zmax; v geometric away from 0 and from the pole.
    let half = NEG_GRID / 2;
    let geo = |a: f64, b: f64, i: usize| (a.ln() + (b.ln() - a.ln()) * i as f64 / (half - 1) as f64).exp();
    let mut neg: Vec<f64> = (0..half).map(|i| geo(1e-8, 0.5, i)).collect();
    neg.extend((1..half).map(|i| 1.0 - geo(0.5, 1e-12, i)));
    let neg: Vec<f64> = neg.into_iter().rev().map(|v| -v / zmax).collect();
    scan(&neg);
    out
}

/// Profile scale at shape `xi`: the unique stationary point of the deviance
/// in `sigma` for fixed `xi`.
fn profile_sigma(cz: &Compressed, xi: f64) -> f64 {
    if xi.abs() < XI_ZERO {
        return cz.mean();
    }
    let target = xi / (1.0 + xi);
    let t = if xi > 0.0 {
        let mut hi = 1.0 / cz.mean();
        while ratio(cz, hi) <= target && hi < f64::MAX / 4.0 {
            hi *= 2.0;
        }
        let f = |t: f64| ratio(cz, t) - target;
        bisect(f, 0.0, hi, f(0.0))
    } else {
        let zmax = cz.max();
        let f = |v: f64| ratio(cz, -v / zmax) - target;
        -bisect(f, 0.0, 1.0, f(0.0)) / zmax
    };
    xi / t
}

fn profile_point(cz: &Compressed, bx: &Bounds, xi: f64) -> (f64, f64) {
    let sigma = profile_sigma(cz, xi).clamp(bx.s_lo, bx.s_hi);
    (sigma, cz.nll(sigma, xi))
}

/// d(deviance)/d(xi) at fixed sigma, averaged with the normalized weights.
fn dnll_dxi(cz: &Compressed, sigma: f64, xi: f64) -> f64 {
    let mut acc = 0.0;
    for (&z, &w) in cz.z.iter().zip(&cz.w) {
        let r = z / sigma;
        let u = xi * r;
        let d = if u.abs() < 0.1 {
            let mut s = 0.0;
            let mut pow = 1.0;
            for k in 2..24 {
                let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
                s += sign * (k - 1) as f64 / k as f64 * pow;
                pow *= u;
            }
            r * r * s + r / (1.0 + u)
        } else {
            (u / (1.0 + u) - u.ln_1p()) / (xi * xi) + r / (1.0 + u)
        };
        acc += w * d;
    }
    acc
}

/// Non-zero roots of `h(t) = f(t) g(t) - 1` found on the search grid.
pub fn grimshaw_roots(sample: &ExceedanceSample) -> Result<Vec<f64>, GpdError> {
    let cz = sample.compress()?;
    Ok(roots(&cz))
}

fn identifiable(sample: &ExceedanceSample, theta_box: &ThetaBox) -> Result<Compressed, GpdError> {
    theta_box.validate()?;
    let cz = sample.compress()?;
    if cz.len() < 2 {
        return Err(GpdError::NotIdentifiable(cz.len()));
    }
    Ok(cz)
}

fn best_of(cands: impl IntoIterator<Item = (f64, f64, FitPath, f64)>) -> Option<(f64, f64, FitPath, f64)> {
    cands.into_iter().filter(|c| c.3.is_finite()).fold(None, |acc, c| match acc {
        Some(a) if a.3 <= c.3 => Some(a),
        _ => Some(c),
    })
}

fn finish(sigma: f64, xi: f64, path: FitPath, nll: f64) -> Result<GpdFit, GpdError> {
    Ok(GpdFit { params: GpdParams::new(sigma, xi)?, path, mean_deviance: nll })
}

/// Weighted GPD maximum likelihood over `theta_box` via the one-dimensional
/// reduction in `t = xi / sigma`.
pub fn grimshaw_fit(sample: &ExceedanceSample, theta_box: &ThetaBox) -> Result<GpdFit, GpdError> {
    let cz = identifiable(sample, theta_box)?;
    let bx = Bounds::new(theta_box, cz.mean());

    let mut cands = Vec::new();
    for t in roots(&cz) {
        let (a, _) = cz.log_and_ratio(t);
        let (xi, sigma) = (a, a / t);
        if bx.contains(sigma, xi) {
            let nll = cz.nll(sigma, xi);
            if nll.is_finite() {
                cands.push((sigma, xi, FitPath::Interior, nll));
            }
        }
    }
    let found_root = !cands.is_empty();
    if bx.contains(cz.mean(), 0.0) {
        cands.push((cz.mean(), 0.0, FitPath::Interior, cz.nll(cz.mean(), 0.0)));
    }
    for xi in [bx.x_lo, bx.x_hi] {
        let (sigma, nll) = profile_point(&cz, &bx, xi);
        cands.push((sigma, xi, FitPath::Boundary, nll));
    }

    if !found_root {
        let obj = |p: &[f64; 2]| {
            let (s, x) = (p[0].exp().clamp(bx.s_lo, bx.s_hi), p[1].clamp(bx.x_lo, bx.x_hi));
            cz.nll(s, x)
        };
        let (p, _) = nelder_mead(obj, [cz.mean().ln(), 0.1], [0.5, 0.2], 1e-14, 4000);
        let (s, x) = (p[0].exp().clamp(bx.s_lo, bx.s_hi), p[1].clamp(bx.x_lo, bx.x_hi));
        cands.push((s, x, FitPath::Fallback, cz.nll(s, x)));
        cands.iter_mut().for_each(|c| c.2 = FitPath::Fallback);
    }

    let (sigma, xi, path, nll) = best_of(cands).ok_or(GpdError::NoData)?;
    finish(sigma, xi, path, nll)
}

/// Minimizes `k_over_n_scale * mean deviance + lambda * (xi - anchor)^2`
/// over `theta_box`.
pub fn penalized_fit(
    sample: &ExceedanceSample,
    penalty: &PenaltyConfig,
    theta_box: &ThetaBox,
) -> Result<GpdFit, GpdError> {
    penalty.validate()?;
    let base = grimshaw_fit(sample, theta_box)?;
    if penalty.lambda == 0.0 {
        return Ok(base);
    }
    let cz = identifiable(sample, theta_box)?;
    let bx = Bounds::new(theta_box, cz.mean());
    let (scale, lambda, anchor) = (penalty.k_over_n_scale, penalty.lambda, penalty.xi_anchor);
    let objective = |sigma: f64, xi: f64| scale * cz.nll(sigma, xi) + lambda * (xi - anchor).powi(2);
    let slope = |xi: f64| {
        let sigma = profile_sigma(&cz, xi).clamp(bx.s_lo, bx.s_hi);
        scale * dnll_dxi(&cz, sigma, xi) + 2.0 * lambda * (xi - anchor)
    };

    let anchor_in = anchor.clamp(bx.x_lo, bx.x_hi);
    let starts = [
        (base.params.sigma, base.params.xi),
        (profile_point(&cz, &bx, anchor_in).0, anchor_in),
    ];
    let mut cands = Vec::new();
    for (s0, x0) in starts {
        let obj = |p: &[f64; 2]| {
            objective(p[0].exp().clamp(bx.s_lo, bx.s_hi), p[1].clamp(bx.x_lo, bx.x_hi))
        };
        let (p, _) = nelder_mead(obj, [s0.ln(), x0], [0.1, 0.05], 1e-13, 2000);
        let xi = polish(slope, p[1].clamp(bx.x_lo, bx.x_hi), bx.x_lo, bx.x_hi);
        let sigma = profile_sigma(&cz, xi).clamp(bx.s_lo, bx.s_hi);
        cands.push((sigma, xi, objective(sigma, xi)));
    }
    let (sigma, xi, value) = cands
        .into_iter()
        .filter(|c| c.2.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or(GpdError::NoData)?;
    let path = match base.path {
        FitPath::Fallback => FitPath::Fallback,
        _ if bx.on_xi_edge(xi) => FitPath::Boundary,
        _ => FitPath::Interior,
    };
    finish(sigma, xi, path, (value - lambda * (xi - anchor).powi(2)) / scale)
}

/// Walks downhill along the profile from `xi0` and bisects the first sign
/// change of the profile slope; stops on a shape bound otherwise.
fn polish(slope: impl Fn(f64) -> f64, xi0: f64, lo: f64, hi: f64) -> f64 {
    let mut x = xi0;
    let mut d = slope(x);
    if d == 0.0 || !d.is_finite() {
        return x;
    }
    let dir = if d > 0.0 { -1.0 } else { 1.0 };
    let mut step = 1e-4 * (1.0 + x.abs());
    loop {
        let next = (x + dir * step).clamp(lo, hi);
        let dn = slope(next);
        if !dn.is_finite() {
            return x;
        }
        if dn == 0.0 {
            return next;
        }
        if (dn > 0.0) != (d > 0.0) {
            return bisect(&slope, x, next, d);
        }
        if next == lo || next == hi {
            return next;
        }
        x = next;
        d = dn;
        step *= 2.0;
    }
}

/// Residuals of the first-order conditions of the penalized problem at
/// `params`: the shape equation carries the penalty term, the scale
/// equation is unchanged.
pub fn penalized_foc_residual(
    sample: &ExceedanceSample,
    params: &GpdParams,
    penalty: &PenaltyConfig,
) -> Result<[f64; 2], GpdError> {
    penalty.validate()?;
    let cz = sample.compress()?;
    let (sigma, xi) = (params.sigma, params.xi);
    let mut log_sum = 0.0;
    let mut inv_sum = 0.0;
    for (&z, &w) in cz.z.iter().zip(&cz.w) {
        let u = xi * z / sigma;
        log_sum += w * u.ln_1p();
        inv_sum += w / (1.0 + u);
    }
    let r1 = log_sum - xi - 2.0 * penalty.lambda * xi * xi * (xi - penalty.xi_anchor) / penalty.k_over_n_scale;
    let r2 = inv_sum - 1.0 / (1.0 + xi);
    Ok([r1, r2])
}

/// Uniform-weight fit on the positive entries of `z`.
pub fn unconditional_fit(z: &[f64], theta_box: &ThetaBox) -> Result<GpdFit, GpdError> {
    grimshaw_fit(&ExceedanceSample::uniform(z.to_vec())?, theta_box)
}
