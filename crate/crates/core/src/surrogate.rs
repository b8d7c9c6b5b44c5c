//! Finite-dimensional bi-objective problems with known stationary paths,
//! used to check the tracer without any PDE noise.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{CorrectorError, ProblemError};
use crate::homotopy::{self, HomotopyConfig, Linearization, ParetoTrace, PathProblem};

/// Stationary point of `(1 - t)|x - a|^2 + t|x - b|^2`.
pub fn quad_pair_path(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| (1.0 - t) * a + t * b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateId {
    QuadPair { a: Vec<f64>, b: Vec<f64> },
    /// `f_i(x) = 1 - exp(-|x -+ c|^2)` with `c = (1, .., 1)/sqrt(n)`, whose
    /// front is concave over most of its length.
    NonconvexFront { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateProblem {
    pub id: SurrogateId,
}

pub fn quad_pair_problem(a: Vec<f64>, b: Vec<f64>) -> SurrogateProblem {
    assert_eq!(a.len(), b.len());
    SurrogateProblem { id: SurrogateId::QuadPair { a, b } }
}

pub fn nonconvex_front_problem() -> SurrogateProblem {
    SurrogateProblem { id: SurrogateId::NonconvexFront { n: 2 } }
}

impl SurrogateProblem {
    pub fn dim(&self) -> usize {
        match &self.id {
            SurrogateId::QuadPair { a, .. } => a.len(),
            SurrogateId::NonconvexFront { n } => *n,
        }
    }

    /// The two minimizers.
    fn anchors(&self) -> [Vec<f64>; 2] {
        match &self.id {
            SurrogateId::QuadPair { a, b } => [a.clone(), b.clone()],
            SurrogateId::NonconvexFront { n } => {
                let c = 1.0 / (*n as f64).sqrt();
                [vec![c; *n], vec![-c; *n]]
            }
        }
    }

    pub fn objectives(&self, x: &[f64]) -> [f64; 2] {
        let [a, b] = self.anchors();
        let d = [dist2(x, &a), dist2(x, &b)];
        match self.id {
            SurrogateId::QuadPair { .. } => d,
            SurrogateId::NonconvexFront { .. } => [1.0 - (-d[0]).exp(), 1.0 - (-d[1]).exp()],
        }
    }

    pub fn gradients(&self, x: &[f64]) -> [Vec<f64>; 2] {
        let anchors = self.anchors();
        let quad = matches!(self.id, SurrogateId::QuadPair { .. });
        anchors.map(|c| {
            let s = if quad { 2.0 } else { 2.0 * (-dist2(x, &c)).exp() };
            x.iter().zip(&c).map(|(x, c)| s * (x - c)).collect()
        })
    }

    pub fn hessian_pair(&self, x: &[f64]) -> [Mat<f64>; 2] {
        let n = x.len();
        let anchors = self.anchors();
        let quad = matches!(self.id, SurrogateId::QuadPair { .. });
        anchors.map(|c| {
            if quad {
                return Mat::from_fn(n, n, |i, j| if i == j { 2.0 } else { 0.0 });
            }
            // d^2/dx^2 (1 - e^{-r}) with r = |x - c|^2.
            let e = (-dist2(x, &c)).exp();
            Mat::from_fn(n, n, |i, j| {
                let delta = if i == j { 1.0 } else { 0.0 };
                2.0 * e * (delta - 2.0 * (x[i] - c[i]) * (x[j] - c[j]))
            })
        })
    }

    /// Closed-form stationary path, where one is known.
    pub fn path(&self, t: f64) -> Option<Vec<f64>> {
        match &self.id {
            SurrogateId::QuadPair { a, b } => Some(quad_pair_path(a, b, t)),
            SurrogateId::NonconvexFront { .. } => None,
        }
    }

    /// Gradient descent and Newton at `t = 0` from `x0`, then the trace.
    pub fn run(&self, x0: Vec<f64>, config: &HomotopyConfig) -> Result<ParetoTrace<Vec<f64>>, CorrectorError> {
        let init = homotopy::initialize_t0(self, x0, config)?;
        Ok(homotopy::trace(self, init.corrected, config, |_, _| {}))
    }
}

fn dist2(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum()
}

impl PathProblem for SurrogateProblem {
    type Design = Vec<f64>;
    type Frame = ();

    fn frame(&self, _: &Vec<f64>) -> Result<(), ProblemError> {
        Ok(())
    }

    fn linearize(&self, x: &Vec<f64>, _: &()) -> Result<Linearization, ProblemError> {
        Ok(Linearization { values: self.objectives(x), gradients: self.gradients(x) })
    }

    fn values(&self, x: &Vec<f64>) -> Result<[f64; 2], ProblemError> {
        Ok(self.objectives(x))
    }

    fn displace(&self, x: &Vec<f64>, _: &(), alpha: &[f64]) -> Result<Vec<f64>, ProblemError> {
        let y: Vec<f64> = x.iter().zip(alpha).map(|(x, a)| x + a).collect();
        if matches!(self.id, SurrogateId::NonconvexFront { .. }) && y.iter().any(|v| v.abs() > NONCONVEX_BOX) {
            return Err(ProblemError::OutOfDomain(format!("{y:?} leaves the box")));
        }
        Ok(y)
    }

    fn hessians(&self, x: &Vec<f64>, _: &(), _: &Linearization) -> Result<[Mat<f64>; 2], ProblemError> {
        Ok(self.hessian_pair(x))
    }

    /// The exponential objectives flatten out far from the anchors, where
    /// every point looks stationary; steps are kept short and inside a box.
    fn step_limit(&self, _: &(), alpha: &[f64]) -> f64 {
        match self.id {
            SurrogateId::QuadPair { .. } => f64::INFINITY,
            SurrogateId::NonconvexFront { .. } => {
                let n = alpha.iter().map(|a| a * a).sum::<f64>().sqrt();
                if n > 0.0 { (NONCONVEX_MAX_STEP / n).min(1.0) } else { 1.0 }
            }
        }
    }
}

/// Trust radius for one step on the nonconvex surrogate.
const NONCONVEX_MAX_STEP: f64 = 0.25;
/// Half-width of the square the nonconvex surrogate lives in.
pub const NONCONVEX_BOX: f64 = 1.0;

/// Settings for surrogate runs: the corrector tolerance sits near machine
/// precision since there is no discretization noise.
pub fn surrogate_config() -> HomotopyConfig {
    HomotopyConfig { tol: 1e-12, gd_tol: 1e-6, gd_max_iter: 10_000, max_points: 10_000, ..HomotopyConfig::default() }
}

/// Nondominated subset of `points` (minimization), sorted by the first
/// objective.
pub fn pareto_filter(mut points: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    points.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    let mut front = Vec::new();
    let mut best = f64::INFINITY;
    for p in points {
        if p[1] < best {
            best = p[1];
            front.push(p);
        }
    }
    front
}

/// Brute-force front of `problem` over an `m x m` grid on `[lo, hi]^2`.
pub fn brute_force_front(problem: &SurrogateProblem, lo: f64, hi: f64, m: usize) -> Vec<[f64; 2]> {
    assert_eq!(problem.dim(), 2);
    let h = (hi - lo) / (m - 1) as f64;
    let mut pts = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            pts.push(problem.objectives(&[lo + i as f64 * h, lo + j as f64 * h]));
        }
    }
    pareto_filter(pts)
}

/// Minimizer of `w f1 + (1 - w) f2` over `front` for `count` uniform weights
/// in `[0, 1]`.
pub fn weighted_sum_scan(front: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    (0..count)
        .map(|i| {
            let w = i as f64 / (count - 1) as f64;
            *front
                .iter()
                .min_by(|p, q| (w * p[0] + (1.0 - w) * p[1]).total_cmp(&(w * q[0] + (1.0 - w) * q[1])))
                .expect("nonempty front")
        })
        .collect()
}

/// Lower convex hull of points sorted by the first coordinate.
pub fn lower_hull(sorted: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for &p in sorted {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Height of `p` above the piecewise linear `hull`.
pub fn hull_gap(hull: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let k = hull.partition_point(|q| q[0] <= p[0]);
    if k == 0 || k == hull.len() {
        return 0.0;
    }
    let (a, b) = (hull[k - 1], hull[k]);
    let y = a[1] + (b[1] - a[1]) * (p[0] - a[0]) / (b[0] - a[0]);
    p[1] - y
}

pub fn distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).hypot(p[1] - q[1])
}

/// Distance from `p` to the nearest point of `set`.
pub fn set_distance(set: &[[f64; 2]], p: [f64; 2]) -> f64 {
    set.iter().map(|q| distance(*q, p)).fold(f64::INFINITY, f64::min)
}

/// Front points that no weighted sum can reach: strictly above the lower
/// convex hull by more than `gap`.
pub fn nonconvex_segment(front: &[[f64; 2]], gap: f64) -> Vec<[f64; 2]> {
    let hull = lower_hull(front);
    front.iter().copied().filter(|p| hull_gap(&hull, *p) > gap).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homotopy::Predictor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quad_pair_endpoints_and_midpoint() {
        let (a, b) = (vec![0.0, 0.0], vec![1.0, 0.0]);
        assert_eq!(quad_pair_path(&a, &b, 0.0), a);
        assert_eq!(quad_pair_path(&a, &b, 1.0), b);
        let p = quad_pair_problem(a.clone(), b.clone());
        let mid = quad_pair_path(&a, &b, 0.5);
        assert_eq!(mid, vec![0.5, 0.0]);
        assert_eq!(p.objectives(&mid), [0.25, 0.25]);

        // Grid minimization of the blended objective over [-1, 2]^2.
        let m = 3001;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for i in 0..m {
            for j in 0..m {
                let x = [-1.0 + 3.0 * i as f64 / (m - 1) as f64, -1.0 + 3.0 * j as f64 / (m - 1) as f64];
                let [f1, f2] = p.objectives(&x);
                let v = 0.5 * f1 + 0.5 * f2;
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        assert!((best.1[0] - 0.5).abs() < 1e-9 && best.1[1].abs() < 1e-9, "{:?}", best.1);
    }

    #[test]
    fn gradients_and_hessians_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [quad_pair_problem(vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.2]), nonconvex_front_problem()] {
            let n = p.dim();
            for _ in 0..5 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let g = p.gradients(&x);
                let h = p.hessian_pair(&x);
                let eps = 1e-6;
                for j in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += eps;
                    xm[j] -= eps;
                    let (fp, fm) = (p.objectives(&xp), p.objectives(&xm));
                    let (gp, gm) = (p.gradients(&xp), p.gradients(&xm));
                    for k in 0..2 {
                        assert!(((fp[k] - fm[k]) / (2.0 * eps) - g[k][j]).abs() < 1e-8);
                        for i in 0..n {
                            assert!(((gp[k][i] - gm[k][i]) / (2.0 * eps) - h[k][(i, j)]).abs() < 1e-7);
                        }
                    }
                }
            }
        }
    }

    fn fixed_step(predictor: Predictor) -> HomotopyConfig {
        HomotopyConfig { dt_init: 0.1, dt_max: 0.1, fixed_step: true, predictor, ..surrogate_config() }
    }

    #[test]
    fn quad_pair_trace_follows_closed_form() {
        let (a, b) = (vec![0.0, 0.0, 1.0], vec![1.0, -2.0, 0.5]);
        let p = quad_pair_problem(a.clone(), b.clone());
        let tr = p.run(vec![5.0, 5.0, 5.0], &fixed_step(Predictor::Warm)).unwrap();
        assert_eq!(tr.termination, homotopy::Termination::ReachedT1);
        assert_eq!(tr.points.len(), 11);
        for (k, (pt, x)) in tr.points.iter().zip(&tr.designs).enumerate() {
            assert!((pt.t - k as f64 / 10.0).abs() < 1e-12, "t = {}", pt.t);
            let exact = quad_pair_path(&a, &b, pt.t);
            assert!(dist2(x, &exact).sqrt() < 1e-8);
            assert!(pt.residual <= 1e-12);
            if k > 0 {
                assert_eq!(pt.corrector_iters, 1);
            }
        }
    }

    #[test]
    fn euler_predictor_is_exact_on_linear_path() {
        let (a, b) = (vec![0.0, 0.0], vec![1.0, 3.0]);
        let p = quad_pair_problem(a.clone(), b.clone());
        let tr = p.run(vec![0.0, 0.0], &fixed_step(Predictor::Euler)).unwrap();
        assert_eq!(tr.points.len(), 11);
        assert!(tr.points[1..].iter().all(|pt| pt.corrector_iters == 0));

        let at = homotopy::newton_correct(&p, vec![0.4, 0.4], 0.3, &surrogate_config()).unwrap();
        let guess = homotopy::predict(&p, &at, 0.3, 0.25, Predictor::Euler, [1.0, 1.0]);
        assert!(dist2(&guess, &quad_pair_path(&a, &b, 0.55)).sqrt() < 1e-14);
        for mode in [Predictor::Warm, Predictor::Euler] {
            assert_eq!(homotopy::predict(&p, &at, 0.3, 0.0, mode, [1.0, 1.0]), at.design);
        }
    }

    #[test]
    fn newton_converges_in_one_iteration_on_quad_pair() {
        let p = quad_pair_problem(vec![1.0, 2.0], vec![-3.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-100.0..100.0)).collect();
            let t = rng.random_range(0.0..1.0);
            let c = homotopy::newton_correct(&p, x, t, &surrogate_config()).unwrap();
            assert_eq!(c.iterations(), 1);
        }
        let x = quad_pair_path(&[1.0, 2.0], &[-3.0, 0.0], 0.25);
        let c = homotopy::newton_correct(&p, x.clone(), 0.25, &surrogate_config()).unwrap();
        assert_eq!(c.iterations(), 0);
        assert_eq!(c.design, x);
    }

    #[test]
    fn residual_blends_linearly() {
        let p = nonconvex_front_problem();
        let x = vec![0.2, -0.7];
        let g = p.gradients(&x);
        let w = [1.0, 1.0];
        assert_eq!(homotopy::homotopy_residual(&p, &x, 0.0, w).unwrap(), g[0]);
        assert_eq!(homotopy::homotopy_residual(&p, &x, 1.0, w).unwrap(), g[1]);
        let mid = homotopy::homotopy_residual(&p, &x, 0.5, w).unwrap();
        for i in 0..2 {
            assert_eq!(mid[i], 0.5 * g[0][i] + 0.5 * g[1][i]);
        }
    }

    #[test]
    fn pareto_filter_and_hull() {
        let front = pareto_filter(vec![[0.0, 1.0], [1.0, 1.0], [0.5, 0.8], [1.0, 0.0], [0.6, 0.9], [0.2, 0.95]]);
        assert_eq!(front, vec![[0.0, 1.0], [0.2, 0.95], [0.5, 0.8], [1.0, 0.0]]);
        let hull = lower_hull(&front);
        assert_eq!(hull, vec![[0.0, 1.0], [1.0, 0.0]]);
        assert!((hull_gap(&hull, [0.5, 0.8]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn nonconvex_front_oracle() {
        let p = nonconvex_front_problem();
        let front = brute_force_front(&p, -1.0, 1.0, 2000);
        let spacing = front.windows(2).map(|w| distance(w[0], w[1])).fold(0.0, f64::max);
        let segment = nonconvex_segment(&front, 1e-3);
        assert!(spacing < 1e-3);
        assert!(segment.len() > front.len() / 2);
        // The segment bulges above the chord joining the front's endpoints.
        let (a, b) = (front[0], *front.last().unwrap());
        assert!(segment.iter().filter(|p| hull_gap(&[a, b], **p) > 0.0).count() > segment.len() / 2);
        let scan = weighted_sum_scan(&front, 100);
        let miss = segment.iter().map(|q| set_distance(&scan, *q)).fold(f64::INFINITY, f64::min);
        assert!(miss > 5.0 * spacing, "scan comes within {miss} of the segment");

        let tr = p.run(vec![0.3, 0.1], &surrogate_config()).unwrap();
        assert_eq!(tr.termination, homotopy::Termination::DtUnderflow);
        assert!(tr.points.iter().all(|q| q.residual <= 1e-12));
        let hits = tr.points.iter().filter(|q| set_distance(&segment, [q.j1, q.j2]) < 1e-3).count();
        assert!(hits >= 1);
        // No traced point is beaten by the grid front beyond its resolution.
        for q in &tr.points {
            assert!(!front.iter().any(|f| f[0] < q.j1 - spacing && f[1] < q.j2 - spacing));
        }
    }
}
