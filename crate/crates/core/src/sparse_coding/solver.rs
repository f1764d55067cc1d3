//! Nonnegative lasso: `min_{a >= 0} ||y - B a||^2 + lambda * ||a||_1`.
//!
//! Written in Gram form as `min_{a >= 0} 1/2 a^T G a - d^T a` with
//! `G = B^T B` and `d = B^T y - lambda / 2`. Cold solves run a greedy
//! active-set method (Lawson-Hanson style) that adds the most violated
//! coordinate each round, which also picks the smallest-l1 exact fit when
//! `lambda = 0` leaves several. Warm solves run a few cyclic
//! coordinate-descent sweeps from the supplied point and then let the
//! active-set loop fix the support exactly.

use ndarray::{Array1, Array2, ArrayView1};

use super::{Activation, Dictionary, Result, SparseCodingError};

/// Stopping threshold on the most violated reduced gradient, relative to
/// `max(||B^T y||_inf, lambda / 2)`.
const ACTIVE_SET_TOL: f64 = 1e-12;
/// Cholesky pivots below this fraction of the largest diagonal entry mark
/// the passive set as numerically dependent.
const PIVOT_TOL: f64 = 1e-13;
const WARM_SWEEPS: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverStats {
    pub sweeps: usize,
    pub active_set_rounds: usize,
    pub cold_restarts: usize,
}

/// Precomputed Gram matrix for repeated solves against one dictionary.
#[derive(Debug, Clone)]
pub(crate) struct SparseCoder<'d> {
    dict: &'d Dictionary,
    gram: Array2<f64>,
}

impl<'d> SparseCoder<'d> {
    pub(crate) fn new(dict: &'d Dictionary) -> Self {
        let b = dict.basis();
        Self {
            dict,
            gram: b.t().dot(b),
        }
    }

    fn validate(&self, y: &[f64], lambda: f64) -> Result<Array1<f64>> {
        self.dict.check_signal(y)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(SparseCodingError::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(self.dict.basis().t().dot(&ArrayView1::from(y)))
    }

    pub(crate) fn infer(&self, y: &[f64], lambda: f64) -> Result<(Activation, SolverStats)> {
        let corr = self.validate(y, lambda)?;
        let problem = Problem::new(&self.gram, &corr, lambda);
        let mut stats = SolverStats::default();
        let mut a = vec![0.0; self.dict.n()];
        problem
            .active_set(&mut a, &mut stats)
            .expect("cold active set starts from an empty passive set");
        Ok((Activation::new(Array1::from(a))?, stats))
    }

    pub(crate) fn infer_from(
        &self,
        y: &[f64],
        lambda: f64,
        warm: &Activation,
    ) -> Result<(Activation, SolverStats)> {
        if warm.len() != self.dict.n() {
            return Err(SparseCodingError::DimensionMismatch {
                what: "warm-start length vs dictionary columns",
                expected: self.dict.n(),
                found: warm.len(),
            });
        }
        let corr = self.validate(y, lambda)?;
        let problem = Problem::new(&self.gram, &corr, lambda);
        let mut stats = SolverStats::default();
        let mut a = warm.as_slice().to_vec();
        problem.coordinate_descent(&mut a, WARM_SWEEPS, &mut stats);
        if problem.active_set(&mut a, &mut stats).is_err() {
            stats.cold_restarts += 1;
            a.iter_mut().for_each(|v| *v = 0.0);
            problem
                .active_set(&mut a, &mut stats)
                .expect("cold active set starts from an empty passive set");
        }
        Ok((Activation::new(Array1::from(a))?, stats))
    }
}

/// Nonnegative activation for `y` against `dict` with sparsity weight `lambda`.
pub fn infer_activation(y: &[f64], dict: &Dictionary, lambda: f64) -> Result<Activation> {
    SparseCoder::new(dict).infer(y, lambda).map(|(a, _)| a)
}

/// Same problem as [`infer_activation`], started from `warm`.
pub fn infer_activation_from(
    y: &[f64],
    dict: &Dictionary,
    lambda: f64,
    warm: &Activation,
) -> Result<Activation> {
    SparseCoder::new(dict)
        .infer_from(y, lambda, warm)
        .map(|(a, _)| a)
}

/// Largest violation of the nonnegative-lasso optimality conditions,
/// relative to `max(2 ||B^T y||_inf, lambda)`.
///
/// With `g = 2 B^T (B a - y) + lambda`, coordinate `i` contributes `|g_i|`
/// when `a_i > 0` and `max(0, -g_i)` when `a_i = 0`.
pub fn kkt_residual(y: &[f64], dict: &Dictionary, a: &Activation, lambda: f64) -> Result<f64> {
    dict.check_signal(y)?;
    let fit = dict.reconstruct(a)?;
    let residual = Array1::from_iter(y.iter().zip(fit.iter()).map(|(yv, fv)| fv - yv));
    let b = dict.basis();
    let grad = b.t().dot(&residual).mapv(|v| 2.0 * v + lambda);
    let corr = b.t().dot(&ArrayView1::from(y));
    let scale = (2.0 * corr.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .max(lambda)
        .max(f64::MIN_POSITIVE);
    let worst = a
        .coeffs()
        .iter()
        .zip(grad.iter())
        .map(|(&ai, &gi)| if ai > 0.0 { gi.abs() } else { (-gi).max(0.0) })
        .fold(0.0f64, f64::max);
    Ok(worst / scale)
}

#[derive(Debug)]
struct Singular;

struct Problem<'g> {
    gram: &'g Array2<f64>,
    /// `B^T y - lambda / 2`
    d: Array1<f64>,
    tol: f64,
}

impl<'g> Problem<'g> {
    fn new(gram: &'g Array2<f64>, corr: &Array1<f64>, lambda: f64) -> Self {
        let scale = corr
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(lambda / 2.0);
        Self {
            gram,
            d: corr.mapv(|c| c - lambda / 2.0),
            tol: ACTIVE_SET_TOL * scale,
        }
    }

    /// `d - G a`, the negative gradient of the reduced objective.
    fn negative_gradient(&self, a: &[f64]) -> Array1<f64> {
        let mut w = self.d.clone();
        for (k, &ak) in a.iter().enumerate() {
            if ak != 0.0 {
                w.scaled_add(-ak, &self.gram.column(k));
            }
        }
        w
    }

    fn coordinate_descent(&self, a: &mut [f64], sweeps: usize, stats: &mut SolverStats) {
        let mut w = self.negative_gradient(a);
        for _ in 0..sweeps {
            stats.sweeps += 1;
            let mut moved = 0.0f64;
            for i in 0..a.len() {
                let gii = self.gram[[i, i]];
                let next = (a[i] + w[i] / gii).max(0.0);
                let delta = next - a[i];
                if delta != 0.0 {
                    a[i] = next;
                    w.scaled_add(-delta, &self.gram.column(i));
                    moved = moved.max(delta.abs());
                }
            }
            if moved == 0.0 {
                break;
            }
        }
    }

    fn active_set(&self, a: &mut [f64], stats: &mut SolverStats) -> Result<(), Singular> {
        let n = a.len();
        let mut passive: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
        for v in a.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if !passive.is_empty() {
            self.restrict_to_optimum(a, &mut passive)?;
        }

        let mut banned = vec![false; n];
        let mut in_passive = vec![false; n];
        for &i in &passive {
            in_passive[i] = true;
        }
        for _ in 0..(10 * n + 100) {
            stats.active_set_rounds += 1;
            let w = self.negative_gradient(a);
            let candidate = (0..n)
                .filter(|&i| !in_passive[i] && !banned[i])
                .max_by(|&i, &j| w[i].total_cmp(&w[j]));
            let Some(j) = candidate else { break };
            if w[j] <= self.tol {
                break;
            }
            passive.push(j);
            if self.restrict_to_optimum(a, &mut passive).is_err() {
                // Column j is numerically dependent on the passive set: trade
                // it in along the null direction instead, if that descends.
                passive = (0..n).filter(|&i| a[i] > 0.0).collect();
                let traded = a[j] == 0.0
                    && self.pivot(a, &passive, j).is_some()
                    && {
                        passive = (0..n).filter(|&i| a[i] > 0.0).collect();
                        self.restrict_to_optimum(a, &mut passive).is_ok()
                    };
                passive = (0..n).filter(|&i| a[i] > 0.0).collect();
                if !traded {
                    banned[j] = true;
                }
            }
            in_passive.iter_mut().for_each(|v| *v = false);
            for &i in &passive {
                in_passive[i] = true;
            }
            if a[j] > 0.0 {
                banned.iter_mut().for_each(|v| *v = false);
            } else {
                banned[j] = true;
            }
        }
        Ok(())
    }

    /// Moves `a` toward the unconstrained minimizer on `passive`, dropping
    /// coordinates that hit zero on the way, until that minimizer is
    /// strictly positive. Every step is a convex combination, so the
    /// objective never increases.
    fn restrict_to_optimum(&self, a: &mut [f64], passive: &mut Vec<usize>) -> Result<(), Singular> {
        for _ in 0..(2 * a.len() + 10) {
            if passive.is_empty() {
                return Ok(());
            }
            let z = self.solve_passive(passive).ok_or(Singular)?;
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &zi) in passive.iter().zip(&z) {
                    a[i] = zi;
                }
                return Ok(());
            }
            let mut alpha = 1.0f64;
            for (&i, &zi) in passive.iter().zip(&z) {
                if zi <= 0.0 {
                    let ai = a[i];
                    alpha = alpha.min(if ai - zi > 0.0 { ai / (ai - zi) } else { 0.0 });
                }
            }
            for (&i, &zi) in passive.iter().zip(&z) {
                a[i] += alpha * (zi - a[i]);
            }
            // The blocking coordinate(s) land on zero up to rounding.
            let mut blocked = false;
            for (&i, &zi) in passive.iter().zip(&z) {
                if zi <= 0.0 && a[i] <= 1e-14 * a[i].abs().max(1.0) {
                    a[i] = 0.0;
                    blocked = true;
                }
            }
            if !blocked {
                // Rounding left every blocker marginally positive; zero the
                // one with the tightest ratio.
                let (&i, _) = passive
                    .iter()
                    .zip(&z)
                    .filter(|(_, &zi)| zi <= 0.0)
                    .min_by(|x, y| a[*x.0].total_cmp(&a[*y.0]))
                    .expect("a non-positive component exists");
                a[i] = 0.0;
            }
            passive.retain(|&i| a[i] > 0.0);
        }
        Ok(())
    }

    /// Exact line search from `a` along `e_j - z`, where `G_PP z = G_Pj`
    /// expresses column `j` through the passive columns, stopping early when
    /// a passive coordinate reaches zero. Returns `None` when the direction
    /// does not descend or cannot be formed.
    fn pivot(&self, a: &mut [f64], passive: &[usize], j: usize) -> Option<()> {
        let w = self.negative_gradient(a);
        let g_pj: Vec<f64> = passive.iter().map(|&i| self.gram[[i, j]]).collect();
        let z = if passive.is_empty() {
            Vec::new()
        } else {
            let mut m = Array2::<f64>::zeros((passive.len(), passive.len()));
            for (r, &i) in passive.iter().enumerate() {
                for (c, &k) in passive.iter().enumerate() {
                    m[[r, c]] = self.gram[[i, k]];
                }
            }
            Cholesky::factor(&m)?.solve(&g_pj)
        };
        let slope = w[j] - passive.iter().zip(&z).map(|(&i, zi)| zi * w[i]).sum::<f64>();
        if !(slope > self.tol) {
            return None;
        }
        let curvature = (self.gram[[j, j]] - g_pj.iter().zip(&z).map(|(g, zi)| g * zi).sum::<f64>()).max(0.0);
        let mut step = if curvature > 0.0 { slope / curvature } else { f64::INFINITY };
        let mut blocker = None;
        for (&i, &zi) in passive.iter().zip(&z) {
            if zi > 0.0 && a[i] / zi < step {
                step = a[i] / zi;
                blocker = Some(i);
            }
        }
        if !step.is_finite() {
            return None;
        }
        a[j] = step;
        for (&i, &zi) in passive.iter().zip(&z) {
            a[i] = (a[i] - step * zi).max(0.0);
        }
        if let Some(i) = blocker {
            a[i] = 0.0;
        }
        Some(())
    }

    fn solve_passive(&self, passive: &[usize]) -> Option<Vec<f64>> {
        let k = passive.len();
        let mut m = Array2::<f64>::zeros((k, k));
        for (r, &i) in passive.iter().enumerate() {
            for (c, &j) in passive.iter().enumerate() {
                m[[r, c]] = self.gram[[i, j]];
            }
        }
        let rhs: Vec<f64> = passive.iter().map(|&i| self.d[i]).collect();
        let chol = Cholesky::factor(&m)?;
        let mut z = chol.solve(&rhs);
        // Two rounds of iterative refinement against the gathered system.
        for _ in 0..2 {
            let r: Vec<f64> = (0..k)
                .map(|row| rhs[row] - m.row(row).iter().zip(&z).map(|(g, v)| g * v).sum::<f64>())
                .collect();
            let delta = chol.solve(&r);
            z.iter_mut().zip(&delta).for_each(|(v, dv)| *v += dv);
        }
        z.iter().all(|v| v.is_finite()).then_some(z)
    }
}

/// Lower-triangular factor of a symmetric positive definite matrix.
struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    fn factor(m: &Array2<f64>) -> Option<Self> {
        let k = m.nrows();
        let max_diag = m.diag().iter().fold(0.0f64, |acc, v| acc.max(*v));
        let floor = PIVOT_TOL * max_diag;
        let mut l = Array2::<f64>::zeros((k, k));
        for j in 0..k {
            let mut diag = m[[j, j]];
            for p in 0..j {
                diag -= l[[j, p]] * l[[j, p]];
            }
            if !(diag > floor) {
                return None;
            }
            let ljj = diag.sqrt();
            l[[j, j]] = ljj;
            for i in (j + 1)..k {
                let mut s = m[[i, j]];
                for p in 0..j {
                    s -= l[[i, p]] * l[[j, p]];
                }
                l[[i, j]] = s / ljj;
            }
        }
        Some(Self { l })
    }

    #[allow(clippy::needless_range_loop)]
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let k = rhs.len();
        let mut x = rhs.to_vec();
        for i in 0..k {
            let mut s = x[i];
            for p in 0..i {
                s -= self.l[[i, p]] * x[p];
            }
            x[i] = s / self.l[[i, i]];
        }
        for i in (0..k).rev() {
            let mut s = x[i];
            for p in (i + 1)..k {
                s -= self.l[[p, i]] * x[p];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::super::objective;
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(super) fn random_dict(t: usize, n: usize, seed: u64) -> Dictionary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dictionary::normalized(Array2::from_shape_fn((t, n), |_| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn identity_dictionary_recovers_signal() {
        let d = Dictionary::new(Array2::eye(3)).unwrap();
        let a = infer_activation(&[3.0, 1.0, 4.0], &d, 0.0).unwrap();
        for (got, want) in a.as_slice().iter().zip([3.0, 1.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_signal_gives_zero_activation() {
        let d = random_dict(6, 10, 1);
        for lambda in [0.0, 0.1, 10.0] {
            let a = infer_activation(&[0.0; 6], &d, lambda).unwrap();
            assert!(a.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    /// Grid search over a >= 0, then a finer grid around the best cell.
    /// Ties on the objective go to the smaller l1 norm.
    fn grid_oracle(y: &[f64], d: &Dictionary, lambda: f64) -> [f64; 3] {
        let eval = |a: [f64; 3]| {
            let act = Activation::from_vec(a.to_vec()).unwrap();
            (objective(y, d, &act, lambda).unwrap(), a.iter().sum::<f64>())
        };
        let better = |x: (f64, f64), y: (f64, f64)| x.0 < y.0 - 1e-15 || (x.0 <= y.0 + 1e-15 && x.1 < y.1);
        let mut best = [0.0; 3];
        let mut best_v = eval(best);
        let mut centre = [1.5; 3];
        let mut half = 1.5;
        for _ in 0..8 {
            let steps = 30;
            let h = 2.0 * half / steps as f64;
            for i in 0..=steps {
                for j in 0..=steps {
                    for k in 0..=steps {
                        let a = [
                            (centre[0] - half + i as f64 * h).max(0.0),
                            (centre[1] - half + j as f64 * h).max(0.0),
                            (centre[2] - half + k as f64 * h).max(0.0),
                        ];
                        let v = eval(a);
                        if better(v, best_v) {
                            best = a;
                            best_v = v;
                        }
                    }
                }
            }
            centre = best;
            half /= 6.0;
        }
        best
    }

    #[test]
    fn degenerate_exact_fit_prefers_smallest_l1() {
        let d = Dictionary::new(array![[1.0, 0.0, 0.6], [0.0, 1.0, 0.8], [0.0, 0.0, 0.0]]).unwrap();
        let y = [1.2, 1.6, 0.0];
        let oracle = grid_oracle(&y, &d, 0.0);
        assert!((oracle[2] - 2.0).abs() < 1e-3, "oracle {oracle:?}");
        let a = infer_activation(&y, &d, 0.0).unwrap();
        for (got, want) in a.as_slice().iter().zip([0.0, 0.0, 2.0]) {
            assert!((got - want).abs() < 1e-6, "{a:?}");
        }
    }

    #[test]
    fn matches_grid_oracle_with_penalty() {
        let d = random_dict(3, 3, 11);
        let y = [1.0, 0.4, 0.7];
        let lambda = 0.2;
        let a = infer_activation(&y, &d, lambda).unwrap();
        let oracle = grid_oracle(&y, &d, lambda);
        let f_solver = objective(&y, &d, &a, lambda).unwrap();
        let f_oracle = objective(&y, &d, &Activation::from_vec(oracle.to_vec()).unwrap(), lambda).unwrap();
        assert!(f_solver <= f_oracle + 1e-12, "{f_solver} vs {f_oracle}");
        assert!(kkt_residual(&y, &d, &a, lambda).unwrap() < 1e-8);
    }

    #[test]
    fn square_system_matches_direct_solve() {
        // Nonnegative-solvable: y = B x with x > 0.
        let d = random_dict(5, 5, 3);
        let x = [0.5, 1.0, 2.0, 0.25, 1.5];
        let y = d.basis().dot(&ArrayView1::from(&x[..])).to_vec();
        let a = infer_activation(&y, &d, 0.0).unwrap();
        for (got, want) in a.as_slice().iter().zip(x) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn warm_start_reaches_same_objective() {
        let d = random_dict(12, 30, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let y: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 10.0).collect();
        let lambda = 0.05;
        let cold = infer_activation(&y, &d, lambda).unwrap();
        let warm_start = Activation::from_vec((0..30).map(|_| rng.random::<f64>()).collect()).unwrap();
        let warm = infer_activation_from(&y, &d, lambda, &warm_start).unwrap();
        let fc = objective(&y, &d, &cold, lambda).unwrap();
        let fw = objective(&y, &d, &warm, lambda).unwrap();
        assert!((fc - fw).abs() <= 1e-9 * fc.max(1.0), "{fc} vs {fw}");
        assert!(kkt_residual(&y, &d, &warm, lambda).unwrap() < 1e-8);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = random_dict(3, 4, 1);
        assert!(infer_activation(&[1.0, f64::NAN, 0.0], &d, 0.1).is_err());
        assert!(infer_activation(&[1.0, 0.0], &d, 0.1).is_err());
        assert!(infer_activation(&[1.0, 0.0, 0.0], &d, -1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kkt_and_descent_hold(seed in 0u64..10_000, t in 2usize..10, extra in 1usize..12, lambda in 0.0f64..2.0) {
            let n = t + extra;
            let d = random_dict(t, n, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let y: Vec<f64> = (0..t).map(|_| rng.random::<f64>() * 5.0).collect();
            let a = infer_activation(&y, &d, lambda).unwrap();
            prop_assert!(a.as_slice().iter().all(|&v| v >= 0.0));
            prop_assert!(kkt_residual(&y, &d, &a, lambda).unwrap() < 1e-8);
            let f = objective(&y, &d, &a, lambda).unwrap();
            let f0 = objective(&y, &d, &Activation::zeros(n), lambda).unwrap();
            prop_assert!(f <= f0 + 1e-12);
        }
    }
}
