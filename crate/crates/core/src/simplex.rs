//! Points on the probability simplex and the microscopic operations on them:
//! categorical sampling, empirical (Top-m) messages, tempering, the K=2 bias
//! tilt and the listener's convex update.

use serde::{Deserialize, Serialize};

use crate::error::{QsgError, Result};
use crate::rng::RandomSource;

/// Negative weights down to this magnitude are treated as rounding and clamped.
pub const NEGATIVE_CLAMP: f64 = 1e-12;
/// Allowed deviation of the weight sum from 1.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A label index in `0..K`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn new(index: usize, k: usize) -> Result<Self> {
        if index >= k {
            return Err(QsgError::LabelOutOfRange { index, k });
        }
        Ok(Label(index))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A probability vector over K >= 2 labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector {
    weights: Vec<f64>,
}

impl SimplexVector {
    /// Validates `weights`: K >= 2, finite, each >= -1e-12 and summing to 1
    /// within 1e-9. Tiny negatives are clamped to zero and the vector is
    /// renormalized.
    pub fn new(mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(QsgError::InvalidDimension(weights.len()));
        }
        let mut clamped = false;
        for (k, w) in weights.iter_mut().enumerate() {
            if !w.is_finite() {
                return Err(QsgError::InvalidWeights(format!("weight {k} is {w}")));
            }
            if *w < 0.0 {
                if *w < -NEGATIVE_CLAMP {
                    return Err(QsgError::InvalidWeights(format!("weight {k} is negative ({w})")));
                }
                *w = 0.0;
                clamped = true;
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(QsgError::InvalidWeights(format!("weights sum to {sum}")));
        }
        if clamped || sum != 1.0 {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        Ok(Self { weights })
    }

    /// Normalizes arbitrary nonnegative masses (counts, unnormalized scores).
    pub fn from_masses(masses: Vec<f64>) -> Result<Self> {
        if masses.len() < 2 {
            return Err(QsgError::InvalidDimension(masses.len()));
        }
        if masses.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(QsgError::InvalidWeights("masses must be finite and nonnegative".into()));
        }
        let sum: f64 = masses.iter().sum();
        if sum <= 0.0 {
            return Err(QsgError::InvalidWeights("masses sum to zero".into()));
        }
        Ok(Self {
            weights: masses.into_iter().map(|w| w / sum).collect(),
        })
    }

    /// Wraps weights already known to be a valid simplex point.
    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        debug_assert!(weights.len() >= 2);
        debug_assert!(weights.iter().all(|w| *w >= -NEGATIVE_CLAMP));
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() <= SUM_TOLERANCE);
        Self { weights }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, label: Label) -> f64 {
        self.weights[label.0]
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Squared Euclidean norm.
    pub fn norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    pub fn dot(&self, other: &SimplexVector) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| a * b).sum()
    }

    /// Largest coordinate and its label, lowest index on ties.
    pub fn argmax(&self) -> (Label, f64) {
        let mut best = 0;
        for (k, w) in self.weights.iter().enumerate().skip(1) {
            if *w > self.weights[best] {
                best = k;
            }
        }
        (Label(best), self.weights[best])
    }

    /// The vertex this point sits on, if every coordinate is within `tol` of
    /// a one-hot vector.
    pub fn as_vertex(&self, tol: f64) -> Option<Label> {
        let (label, top) = self.argmax();
        if (top - 1.0).abs() > tol {
            return None;
        }
        let rest_ok = self
            .weights
            .iter()
            .enumerate()
            .all(|(k, w)| k == label.0 || w.abs() <= tol);
        rest_ok.then_some(label)
    }

    /// In-place listener step `x <- x + alpha (y - x)`; `alpha == 1` copies `y`.
    #[inline]
    pub(crate) fn blend_in_place(&mut self, y: &[f64], alpha: f64) {
        debug_assert_eq!(y.len(), self.weights.len());
        if alpha == 1.0 {
            self.weights.copy_from_slice(y);
        } else {
            for (x, t) in self.weights.iter_mut().zip(y) {
                *x += alpha * (t - *x);
            }
        }
    }

    /// Same as [`blend_in_place`](Self::blend_in_place) toward the vertex `e_k`.
    #[inline]
    pub(crate) fn blend_toward_vertex(&mut self, k: usize, alpha: f64) {
        if alpha == 1.0 {
            self.weights.iter_mut().for_each(|x| *x = 0.0);
            self.weights[k] = 1.0;
        } else {
            for (j, x) in self.weights.iter_mut().enumerate() {
                let t = if j == k { 1.0 } else { 0.0 };
                *x += alpha * (t - *x);
            }
        }
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = QsgError;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        SimplexVector::new(value)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(value: SimplexVector) -> Self {
        value.weights
    }
}

/// The symmetric point `1/K`.
pub fn uniform_vector(k: usize) -> Result<SimplexVector> {
    if k < 2 {
        return Err(QsgError::InvalidDimension(k));
    }
    Ok(SimplexVector::from_raw(vec![1.0 / k as f64; k]))
}

/// The one-hot vector `e_k`.
pub fn vertex(k: usize, label: Label) -> Result<SimplexVector> {
    if k < 2 {
        return Err(QsgError::InvalidDimension(k));
    }
    if label.0 >= k {
        return Err(QsgError::LabelOutOfRange { index: label.0, k });
    }
    let mut w = vec![0.0; k];
    w[label.0] = 1.0;
    Ok(SimplexVector::from_raw(w))
}

/// Inverse-CDF lookup of `u` in `[0, 1)` against `weights` in stored order.
#[inline]
pub(crate) fn inverse_cdf(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    // Cumulative sum fell short of u by rounding.
    last_positive
}

/// Draws one label from `Cat(x)` using exactly one uniform.
pub fn sample_label(x: &SimplexVector, rng: &mut RandomSource) -> Label {
    Label(inverse_cdf(&x.weights, rng.uniform()))
}

/// The Top-m empirical message `(1/m) sum_j e_{k_j}` with `k_j ~ Cat(x)` i.i.d.
pub fn empirical_message(x: &SimplexVector, m: usize, rng: &mut RandomSource) -> Result<SimplexVector> {
    if m == 0 {
        return Err(QsgError::InvalidBandwidth(m));
    }
    let mut counts = vec![0u32; x.k()];
    for _ in 0..m {
        counts[inverse_cdf(&x.weights, rng.uniform())] += 1;
    }
    Ok(SimplexVector::from_raw(
        counts.into_iter().map(|c| c as f64 / m as f64).collect(),
    ))
}

/// In-place tempering of raw weights; see [`temper`].
pub(crate) fn temper_in_place(w: &mut [f64], temperature: f64) {
    if temperature == 1.0 {
        return;
    }
    let inv_t = 1.0 / temperature;
    let max_log = w
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x.ln() * inv_t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in w.iter_mut() {
        if *x > 0.0 {
            *x = (x.ln() * inv_t - max_log).exp();
            sum += *x;
        }
    }
    w.iter_mut().for_each(|x| *x /= sum);
}

/// Temperature transform `g_T(x)_k ∝ x_k^{1/T}`.
///
/// Evaluated in log space with the maximum subtracted, so strongly peaked
/// inputs at small `T` do not underflow. Zero coordinates stay zero for every
/// `T` (the limit convention at the simplex boundary). `T = 1` returns `x`
/// unchanged. The `T -> 0` argmax limit is not applied; `T <= 0` is an error.
pub fn temper(x: &SimplexVector, temperature: f64) -> Result<SimplexVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(QsgError::InvalidTemperature(temperature));
    }
    let mut w = x.weights.clone();
    temper_in_place(&mut w, temperature);
    Ok(SimplexVector::from_raw(w))
}

/// Speaker-side sampling bias for K=2: `p e^h / (p e^h + 1 - p)`.
pub fn bias_tilt(p: f64, h: f64) -> f64 {
    if h == 0.0 {
        return p;
    }
    let a = p * h.exp();
    a / (a + (1.0 - p))
}

/// Listener update `(1 - alpha) x_L + alpha y`, evaluated as `x_L + alpha (y - x_L)`
/// so a message equal to the listener leaves it bit-identical.
pub fn listener_update(x_l: &SimplexVector, y: &SimplexVector, alpha: f64) -> Result<SimplexVector> {
    check_rate(alpha)?;
    if x_l.k() != y.k() {
        return Err(QsgError::DimensionMismatch {
            expected: x_l.k(),
            found: y.k(),
        });
    }
    let mut out = x_l.clone();
    out.blend_in_place(&y.weights, alpha);
    Ok(out)
}

pub(crate) fn check_rate(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(QsgError::InvalidRate(alpha))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(w: &[f64]) -> SimplexVector {
        SimplexVector::new(w.to_vec()).unwrap()
    }

    fn assert_closed(x: &SimplexVector) {
        assert!(x.weights().iter().all(|w| *w >= -1e-12), "{x:?}");
        assert!((x.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9, "{x:?}");
    }

    #[test]
    fn uniform_vector_cases() {
        assert_eq!(uniform_vector(2).unwrap().weights(), &[0.5, 0.5]);
        assert!(uniform_vector(10).unwrap().weights().iter().all(|w| *w == 0.1));
        assert!((uniform_vector(3).unwrap().norm_sq() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(uniform_vector(1), Err(QsgError::InvalidDimension(1)));
    }

    #[test]
    fn vertex_cases() {
        assert_eq!(vertex(3, Label(0)).unwrap().weights(), &[1.0, 0.0, 0.0]);
        assert_eq!(vertex(2, Label(1)).unwrap().weights(), &[0.0, 1.0]);
        assert_eq!(vertex(4, Label(2)).unwrap().norm_sq(), 1.0);
        assert!(matches!(vertex(3, Label(3)), Err(QsgError::LabelOutOfRange { .. })));
    }

    #[test]
    fn constructor_clamps_and_rejects() {
        let x = sv(&[-5e-13, 0.5, 0.5 + 5e-13]);
        assert_eq!(x.weights()[0], 0.0);
        assert_closed(&x);
        assert!(SimplexVector::new(vec![-1e-6, 1.0 + 1e-6]).is_err());
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![1.0]).is_err());
        assert!(SimplexVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn sample_degenerate_vertex() {
        let mut rng = RandomSource::from_seed(1);
        let x = sv(&[1.0, 0.0, 0.0]);
        for _ in 0..10_000 {
            assert_eq!(sample_label(&x, &mut rng), Label(0));
        }
        let x = sv(&[0.0, 0.0, 1.0]);
        for _ in 0..10_000 {
            assert_eq!(sample_label(&x, &mut rng), Label(2));
        }
    }

    #[test]
    fn sample_frequencies_within_binomial_bands() {
        let mut rng = RandomSource::from_seed(2);
        let n = 1_000_000usize;
        let x = sv(&[0.5, 0.5]);
        let zeros = (0..n).filter(|_| sample_label(&x, &mut rng) == Label(0)).count();
        let f = zeros as f64 / n as f64;
        assert!((f - 0.5).abs() <= 0.0016, "{f}");

        let p = [0.2, 0.3, 0.5];
        let x = sv(&p);
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_label(&x, &mut rng).index()] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / n as f64;
            let se = (p[k] * (1.0 - p[k]) / n as f64).sqrt();
            assert!((f - p[k]).abs() <= 3.0 * se, "label {k}: {f}");
        }
    }

    #[test]
    fn sampling_consumes_one_event() {
        let x = sv(&[0.2, 0.3, 0.5]);
        let mut a = RandomSource::from_seed(3);
        let mut b = RandomSource::from_seed(3);
        sample_label(&x, &mut a);
        b.uniform();
        assert_eq!(a.uniform(), b.uniform());
    }

    #[test]
    fn empirical_message_cases() {
        let mut rng = RandomSource::from_seed(4);
        let x = sv(&[0.3, 0.7]);
        for _ in 0..100 {
            assert!(empirical_message(&x, 1, &mut rng).unwrap().as_vertex(0.0).is_some());
        }
        let v = sv(&[0.0, 1.0, 0.0]);
        for m in [1, 3, 17] {
            assert_eq!(empirical_message(&v, m, &mut rng).unwrap(), v);
        }
        let y = empirical_message(&sv(&[0.2, 0.3, 0.5]), 7, &mut rng).unwrap();
        for w in y.weights() {
            let c = w * 7.0;
            assert!((c - c.round()).abs() < 1e-12);
        }
        assert_eq!(empirical_message(&x, 0, &mut rng), Err(QsgError::InvalidBandwidth(0)));
    }

    #[test]
    fn empirical_message_moments_m4() {
        // Oracle: for x=(1/2,1/2), m=4 the count of label 0 is Binomial(4, 1/2).
        // Enumerating the 5 outcomes gives mean 1/2 and variance 0.25/4 per coordinate.
        let probs = [1.0, 4.0, 6.0, 4.0, 1.0].map(|c| c / 16.0);
        let oracle_mean: f64 = (0..5).map(|j| probs[j] * j as f64 / 4.0).sum();
        let oracle_var: f64 = (0..5)
            .map(|j| probs[j] * (j as f64 / 4.0 - oracle_mean).powi(2))
            .sum();
        assert!((oracle_var - 0.0625).abs() < 1e-15);

        let mut rng = RandomSource::from_seed(5);
        let n = 100_000;
        let x = sv(&[0.5, 0.5]);
        let ys: Vec<f64> = (0..n)
            .map(|_| empirical_message(&x, 4, &mut rng).unwrap().weights()[0])
            .collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - oracle_mean).abs() <= 3.0 * (oracle_var / n as f64).sqrt());
        // Var of the sample variance: (mu4 - sigma^4) / n.
        let mu4: f64 = (0..5)
            .map(|j| probs[j] * (j as f64 / 4.0 - oracle_mean).powi(4))
            .sum();
        let se_var = ((mu4 - oracle_var * oracle_var) / n as f64).sqrt();
        assert!((var - oracle_var).abs() <= 3.0 * se_var, "{var}");
    }

    #[test]
    fn message_variance_scales_inverse_m() {
        use rand_distr::{Distribution, Gamma};
        let mut rng = RandomSource::from_seed(6);
        let gamma = Gamma::new(1.0, 1.0).unwrap();
        for (i, m) in [1usize, 2, 5, 10].into_iter().enumerate() {
            let masses: Vec<f64> = (0..4).map(|_| gamma.sample(&mut rng)).collect();
            let x = SimplexVector::from_masses(masses).unwrap();
            let n = 100_000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            let mut r = rng.derive(1, i as u64);
            for _ in 0..n {
                let y = empirical_message(&x, m, &mut r).unwrap();
                let d: f64 = y.weights().iter().zip(x.weights()).map(|(a, b)| (a - b).powi(2)).sum();
                sum += d;
                sum_sq += d * d;
            }
            let mean = sum / n as f64;
            let sd = ((sum_sq / n as f64 - mean * mean) * n as f64 / (n - 1) as f64).sqrt();
            let predicted = (1.0 - x.norm_sq()) / m as f64;
            assert!(
                (mean - predicted).abs() <= 3.0 * sd / (n as f64).sqrt(),
                "m={m}: {mean} vs {predicted}"
            );
        }
    }

    #[test]
    fn unbiased_messages() {
        let mut rng = RandomSource::from_seed(7);
        let p = [0.1, 0.6, 0.3];
        let x = sv(&p);
        let n = 100_000;
        for m in [1usize, 3, 8] {
            let mut acc = [0.0; 3];
            for _ in 0..n {
                let y = empirical_message(&x, m, &mut rng).unwrap();
                for (a, w) in acc.iter_mut().zip(y.weights()) {
                    *a += w;
                }
            }
            for k in 0..3 {
                let se = (p[k] * (1.0 - p[k]) / (m * n) as f64).sqrt();
                assert!((acc[k] / n as f64 - p[k]).abs() <= 3.0 * se);
            }
        }
    }

    #[test]
    fn temper_cases() {
        let x = sv(&[0.3, 0.1, 0.6]);
        assert_eq!(temper(&x, 1.0).unwrap(), x);
        let u = uniform_vector(5).unwrap();
        for t in [0.1, 0.7, 3.0] {
            let g = temper(&u, t).unwrap();
            for w in g.weights() {
                assert!((w - 0.2).abs() < 1e-15);
            }
        }
        let g = temper(&sv(&[0.8, 0.2]), 0.5).unwrap();
        assert!((g.weights()[0] - 0.941_176_470_588_235_3).abs() < 1e-14);
        assert!((g.weights()[1] - 0.058_823_529_411_764_71).abs() < 1e-14);
        assert!(matches!(temper(&x, 0.0), Err(QsgError::InvalidTemperature(_))));
        assert!(matches!(temper(&x, -1.0), Err(QsgError::InvalidTemperature(_))));
    }

    #[test]
    fn temper_keeps_zeros_and_survives_tiny_t() {
        let x = sv(&[0.0, 0.999, 0.001]);
        let g = temper(&x, 0.01).unwrap();
        assert_eq!(g.weights()[0], 0.0);
        assert_closed(&g);
        assert!(g.weights()[1] > 0.999_999);
        let g = temper(&x, 50.0).unwrap();
        assert_eq!(g.weights()[0], 0.0);
        assert_closed(&g);
    }

    #[test]
    fn bias_tilt_cases() {
        assert_eq!(bias_tilt(0.37, 0.0), 0.37);
        for h in [-2.0, 0.1, 5.0] {
            assert_eq!(bias_tilt(0.0, h), 0.0);
            assert_eq!(bias_tilt(1.0, h), 1.0);
        }
        assert!((bias_tilt(0.5, 0.1) - 0.524_979_187_478_94).abs() < 1e-13);
        assert!(bias_tilt(0.3, 0.2) > bias_tilt(0.3, 0.1));
    }

    #[test]
    fn listener_update_cases() {
        let xl = sv(&[0.2, 0.5, 0.3]);
        let y = sv(&[0.0, 0.0, 1.0]);
        assert_eq!(listener_update(&xl, &y, 1.0).unwrap(), y);
        for a in [0.01, 0.3, 0.77, 1.0] {
            assert_eq!(listener_update(&xl, &xl, a).unwrap(), xl);
        }
        let mid = listener_update(&sv(&[1.0, 0.0]), &sv(&[0.0, 1.0]), 0.5).unwrap();
        assert_eq!(mid.weights(), &[0.5, 0.5]);
        assert!(matches!(
            listener_update(&xl, &sv(&[0.5, 0.5]), 0.5),
            Err(QsgError::DimensionMismatch { .. })
        ));
        assert_eq!(listener_update(&xl, &y, 0.0), Err(QsgError::InvalidRate(0.0)));
        assert_eq!(listener_update(&xl, &y, 1.5), Err(QsgError::InvalidRate(1.5)));
    }

    #[test]
    fn sample_streams_are_reproducible() {
        let x = sv(&[0.25, 0.25, 0.5]);
        let mut a = RandomSource::new(11, 4);
        let mut b = RandomSource::new(11, 4);
        let la: Vec<Label> = (0..500).map(|_| sample_label(&x, &mut a)).collect();
        let lb: Vec<Label> = (0..500).map(|_| sample_label(&x, &mut b)).collect();
        assert_eq!(la, lb);
    }

    fn simplex_strategy(k: std::ops::Range<usize>) -> impl Strategy<Value = SimplexVector> {
        k.prop_flat_map(|k| prop::collection::vec(0.001f64..1.0, k))
            .prop_map(|m| SimplexVector::from_masses(m).unwrap())
    }

    proptest! {
        #[test]
        fn operations_stay_on_simplex(
            x in simplex_strategy(2..8),
            alpha in 0.001f64..=1.0,
            t in 0.05f64..5.0,
            m in 1usize..30,
            seed in any::<u64>(),
        ) {
            let mut rng = RandomSource::from_seed(seed);
            assert_closed(&temper(&x, t).unwrap());
            let y = empirical_message(&x, m, &mut rng).unwrap();
            assert_closed(&y);
            assert_closed(&listener_update(&x, &y, alpha).unwrap());
            let l = sample_label(&x, &mut rng);
            prop_assert!(l.index() < x.k());
        }

        #[test]
        fn temper_composes_multiplicatively(
            x in simplex_strategy(2..8),
            t1 in 0.2f64..4.0,
            t2 in 0.2f64..4.0,
        ) {
            let two_step = temper(&temper(&x, t1).unwrap(), t2).unwrap();
            let one_step = temper(&x, t1 * t2).unwrap();
            for (a, b) in two_step.weights().iter().zip(one_step.weights()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn bias_tilt_monotone_in_h(p in 0.001f64..0.999, h1 in -3.0f64..3.0, dh in 0.001f64..1.0) {
            prop_assert!(bias_tilt(p, h1 + dh) > bias_tilt(p, h1));
        }
    }
}
