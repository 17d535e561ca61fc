//! Self-duality polynomials and D-transforms.
//!
//! `D(ξ, η) = Π_x d(ξ(x), η(x))` with
//! `d(k, l) = l!/(l−k)! · Γ(m/2)/Γ(m/2+k)` for `k <= l` and `0` otherwise.
//! Gamma ratios come from a memoized log ladder so that large occupation
//! numbers never overflow.

use std::fmt;
use std::sync::{Arc, RwLock};

use crate::error::{Result, SipError};
use crate::lattice::{occupation_of, Occupation, ParticleList};
use crate::rng::RandomStream;
use crate::scalar::Scalar;
use crate::stats::{batch_means, Estimate};

const INITIAL_LADDER: usize = 64;

#[derive(Debug)]
pub struct DualityEvaluator<T: Scalar> {
    m: T,
    half_m: T,
    /// `ladder[k] = ln Γ(m/2 + k) − ln Γ(m/2)`.
    ladder: RwLock<Vec<T>>,
}

impl<T: Scalar> Clone for DualityEvaluator<T> {
    fn clone(&self) -> Self {
        Self {
            m: self.m,
            half_m: self.half_m,
            ladder: RwLock::new(self.ladder.read().unwrap().clone()),
        }
    }
}

impl<T: Scalar> DualityEvaluator<T> {
    pub fn new(m: T) -> Result<Self> {
        if !(m > T::zero()) || !m.is_finite() {
            return Err(SipError::Domain(format!("m must be positive, got {m}")));
        }
        let eval = Self {
            m,
            half_m: m / T::of(2.0),
            ladder: RwLock::new(vec![T::zero()]),
        };
        eval.ensure_ladder(INITIAL_LADDER);
        Ok(eval)
    }

    pub fn m(&self) -> T {
        self.m
    }

    fn ensure_ladder(&self, k: usize) {
        if self.ladder.read().unwrap().len() > k {
            return;
        }
        let mut ladder = self.ladder.write().unwrap();
        while ladder.len() <= k {
            let j = ladder.len() - 1;
            let next = ladder[j] + (self.half_m + T::of_u64(j as u64)).ln();
            ladder.push(next);
        }
    }

    /// `ln Γ(m/2 + k) − ln Γ(m/2)`.
    pub fn log_gamma_ratio(&self, k: u64) -> T {
        let k = k as usize;
        self.ensure_ladder(k);
        self.ladder.read().unwrap()[k]
    }

    /// `Γ(m/2 + k)/Γ(m/2)`, the rising factorial `(m/2)^{(k)}`.
    pub fn gamma_ratio(&self, k: u64) -> T {
        self.log_gamma_ratio(k).exp()
    }

    /// Single-site factor `d(k, l)`.
    pub fn d_single(&self, k: u64, l: u64) -> T {
        if k > l {
            return T::zero();
        }
        if k == 0 {
            return T::one();
        }
        let log_falling = (0..k).fold(T::zero(), |acc, j| acc + T::of_u64(l - j).ln());
        (log_falling - self.log_gamma_ratio(k)).exp()
    }

    /// `D(ξ, η)` for a labeled dual configuration.
    pub fn evaluate(&self, xi: &ParticleList, eta: &Occupation) -> T {
        self.evaluate_occupation(&occupation_of(xi), eta)
    }

    /// `D(ξ, η)` with both arguments as occupations; stops at the first site with `ξ(x) > η(x)`.
    pub fn evaluate_occupation(&self, xi: &Occupation, eta: &Occupation) -> T {
        let mut acc = T::one();
        for (x, k) in xi.iter() {
            let l = eta.get(x);
            if k > l {
                return T::zero();
            }
            acc *= self.d_single(k, l);
        }
        acc
    }

    pub fn closed_form_transform(&self, kind: &DTransform<T>, xi: &ParticleList) -> Result<T> {
        kind.validate()?;
        let n = xi.len() as i32;
        match kind {
            DTransform::NuLambda { lambda } => Ok(density(*lambda).powi(n)),
            DTransform::PointMass(eta) => Ok(self.evaluate(xi, eta)),
            DTransform::Poisson { theta } => {
                let mut acc = T::one();
                for (_, k) in occupation_of(xi).iter() {
                    acc *= theta.powi(k as i32) * (-self.log_gamma_ratio(k)).exp();
                }
                Ok(acc)
            }
            DTransform::NuMixture(atoms) => Ok(atoms
                .iter()
                .fold(T::zero(), |acc, &(lambda, w)| acc + w * density(lambda).powi(n))),
            DTransform::Empirical { .. } => Err(SipError::Unsupported(
                "empirical transforms have no closed form".into(),
            )),
        }
    }

    /// `c_n = sup_{|ξ|=n} ∫ D(ξ, η) μ(dη)` for the closed forms.
    ///
    /// The Carleman condition `Σ c_n^{-1/n} = ∞` cannot be decided from finitely
    /// many terms and is not checked. It holds for every closed form here, since
    /// each `c_n` grows at most geometrically.
    pub fn temperedness_bound(&self, kind: &DTransform<T>, n: u64) -> Result<T> {
        kind.validate()?;
        match kind {
            DTransform::NuLambda { lambda } => Ok(density(*lambda).powi(n as i32)),
            DTransform::NuMixture(atoms) => Ok(atoms
                .iter()
                .fold(T::zero(), |acc, &(lambda, w)| acc + w * density(lambda).powi(n as i32))),
            DTransform::Poisson { theta } => {
                // Best split of n particles into per-site clusters of size k,
                // each contributing θ^k Γ(m/2)/Γ(m/2+k).
                let cluster = |k: u64| theta.powi(k as i32) * (-self.log_gamma_ratio(k)).exp();
                let mut best = vec![T::one()];
                for total in 1..=n {
                    let v = (1..=total)
                        .map(|k| cluster(k) * best[(total - k) as usize])
                        .fold(T::zero(), T::max);
                    best.push(v);
                }
                Ok(best[n as usize])
            }
            DTransform::PointMass(eta) => {
                // Knapsack over occupied sites: place k_x <= η(x) dual particles at x.
                let mut best: Vec<Option<T>> = vec![None; n as usize + 1];
                best[0] = Some(T::one());
                for (_, l) in eta.iter() {
                    let mut next = best.clone();
                    for used in 0..=n {
                        let Some(base) = best[used as usize] else { continue };
                        for k in 1..=l.min(n - used) {
                            let v = base * self.d_single(k, l);
                            let slot = &mut next[(used + k) as usize];
                            *slot = Some(slot.map_or(v, |s| s.max(v)));
                        }
                    }
                    best = next;
                }
                Ok(best[n as usize].unwrap_or(T::zero()))
            }
            DTransform::Empirical { .. } => Err(SipError::Unsupported(
                "temperedness bound needs a closed-form transform".into(),
            )),
        }
    }
}

/// `ρ = λ/(1−λ)`.
pub fn density<T: Scalar>(lambda: T) -> T {
    lambda / (T::one() - lambda)
}

/// `λ(ρ) = ρ/(1+ρ)`.
pub fn lambda_of_density<T: Scalar>(rho: T) -> T {
    rho / (T::one() + rho)
}

/// Anything that can draw a random configuration.
pub trait ConfigurationSampler: Send + Sync {
    fn sample(&self, stream: &mut RandomStream) -> Result<Occupation>;
}

/// Deterministic configuration, the degenerate sampler.
#[derive(Debug, Clone)]
pub struct PointMassSampler(pub Occupation);

impl ConfigurationSampler for PointMassSampler {
    fn sample(&self, _stream: &mut RandomStream) -> Result<Occupation> {
        Ok(self.0.clone())
    }
}

#[derive(Clone)]
pub enum DTransform<T: Scalar> {
    NuLambda { lambda: T },
    Poisson { theta: T },
    PointMass(Occupation),
    /// Atoms `(λ_i, w_i)` with weights summing to one.
    NuMixture(Vec<(T, T)>),
    Empirical {
        sampler: Arc<dyn ConfigurationSampler>,
        reps: usize,
    },
}

impl<T: Scalar> fmt::Debug for DTransform<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NuLambda { lambda } => write!(f, "NuLambda({lambda})"),
            Self::Poisson { theta } => write!(f, "Poisson({theta})"),
            Self::PointMass(eta) => write!(f, "PointMass({eta:?})"),
            Self::NuMixture(atoms) => write!(f, "NuMixture({atoms:?})"),
            Self::Empirical { reps, .. } => write!(f, "Empirical(reps={reps})"),
        }
    }
}

pub(crate) fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if lambda >= T::zero() && lambda < T::one() {
        Ok(())
    } else {
        Err(SipError::Domain(format!("lambda must lie in [0, 1), got {lambda}")))
    }
}

pub(crate) fn check_mixture<T: Scalar>(atoms: &[(T, T)]) -> Result<()> {
    if atoms.is_empty() {
        return Err(SipError::Domain("mixture needs at least one atom".into()));
    }
    let mut total = T::zero();
    for &(lambda, w) in atoms {
        check_lambda(lambda)?;
        if !(w >= T::zero()) {
            return Err(SipError::Domain(format!("negative mixture weight {w}")));
        }
        total += w;
    }
    if (total - T::one()).abs() > T::of(1e-9).max(T::epsilon() * T::of(16.0)) {
        return Err(SipError::Domain(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

impl<T: Scalar> DTransform<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::NuLambda { lambda } => check_lambda(*lambda),
            Self::Poisson { theta } => {
                if *theta >= T::zero() && theta.is_finite() {
                    Ok(())
                } else {
                    Err(SipError::Domain(format!("theta must be >= 0, got {theta}")))
                }
            }
            Self::NuMixture(atoms) => check_mixture(atoms),
            Self::PointMass(_) => Ok(()),
            Self::Empirical { reps, .. } => {
                if *reps >= 2 {
                    Ok(())
                } else {
                    Err(SipError::Domain("empirical transform needs reps >= 2".into()))
                }
            }
        }
    }

    /// The constant `ρ` with `∫ D(δ_x, η) μ(dη) = ρ` at every site, for closed forms.
    pub fn single_site_density(&self, m: T) -> Result<T> {
        self.validate()?;
        match self {
            Self::NuLambda { lambda } => Ok(density(*lambda)),
            Self::Poisson { theta } => Ok(T::of(2.0) * *theta / m),
            Self::NuMixture(atoms) => Ok(atoms
                .iter()
                .fold(T::zero(), |acc, &(l, w)| acc + w * density(l))),
            Self::PointMass(_) | Self::Empirical { .. } => Err(SipError::Unsupported(
                "single-site density is only constant for translation-invariant laws".into(),
            )),
        }
    }
}

/// Sample mean and batch-means error of `D(ξ, η)` over sampled `η`.
pub fn empirical_transform<T: Scalar>(
    evaluator: &DualityEvaluator<T>,
    xi: &ParticleList,
    sampler: &dyn ConfigurationSampler,
    reps: usize,
    stream: &mut RandomStream,
) -> Result<Estimate> {
    if reps < 2 {
        return Err(SipError::Precondition("empirical transform needs reps >= 2".into()));
    }
    let xi_occ = occupation_of(xi);
    let mut values = Vec::with_capacity(reps);
    for _ in 0..reps {
        let eta = sampler.sample(stream)?;
        values.push(evaluator.evaluate_occupation(&xi_occ, &eta).as_f64());
    }
    batch_means(&values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::site;
    use proptest::prelude::*;

    fn eval(m: f64) -> DualityEvaluator<f64> {
        DualityEvaluator::new(m).unwrap()
    }

    fn factorial(n: u64) -> f64 {
        (1..=n).map(|j| j as f64).product()
    }

    #[test]
    fn d_single_examples() {
        let e = eval(2.0);
        assert_eq!(e.d_single(0, 0), 1.0);
        assert_eq!(e.d_single(3, 2), 0.0);
        assert!((e.d_single(1, 3) - 3.0).abs() < 1e-14);
        assert!((e.d_single(2, 2) - 1.0).abs() < 1e-14);
        let e = eval(0.7);
        for l in 0..20 {
            assert!((e.d_single(1, l) - 2.0 * l as f64 / 0.7).abs() < 1e-12 * (1.0 + l as f64));
        }
    }

    #[test]
    fn log_space_matches_direct_factorials() {
        // m = 2: Γ(1+k)/Γ(1) = k!, so d(k, l) = l!/((l-k)! k!) = C(l, k).
        let e = eval(2.0);
        for l in [0u64, 1, 5, 30, 100, 170] {
            for k in 0..=l.min(170) {
                let direct = factorial(l) / (factorial(l - k) * factorial(k));
                let got = e.d_single(k, l);
                assert!(
                    ((got - direct) / direct).abs() < 1e-10,
                    "k={k} l={l}: {got} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn ladder_starts_at_one_and_grows_after_first_rung() {
        for m in [0.3, 1.0, 2.0, 5.0] {
            let e = eval(m);
            assert_eq!(e.gamma_ratio(0), 1.0);
            for k in 1..100 {
                assert!(e.gamma_ratio(k + 1) > e.gamma_ratio(k));
            }
        }
    }

    #[test]
    fn ladder_extends_on_demand() {
        let e = eval(3.0);
        let far = e.log_gamma_ratio(500);
        let direct: f64 = (0..500).map(|j| (1.5 + j as f64).ln()).sum();
        assert!((far - direct).abs() < 1e-9 * direct.abs());
    }

    #[test]
    fn duality_function_examples() {
        let e = eval(2.0);
        let eta = Occupation::from_counts([(site(&[0]), 5)]);
        assert_eq!(e.evaluate(&ParticleList::empty(), &eta), 1.0);
        assert!((e.evaluate(&ParticleList::on_line(&[0]), &eta) - 5.0).abs() < 1e-13);
        let xi = ParticleList::on_line(&[0, 1, 1]);
        let eta = Occupation::from_counts([(site(&[1]), 4)]);
        assert_eq!(e.evaluate(&xi, &eta), 0.0);
    }

    #[test]
    fn closed_forms() {
        let e = eval(2.0);
        let nu = DTransform::NuLambda { lambda: 0.5 };
        assert_eq!(e.closed_form_transform(&nu, &ParticleList::empty()).unwrap(), 1.0);
        for n in 0..6 {
            let xi = ParticleList::on_line(&vec![0; n]);
            assert!((e.closed_form_transform(&nu, &xi).unwrap() - 1.0).abs() < 1e-15);
        }
        let poisson = DTransform::Poisson { theta: 1.0 };
        let xi = ParticleList::on_line(&[0, 0]);
        assert!((e.closed_form_transform(&poisson, &xi).unwrap() - 0.5).abs() < 1e-15);

        let eta = Occupation::from_counts([(site(&[0]), 3)]);
        let pm = DTransform::PointMass(eta.clone());
        assert_eq!(
            e.closed_form_transform(&pm, &xi).unwrap(),
            e.evaluate(&xi, &eta)
        );

        let mix = DTransform::NuMixture(vec![(0.2, 0.5), (0.6, 0.5)]);
        let xi2 = ParticleList::on_line(&[0, 1]);
        assert!((e.closed_form_transform(&mix, &xi2).unwrap() - 1.15625).abs() < 1e-14);
    }

    #[test]
    fn parameter_domain_errors() {
        let e = eval(2.0);
        let xi = ParticleList::on_line(&[0]);
        for bad in [
            DTransform::NuLambda { lambda: 1.0 },
            DTransform::NuLambda { lambda: -0.1 },
            DTransform::Poisson { theta: -1.0 },
            DTransform::NuMixture(vec![(0.2, 0.3)]),
        ] {
            assert!(matches!(
                e.closed_form_transform(&bad, &xi),
                Err(SipError::Domain(_))
            ));
        }
        assert!(DualityEvaluator::<f64>::new(0.0).is_err());
    }

    #[test]
    fn temperedness_bounds() {
        let e = eval(2.0);
        let nu = DTransform::NuLambda { lambda: 0.4 };
        for n in 0..6 {
            let want = (0.4f64 / 0.6).powi(n as i32);
            assert!((e.temperedness_bound(&nu, n).unwrap() - want).abs() < 1e-14);
        }
        let zero = DTransform::NuLambda { lambda: 0.0 };
        assert_eq!(e.temperedness_bound(&zero, 3).unwrap(), 0.0);
        let poisson = DTransform::Poisson { theta: 1.0 };
        assert!((e.temperedness_bound(&poisson, 3).unwrap() - 1.0).abs() < 1e-14);
        // The sup is attained with every dual particle on its own site.
        let e4 = eval(4.0);
        assert!((e4.temperedness_bound(&poisson, 3).unwrap() - 0.125).abs() < 1e-14);

        let eta = Occupation::from_counts([(site(&[0]), 3), (site(&[1]), 1)]);
        // Two particles: d(2,3) = 3 and d(1,3) d(1,1) = 3 tie.
        let pm = DTransform::PointMass(eta);
        assert!((e.temperedness_bound(&pm, 2).unwrap() - 3.0).abs() < 1e-13);
        assert!((e.temperedness_bound(&pm, 4).unwrap() - 1.0).abs() < 1e-13);
        assert_eq!(e.temperedness_bound(&pm, 5).unwrap(), 0.0);

        let emp = DTransform::Empirical {
            sampler: Arc::new(PointMassSampler(Occupation::new())),
            reps: 10,
        };
        assert!(matches!(
            e.temperedness_bound(&emp, 1),
            Err(SipError::Unsupported(_))
        ));
    }

    #[test]
    fn empirical_point_mass_is_exact() {
        let e = eval(2.0);
        let eta = Occupation::from_counts([(site(&[0]), 4), (site(&[2]), 2)]);
        let xi = ParticleList::on_line(&[0, 0, 2]);
        let mut s = crate::rng::derive_stream(1, 0);
        let est = empirical_transform(&e, &xi, &PointMassSampler(eta.clone()), 100, &mut s).unwrap();
        assert_eq!(est.mean, e.evaluate(&xi, &eta));
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let e = DualityEvaluator::<f32>::new(2.0).unwrap();
        assert!((e.d_single(1, 3) - 3.0).abs() < 1e-5);
        assert!((e.d_single(3, 10) - 120.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn relabeling_and_disjoint_multiplicativity(
            a in proptest::collection::vec(0i64..4, 0..4),
            b in proptest::collection::vec(4i64..8, 0..4),
            counts in proptest::collection::vec(0u64..6, 8),
            m in 0.2f64..6.0,
        ) {
            let e = eval(m);
            let eta = Occupation::from_counts(
                counts.iter().enumerate().map(|(i, &k)| (site(&[i as i64]), k)));
            let xa = ParticleList::on_line(&a);
            let xb = ParticleList::on_line(&b);
            let joint = e.evaluate(&xa.concat(&xb), &eta);
            let split = e.evaluate(&xa, &eta) * e.evaluate(&xb, &eta);
            prop_assert!(joint >= 0.0);
            prop_assert!((joint - split).abs() <= 1e-12 * (1.0 + joint.abs()));
            let mut rev = a.clone();
            rev.reverse();
            prop_assert_eq!(e.evaluate(&ParticleList::on_line(&rev), &eta), e.evaluate(&xa, &eta));
        }
    }
}
