//! Discrete Gamma product measures `ν_λ^m` and the other initial laws.
//!
//! Single-site marginal:
//! `ν_λ^m{η(x) = k} = (1−λ)^{m/2} λ^k Γ(m/2+k) / (k! Γ(m/2))`,
//! a negative binomial with shape `m/2`. Sampling is by sequential CDF
//! inversion using the ratio `p(k+1)/p(k) = λ(m/2+k)/(k+1)`.

use std::sync::Arc;

use crate::duality::{check_lambda, check_mixture, density, ConfigurationSampler, DTransform};
use crate::error::{Result, SipError};
use crate::lattice::{Geometry, Occupation};
use crate::rng::RandomStream;
use crate::scalar::Scalar;

/// Largest `λ` accepted from configuration files.
pub const LAMBDA_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuLambda<T: Scalar> {
    lambda: T,
    m: T,
}

impl<T: Scalar> NuLambda<T> {
    pub fn new(lambda: T, m: T) -> Result<Self> {
        check_lambda(lambda)?;
        check_m(m)?;
        Ok(Self { lambda, m })
    }

    /// The measure with per-site D-moment `ρ`, i.e. `λ = ρ/(1+ρ)`.
    pub fn with_density(rho: T, m: T) -> Result<Self> {
        if !(rho >= T::zero()) {
            return Err(SipError::Domain(format!("density must be >= 0, got {rho}")));
        }
        Self::new(rho / (T::one() + rho), m)
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn m(&self) -> T {
        self.m
    }

    /// `ρ = λ/(1−λ)`.
    pub fn density(&self) -> T {
        density(self.lambda)
    }

    /// Mean occupation `(m/2) ρ`.
    pub fn mean_occupation(&self) -> T {
        self.m / T::of(2.0) * self.density()
    }

    pub fn pmf(&self, k: u64) -> T {
        marginal_pmf_unchecked(k, self.lambda, self.m)
    }

    pub fn sample(&self, stream: &mut RandomStream) -> u64 {
        let half_m = self.m / T::of(2.0);
        let p0 = (T::one() - self.lambda).powf(half_m);
        let lambda = self.lambda;
        invert_cdf(stream, p0, |k| {
            lambda * (half_m + T::of_u64(k)) / T::of_u64(k + 1)
        })
    }
}

fn check_m<T: Scalar>(m: T) -> Result<()> {
    if m > T::zero() && m.is_finite() {
        Ok(())
    } else {
        Err(SipError::Domain(format!("m must be positive, got {m}")))
    }
}

fn marginal_pmf_unchecked<T: Scalar>(k: u64, lambda: T, m: T) -> T {
    if lambda == T::zero() {
        return if k == 0 { T::one() } else { T::zero() };
    }
    (log_weight(k, lambda, m) + m / T::of(2.0) * (-lambda).ln_1p()).exp()
}

/// `ln w(k)` with `w(k) = λ^k Γ(m/2+k)/(k! Γ(m/2))`.
fn log_weight<T: Scalar>(k: u64, lambda: T, m: T) -> T {
    let half_m = m / T::of(2.0);
    let mut acc = T::of_u64(k) * lambda.ln();
    for j in 0..k {
        acc += (half_m + T::of_u64(j)).ln() - T::of_u64(j + 1).ln();
    }
    acc
}

pub fn marginal_pmf<T: Scalar>(k: u64, lambda: T, m: T) -> Result<T> {
    check_lambda(lambda)?;
    check_m(m)?;
    Ok(marginal_pmf_unchecked(k, lambda, m))
}

pub fn sample_marginal<T: Scalar>(lambda: T, m: T, stream: &mut RandomStream) -> Result<u64> {
    Ok(NuLambda::new(lambda, m)?.sample(stream))
}

/// Poisson(θ) draw by the same inversion scheme.
pub fn sample_poisson<T: Scalar>(theta: T, stream: &mut RandomStream) -> u64 {
    let p0 = (-theta).exp();
    invert_cdf(stream, p0, |k| theta / T::of_u64(k + 1))
}

/// Smallest `k` with `F(k) >= u`, walking the pmf by its successive ratios.
fn invert_cdf<T: Scalar>(stream: &mut RandomStream, p0: T, ratio: impl Fn(u64) -> T) -> u64 {
    let u = T::of(stream.uniform());
    let mut k = 0u64;
    let mut p = p0;
    let mut cdf = p0;
    while u >= cdf {
        p *= ratio(k);
        k += 1;
        let next = cdf + p;
        if next == cdf && p < T::epsilon() * cdf {
            // Remaining tail mass is below rounding; u sat in it.
            break;
        }
        cdf = next;
    }
    k
}

/// Reversibility check across one edge: the ratio of the probability flows
/// `(a, b) -> (a−1, b+1)` and back under `ν_λ^m`. Equals one.
pub fn detailed_balance_ratio<T: Scalar>(a: u64, b: u64, lambda: T, m: T) -> Result<T> {
    if a == 0 {
        return Err(SipError::Precondition(
            "detailed balance needs a particle at the source (a >= 1)".into(),
        ));
    }
    check_m(m)?;
    if !(lambda > T::zero() && lambda < T::one()) {
        return Err(SipError::Domain(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let half_m = m / T::of(2.0);
    let forward = log_weight(a, lambda, m)
        + log_weight(b, lambda, m)
        + T::of_u64(a).ln()
        + (half_m + T::of_u64(b)).ln();
    let backward = log_weight(a - 1, lambda, m)
        + log_weight(b + 1, lambda, m)
        + T::of_u64(b + 1).ln()
        + (half_m + T::of_u64(a - 1)).ln();
    Ok((forward - backward).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw<T: Scalar> {
    Nu(NuLambda<T>),
    Poisson { theta: T },
    Deterministic(Occupation),
    /// Atoms `(λ_i, w_i)`; a configuration draws one `λ_i` then a `ν_{λ_i}` product.
    NuMixture { atoms: Vec<(T, T)>, m: T },
}

impl<T: Scalar> InitialLaw<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Nu(nu) => NuLambda::new(nu.lambda, nu.m).map(|_| ()),
            Self::Poisson { theta } => {
                if *theta >= T::zero() && theta.is_finite() {
                    Ok(())
                } else {
                    Err(SipError::Domain(format!("theta must be >= 0, got {theta}")))
                }
            }
            Self::Deterministic(_) => Ok(()),
            Self::NuMixture { atoms, m } => {
                check_m(*m)?;
                check_mixture(atoms)
            }
        }
    }

    /// The closed-form D-transform of this law.
    pub fn transform(&self) -> DTransform<T> {
        match self {
            Self::Nu(nu) => DTransform::NuLambda { lambda: nu.lambda },
            Self::Poisson { theta } => DTransform::Poisson { theta: *theta },
            Self::Deterministic(eta) => DTransform::PointMass(eta.clone()),
            Self::NuMixture { atoms, .. } => DTransform::NuMixture(atoms.clone()),
        }
    }

    fn draw_mixture_atom(atoms: &[(T, T)], stream: &mut RandomStream) -> T {
        let u = T::of(stream.uniform());
        let mut cum = T::zero();
        for &(lambda, w) in atoms {
            cum += w;
            if u < cum {
                return lambda;
            }
        }
        atoms.last().expect("validated mixture is non-empty").0
    }
}

/// Independent per-site draws over every site of a torus.
pub fn sample_product<T: Scalar>(
    law: &InitialLaw<T>,
    geometry: &Geometry,
    stream: &mut RandomStream,
) -> Result<Occupation> {
    law.validate()?;
    let sites = geometry.sites()?;
    let mut eta = Occupation::new();
    match law {
        InitialLaw::Nu(nu) => {
            for x in sites {
                eta.add(x, nu.sample(stream));
            }
        }
        InitialLaw::Poisson { theta } => {
            for x in sites {
                eta.add(x, sample_poisson(*theta, stream));
            }
        }
        InitialLaw::Deterministic(fixed) => {
            if fixed.iter().any(|(x, _)| !geometry.contains(x)) {
                return Err(SipError::Domain(
                    "deterministic configuration lies outside the torus".into(),
                ));
            }
            eta = fixed.clone();
        }
        InitialLaw::NuMixture { atoms, m } => {
            let lambda = InitialLaw::draw_mixture_atom(atoms, stream);
            let nu = NuLambda::new(lambda, *m)?;
            for x in sites {
                eta.add(x, nu.sample(stream));
            }
        }
    }
    Ok(eta)
}

/// A product law bound to a torus, usable wherever a sampler is expected.
#[derive(Debug, Clone)]
pub struct ProductSampler<T: Scalar> {
    pub law: InitialLaw<T>,
    pub geometry: Geometry,
}

impl<T: Scalar> ProductSampler<T> {
    pub fn new(law: InitialLaw<T>, geometry: Geometry) -> Result<Self> {
        law.validate()?;
        if geometry.side().is_none() {
            return Err(SipError::InfiniteGeometry);
        }
        Ok(Self { law, geometry })
    }

    pub fn shared(self) -> Arc<dyn ConfigurationSampler> {
        Arc::new(self)
    }
}

impl<T: Scalar> ConfigurationSampler for ProductSampler<T> {
    fn sample(&self, stream: &mut RandomStream) -> Result<Occupation> {
        sample_product(&self.law, &self.geometry, stream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::{empirical_transform, DualityEvaluator};
    use crate::lattice::{site, ParticleList};
    use crate::rng::derive_stream;
    use crate::stats::batch_means;

    #[test]
    fn pmf_examples() {
        assert_eq!(marginal_pmf(0, 0.0, 2.0).unwrap(), 1.0);
        assert_eq!(marginal_pmf(3, 0.0, 2.0).unwrap(), 0.0);
        assert!((marginal_pmf(2, 0.5f64, 2.0).unwrap() - 0.125).abs() < 1e-15);
        for k in 0..30 {
            let geometric = 0.7 * 0.3f64.powi(k as i32);
            assert!((marginal_pmf(k, 0.3, 2.0).unwrap() - geometric).abs() < 1e-14);
        }
        assert!(marginal_pmf(0, 1.0, 2.0).is_err());
        assert!(marginal_pmf(0, 0.5, -1.0).is_err());
    }

    #[test]
    fn pmf_sums_to_one_with_certified_tail() {
        for &(lambda, m) in &[(0.1, 0.5), (0.4, 2.0), (0.8, 3.0), (0.95, 7.5)] {
            let mut total = 0.0;
            let mut k = 0u64;
            loop {
                let p = marginal_pmf(k, lambda, m).unwrap();
                total += p;
                let r = lambda * (m / 2.0 + k as f64) / (k as f64 + 1.0);
                // Geometric bound on the remaining tail once the ratio is below one.
                if r < 1.0 && p * r / (1.0 - r) < 1e-15 {
                    break;
                }
                k += 1;
            }
            assert!((total - 1.0).abs() < 1e-12, "λ={lambda} m={m}: {total}");
        }
    }

    #[test]
    fn sampling_examples() {
        let mut s = derive_stream(2, 0);
        assert!((0..1000).all(|_| sample_marginal(0.0, 2.0, &mut s).unwrap() == 0));

        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_marginal(0.4, 2.0, &mut s).unwrap() as f64)
            .collect();
        let est = batch_means(&draws).unwrap();
        assert!(est.within(2.0 / 3.0, 3.0), "{est:?}");

        let zeros: Vec<f64> = (0..100_000)
            .map(|_| f64::from(sample_marginal(0.5, 1.0, &mut s).unwrap() == 0))
            .collect();
        let est = batch_means(&zeros).unwrap();
        assert!(est.within(0.5f64.sqrt(), 3.0), "{est:?}");
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let a: Vec<u64> = {
            let mut s = derive_stream(8, 3);
            (0..1000).map(|_| sample_marginal(0.7, 1.5, &mut s).unwrap()).collect()
        };
        let b: Vec<u64> = {
            let mut s = derive_stream(8, 3);
            (0..1000).map(|_| sample_marginal(0.7, 1.5, &mut s).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn product_sampling() {
        let torus = Geometry::torus(1, 5).unwrap();
        let mut s = derive_stream(4, 0);
        let zero = InitialLaw::Nu(NuLambda::new(0.0, 2.0).unwrap());
        assert!(sample_product(&zero, &torus, &mut s).unwrap().is_empty());
        let p0 = InitialLaw::Poisson { theta: 0.0 };
        assert!(sample_product(&p0, &torus, &mut s).unwrap().is_empty());
        assert_eq!(
            sample_product(&zero, &Geometry::infinite(1), &mut s),
            Err(SipError::InfiniteGeometry)
        );
    }

    #[test]
    fn product_sites_are_uncorrelated() {
        let torus = Geometry::torus(1, 5).unwrap();
        let law = InitialLaw::Nu(NuLambda::new(0.5, 2.0).unwrap());
        let mut s = derive_stream(5, 0);
        let n = 50_000;
        let pairs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let eta = sample_product(&law, &torus, &mut s).unwrap();
                (eta.get(&[0]) as f64, eta.get(&[2]) as f64)
            })
            .collect();
        let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let prods: Vec<f64> = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
        let est = batch_means(&prods).unwrap();
        assert!(est.within(0.0, 3.0), "{est:?}");
    }

    #[test]
    fn detailed_balance_examples() {
        for &(lambda, m) in &[(0.1f64, 0.5f64), (0.5, 2.0), (0.9, 7.0)] {
            let r = detailed_balance_ratio(1, 0, lambda, m).unwrap();
            assert!((r - 1.0).abs() < 1e-12);
        }
        let r = detailed_balance_ratio(3, 2, 0.7f64, 1.5).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        assert!(matches!(
            detailed_balance_ratio(0, 2, 0.7, 1.5),
            Err(SipError::Precondition(_))
        ));
    }

    #[test]
    fn sampled_nu_reproduces_moment_identity() {
        let torus = Geometry::torus(1, 6).unwrap();
        let e = DualityEvaluator::new(2.0).unwrap();
        for &lambda in &[0.2, 0.4, 0.6] {
            let sampler =
                ProductSampler::new(InitialLaw::Nu(NuLambda::new(lambda, 2.0).unwrap()), torus)
                    .unwrap();
            let rho: f64 = lambda / (1.0 - lambda);
            for n in 1..=4usize {
                let xi = ParticleList::new((0..n).map(|i| site(&[(i % 3) as i64])).collect());
                let mut s = derive_stream(77, n as u64);
                let est = empirical_transform(&e, &xi, &sampler, 40_000, &mut s).unwrap();
                assert!(est.within(rho.powi(n as i32), 3.0), "λ={lambda} n={n}: {est:?}");
            }
        }
    }

    #[test]
    fn empirical_transform_at_single_site_and_empty_measure() {
        let torus = Geometry::torus(1, 5).unwrap();
        let e = DualityEvaluator::new(2.0).unwrap();
        let xi = ParticleList::on_line(&[0]);
        let nu = ProductSampler::new(InitialLaw::Nu(NuLambda::new(0.4, 2.0).unwrap()), torus).unwrap();
        let mut s = derive_stream(6, 0);
        let est = empirical_transform(&e, &xi, &nu, 100_000, &mut s).unwrap();
        assert!(est.within(0.4 / 0.6, 3.0), "{est:?}");

        let empty = ProductSampler::new(InitialLaw::Nu(NuLambda::new(0.0, 2.0).unwrap()), torus).unwrap();
        let est = empirical_transform(&e, &xi, &empty, 100, &mut s).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn single_precision_pmf() {
        let p = marginal_pmf(2u64, 0.5f32, 2.0f32).unwrap();
        assert!((p - 0.125).abs() < 1e-6);
    }
}
