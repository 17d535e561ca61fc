//! Exact finite-state SIP on small tori.
//!
//! The `n`-particle sector of a torus is enumerated explicitly, its generator
//! assembled as a sparse matrix, and `e^{tQ} f` evaluated by uniformization.
//! Every Monte Carlo claim in the crate is checked against these numbers.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};

use crate::duality::DualityEvaluator;
use crate::dynamics::SipParams;
use crate::error::{Result, SipError};
use crate::lattice::{occupation_of, Geometry, Occupation, ParticleList};
use crate::scalar::Scalar;

pub const DEFAULT_STATE_CAP: usize = 200_000;

/// Poisson tail mass left out of each uniformization chunk.
const POISSON_TAIL: f64 = 1e-12;
/// Upper bound on `Λ·Δt` per uniformization chunk.
const CHUNK_MASS: f64 = 32.0;

/// All occupations of `n` particles on a torus, in colexicographic order of
/// their count vectors (site ordinal order inside a vector).
#[derive(Debug, Clone)]
pub struct StateSpace {
    geometry: Geometry,
    particles: u32,
    states: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// `C(sites + n − 1, n)` with saturation.
pub fn sector_size(sites: usize, n: u32) -> usize {
    let mut acc: u128 = 1;
    for j in 0..n as u128 {
        acc = acc * (sites as u128 + j) / (j + 1);
        if acc > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

impl StateSpace {
    pub fn new(geometry: Geometry, n: u32, cap: usize) -> Result<Self> {
        let sites = geometry.volume().ok_or(SipError::InfiniteGeometry)?;
        let size = sector_size(sites, n);
        if size > cap {
            return Err(SipError::CapExceeded { states: size, cap });
        }
        let mut states = Vec::with_capacity(size);
        let mut current = vec![0u32; sites];
        compositions(&mut current, 0, n, &mut states);
        states.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
        let index = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            geometry,
            particles: n,
            states,
            index,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn particles(&self) -> u32 {
        self.particles
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn counts(&self, state: usize) -> &[u32] {
        &self.states[state]
    }

    pub fn index_of_counts(&self, counts: &[u32]) -> Option<usize> {
        self.index.get(counts).copied()
    }

    pub fn index_of(&self, eta: &Occupation) -> Option<usize> {
        let mut counts = vec![0u32; self.geometry.volume()?];
        for (x, k) in eta.iter() {
            if !self.geometry.contains(x) {
                return None;
            }
            counts[self.geometry.site_index(x)?] += k as u32;
        }
        self.index_of_counts(&counts)
    }

    pub fn occupation(&self, state: usize) -> Occupation {
        Occupation::from_counts(
            self.states[state]
                .iter()
                .enumerate()
                .filter(|(_, &k)| k > 0)
                .map(|(i, &k)| (self.geometry.site_at(i).unwrap(), u64::from(k))),
        )
    }

    pub fn particles_at(&self, state: usize) -> ParticleList {
        self.occupation(state).to_particles()
    }

    /// Evaluates `f` on every state.
    pub fn tabulate<T>(&self, mut f: impl FnMut(&Occupation) -> T) -> Vec<T> {
        (0..self.len()).map(|i| f(&self.occupation(i))).collect()
    }
}

fn compositions(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        compositions(current, pos + 1, remaining - k, out);
    }
    current[pos] = 0;
}

/// Sparse generator of one particle-number sector.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix<T: Scalar> {
    space: StateSpace,
    /// Off-diagonal `(column, rate)` pairs per row, sorted by column.
    off: Vec<Vec<(usize, T)>>,
    diag: Vec<T>,
}

/// Assembles `Q(η, η^{x,y}) = Σ p(x,y) η(x) (m/2 + η(y))` on the `n`-particle sector.
pub fn build_generator<T: Scalar>(n: u32, params: &SipParams<T>, cap: usize) -> Result<GeneratorMatrix<T>> {
    let geometry = *params.geometry();
    let space = StateSpace::new(geometry, n, cap)?;
    let p = params.jump_probability();
    let half_m = params.m() / T::of(2.0);
    let inclusion = if params.inclusion_enabled() { T::one() } else { T::zero() };
    let sites = geometry.sites()?;
    let neighbor_idx: Vec<Vec<usize>> = sites
        .iter()
        .map(|x| {
            geometry
                .neighbors(x)
                .unwrap()
                .iter()
                .map(|y| geometry.site_index(y).unwrap())
                .collect()
        })
        .collect();

    let mut off = Vec::with_capacity(space.len());
    let mut diag = Vec::with_capacity(space.len());
    let mut scratch = Vec::new();
    for s in 0..space.len() {
        let counts = space.counts(s);
        let mut row: BTreeMap<usize, T> = BTreeMap::new();
        for (x, &cx) in counts.iter().enumerate() {
            if cx == 0 {
                continue;
            }
            for &y in &neighbor_idx[x] {
                let rate = p * T::of_u64(u64::from(cx)) * (half_m + inclusion * T::of_u64(u64::from(counts[y])));
                scratch.clear();
                scratch.extend_from_slice(counts);
                scratch[x] -= 1;
                scratch[y] += 1;
                let col = space.index_of_counts(&scratch).expect("move stays in sector");
                *row.entry(col).or_insert(T::zero()) += rate;
            }
        }
        let total = row.values().fold(T::zero(), |a, &r| a + r);
        diag.push(-total);
        off.push(row.into_iter().collect());
    }
    Ok(GeneratorMatrix { space, off, diag })
}

impl<T: Scalar> GeneratorMatrix<T> {
    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Entry `Q(i, j)`.
    pub fn rate(&self, i: usize, j: usize) -> T {
        if i == j {
            return self.diag[i];
        }
        self.off[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|k| self.off[i][k].1)
            .unwrap_or(T::zero())
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.off[i].iter().copied()
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.dim())
            .map(|i| self.off[i].iter().fold(self.diag[i], |a, &(_, r)| a + r))
            .collect()
    }

    /// `(Q f)(i) = Σ_j Q(i,j) (f(j) − f(i))`.
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| {
                self.off[i]
                    .iter()
                    .fold(T::zero(), |a, &(j, r)| a + r * (f[j] - f[i]))
            })
            .collect()
    }

    pub fn uniformization_rate(&self) -> T {
        self.diag.iter().fold(T::zero(), |a, &d| a.max(-d))
    }

    /// `e^{tQ} f` by uniformization, chunked so each Poisson weight stays representable.
    pub fn semigroup_apply(&self, t: T, f: &[T]) -> Result<Vec<T>> {
        if !(t >= T::zero()) {
            return Err(SipError::Domain(format!("time must be >= 0, got {t}")));
        }
        assert_eq!(f.len(), self.dim(), "function length must match the state space");
        let lambda = self.uniformization_rate();
        if t == T::zero() || lambda == T::zero() {
            return Ok(f.to_vec());
        }
        let chunks = (lambda * t / T::of(CHUNK_MASS)).ceil().to_usize().unwrap_or(1).max(1);
        let dt = t / T::of_u64(chunks as u64);
        let mut v = f.to_vec();
        for _ in 0..chunks {
            v = self.uniformized_chunk(lambda, dt, &v);
        }
        Ok(v)
    }

    fn uniformized_chunk(&self, lambda: T, dt: T, f: &[T]) -> Vec<T> {
        let a = lambda * dt;
        let tail = T::of(POISSON_TAIL).max(T::epsilon() * T::of(64.0));
        let max_terms = (a + T::of(50.0) * a.sqrt() + T::of(200.0)).to_usize().unwrap_or(10_000);
        let mut weight = (-a).exp();
        let mut mass = weight;
        let mut power = f.to_vec();
        let mut acc: Vec<T> = power.iter().map(|&x| weight * x).collect();
        let mut j = 0usize;
        while mass < T::one() - tail && j < max_terms {
            j += 1;
            let q = self.apply(&power);
            for (p, qv) in power.iter_mut().zip(q) {
                *p += qv / lambda;
            }
            weight = weight * a / T::of_u64(j as u64);
            mass += weight;
            for (s, &p) in acc.iter_mut().zip(&power) {
                *s += weight * p;
            }
        }
        acc.into_iter().map(|s| s / mass).collect()
    }

    /// Time average `(1/T) ∫_0^T S_t f dt`.
    ///
    /// Each chunk integral uses `∫_0^τ e^{sQ} ds = Λ^{-1} Σ_k P(N_τ > k) P^k`
    /// with `N_τ ~ Poisson(Λτ)`, truncated once `P(N_τ > k) < tol`; chunks are
    /// chained through the semigroup.
    pub fn cesaro_average(&self, horizon: T, f: &[T], tol: T) -> Result<Vec<T>> {
        if !(horizon >= T::zero()) {
            return Err(SipError::Domain(format!("horizon must be >= 0, got {horizon}")));
        }
        assert_eq!(f.len(), self.dim(), "function length must match the state space");
        let lambda = self.uniformization_rate();
        if horizon == T::zero() || lambda == T::zero() {
            return Ok(f.to_vec());
        }
        let chunks = (lambda * horizon / T::of(CHUNK_MASS)).ceil().to_usize().unwrap_or(1).max(1);
        let tau = horizon / T::of_u64(chunks as u64);
        let mut piece = self.chunk_integral(lambda, tau, f, tol);
        let mut acc = piece.clone();
        for _ in 1..chunks {
            piece = self.semigroup_apply(tau, &piece)?;
            for (a, &p) in acc.iter_mut().zip(&piece) {
                *a += p;
            }
        }
        Ok(acc.into_iter().map(|a| a / horizon).collect())
    }

    fn chunk_integral(&self, lambda: T, tau: T, f: &[T], tol: T) -> Vec<T> {
        let a = lambda * tau;
        let tol = tol.max(T::epsilon() * T::of(64.0));
        let max_terms = (a + T::of(50.0) * a.sqrt() + T::of(200.0)).to_usize().unwrap_or(10_000);
        let mut pmf = (-a).exp();
        let mut survival = T::one() - pmf;
        let mut power = f.to_vec();
        let mut acc: Vec<T> = power.iter().map(|&x| survival * x).collect();
        let mut weight = survival;
        let mut k = 0usize;
        while survival > tol && k < max_terms {
            k += 1;
            let q = self.apply(&power);
            for (p, qv) in power.iter_mut().zip(q) {
                *p += qv / lambda;
            }
            pmf = pmf * a / T::of_u64(k as u64);
            survival = (survival - pmf).max(T::zero());
            weight += survival;
            for (s, &p) in acc.iter_mut().zip(&power) {
                *s += survival * p;
            }
        }
        // The untruncated weights sum to Λτ; rescale for the dropped tail.
        acc.into_iter().map(|s| s * tau / weight).collect()
    }

    /// Text dump: a header line, one `state ordinal counts` line per state,
    /// then `row col rate` triplets (diagonal included).
    pub fn write_triplets<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# states {} particles {}", self.dim(), self.space.particles())?;
        for i in 0..self.dim() {
            let counts: Vec<String> = self.space.counts(i).iter().map(|c| c.to_string()).collect();
            writeln!(out, "state {i} {}", counts.join(","))?;
        }
        for i in 0..self.dim() {
            let mut entries: Vec<(usize, T)> = self.off[i].clone();
            entries.push((i, self.diag[i]));
            entries.sort_by_key(|&(c, _)| c);
            for (j, r) in entries {
                writeln!(out, "{i} {j} {r:e}")?;
            }
        }
        Ok(())
    }
}

/// Both sides of the self-duality identity,
/// `(E_η D(ξ, η_t), E_ξ D(ξ_t, η))`, each on its own exact sector.
pub fn exact_dual_expectation<T: Scalar>(
    xi: &ParticleList,
    eta: &Occupation,
    t: T,
    params: &SipParams<T>,
    cap: usize,
) -> Result<(T, T)> {
    let duality = DualityEvaluator::new(params.m())?;
    let xi_occ = occupation_of(xi);

    let eta_gen = build_generator(eta.total() as u32, params, cap)?;
    let eta_idx = eta_gen
        .space()
        .index_of(eta)
        .ok_or_else(|| SipError::Domain("η does not lie on the torus".into()))?;
    let f = eta_gen.space().tabulate(|state| duality.evaluate_occupation(&xi_occ, state));
    let left = eta_gen.semigroup_apply(t, &f)?[eta_idx];

    let xi_gen = build_generator(xi.len() as u32, params, cap)?;
    let xi_idx = xi_gen
        .space()
        .index_of(&xi_occ)
        .ok_or_else(|| SipError::Domain("ξ does not lie on the torus".into()))?;
    let g = xi_gen.space().tabulate(|state| duality.evaluate_occupation(state, eta));
    let right = xi_gen.semigroup_apply(t, &g)?[xi_idx];

    Ok((left, right))
}
