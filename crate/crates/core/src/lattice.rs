//! Lattice geometry and particle configurations.
//!
//! Sites are integer tuples. A [`ParticleList`] is the labeled state that all
//! dynamics evolve; an [`Occupation`] is the site-to-count view derived from it
//! on demand.

use std::collections::BTreeMap;
use std::fmt;

use smallvec::SmallVec;

use crate::error::{Result, SipError};

/// A lattice point. Coordinates are stored inline for `d <= 4`.
pub type Site = SmallVec<[i64; 4]>;

pub fn site(coords: &[i64]) -> Site {
    Site::from_slice(coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Infinite,
    /// Periodic box of the given side length; coordinates live in `0..side`.
    Torus(i64),
}

/// One of the `2d` unit moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Direction {
    pub axis: usize,
    pub positive: bool,
}

impl Direction {
    pub fn sign(self) -> i64 {
        if self.positive {
            1
        } else {
            -1
        }
    }

    pub fn reversed(self) -> Self {
        Self {
            axis: self.axis,
            positive: !self.positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    dim: usize,
    boundary: Boundary,
}

impl Geometry {
    pub fn new(dim: usize, boundary: Boundary) -> Result<Self> {
        if dim == 0 {
            return Err(SipError::Domain("dimension must be positive".into()));
        }
        if let Boundary::Torus(side) = boundary {
            if side < 3 {
                return Err(SipError::Domain(format!(
                    "torus side must be at least 3, got {side}"
                )));
            }
        }
        Ok(Self { dim, boundary })
    }

    pub fn infinite(dim: usize) -> Self {
        Self::new(dim, Boundary::Infinite).expect("positive dimension")
    }

    pub fn torus(dim: usize, side: i64) -> Result<Self> {
        Self::new(dim, Boundary::Torus(side))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn side(&self) -> Option<i64> {
        match self.boundary {
            Boundary::Torus(side) => Some(side),
            Boundary::Infinite => None,
        }
    }

    /// Number of sites on a torus, `None` on the infinite lattice.
    pub fn volume(&self) -> Option<usize> {
        self.side().map(|l| (l as usize).pow(self.dim as u32))
    }

    /// The nearest-neighbor jump probability `1/(2d)`.
    pub fn jump_probability(&self) -> f64 {
        1.0 / (2 * self.dim) as f64
    }

    pub fn origin(&self) -> Site {
        Site::from_elem(0, self.dim)
    }

    /// The `2d` unit directions, ordered by axis then sign (negative first).
    pub fn directions(&self) -> impl Iterator<Item = Direction> + '_ {
        (0..self.dim).flat_map(|axis| {
            [false, true]
                .into_iter()
                .map(move |positive| Direction { axis, positive })
        })
    }

    pub fn contains(&self, x: &[i64]) -> bool {
        x.len() == self.dim
            && match self.boundary {
                Boundary::Infinite => true,
                Boundary::Torus(l) => x.iter().all(|&c| (0..l).contains(&c)),
            }
    }

    /// Reduces coordinates into the fundamental domain (no-op on the infinite lattice).
    pub fn wrap(&self, x: &mut [i64]) {
        if let Boundary::Torus(l) = self.boundary {
            for c in x.iter_mut() {
                *c = c.rem_euclid(l);
            }
        }
    }

    /// Moves `x` one step in `dir` in place.
    pub fn step_in_place(&self, x: &mut [i64], dir: Direction) -> Result<()> {
        let c = &mut x[dir.axis];
        match self.boundary {
            Boundary::Infinite => {
                *c = c.checked_add(dir.sign()).ok_or(SipError::Overflow)?;
            }
            Boundary::Torus(l) => {
                *c = (*c + dir.sign()).rem_euclid(l);
            }
        }
        Ok(())
    }

    pub fn step(&self, x: &[i64], dir: Direction) -> Result<Site> {
        let mut y = Site::from_slice(x);
        self.step_in_place(&mut y, dir)?;
        Ok(y)
    }

    /// All sites `y` with `p(x, y) = 1/(2d)`, in [`Geometry::directions`] order.
    pub fn neighbors(&self, x: &[i64]) -> Result<Vec<Site>> {
        self.directions().map(|dir| self.step(x, dir)).collect()
    }

    /// Per-axis separation; on a torus the shorter way around.
    pub fn axis_distance(&self, a: i64, b: i64) -> u64 {
        let diff = a.abs_diff(b);
        match self.boundary {
            Boundary::Infinite => diff,
            Boundary::Torus(l) => {
                let l = l as u64;
                let diff = diff % l;
                diff.min(l - diff)
            }
        }
    }

    pub fn l1_distance(&self, x: &[i64], y: &[i64]) -> u64 {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| self.axis_distance(a, b))
            .sum()
    }

    /// Row-major ordinal of a torus site, `x_0 + L x_1 + L^2 x_2 + ...`.
    pub fn site_index(&self, x: &[i64]) -> Option<usize> {
        let l = self.side()?;
        let mut idx = 0usize;
        for &c in x.iter().rev() {
            idx = idx * l as usize + c.rem_euclid(l) as usize;
        }
        Some(idx)
    }

    pub fn site_at(&self, mut index: usize) -> Option<Site> {
        let l = self.side()? as usize;
        let mut x = Site::with_capacity(self.dim);
        for _ in 0..self.dim {
            x.push((index % l) as i64);
            index /= l;
        }
        Some(x)
    }

    /// Every site of a torus in ordinal order.
    pub fn sites(&self) -> Result<Vec<Site>> {
        let vol = self.volume().ok_or(SipError::InfiniteGeometry)?;
        Ok((0..vol).map(|i| self.site_at(i).unwrap()).collect())
    }
}

/// Labeled finite configuration: particle `i` sits at `positions[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ParticleList {
    positions: Vec<Site>,
}

impl ParticleList {
    pub fn new(positions: Vec<Site>) -> Self {
        Self { positions }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One-dimensional convenience constructor.
    pub fn on_line(xs: &[i64]) -> Self {
        Self::new(xs.iter().map(|&x| site(&[x])).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Site] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &Site {
        &self.positions[i]
    }

    pub fn set_position(&mut self, i: usize, x: Site) {
        self.positions[i] = x;
    }

    pub fn displace(&mut self, i: usize, dir: Direction, geometry: &Geometry) -> Result<()> {
        geometry.step_in_place(&mut self.positions[i], dir)
    }

    /// Number of particles sharing the site `x`.
    pub fn count_at(&self, x: &[i64]) -> u64 {
        self.positions.iter().filter(|p| p.as_slice() == x).count() as u64
    }

    pub fn occupation(&self) -> Occupation {
        occupation_of(self)
    }

    /// Same particles with `other`'s appended after them.
    pub fn concat(&self, other: &ParticleList) -> ParticleList {
        let mut positions = self.positions.clone();
        positions.extend(other.positions.iter().cloned());
        ParticleList { positions }
    }

    /// Sum over particles of the per-particle separation from `other`.
    pub fn paired_l1(&self, other: &ParticleList, geometry: &Geometry) -> u64 {
        self.positions
            .iter()
            .zip(&other.positions)
            .map(|(a, b)| geometry.l1_distance(a, b))
            .sum()
    }
}

impl fmt::Display for ParticleList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .positions
            .iter()
            .map(|x| {
                x.iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        write!(f, "{}", parts.join(";"))
    }
}

/// Site-to-count map with finite support. Zero counts are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Occupation {
    counts: BTreeMap<Site, u64>,
}

impl Occupation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts<I: IntoIterator<Item = (Site, u64)>>(entries: I) -> Self {
        let mut occ = Self::new();
        for (x, k) in entries {
            occ.add(x, k);
        }
        occ
    }

    pub fn get(&self, x: &[i64]) -> u64 {
        self.counts.get(x).copied().unwrap_or(0)
    }

    pub fn add(&mut self, x: Site, k: u64) {
        if k > 0 {
            *self.counts.entry(x).or_insert(0) += k;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Occupied sites with their counts, in lexicographic site order.
    pub fn iter(&self) -> impl Iterator<Item = (&Site, u64)> {
        self.counts.iter().map(|(x, &k)| (x, k))
    }

    /// `η^{x,y} = η − δ_x + δ_y`.
    pub fn moved(&self, x: &[i64], y: &[i64]) -> Result<Occupation> {
        let mut out = self.clone();
        match out.counts.get_mut(x) {
            Some(k) if *k > 0 => {
                *k -= 1;
                if *k == 0 {
                    out.counts.remove(x);
                }
            }
            _ => {
                return Err(SipError::EmptySource {
                    site: x.to_vec(),
                })
            }
        }
        out.add(Site::from_slice(y), 1);
        Ok(out)
    }

    /// Labeled list with particles in site order.
    pub fn to_particles(&self) -> ParticleList {
        let mut positions = Vec::with_capacity(self.total() as usize);
        for (x, k) in self.iter() {
            positions.extend(std::iter::repeat_n(x.clone(), k as usize));
        }
        ParticleList::new(positions)
    }

    /// Support sets are disjoint.
    pub fn disjoint(&self, other: &Occupation) -> bool {
        self.counts.keys().all(|x| other.get(x) == 0)
    }

    pub fn sum(&self, other: &Occupation) -> Occupation {
        let mut out = self.clone();
        for (x, k) in other.iter() {
            out.add(x.clone(), k);
        }
        out
    }
}

pub fn move_particle(eta: &Occupation, x: &[i64], y: &[i64]) -> Result<Occupation> {
    eta.moved(x, y)
}

/// `ξ = Σ_i δ_{x_i}`.
pub fn occupation_of(xi: &ParticleList) -> Occupation {
    let mut occ = Occupation::new();
    for x in xi.positions() {
        occ.add(x.clone(), 1);
    }
    occ
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neighbors_on_line_and_plane() {
        let g1 = Geometry::infinite(1);
        assert_eq!(g1.neighbors(&[0]).unwrap(), vec![site(&[-1]), site(&[1])]);

        let g2 = Geometry::infinite(2);
        let mut n = g2.neighbors(&[0, 0]).unwrap();
        n.sort();
        assert_eq!(
            n,
            vec![site(&[-1, 0]), site(&[0, -1]), site(&[0, 1]), site(&[1, 0])]
        );
    }

    #[test]
    fn torus_neighbors_wrap() {
        let g = Geometry::torus(1, 4).unwrap();
        assert_eq!(g.neighbors(&[3]).unwrap(), vec![site(&[2]), site(&[0])]);
    }

    #[test]
    fn every_site_has_2d_neighbors_at_probability_1_over_2d() {
        for d in 1..=4 {
            let g = Geometry::infinite(d);
            let x = g.origin();
            let n = g.neighbors(&x).unwrap();
            assert_eq!(n.len(), 2 * d);
            assert!(n.iter().all(|y| g.l1_distance(&x, y) == 1));
            let total: f64 = n.iter().map(|_| g.jump_probability()).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn distances() {
        let g = Geometry::infinite(2);
        assert_eq!(g.l1_distance(&[0, 0], &[3, -4]), 7);
        assert_eq!(g.l1_distance(&[5, 5], &[5, 5]), 0);
        let t = Geometry::torus(1, 10).unwrap();
        assert_eq!(t.l1_distance(&[1], &[9]), 2);
    }

    #[test]
    fn bad_geometry_rejected() {
        assert!(Geometry::new(0, Boundary::Infinite).is_err());
        assert!(Geometry::torus(1, 2).is_err());
    }

    #[test]
    fn infinite_lattice_aborts_on_overflow() {
        let g = Geometry::infinite(1);
        let dir = Direction {
            axis: 0,
            positive: true,
        };
        assert_eq!(g.step(&[i64::MAX], dir), Err(SipError::Overflow));
    }

    #[test]
    fn move_examples() {
        let eta = Occupation::from_counts([(site(&[0]), 2)]);
        let moved = eta.moved(&[0], &[1]).unwrap();
        assert_eq!(
            moved,
            Occupation::from_counts([(site(&[0]), 1), (site(&[1]), 1)])
        );

        let one = Occupation::from_counts([(site(&[0]), 1)]);
        let back = one.moved(&[0], &[1]).unwrap().moved(&[1], &[0]).unwrap();
        assert_eq!(back, one);

        let empty = Occupation::new();
        assert!(matches!(
            empty.moved(&[0], &[1]),
            Err(SipError::EmptySource { .. })
        ));
    }

    #[test]
    fn occupation_of_examples() {
        let xi = ParticleList::on_line(&[0, 0, 3]);
        assert_eq!(
            occupation_of(&xi),
            Occupation::from_counts([(site(&[0]), 2), (site(&[3]), 1)])
        );
        assert!(occupation_of(&ParticleList::empty()).is_empty());
        assert_eq!(
            occupation_of(&ParticleList::on_line(&[3, 0, 0])),
            occupation_of(&xi)
        );
    }

    #[test]
    fn torus_site_indexing_roundtrips() {
        let g = Geometry::torus(3, 4).unwrap();
        for i in 0..g.volume().unwrap() {
            let x = g.site_at(i).unwrap();
            assert_eq!(g.site_index(&x), Some(i));
        }
    }

    fn point(d: usize) -> impl Strategy<Value = Vec<i64>> {
        proptest::collection::vec(-1000i64..1000, d)
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(d in 1usize..4, side in 3i64..12, torus in any::<bool>(),
                          seeds in proptest::collection::vec(point(3), 3)) {
            let g = if torus { Geometry::torus(d, side).unwrap() } else { Geometry::infinite(d) };
            let pts: Vec<Vec<i64>> = seeds.iter().map(|p| {
                let mut p = p[..d].to_vec();
                g.wrap(&mut p);
                p
            }).collect();
            let (a, b, c) = (&pts[0], &pts[1], &pts[2]);
            prop_assert_eq!(g.l1_distance(a, b), g.l1_distance(b, a));
            prop_assert_eq!(g.l1_distance(a, a), 0);
            prop_assert!(g.l1_distance(a, c) <= g.l1_distance(a, b) + g.l1_distance(b, c));
        }

        #[test]
        fn moves_conserve_mass(xs in proptest::collection::vec(-5i64..5, 1..12),
                               pick in any::<prop::sample::Index>(), right in any::<bool>()) {
            let xi = ParticleList::on_line(&xs);
            let eta = occupation_of(&xi);
            prop_assert_eq!(eta.total(), xs.len() as u64);
            let x = xs[pick.index(xs.len())];
            let y = if right { x + 1 } else { x - 1 };
            let moved = eta.moved(&[x], &[y]).unwrap();
            prop_assert_eq!(moved.total(), eta.total());
        }
    }
}
