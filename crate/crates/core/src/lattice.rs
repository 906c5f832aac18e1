//! Periodic square lattice in two or three dimensions.
//!
//! Sites are linearized as `x_0 + L x_1 (+ L^2 x_2)`. Link `(mu, s)` joins
//! `s` and `s + e_mu` and has id `mu * L^d + linear(s)`, so each direction
//! occupies a contiguous block of ids. Link `l` is qubit `l` of the register.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plaquette {
    pub plane: (usize, usize),
    pub site: usize,
    /// `(mu, s)`, `(nu, s + e_mu)`, `(mu, s + e_nu)`, `(nu, s)`.
    pub links: [usize; 4],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopSpec {
    /// Links in walk order.
    pub links: Vec<usize>,
    pub perimeter: usize,
    /// Number of plaquettes in the spanning surface; `None` for
    /// non-contractible loops.
    pub area: Option<usize>,
    pub contractible: bool,
    pub direction: Option<usize>,
}

impl LoopSpec {
    pub fn mask(&self) -> usize {
        self.links.iter().fold(0, |m, &l| m | (1 << l))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DualSurface {
    pub links: Vec<usize>,
    pub direction: usize,
}

impl DualSurface {
    pub fn mask(&self) -> usize {
        self.links.iter().fold(0, |m, &l| m | (1 << l))
    }
}

#[derive(Debug)]
pub struct Lattice {
    dim: usize,
    size: usize,
    num_sites: usize,
    plaquettes: Vec<Plaquette>,
    link_plaquettes: Vec<Vec<usize>>,
    flip_counts: OnceLock<Vec<u8>>,
}

impl Clone for Lattice {
    fn clone(&self) -> Self {
        Self {
            dim: self.dim,
            size: self.size,
            num_sites: self.num_sites,
            plaquettes: self.plaquettes.clone(),
            link_plaquettes: self.link_plaquettes.clone(),
            flip_counts: OnceLock::new(),
        }
    }
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.size == other.size
    }
}

impl Lattice {
    pub fn build(dim: usize, size: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::UnsupportedLattice(format!(
                "dimension {dim} (only 2 and 3 are supported)"
            )));
        }
        if size < 2 {
            return Err(Error::UnsupportedLattice(format!(
                "linear size {size} (need at least 2)"
            )));
        }
        let num_sites = size.pow(dim as u32);
        let mut lat = Self {
            dim,
            size,
            num_sites,
            plaquettes: Vec::new(),
            link_plaquettes: vec![Vec::new(); dim * num_sites],
            flip_counts: OnceLock::new(),
        };
        let mut plaquettes = Vec::new();
        for mu in 0..dim {
            for nu in mu + 1..dim {
                for site in 0..num_sites {
                    let links = lat.plaquette_links_at(mu, nu, site);
                    plaquettes.push(Plaquette {
                        plane: (mu, nu),
                        site,
                        links,
                    });
                }
            }
        }
        for (p, plaq) in plaquettes.iter().enumerate() {
            for &l in &plaq.links {
                lat.link_plaquettes[l].push(p);
            }
        }
        lat.plaquettes = plaquettes;
        Ok(lat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn num_links(&self) -> usize {
        self.dim * self.num_sites
    }

    pub fn num_plaquettes(&self) -> usize {
        self.plaquettes.len()
    }

    pub fn plaquettes(&self) -> &[Plaquette] {
        &self.plaquettes
    }

    /// Bit mask of all links. Mask helpers assume fewer than 64 links,
    /// which every simulable lattice satisfies.
    pub fn link_mask(&self) -> usize {
        (1usize << self.num_links()) - 1
    }

    pub fn links(&self) -> Vec<usize> {
        (0..self.num_links()).collect()
    }

    /// Plaquettes containing link `l`.
    pub fn plaquettes_of_link(&self, l: usize) -> &[usize] {
        &self.link_plaquettes[l]
    }

    pub fn linear(&self, coords: &[usize]) -> Result<usize> {
        if coords.len() != self.dim || coords.iter().any(|&x| x >= self.size) {
            return Err(Error::InvalidGeometry(format!(
                "site {coords:?} outside a {}-dimensional lattice of size {}",
                self.dim, self.size
            )));
        }
        Ok(coords.iter().rev().fold(0, |acc, &x| acc * self.size + x))
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        let mut rest = site;
        (0..self.dim)
            .map(|_| {
                let x = rest % self.size;
                rest /= self.size;
                x
            })
            .collect()
    }

    /// Site reached from `site` by `steps` (may be negative) along `mu`.
    pub fn shift(&self, site: usize, mu: usize, steps: isize) -> usize {
        let stride = self.size.pow(mu as u32);
        let x = (site / stride) % self.size;
        let l = self.size as isize;
        let nx = (((x as isize + steps) % l) + l) % l;
        site - x * stride + nx as usize * stride
    }

    pub fn link_id(&self, mu: usize, site: usize) -> usize {
        mu * self.num_sites + site
    }

    /// `(direction, start site)` of a link.
    pub fn link_parts(&self, l: usize) -> (usize, usize) {
        (l / self.num_sites, l % self.num_sites)
    }

    pub fn link_endpoints(&self, l: usize) -> (usize, usize) {
        let (mu, s) = self.link_parts(l);
        (s, self.shift(s, mu, 1))
    }

    fn plaquette_links_at(&self, mu: usize, nu: usize, site: usize) -> [usize; 4] {
        [
            self.link_id(mu, site),
            self.link_id(nu, self.shift(site, mu, 1)),
            self.link_id(mu, self.shift(site, nu, 1)),
            self.link_id(nu, site),
        ]
    }

    fn check_axis(&self, mu: usize) -> Result<()> {
        if mu >= self.dim {
            return Err(Error::InvalidGeometry(format!(
                "axis {mu} in a {}-dimensional lattice",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn plaquette_links(&self, plane: (usize, usize), coords: &[usize]) -> Result<[usize; 4]> {
        let (mu, nu) = plane;
        if !(mu < nu && nu < self.dim) {
            return Err(Error::InvalidGeometry(format!(
                "plane {plane:?} needs mu < nu < {}",
                self.dim
            )));
        }
        let site = self.linear(coords)?;
        Ok(self.plaquette_links_at(mu, nu, site))
    }

    /// Index of the plaquette in `plane` whose corner is `site`.
    pub fn plaquette_index(&self, plane: (usize, usize), site: usize) -> Result<usize> {
        self.plaquettes
            .iter()
            .position(|p| p.plane == plane && p.site == site)
            .ok_or_else(|| Error::InvalidGeometry(format!("no plaquette {plane:?} at {site}")))
    }

    pub fn star_links_at(&self, site: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.dim).map(|mu| self.link_id(mu, site)).collect();
        out.extend((0..self.dim).map(|mu| self.link_id(mu, self.shift(site, mu, -1))));
        out
    }

    pub fn star_links(&self, coords: &[usize]) -> Result<Vec<usize>> {
        Ok(self.star_links_at(self.linear(coords)?))
    }

    pub fn star_mask(&self, site: usize) -> usize {
        self.star_links_at(site)
            .iter()
            .fold(0, |m, &l| m | (1 << l))
    }

    pub fn plaquette_mask(&self, p: usize) -> usize {
        self.plaquettes[p]
            .links
            .iter()
            .fold(0, |m, &l| m | (1 << l))
    }

    /// Boundary of an `a x b` rectangle (`a` along `mu`, `b` along `nu`)
    /// with corner at `origin`. Rectangles that wrap the torus are rejected.
    pub fn rectangle_contour(
        &self,
        a: usize,
        b: usize,
        plane: (usize, usize),
        origin: &[usize],
    ) -> Result<LoopSpec> {
        let (mu, nu) = plane;
        if !(mu < nu && nu < self.dim) {
            return Err(Error::InvalidGeometry(format!("invalid plane {plane:?}")));
        }
        if a == 0 || b == 0 || a >= self.size || b >= self.size {
            return Err(Error::InvalidGeometry(format!(
                "{a}x{b} rectangle does not fit inside a size-{} torus without wrapping",
                self.size
            )));
        }
        let start = self.linear(origin)?;
        let mut links = Vec::with_capacity(2 * (a + b));
        let mut s = start;
        for _ in 0..a {
            links.push(self.link_id(mu, s));
            s = self.shift(s, mu, 1);
        }
        for _ in 0..b {
            links.push(self.link_id(nu, s));
            s = self.shift(s, nu, 1);
        }
        for _ in 0..a {
            s = self.shift(s, mu, -1);
            links.push(self.link_id(mu, s));
        }
        for _ in 0..b {
            s = self.shift(s, nu, -1);
            links.push(self.link_id(nu, s));
        }
        Ok(LoopSpec {
            perimeter: links.len(),
            links,
            area: Some(a * b),
            contractible: true,
            direction: None,
        })
    }

    /// Boundary of a set of plaquettes (links covered an odd number of
    /// times), ordered as a closed walk.
    pub fn surface_boundary(&self, plaquettes: &[usize]) -> Result<LoopSpec> {
        let mut odd = BTreeSet::new();
        for &p in plaquettes {
            let plaq = self
                .plaquettes
                .get(p)
                .ok_or_else(|| Error::InvalidGeometry(format!("no plaquette {p}")))?;
            for &l in &plaq.links {
                if !odd.remove(&l) {
                    odd.insert(l);
                }
            }
        }
        let links = self.order_as_walk(odd.into_iter().collect())?;
        Ok(LoopSpec {
            perimeter: links.len(),
            links,
            area: Some(plaquettes.len()),
            contractible: true,
            direction: None,
        })
    }

    /// Orders a link set with even incidence at every site into a single
    /// closed walk (Hierholzer).
    fn order_as_walk(&self, links: Vec<usize>) -> Result<Vec<usize>> {
        if links.is_empty() {
            return Ok(links);
        }
        let mut incident: Vec<Vec<usize>> = vec![Vec::new(); self.num_sites];
        for (k, &l) in links.iter().enumerate() {
            let (a, b) = self.link_endpoints(l);
            incident[a].push(k);
            incident[b].push(k);
        }
        if incident.iter().any(|v| v.len() % 2 == 1) {
            return Err(Error::InvalidGeometry("link set is not closed".into()));
        }
        let mut used = vec![false; links.len()];
        let start = self.link_endpoints(links[0]).0;
        let mut stack = vec![(start, None::<usize>)];
        let mut walk = Vec::with_capacity(links.len());
        while let Some(&(v, via)) = stack.last() {
            let next = incident[v].iter().copied().find(|&k| !used[k]);
            match next {
                Some(k) => {
                    used[k] = true;
                    let (a, b) = self.link_endpoints(links[k]);
                    stack.push((if a == v { b } else { a }, Some(k)));
                }
                None => {
                    stack.pop();
                    if let Some(k) = via {
                        walk.push(links[k]);
                    }
                }
            }
        }
        if walk.len() != links.len() {
            return Err(Error::InvalidGeometry(
                "link set is not a single connected loop".into(),
            ));
        }
        walk.reverse();
        Ok(walk)
    }

    pub fn noncontractible_loop(&self, mu: usize) -> Result<LoopSpec> {
        self.check_axis(mu)?;
        let mut s = 0;
        let mut links = Vec::with_capacity(self.size);
        for _ in 0..self.size {
            links.push(self.link_id(mu, s));
            s = self.shift(s, mu, 1);
        }
        Ok(LoopSpec {
            perimeter: self.size,
            links,
            area: None,
            contractible: false,
            direction: Some(mu),
        })
    }

    /// Non-contractible loop along `mu` through `anchor`.
    pub fn noncontractible_loop_through(&self, mu: usize, anchor: usize) -> Result<LoopSpec> {
        let mut lp = self.noncontractible_loop(mu)?;
        let mut s = anchor;
        for l in lp.links.iter_mut() {
            *l = self.link_id(mu, s);
            s = self.shift(s, mu, 1);
        }
        Ok(lp)
    }

    /// All `mu`-links with `x_mu = 0`: the links pierced by a dual surface
    /// perpendicular to `mu`.
    pub fn thooft_surface(&self, mu: usize) -> Result<DualSurface> {
        self.thooft_surface_at(mu, 0)
    }

    pub fn thooft_surface_at(&self, mu: usize, x_mu: usize) -> Result<DualSurface> {
        self.check_axis(mu)?;
        if x_mu >= self.size {
            return Err(Error::InvalidGeometry(format!("slice {x_mu} out of range")));
        }
        let links = (0..self.num_sites)
            .filter(|&s| self.coords(s)[mu] == x_mu)
            .map(|s| self.link_id(mu, s))
            .collect();
        Ok(DualSurface {
            links,
            direction: mu,
        })
    }

    /// Wilson contour `c{index+1}`, with perimeter `4 + 2 index` and area
    /// `index + 1`.
    ///
    /// In two dimensions these are a 1x1 and a 1x2 rectangle and an L-shaped
    /// tromino. In three dimensions the two- and three-plaquette surfaces
    /// are bent across planes so that they stay unwrapped on an `L = 2` torus.
    /// Fails when the contour cannot be placed without wrapping.
    pub fn wilson_contour(&self, index: usize) -> Result<LoopSpec> {
        let origin = 0;
        let e = |mu: usize| self.shift(origin, mu, 1);
        let xy = |site: usize| self.plaquette_index((0, 1), site);
        let set: Vec<usize> = match (self.dim, index) {
            (_, 0) => vec![xy(origin)?],
            (2, 1) => vec![xy(origin)?, xy(e(1))?],
            (2, 2) => vec![xy(origin)?, xy(e(1))?, xy(e(0))?],
            (_, 1) => vec![xy(origin)?, self.plaquette_index((0, 2), origin)?],
            (_, 2) => vec![
                self.plaquette_index((0, 2), origin)?,
                xy(origin)?,
                self.plaquette_index((0, 2), e(1))?,
            ],
            _ => {
                return Err(Error::InvalidGeometry(format!(
                    "no Wilson contour c{}",
                    index + 1
                )))
            }
        };
        let lp = self.surface_boundary(&set)?;
        if lp.perimeter != 4 + 2 * index {
            return Err(Error::InvalidGeometry(format!(
                "contour c{} degenerates to perimeter {} on a size-{} lattice",
                index + 1,
                lp.perimeter,
                self.size
            )));
        }
        Ok(lp)
    }

    pub fn wilson_contours(&self) -> Result<[LoopSpec; 3]> {
        Ok([
            self.wilson_contour(0)?,
            self.wilson_contour(1)?,
            self.wilson_contour(2)?,
        ])
    }

    /// Number of plaquettes with odd link parity for every link
    /// configuration, indexed by the link bits. Built once, on first use.
    pub fn flip_counts(&self) -> &[u8] {
        self.flip_counts.get_or_init(|| self.build_flip_counts())
    }

    fn build_flip_counts(&self) -> Vec<u8> {
        let nl = self.num_links();
        let lo_bits = nl / 2;
        let hi_bits = nl - lo_bits;
        let incidence: Vec<u64> = (0..nl)
            .map(|l| {
                self.link_plaquettes[l]
                    .iter()
                    .fold(0u64, |m, &p| m ^ (1 << p))
            })
            .collect();
        let span = |bits: usize, offset: usize| {
            let mut t = vec![0u64; 1 << bits];
            for b in 0..bits {
                let half = 1 << b;
                for i in 0..half {
                    t[half + i] = t[i] ^ incidence[offset + b];
                }
            }
            t
        };
        let lo = span(lo_bits, 0);
        let hi = span(hi_bits, lo_bits);
        let mut out = Vec::with_capacity(1 << nl);
        for h in &hi {
            for l in &lo {
                out.push((h ^ l).count_ones() as u8);
            }
        }
        out
    }

    /// Eigenvalue of `Z = -sum_p prod sigma^z` on link configuration `config`.
    pub fn z_eigenvalue(&self, config: usize) -> i32 {
        let flips = self.flip_counts()[config & self.link_mask()] as i32;
        2 * flips - self.num_plaquettes() as i32
    }

    fn check_span_size(&self) -> Result<()> {
        if self.num_links() > 64 || self.num_plaquettes() > 64 {
            return Err(Error::UnsupportedLattice(
                "support enumeration needs at most 64 links and plaquettes".into(),
            ));
        }
        Ok(())
    }

    /// Every value `Z` takes on some link configuration.
    pub fn z_support(&self) -> Result<Vec<i32>> {
        self.check_span_size()?;
        let incidence: Vec<u64> = (0..self.num_links())
            .map(|l| {
                self.link_plaquettes[l]
                    .iter()
                    .fold(0u64, |m, &p| m ^ (1 << p))
            })
            .collect();
        let np = self.num_plaquettes() as i32;
        span_popcounts(&incidence).map(|v| v.into_iter().map(|f| 2 * f as i32 - np).collect())
    }

    /// Values of `X = -sum sigma^x` reachable by gauge-invariant states in
    /// the sector with every 't Hooft operator equal to +1. In the x basis
    /// those states are supported on boundaries of plaquette sets.
    pub fn x_support_trivial_sector(&self) -> Result<Vec<i32>> {
        self.x_support_in_sector(&vec![1; self.dim])
    }

    /// Values of `X` reachable in the sector with 't Hooft eigenvalues
    /// `labels`: boundaries shifted by one winding loop along every axis
    /// whose label is -1.
    pub fn x_support_in_sector(&self, labels: &[i8]) -> Result<Vec<i32>> {
        self.check_span_size()?;
        if labels.len() != self.dim || labels.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidInput(format!("sector labels {labels:?}")));
        }
        let mut offset = 0u64;
        for (mu, &v) in labels.iter().enumerate() {
            if v == -1 {
                offset ^= self.noncontractible_loop(mu)?.mask() as u64;
            }
        }
        let gens: Vec<u64> = (0..self.num_plaquettes())
            .map(|p| self.plaquette_mask(p) as u64)
            .collect();
        let nl = self.num_links() as i32;
        span_popcounts_from(offset, &gens)
            .map(|v| v.into_iter().map(|w| 2 * w as i32 - nl).collect())
    }

    pub fn describe(&self) -> LatticeDescription {
        LatticeDescription {
            d: self.dim,
            l: self.size,
            num_links: self.num_links(),
            num_plaquettes: self.num_plaquettes(),
            links: (0..self.num_links())
                .map(|l| {
                    let (mu, s) = self.link_parts(l);
                    LinkRow {
                        id: l,
                        direction: mu,
                        site: self.coords(s),
                    }
                })
                .collect(),
            plaquettes: self
                .plaquettes
                .iter()
                .enumerate()
                .map(|(id, p)| PlaquetteRow {
                    id,
                    plane: [p.plane.0, p.plane.1],
                    site: self.coords(p.site),
                    links: p.links,
                })
                .collect(),
        }
    }
}

/// Sorted distinct popcounts over the GF(2) span of `gens`.
fn span_popcounts(gens: &[u64]) -> Result<Vec<u32>> {
    span_popcounts_from(0, gens)
}

/// Sorted distinct popcounts over the coset `offset + span(gens)`.
fn span_popcounts_from(offset: u64, gens: &[u64]) -> Result<Vec<u32>> {
    let mut basis: Vec<u64> = Vec::new();
    for &g in gens {
        let mut v = g;
        for &b in &basis {
            v = v.min(v ^ b);
        }
        if v != 0 {
            basis.push(v);
            basis.sort_unstable_by(|a, b| b.cmp(a));
        }
    }
    if basis.len() > 30 {
        return Err(Error::UnsupportedLattice(format!(
            "span of rank {} is too large to enumerate",
            basis.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut v = offset;
    seen.insert(v.count_ones());
    for i in 1u64..(1 << basis.len()) {
        v ^= basis[i.trailing_zeros() as usize];
        seen.insert(v.count_ones());
    }
    Ok(seen.into_iter().collect())
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LatticeDescription {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub num_links: usize,
    pub num_plaquettes: usize,
    pub links: Vec<LinkRow>,
    pub plaquettes: Vec<PlaquetteRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LinkRow {
    pub id: usize,
    pub direction: usize,
    pub site: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlaquetteRow {
    pub id: usize,
    pub plane: [usize; 2],
    pub site: Vec<usize>,
    pub links: [usize; 4],
}
