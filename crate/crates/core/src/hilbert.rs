//! Fock spaces, Hamiltonians, states and observables for the two-species
//! Bose-Hubbard chain
//!
//! ```text
//! H = sum_{sigma,i} [ -J_i (a+_{sigma,i} a_{sigma,i+1} + h.c.) + U/2 n_{sigma,i}(n_{sigma,i} - 1) ]
//!     + U sum_i n_{up,i} n_{down,i}
//! ```
//!
//! with `J_i = J_odd` on bonds `(1,2), (3,4), ...` and `J_even` on
//! `(2,3), (4,5), ...`. Sites are numbered from 1 in the public API.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::propagator::Hamiltonian;
use crate::pulse::HoppingSchedule;

/// Default cap on the many-body dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 5_000_000;
/// Largest dimension for which dense matrices are built.
pub const DENSE_DIMENSION_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    #[default]
    Open,
    /// Ring; needs an even number of sites so the two-site cell tiles it.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondParity {
    Odd,
    Even,
}

/// Bonds as zero-based site pairs.
pub fn bonds(sites: usize, bc: BoundaryCondition) -> Result<Vec<(usize, usize, BondParity)>> {
    if bc == BoundaryCondition::Periodic && sites % 2 != 0 {
        return Err(Error::InvalidArgument(format!("periodic chain needs an even site count, got {sites}")));
    }
    let parity = |i: usize| if i % 2 == 0 { BondParity::Odd } else { BondParity::Even };
    let mut out: Vec<_> = (0..sites.saturating_sub(1)).map(|i| (i, i + 1, parity(i))).collect();
    if bc == BoundaryCondition::Periodic && sites >= 2 {
        out.push((sites - 1, 0, parity(sites - 1)));
    }
    Ok(out)
}

/// Number of ways to place `particles` bosons on `sites` sites.
pub fn multiset_count(sites: usize, particles: usize) -> u128 {
    if sites == 0 {
        return u128::from(particles == 0);
    }
    // C(sites + particles - 1, particles), exact at every step
    let mut acc: u128 = 1;
    for k in 1..=particles as u128 {
        acc = acc * (sites as u128 - 1 + k) / k;
    }
    acc
}

/// All occupation vectors of one species with a fixed particle number, in
/// ascending lexicographic order.
#[derive(Debug, Clone)]
struct SpeciesTable {
    configs: Vec<Box<[u8]>>,
    index: HashMap<Box<[u8]>, usize>,
}

impl SpeciesTable {
    fn from_configs(mut configs: Vec<Box<[u8]>>) -> Self {
        configs.sort();
        let index = configs.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect();
        Self { configs, index }
    }

    fn compositions(sites: usize, particles: usize) -> Vec<Box<[u8]>> {
        fn rec(pos: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Box<[u8]>>) {
            if pos + 1 == cur.len() {
                cur[pos] = left as u8;
                out.push(cur.clone().into_boxed_slice());
                return;
            }
            for n in 0..=left {
                cur[pos] = n as u8;
                rec(pos + 1, left - n, cur, out);
            }
        }
        let mut out = Vec::new();
        if sites > 0 {
            rec(0, particles, &mut vec![0u8; sites], &mut out);
        }
        out
    }
}

/// Fixed particle numbers of one block of the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sector {
    pub n_up: usize,
    pub n_down: usize,
}

/// Occupation-number basis of the two-species chain.
///
/// States are ordered lexicographically over the concatenated vector
/// `(n_up_1..n_up_L, n_down_1..n_down_L)`. A basis may hold several sectors
/// with distinct `n_up`, which is what a qubit imprinted as
/// `alpha |up> + beta |down>` needs; the Hamiltonian never couples them.
#[derive(Debug, Clone)]
pub struct FockBasis {
    sites: usize,
    sectors: Vec<Sector>,
    up: SpeciesTable,
    /// For each up configuration, the down table it pairs with.
    down_of_up: Vec<usize>,
    down: Vec<SpeciesTable>,
    offsets: Vec<usize>,
}

impl FockBasis {
    pub fn new(sites: usize, n_up: usize, n_down: usize) -> Result<Self> {
        Self::with_sectors(sites, &[Sector { n_up, n_down }], DEFAULT_DIMENSION_CAP)
    }

    /// Union of the all-down sector and the single-up sector with one atom per
    /// site in total.
    pub fn qubit_chain(sites: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidArgument("chain needs at least one site".into()));
        }
        Self::with_sectors(
            sites,
            &[Sector { n_up: 0, n_down: sites }, Sector { n_up: 1, n_down: sites - 1 }],
            DEFAULT_DIMENSION_CAP,
        )
    }

    pub fn with_sectors(sites: usize, sectors: &[Sector], cap: usize) -> Result<Self> {
        if sites == 0 {
            return Err(Error::InvalidArgument("chain needs at least one site".into()));
        }
        if sectors.is_empty() {
            return Err(Error::InvalidArgument("at least one sector required".into()));
        }
        let mut sorted = sectors.to_vec();
        sorted.sort_by_key(|s| s.n_up);
        if sorted.windows(2).any(|w| w[0].n_up == w[1].n_up) {
            return Err(Error::InvalidArgument("sectors must have distinct up-particle numbers".into()));
        }
        if sorted.iter().any(|s| s.n_up > u8::MAX as usize || s.n_down > u8::MAX as usize) {
            return Err(Error::InvalidArgument("at most 255 particles per species".into()));
        }
        let dimension: u128 = sorted
            .iter()
            .map(|s| multiset_count(sites, s.n_up).saturating_mul(multiset_count(sites, s.n_down)))
            .fold(0u128, |a, b| a.saturating_add(b));
        if dimension > cap as u128 {
            return Err(Error::Capacity { dimension, cap });
        }

        let down: Vec<SpeciesTable> = sorted
            .iter()
            .map(|s| SpeciesTable::from_configs(SpeciesTable::compositions(sites, s.n_down)))
            .collect();
        let mut ups: Vec<(Box<[u8]>, usize)> = Vec::new();
        for (si, s) in sorted.iter().enumerate() {
            ups.extend(SpeciesTable::compositions(sites, s.n_up).into_iter().map(|c| (c, si)));
        }
        ups.sort();
        let down_of_up: Vec<usize> = ups.iter().map(|(_, si)| *si).collect();
        let up = SpeciesTable::from_configs(ups.into_iter().map(|(c, _)| c).collect());

        let mut offsets = Vec::with_capacity(up.configs.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &si in &down_of_up {
            acc += down[si].configs.len();
            offsets.push(acc);
        }
        Ok(Self { sites, sectors: sorted, up, down_of_up, down, offsets })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn sectors(&self) -> &[Sector] {
        &self.sectors
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn tag(&self) -> BasisTag {
        BasisTag::Fock { sites: self.sites, sectors: self.sectors.clone() }
    }

    /// `(up occupations, down occupations)` of state `k`.
    pub fn occupations(&self, k: usize) -> (&[u8], &[u8]) {
        let ui = self.offsets.partition_point(|&o| o <= k) - 1;
        let di = k - self.offsets[ui];
        (&self.up.configs[ui], &self.down[self.down_of_up[ui]].configs[di])
    }

    /// Concatenated occupation vector of state `k`.
    pub fn state(&self, k: usize) -> Vec<u8> {
        let (u, d) = self.occupations(k);
        u.iter().chain(d).copied().collect()
    }

    pub fn index_of_parts(&self, up: &[u8], down: &[u8]) -> Option<usize> {
        let ui = *self.up.index.get(up)?;
        let di = *self.down[self.down_of_up[ui]].index.get(down)?;
        Some(self.offsets[ui] + di)
    }

    pub fn index_of(&self, occupation: &[u8]) -> Option<usize> {
        if occupation.len() != 2 * self.sites {
            return None;
        }
        let (u, d) = occupation.split_at(self.sites);
        self.index_of_parts(u, d)
    }

    fn check(&self, psi: &ChainState) -> Result<()> {
        if psi.tag != self.tag() || psi.amplitudes.len() != self.dim() {
            return Err(Error::BasisMismatch(format!("expected {:?}, got {:?}", self.tag(), psi.tag)));
        }
        Ok(())
    }
}

/// Identifies which basis a state's amplitudes refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BasisTag {
    Fock { sites: usize, sectors: Vec<Sector> },
    /// One particle on `sites` sites, amplitude `k` on site `k + 1`.
    SingleParticle { sites: usize },
}

/// Amplitudes over a basis. States built by the constructors here are
/// normalized; `raw` wraps arbitrary vectors such as `H psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    tag: BasisTag,
    amplitudes: Vec<C64>,
}

impl ChainState {
    pub fn normalized(tag: BasisTag, mut amplitudes: Vec<C64>) -> Result<Self> {
        let n = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidArgument("cannot normalize a zero or non-finite vector".into()));
        }
        amplitudes.iter_mut().for_each(|z| *z /= n);
        Ok(Self { tag, amplitudes })
    }

    pub fn raw(tag: BasisTag, amplitudes: Vec<C64>) -> Self {
        Self { tag, amplitudes }
    }

    /// Single particle on `site` (1-based) of an `sites`-site chain.
    pub fn single_particle(sites: usize, site: usize) -> Result<Self> {
        if site == 0 || site > sites {
            return Err(Error::InvalidArgument(format!("site {site} outside 1..={sites}")));
        }
        let mut a = vec![C64::new(0.0, 0.0); sites];
        a[site - 1] = C64::new(1.0, 0.0);
        Ok(Self { tag: BasisTag::SingleParticle { sites }, amplitudes: a })
    }

    /// Basis vector with the given concatenated `(up, down)` occupations.
    pub fn fock(basis: &FockBasis, occupation: &[u8]) -> Result<Self> {
        let k = basis
            .index_of(occupation)
            .ok_or_else(|| Error::ParticleNumber(format!("occupation {occupation:?} not in basis")))?;
        let mut a = vec![C64::new(0.0, 0.0); basis.dim()];
        a[k] = C64::new(1.0, 0.0);
        Ok(Self { tag: basis.tag(), amplitudes: a })
    }

    pub fn tag(&self) -> &BasisTag {
        &self.tag
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &ChainState) -> Result<C64> {
        if self.tag != other.tag || self.amplitudes.len() != other.amplitudes.len() {
            return Err(Error::BasisMismatch("inner product across different bases".into()));
        }
        Ok(self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum())
    }

    /// Same tag, new amplitudes (used after propagation).
    pub fn with_amplitudes(&self, amplitudes: Vec<C64>) -> Self {
        Self { tag: self.tag.clone(), amplitudes }
    }
}

fn interaction_energy(up: &[u8], down: &[u8]) -> f64 {
    up.iter()
        .zip(down)
        .map(|(&u, &d)| {
            let (u, d) = (u as f64, d as f64);
            0.5 * u * (u - 1.0) + 0.5 * d * (d - 1.0) + u * d
        })
        .sum()
}

/// `H psi` computed directly from the ladder-operator rules, without any
/// precomputed structure.
pub fn apply_hamiltonian(
    basis: &FockBasis,
    bc: BoundaryCondition,
    j_odd: f64,
    j_even: f64,
    u: f64,
    psi: &ChainState,
) -> Result<ChainState> {
    basis.check(psi)?;
    let bonds = bonds(basis.sites, bc)?;
    let mut out = vec![C64::new(0.0, 0.0); basis.dim()];
    for (k, amp) in psi.amplitudes.iter().enumerate() {
        if *amp == C64::new(0.0, 0.0) {
            continue;
        }
        let (up, down) = basis.occupations(k);
        out[k] += amp * (u * interaction_energy(up, down));
        for &(a, b, parity) in &bonds {
            let j = match parity {
                BondParity::Odd => j_odd,
                BondParity::Even => j_even,
            };
            if j == 0.0 {
                continue;
            }
            for species in [Species::Up, Species::Down] {
                for (from, to) in [(a, b), (b, a)] {
                    let mut u_occ = up.to_vec();
                    let mut d_occ = down.to_vec();
                    let occ = if species == Species::Up { &mut u_occ } else { &mut d_occ };
                    if occ[from] == 0 {
                        continue;
                    }
                    let factor = (occ[from] as f64).sqrt() * (occ[to] as f64 + 1.0).sqrt();
                    occ[from] -= 1;
                    occ[to] += 1;
                    let target = basis
                        .index_of_parts(&u_occ, &d_occ)
                        .expect("hopping preserves particle numbers");
                    out[target] += amp * (-j * factor);
                }
            }
        }
    }
    Ok(ChainState::raw(basis.tag(), out))
}

/// Compressed-row hopping operator for one bond parity.
#[derive(Debug, Clone, Default)]
struct SparseHopping {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseHopping {
    fn from_triplets(dim: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        for &(r, _, _) in &t {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            row_ptr,
            cols: t.iter().map(|x| x.1).collect(),
            vals: t.iter().map(|x| x.2).collect(),
        }
    }

    #[inline]
    fn row_dot(&self, r: usize, psi: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for p in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += psi[self.cols[p]] * self.vals[p];
        }
        acc
    }
}

/// Precomputed chain Hamiltonian `-J_odd K_odd - J_even K_even + U D`, reused
/// for every evaluation during propagation.
#[derive(Debug, Clone)]
pub struct ChainHamiltonian {
    tag: BasisTag,
    dim: usize,
    odd: SparseHopping,
    even: SparseHopping,
    interaction: Vec<f64>,
}

impl ChainHamiltonian {
    pub fn new(basis: &FockBasis, bc: BoundaryCondition) -> Result<Self> {
        let bonds = bonds(basis.sites, bc)?;
        let dim = basis.dim();
        let mut odd = Vec::new();
        let mut even = Vec::new();
        let mut interaction = Vec::with_capacity(dim);
        let mut u_occ = vec![0u8; basis.sites];
        let mut d_occ = vec![0u8; basis.sites];
        for k in 0..dim {
            let (up, down) = basis.occupations(k);
            interaction.push(interaction_energy(up, down));
            for &(a, b, parity) in &bonds {
                let list = match parity {
                    BondParity::Odd => &mut odd,
                    BondParity::Even => &mut even,
                };
                for species in [Species::Up, Species::Down] {
                    for (from, to) in [(a, b), (b, a)] {
                        u_occ.copy_from_slice(up);
                        d_occ.copy_from_slice(down);
                        let occ = if species == Species::Up { &mut u_occ } else { &mut d_occ };
                        if occ[from] == 0 {
                            continue;
                        }
                        let factor = (occ[from] as f64).sqrt() * (occ[to] as f64 + 1.0).sqrt();
                        occ[from] -= 1;
                        occ[to] += 1;
                        let target = basis.index_of_parts(&u_occ, &d_occ).expect("hopping preserves particle numbers");
                        list.push((target, k, factor));
                    }
                }
            }
        }
        Ok(Self {
            tag: basis.tag(),
            dim,
            odd: SparseHopping::from_triplets(dim, odd),
            even: SparseHopping::from_triplets(dim, even),
            interaction,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> &BasisTag {
        &self.tag
    }

    /// `out = H psi`.
    pub fn apply(&self, j_odd: f64, j_even: f64, u: f64, psi: &[C64], out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = psi[r] * (u * self.interaction[r]);
            if j_odd != 0.0 {
                acc -= self.odd.row_dot(r, psi) * j_odd;
            }
            if j_even != 0.0 {
                acc -= self.even.row_dot(r, psi) * j_even;
            }
            *o = acc;
        }
    }

    /// Dense real matrix, for oracle checks on small bases.
    pub fn dense(&self, j_odd: f64, j_even: f64, u: f64) -> Result<DMatrix<f64>> {
        if self.dim > DENSE_DIMENSION_LIMIT {
            return Err(Error::Capacity { dimension: self.dim as u128, cap: DENSE_DIMENSION_LIMIT });
        }
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            m[(r, r)] = u * self.interaction[r];
            for (op, j) in [(&self.odd, j_odd), (&self.even, j_even)] {
                for p in op.row_ptr[r]..op.row_ptr[r + 1] {
                    m[(r, op.cols[p])] -= j * op.vals[p];
                }
            }
        }
        Ok(m)
    }
}

/// Many-body chain driven by a hopping schedule.
pub struct ChainDynamics<'a> {
    pub hamiltonian: &'a ChainHamiltonian,
    pub schedule: &'a HoppingSchedule,
}

impl Hamiltonian for ChainDynamics<'_> {
    fn dim(&self) -> usize {
        self.hamiltonian.dim
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        let (jo, je) = self.schedule.couplings(t);
        self.hamiltonian.apply(jo, je, self.schedule.interaction, psi, out);
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.schedule.breakpoints()
    }
}

/// `L x L` single-particle hopping matrix.
pub fn build_single_particle_hamiltonian(
    sites: usize,
    bc: BoundaryCondition,
    j_odd: f64,
    j_even: f64,
) -> Result<DMatrix<f64>> {
    if sites < 2 {
        return Err(Error::InvalidArgument("single-particle chain needs at least two sites".into()));
    }
    let mut m = DMatrix::zeros(sites, sites);
    for (a, b, parity) in bonds(sites, bc)? {
        let j = match parity {
            BondParity::Odd => j_odd,
            BondParity::Even => j_even,
        };
        m[(a, b)] -= j;
        m[(b, a)] -= j;
    }
    Ok(m)
}

/// One particle hopping under a schedule (the `U = 0` reduction).
pub struct SingleParticleDynamics<'a> {
    sites: usize,
    bonds: Vec<(usize, usize, BondParity)>,
    pub schedule: &'a HoppingSchedule,
}

impl<'a> SingleParticleDynamics<'a> {
    pub fn new(sites: usize, bc: BoundaryCondition, schedule: &'a HoppingSchedule) -> Result<Self> {
        if sites < 2 {
            return Err(Error::InvalidArgument("single-particle chain needs at least two sites".into()));
        }
        Ok(Self { sites, bonds: bonds(sites, bc)?, schedule })
    }
}

impl Hamiltonian for SingleParticleDynamics<'_> {
    fn dim(&self) -> usize {
        self.sites
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) {
        let (jo, je) = self.schedule.couplings(t);
        out.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
        for &(a, b, parity) in &self.bonds {
            let j = match parity {
                BondParity::Odd => jo,
                BondParity::Even => je,
            };
            out[a] -= psi[b] * j;
            out[b] -= psi[a] * j;
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.schedule.breakpoints()
    }
}

/// `(alpha a+_{up,port} + beta a+_{down,port}) prod_{j != port} a+_{down,j} |vac>`.
///
/// Needs a basis holding the sectors the amplitudes populate: `(1, L-1)` for
/// `alpha != 0` and `(0, L)` for `beta != 0` (see [`FockBasis::qubit_chain`]).
pub fn product_state_with_qubit(basis: &FockBasis, write_port: usize, alpha: C64, beta: C64) -> Result<ChainState> {
    let l = basis.sites;
    let norm = alpha.norm_sqr() + beta.norm_sqr();
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidAmplitudes { norm });
    }
    if write_port == 0 || write_port > l {
        return Err(Error::InvalidArgument(format!("write port {write_port} outside 1..={l}")));
    }
    let mut amps = vec![C64::new(0.0, 0.0); basis.dim()];
    let mut up = vec![0u8; l];
    let mut down = vec![1u8; l];
    if beta != C64::new(0.0, 0.0) {
        let k = basis
            .index_of_parts(&up, &down)
            .ok_or_else(|| Error::ParticleNumber(format!("basis lacks the all-down sector (0, {l})")))?;
        amps[k] = beta;
    }
    if alpha != C64::new(0.0, 0.0) {
        up[write_port - 1] = 1;
        down[write_port - 1] = 0;
        let k = basis
            .index_of_parts(&up, &down)
            .ok_or_else(|| Error::ParticleNumber(format!("basis lacks the single-up sector (1, {})", l - 1)))?;
        amps[k] = alpha;
    }
    ChainState::normalized(basis.tag(), amps)
}

/// Site-resolved densities and derived quantities of a state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observables {
    /// `<n_up,i>`; for single-particle states, the particle density.
    pub density_up: Vec<f64>,
    pub density_down: Vec<f64>,
    /// `|<ref|psi>|^2` when a reference was supplied.
    pub overlap: Option<f64>,
}

impl Observables {
    pub fn of(basis: &FockBasis, psi: &ChainState, reference: Option<&ChainState>) -> Result<Self> {
        basis.check(psi)?;
        let l = basis.sites;
        let mut density_up = vec![0.0; l];
        let mut density_down = vec![0.0; l];
        for (k, a) in psi.amplitudes.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let (u, d) = basis.occupations(k);
            for i in 0..l {
                density_up[i] += p * u[i] as f64;
                density_down[i] += p * d[i] as f64;
            }
        }
        let overlap = reference.map(|r| r.inner(psi).map(|z| z.norm_sqr())).transpose()?;
        Ok(Self { density_up, density_down, overlap })
    }

    pub fn single_particle(psi: &ChainState, reference: Option<&ChainState>) -> Result<Self> {
        let BasisTag::SingleParticle { sites } = psi.tag else {
            return Err(Error::BasisMismatch("expected a single-particle state".into()));
        };
        let density_up = psi.amplitudes.iter().map(|z| z.norm_sqr()).collect();
        let overlap = reference.map(|r| r.inner(psi).map(|z| z.norm_sqr())).transpose()?;
        Ok(Self { density_up, density_down: vec![0.0; sites], overlap })
    }

    pub fn total_density(&self) -> Vec<f64> {
        self.density_up.iter().zip(&self.density_down).map(|(a, b)| a + b).collect()
    }

    /// `sum_i i <n_up,i> / sum_i <n_up,i>` with sites numbered from 1.
    pub fn average_up_position(&self) -> Result<f64> {
        let total: f64 = self.density_up.iter().sum();
        if total < 1e-12 {
            return Err(Error::ParticleNumber("no up population to locate".into()));
        }
        let weighted: f64 = self.density_up.iter().enumerate().map(|(i, n)| (i + 1) as f64 * n).sum();
        Ok(weighted / total)
    }
}
