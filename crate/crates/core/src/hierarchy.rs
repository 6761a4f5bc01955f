//! Multi-index bookkeeping for the truncated set of dissipaton density
//! operators and the dense store holding them.
//!
//! Indices are enumerated tier by tier; within a tier the occupation vectors
//! are in descending lexicographic order, so for K = 2, L = 2 the order is
//! (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default cap on the number of operators in a hierarchy.
pub const DEFAULT_MAX_OPERATORS: usize = 10_000_000;

const NONE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(occupations: Vec<u32>) -> Self {
        Self(occupations)
    }

    pub fn zero(modes: usize) -> Self {
        Self(vec![0; modes])
    }

    pub fn unit(modes: usize, k: usize) -> Self {
        let mut v = vec![0; modes];
        v[k] = 1;
        Self(v)
    }

    pub fn occupations(&self) -> &[u32] {
        &self.0
    }

    pub fn modes(&self) -> usize {
        self.0.len()
    }

    pub fn tier(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    /// n_k⁺, or `None` when the raised index would exceed `depth`.
    pub fn raise(&self, k: usize, depth: usize) -> Option<Self> {
        if self.tier() >= depth {
            return None;
        }
        let mut v = self.0.clone();
        v[k] += 1;
        Some(Self(v))
    }

    /// n_k⁻, or `None` when n_k = 0.
    pub fn lower(&self, k: usize) -> Option<Self> {
        if self.0[k] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[k] -= 1;
        Some(Self(v))
    }

    /// n̄: occupation of mode k moved to k̄.
    pub fn conjugate(&self, bar: &[usize]) -> Self {
        let mut v = vec![0; self.0.len()];
        for (k, &n) in self.0.iter().enumerate() {
            v[bar[k]] = n;
        }
        Self(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

/// Number of multi-indices with K modes and tier ≤ L, i.e. C(L+K, K).
pub fn index_count(modes: usize, depth: usize) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=modes as u128 {
        c = c * (depth as u128 + i) / i;
    }
    c
}

/// Enumerated multi-indices with constant-time neighbour lookup.
#[derive(Debug)]
pub struct Hierarchy {
    modes: usize,
    depth: usize,
    occupations: Vec<u32>,
    tier_offsets: Vec<usize>,
    lookup: HashMap<Vec<u32>, usize>,
    up: Vec<u32>,
    down: Vec<u32>,
}

fn fill_tier(modes: usize, remaining: usize, prefix: &mut Vec<u32>, out: &mut Vec<u32>) {
    if prefix.len() + 1 == modes {
        prefix.push(remaining as u32);
        out.extend_from_slice(prefix);
        prefix.pop();
        return;
    }
    for n in (0..=remaining).rev() {
        prefix.push(n as u32);
        fill_tier(modes, remaining - n, prefix, out);
        prefix.pop();
    }
}

impl Hierarchy {
    pub fn new(modes: usize, depth: usize) -> Result<Self> {
        Self::with_limit(modes, depth, DEFAULT_MAX_OPERATORS)
    }

    pub fn with_limit(modes: usize, depth: usize, max_operators: usize) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParameter("hierarchy needs at least one mode".into()));
        }
        let count = index_count(modes, depth);
        if count > max_operators as u128 {
            return Err(Error::HierarchyTooLarge {
                count,
                max: max_operators,
            });
        }
        let count = count as usize;
        let mut occupations = Vec::with_capacity(count * modes);
        let mut tier_offsets = Vec::with_capacity(depth + 2);
        let mut prefix = Vec::with_capacity(modes);
        for tier in 0..=depth {
            tier_offsets.push(occupations.len() / modes);
            fill_tier(modes, tier, &mut prefix, &mut occupations);
        }
        tier_offsets.push(count);
        debug_assert_eq!(occupations.len(), count * modes);

        let lookup: HashMap<Vec<u32>, usize> = occupations
            .chunks_exact(modes)
            .enumerate()
            .map(|(i, occ)| (occ.to_vec(), i))
            .collect();

        let mut up = vec![NONE; count * modes];
        let mut down = vec![NONE; count * modes];
        let mut scratch = vec![0u32; modes];
        for i in 0..count {
            let occ = &occupations[i * modes..(i + 1) * modes];
            let tier: u32 = occ.iter().sum();
            for k in 0..modes {
                scratch.copy_from_slice(occ);
                if (tier as usize) < depth {
                    scratch[k] += 1;
                    up[i * modes + k] = lookup[&scratch] as u32;
                    scratch[k] -= 1;
                }
                if occ[k] > 0 {
                    scratch[k] -= 1;
                    down[i * modes + k] = lookup[&scratch] as u32;
                }
            }
        }

        Ok(Self {
            modes,
            depth,
            occupations,
            tier_offsets,
            lookup,
            up,
            down,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.tier_offsets[self.depth + 1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn occupations(&self, i: usize) -> &[u32] {
        &self.occupations[i * self.modes..(i + 1) * self.modes]
    }

    pub fn index(&self, i: usize) -> MultiIndex {
        MultiIndex(self.occupations(i).to_vec())
    }

    pub fn tier_of(&self, i: usize) -> usize {
        self.occupations(i).iter().map(|&n| n as usize).sum()
    }

    /// Position range of all indices at `tier`.
    pub fn tier_range(&self, tier: usize) -> std::ops::Range<usize> {
        if tier > self.depth {
            return 0..0;
        }
        self.tier_offsets[tier]..self.tier_offsets[tier + 1]
    }

    pub fn position(&self, index: &MultiIndex) -> Option<usize> {
        self.position_of(index.occupations())
    }

    pub fn position_of(&self, occupations: &[u32]) -> Option<usize> {
        self.lookup.get(occupations).copied()
    }

    pub fn raised(&self, i: usize, k: usize) -> Option<usize> {
        let j = self.up[i * self.modes + k];
        (j != NONE).then_some(j as usize)
    }

    pub fn lowered(&self, i: usize, k: usize) -> Option<usize> {
        let j = self.down[i * self.modes + k];
        (j != NONE).then_some(j as usize)
    }

    /// Position of n̄ for every position.
    pub fn conjugate_positions(&self, bar: &[usize]) -> Result<Vec<usize>> {
        if bar.len() != self.modes {
            return Err(Error::DimensionMismatch(format!(
                "pairing map has {} entries for {} modes",
                bar.len(),
                self.modes
            )));
        }
        let mut scratch = vec![0u32; self.modes];
        Ok((0..self.len())
            .map(|i| {
                for (k, &n) in self.occupations(i).iter().enumerate() {
                    scratch[bar[k]] = n;
                }
                self.lookup[&scratch]
            })
            .collect())
    }

    /// FNV-1a digest of the enumeration order.
    pub fn ordering_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &v in &self.occupations {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Enumerates all multi-indices with tier ≤ `depth` in hierarchy order.
pub fn enumerate_indices(modes: usize, depth: usize) -> Result<Vec<MultiIndex>> {
    let h = Hierarchy::new(modes, depth)?;
    Ok((0..h.len()).map(|i| h.index(i)).collect())
}

/// Dense storage of every DDO as a row-major dim×dim block.
#[derive(Clone, Debug)]
pub struct DdoStore {
    hierarchy: Arc<Hierarchy>,
    dim: usize,
    data: Vec<Complex64>,
}

impl DdoStore {
    pub fn zeros(hierarchy: Arc<Hierarchy>, dim: usize) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); hierarchy.len() * dim * dim];
        Self { hierarchy, dim, data }
    }

    pub fn hierarchy(&self) -> &Arc<Hierarchy> {
        &self.hierarchy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_len(&self) -> usize {
        self.dim * self.dim
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn block(&self, i: usize) -> &[Complex64] {
        let b = self.block_len();
        &self.data[i * b..(i + 1) * b]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [Complex64] {
        let b = self.block_len();
        &mut self.data[i * b..(i + 1) * b]
    }

    pub fn matrix(&self, i: usize) -> DMatrix<Complex64> {
        DMatrix::from_row_slice(self.dim, self.dim, self.block(i))
    }

    pub fn set_matrix(&mut self, i: usize, m: &DMatrix<Complex64>) -> Result<()> {
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {d}x{d} block, got {}x{}",
                m.nrows(),
                m.ncols(),
                d = self.dim
            )));
        }
        let dim = self.dim;
        let block = self.block_mut(i);
        for r in 0..dim {
            for c in 0..dim {
                block[r * dim + c] = m[(r, c)];
            }
        }
        Ok(())
    }

    /// Looks up ρ_n; indices above the truncation read as `None`.
    pub fn get(&self, index: &MultiIndex) -> Option<DMatrix<Complex64>> {
        self.hierarchy.position(index).map(|i| self.matrix(i))
    }

    /// Reduced density matrix ρ_S = ρ_0.
    pub fn reduced(&self) -> DMatrix<Complex64> {
        self.matrix(0)
    }

    pub fn trace(&self, i: usize) -> Complex64 {
        let b = self.block(i);
        (0..self.dim).map(|r| b[r * self.dim + r]).sum()
    }

    pub fn frobenius_norm(&self, i: usize) -> f64 {
        self.block(i).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// self += a * other
    pub fn axpy(&mut self, a: Complex64, other: &DdoStore) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: Complex64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    /// max_n ‖ρ_n† − ρ_n̄‖_F.
    pub fn hermiticity_defect(&self, conj_positions: &[usize]) -> f64 {
        let d = self.dim;
        let mut worst: f64 = 0.0;
        for (i, &j) in conj_positions.iter().enumerate() {
            let a = self.block(i);
            let b = self.block(j);
            let mut s = 0.0;
            for r in 0..d {
                for c in 0..d {
                    s += (a[c * d + r].conj() - b[r * d + c]).norm_sqr();
                }
            }
            worst = worst.max(s.sqrt());
        }
        worst
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let h = &self.hierarchy;
        writeln!(out, "# dqme ddo checkpoint v1")?;
        writeln!(out, "modes {}", h.modes())?;
        writeln!(out, "depth {}", h.depth())?;
        writeln!(out, "dim {}", self.dim)?;
        writeln!(out, "ordering {:016x}", h.ordering_hash())?;
        for z in &self.data {
            writeln!(out, "{:.16e} {:.16e}", z.re, z.im)?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut header = |key: &str| -> Result<String> {
            loop {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("missing {key} header")))??;
                if line.starts_with('#') || line.trim().is_empty() {
                    continue;
                }
                let mut parts = line.split_whitespace();
                if parts.next() != Some(key) {
                    return Err(Error::Checkpoint(format!("expected {key} header, found {line:?}")));
                }
                return parts
                    .next()
                    .map(str::to_owned)
                    .ok_or_else(|| Error::Checkpoint(format!("empty {key} header")));
            }
        };
        let parse = |s: String, key: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Checkpoint(format!("bad {key} value {s:?}")))
        };
        let modes = parse(header("modes")?, "modes")?;
        let depth = parse(header("depth")?, "depth")?;
        let dim = parse(header("dim")?, "dim")?;
        let hash = header("ordering")?;
        let hierarchy = Arc::new(Hierarchy::new(modes, depth)?);
        if format!("{:016x}", hierarchy.ordering_hash()) != hash {
            return Err(Error::Checkpoint("ordering hash does not match this build's enumeration".into()));
        }
        let mut store = DdoStore::zeros(hierarchy, dim);
        let mut filled = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if filled == store.data.len() {
                return Err(Error::Checkpoint("more entries than the header declares".into()));
            }
            let mut parts = line.split_whitespace();
            let mut next = || -> Result<f64> {
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Checkpoint(format!("bad entry {line:?}")))
            };
            let re = next()?;
            let im = next()?;
            store.data[filled] = Complex64::new(re, im);
            filled += 1;
        }
        if filled != store.data.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} entries, found {filled}",
                store.data.len()
            )));
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn idx(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn enumeration_examples() {
        let one = enumerate_indices(1, 3).unwrap();
        assert_eq!(one, vec![idx(&[0]), idx(&[1]), idx(&[2]), idx(&[3])]);
        let two = enumerate_indices(2, 2).unwrap();
        assert_eq!(
            two,
            vec![idx(&[0, 0]), idx(&[1, 0]), idx(&[0, 1]), idx(&[2, 0]), idx(&[1, 1]), idx(&[0, 2])]
        );
    }

    #[test]
    fn count_matches_brute_force() {
        // brute force over the cube {0..=L}^K
        let (k, l) = (3usize, 4usize);
        let mut brute = 0;
        for a in 0..=l {
            for b in 0..=l {
                for c in 0..=l {
                    if a + b + c <= l {
                        brute += 1;
                    }
                }
            }
        }
        assert_eq!(brute, 35);
        assert_eq!(enumerate_indices(k, l).unwrap().len(), brute);
        assert_eq!(index_count(k, l), 35);
    }

    #[test]
    fn oversize_hierarchy_rejected() {
        let err = Hierarchy::with_limit(22, 10, 1000).unwrap_err();
        assert!(matches!(err, Error::HierarchyTooLarge { .. }));
        assert!(Hierarchy::new(40, 12).is_err());
    }

    #[test]
    fn raise_and_lower_examples() {
        assert_eq!(idx(&[0, 0]).raise(0, 1), Some(idx(&[1, 0])));
        assert_eq!(idx(&[2, 0]).raise(0, 2), None);
        assert_eq!(idx(&[1, 1]).lower(1), Some(idx(&[1, 0])));
        assert_eq!(idx(&[0, 3]).lower(0), None);
        let n = idx(&[1, 2, 0]);
        assert_eq!(n.raise(2, 5).unwrap().lower(2), Some(n.clone()));
        assert_eq!(n.lower(1).unwrap().raise(1, 5), Some(n));
    }

    #[test]
    fn conjugate_examples() {
        assert_eq!(idx(&[2, 0, 1]).conjugate(&[0, 1, 2]), idx(&[2, 0, 1]));
        assert_eq!(idx(&[2, 0, 1]).conjugate(&[1, 0, 2]), idx(&[0, 2, 1]));
    }

    #[test]
    fn neighbour_tables_agree_with_multi_index() {
        let h = Hierarchy::new(3, 4).unwrap();
        for i in 0..h.len() {
            let n = h.index(i);
            for k in 0..3 {
                assert_eq!(h.raised(i, k), n.raise(k, 4).map(|m| h.position(&m).unwrap()));
                assert_eq!(h.lowered(i, k), n.lower(k).map(|m| h.position(&m).unwrap()));
            }
        }
    }

    #[test]
    fn tier_ranges_are_contiguous() {
        let h = Hierarchy::new(3, 3).unwrap();
        for t in 0..=3 {
            for i in h.tier_range(t) {
                assert_eq!(h.tier_of(i), t);
            }
        }
        assert_eq!(h.tier_range(4), 0..0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let h = Arc::new(Hierarchy::new(2, 3).unwrap());
        let mut store = DdoStore::zeros(h, 2);
        for (i, z) in store.data_mut().iter_mut().enumerate() {
            *z = Complex64::new((i as f64 + 0.1).sqrt() / 3.0, -1.0 / (i as f64 + 7.0).powf(1.3));
        }
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        let back = DdoStore::read_checkpoint(buf.as_slice()).unwrap();
        for (a, b) in store.data().iter().zip(back.data()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn checkpoint_with_truncated_body_rejected() {
        let h = Arc::new(Hierarchy::new(1, 1).unwrap());
        let store = DdoStore::zeros(h, 2);
        let mut buf = Vec::new();
        store.write_checkpoint(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(8).map(|l| format!("{l}\n")).collect();
        assert!(DdoStore::read_checkpoint(cut.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn enumeration_is_a_bijection(k in 1usize..5, l in 0usize..6) {
            let h = Hierarchy::new(k, l).unwrap();
            prop_assert_eq!(h.len() as u128, index_count(k, l));
            for i in 0..h.len() {
                prop_assert_eq!(h.position(&h.index(i)), Some(i));
                prop_assert!(h.tier_of(i) <= l);
            }
        }

        #[test]
        fn double_conjugation_is_identity(occ in proptest::collection::vec(0u32..4, 4)) {
            let bar = [1usize, 0, 2, 3];
            let n = MultiIndex::new(occ);
            prop_assert_eq!(n.conjugate(&bar).conjugate(&bar), n);
        }
    }
}
