//! Symbolic dynamics: subshifts of finite type, cylinder-set algebra, orbit capacity,
//! the 2-adic odometer tower and the weighted shift metrics.
//!
//! Cylinder sets are recoded onto a higher-block presentation whose vertices are the
//! allowed words on a window `[lo, hi)`; the indicator of a set then becomes a 0/1
//! vertex weight, and orbit capacity is a longest-path / maximum-mean-cycle problem.

use std::collections::{BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{pow2_neg, q, qi, Q};

pub type Symbol = u16;

/// A subshift of finite type given by its allowed 2-blocks. The transition graph must
/// be essential (every symbol has a predecessor and a successor), so every path in it
/// extends to a bi-infinite sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sft {
    names: Vec<String>,
    allowed: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftJson {
    pub alphabet: Vec<String>,
    pub allowed: Vec<[String; 2]>,
}

impl Sft {
    pub fn new(names: Vec<String>, pairs: &[(Symbol, Symbol)]) -> Result<Self> {
        let k = names.len();
        if k == 0 {
            return Err(Error::EmptyLanguage);
        }
        let mut allowed = vec![vec![false; k]; k];
        for &(a, b) in pairs {
            if a as usize >= k || b as usize >= k {
                return Err(Error::Invalid(format!("transition ({a},{b}) outside alphabet")));
            }
            allowed[a as usize][b as usize] = true;
        }
        for s in 0..k {
            let out = allowed[s].iter().any(|x| *x);
            let inc = (0..k).any(|t| allowed[t][s]);
            if !out || !inc {
                return Err(Error::Invalid(format!(
                    "symbol {:?} has no {} transition",
                    names[s],
                    if out { "incoming" } else { "outgoing" }
                )));
            }
        }
        Ok(Sft { names, allowed })
    }

    pub fn full_shift(k: usize) -> Self {
        let names = (0..k).map(|i| i.to_string()).collect();
        let pairs: Vec<_> = (0..k as Symbol)
            .flat_map(|a| (0..k as Symbol).map(move |b| (a, b)))
            .collect();
        Sft::new(names, &pairs).unwrap()
    }

    /// Binary sequences without two consecutive `1`s.
    pub fn golden_mean() -> Self {
        Sft::new(vec!["0".into(), "1".into()], &[(0, 0), (0, 1), (1, 0)]).unwrap()
    }

    pub fn alphabet_size(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, s: Symbol) -> &str {
        &self.names[s as usize]
    }

    pub fn symbol(&self, name: &str) -> Result<Symbol> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| i as Symbol)
            .ok_or_else(|| Error::Parse(format!("unknown symbol {name:?}")))
    }

    pub fn allows(&self, a: Symbol, b: Symbol) -> bool {
        self.allowed[a as usize][b as usize]
    }

    pub fn is_allowed_word(&self, w: &[Symbol]) -> bool {
        w.iter().all(|s| (*s as usize) < self.names.len())
            && w.windows(2).all(|p| self.allows(p[0], p[1]))
    }

    /// All allowed words of length `len`, in lexicographic order.
    pub fn words(&self, len: usize) -> Vec<Vec<Symbol>> {
        let mut out: Vec<Vec<Symbol>> = if len == 0 {
            return vec![vec![]];
        } else {
            (0..self.names.len() as Symbol).map(|s| vec![s]).collect()
        };
        for _ in 1..len {
            out = out
                .into_iter()
                .flat_map(|w| {
                    let last = *w.last().unwrap();
                    (0..self.names.len() as Symbol)
                        .filter(move |b| self.allows(last, *b))
                        .map(move |b| {
                            let mut v = w.clone();
                            v.push(b);
                            v
                        })
                })
                .collect();
        }
        out
    }

    pub fn to_json(&self) -> SftJson {
        let mut allowed = Vec::new();
        for a in 0..self.names.len() {
            for b in 0..self.names.len() {
                if self.allowed[a][b] {
                    allowed.push([self.names[a].clone(), self.names[b].clone()]);
                }
            }
        }
        SftJson {
            alphabet: self.names.clone(),
            allowed,
        }
    }

    pub fn from_json(j: &SftJson) -> Result<Self> {
        let idx = |s: &str| {
            j.alphabet
                .iter()
                .position(|n| n == s)
                .map(|i| i as Symbol)
                .ok_or_else(|| Error::Parse(format!("unknown symbol {s:?}")))
        };
        let pairs = j
            .allowed
            .iter()
            .map(|[a, b]| Ok((idx(a)?, idx(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let distinct: BTreeSet<_> = j.alphabet.iter().collect();
        if distinct.len() != j.alphabet.len() {
            return Err(Error::Parse("repeated alphabet symbol".into()));
        }
        Sft::new(j.alphabet.clone(), &pairs)
    }
}

/// `x_{offset .. offset + word.len()} = word`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cylinder {
    pub offset: i64,
    pub word: Vec<Symbol>,
}

/// A finite union of cylinders (clopen).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CylinderSet {
    pub cylinders: Vec<Cylinder>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderJson {
    pub offset: i64,
    pub word: Vec<String>,
}

impl CylinderSet {
    pub fn empty() -> Self {
        CylinderSet::default()
    }

    pub fn one(offset: i64, word: Vec<Symbol>) -> Self {
        CylinderSet {
            cylinders: vec![Cylinder { offset, word }],
        }
    }

    /// The whole space.
    pub fn everything() -> Self {
        CylinderSet::one(0, vec![])
    }

    pub fn union(&self, other: &CylinderSet) -> CylinderSet {
        let mut cylinders = self.cylinders.clone();
        cylinders.extend(other.cylinders.iter().cloned());
        CylinderSet { cylinders }
    }

    pub fn from_words(lo: i64, words: impl IntoIterator<Item = Vec<Symbol>>) -> Self {
        CylinderSet {
            cylinders: words
                .into_iter()
                .map(|word| Cylinder { offset: lo, word })
                .collect(),
        }
    }

    /// Smallest window containing every cylinder.
    pub fn span(&self) -> Option<(i64, i64)> {
        self.cylinders
            .iter()
            .filter(|c| !c.word.is_empty())
            .map(|c| (c.offset, c.offset + c.word.len() as i64))
            .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    /// Whether the window word `w` on `[lo, lo + w.len())` lies in the set. Every
    /// cylinder must fit inside the window.
    pub fn contains_word(&self, lo: i64, w: &[Symbol]) -> bool {
        self.cylinders.iter().any(|c| {
            if c.word.is_empty() {
                return true;
            }
            let start = c.offset - lo;
            debug_assert!(start >= 0 && start as usize + c.word.len() <= w.len());
            let start = start as usize;
            w[start..start + c.word.len()] == c.word[..]
        })
    }

    pub fn to_json(&self, sft: &Sft) -> Vec<CylinderJson> {
        self.cylinders
            .iter()
            .map(|c| CylinderJson {
                offset: c.offset,
                word: c.word.iter().map(|s| sft.name(*s).to_string()).collect(),
            })
            .collect()
    }

    pub fn from_json(sft: &Sft, j: &[CylinderJson]) -> Result<Self> {
        let cylinders = j
            .iter()
            .map(|c| {
                Ok(Cylinder {
                    offset: c.offset,
                    word: c.word.iter().map(|s| sft.symbol(s)).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(CylinderSet { cylinders })
    }
}

/// Smallest window (at least one symbol wide) containing every cylinder of `sets`.
pub fn common_window<'a>(sets: impl IntoIterator<Item = &'a CylinderSet>) -> (i64, i64) {
    sets.into_iter()
        .filter_map(CylinderSet::span)
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
        .unwrap_or((0, 1))
}

/// The allowed window words on `[lo, hi)` that lie in `set`.
pub fn words_in(sft: &Sft, set: &CylinderSet, lo: i64, hi: i64) -> BTreeSet<Vec<Symbol>> {
    sft.words((hi - lo) as usize)
        .into_iter()
        .filter(|w| set.contains_word(lo, w))
        .collect()
}

pub fn is_subset(sft: &Sft, a: &CylinderSet, b: &CylinderSet) -> bool {
    let (lo, hi) = common_window([a, b]);
    words_in(sft, a, lo, hi).is_subset(&words_in(sft, b, lo, hi))
}

pub fn is_disjoint(sft: &Sft, a: &CylinderSet, b: &CylinderSet) -> bool {
    let (lo, hi) = common_window([a, b]);
    words_in(sft, a, lo, hi).is_disjoint(&words_in(sft, b, lo, hi))
}

pub fn difference(sft: &Sft, a: &CylinderSet, b: &CylinderSet) -> CylinderSet {
    let (lo, hi) = common_window([a, b]);
    let bw = words_in(sft, b, lo, hi);
    CylinderSet::from_words(
        lo,
        words_in(sft, a, lo, hi).into_iter().filter(|w| !bw.contains(w)),
    )
}

pub fn complement(sft: &Sft, a: &CylinderSet) -> CylinderSet {
    difference(sft, &CylinderSet::everything(), a)
}

pub fn is_empty_set(sft: &Sft, a: &CylinderSet) -> bool {
    let (lo, hi) = common_window([a]);
    words_in(sft, a, lo, hi).is_empty()
}

/// Higher-block presentation on a window with a 0/1 vertex weight.
#[derive(Clone, Debug)]
pub struct BlockGraph {
    pub lo: i64,
    pub words: Vec<Vec<Symbol>>,
    pub succ: Vec<Vec<usize>>,
    pub weight: Vec<u64>,
}

impl BlockGraph {
    pub fn new(sft: &Sft, set: &CylinderSet) -> Self {
        let (lo, hi) = common_window([set]);
        let words = sft.words((hi - lo) as usize);
        let index: std::collections::BTreeMap<&[Symbol], usize> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_slice(), i))
            .collect();
        let succ = words
            .iter()
            .map(|w| {
                let last = *w.last().unwrap();
                (0..sft.alphabet_size() as Symbol)
                    .filter(|b| sft.allows(last, *b))
                    .map(|b| {
                        let mut v = w[1..].to_vec();
                        v.push(b);
                        index[v.as_slice()]
                    })
                    .collect()
            })
            .collect();
        let weight = words
            .iter()
            .map(|w| u64::from(set.contains_word(lo, w)))
            .collect();
        BlockGraph {
            lo,
            words,
            succ,
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Maximum total weight over paths of `n` vertices.
    pub fn max_path_weight(&self, n: u64) -> u64 {
        let mut best: Vec<u64> = self.weight.clone();
        for _ in 1..n {
            let mut next = vec![0u64; self.len()];
            let mut seen = vec![false; self.len()];
            for (u, bu) in best.iter().enumerate() {
                for &v in &self.succ[u] {
                    if !seen[v] || *bu > next[v] {
                        next[v] = *bu;
                        seen[v] = true;
                    }
                }
            }
            for v in 0..self.len() {
                next[v] += self.weight[v];
            }
            best = next;
        }
        best.into_iter().max().unwrap_or(0)
    }

    /// Maximum over paths of the number of weighted vertices at positions
    /// `0, stride, 2*stride, ..., (count-1)*stride`.
    pub fn max_strided_weight(&self, stride: u64, count: u64) -> u64 {
        let n = self.len();
        // vertices reachable in exactly `stride` steps
        let mut reach: Vec<BTreeSet<usize>> = (0..n).map(|u| BTreeSet::from([u])).collect();
        for _ in 0..stride {
            reach = reach
                .into_iter()
                .map(|s| s.iter().flat_map(|u| self.succ[*u].iter().copied()).collect())
                .collect();
        }
        let mut best: Vec<u64> = self.weight.clone();
        for _ in 1..count {
            let mut next: Vec<Option<u64>> = vec![None; n];
            for u in 0..n {
                for &v in &reach[u] {
                    next[v] = Some(next[v].map_or(best[u], |x| x.max(best[u])));
                }
            }
            best = next
                .into_iter()
                .enumerate()
                .map(|(v, b)| b.unwrap_or(0) + self.weight[v])
                .collect();
        }
        best.into_iter().max().unwrap_or(0)
    }
}

/// `(1/N) * sup_x sum_{n<N} 1_A(T^n x)`, exactly.
pub fn ocap_finite_n(sft: &Sft, a: &CylinderSet, n: u64) -> Result<Q> {
    if n == 0 {
        return Err(Error::OutOfRange("N must be at least 1".into()));
    }
    let g = BlockGraph::new(sft, a);
    if g.is_empty() {
        return Err(Error::EmptyLanguage);
    }
    Ok(q(g.max_path_weight(n) as i64, n as i64))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcapLimit {
    pub value: Q,
    /// One period of a periodic point attaining the value.
    pub cycle: Vec<Symbol>,
}

/// Orbit capacity as the maximum mean weight of a cycle in the block graph (Karp), with a
/// witness cycle. The witness starts at the smallest vertex of largest weight lying on an
/// optimal cycle and is the shortest such cycle, lexicographically smallest among those.
pub fn ocap_limit(sft: &Sft, a: &CylinderSet) -> Result<OcapLimit> {
    let g = BlockGraph::new(sft, a);
    if g.is_empty() {
        return Err(Error::EmptyLanguage);
    }
    let n = g.len();
    // walk[k][v]: max weight of a walk with k edges ending at v, weights on edge sources
    let mut walk: Vec<Vec<Option<i64>>> = vec![vec![Some(0); n]];
    for k in 1..=n {
        let mut row = vec![None; n];
        for u in 0..n {
            if let Some(d) = walk[k - 1][u] {
                let cand = d + g.weight[u] as i64;
                for &v in &g.succ[u] {
                    if row[v].is_none_or(|x| cand > x) {
                        row[v] = Some(cand);
                    }
                }
            }
        }
        walk.push(row);
    }
    let mut best: Option<Q> = None;
    for v in 0..n {
        let Some(dn) = walk[n][v] else { continue };
        let worst = (0..n)
            .filter_map(|k| walk[k][v].map(|dk| q(dn - dk, (n - k) as i64)))
            .min()
            .expect("k = 0 is always finite");
        if best.as_ref().is_none_or(|b| worst > *b) {
            best = Some(worst);
        }
    }
    let value = best.expect("essential graph has a cycle");
    let cycle = witness_cycle(&g, &value);
    Ok(OcapLimit {
        value,
        cycle: cycle.iter().map(|v| g.words[*v][0]).collect(),
    })
}

fn witness_cycle(g: &BlockGraph, mean: &Q) -> Vec<usize> {
    let n = g.len();
    let reduced: Vec<Q> = g.weight.iter().map(|w| qi(*w as i64) - mean).collect();
    // longest-walk potentials; no positive cycles after reduction
    let mut pot = vec![Q::zero(); n];
    for _ in 0..=n {
        let mut changed = false;
        for u in 0..n {
            let cand = &pot[u] + &reduced[u];
            for &v in &g.succ[u] {
                if cand > pot[v] {
                    pot[v] = cand.clone();
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|u| {
            let mut t: Vec<usize> = g.succ[u]
                .iter()
                .copied()
                .filter(|v| &pot[u] + &reduced[u] == pot[*v])
                .collect();
            t.sort_unstable();
            t.dedup();
            t
        })
        .collect();
    let shortest_return = |s: usize| -> Option<Vec<usize>> {
        let mut parent = vec![usize::MAX; n];
        let mut queue = VecDeque::new();
        for &v in &tight[s] {
            if v == s {
                return Some(vec![s]);
            }
            if parent[v] == usize::MAX {
                parent[v] = s;
                queue.push_back(v);
            }
        }
        while let Some(u) = queue.pop_front() {
            for &v in &tight[u] {
                if v == s {
                    let mut path = vec![u];
                    let mut c = u;
                    while parent[c] != s {
                        c = parent[c];
                        path.push(c);
                    }
                    path.push(s);
                    path.reverse();
                    return Some(path);
                }
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    queue.push_back(v);
                }
            }
        }
        None
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|v| (std::cmp::Reverse(g.weight[*v]), *v));
    order
        .into_iter()
        .find_map(shortest_return)
        .expect("an optimal cycle consists of tight edges")
}

/// A clopen neighbourhood `U` of `E` with `ocap(U) < ocap(E) + delta`.
///
/// `levels` is a decreasing sequence of clopen sets whose last member is `E`; the
/// shallowest level meeting the bound is returned with its depth. A single clopen `E`
/// is its own neighbourhood.
pub fn ocap_neighborhood(
    sft: &Sft,
    levels: &[CylinderSet],
    delta: &Q,
) -> Result<(CylinderSet, usize)> {
    if !delta.is_positive() {
        return Err(Error::OutOfRange("delta must be positive".into()));
    }
    let Some(target) = levels.last() else {
        return Err(Error::Invalid("no levels given".into()));
    };
    for w in levels.windows(2) {
        if !is_subset(sft, &w[1], &w[0]) {
            return Err(Error::Invalid("levels are not nested".into()));
        }
    }
    let bound = ocap_limit(sft, target)?.value + delta;
    for (depth, u) in levels.iter().enumerate() {
        if ocap_limit(sft, u)?.value < bound {
            return Ok((u.clone(), depth));
        }
    }
    unreachable!("the last level meets its own bound")
}

#[derive(Clone, Debug)]
pub struct SbpRefinement {
    /// Pairwise disjoint `E_i ⊆ V_i`.
    pub pieces: Vec<CylinderSet>,
    /// `Y \ (E_1 ∪ ... ∪ E_m)`.
    pub complement: CylinderSet,
    pub complement_ocap: Q,
}

/// Peels a clopen cover into disjoint pieces `E_i = V_i \ (V_1 ∪ ... ∪ V_{i-1})`.
///
/// Clopen sets have empty boundary, so no boundary neighbourhoods are removed and the
/// pieces cover the whole space: the complement has orbit capacity exactly zero.
pub fn sbp_cover_refine(sft: &Sft, cover: &[CylinderSet], delta: &Q) -> Result<SbpRefinement> {
    if !delta.is_positive() {
        return Err(Error::OutOfRange("delta must be positive".into()));
    }
    let (lo, hi) = common_window(cover);
    let per: Vec<BTreeSet<Vec<Symbol>>> =
        cover.iter().map(|v| words_in(sft, v, lo, hi)).collect();
    for w in sft.words((hi - lo) as usize) {
        if !per.iter().any(|s| s.contains(&w)) {
            return Err(Error::NotACover {
                offset: lo,
                word: w.iter().map(|s| sft.name(*s).to_string()).collect(),
            });
        }
    }
    let mut taken: BTreeSet<Vec<Symbol>> = BTreeSet::new();
    let mut pieces = Vec::with_capacity(cover.len());
    for s in &per {
        let fresh: Vec<_> = s.iter().filter(|w| !taken.contains(*w)).cloned().collect();
        taken.extend(fresh.iter().cloned());
        pieces.push(CylinderSet::from_words(lo, fresh));
    }
    let complement = CylinderSet::from_words(
        lo,
        sft.words((hi - lo) as usize)
            .into_iter()
            .filter(|w| !taken.contains(w)),
    );
    let complement_ocap = ocap_limit(sft, &complement)?.value;
    if complement_ocap >= *delta {
        return Err(Error::Invalid("complement orbit capacity not below delta".into()));
    }
    Ok(SbpRefinement {
        pieces,
        complement,
        complement_ocap,
    })
}

/// Level-`k` tower of the 2-adic odometer `z -> z + 1` with base `U = {z ≡ 0 mod 2^k}`.
/// Only `z mod 2^k` matters for return times, so points are residues.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdometerTower {
    pub k: u32,
}

impl OdometerTower {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 || k > 40 {
            return Err(Error::OutOfRange(format!("tower level {k} outside 1..=40")));
        }
        Ok(OdometerTower { k })
    }

    pub fn period(&self) -> u64 {
        1 << self.k
    }

    /// Largest `L` with `U ∩ R^{-n} U = ∅` for `1 <= n <= L`.
    pub fn l(&self) -> u64 {
        self.period() - 1
    }

    /// `L'` with `Z = ∪_{n=1}^{L'-1} R^{-n} U`.
    pub fn l_prime(&self) -> u64 {
        self.period() + 1
    }

    fn check_residue(&self, r: u64) -> Result<()> {
        if r >= self.period() {
            return Err(Error::OutOfRange(format!(
                "residue {r} not below 2^{}",
                self.k
            )));
        }
        Ok(())
    }

    /// `E(z) ∩ [a, b)` for `z ≡ r`: the times `n` with `R^n z ∈ U`, i.e. `n ≡ -r`.
    pub fn hits(&self, r: u64, a: i64, b: i64) -> Result<Vec<i64>> {
        self.check_residue(r)?;
        let p = self.period() as i64;
        let first = a + (-(r as i64) - a).rem_euclid(p);
        Ok((first..b.max(first)).step_by(p as usize).collect())
    }

    /// Largest hit `<= t`.
    pub fn hit_at_or_before(&self, r: u64, t: i64) -> i64 {
        let p = self.period() as i64;
        t - (t + r as i64).rem_euclid(p)
    }

    /// Smallest hit `>= t`.
    pub fn hit_at_or_after(&self, r: u64, t: i64) -> i64 {
        let p = self.period() as i64;
        t + (-(r as i64) - t).rem_euclid(p)
    }

    /// Checks the tower identities on residues: the return time to `U` is `2^k`, the
    /// first `L` preimages of `U` are disjoint from it and `L' - 1` preimages cover.
    pub fn check_invariants(&self) -> bool {
        let p = self.period();
        let in_u = |z: u64| z % p == 0;
        let disjoint = (0..p).filter(|z| in_u(*z)).all(|z| {
            (1..=self.l()).all(|n| !in_u((z + n) % p))
        });
        let covers = (0..p).all(|z| (1..self.l_prime()).any(|n| in_u((z + n) % p)));
        disjoint && covers
    }
}

/// A point of `[0,1]^Z` known on the window `[start, start + values.len())`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftWindow {
    pub start: i64,
    #[serde(with = "crate::rational::q_vec")]
    pub values: Vec<Q>,
}

impl ShiftWindow {
    pub fn new(start: i64, values: Vec<Q>) -> Self {
        ShiftWindow { start, values }
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    pub fn get(&self, i: i64) -> Option<&Q> {
        if i < self.start {
            return None;
        }
        self.values.get((i - self.start) as usize)
    }

    pub fn slice(&self, a: i64, b: i64) -> Result<&[Q]> {
        if a < self.start || b > self.end() || a > b {
            return Err(Error::Window { need_lo: a, need_hi: b });
        }
        Ok(&self.values[(a - self.start) as usize..(b - self.start) as usize])
    }
}

/// Exact `sum_j 2^{-|j|} |x_{n+j} - y_{n+j}|` over the shared window of two points that
/// agree outside it.
fn shifted_sum<T>(start: i64, xs: &[T], ys: &[T], n: i64, diff: impl Fn(&T, &T) -> Q) -> Q {
    xs.iter()
        .zip(ys)
        .enumerate()
        .filter_map(|(i, (a, b))| {
            let d = diff(a, b);
            (!d.is_zero()).then(|| {
                let j = (start + i as i64 - n).unsigned_abs() as u32;
                d * pow2_neg(j)
            })
        })
        .sum()
}

fn same_layout(a: (i64, usize), b: (i64, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Invalid("windows must share start and length".into()));
    }
    Ok(())
}

/// `rho(sigma^n x, sigma^n y)` for two points agreeing outside their common window.
pub fn rho_shifted(x: &ShiftWindow, y: &ShiftWindow, n: i64) -> Result<Q> {
    same_layout((x.start, x.values.len()), (y.start, y.values.len()))?;
    Ok(shifted_sum(x.start, &x.values, &y.values, n, |a, b| (a - b).abs()))
}

/// `d_N(x, y) = max_{0 <= n < N} rho(sigma^n x, sigma^n y)` for points agreeing outside
/// their common window.
pub fn d_n(n_horizon: u64, x: &ShiftWindow, y: &ShiftWindow) -> Result<Q> {
    if n_horizon == 0 {
        return Err(Error::OutOfRange("N must be at least 1".into()));
    }
    (0..n_horizon as i64)
        .map(|n| rho_shifted(x, y, n))
        .try_fold(Q::zero(), |acc, d| Ok(acc.max(d?)))
}

/// `d_N` with unknown coordinates outside the windows: `value` sums the known terms and
/// `tail` bounds what the unknown coordinates (each differing by at most 1) can add.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncatedDistance {
    pub value: Q,
    pub tail: Q,
}

pub fn d_n_truncated(n_horizon: u64, x: &ShiftWindow, y: &ShiftWindow) -> Result<TruncatedDistance> {
    same_layout((x.start, x.values.len()), (y.start, y.values.len()))?;
    if n_horizon == 0 {
        return Err(Error::OutOfRange("N must be at least 1".into()));
    }
    if x.start > 0 || x.end() < n_horizon as i64 {
        return Err(Error::Window {
            need_lo: 0,
            need_hi: n_horizon as i64,
        });
    }
    let mut value = Q::zero();
    let mut tail = Q::zero();
    for n in 0..n_horizon as i64 {
        value = value.max(rho_shifted(x, y, n)?);
        // sum over j < start - n and j >= end - n of 2^{-|j|}
        let left = (n - x.start + 1) as u32; // |j| >= n - start + 1 on the left
        let right = (x.end() - n) as u32; // j >= end - n on the right
        tail = tail.max(pow2_neg(left) * qi(2) + pow2_neg(right) * qi(2));
    }
    Ok(TruncatedDistance { value, tail })
}

/// Symbolic analogue: `sum_j 2^{-|j|} [x_{n+j} != y_{n+j}]`, maximized over `0 <= n < N`.
pub fn d_n_symbolic(n_horizon: u64, start: i64, x: &[Symbol], y: &[Symbol]) -> Result<Q> {
    same_layout((start, x.len()), (start, y.len()))?;
    Ok((0..n_horizon as i64)
        .map(|n| shifted_sum(start, x, y, n, |a, b| if a == b { Q::zero() } else { qi(1) }))
        .max()
        .unwrap_or_else(Q::zero))
}

/// `sum_{|n| >= m} 2^{-|n|} = 2^{2-m}` for `m >= 1`.
pub fn two_sided_tail(m: u32) -> Q {
    assert!(m >= 1);
    Q::new(BigInt::from(4), BigInt::from(1) << m)
}
