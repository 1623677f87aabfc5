//! Abstract simplicial complexes and the purely combinatorial constructions on them:
//! full subcomplexes, barycentric subdivision, cones, wedges of cones and the
//! dimension-bucket partition of a subdivision.
//!
//! Complexes store their full simplex family explicitly (not only maximal faces), so
//! full-subcomplex and star queries are plain set filters.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = u32;

/// A nonempty set of vertices, kept sorted and deduplicated.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Simplex(Vec<VertexId>);

impl Simplex {
    pub fn new(mut vertices: Vec<VertexId>) -> Result<Self> {
        vertices.sort_unstable();
        vertices.dedup();
        if vertices.is_empty() {
            return Err(Error::InvalidComplex("simplex with no vertices".into()));
        }
        Ok(Simplex(vertices))
    }

    pub fn vertex(v: VertexId) -> Self {
        Simplex(vec![v])
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn is_face_of(&self, other: &Simplex) -> bool {
        self.0.iter().all(|v| other.contains(*v))
    }

    /// All nonempty subsets, including the simplex itself.
    pub fn faces(&self) -> impl Iterator<Item = Simplex> + '_ {
        let n = self.0.len();
        (1u64..(1u64 << n)).map(move |mask| {
            Simplex(
                (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| self.0[i])
                    .collect(),
            )
        })
    }

    /// Codimension-one faces; empty for a vertex.
    pub fn facets(&self) -> impl Iterator<Item = Simplex> + '_ {
        let n = self.0.len();
        (0..if n > 1 { n } else { 0 }).map(move |skip| {
            Simplex(
                self.0
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, v)| *v)
                    .collect(),
            )
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SimplicialComplex {
    vertices: BTreeSet<VertexId>,
    simplices: BTreeSet<Simplex>,
}

impl SimplicialComplex {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a complex from generating simplices, materializing the downward closure.
    /// Every listed vertex becomes a 0-simplex.
    pub fn from_maximal<I>(vertices: I, generators: &[Vec<VertexId>]) -> Result<Self>
    where
        I: IntoIterator<Item = VertexId>,
    {
        let vertices: BTreeSet<VertexId> = vertices.into_iter().collect();
        let mut simplices: BTreeSet<Simplex> =
            vertices.iter().map(|v| Simplex::vertex(*v)).collect();
        for g in generators {
            let s = Simplex::new(g.clone())?;
            if let Some(v) = s.vertices().iter().find(|v| !vertices.contains(v)) {
                return Err(Error::UnknownVertex(*v));
            }
            if s.0.len() > 24 {
                return Err(Error::InvalidComplex(format!(
                    "simplex of dimension {} is too large to materialize",
                    s.dim()
                )));
            }
            simplices.extend(s.faces());
        }
        Ok(SimplicialComplex { vertices, simplices })
    }

    /// Builds a complex from a family that is already downward closed.
    pub fn from_closed(simplices: BTreeSet<Simplex>) -> Result<Self> {
        let vertices: BTreeSet<VertexId> =
            simplices.iter().flat_map(|s| s.vertices().iter().copied()).collect();
        let k = SimplicialComplex { vertices, simplices };
        k.check_closed()?;
        Ok(k)
    }

    pub fn simplex(vertices: Vec<VertexId>) -> Result<Self> {
        Self::from_maximal(vertices.clone(), &[vertices])
    }

    fn check_closed(&self) -> Result<()> {
        for s in &self.simplices {
            for f in s.facets() {
                if !self.simplices.contains(&f) {
                    return Err(Error::InvalidComplex(format!(
                        "face {:?} of {:?} missing",
                        f.vertices(),
                        s.vertices()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.vertices
    }

    pub fn simplices(&self) -> &BTreeSet<Simplex> {
        &self.simplices
    }

    pub fn contains(&self, s: &Simplex) -> bool {
        self.simplices.contains(s)
    }

    pub fn num_simplices(&self) -> usize {
        self.simplices.len()
    }

    /// `-1` for the empty complex.
    pub fn dimension(&self) -> i64 {
        self.simplices
            .iter()
            .map(|s| s.dim() as i64)
            .max()
            .unwrap_or(-1)
    }

    pub fn simplices_of_dim(&self, d: usize) -> impl Iterator<Item = &Simplex> {
        self.simplices.iter().filter(move |s| s.dim() == d)
    }

    pub fn maximal_simplices(&self) -> Vec<Simplex> {
        let mut covered = BTreeSet::new();
        for s in &self.simplices {
            for f in s.facets() {
                covered.insert(f);
            }
        }
        self.simplices
            .iter()
            .filter(|s| !covered.contains(*s))
            .cloned()
            .collect()
    }

    /// Simplices containing `v` (the closed star's generating faces).
    pub fn simplices_containing(&self, v: VertexId) -> impl Iterator<Item = &Simplex> {
        self.simplices.iter().filter(move |s| s.contains(v))
    }

    pub fn full_subcomplex(&self, subset: &BTreeSet<VertexId>) -> Result<SimplicialComplex> {
        if let Some(v) = subset.iter().find(|v| !self.vertices.contains(v)) {
            return Err(Error::UnknownVertex(*v));
        }
        let simplices = self
            .simplices
            .iter()
            .filter(|s| s.vertices().iter().all(|v| subset.contains(v)))
            .cloned()
            .collect();
        Ok(SimplicialComplex {
            vertices: subset.clone(),
            simplices,
        })
    }

    pub fn is_subcomplex_of(&self, other: &SimplicialComplex) -> bool {
        self.simplices.is_subset(&other.simplices)
    }

    /// Applies an injective relabelling.
    pub fn relabel(&self, map: &BTreeMap<VertexId, VertexId>) -> SimplicialComplex {
        let vertices = self.vertices.iter().map(|v| map[v]).collect();
        let simplices = self
            .simplices
            .iter()
            .map(|s| {
                let mut vs: Vec<_> = s.vertices().iter().map(|v| map[v]).collect();
                vs.sort_unstable();
                Simplex(vs)
            })
            .collect();
        SimplicialComplex { vertices, simplices }
    }

    pub fn to_json(&self) -> ComplexJson {
        ComplexJson {
            vertices: self.vertices.iter().copied().collect(),
            maximal_simplices: self
                .maximal_simplices()
                .into_iter()
                .map(|s| s.0)
                .collect(),
        }
    }

    pub fn from_json(j: &ComplexJson) -> Result<Self> {
        Self::from_maximal(j.vertices.iter().copied(), &j.maximal_simplices)
    }
}

/// Interchange form: `{"vertices":[...], "maximal_simplices":[[...],...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexJson {
    pub vertices: Vec<VertexId>,
    pub maximal_simplices: Vec<Vec<VertexId>>,
}

/// A barycentric subdivision `K'` together with the source simplex of every new vertex.
///
/// New vertex ids are assigned in `(dimension, lexicographic)` order of the source
/// simplices, so the labelling is canonical.
#[derive(Clone, Debug)]
pub struct Subdivision {
    pub complex: SimplicialComplex,
    pub sources: Vec<Simplex>,
}

impl Subdivision {
    pub fn source(&self, v: VertexId) -> &Simplex {
        &self.sources[v as usize]
    }

    pub fn vertex_of(&self, s: &Simplex) -> Option<VertexId> {
        self.sources
            .binary_search_by(|t| flag_order(t, s))
            .ok()
            .map(|i| i as VertexId)
    }
}

fn flag_order(a: &Simplex, b: &Simplex) -> std::cmp::Ordering {
    (a.0.len(), &a.0).cmp(&(b.0.len(), &b.0))
}

pub fn barycentric_subdivide(k: &SimplicialComplex) -> Result<Subdivision> {
    if k.is_empty() {
        return Err(Error::EmptyComplex);
    }
    let mut sources: Vec<Simplex> = k.simplices.iter().cloned().collect();
    sources.sort_by(flag_order);
    let id_of: BTreeMap<&Simplex, VertexId> = sources
        .iter()
        .enumerate()
        .map(|(i, s)| (s, i as VertexId))
        .collect();

    // chains ending at each simplex, built in increasing dimension
    let mut chains: Vec<Vec<Vec<VertexId>>> = Vec::with_capacity(sources.len());
    for (i, s) in sources.iter().enumerate() {
        let mut here = vec![vec![i as VertexId]];
        for f in s.faces().filter(|f| f != s) {
            for c in &chains[id_of[&f] as usize] {
                let mut c = c.clone();
                c.push(i as VertexId);
                here.push(c);
            }
        }
        chains.push(here);
    }
    let simplices = chains
        .into_iter()
        .flatten()
        .map(|mut c| {
            c.sort_unstable();
            Simplex(c)
        })
        .collect();
    let complex = SimplicialComplex {
        vertices: (0..sources.len() as VertexId).collect(),
        simplices,
    };
    Ok(Subdivision { complex, sources })
}

/// Cone over `k`; the apex is one larger than every existing vertex id.
pub fn cone(k: &SimplicialComplex) -> (SimplicialComplex, VertexId) {
    let apex = k.vertices.iter().next_back().map_or(0, |v| v + 1);
    let mut simplices = k.simplices.clone();
    simplices.insert(Simplex::vertex(apex));
    for s in &k.simplices {
        let mut vs = s.0.clone();
        vs.push(apex);
        simplices.insert(Simplex(vs));
    }
    let mut vertices = k.vertices.clone();
    vertices.insert(apex);
    (SimplicialComplex { vertices, simplices }, apex)
}

/// Cones glued at their apexes. The shared apex is vertex `0`; the vertices of the
/// `i`-th input are relabelled by `relabels[i]`.
#[derive(Clone, Debug)]
pub struct Wedge {
    pub complex: SimplicialComplex,
    pub apex: VertexId,
    pub relabels: Vec<BTreeMap<VertexId, VertexId>>,
}

pub fn wedge_cones(ks: &[SimplicialComplex]) -> Result<Wedge> {
    if ks.is_empty() {
        return Err(Error::Invalid("wedge of an empty list of cones".into()));
    }
    let apex = 0;
    let mut next = 1;
    let mut simplices = BTreeSet::from([Simplex::vertex(apex)]);
    let mut relabels = Vec::with_capacity(ks.len());
    for k in ks {
        let map: BTreeMap<VertexId, VertexId> = k
            .vertices
            .iter()
            .map(|v| {
                let id = next;
                next += 1;
                (*v, id)
            })
            .collect();
        for s in k.relabel(&map).simplices {
            let mut with_apex = s.0.clone();
            with_apex.insert(0, apex);
            simplices.insert(s);
            simplices.insert(Simplex(with_apex));
        }
        relabels.push(map);
    }
    let complex = SimplicialComplex {
        vertices: (0..next).collect(),
        simplices,
    };
    Ok(Wedge {
        complex,
        apex,
        relabels,
    })
}

/// A partition of a vertex set into `m` blocks (some possibly empty).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexPartition {
    pub blocks: Vec<BTreeSet<VertexId>>,
}

impl VertexPartition {
    pub fn new(k: &SimplicialComplex, blocks: Vec<BTreeSet<VertexId>>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Invalid("partition needs at least one block".into()));
        }
        let mut seen = BTreeSet::new();
        for b in &blocks {
            for v in b {
                if !k.vertices.contains(v) {
                    return Err(Error::UnknownVertex(*v));
                }
                if !seen.insert(*v) {
                    return Err(Error::Invalid(format!("vertex {v} in two blocks")));
                }
            }
        }
        if seen.len() != k.vertices.len() {
            return Err(Error::Invalid("partition does not cover every vertex".into()));
        }
        Ok(VertexPartition { blocks })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_of(&self, v: VertexId) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&v))
    }
}

/// Zero-based bucket of a simplex of dimension `d` in a complex of dimension `dim_k`:
/// bucket 0 holds `d <= dim_k/m`, bucket `i` holds `i*dim_k/m < d <= (i+1)*dim_k/m`.
pub fn bucket_of_dim(d: u64, dim_k: u64, m: u64) -> usize {
    assert!(m >= 1);
    if d * m <= dim_k {
        0
    } else {
        // dim_k > 0 here since d*m > dim_k >= 0 and d >= 1
        ((d * m).div_ceil(dim_k) - 1) as usize
    }
}

/// Exact dimension of `K'(A_i)` for a complex of dimension `dim_k`: a simplex of
/// `K'(A_i)` is a flag whose members have pairwise distinct dimensions inside bucket `i`,
/// so the dimension is (number of integer dimensions in the bucket) - 1. Never builds `K'`.
pub fn bucket_dimension(dim_k: u64, m: u64, bucket: usize) -> i64 {
    let lo = if bucket == 0 {
        0
    } else {
        // smallest d with d*m > bucket*dim_k
        (bucket as u64 * dim_k) / m + 1
    };
    let hi = ((bucket as u64 + 1) * dim_k) / m; // largest d with d*m <= (bucket+1)*dim_k
    let hi = hi.min(dim_k);
    if hi < lo {
        -1
    } else {
        (hi - lo + 1) as i64 - 1
    }
}

#[derive(Clone, Debug)]
pub struct BucketedSubdivision {
    pub subdivision: Subdivision,
    pub partition: VertexPartition,
}

impl BucketedSubdivision {
    pub fn bucket_subcomplex(&self, i: usize) -> SimplicialComplex {
        self.subdivision
            .complex
            .full_subcomplex(&self.partition.blocks[i])
            .expect("blocks are vertex subsets of K'")
    }
}

pub fn dimension_buckets(k: &SimplicialComplex, m: usize) -> Result<BucketedSubdivision> {
    if m == 0 {
        return Err(Error::OutOfRange("m must be at least 1".into()));
    }
    let dim_k = k.dimension();
    let subdivision = barycentric_subdivide(k)?;
    let mut blocks = vec![BTreeSet::new(); m];
    for (v, s) in subdivision.sources.iter().enumerate() {
        blocks[bucket_of_dim(s.dim() as u64, dim_k as u64, m as u64)].insert(v as VertexId);
    }
    Ok(BucketedSubdivision {
        partition: VertexPartition { blocks },
        subdivision,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> SimplicialComplex {
        SimplicialComplex::simplex(vec![0, 1, 2]).unwrap()
    }

    fn is_closed(k: &SimplicialComplex) -> bool {
        k.check_closed().is_ok()
            && k.vertices.iter().all(|v| k.contains(&Simplex::vertex(*v)))
    }

    /// Independent enumeration of strict chains of faces of an n-simplex.
    fn count_chains(k: &SimplicialComplex) -> (usize, usize) {
        let simplices: Vec<&Simplex> = k.simplices().iter().collect();
        fn extend(
            last: &Simplex,
            len: usize,
            all: &[&Simplex],
            total: &mut usize,
            top: &mut usize,
            dim: usize,
        ) {
            *total += 1;
            if len == dim + 1 {
                *top += 1;
            }
            for s in all {
                if s.0.len() > last.0.len() && last.is_face_of(s) {
                    extend(s, len + 1, all, total, top, dim);
                }
            }
        }
        let (mut total, mut top) = (0, 0);
        let dim = k.dimension() as usize;
        for s in &simplices {
            extend(s, 1, &simplices, &mut total, &mut top, dim);
        }
        (total, top)
    }

    #[test]
    fn subdividing_a_triangle() {
        let k = triangle();
        let sd = barycentric_subdivide(&k).unwrap();
        assert_eq!(sd.complex.vertices().len(), 7);
        assert_eq!(sd.complex.simplices_of_dim(2).count(), 6);
        let (chains, top) = count_chains(&k);
        assert_eq!(sd.complex.num_simplices(), chains);
        assert_eq!(top, 6);
        assert_eq!(sd.complex.dimension(), 2);
        assert!(is_closed(&sd.complex));
    }

    #[test]
    fn subdividing_an_edge() {
        let k = SimplicialComplex::simplex(vec![3, 9]).unwrap();
        let sd = barycentric_subdivide(&k).unwrap();
        assert_eq!(sd.complex.vertices().len(), 3);
        assert_eq!(sd.complex.simplices_of_dim(1).count(), 2);
        assert_eq!(sd.complex.dimension(), 1);
        let mid = sd.vertex_of(&Simplex::new(vec![3, 9]).unwrap()).unwrap();
        assert_eq!(sd.source(mid).vertices(), &[3, 9]);
    }

    #[test]
    fn empty_complex_cannot_be_subdivided() {
        assert!(matches!(
            barycentric_subdivide(&SimplicialComplex::empty()),
            Err(Error::EmptyComplex)
        ));
    }

    #[test]
    fn full_subcomplexes() {
        let k = triangle();
        let none = k.full_subcomplex(&BTreeSet::new()).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.dimension(), -1);
        assert_eq!(k.full_subcomplex(k.vertices()).unwrap(), k);
        let ab = k.full_subcomplex(&BTreeSet::from([0, 1])).unwrap();
        assert_eq!(ab, SimplicialComplex::simplex(vec![0, 1]).unwrap());
        assert!(matches!(
            k.full_subcomplex(&BTreeSet::from([7])),
            Err(Error::UnknownVertex(7))
        ));
    }

    #[test]
    fn cones() {
        let (c, apex) = cone(&SimplicialComplex::empty());
        assert_eq!(c.dimension(), 0);
        assert_eq!(apex, 0);

        let two_points = SimplicialComplex::from_maximal([0, 1], &[]).unwrap();
        let (c, apex) = cone(&two_points);
        assert_eq!(c.dimension(), 1);
        assert_eq!(c.simplices_of_dim(1).count(), 2);
        assert!(c.simplices_of_dim(1).all(|e| e.contains(apex)));

        let (c, _) = cone(&SimplicialComplex::simplex(vec![0, 1]).unwrap());
        assert_eq!(c, triangle());
    }

    #[test]
    fn wedges() {
        let edge = SimplicialComplex::simplex(vec![0, 1]).unwrap();
        let single = wedge_cones(std::slice::from_ref(&edge)).unwrap();
        let (c, _) = cone(&edge);
        assert_eq!(single.complex.num_simplices(), c.num_simplices());
        assert_eq!(single.complex.dimension(), 2);

        let three = wedge_cones(&[edge.clone(), edge.clone(), edge.clone()]).unwrap();
        assert_eq!(three.complex.dimension(), 2);
        assert_eq!(three.complex.vertices().len(), 7);
        assert_eq!(three.complex.simplices_of_dim(2).count(), 3);
        // only the apex is shared
        let tris: Vec<_> = three.complex.simplices_of_dim(2).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let common: Vec<_> = tris[i]
                    .vertices()
                    .iter()
                    .filter(|v| tris[j].contains(**v))
                    .collect();
                assert_eq!(common, vec![&three.apex]);
            }
        }

        let point = SimplicialComplex::from_maximal([0], &[]).unwrap();
        let w = wedge_cones(&[point, edge, triangle()]).unwrap();
        assert_eq!(w.complex.dimension(), 3);
        assert!(wedge_cones(&[]).is_err());
    }

    #[test]
    fn wedge_with_empty_piece_uses_minus_one_convention() {
        let w = wedge_cones(&[SimplicialComplex::empty(), SimplicialComplex::empty()]).unwrap();
        assert_eq!(w.complex.dimension(), 0);
    }

    #[test]
    fn buckets_of_a_triangle() {
        let b = dimension_buckets(&triangle(), 2).unwrap();
        assert_eq!(b.bucket_subcomplex(0).dimension(), 1);
        assert_eq!(b.bucket_subcomplex(1).dimension(), 0);
        // K'(A_2) is the single barycenter of the 2-simplex
        assert_eq!(b.partition.blocks[1].len(), 1);

        let one = dimension_buckets(&triangle(), 1).unwrap();
        assert_eq!(one.bucket_subcomplex(0), one.subdivision.complex);
    }

    #[test]
    fn closed_form_bucket_dimension_matches_explicit() {
        for d in 0..=4u32 {
            let k = SimplicialComplex::simplex((0..=d).collect()).unwrap();
            for m in 1..=5usize {
                let b = dimension_buckets(&k, m).unwrap();
                for i in 0..m {
                    assert_eq!(
                        b.bucket_subcomplex(i).dimension(),
                        bucket_dimension(d as u64, m as u64, i),
                        "d={d} m={m} i={i}"
                    );
                }
            }
        }
    }

    #[test]
    fn million_dimensional_remark() {
        let (dim_k, m) = (1_000_000u64, 1001u64);
        let dims: Vec<i64> = (0..m as usize).map(|i| bucket_dimension(dim_k, m, i)).collect();
        assert!(dims.iter().all(|d| *d < 1000));
        assert_eq!(dims[0], 999);
        // every dimension 0..=dim_k lands in exactly one bucket
        let total: i64 = dims.iter().map(|d| d + 1).sum();
        assert_eq!(total as u64, dim_k + 1);
    }

    #[test]
    fn json_round_trip_materializes_closure() {
        let j: ComplexJson =
            serde_json::from_str(r#"{"vertices":[0,1,2,3],"maximal_simplices":[[0,1,2],[2,3]]}"#)
                .unwrap();
        let k = SimplicialComplex::from_json(&j).unwrap();
        assert_eq!(k.num_simplices(), 7 + 2);
        let back = SimplicialComplex::from_json(&k.to_json()).unwrap();
        assert_eq!(back, k);
        let bad: ComplexJson =
            serde_json::from_str(r#"{"vertices":[0],"maximal_simplices":[[0,5]]}"#).unwrap();
        assert!(SimplicialComplex::from_json(&bad).is_err());
    }
}
