//! Geometric realizations with an explicit norm.
//!
//! Coordinates are exact rationals. The metric on a realization is the one induced by the
//! chosen norm, so the diameter of a closed star is attained at a pair of realization
//! vertices and can be computed exactly.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::complex::{barycentric_subdivide, Simplex, SimplicialComplex, VertexId};
use crate::error::{Error, Result};
use crate::rational::{fmt_q, q, qi, Length, QVec, Q};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[default]
    #[serde(rename = "l_inf")]
    LInf,
    #[serde(rename = "l_1")]
    L1,
    #[serde(rename = "l_2")]
    L2,
}

impl Norm {
    pub fn dist(self, p: &[Q], q: &[Q]) -> Length {
        let diffs = p.iter().zip(q).map(|(a, b)| (a - b).abs());
        match self {
            Norm::LInf => Length::Exact(diffs.max().unwrap_or_else(Q::zero)),
            Norm::L1 => Length::Exact(diffs.sum()),
            Norm::L2 => Length::Sqrt(diffs.map(|d| &d * &d).sum()),
        }
    }
}

/// `l_inf` distance as a rational.
pub fn sup_dist(p: &[Q], q: &[Q]) -> Q {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b).abs())
        .max()
        .unwrap_or_else(Q::zero)
}

pub fn average(points: &[&[Q]]) -> Vec<Q> {
    let n = qi(points.len() as i64);
    let dim = points[0].len();
    (0..dim)
        .map(|i| points.iter().map(|p| &p[i]).sum::<Q>() / &n)
        .collect()
}

/// Solves `sum_i w_i * vertices[i] = p`, `sum_i w_i = 1` exactly. Returns `None` when the
/// system is inconsistent or underdetermined.
pub fn affine_weights(vertices: &[&[Q]], p: &[Q]) -> Option<Vec<Q>> {
    let k = vertices.len();
    let d = p.len();
    // rows: d coordinate equations + 1 normalization, columns: k unknowns + rhs
    let mut rows: Vec<Vec<Q>> = (0..d)
        .map(|r| {
            let mut row: Vec<Q> = vertices.iter().map(|v| v[r].clone()).collect();
            row.push(p[r].clone());
            row
        })
        .collect();
    let mut norm_row = vec![Q::one(); k];
    norm_row.push(Q::one());
    rows.push(norm_row);

    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..k {
        let pr = (r..rows.len()).find(|&i| !rows[i][c].is_zero())?;
        rows.swap(r, pr);
        let inv = rows[r][c].recip();
        for x in rows[r].iter_mut() {
            *x *= &inv;
        }
        for i in 0..rows.len() {
            if i != r && !rows[i][c].is_zero() {
                let f = rows[i][c].clone();
                for j in c..=k {
                    let t = &rows[r][j] * &f;
                    rows[i][j] -= t;
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    if rows[r..].iter().any(|row| !row[k].is_zero()) {
        return None;
    }
    Some((0..k).map(|i| rows[i][k].clone()).collect())
}

fn affinely_independent(vertices: &[&[Q]]) -> bool {
    // independent iff the barycenter has a unique affine representation
    let c = average(vertices);
    affine_weights(vertices, &c).is_some()
}

/// A point of a realization given by a carrier simplex and barycentric weights aligned
/// with `simplex.vertices()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarycentricPoint {
    pub simplex: Simplex,
    #[serde(with = "crate::rational::q_vec")]
    pub weights: Vec<Q>,
}

impl BarycentricPoint {
    pub fn new(simplex: Simplex, weights: Vec<Q>) -> Result<Self> {
        if weights.len() != simplex.vertices().len() {
            return Err(Error::Invalid("weight count does not match simplex".into()));
        }
        if weights.iter().any(|w| w.is_negative()) || weights.iter().sum::<Q>() != Q::one() {
            return Err(Error::Invalid(
                "barycentric weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(BarycentricPoint { simplex, weights })
    }

    pub fn vertex(v: VertexId) -> Self {
        BarycentricPoint {
            simplex: Simplex::vertex(v),
            weights: vec![Q::one()],
        }
    }

    /// Drops zero weights so the carrier is the unique simplex whose interior holds the point.
    pub fn carrier(&self) -> BarycentricPoint {
        let (vs, ws): (Vec<_>, Vec<_>) = self
            .simplex
            .vertices()
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| !w.is_zero())
            .map(|(v, w)| (*v, w.clone()))
            .unzip();
        BarycentricPoint {
            simplex: Simplex::new(vs).expect("weights sum to 1"),
            weights: ws,
        }
    }

    pub fn weight_of(&self, v: VertexId) -> Q {
        self.simplex
            .vertices()
            .iter()
            .position(|u| *u == v)
            .map_or_else(Q::zero, |i| self.weights[i].clone())
    }
}

#[derive(Clone, Debug)]
pub struct GeometricComplex {
    complex: SimplicialComplex,
    coords: BTreeMap<VertexId, Vec<Q>>,
    norm: Norm,
    ambient: usize,
}

/// Largest star diameter and a vertex attaining it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mesh {
    pub value: Length,
    pub vertex: Option<VertexId>,
}

impl GeometricComplex {
    pub fn new(
        complex: SimplicialComplex,
        coords: BTreeMap<VertexId, Vec<Q>>,
        norm: Norm,
    ) -> Result<Self> {
        let ambient = coords.values().next().map_or(0, Vec::len);
        for v in complex.vertices() {
            match coords.get(v) {
                None => return Err(Error::Invalid(format!("vertex {v} has no coordinates"))),
                Some(c) if c.len() != ambient => {
                    return Err(Error::Invalid(format!("vertex {v} has wrong coordinate length")))
                }
                _ => {}
            }
        }
        let g = GeometricComplex {
            complex,
            coords,
            norm,
            ambient,
        };
        for s in g.complex.maximal_simplices() {
            if !affinely_independent(&g.points_of(&s)) {
                return Err(Error::Degenerate {
                    simplex: s.vertices().to_vec(),
                });
            }
        }
        Ok(g)
    }

    /// The standard simplex spanned by the basis vectors `e_1..e_{n+1}` of `R^{n+1}`.
    pub fn standard_simplex(n: usize, norm: Norm) -> Self {
        let k = SimplicialComplex::simplex((0..=n as VertexId).collect()).unwrap();
        let coords = (0..=n)
            .map(|i| {
                let mut c = vec![Q::zero(); n + 1];
                c[i] = Q::one();
                (i as VertexId, c)
            })
            .collect();
        GeometricComplex::new(k, coords, norm).unwrap()
    }

    pub fn complex(&self) -> &SimplicialComplex {
        &self.complex
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn coords(&self, v: VertexId) -> Result<&[Q]> {
        self.coords
            .get(&v)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownVertex(v))
    }

    fn points_of(&self, s: &Simplex) -> Vec<&[Q]> {
        s.vertices()
            .iter()
            .map(|v| self.coords[v].as_slice())
            .collect()
    }

    pub fn dist(&self, p: &[Q], q: &[Q]) -> Length {
        self.norm.dist(p, q)
    }

    fn diameter_of(&self, vertices: &BTreeSet<VertexId>) -> Length {
        let pts: Vec<&[Q]> = vertices.iter().map(|v| self.coords[v].as_slice()).collect();
        let mut best = Length::zero();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d = self.norm.dist(pts[i], pts[j]);
                if d > best {
                    best = d;
                }
            }
        }
        best
    }

    /// Diameter of the closed star of `v`.
    pub fn star_diameter(&self, v: VertexId) -> Result<Length> {
        if !self.complex.vertices().contains(&v) {
            return Err(Error::UnknownVertex(v));
        }
        let verts: BTreeSet<VertexId> = self
            .complex
            .simplices_containing(v)
            .flat_map(|s| s.vertices().iter().copied())
            .collect();
        Ok(self.diameter_of(&verts))
    }

    pub fn max_star_mesh(&self) -> Mesh {
        let mut star: BTreeMap<VertexId, BTreeSet<VertexId>> = BTreeMap::new();
        for s in self.complex.maximal_simplices() {
            for v in s.vertices() {
                star.entry(*v).or_default().extend(s.vertices());
            }
        }
        let mut mesh = Mesh {
            value: Length::zero(),
            vertex: None,
        };
        for (v, verts) in &star {
            let d = self.diameter_of(verts);
            if mesh.vertex.is_none() || d > mesh.value {
                mesh = Mesh {
                    value: d,
                    vertex: Some(*v),
                };
            }
        }
        mesh
    }

    pub fn point(&self, x: &BarycentricPoint) -> Result<Vec<Q>> {
        let mut out = vec![Q::zero(); self.ambient];
        for (v, w) in x.simplex.vertices().iter().zip(&x.weights) {
            let c = self.coords(*v)?;
            for (o, ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        Ok(out)
    }

    /// Barycentric subdivision with each new vertex placed at the barycenter of its source.
    pub fn subdivide(&self) -> Result<(GeometricComplex, Vec<Simplex>)> {
        let sd = barycentric_subdivide(&self.complex)?;
        let coords = sd
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| (i as VertexId, average(&self.points_of(s))))
            .collect();
        let g = GeometricComplex {
            complex: sd.complex,
            coords,
            norm: self.norm,
            ambient: self.ambient,
        };
        Ok((g, sd.sources))
    }

    /// Iterated barycentric subdivision until the star mesh is strictly below `eps`.
    pub fn subdivide_to_mesh(&self, eps: &Q, cap: usize) -> Result<(GeometricComplex, usize)> {
        if !eps.is_positive() {
            return Err(Error::OutOfRange("epsilon must be positive".into()));
        }
        let mut g = self.clone();
        for rounds in 0..=cap {
            let mesh = g.max_star_mesh();
            if mesh.value.lt_q(eps) {
                return Ok((g, rounds));
            }
            if rounds == cap {
                return Err(Error::MeshNotReached {
                    rounds,
                    mesh: mesh.value.to_string(),
                    target: eps.clone(),
                });
            }
            g = g.subdivide()?.0;
        }
        unreachable!()
    }

    /// Locates `p` in one of the candidate simplices (all maximal simplices by default).
    pub fn locate(&self, p: &[Q], candidates: Option<&[Simplex]>) -> Result<BarycentricPoint> {
        if p.len() != self.ambient {
            return Err(Error::NotInComplex("wrong coordinate length".into()));
        }
        let owned;
        let cands = match candidates {
            Some(c) => c,
            None => {
                owned = self.complex.maximal_simplices();
                &owned
            }
        };
        for s in cands {
            if !self.complex.contains(s) {
                continue;
            }
            if let Some(w) = affine_weights(&self.points_of(s), p) {
                if w.iter().all(|x| !x.is_negative()) {
                    return Ok(BarycentricPoint {
                        simplex: s.clone(),
                        weights: w,
                    }
                    .carrier());
                }
            }
        }
        Err(Error::NotInComplex(format!(
            "({})",
            p.iter().map(fmt_q).collect::<Vec<_>>().join(", ")
        )))
    }

    pub fn to_json(&self) -> GeometricComplexJson {
        let c = self.complex.to_json();
        GeometricComplexJson {
            vertices: c.vertices,
            maximal_simplices: c.maximal_simplices,
            coords: self
                .coords
                .iter()
                .map(|(v, c)| (v.to_string(), QVec(c.clone())))
                .collect(),
            norm: self.norm,
        }
    }

    pub fn from_json(j: &GeometricComplexJson) -> Result<Self> {
        let k = SimplicialComplex::from_maximal(j.vertices.iter().copied(), &j.maximal_simplices)?;
        let coords = j
            .coords
            .iter()
            .map(|(v, c)| {
                v.parse::<VertexId>()
                    .map(|v| (v, c.0.clone()))
                    .map_err(|_| Error::Parse(format!("vertex key {v:?}")))
            })
            .collect::<Result<_>>()?;
        GeometricComplex::new(k, coords, j.norm)
    }
}

/// Complex JSON plus `"coords"` (vertex -> `"p/q"` strings) and a `"norm"` tag.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricComplexJson {
    pub vertices: Vec<VertexId>,
    pub maximal_simplices: Vec<Vec<VertexId>>,
    pub coords: BTreeMap<String, QVec>,
    #[serde(default)]
    pub norm: Norm,
}

/// A vertex map into a realization, extended linearly over each simplex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimplicialMap {
    pub images: BTreeMap<VertexId, Vec<Q>>,
}

impl SimplicialMap {
    pub fn eval(&self, x: &BarycentricPoint) -> Result<Vec<Q>> {
        let mut out: Option<Vec<Q>> = None;
        for (v, w) in x.simplex.vertices().iter().zip(&x.weights) {
            let img = self.images.get(v).ok_or(Error::UnknownVertex(*v))?;
            let acc = out.get_or_insert_with(|| vec![Q::zero(); img.len()]);
            for (o, c) in acc.iter_mut().zip(img) {
                *o += w * c;
            }
        }
        out.ok_or_else(|| Error::Invalid("empty barycentric point".into()))
    }
}

pub const KUHN_MAX_DIM: usize = 6;

/// The Freudenthal/Kuhn triangulation of `[0,1]^n` on the grid of spacing `1/g`, in
/// closed form: nothing is materialized. Each cell `base + [0,1]^n` is split into `n!`
/// simplices `base, base + e_{s1}, base + e_{s1} + e_{s2}, ...`, one per permutation `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KuhnGrid {
    pub n: usize,
    pub g: u64,
}

/// A Kuhn simplex given by its cell and coordinate order, with barycentric weights on
/// its `n + 1` vertices in chain order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KuhnLocation {
    pub base: Vec<u64>,
    pub perm: Vec<usize>,
    pub weights: Vec<Q>,
}

impl KuhnGrid {
    pub fn new(n: usize, g: u64) -> Result<Self> {
        if n == 0 || g == 0 {
            return Err(Error::OutOfRange(format!(
                "kuhn grid needs n >= 1 and g >= 1 (got n={n}, g={g})"
            )));
        }
        Ok(KuhnGrid { n, g })
    }

    /// Exact `l_inf` star mesh: `1` for the single-cell grid, `2/g` otherwise.
    pub fn star_mesh(&self) -> Q {
        if self.g == 1 {
            Q::one()
        } else {
            q(2, self.g as i64)
        }
    }

    /// Grid vertex `k` of the chain for `(base, perm)`, as integer grid coordinates.
    pub fn chain_vertex(&self, base: &[u64], perm: &[usize], k: usize) -> Vec<u64> {
        let mut v = base.to_vec();
        for &i in &perm[..k] {
            v[i] += 1;
        }
        v
    }

    pub fn grid_point(&self, v: &[u64]) -> Vec<Q> {
        v.iter().map(|c| q(*c as i64, self.g as i64)).collect()
    }

    /// Closed-form point location. Points on cell boundaries get the cell `floor(g x)`
    /// (clamped to the last cell) and ties in fractional parts are broken by increasing
    /// coordinate index, which selects the lexicographically smallest admissible order.
    pub fn locate(&self, p: &[Q]) -> Result<KuhnLocation> {
        if p.len() != self.n {
            return Err(Error::NotInComplex(format!("expected {} coordinates", self.n)));
        }
        let g = qi(self.g as i64);
        let mut base = Vec::with_capacity(self.n);
        let mut frac = Vec::with_capacity(self.n);
        for x in p {
            if x.is_negative() || x > &Q::one() {
                return Err(Error::NotInComplex(format!("coordinate {x} outside [0,1]")));
            }
            let s = x * &g;
            let mut b = s.floor().to_integer();
            if b == num_bigint::BigInt::from(self.g) {
                b -= 1;
            }
            let f = &s - Q::from_integer(b.clone());
            base.push(u64::try_from(b).expect("cell index fits"));
            frac.push(f);
        }
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.sort_by(|a, b| frac[*b].cmp(&frac[*a]).then(a.cmp(b)));
        let mut weights = Vec::with_capacity(self.n + 1);
        weights.push(Q::one() - &frac[perm[0]]);
        for j in 1..self.n {
            weights.push(&frac[perm[j - 1]] - &frac[perm[j]]);
        }
        weights.push(frac[perm[self.n - 1]].clone());
        Ok(KuhnLocation {
            base,
            perm,
            weights,
        })
    }

    pub fn num_simplices(&self) -> u128 {
        (1..=self.n as u128).product::<u128>() * (self.g as u128).pow(self.n as u32)
    }

    fn vertex_id(&self, v: &[u64]) -> VertexId {
        v.iter()
            .rev()
            .fold(0u64, |acc, c| acc * (self.g + 1) + c) as VertexId
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

pub const KUHN_EXPLICIT_BUDGET: u128 = 200_000;

/// Materialized Kuhn triangulation of `[0,1]^n`, `1 <= n <= 6`. Vertex ids encode grid
/// points in mixed radix `g + 1`.
pub fn kuhn_triangulate_cube(n: usize, g: u64) -> Result<GeometricComplex> {
    if !(1..=KUHN_MAX_DIM).contains(&n) || g == 0 {
        return Err(Error::OutOfRange(format!(
            "kuhn triangulation needs 1 <= n <= {KUHN_MAX_DIM} and g >= 1 (got n={n}, g={g})"
        )));
    }
    let grid = KuhnGrid { n, g };
    let estimate = grid.num_simplices();
    if estimate > KUHN_EXPLICIT_BUDGET {
        return Err(Error::Budget {
            estimate,
            limit: KUHN_EXPLICIT_BUDGET,
        });
    }
    let perms = permutations(n);
    let mut coords = BTreeMap::new();
    let mut maximal = Vec::new();
    let cells = (g as u128).pow(n as u32) as u64;
    for cell in 0..cells {
        let mut base = Vec::with_capacity(n);
        let mut c = cell;
        for _ in 0..n {
            base.push(c % g);
            c /= g;
        }
        for p in &perms {
            let simplex: Vec<VertexId> = (0..=n)
                .map(|k| {
                    let v = grid.chain_vertex(&base, p, k);
                    let id = grid.vertex_id(&v);
                    coords.entry(id).or_insert_with(|| grid.grid_point(&v));
                    id
                })
                .collect();
            maximal.push(simplex);
        }
    }
    let k = SimplicialComplex::from_maximal(coords.keys().copied(), &maximal)?;
    GeometricComplex::new(k, coords, Norm::LInf)
}

/// Point location in a materialized Kuhn complex via the closed form.
pub fn locate_kuhn(g: &GeometricComplex, grid: KuhnGrid, p: &[Q]) -> Result<BarycentricPoint> {
    let loc = grid.locate(p)?;
    let ids: Vec<VertexId> = (0..=grid.n)
        .map(|k| grid.vertex_id(&grid.chain_vertex(&loc.base, &loc.perm, k)))
        .collect();
    let mut pairs: Vec<(VertexId, Q)> = ids.into_iter().zip(loc.weights).collect();
    pairs.sort_by_key(|(v, _)| *v);
    let (vs, ws): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let bp = BarycentricPoint {
        simplex: Simplex::new(vs)?,
        weights: ws,
    };
    if !g.complex().contains(&bp.simplex) {
        return Err(Error::NotInComplex("grid does not match complex".into()));
    }
    Ok(bp.carrier())
}
