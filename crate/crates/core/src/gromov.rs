//! Width-reducing maps: the partition map onto a simplex, the dimension-bucket map on
//! a barycentric subdivision, the cube map `[0,1]^n -> [0,1]^{m-1}` and its zero-padded
//! block version.
//!
//! Fibers are certified through the retraction `g(x) = sum_{u in A_i} x_u u / sum x_u`
//! onto the full subcomplex of the first block `A_i` with positive target weight: every
//! fiber of `g` lies in a closed star, so `g` is an ε-embedding once the star mesh is
//! below ε.

use std::collections::BTreeSet;

use num_traits::{One, Signed, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::certs::{
    sample_fiber_check, DischargeRecord, Domain, DomainKind, EpsEmbeddingCertificate,
    FiberProbe, MeshSource, Obligation,
};
use crate::complex::{bucket_dimension, bucket_of_dim, dimension_buckets, Simplex, VertexId, VertexPartition};
use crate::error::{Error, Result};
use crate::geometry::{sup_dist, BarycentricPoint, GeometricComplex, KuhnGrid, KuhnLocation, Norm, SimplicialMap};
use crate::rational::{qi, Length, QVec, Q};

/// Splits `total` into `parts` positive random rationals (all zero if `total` is zero).
pub fn random_split(total: &Q, parts: usize, rng: &mut ChaCha8Rng) -> Vec<Q> {
    if total.is_zero() {
        return vec![Q::zero(); parts];
    }
    let r: Vec<i64> = (0..parts).map(|_| rng.gen_range(1..=64)).collect();
    let s: i64 = r.iter().sum();
    r.iter().map(|x| total * qi(*x) / qi(s)).collect()
}

/// Index of the first positive weight.
pub fn first_positive(t: &[Q]) -> Option<usize> {
    t.iter().position(Signed::is_positive)
}

pub fn in_simplex(t: &[Q]) -> bool {
    !t.is_empty() && t.iter().all(|x| !x.is_negative()) && t.iter().sum::<Q>() == Q::one()
}

fn unit_vector(i: usize, m: usize) -> Vec<Q> {
    (0..m).map(|j| if i == j { Q::one() } else { Q::zero() }).collect()
}

#[derive(Clone, Debug)]
enum DimRule {
    Subcomplex,
    Buckets { dim_k: u64 },
}

/// The simplicial map `f: K -> Δ^{m-1}` with `f(A_i) = e_i`.
#[derive(Clone, Debug)]
pub struct PartitionMap {
    complex: GeometricComplex,
    partition: VertexPartition,
    epsilon: Q,
    mesh: Length,
    map: SimplicialMap,
    rule: DimRule,
}

pub fn partition_map(g: &GeometricComplex, p: &VertexPartition, epsilon: &Q) -> Result<PartitionMap> {
    if !epsilon.is_positive() {
        return Err(Error::OutOfRange("epsilon must be positive".into()));
    }
    let p = VertexPartition::new(g.complex(), p.blocks.clone())?;
    let mesh = g.max_star_mesh();
    if !mesh.value.lt_q(epsilon) {
        return Err(Error::MeshHypothesis {
            vertex: mesh.vertex.unwrap_or(0),
            diameter: mesh.value.to_string(),
            epsilon: epsilon.clone(),
        });
    }
    let m = p.m();
    let images = g
        .complex()
        .vertices()
        .iter()
        .map(|v| (*v, unit_vector(p.block_of(*v).expect("partition covers"), m)))
        .collect();
    Ok(PartitionMap {
        complex: g.clone(),
        partition: p,
        epsilon: epsilon.clone(),
        mesh: mesh.value,
        map: SimplicialMap { images },
        rule: DimRule::Subcomplex,
    })
}

impl PartitionMap {
    pub fn m(&self) -> usize {
        self.partition.m()
    }

    pub fn complex(&self) -> &GeometricComplex {
        &self.complex
    }

    pub fn partition(&self) -> &VertexPartition {
        &self.partition
    }

    pub fn mesh(&self) -> &Length {
        &self.mesh
    }

    pub fn eval(&self, x: &BarycentricPoint) -> Result<Vec<Q>> {
        self.map.eval(x)
    }

    /// Every simplex maps onto a face of the target simplex. Holds by construction since
    /// vertices go to vertices; checked over all maximal simplices.
    pub fn is_simplicial(&self) -> bool {
        self.complex.complex().maximal_simplices().iter().all(|s| {
            s.vertices().iter().all(|v| {
                let img = &self.map.images[v];
                img.iter().filter(|c| c.is_one()).count() == 1
                    && img.iter().filter(|c| !c.is_zero()).count() == 1
            })
        })
    }

    /// `g(x)` for a point of the fiber over a target with first positive weight `i`.
    pub fn retract(&self, i: usize, x: &BarycentricPoint) -> Option<BarycentricPoint> {
        let block = &self.partition.blocks[i];
        let (vs, ws): (Vec<VertexId>, Vec<Q>) = x
            .simplex
            .vertices()
            .iter()
            .zip(&x.weights)
            .filter(|(v, w)| block.contains(v) && w.is_positive())
            .map(|(v, w)| (*v, w.clone()))
            .unzip();
        let total: Q = ws.iter().sum();
        if total.is_zero() {
            return None;
        }
        let ws = ws.into_iter().map(|w| w / &total).collect();
        Some(BarycentricPoint {
            simplex: Simplex::new(vs).ok()?,
            weights: ws,
        })
    }

    fn check_target(&self, t: &[Q]) -> Result<()> {
        if t.len() != self.m() {
            return Err(Error::OutOfRange(format!(
                "target point has {} coordinates, expected {}",
                t.len(),
                self.m()
            )));
        }
        Ok(())
    }

    /// Maximal simplices whose image face contains `t`.
    fn carriers(&self, t: &[Q]) -> Vec<Simplex> {
        let support: BTreeSet<usize> = (0..t.len()).filter(|i| t[*i].is_positive()).collect();
        self.complex
            .complex()
            .maximal_simplices()
            .into_iter()
            .filter(|s| {
                let blocks: BTreeSet<usize> = s
                    .vertices()
                    .iter()
                    .map(|v| self.partition.block_of(*v).unwrap())
                    .collect();
                blocks.is_superset(&support)
            })
            .collect()
    }

    /// A random point of `f^{-1}(t)` inside `s`, keeping `fixed` weights where given.
    fn fill(&self, s: &Simplex, t: &[Q], fixed: &[(VertexId, Q)], keep: Option<usize>, rng: &mut ChaCha8Rng) -> BarycentricPoint {
        let mut weights = vec![Q::zero(); s.vertices().len()];
        for (b, tb) in t.iter().enumerate() {
            let idx: Vec<usize> = (0..s.vertices().len())
                .filter(|k| self.partition.block_of(s.vertices()[*k]) == Some(b))
                .collect();
            if Some(b) == keep {
                for (v, w) in fixed {
                    let k = s.vertices().iter().position(|u| u == v).expect("face of s");
                    weights[k] = w.clone();
                }
                continue;
            }
            for (k, w) in idx.iter().zip(random_split(tb, idx.len(), rng)) {
                weights[*k] = w;
            }
        }
        BarycentricPoint {
            simplex: s.clone(),
            weights,
        }
        .carrier()
    }

    /// A random point of `f^{-1}(t)`, or `None` if the fiber is empty.
    pub fn sample_fiber_point(&self, t: &[Q], rng: &mut ChaCha8Rng) -> Option<BarycentricPoint> {
        if !in_simplex(t) {
            return None;
        }
        let c = self.carriers(t);
        let s = c.choose(rng)?;
        Some(self.fill(s, t, &[], None, rng))
    }

    /// The fiber certificate over `t`. Targets outside the simplex have empty fibers.
    pub fn fiber_certificate(&self, t: &[Q]) -> Result<EpsEmbeddingCertificate> {
        self.check_target(t)?;
        let domain = Domain::new(
            DomainKind::GeometricComplex,
            format!("f^-1({})", fmt_point(t)),
            norm_name(self.complex.norm()),
        );
        let empty = |reason: String| {
            EpsEmbeddingCertificate::new(
                domain.clone(),
                self.epsilon.clone(),
                DischargeRecord::structural("empty fiber", Obligation::EmptyFiber { reason }),
                vec![],
            )
        };
        if !in_simplex(t) {
            return empty("target point outside the simplex".into());
        }
        if self.carriers(t).is_empty() {
            return empty("no simplex maps onto the face carrying the target".into());
        }
        let i = first_positive(t).expect("weights sum to 1");
        let dim_record = match self.rule {
            DimRule::Subcomplex => DischargeRecord::structural(
                "dimension of the retraction target",
                Obligation::SubcomplexDimension {
                    complex: self.complex.complex().to_json(),
                    vertices: self.partition.blocks[i].iter().copied().collect(),
                    dim: self
                        .complex
                        .complex()
                        .full_subcomplex(&self.partition.blocks[i])?
                        .dimension(),
                },
            ),
            DimRule::Buckets { dim_k } => DischargeRecord::structural(
                "dimension of the retraction target",
                Obligation::BucketDimension {
                    complex_dim: dim_k,
                    m: self.m() as u64,
                    bucket: i,
                    dim: bucket_dimension(dim_k, self.m() as u64, i),
                },
            ),
        };
        EpsEmbeddingCertificate::new(
            domain,
            self.epsilon.clone(),
            dim_record,
            vec![
                DischargeRecord::structural(
                    "star mesh below epsilon",
                    Obligation::StarMesh {
                        epsilon: self.epsilon.clone(),
                        mesh: self.mesh.clone(),
                        source: MeshSource::Explicit {
                            complex: self.complex.to_json(),
                        },
                    },
                ),
                DischargeRecord::structural(
                    "every fiber of the retraction lies in a star",
                    Obligation::FiberInStar {
                        point: QVec(t.to_vec()),
                        bucket: i,
                    },
                ),
            ],
        )
    }

    /// Near-collision test of the retraction on sampled fiber pairs over `t`.
    pub fn fiber_check(&self, t: &[Q], eta: &Q, trials: u64, seed: u64) -> DischargeRecord {
        let probe = PartitionProbe {
            map: self,
            t: t.to_vec(),
            carriers: if in_simplex(t) { self.carriers(t) } else { vec![] },
        };
        sample_fiber_check(
            "sampled retraction fibers",
            &probe,
            &self.epsilon,
            eta,
            trials,
            seed,
            Some(json!({
                "kind": "partition_fiber",
                "complex": self.complex.to_json(),
                "blocks": self.partition.blocks,
                "epsilon": self.epsilon.to_string(),
                "point": QVec(t.to_vec()),
            })),
        )
    }
}

struct PartitionProbe<'a> {
    map: &'a PartitionMap,
    t: Vec<Q>,
    carriers: Vec<Simplex>,
}

impl FiberProbe for PartitionProbe<'_> {
    type Point = BarycentricPoint;

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(BarycentricPoint, BarycentricPoint)> {
        let s = self.carriers.choose(rng)?;
        let a = self.map.fill(s, &self.t, &[], None, rng);
        if rng.gen_bool(0.5) {
            let s2 = self.carriers.choose(rng)?;
            return Some((a, self.map.fill(s2, &self.t, &[], None, rng)));
        }
        // same retraction image: keep the A_i part, move everything else
        let i = first_positive(&self.t)?;
        let block = &self.map.partition.blocks[i];
        let fixed: Vec<(VertexId, Q)> = a
            .simplex
            .vertices()
            .iter()
            .zip(&a.weights)
            .filter(|(v, _)| block.contains(v))
            .map(|(v, w)| (*v, w.clone()))
            .collect();
        let face: Vec<&Simplex> = self
            .carriers
            .iter()
            .filter(|s| fixed.iter().all(|(v, _)| s.contains(*v)))
            .collect();
        let s2 = face.choose(rng)?;
        let b = self.map.fill(s2, &self.t, &fixed, Some(i), rng);
        Some((a, b))
    }

    fn domain_dist(&self, a: &BarycentricPoint, b: &BarycentricPoint) -> Length {
        let c = &self.map.complex;
        c.dist(&c.point(a).unwrap(), &c.point(b).unwrap())
    }

    fn target_dist(&self, a: &BarycentricPoint, b: &BarycentricPoint) -> Length {
        let c = &self.map.complex;
        let i = first_positive(&self.t).unwrap();
        let ga = self.map.retract(i, a).unwrap();
        let gb = self.map.retract(i, b).unwrap();
        c.dist(&c.point(&ga).unwrap(), &c.point(&gb).unwrap())
    }
}

fn fmt_point(p: &[Q]) -> String {
    format!(
        "({})",
        p.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    )
}

fn norm_name(n: Norm) -> String {
    serde_json::to_value(n)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// The partition map on the barycentric subdivision of a sufficiently fine subdivision,
/// bucketed by simplex dimension.
#[derive(Clone, Debug)]
pub struct BucketWidthMap {
    pub map: PartitionMap,
    pub subdivisions: usize,
    pub dim_k: u64,
}

pub const SUBDIVISION_CAP: usize = 30;

pub fn bucket_width_map(g: &GeometricComplex, m: usize, epsilon: &Q) -> Result<BucketWidthMap> {
    if m == 0 {
        return Err(Error::OutOfRange("m must be at least 1".into()));
    }
    let (fine, subdivisions) = g.subdivide_to_mesh(epsilon, SUBDIVISION_CAP)?;
    let dim_k = fine.complex().dimension().max(0) as u64;
    let buckets = dimension_buckets(fine.complex(), m)?;
    let (sub, _) = fine.subdivide()?;
    let mut map = partition_map(&sub, &buckets.partition, epsilon)?;
    map.rule = DimRule::Buckets { dim_k };
    Ok(BucketWidthMap {
        map,
        subdivisions,
        dim_k,
    })
}

impl BucketWidthMap {
    /// `floor(dim K / m)`, the bound every fiber certificate meets.
    pub fn fiber_bound(&self) -> u64 {
        self.dim_k / self.map.m() as u64
    }
}

/// The radial homeomorphism `Δ^{m-1} -> [0,1]^{m-1}`.
///
/// The simplex is charted by dropping the first barycentric coordinate; rays from its
/// barycenter are sent to rays from the cube center, matching boundary points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeHomeo {
    pub m: usize,
}

impl CubeHomeo {
    /// Largest `a` with `b + a u` in the charted simplex.
    fn simplex_reach(&self, u: &[Q]) -> Q {
        let inv_m = Q::new(1.into(), (self.m as i64).into());
        let mut best: Option<Q> = None;
        let mut take = |a: Q| {
            if best.as_ref().is_none_or(|b| a < *b) {
                best = Some(a);
            }
        };
        for x in u {
            if x.is_negative() {
                take(&inv_m / -x);
            }
        }
        let s: Q = u.iter().sum();
        if s.is_positive() {
            take(&inv_m / s);
        }
        best.expect("nonzero direction leaves the simplex")
    }

    /// Largest `a` with `c + a u` in the cube.
    fn cube_reach(u: &[Q]) -> Q {
        let m = u.iter().map(|x| x.abs()).max().expect("nonzero direction");
        Q::one() / (qi(2) * m)
    }

    pub fn forward(&self, t: &[Q]) -> Result<Vec<Q>> {
        if t.len() != self.m || !in_simplex(t) {
            return Err(Error::OutOfRange("point is not in the simplex".into()));
        }
        let b = Q::new(1.into(), (self.m as i64).into());
        let u: Vec<Q> = t[1..].iter().map(|x| x - &b).collect();
        let half = Q::new(1.into(), 2.into());
        if u.iter().all(Zero::is_zero) {
            return Ok(vec![half; self.m - 1]);
        }
        let r = Self::cube_reach(&u) / self.simplex_reach(&u);
        Ok(u.iter().map(|x| &half + x * &r).collect())
    }

    pub fn inverse(&self, p: &[Q]) -> Result<Vec<Q>> {
        if p.len() + 1 != self.m || p.iter().any(|x| x.is_negative() || *x > Q::one()) {
            return Err(Error::OutOfRange("point is not in the cube".into()));
        }
        let b = Q::new(1.into(), (self.m as i64).into());
        let half = Q::new(1.into(), 2.into());
        let w: Vec<Q> = p.iter().map(|x| x - &half).collect();
        let s: Vec<Q> = if w.iter().all(Zero::is_zero) {
            vec![b.clone(); self.m - 1]
        } else {
            let r = self.simplex_reach(&w) / Self::cube_reach(&w);
            w.iter().map(|x| &b + x * &r).collect()
        };
        let mut t = vec![Q::one() - s.iter().sum::<Q>()];
        t.extend(s);
        Ok(t)
    }
}

/// Largest cube dimension accepted. Nothing is materialized and one evaluation costs
/// `O(n^2)` rational operations, so this only guards against absurd parameters.
pub const WIDTH_MAP_BUDGET: u128 = 1 << 14;

/// Location of a cube point in the subdivided Kuhn triangulation: the Kuhn simplex, the
/// order of its vertices by decreasing weight (ties by chain position) and the weights
/// `mu_j` on the barycenters of the faces `{u_0, ..., u_j}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlagLocation {
    pub kuhn: KuhnLocation,
    pub order: Vec<usize>,
    pub mu: Vec<Q>,
}

/// `F = h ∘ f: [0,1]^n -> [0,1]^{m-1}` for the dimension-bucket map `f` on the
/// barycentric subdivision of the Kuhn grid of spacing `1/g`, evaluated in closed form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthMap {
    pub n: usize,
    pub m: usize,
    #[serde(with = "crate::rational::q_str")]
    pub epsilon: Q,
    pub grid: KuhnGrid,
    pub homeo: CubeHomeo,
}

/// Smallest grid with star mesh `< epsilon`.
pub fn grid_for(epsilon: &Q) -> u64 {
    if *epsilon > Q::one() {
        1
    } else {
        let two_over = qi(2) / epsilon;
        u64::try_from(two_over.floor().to_integer()).expect("grid fits") + 1
    }
}

pub fn cube_width_map(n: usize, m: usize, epsilon: &Q) -> Result<WidthMap> {
    if n == 0 || m < 2 {
        return Err(Error::OutOfRange(format!(
            "cube map needs n >= 1 and m >= 2 (got n={n}, m={m})"
        )));
    }
    if !epsilon.is_positive() {
        return Err(Error::OutOfRange("epsilon must be positive".into()));
    }
    let g = grid_for(epsilon);
    let estimate = n as u128;
    if estimate > WIDTH_MAP_BUDGET {
        return Err(Error::Budget {
            estimate,
            limit: WIDTH_MAP_BUDGET,
        });
    }
    Ok(WidthMap {
        n,
        m,
        epsilon: epsilon.clone(),
        grid: KuhnGrid::new(n, g)?,
        homeo: CubeHomeo { m },
    })
}

impl WidthMap {
    fn bucket(&self, j: usize) -> usize {
        bucket_of_dim(j as u64, self.n as u64, self.m as u64)
    }

    pub fn locate(&self, x: &[Q]) -> Result<FlagLocation> {
        let kuhn = self.grid.locate(x)?;
        let mut order: Vec<usize> = (0..=self.n).collect();
        order.sort_by(|a, b| kuhn.weights[*b].cmp(&kuhn.weights[*a]).then(a.cmp(b)));
        let mu = (0..=self.n)
            .map(|j| {
                let next = if j < self.n {
                    kuhn.weights[order[j + 1]].clone()
                } else {
                    Q::zero()
                };
                qi(j as i64 + 1) * (&kuhn.weights[order[j]] - next)
            })
            .collect();
        Ok(FlagLocation { kuhn, order, mu })
    }

    /// `f(x)` in the simplex `Δ^{m-1}`.
    pub fn simplex_point(&self, x: &[Q]) -> Result<Vec<Q>> {
        let loc = self.locate(x)?;
        let mut t = vec![Q::zero(); self.m];
        for (j, w) in loc.mu.iter().enumerate() {
            t[self.bucket(j)] += w;
        }
        Ok(t)
    }

    /// `F(x)` in the cube `[0,1]^{m-1}`.
    pub fn eval(&self, x: &[Q]) -> Result<Vec<Q>> {
        self.homeo.forward(&self.simplex_point(x)?)
    }

    /// Coordinates of the retraction `g(x)` onto bucket `i`, or `None` if `x` has no
    /// weight there.
    pub fn retract(&self, i: usize, x: &[Q]) -> Result<Option<Vec<Q>>> {
        let loc = self.locate(x)?;
        let mut out = vec![Q::zero(); self.n];
        let mut total = Q::zero();
        // running sum of the flag's vertices, so face barycenters are prefix averages
        let mut acc = vec![Q::zero(); self.n];
        for j in 0..=self.n {
            if self.bucket(j) > i {
                break;
            }
            let v = self
                .grid
                .grid_point(&self.grid.chain_vertex(&loc.kuhn.base, &loc.kuhn.perm, loc.order[j]));
            for (a, c) in acc.iter_mut().zip(&v) {
                *a += c;
            }
            if self.bucket(j) != i || loc.mu[j].is_zero() {
                continue;
            }
            let w = &loc.mu[j] / qi(j as i64 + 1);
            for (o, a) in out.iter_mut().zip(&acc) {
                *o += &w * a;
            }
            total += &loc.mu[j];
        }
        if total.is_zero() {
            return Ok(None);
        }
        Ok(Some(out.into_iter().map(|c| c / &total).collect()))
    }

    /// `f`-target of a cube point `p`, or `None` when the fiber is empty: `p` lies
    /// outside the cube or needs weight on a bucket with no simplex dimensions.
    pub fn fiber_target(&self, p: &[Q]) -> Result<Option<Vec<Q>>> {
        if p.len() + 1 != self.m {
            return Err(Error::OutOfRange(format!(
                "target point has {} coordinates, expected {}",
                p.len(),
                self.m - 1
            )));
        }
        let Ok(t) = self.homeo.inverse(p) else {
            return Ok(None);
        };
        let reachable = (0..self.m)
            .all(|b| t[b].is_zero() || bucket_dimension(self.n as u64, self.m as u64, b) >= 0);
        Ok(reachable.then_some(t))
    }

    pub fn fiber_certificate(&self, p: &[Q]) -> Result<EpsEmbeddingCertificate> {
        let domain = Domain::new(
            DomainKind::GeometricComplex,
            format!("F^-1({}) in [0,1]^{}", fmt_point(p), self.n),
            "l_inf",
        );
        let Some(t) = self.fiber_target(p)? else {
            return EpsEmbeddingCertificate::new(
                domain,
                self.epsilon.clone(),
                DischargeRecord::structural(
                    "empty fiber",
                    Obligation::EmptyFiber {
                        reason: "target point is not in the image".into(),
                    },
                ),
                vec![],
            );
        };
        let i = first_positive(&t).expect("weights sum to 1");
        EpsEmbeddingCertificate::new(
            domain,
            self.epsilon.clone(),
            DischargeRecord::structural(
                "dimension of the retraction target",
                Obligation::BucketDimension {
                    complex_dim: self.n as u64,
                    m: self.m as u64,
                    bucket: i,
                    dim: bucket_dimension(self.n as u64, self.m as u64, i),
                },
            ),
            vec![
                DischargeRecord::structural(
                    "star mesh below epsilon",
                    Obligation::StarMesh {
                        epsilon: self.epsilon.clone(),
                        mesh: Length::Exact(self.grid.star_mesh()),
                        source: MeshSource::Kuhn {
                            n: self.n,
                            g: self.grid.g,
                        },
                    },
                ),
                DischargeRecord::structural(
                    "every fiber of the retraction lies in a star",
                    Obligation::FiberInStar {
                        point: QVec(t),
                        bucket: i,
                    },
                ),
            ],
        )
    }

    /// Builds a cube point from a Kuhn simplex, a vertex order and flag weights.
    fn assemble(&self, base: &[u64], perm: &[usize], order: &[usize], mu: &[Q]) -> Vec<Q> {
        let mut lambda = vec![Q::zero(); self.n + 1];
        let mut acc = Q::zero();
        for j in (0..=self.n).rev() {
            acc += &mu[j] / qi(j as i64 + 1);
            lambda[order[j]] = acc.clone();
        }
        let mut x = vec![Q::zero(); self.n];
        for (k, l) in lambda.iter().enumerate() {
            if l.is_zero() {
                continue;
            }
            let v = self.grid.grid_point(&self.grid.chain_vertex(base, perm, k));
            for (xi, vi) in x.iter_mut().zip(v) {
                *xi += l * vi;
            }
        }
        x
    }

    fn random_mu(&self, t: &[Q], keep: Option<(usize, &[Q])>, rng: &mut ChaCha8Rng) -> Vec<Q> {
        let mut mu = vec![Q::zero(); self.n + 1];
        for (b, tb) in t.iter().enumerate() {
            let js: Vec<usize> = (0..=self.n).filter(|j| self.bucket(*j) == b).collect();
            let ws = match keep {
                Some((i, prev)) if i == b => js.iter().map(|j| prev[*j].clone()).collect(),
                _ => random_split(tb, js.len(), rng),
            };
            for (j, w) in js.into_iter().zip(ws) {
                mu[j] = w;
            }
        }
        mu
    }

    fn random_simplex(&self, rng: &mut ChaCha8Rng) -> (Vec<u64>, Vec<usize>, Vec<usize>) {
        let base = (0..self.n).map(|_| rng.gen_range(0..self.grid.g)).collect();
        let mut perm: Vec<usize> = (0..self.n).collect();
        perm.shuffle(rng);
        let mut order: Vec<usize> = (0..=self.n).collect();
        order.shuffle(rng);
        (base, perm, order)
    }

    /// A random point of `f^{-1}(t)`; `t` must be a reachable simplex point.
    pub fn sample_fiber_point(&self, t: &[Q], rng: &mut ChaCha8Rng) -> Vec<Q> {
        let (base, perm, order) = self.random_simplex(rng);
        let mu = self.random_mu(t, None, rng);
        self.assemble(&base, &perm, &order, &mu)
    }

    /// A pair in `f^{-1}(t)` with the same retraction image onto bucket `i`: the faces
    /// of the flag inside bucket `i` and their weights are kept, the vertices below and
    /// above that stretch of the flag are reshuffled, and the other weights resampled.
    fn sample_collision(&self, t: &[Q], rng: &mut ChaCha8Rng) -> (Vec<Q>, Vec<Q>) {
        let i = first_positive(t).expect("simplex point");
        let (base, perm, order) = self.random_simplex(rng);
        let mu = self.random_mu(t, None, rng);
        let a = self.assemble(&base, &perm, &order, &mu);
        let js: Vec<usize> = (0..=self.n).filter(|j| self.bucket(*j) == i).collect();
        let (s, e) = (js[0], *js.last().unwrap());
        let mut order2 = order.clone();
        order2[..=s].shuffle(rng);
        order2[e + 1..].shuffle(rng);
        let mu2 = self.random_mu(t, Some((i, &mu)), rng);
        (a, self.assemble(&base, &perm, &order2, &mu2))
    }

    pub fn fiber_probe(&self, p: &[Q]) -> Result<CubeFiberProbe<'_>> {
        Ok(CubeFiberProbe {
            map: self,
            t: self.fiber_target(p)?,
        })
    }

    /// Near-collision test of the retraction on sampled pairs of `F^{-1}(p)`.
    pub fn fiber_check(&self, p: &[Q], eta: &Q, trials: u64, seed: u64) -> Result<DischargeRecord> {
        let probe = self.fiber_probe(p)?;
        Ok(sample_fiber_check(
            "sampled retraction fibers",
            &probe,
            &self.epsilon,
            eta,
            trials,
            seed,
            Some(json!({
                "kind": "cube_fiber",
                "n": self.n,
                "m": self.m,
                "epsilon": self.epsilon.to_string(),
                "point": QVec(p.to_vec()),
            })),
        ))
    }
}

pub struct CubeFiberProbe<'a> {
    map: &'a WidthMap,
    t: Option<Vec<Q>>,
}

impl CubeFiberProbe<'_> {
    pub fn target(&self) -> Option<&[Q]> {
        self.t.as_deref()
    }

    pub fn retraction_bucket(&self) -> Option<usize> {
        self.t.as_deref().and_then(first_positive)
    }

    /// A pair of fiber points: half the time independent, half the time a collision
    /// of the retraction.
    pub fn pair(&self, rng: &mut ChaCha8Rng) -> Option<(Vec<Q>, Vec<Q>)> {
        if rng.gen_bool(0.5) {
            self.independent_pair(rng)
        } else {
            self.collision_pair(rng)
        }
    }

    pub fn independent_pair(&self, rng: &mut ChaCha8Rng) -> Option<(Vec<Q>, Vec<Q>)> {
        let t = self.t.as_ref()?;
        Some((
            self.map.sample_fiber_point(t, rng),
            self.map.sample_fiber_point(t, rng),
        ))
    }

    /// Two fiber points with the same retraction image.
    pub fn collision_pair(&self, rng: &mut ChaCha8Rng) -> Option<(Vec<Q>, Vec<Q>)> {
        let t = self.t.as_ref()?;
        Some(self.map.sample_collision(t, rng))
    }

    pub fn retract(&self, x: &[Q]) -> Vec<Q> {
        let i = self.retraction_bucket().expect("nonempty fiber");
        self.map
            .retract(i, x)
            .expect("point in the cube")
            .expect("fiber points have weight on the first positive bucket")
    }
}

impl FiberProbe for CubeFiberProbe<'_> {
    type Point = QVec;

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(QVec, QVec)> {
        self.pair(rng).map(|(a, b)| (QVec(a), QVec(b)))
    }

    fn domain_dist(&self, a: &QVec, b: &QVec) -> Length {
        Length::Exact(sup_dist(&a.0, &b.0))
    }

    fn target_dist(&self, a: &QVec, b: &QVec) -> Length {
        Length::Exact(sup_dist(&self.retract(&a.0), &self.retract(&b.0)))
    }
}

/// `G_n(x) = (F_n(x), 0, ..., 0)` with `n - m + 1` trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaddedBlockMap {
    pub width: WidthMap,
}

pub fn padded_block_map(n: usize, m: usize, epsilon: &Q) -> Result<PaddedBlockMap> {
    if n < m {
        return Err(Error::OutOfRange(format!("block length {n} is below m = {m}")));
    }
    Ok(PaddedBlockMap {
        width: cube_width_map(n, m, epsilon)?,
    })
}

impl PaddedBlockMap {
    pub fn n(&self) -> usize {
        self.width.n
    }

    pub fn eval(&self, x: &[Q]) -> Result<Vec<Q>> {
        let mut out = self.width.eval(x)?;
        out.resize(self.width.n, Q::zero());
        Ok(out)
    }

    /// Cube-map target of `p`, or `None` if the padded coordinates are not all zero.
    pub fn head<'a>(&self, p: &'a [Q]) -> Result<Option<&'a [Q]>> {
        if p.len() != self.width.n {
            return Err(Error::OutOfRange(format!(
                "block point has {} coordinates, expected {}",
                p.len(),
                self.width.n
            )));
        }
        let (head, tail) = p.split_at(self.width.m - 1);
        Ok(tail.iter().all(Zero::is_zero).then_some(head))
    }

    pub fn fiber_certificate(&self, p: &[Q]) -> Result<EpsEmbeddingCertificate> {
        match self.head(p)? {
            Some(h) => {
                let mut c = self.width.fiber_certificate(h)?;
                c.domain.label = format!("G^-1({}) in [0,1]^{}", fmt_point(p), self.width.n);
                Ok(c)
            }
            None => EpsEmbeddingCertificate::new(
                Domain::new(
                    DomainKind::GeometricComplex,
                    format!("G^-1({})", fmt_point(p)),
                    "l_inf",
                ),
                self.width.epsilon.clone(),
                DischargeRecord::structural(
                    "empty fiber",
                    Obligation::EmptyFiber {
                        reason: "padded coordinates are not zero".into(),
                    },
                ),
                vec![],
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certs::{default_eta, Status};
    use crate::complex::SimplicialComplex;
    use crate::geometry::kuhn_triangulate_cube;
    use crate::rational::q;
    use rand::SeedableRng;
    use std::collections::BTreeMap;

    fn edge() -> GeometricComplex {
        let k = SimplicialComplex::simplex(vec![0, 1]).unwrap();
        let coords = BTreeMap::from([(0, vec![qi(0)]), (1, vec![qi(1)])]);
        GeometricComplex::new(k, coords, Norm::LInf).unwrap()
    }

    fn blocks(bs: &[&[VertexId]]) -> VertexPartition {
        VertexPartition {
            blocks: bs.iter().map(|b| b.iter().copied().collect()).collect(),
        }
    }

    #[test]
    fn edge_partition_map() {
        let g = edge();
        let f = partition_map(&g, &blocks(&[&[0], &[1]]), &q(2, 1)).unwrap();
        assert!(f.is_simplicial());
        let mid = BarycentricPoint::new(Simplex::new(vec![0, 1]).unwrap(), vec![q(1, 2), q(1, 2)]).unwrap();
        assert_eq!(f.eval(&mid).unwrap(), vec![q(1, 2), q(1, 2)]);
        let c = f.fiber_certificate(&[q(1, 2), q(1, 2)]).unwrap();
        assert_eq!(c.target_dim, 0);
        assert!(c.all_structural());
        assert!(c.recheck_structural().is_empty());

        let err = partition_map(&g, &blocks(&[&[0], &[1]]), &q(1, 2)).unwrap_err();
        assert!(matches!(err, Error::MeshHypothesis { .. }));
    }

    #[test]
    fn vertex_targets_use_their_block() {
        let tri = GeometricComplex::standard_simplex(2, Norm::LInf);
        let (fine, _) = tri.subdivide_to_mesh(&q(1, 2), 10).unwrap();
        let bw = bucket_width_map(&fine, 2, &q(1, 2)).unwrap();
        let f = &bw.map;
        let e1 = vec![qi(1), qi(0)];
        let c = f.fiber_certificate(&e1).unwrap();
        let k1 = f.complex().complex().full_subcomplex(&f.partition().blocks[0]).unwrap();
        assert_eq!(c.target_dim as i64, k1.dimension());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = f.sample_fiber_point(&e1, &mut rng).unwrap();
            assert_eq!(f.eval(&x).unwrap(), e1);
            assert!(x.simplex.vertices().iter().all(|v| f.partition().blocks[0].contains(v)));
        }
    }

    #[test]
    fn bucket_maps_on_a_triangle() {
        let tri = GeometricComplex::standard_simplex(2, Norm::LInf);
        let eps = q(1, 2);
        let bw = bucket_width_map(&tri, 2, &eps).unwrap();
        assert_eq!(bw.fiber_bound(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for t in [vec![q(1, 2), q(1, 2)], vec![qi(0), qi(1)], vec![q(1, 3), q(2, 3)]] {
            let c = bw.map.fiber_certificate(&t).unwrap();
            assert!(c.target_dim <= 1);
            assert!(c.all_structural(), "{:?}", c.recheck_structural());
            for _ in 0..10 {
                let x = bw.map.sample_fiber_point(&t, &mut rng).unwrap();
                assert_eq!(bw.map.eval(&x).unwrap(), t);
            }
            let r = bw.map.fiber_check(&t, &default_eta(&eps), 200, 9);
            assert_eq!(r.status, Status::SampledOnly, "{:?}", r.witness);
        }
        let bw3 = bucket_width_map(&tri, 3, &eps).unwrap();
        for t in [vec![qi(1), qi(0), qi(0)], vec![qi(0), q(1, 2), q(1, 2)], vec![qi(0), qi(0), qi(1)]] {
            assert_eq!(bw3.map.fiber_certificate(&t).unwrap().target_dim, 0);
        }
        let bw1 = bucket_width_map(&tri, 1, &eps).unwrap();
        assert_eq!(bw1.map.fiber_certificate(&[qi(1)]).unwrap().target_dim, 2);
        // outside the simplex
        let c = bw.map.fiber_certificate(&[qi(2), qi(-1)]).unwrap();
        assert_eq!(c.target_dim, 0);
    }

    #[test]
    fn certified_dimension_is_monotone_in_m() {
        for n in 1..=8usize {
            let mut prev = u64::MAX;
            for m in 1..=n as u64 + 2 {
                let worst = (0..m as usize)
                    .map(|b| bucket_dimension(n as u64, m, b).max(0) as u64)
                    .max()
                    .unwrap();
                assert!(worst <= n as u64 / m);
                assert!(worst <= prev);
                prev = worst;
            }
        }
    }

    #[test]
    fn homeo_round_trips() {
        for m in 2..=5 {
            let h = CubeHomeo { m };
            let mut rng = ChaCha8Rng::seed_from_u64(m as u64);
            for _ in 0..50 {
                let t = random_split(&qi(1), m, &mut rng);
                let p = h.forward(&t).unwrap();
                assert!(p.iter().all(|x| !x.is_negative() && *x <= qi(1)));
                assert_eq!(h.inverse(&p).unwrap(), t);
            }
            // vertices go to the boundary
            let p = h.forward(&unit_vector(0, m)).unwrap();
            assert!(p.iter().any(|x| x.is_zero() || x.is_one()));
        }
        let h = CubeHomeo { m: 2 };
        assert_eq!(h.forward(&[q(1, 3), q(2, 3)]).unwrap(), vec![q(2, 3)]);
        assert!(h.inverse(&[q(3, 2)]).is_err());
    }

    /// The closed-form map agrees with the explicit subdivided Kuhn complex.
    #[test]
    fn closed_form_matches_explicit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, g, m) in [(1usize, 3u64, 2usize), (2, 2, 2), (2, 3, 3)] {
            let eps = qi(3);
            let w = WidthMap {
                n,
                m,
                epsilon: eps.clone(),
                grid: KuhnGrid::new(n, g).unwrap(),
                homeo: CubeHomeo { m },
            };
            let kk = kuhn_triangulate_cube(n, g).unwrap();
            let buckets = dimension_buckets(kk.complex(), m).unwrap();
            let (sub, _) = kk.subdivide().unwrap();
            let f = partition_map(&sub, &buckets.partition, &eps).unwrap();
            for _ in 0..30 {
                let x: Vec<Q> = (0..n).map(|_| q(rng.gen_range(0..=24), 24)).collect();
                let bp = sub.locate(&x, None).unwrap();
                let t = f.eval(&bp).unwrap();
                assert_eq!(w.simplex_point(&x).unwrap(), t, "x = {x:?}");
                if let Some(i) = first_positive(&t) {
                    let gx = f.retract(i, &bp).unwrap();
                    assert_eq!(w.retract(i, &x).unwrap().unwrap(), sub.point(&gx).unwrap());
                }
            }
        }
    }

    #[test]
    fn tie_breaking_does_not_change_values() {
        let w = cube_width_map(3, 2, &q(1, 2)).unwrap();
        // points on cell faces and with tied fractional parts
        let pts = [
            vec![q(1, 5), q(1, 5), q(1, 5)],
            vec![q(2, 5), q(1, 5), q(2, 5)],
            vec![qi(0), q(1, 10), q(1, 10)],
            vec![qi(1), qi(1), q(1, 2)],
        ];
        for x in pts {
            let t = w.simplex_point(&x).unwrap();
            let loc = w.locate(&x).unwrap();
            // recompute with the opposite tie-break on equal weights
            let mut order: Vec<usize> = (0..=3).collect();
            order.sort_by(|a, b| loc.kuhn.weights[*b].cmp(&loc.kuhn.weights[*a]).then(b.cmp(a)));
            let mut t2 = vec![Q::zero(); 2];
            for j in 0..=3 {
                let next = if j < 3 { loc.kuhn.weights[order[j + 1]].clone() } else { Q::zero() };
                t2[w.bucket(j)] += qi(j as i64 + 1) * (&loc.kuhn.weights[order[j]] - next);
            }
            assert_eq!(t, t2);
        }
    }

    #[test]
    fn cube_fibers() {
        let eps = q(1, 8);
        let w = cube_width_map(2, 2, &eps).unwrap();
        assert_eq!(w.grid.g, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [vec![q(1, 2)], vec![qi(0)], vec![qi(1)], vec![q(3, 7)]] {
            let c = w.fiber_certificate(&p).unwrap();
            assert!(c.target_dim <= 1);
            assert!(c.all_structural());
            let t = w.fiber_target(&p).unwrap().unwrap();
            for _ in 0..20 {
                let x = w.sample_fiber_point(&t, &mut rng);
                assert_eq!(w.eval(&x).unwrap(), p);
            }
            let probe = w.fiber_probe(&p).unwrap();
            for _ in 0..20 {
                let (a, b) = probe.pair(&mut rng).unwrap();
                assert_eq!(w.eval(&a).unwrap(), p);
                assert_eq!(w.eval(&b).unwrap(), p);
            }
            let r = w.fiber_check(&p, &default_eta(&eps), 300, 1).unwrap();
            assert_eq!(r.status, Status::SampledOnly);
        }
        let c = w.fiber_certificate(&[q(3, 2)]).unwrap();
        assert_eq!(c.target_dim, 0);

        let w1 = cube_width_map(1, 2, &q(1, 2)).unwrap();
        assert_eq!(w1.fiber_certificate(&[q(1, 3)]).unwrap().target_dim, 0);
        assert!(cube_width_map(2, 1, &eps).is_err());
    }

    #[test]
    fn collisions_share_the_retraction_image() {
        let w = cube_width_map(8, 3, &q(1, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = vec![q(1, 3), q(3, 5)];
        let t = w.fiber_target(&p).unwrap().unwrap();
        for _ in 0..10 {
            let (a, b) = w.sample_collision(&t, &mut rng);
            assert_eq!(w.eval(&a).unwrap(), p);
            assert_eq!(w.eval(&b).unwrap(), p);
            let i = first_positive(&t).unwrap();
            assert_eq!(w.retract(i, &a).unwrap(), w.retract(i, &b).unwrap());
        }
    }

    #[test]
    fn padded_maps() {
        let g = padded_block_map(8, 3, &q(1, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut prev: Option<Vec<Q>> = None;
        for _ in 0..20 {
            let x: Vec<Q> = (0..8).map(|_| q(rng.gen_range(0..=100), 100)).collect();
            let y = g.eval(&x).unwrap();
            assert_eq!(y.len(), 8);
            assert!(y[2..].iter().all(Zero::is_zero));
            assert!(y.iter().filter(|v| !v.is_zero()).count() <= 2);
            if let Some(p) = &prev {
                assert_eq!(p[2..], y[2..]);
            }
            prev = Some(y);
        }
        assert_eq!(g.eval(&vec![qi(0); 8]).unwrap(), vec![qi(0); 8]);
        assert!(padded_block_map(2, 3, &q(1, 8)).is_err());
        let mut p = vec![qi(0); 8];
        p[5] = q(1, 2);
        assert_eq!(g.fiber_certificate(&p).unwrap().target_dim, 0);
    }
}
