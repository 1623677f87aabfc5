//! ε-embedding certificates: a target dimension bundled with the obligations that
//! justify it, and the composition rules (product, pullback, chain).
//!
//! Structural obligations carry enough data to be re-checked from their serialized
//! form. Sampled obligations record a near-collision test and an opaque context from
//! which the owning module can re-run it.

use std::fmt;

use num_traits::{Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::complex::{bucket_dimension, ComplexJson, SimplicialComplex, VertexId};
use crate::error::{Error, Result};
use crate::geometry::{GeometricComplex, GeometricComplexJson, KuhnGrid};
use crate::rational::{q, qi, Length, QVec, Q};
use crate::symdyn::{
    is_disjoint, is_subset, two_sided_tail, BlockGraph, CylinderJson, CylinderSet, Sft,
    SftJson,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Discharged,
    SampledOnly,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    GeometricComplex,
    SampleCloud,
    SymbolicBlock,
    Product,
}

/// Serializable description of a certificate's domain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    pub label: String,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<Domain>,
}

impl Domain {
    pub fn new(kind: DomainKind, label: impl Into<String>, metric: impl Into<String>) -> Self {
        Domain {
            kind,
            label: label.into(),
            metric: metric.into(),
            parts: Vec::new(),
        }
    }

    pub fn point() -> Self {
        Domain::new(DomainKind::SampleCloud, "point", "discrete")
    }

    fn factors(&self) -> Vec<Domain> {
        if self.kind == DomainKind::Product && self.metric == "max" {
            self.parts.clone()
        } else {
            vec![self.clone()]
        }
    }
}

/// Where a recorded star mesh comes from, so that it can be recomputed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MeshSource {
    /// Closed-form Kuhn grid; the barycentric subdivision used by the map has star mesh
    /// at most that of the grid.
    Kuhn { n: usize, g: u64 },
    Explicit { complex: GeometricComplexJson },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledCheck {
    pub seed: u64,
    pub trials: u64,
    #[serde(with = "crate::rational::q_str")]
    pub eta: Q,
    #[serde(with = "crate::rational::q_str")]
    pub epsilon: Q,
    /// Trials that produced a pair.
    pub pairs: u64,
    /// Pairs whose images are within `eta`.
    pub near_pairs: u64,
    pub max_near_distance: Option<Length>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Value>,
}

/// A checkable fact behind a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obligation {
    /// Star mesh strictly below `epsilon`.
    StarMesh {
        #[serde(with = "crate::rational::q_str")]
        epsilon: Q,
        mesh: Length,
        source: MeshSource,
    },
    /// `dim K'(A_bucket)` for the dimension-bucket partition of a complex of dimension
    /// `complex_dim` into `m` buckets.
    BucketDimension {
        complex_dim: u64,
        m: u64,
        bucket: usize,
        dim: i64,
    },
    /// `dim K(A)` for the full subcomplex on `vertices`.
    SubcomplexDimension {
        complex: ComplexJson,
        vertices: Vec<VertexId>,
        dim: i64,
    },
    /// Fibers of the retraction onto `K'(A_bucket)` lie in stars; the bucket must be the
    /// first with positive target weight.
    FiberInStar { point: QVec, bucket: usize },
    /// The fiber is empty, so every map is an embedding.
    EmptyFiber { reason: String },
    ProductRule { dims: Vec<u64>, total: u64 },
    /// A distance non-decreasing map known by construction.
    NonDecreasingMap { map: String },
    /// Coordinates agreeing within `inner` on a window reaching `m_tail` on both sides
    /// give `rho`-distance at most `outer`: `(3 - t) inner + t <= outer`, `t = 2^{2-M}`.
    WindowProjection {
        m_tail: u32,
        #[serde(with = "crate::rational::q_str")]
        inner: Q,
        #[serde(with = "crate::rational::q_str")]
        outer: Q,
    },
    ChainItinerary {
        block_lengths: Vec<u64>,
        itinerary: Vec<usize>,
        horizon: u64,
        dims: Vec<u64>,
        total: u64,
        #[serde(with = "crate::rational::q_opt")]
        rate: Option<Q>,
    },
    /// `total < (N + 2M + 2L') / m`.
    BlockBound {
        total: u64,
        horizon: u64,
        m_tail: u32,
        l_prime: u64,
        m: u64,
    },
    /// Over any orbit segment, at most `value` of the times `0, stride, ..., (count-1) stride`
    /// land in `set`.
    StridedCount {
        sft: SftJson,
        set: Vec<CylinderJson>,
        stride: u64,
        count: u64,
        value: u64,
    },
    /// Pairwise disjoint cylinder sets.
    Disjoint {
        sft: SftJson,
        pieces: Vec<Vec<CylinderJson>>,
    },
    /// `E_i ⊆ W_i ⊆ V_i` for the clopen cutoff `rho = 1` on `E_1 ∪ ... ∪ E_m`, zero
    /// elsewhere.
    Cutoff {
        sft: SftJson,
        cover: Vec<Vec<CylinderJson>>,
        pieces: Vec<Vec<CylinderJson>>,
        neighborhoods: Vec<Vec<CylinderJson>>,
    },
    /// `total = f_count * cone_dim + g_count * global_cone_dim`.
    WedgeDimension {
        f_count: u64,
        cone_dim: u64,
        g_count: u64,
        global_cone_dim: u64,
        total: u64,
    },
    Sampled(SampledCheck),
}

impl Obligation {
    pub fn is_sampled(&self) -> bool {
        matches!(self, Obligation::Sampled(_))
    }

    /// The dimension this obligation certifies, for obligations that determine one.
    pub fn dimension(&self) -> Option<u64> {
        match self {
            Obligation::BucketDimension { dim, .. }
            | Obligation::SubcomplexDimension { dim, .. } => Some((*dim).max(0) as u64),
            Obligation::EmptyFiber { .. } => Some(0),
            Obligation::ProductRule { total, .. }
            | Obligation::ChainItinerary { total, .. }
            | Obligation::WedgeDimension { total, .. } => Some(*total),
            _ => None,
        }
    }

    /// Re-derives a structural obligation from its own data.
    pub fn recheck(&self) -> std::result::Result<(), String> {
        match self {
            Obligation::StarMesh {
                epsilon,
                mesh,
                source,
            } => {
                let actual = match source {
                    MeshSource::Kuhn { n, g } => Length::Exact(
                        KuhnGrid::new(*n, *g).map_err(|e| e.to_string())?.star_mesh(),
                    ),
                    MeshSource::Explicit { complex } => GeometricComplex::from_json(complex)
                        .map_err(|e| e.to_string())?
                        .max_star_mesh()
                        .value,
                };
                if &actual != mesh {
                    return Err(format!("recorded mesh {mesh}, recomputed {actual}"));
                }
                if !mesh.lt_q(epsilon) {
                    return Err(format!("mesh {mesh} is not < {epsilon}"));
                }
                Ok(())
            }
            Obligation::BucketDimension {
                complex_dim,
                m,
                bucket,
                dim,
            } => {
                if *m == 0 || *bucket as u64 >= *m {
                    return Err(format!("bucket {bucket} out of range for m = {m}"));
                }
                let actual = bucket_dimension(*complex_dim, *m, *bucket);
                if actual != *dim {
                    return Err(format!("recorded bucket dimension {dim}, recomputed {actual}"));
                }
                Ok(())
            }
            Obligation::SubcomplexDimension {
                complex,
                vertices,
                dim,
            } => {
                let k = SimplicialComplex::from_json(complex).map_err(|e| e.to_string())?;
                let a = vertices.iter().copied().collect();
                let actual = k.full_subcomplex(&a).map_err(|e| e.to_string())?.dimension();
                if actual != *dim {
                    return Err(format!("recorded dimension {dim}, recomputed {actual}"));
                }
                Ok(())
            }
            Obligation::FiberInStar { point, bucket } => {
                let t = &point.0;
                if t.iter().any(Signed::is_negative) || t.iter().sum::<Q>() != qi(1) {
                    return Err("target point is not in the simplex".into());
                }
                match t.iter().position(Signed::is_positive) {
                    Some(i) if i == *bucket => Ok(()),
                    _ => Err(format!("bucket {bucket} is not the first positive weight")),
                }
            }
            Obligation::EmptyFiber { .. } | Obligation::NonDecreasingMap { .. } => Ok(()),
            Obligation::ProductRule { dims, total } => {
                let s: u64 = dims.iter().sum();
                if s != *total {
                    return Err(format!("factor dims sum to {s}, recorded {total}"));
                }
                Ok(())
            }
            Obligation::WindowProjection {
                m_tail,
                inner,
                outer,
            } => {
                if *m_tail == 0 {
                    return Err("tail index must be positive".into());
                }
                let t = two_sided_tail(*m_tail);
                let lhs = (qi(3) - &t) * inner + &t;
                if lhs > *outer {
                    return Err(format!("(3 - t) * {inner} + t = {lhs} exceeds {outer}"));
                }
                Ok(())
            }
            Obligation::ChainItinerary {
                block_lengths,
                itinerary,
                horizon,
                dims,
                total,
                rate,
            } => check_itinerary(block_lengths, itinerary, *horizon)
                .map_err(|e| e.to_string())
                .and_then(|_| {
                    if dims.len() != block_lengths.len() {
                        return Err("one dimension per block expected".into());
                    }
                    let s: u64 = itinerary.iter().map(|i| dims[*i]).sum();
                    if s != *total {
                        return Err(format!("itinerary dims sum to {s}, recorded {total}"));
                    }
                    if let Some(a) = rate {
                        chain_rate_check(block_lengths, itinerary, *horizon, dims, *total, a)?;
                    }
                    Ok(())
                }),
            Obligation::BlockBound {
                total,
                horizon,
                m_tail,
                l_prime,
                m,
            } => {
                let bound = q(
                    (*horizon + 2 * *m_tail as u64 + 2 * *l_prime) as i64,
                    *m as i64,
                );
                if qi(*total as i64) >= bound {
                    return Err(format!("{total} is not < {bound}"));
                }
                Ok(())
            }
            Obligation::StridedCount {
                sft,
                set,
                stride,
                count,
                value,
            } => {
                let s = Sft::from_json(sft).map_err(|e| e.to_string())?;
                let c = CylinderSet::from_json(&s, set).map_err(|e| e.to_string())?;
                let actual = BlockGraph::new(&s, &c).max_strided_weight(*stride, *count);
                if actual != *value {
                    return Err(format!("recorded count {value}, recomputed {actual}"));
                }
                Ok(())
            }
            Obligation::Disjoint { sft, pieces } => {
                let s = Sft::from_json(sft).map_err(|e| e.to_string())?;
                let sets = pieces
                    .iter()
                    .map(|p| CylinderSet::from_json(&s, p))
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| e.to_string())?;
                for i in 0..sets.len() {
                    for j in i + 1..sets.len() {
                        if !is_disjoint(&s, &sets[i], &sets[j]) {
                            return Err(format!("pieces {i} and {j} intersect"));
                        }
                    }
                }
                Ok(())
            }
            Obligation::Cutoff {
                sft,
                cover,
                pieces,
                neighborhoods,
            } => {
                let s = Sft::from_json(sft).map_err(|e| e.to_string())?;
                let load = |sets: &[Vec<CylinderJson>]| {
                    sets.iter()
                        .map(|p| CylinderSet::from_json(&s, p))
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| e.to_string())
                };
                let (v, e, w) = (load(cover)?, load(pieces)?, load(neighborhoods)?);
                if v.len() != e.len() || e.len() != w.len() {
                    return Err("cover, pieces and neighborhoods differ in length".into());
                }
                for i in 0..v.len() {
                    if !is_subset(&s, &e[i], &w[i]) {
                        return Err(format!("piece {i} is not inside its neighborhood"));
                    }
                    if !is_subset(&s, &w[i], &v[i]) {
                        return Err(format!("neighborhood {i} is not inside cover set {i}"));
                    }
                }
                Ok(())
            }
            Obligation::WedgeDimension {
                f_count,
                cone_dim,
                g_count,
                global_cone_dim,
                total,
            } => {
                let s = f_count * cone_dim + g_count * global_cone_dim;
                if s != *total {
                    return Err(format!("dimension formula gives {s}, recorded {total}"));
                }
                Ok(())
            }
            Obligation::Sampled(_) => Ok(()),
        }
    }
}

fn check_itinerary(block_lengths: &[u64], itinerary: &[usize], horizon: u64) -> Result<()> {
    if itinerary.is_empty() {
        return Err(Error::Itinerary("empty itinerary".into()));
    }
    let mut covered = 0u64;
    for (j, &i) in itinerary.iter().enumerate() {
        let len = *block_lengths
            .get(i)
            .ok_or_else(|| Error::Itinerary(format!("unknown block {i}")))?;
        if len == 0 {
            return Err(Error::Itinerary(format!("block {i} has length 0")));
        }
        if covered >= horizon {
            return Err(Error::Itinerary(format!(
                "step {j} starts at {covered}, past the horizon {horizon}"
            )));
        }
        covered += len;
    }
    if covered < horizon {
        return Err(Error::Itinerary(format!(
            "itinerary covers [0, {covered}), short of {horizon}"
        )));
    }
    Ok(())
}

/// If every used block has `dim < a N_i` then the total is `< a (N + max N_i)`.
fn chain_rate_check(
    block_lengths: &[u64],
    itinerary: &[usize],
    horizon: u64,
    dims: &[u64],
    total: u64,
    a: &Q,
) -> std::result::Result<(), String> {
    for &i in itinerary {
        if qi(dims[i] as i64) >= a * qi(block_lengths[i] as i64) {
            return Err(format!(
                "block {i}: dim {} is not < {a} * {}",
                dims[i], block_lengths[i]
            ));
        }
    }
    let max_len = itinerary.iter().map(|i| block_lengths[*i]).max().unwrap_or(0);
    let bound = a * qi((horizon + max_len) as i64);
    if qi(total as i64) >= bound {
        return Err(format!("total {total} is not < {bound}"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DischargeRecord {
    pub name: String,
    pub status: Status,
    pub obligation: Obligation,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub defines_dim: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
}

impl DischargeRecord {
    /// A structural record, discharged iff its recheck passes.
    pub fn structural(name: impl Into<String>, obligation: Obligation) -> Self {
        let (status, witness) = match obligation.recheck() {
            Ok(()) => (Status::Discharged, None),
            Err(e) => (Status::Failed, Some(Value::String(e))),
        };
        DischargeRecord {
            name: name.into(),
            status,
            obligation,
            defines_dim: false,
            witness,
        }
    }

    fn with_dim(mut self) -> Self {
        self.defines_dim = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsEmbeddingCertificate {
    pub domain: Domain,
    #[serde(with = "crate::rational::q_str")]
    pub epsilon: Q,
    pub target_dim: u64,
    pub obligations: Vec<DischargeRecord>,
}

/// One problem found when re-checking a certificate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub record: Option<usize>,
    pub name: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(i) => write!(f, "obligation #{i} ({}): {}", self.name, self.message),
            None => write!(f, "{}: {}", self.name, self.message),
        }
    }
}

impl EpsEmbeddingCertificate {
    /// A certificate whose dimension is fixed by `dim_record`.
    pub fn new(
        domain: Domain,
        epsilon: Q,
        dim_record: DischargeRecord,
        mut others: Vec<DischargeRecord>,
    ) -> Result<Self> {
        if !epsilon.is_positive() {
            return Err(Error::OutOfRange("epsilon must be positive".into()));
        }
        let target_dim = dim_record
            .obligation
            .dimension()
            .ok_or_else(|| Error::Invalid(format!("{} does not fix a dimension", dim_record.name)))?;
        others.push(dim_record.with_dim());
        Ok(EpsEmbeddingCertificate {
            domain,
            epsilon,
            target_dim,
            obligations: others,
        })
    }

    /// The one-point space embeds in a point.
    pub fn point(epsilon: Q) -> Result<Self> {
        Self::new(
            Domain::point(),
            epsilon,
            DischargeRecord::structural(
                "one-point domain",
                Obligation::EmptyFiber {
                    reason: "a single point has diameter 0".into(),
                },
            ),
            vec![],
        )
    }

    pub fn is_discharged(&self) -> bool {
        self.obligations.iter().all(|r| r.status != Status::Failed)
    }

    pub fn all_structural(&self) -> bool {
        self.obligations
            .iter()
            .all(|r| r.status == Status::Discharged && !r.obligation.is_sampled())
    }

    pub fn push(&mut self, record: DischargeRecord) {
        self.obligations.push(record);
    }

    /// Re-checks every structural obligation and the dimension bookkeeping. Sampled
    /// records are left to the module that can regenerate them.
    pub fn recheck_structural(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        if !self.epsilon.is_positive() {
            out.push(Finding {
                record: None,
                name: "epsilon".into(),
                message: "not positive".into(),
            });
        }
        for (i, r) in self.obligations.iter().enumerate() {
            if r.obligation.is_sampled() {
                continue;
            }
            if let Err(message) = r.obligation.recheck() {
                out.push(Finding {
                    record: Some(i),
                    name: r.name.clone(),
                    message,
                });
            } else if r.status != Status::Discharged {
                out.push(Finding {
                    record: Some(i),
                    name: r.name.clone(),
                    message: format!("status {:?} but recheck passes", r.status),
                });
            }
        }
        let defining: Vec<_> = self
            .obligations
            .iter()
            .filter(|r| r.defines_dim)
            .collect();
        match defining.as_slice() {
            [r] => {
                let d = r.obligation.dimension();
                if d != Some(self.target_dim) {
                    out.push(Finding {
                        record: None,
                        name: "target_dim".into(),
                        message: format!(
                            "target_dim {} but {} certifies {:?}",
                            self.target_dim, r.name, d
                        ),
                    });
                }
            }
            _ => out.push(Finding {
                record: None,
                name: "target_dim".into(),
                message: format!("{} dimension-defining records, expected 1", defining.len()),
            }),
        }
        out
    }

    /// Factor dimensions if this is a max-product certificate.
    fn factor_dims(&self) -> Vec<u64> {
        if self.domain.kind == DomainKind::Product && self.domain.metric == "max" {
            for r in &self.obligations {
                if let (true, Obligation::ProductRule { dims, .. }) = (r.defines_dim, &r.obligation) {
                    return dims.clone();
                }
            }
        }
        vec![self.target_dim]
    }
}

/// Certificate for `X × Y` with the max metric. Products are flattened, so the operation
/// is associative on the nose.
pub fn product_certificate(
    c1: &EpsEmbeddingCertificate,
    c2: &EpsEmbeddingCertificate,
) -> Result<EpsEmbeddingCertificate> {
    if c1.epsilon != c2.epsilon {
        return Err(Error::MismatchedEpsilon {
            left: c1.epsilon.to_string(),
            right: c2.epsilon.to_string(),
        });
    }
    let mut parts = c1.domain.factors();
    parts.extend(c2.domain.factors());
    let mut dims = c1.factor_dims();
    dims.extend(c2.factor_dims());
    let total = dims.iter().sum();
    let mut others = Vec::new();
    for c in [c1, c2] {
        let flat = c.domain.kind == DomainKind::Product && c.domain.metric == "max";
        for r in &c.obligations {
            if flat && r.defines_dim && matches!(r.obligation, Obligation::ProductRule { .. }) {
                continue;
            }
            let mut r = r.clone();
            r.defines_dim = false;
            others.push(r);
        }
    }
    let domain = Domain {
        kind: DomainKind::Product,
        label: "product".into(),
        metric: "max".into(),
        parts,
    };
    EpsEmbeddingCertificate::new(
        domain,
        c1.epsilon.clone(),
        DischargeRecord::structural("product rule", Obligation::ProductRule { dims, total }),
        others,
    )
}

/// Product of a nonempty list of certificates.
pub fn product_all(certs: &[EpsEmbeddingCertificate]) -> Result<EpsEmbeddingCertificate> {
    let (first, rest) = certs
        .split_first()
        .ok_or_else(|| Error::Invalid("empty product".into()))?;
    rest.iter()
        .try_fold(first.clone(), |acc, c| product_certificate(&acc, c))
}

/// Evidence that `phi` does not decrease distances.
#[derive(Clone, Debug)]
pub enum NonDecreasingWitness {
    Structural(String),
    Sampled(DischargeRecord),
}

/// Composes `c` with a distance non-decreasing map from `domain`. The dimension and
/// `epsilon` never change; a failing sampled witness is kept as a failed record.
pub fn pullback_certificate(
    c: &EpsEmbeddingCertificate,
    domain: Domain,
    witness: NonDecreasingWitness,
) -> EpsEmbeddingCertificate {
    let mut out = c.clone();
    out.domain = domain;
    out.obligations.push(match witness {
        NonDecreasingWitness::Structural(map) => DischargeRecord::structural(
            "pullback along a distance non-decreasing map",
            Obligation::NonDecreasingMap { map },
        ),
        NonDecreasingWitness::Sampled(r) => r,
    });
    out
}

/// Chains block certificates along an itinerary covering `[0, horizon)`.
///
/// `blocks[i]` is a certificate for block `i` of length `block_lengths[i]`. With a rate
/// `a`, the record also checks that `dim_i < a N_i` for the used blocks implies the
/// total is `< a (N + max N_i)`.
pub fn chain_fiber_certificate(
    blocks: &[EpsEmbeddingCertificate],
    block_lengths: &[u64],
    itinerary: &[usize],
    horizon: u64,
    rate: Option<Q>,
) -> Result<EpsEmbeddingCertificate> {
    if blocks.len() != block_lengths.len() {
        return Err(Error::Itinerary("one length per block expected".into()));
    }
    check_itinerary(block_lengths, itinerary, horizon)?;
    let eps = blocks[itinerary[0]].epsilon.clone();
    let mut used: Vec<usize> = itinerary.to_vec();
    used.sort_unstable();
    used.dedup();
    for &i in &used {
        if blocks[i].epsilon != eps {
            return Err(Error::MismatchedEpsilon {
                left: eps.to_string(),
                right: blocks[i].epsilon.to_string(),
            });
        }
    }
    let dims: Vec<u64> = blocks.iter().map(|c| c.target_dim).collect();
    let total = itinerary.iter().map(|i| dims[*i]).sum();
    let mut others = Vec::new();
    for &i in &used {
        for r in &blocks[i].obligations {
            let mut r = r.clone();
            r.defines_dim = false;
            r.name = format!("block {i}: {}", r.name);
            others.push(r);
        }
    }
    others.push(DischargeRecord::structural(
        "orbit segment map into the product of blocks",
        Obligation::NonDecreasingMap {
            map: "x -> (x, T^{N_1} x, T^{N_1 + N_2} x, ...)".into(),
        },
    ));
    let domain = Domain {
        kind: DomainKind::Product,
        label: format!("fiber with d_{horizon}"),
        metric: format!("d_{horizon}"),
        parts: used.iter().map(|i| blocks[*i].domain.clone()).collect(),
    };
    EpsEmbeddingCertificate::new(
        domain,
        eps,
        DischargeRecord::structural(
            "chain decomposition",
            Obligation::ChainItinerary {
                block_lengths: block_lengths.to_vec(),
                itinerary: itinerary.to_vec(),
                horizon,
                dims,
                total,
                rate,
            },
        ),
        others,
    )
}

/// A source of point pairs together with the two metrics being compared.
pub trait FiberProbe: Sync {
    type Point: Serialize + Send;
    /// A pair of points from the same fiber, or `None` if the fiber is empty.
    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(Self::Point, Self::Point)>;
    fn domain_dist(&self, a: &Self::Point, b: &Self::Point) -> Length;
    /// Distance between the evaluator's images of `a` and `b`.
    fn target_dist(&self, a: &Self::Point, b: &Self::Point) -> Length;
}

/// A probe assembled from closures.
pub struct FnProbe<S, D, T> {
    pub sampler: S,
    pub domain: D,
    pub target: T,
}

impl<P, S, D, T> FiberProbe for FnProbe<S, D, T>
where
    P: Serialize + Send,
    S: Fn(&mut ChaCha8Rng) -> Option<(P, P)> + Sync,
    D: Fn(&P, &P) -> Length + Sync,
    T: Fn(&P, &P) -> Length + Sync,
{
    type Point = P;
    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(P, P)> {
        (self.sampler)(rng)
    }
    fn domain_dist(&self, a: &P, b: &P) -> Length {
        (self.domain)(a, b)
    }
    fn target_dist(&self, a: &P, b: &P) -> Length {
        (self.target)(a, b)
    }
}

/// The generator for trial `t` under root seed `seed`: one ChaCha stream per trial.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub const DEFAULT_TRIALS: u64 = 10_000;

pub fn default_eta(epsilon: &Q) -> Q {
    epsilon / qi(100)
}

enum Outcome {
    Empty,
    Far,
    Near(Length),
    Violation(Length, Value),
}

/// Near-collision test: every sampled pair whose images are within `eta` must be closer
/// than `epsilon` in the domain. Trials run in parallel; results are reduced in trial
/// order so the record depends only on `seed`.
pub fn sample_fiber_check<P: FiberProbe>(
    name: impl Into<String>,
    probe: &P,
    epsilon: &Q,
    eta: &Q,
    trials: u64,
    seed: u64,
    context: Option<Value>,
) -> DischargeRecord {
    let outcomes: Vec<Outcome> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let Some((a, b)) = probe.sample_pair(&mut rng) else {
                return Outcome::Empty;
            };
            if !probe.target_dist(&a, &b).le_q(eta) {
                return Outcome::Far;
            }
            let d = probe.domain_dist(&a, &b);
            if d.lt_q(epsilon) {
                Outcome::Near(d)
            } else {
                let w = serde_json::json!({
                    "trial": t,
                    "a": serde_json::to_value(&a).unwrap_or(Value::Null),
                    "b": serde_json::to_value(&b).unwrap_or(Value::Null),
                    "domain_distance": d.to_string(),
                });
                Outcome::Violation(d, w)
            }
        })
        .collect();
    let mut pairs = 0;
    let mut near = 0;
    let mut max_near: Option<Length> = None;
    let mut witness = None;
    for o in outcomes {
        match o {
            Outcome::Empty => {}
            Outcome::Far => pairs += 1,
            Outcome::Near(d) => {
                pairs += 1;
                near += 1;
                max_near = Some(max_near.map_or(d.clone(), |m| m.max(d)));
            }
            Outcome::Violation(d, w) => {
                pairs += 1;
                near += 1;
                max_near = Some(max_near.map_or(d.clone(), |m| m.max(d)));
                witness.get_or_insert(w);
            }
        }
    }
    DischargeRecord {
        name: name.into(),
        status: if witness.is_some() {
            Status::Failed
        } else {
            Status::SampledOnly
        },
        obligation: Obligation::Sampled(SampledCheck {
            seed,
            trials,
            eta: eta.clone(),
            epsilon: epsilon.clone(),
            pairs,
            near_pairs: near,
            max_near_distance: max_near,
            context,
        }),
        defines_dim: false,
        witness,
    }
}

/// A metric space given by a sampler and a metric.
pub struct MetricSpaceHandle<P> {
    pub descriptor: Domain,
    pub metric: Box<dyn Fn(&P, &P) -> Q + Sync>,
    pub sampler: Box<dyn Fn(&mut ChaCha8Rng) -> P + Sync>,
}

impl<P: Clone> MetricSpaceHandle<P> {
    /// Spot-checks symmetry, nonnegativity and `d(x, x) = 0` on sampled points.
    pub fn spot_check(&self, samples: u64, seed: u64) -> bool {
        (0..samples).all(|t| {
            let mut rng = trial_rng(seed, t);
            let a = (self.sampler)(&mut rng);
            let b = (self.sampler)(&mut rng);
            let ab = (self.metric)(&a, &b);
            !ab.is_negative() && ab == (self.metric)(&b, &a) && (self.metric)(&a, &a).is_zero()
        })
    }
}

/// Sampled evidence that `phi` is distance non-decreasing from `domain` into a space
/// with metric `target`.
pub fn sampled_nondecreasing<P, R>(
    domain: &MetricSpaceHandle<P>,
    phi: impl Fn(&P) -> R + Sync,
    target: impl Fn(&R, &R) -> Q + Sync,
    trials: u64,
    seed: u64,
) -> DischargeRecord
where
    P: Serialize + Send,
{
    let violation = (0..trials).into_par_iter().find_map_first(|t| {
        let mut rng = trial_rng(seed, t);
        let a = (domain.sampler)(&mut rng);
        let b = (domain.sampler)(&mut rng);
        let d = (domain.metric)(&a, &b);
        let e = target(&phi(&a), &phi(&b));
        (d > e).then(|| {
            serde_json::json!({
                "trial": t,
                "a": serde_json::to_value(&a).unwrap_or(Value::Null),
                "b": serde_json::to_value(&b).unwrap_or(Value::Null),
                "domain_distance": d.to_string(),
                "image_distance": e.to_string(),
            })
        })
    });
    DischargeRecord {
        name: "sampled distance non-decreasing check".into(),
        status: if violation.is_some() {
            Status::Failed
        } else {
            Status::SampledOnly
        },
        obligation: Obligation::Sampled(SampledCheck {
            seed,
            trials,
            eta: Q::zero(),
            epsilon: Q::zero(),
            pairs: trials,
            near_pairs: 0,
            max_near_distance: None,
            context: Some(serde_json::json!({"kind": "nondecreasing", "map": domain.descriptor.label})),
        }),
        defines_dim: false,
        witness: violation,
    }
}

/// Helper for disjointness records over an SFT.
pub fn disjoint_record(sft: &Sft, pieces: &[CylinderSet]) -> DischargeRecord {
    DischargeRecord::structural(
        "pieces pairwise disjoint",
        Obligation::Disjoint {
            sft: sft.to_json(),
            pieces: pieces.iter().map(|p| p.to_json(sft)).collect(),
        },
    )
}
