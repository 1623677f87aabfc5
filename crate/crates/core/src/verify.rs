//! Re-checking serialized certificates: structural obligations are recomputed from
//! their data, sampled ones are re-run from their recorded context and must reproduce
//! the stored record exactly.

use serde::Deserialize;
use serde_json::Value;

use crate::certs::{DischargeRecord, EpsEmbeddingCertificate, Finding, Obligation, SampledCheck, Status};
use crate::complex::VertexPartition;
use crate::error::{Error, Result};
use crate::geometry::GeometricComplex;
use crate::gromov::{cube_width_map, partition_map};
use crate::hurewicz::{build_counterexample, counterexample_fiber_check, label_instance, wedge_fiber_check, CounterexampleParams, FiberTarget};
use crate::rational::{parse_q, QVec};
use crate::symdyn::{CylinderJson, CylinderSet, Sft, SftJson};

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Context {
    CubeFiber {
        n: usize,
        m: usize,
        epsilon: String,
        point: QVec,
    },
    PartitionFiber {
        complex: crate::geometry::GeometricComplexJson,
        blocks: Vec<std::collections::BTreeSet<crate::complex::VertexId>>,
        epsilon: String,
        point: QVec,
    },
    CounterexampleFiber {
        params: CounterexampleParams,
        target: FiberTarget,
        horizon: u64,
    },
    WedgeFiber {
        sft: SftJson,
        cover: Vec<Vec<CylinderJson>>,
        pieces: Vec<Vec<CylinderJson>>,
        horizon: u64,
        n: u64,
        epsilon: String,
    },
}

/// Regenerates a sampled record from its context.
pub fn rerun_sampled(check: &SampledCheck) -> Result<DischargeRecord> {
    let ctx = check
        .context
        .clone()
        .ok_or_else(|| Error::Invalid("sampled record has no context".into()))?;
    let ctx: Context = serde_json::from_value(ctx)
        .map_err(|e| Error::Invalid(format!("cannot re-run sampled record: {e}")))?;
    match ctx {
        Context::CubeFiber {
            n,
            m,
            epsilon,
            point,
        } => cube_width_map(n, m, &parse_q(&epsilon)?)?.fiber_check(&point.0, &check.eta, check.trials, check.seed),
        Context::PartitionFiber {
            complex,
            blocks,
            epsilon,
            point,
        } => {
            let g = GeometricComplex::from_json(&complex)?;
            let f = partition_map(&g, &VertexPartition { blocks }, &parse_q(&epsilon)?)?;
            Ok(f.fiber_check(&point.0, &check.eta, check.trials, check.seed))
        }
        Context::CounterexampleFiber {
            params,
            target,
            horizon,
        } => {
            let inst = build_counterexample(&params)?;
            counterexample_fiber_check(&inst, &target, horizon, check.trials, check.seed)
        }
        Context::WedgeFiber {
            sft,
            cover,
            pieces,
            horizon,
            n,
            epsilon,
        } => {
            let sft = Sft::from_json(&sft)?;
            let load = |sets: &[Vec<CylinderJson>]| {
                sets.iter()
                    .map(|s| CylinderSet::from_json(&sft, s))
                    .collect::<Result<Vec<_>>>()
            };
            let inst = label_instance(&sft, load(&cover)?, load(&pieces)?, horizon, &parse_q(&epsilon)?)?;
            wedge_fiber_check(&inst, horizon, n, check.trials, check.seed)
        }
    }
}

fn canonical(r: &DischargeRecord) -> Value {
    serde_json::json!({
        "status": r.status,
        "obligation": r.obligation,
        "witness": r.witness,
    })
}

/// Every problem with a certificate; empty means it verifies.
pub fn verify_certificate(c: &EpsEmbeddingCertificate) -> Vec<Finding> {
    let mut out = c.recheck_structural();
    for (i, r) in c.obligations.iter().enumerate() {
        let Obligation::Sampled(check) = &r.obligation else {
            continue;
        };
        let finding = |message: String| Finding {
            record: Some(i),
            name: r.name.clone(),
            message,
        };
        if r.status == Status::Failed {
            out.push(finding(format!(
                "sampled check failed: {}",
                r.witness.as_ref().map(Value::to_string).unwrap_or_default()
            )));
            continue;
        }
        match rerun_sampled(check) {
            Ok(fresh) => {
                let (old, new) = (canonical(r), canonical(&fresh));
                if old != new {
                    out.push(finding(format!("re-run differs: recorded {old}, got {new}")));
                }
            }
            Err(e) => out.push(finding(e.to_string())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certs::default_eta;
    use crate::geometry::Norm;
    use crate::gromov::bucket_width_map;
    use crate::hurewicz::fiber_dimension_certificate;
    use crate::rational::{q, Length};
    use crate::certs::trial_rng;

    #[test]
    fn cube_certificates_round_trip() {
        let w = cube_width_map(2, 2, &q(1, 2)).unwrap();
        let p = vec![q(1, 3)];
        let mut c = w.fiber_certificate(&p).unwrap();
        c.push(w.fiber_check(&p, &default_eta(&q(1, 2)), 50, 4).unwrap());
        let text = serde_json::to_string(&c).unwrap();
        let back: EpsEmbeddingCertificate = serde_json::from_str(&text).unwrap();
        assert!(verify_certificate(&back).is_empty());

        let mut bad = back.clone();
        for r in &mut bad.obligations {
            if let Obligation::StarMesh { mesh, .. } = &mut r.obligation {
                *mesh = Length::Exact(q(1, 100));
            }
        }
        let f = verify_certificate(&bad);
        assert_eq!(f.len(), 1);
        assert!(f[0].name.contains("star mesh"));

        let mut bad = back;
        for r in &mut bad.obligations {
            if let Obligation::Sampled(s) = &mut r.obligation {
                s.pairs += 1;
            }
        }
        assert_eq!(verify_certificate(&bad).len(), 1);
    }

    #[test]
    fn partition_and_counterexample_records_rerun() {
        let tri = GeometricComplex::standard_simplex(2, Norm::LInf);
        let bw = bucket_width_map(&tri, 2, &q(1, 2)).unwrap();
        let t = vec![q(1, 2), q(1, 2)];
        let mut c = bw.map.fiber_certificate(&t).unwrap();
        c.push(bw.map.fiber_check(&t, &default_eta(&q(1, 2)), 30, 1));
        assert!(verify_certificate(&c).is_empty());

        let p = CounterexampleParams::derive(&q(1, 2), &q(1, 2), 16, 0).unwrap().with_level(3);
        let inst = build_counterexample(&p).unwrap();
        let y = inst.eval_pi(&inst.sample_point(16, &mut trial_rng(0, 0))).unwrap();
        let mut c = fiber_dimension_certificate(&inst, &y, 16).unwrap();
        c.push(counterexample_fiber_check(&inst, &y, 16, 20, 3).unwrap());
        assert!(verify_certificate(&c).is_empty());
    }
}
