use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use meandim_core::certs::{default_eta, trial_rng, EpsEmbeddingCertificate, Status};
use meandim_core::complex::{bucket_dimension, dimension_buckets};
use meandim_core::geometry::{GeometricComplex, GeometricComplexJson, Norm};
use meandim_core::gromov::{bucket_width_map, cube_width_map, random_split, CubeHomeo};
use meandim_core::hurewicz::{
    build_counterexample, counterexample_fiber_check, fiber_dimension_certificate, label_instance,
    mdim_report, nonzero_count_check, report_csv, stacked_report, wedge_cone_embedding,
    wedge_fiber_check, CounterexampleParams, FactorMapInstance,
};
use meandim_core::rational::{parse_q, qi};
use meandim_core::symdyn::{ocap_finite_n, ocap_limit, sbp_cover_refine, CylinderJson, CylinderSet, Sft, SftJson};
use meandim_core::verify::verify_certificate;
use meandim_core::{Error, Q};

use super::{ComplexCmd, ComplexInput, CounterexampleCmd, CxArgs, GromovCmd, OcapArgs, SbpArgs};

pub enum Outcome {
    Ok,
    /// An obligation failed; a witness was written.
    Failed,
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Budget { .. }) => 4,
        _ => 2,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, v: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    emit(out, &text)
}

/// Writes `witness` next to the output (or to `explicit`), falling back to stderr.
fn write_witness(explicit: Option<&Path>, out: Option<&Path>, witness: &Value) -> Result<()> {
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| out.map(|o| o.with_extension("witness.json")));
    let text = serde_json::to_string_pretty(witness)?;
    match path {
        Some(p) => {
            fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
            eprintln!("witness written to {}", p.display());
        }
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn failed_records(certs: &[EpsEmbeddingCertificate]) -> Vec<Value> {
    certs
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            c.obligations
                .iter()
                .filter(|r| r.status == Status::Failed)
                .map(move |r| json!({"certificate": i, "record": r}))
        })
        .collect()
}

fn finish_certs(certs: &[EpsEmbeddingCertificate], out: Option<&Path>, witness: Option<&Path>) -> Result<Outcome> {
    emit_json(out, &certs)?;
    let failed = failed_records(certs);
    if failed.is_empty() {
        Ok(Outcome::Ok)
    } else {
        write_witness(witness, out, &Value::Array(failed))?;
        Ok(Outcome::Failed)
    }
}

fn parse_norm(s: &str) -> Result<Norm> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| anyhow!("unknown norm {s:?}"))
}

fn load_complex(input: &ComplexInput) -> Result<GeometricComplex> {
    match (&input.input, input.standard) {
        (Some(p), _) => Ok(GeometricComplex::from_json(&read_json::<GeometricComplexJson>(p)?)?),
        (None, Some(d)) => Ok(GeometricComplex::standard_simplex(d, parse_norm(&input.norm)?)),
        (None, None) => bail!("give --input FILE or --standard DIM"),
    }
}

fn load_sft(spec: &str) -> Result<Sft> {
    if spec == "golden-mean" {
        return Ok(Sft::golden_mean());
    }
    if let Some(k) = spec.strip_prefix("full-") {
        let k: usize = k.parse().map_err(|_| anyhow!("bad alphabet size in {spec:?}"))?;
        if k == 0 {
            return Err(Error::EmptyLanguage.into());
        }
        return Ok(Sft::full_shift(k));
    }
    Ok(Sft::from_json(&read_json::<SftJson>(Path::new(spec))?)?)
}

fn load_sets(sft: &Sft, path: &Path) -> Result<Vec<CylinderSet>> {
    read_json::<Vec<Vec<CylinderJson>>>(path)?
        .iter()
        .map(|s| Ok(CylinderSet::from_json(sft, s)?))
        .collect()
}

pub fn complex(c: ComplexCmd) -> Result<Outcome> {
    match c {
        ComplexCmd::Subdivide {
            input,
            rounds,
            mesh,
            out,
        } => {
            let g = load_complex(&input)?;
            let (fine, done) = match (rounds, mesh) {
                (Some(r), _) => {
                    let mut g = g;
                    for _ in 0..r {
                        g = g.subdivide()?.0;
                    }
                    (g, r)
                }
                (None, Some(eps)) => g.subdivide_to_mesh(&eps, 30)?,
                (None, None) => bail!("give --rounds or --mesh"),
            };
            eprintln!(
                "{} rounds, {} vertices, star mesh {}",
                done,
                fine.complex().vertices().len(),
                fine.max_star_mesh().value
            );
            emit_json(out.as_deref(), &fine.to_json())?;
        }
        ComplexCmd::Buckets { input, m, out } => {
            let g = load_complex(&input)?;
            let k = g.complex();
            let dim_k = k.dimension().max(0) as u64;
            let b = dimension_buckets(k, m)?;
            let buckets: Vec<Value> = (0..m)
                .map(|i| {
                    let sub = b.bucket_subcomplex(i);
                    json!({
                        "bucket": i,
                        "dimension": sub.dimension(),
                        "formula_dimension": bucket_dimension(dim_k, m as u64, i),
                        "vertices": b.partition.blocks[i].len(),
                    })
                })
                .collect();
            emit_json(out.as_deref(), &json!({"complex_dim": dim_k, "m": m, "buckets": buckets}))?;
        }
    }
    Ok(Outcome::Ok)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum MapSpec {
    Cube {
        n: usize,
        m: usize,
        epsilon: String,
    },
    Complex {
        complex: GeometricComplexJson,
        m: usize,
        epsilon: String,
    },
}

pub fn gromov(c: GromovCmd) -> Result<Outcome> {
    match c {
        GromovCmd::Build {
            cube,
            input,
            m,
            eps,
            out,
        } => {
            let spec = match cube {
                Some(n) => {
                    let w = cube_width_map(n, m, &eps)?;
                    eprintln!(
                        "cube map [0,1]^{n} -> [0,1]^{}: grid {}, star mesh {}, fiber bound {}",
                        m - 1,
                        w.grid.g,
                        w.grid.star_mesh(),
                        n / m
                    );
                    MapSpec::Cube {
                        n,
                        m,
                        epsilon: eps.to_string(),
                    }
                }
                None => {
                    let g = load_complex(&input)?;
                    let bw = bucket_width_map(&g, m, &eps)?;
                    eprintln!(
                        "bucket map: {} subdivision rounds, star mesh {}, fiber bound {}",
                        bw.subdivisions,
                        bw.map.mesh(),
                        bw.fiber_bound()
                    );
                    MapSpec::Complex {
                        complex: g.to_json(),
                        m,
                        epsilon: eps.to_string(),
                    }
                }
            };
            emit_json(out.as_deref(), &spec)?;
            Ok(Outcome::Ok)
        }
        GromovCmd::FiberCheck {
            map,
            points,
            samples,
            trials,
            seed,
            eta,
            out,
            witness,
        } => {
            let spec: MapSpec = read_json(&map)?;
            let certs = match spec {
                MapSpec::Cube { n, m, epsilon } => {
                    let eps = parse_q(&epsilon)?;
                    let w = cube_width_map(n, m, &eps)?;
                    let eta = eta.unwrap_or_else(|| default_eta(&eps));
                    let homeo = CubeHomeo { m };
                    let mut targets = points;
                    for s in 0..samples {
                        let t = random_split(&qi(1), m, &mut trial_rng(seed, s));
                        targets.push(homeo.forward(&t)?);
                    }
                    targets
                        .iter()
                        .enumerate()
                        .map(|(i, p)| {
                            let mut c = w.fiber_certificate(p)?;
                            if trials > 0 {
                                c.push(w.fiber_check(p, &eta, trials, seed.wrapping_add(i as u64))?);
                            }
                            Ok(c)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
                MapSpec::Complex { complex, m, epsilon } => {
                    let eps = parse_q(&epsilon)?;
                    let bw = bucket_width_map(&GeometricComplex::from_json(&complex)?, m, &eps)?;
                    let eta = eta.unwrap_or_else(|| default_eta(&eps));
                    let mut targets = points;
                    for s in 0..samples {
                        targets.push(random_split(&qi(1), m, &mut trial_rng(seed, s)));
                    }
                    targets
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let mut c = bw.map.fiber_certificate(t)?;
                            if trials > 0 {
                                c.push(bw.map.fiber_check(t, &eta, trials, seed.wrapping_add(i as u64)));
                            }
                            Ok(c)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let max_dim = certs.iter().map(|c| c.target_dim).max();
            eprintln!("{} certificates, largest dimension {:?}", certs.len(), max_dim);
            finish_certs(&certs, out.as_deref(), witness.as_deref())
        }
    }
}

pub fn ocap(a: OcapArgs) -> Result<Outcome> {
    let sft = load_sft(&a.sft)?;
    let set = CylinderSet::from_json(&sft, &read_json::<Vec<CylinderJson>>(&a.set)?)?;
    let value = match a.n {
        Some(n) => ocap_finite_n(&sft, &set, n)?,
        None => ocap_limit(&sft, &set)?.value,
    };
    println!("{value}");
    Ok(Outcome::Ok)
}

pub fn sbp(a: SbpArgs) -> Result<Outcome> {
    let sft = load_sft(&a.sft)?;
    let cover = load_sets(&sft, &a.cover)?;
    let pieces = match &a.pieces {
        Some(p) => load_sets(&sft, p)?,
        None => sbp_cover_refine(&sft, &cover, &a.delta)?.pieces,
    };
    let inst = label_instance(&sft, cover, pieces, a.horizon, &a.eps)?;
    let w = wedge_cone_embedding(&inst, a.horizon, a.n)?;
    let mut cert = w.certificate.clone();
    if a.trials > 0 {
        cert.push(wedge_fiber_check(&inst, a.horizon, a.n, a.trials, a.seed)?);
    }
    eprintln!(
        "{}",
        json!({
            "target_dim": cert.target_dim,
            "cone_dim": w.cone_dim,
            "global_cone_dim": w.global_cone_dim,
            "g_count": w.g_count,
            "ocap_count_bound": w.ocap_count_bound.to_string(),
            "complement_ocap": w.complement_ocap.to_string(),
            "degenerate": w.degenerate,
        })
    );
    finish_certs(std::slice::from_ref(&cert), a.out.as_deref(), a.witness.as_deref())
}

fn cx_instance(a: &CxArgs) -> Result<FactorMapInstance> {
    let eps = a.eps.first().ok_or_else(|| anyhow!("give --eps"))?;
    let horizon = *a.horizon.iter().max().ok_or_else(|| anyhow!("give --N"))?;
    let mut params = CounterexampleParams::derive(&a.delta, eps, horizon, a.seed)?;
    if let Some(k) = a.level {
        params = params.with_level(k);
    }
    Ok(build_counterexample(&params)?)
}

pub fn counterexample(c: CounterexampleCmd) -> Result<Outcome> {
    match c {
        CounterexampleCmd::Build(a) => {
            let inst = cx_instance(&a)?;
            emit_json(
                a.out.as_deref(),
                &json!({"params": inst.params, "inequalities": inst.report}),
            )?;
            Ok(Outcome::Ok)
        }
        CounterexampleCmd::CheckCounts(a) => {
            let inst = cx_instance(&a)?;
            let reports = a
                .horizon
                .iter()
                .map(|n| Ok(nonzero_count_check(&inst, a.samples, *n, a.seed)?))
                .collect::<Result<Vec<_>>>()?;
            emit_json(a.out.as_deref(), &reports)?;
            let bad: Vec<Value> = reports
                .iter()
                .flat_map(|r| r.violations.iter().cloned())
                .collect();
            if bad.is_empty() {
                Ok(Outcome::Ok)
            } else {
                write_witness(a.witness.as_deref(), a.out.as_deref(), &Value::Array(bad))?;
                Ok(Outcome::Failed)
            }
        }
        CounterexampleCmd::FiberCert { args: a, trials } => {
            let inst = cx_instance(&a)?;
            let mut certs = Vec::new();
            for &n in &a.horizon {
                for s in 0..a.samples {
                    let pt = inst.sample_point(n, &mut trial_rng(a.seed, s));
                    let y = inst.eval_pi(&pt)?;
                    let mut c = fiber_dimension_certificate(&inst, &y, n)?;
                    if trials > 0 {
                        c.push(counterexample_fiber_check(&inst, &y, n, trials, a.seed.wrapping_add(s))?);
                    }
                    certs.push(c);
                }
            }
            let p = &inst.params;
            for &n in &a.horizon {
                let bound = Q::new(
                    ((n + 2 * p.m_tail as u64 + 2 * p.l_prime) as i64).into(),
                    (p.m as i64).into(),
                );
                eprintln!("N = {n}: bound (N + 2M + 2L')/m = {bound}");
            }
            finish_certs(&certs, a.out.as_deref(), a.witness.as_deref())
        }
        CounterexampleCmd::Report { args: a, stacked } => {
            let csv = match stacked {
                Some(j) => {
                    let rows = stacked_report(&a.delta, j, &a.horizon, a.samples, a.seed)?;
                    let mut s = String::from("scale,N,fiber_dim_over_N,source,image_dim_over_N\n");
                    for r in rows {
                        s.push_str(&format!(
                            "{},{},{},{},{}\n",
                            r.scale, r.horizon, r.fiber_dim_over_n, r.source, r.image_dim_over_n
                        ));
                    }
                    s
                }
                None => report_csv(&mdim_report(
                    &a.delta,
                    a.level,
                    &a.eps,
                    &a.horizon,
                    a.samples,
                    a.seed,
                )?),
            };
            emit(a.out.as_deref(), &csv)?;
            Ok(Outcome::Ok)
        }
    }
}

pub fn verify(file: &Path) -> Result<Outcome> {
    let v: Value = read_json(file)?;
    let certs: Vec<EpsEmbeddingCertificate> = match v {
        Value::Array(_) => serde_json::from_value(v)?,
        _ => vec![serde_json::from_value(v)?],
    };
    let mut findings = Vec::new();
    let mut records = 0;
    for (i, c) in certs.iter().enumerate() {
        records += c.obligations.len();
        for f in verify_certificate(c) {
            findings.push(json!({
                "certificate": i,
                "record": f.record,
                "name": f.name,
                "message": f.message,
            }));
        }
    }
    if findings.is_empty() {
        println!("ok: {} certificates, {records} obligations", certs.len());
        Ok(Outcome::Ok)
    } else {
        for f in &findings {
            eprintln!("{f}");
        }
        println!("failed: {} findings", findings.len());
        Ok(Outcome::Failed)
    }
}
