use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use artready_core::asset::{parse_semantics, parse_urdf, SemanticMap};
use artready_core::mesh::MeshStore;
use artready_core::proposer::{
    HeuristicProposer, HttpTransport, Proposer, RateCap, RemoteProposer,
};
use artready_core::protocol::{read_rate_table, srcc_by_method, Classification, ReadinessReport};
use artready_core::refine::{
    aggregate_csv, refine_asset, run_batch, write_outputs, AssetInput, PipelineOutput,
};
use serde_json::{json, Value};

use crate::config::{load_manifest, ProposerKind, RunConfig};
use crate::{Cli, Command, Format};

pub struct Outcome {
    pub stdout: String,
    pub code: u8,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { stdout, code: 0 }
    }
}

type CmdResult = Result<Outcome, String>;

pub fn run(cli: &Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(k) = cli.proposer {
        cfg.proposer.kind = k;
    }
    if let Some(e) = &cli.endpoint {
        cfg.proposer.endpoint = Some(e.clone());
    }
    if let Some(s) = cli.seed {
        cfg.refine.seed = s;
    }
    match &cli.command {
        Command::Analyze { urdf, semantics } => analyze(urdf, semantics.as_deref(), cli.format),
        Command::Refine { manifest } => refine(manifest, &cfg, cli),
        Command::Evaluate { urdf, semantics } => evaluate(urdf, semantics.as_deref(), &cfg, cli),
        Command::Srcc { tables } => srcc(tables, cli.format),
        Command::Report { dir } => report(dir, cli),
    }
}

fn json_out(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn build_proposer(cfg: &RunConfig) -> Result<Box<dyn Proposer>, String> {
    match cfg.proposer.kind {
        ProposerKind::Heuristic => Ok(Box::new(HeuristicProposer::new(cfg.heuristic.clone()))),
        ProposerKind::Remote => {
            let endpoint = cfg
                .proposer
                .endpoint
                .clone()
                .ok_or("the remote proposer needs --endpoint or proposer.endpoint")?;
            let transport =
                HttpTransport::from_env(endpoint, Duration::from_secs(cfg.proposer.timeout_s))
                    .map_err(|e| e.to_string())?;
            let mut p = RemoteProposer::new(Arc::new(transport))
                .with_rate_cap(Arc::new(RateCap::new(cfg.proposer.max_in_flight)));
            p.max_retries = cfg.proposer.max_retries;
            if let Some(m) = &cfg.proposer.model {
                p.model_name = m.clone();
            }
            Ok(Box::new(p))
        }
    }
}

fn analyze(urdf: &Path, semantics: Option<&Path>, format: Format) -> CmdResult {
    let model = parse_urdf(&read(urdf)?).map_err(|e| format!("{}: {e}", urdf.display()))?;
    let sem = match semantics {
        Some(p) => parse_semantics(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => SemanticMap::default(),
    };
    let mut store = MeshStore::new(urdf.parent().unwrap_or(Path::new(".")));
    store.preload(&model).map_err(|e| e.to_string())?;
    let analyses = store.analyze_links(&model).map_err(|e| e.to_string())?;
    match format {
        Format::Json => {
            let links: Vec<Value> = model
                .links
                .iter()
                .map(|l| {
                    json!({
                        "name": l.name,
                        "semantic": sem.label(&l.name),
                        "mass": l.mass,
                        "analysis": analyses.get(&l.name),
                    })
                })
                .collect();
            let joints: Vec<Value> = model
                .joints
                .iter()
                .map(|j| {
                    json!({
                        "name": j.name,
                        "type": j.kind.as_str(),
                        "parent": j.parent,
                        "child": j.child,
                        "limits": j.limits.map(|l| [l.lower, l.upper]),
                    })
                })
                .collect();
            Ok(Outcome::ok(json_out(&json!({
                "asset": model.name,
                "root": model.root,
                "links": links,
                "joints": joints,
                "unlabeled_links": sem.orphans(&model),
            }))))
        }
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "asset {} (root {}, {} links, {} joints)",
                model.name,
                model.root,
                model.links.len(),
                model.joints.len()
            );
            let _ = writeln!(
                s,
                "{:<24} {:>12} {:>12} {:>26} {:>10}  volume_source",
                "link", "volume_m3", "area_m2", "bbox_m", "watertight"
            );
            for l in &model.links {
                match analyses.get(&l.name) {
                    Some(a) => {
                        let bbox =
                            format!("{:.4} x {:.4} x {:.4}", a.bbox[0], a.bbox[1], a.bbox[2]);
                        let _ = writeln!(
                            s,
                            "{:<24} {:>12.6e} {:>12.6e} {:>26} {:>10}  {}",
                            l.name, a.volume, a.surface_area, bbox, a.watertight, a.volume_source
                        );
                    }
                    None => {
                        let _ = writeln!(s, "{:<24} {:>12}", l.name, "no mesh");
                    }
                }
            }
            Ok(Outcome::ok(s))
        }
    }
}

fn summary_line(r: &ReadinessReport) -> String {
    let phi = r
        .penetration
        .map(|p| format!("{p:.6}"))
        .unwrap_or_else(|| "-".into());
    format!(
        "{:<24} {:<22} {:>10} {:>8}",
        r.asset_id, r.classification, phi, r.query_count
    )
}

fn refine(manifest: &Path, cfg: &RunConfig, cli: &Cli) -> CmdResult {
    let inputs = load_manifest(manifest)?;
    let proposer = build_proposer(cfg)?;
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("artready-out"));
    let results = run_batch(&inputs, proposer.as_ref(), &cfg.pipeline(), cfg.workers)
        .map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (id, res) in results {
        match res {
            Ok(out) => {
                write_outputs(&out_dir, &out).map_err(|e| e.to_string())?;
                reports.push(out.report);
            }
            Err(e) => errors.push((id, e.to_string())),
        }
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let agg = out_dir.join("aggregate.csv");
    std::fs::write(&agg, aggregate_csv(&reports)).map_err(|e| format!("{}: {e}", agg.display()))?;
    for (id, e) in &errors {
        eprintln!("error: {id}: {e}");
    }
    let all_pass = reports
        .iter()
        .all(|r| r.classification == Classification::Pass);
    let code = if !errors.is_empty() {
        2
    } else if all_pass {
        0
    } else {
        1
    };
    let stdout = match cli.format {
        Format::Json => json_out(&json!({
            "out": out_dir,
            "reports": reports.iter().map(|r| json!({
                "asset_id": r.asset_id,
                "classification": r.classification,
                "penetration": r.penetration,
                "query_count": r.query_count,
            })).collect::<Vec<_>>(),
            "errors": errors.iter().map(|(id, e)| json!({"asset_id": id, "error": e})).collect::<Vec<_>>(),
        })),
        Format::Text => {
            let mut s = format!(
                "{:<24} {:<22} {:>10} {:>8}\n",
                "asset", "classification", "phi_m", "queries"
            );
            for r in &reports {
                s += &summary_line(r);
                s.push('\n');
            }
            let pass = reports
                .iter()
                .filter(|r| r.classification == Classification::Pass)
                .count();
            let _ = writeln!(
                s,
                "{} assets, {} pass, {} errors; outputs in {}",
                reports.len() + errors.len(),
                pass,
                errors.len(),
                out_dir.display()
            );
            s
        }
    };
    Ok(Outcome { stdout, code })
}

fn evaluate(urdf: &Path, semantics: Option<&Path>, cfg: &RunConfig, cli: &Cli) -> CmdResult {
    let mut input = AssetInput::new(urdf);
    input.semantics = semantics.map(Path::to_path_buf);
    let mut pipeline = cfg.pipeline();
    pipeline.evaluate_only = true;
    pipeline.render = false;
    let proposer = HeuristicProposer::new(cfg.heuristic.clone());
    let out: PipelineOutput =
        refine_asset(&input, &proposer, &pipeline).map_err(|e| e.to_string())?;
    let r = out.report;
    if let Some(dir) = &cli.out {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let p = dir.join(format!("{}.report.json", r.asset_id));
        std::fs::write(&p, r.to_json() + "\n").map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let code = if r.classification == Classification::Pass {
        0
    } else {
        1
    };
    let stdout = match cli.format {
        Format::Json => r.to_json() + "\n",
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "asset           {}", r.asset_id);
            let _ = writeln!(s, "classification  {}", r.classification);
            if let Some(p) = r.penetration {
                let _ = writeln!(s, "penetration     {p:.6} m");
            }
            if let Some(st) = &r.stability {
                let _ = writeln!(
                    s,
                    "D_pos           {:.6} m ({})",
                    st.d_pos,
                    if st.pos_pass { "pass" } else { "fail" }
                );
                let _ = writeln!(
                    s,
                    "D_ori           {:.6} rad ({})",
                    st.d_ori,
                    if st.ori_pass { "pass" } else { "fail" }
                );
                for o in &st.oscillating_joints {
                    let _ = writeln!(
                        s,
                        "oscillating     {} amplitude {:.4}, {} reversals",
                        o.joint, o.amplitude, o.reversals
                    );
                }
            }
            if let Some(i) = &r.instability {
                let _ = writeln!(s, "instability     {i}");
            }
            for n in &r.notes {
                let _ = writeln!(s, "note            {n}");
            }
            s
        }
    };
    Ok(Outcome { stdout, code })
}

fn srcc(tables: &[PathBuf], format: Format) -> CmdResult {
    let mut all = Vec::new();
    for path in tables {
        let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let rows = read_rate_table(f).map_err(|e| format!("{}: {e}", path.display()))?;
        let summary = srcc_by_method(&rows).map_err(|e| format!("{}: {e}", path.display()))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        all.push((name, summary));
    }
    Ok(Outcome::ok(match format {
        Format::Json => json_out(&json!(all
            .iter()
            .map(|(t, s)| json!({
                "table": t,
                "methods": s.iter().map(|m| json!({
                    "method": m.method,
                    "tasks": m.tasks,
                    "mean_sim_rate": m.mean_sim_rate,
                    "srcc": m.srcc.value(),
                })).collect::<Vec<_>>(),
            }))
            .collect::<Vec<_>>())),
        Format::Text => {
            let mut s = format!(
                "{:<12} {:<12} {:>6} {:>14} {:>8}\n",
                "table", "method", "tasks", "mean_sim_rate", "srcc"
            );
            for (t, ms) in &all {
                for m in ms {
                    let _ = writeln!(
                        s,
                        "{:<12} {:<12} {:>6} {:>14.2} {:>8}",
                        t, m.method, m.tasks, m.mean_sim_rate, m.srcc
                    );
                }
            }
            s
        }
    }))
}

fn collect_reports(dir: &Path) -> Result<Vec<ReadinessReport>, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| e.to_string())?.path();
        if p.is_dir() {
            let inner = p.join("report.json");
            if inner.is_file() {
                paths.push(inner);
            }
        } else if p.extension().is_some_and(|x| x == "json") {
            paths.push(p);
        }
    }
    paths.sort();
    let mut reports = paths
        .iter()
        .map(|p| ReadinessReport::from_json(&read(p)?).map_err(|e| format!("{}: {e}", p.display())))
        .collect::<Result<Vec<_>, _>>()?;
    reports.sort_by(|a, b| a.asset_id.cmp(&b.asset_id));
    Ok(reports)
}

fn report(dir: &Path, cli: &Cli) -> CmdResult {
    let reports = collect_reports(dir)?;
    if reports.is_empty() {
        return Err(format!("{}: no reports found", dir.display()));
    }
    let csv = aggregate_csv(&reports);
    if let Some(p) = &cli.out {
        std::fs::write(p, &csv).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    let n = reports.len() as f64;
    let mut classes: BTreeMap<&str, usize> = Classification::ALL
        .iter()
        .map(|c| (c.as_str(), 0))
        .collect();
    for r in &reports {
        *classes.entry(r.classification.as_str()).or_default() += 1;
    }
    let queries: Vec<f64> = reports.iter().map(|r| r.query_count as f64).collect();
    let mean = queries.iter().sum::<f64>() / n;
    let std = if queries.len() > 1 {
        (queries.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let stdout = match cli.format {
        Format::Json => json_out(&json!({
            "assets": reports.len(),
            "classification": classes.iter().map(|(k, &c)| (k.to_string(), json!({
                "count": c,
                "percent": 100.0 * c as f64 / n,
            }))).collect::<serde_json::Map<_, _>>(),
            "queries": {"mean": mean, "std": std},
        })),
        Format::Text => {
            let mut s = if cli.out.is_none() {
                csv
            } else {
                String::new()
            };
            let _ = writeln!(s, "\n{} assets", reports.len());
            for c in Classification::ALL {
                let k = classes[c.as_str()];
                let _ = writeln!(
                    s,
                    "  {:<22} {:>5} ({:.1}%)",
                    c.as_str(),
                    k,
                    100.0 * k as f64 / n
                );
            }
            let _ = writeln!(s, "queries per asset: {mean:.2} ± {std:.2}");
            s
        }
    };
    Ok(Outcome::ok(stdout))
}
