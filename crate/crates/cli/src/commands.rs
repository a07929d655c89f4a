use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use fpgm_core::analysis::{check_requirements, compute_norm_stats, kde_estimate};
use fpgm_core::criteria::{
    select_gm, select_mix, select_norm, CriteriaError, Criterion, DistanceKind, LayerSelection, NormKind,
};
use fpgm_core::flops::{flops_pruned, GraphSpec, PruneRates};
use fpgm_core::pruner::{extract_compact, identity_trainer, run_schedule, MaskState, PruneConfig};
use fpgm_core::toytrain::{run_toy, ToyRunConfig, ToyTrainer};
use fpgm_core::{load_bundle, save_bundle};

use crate::{CliError, TrainerArg};

type CmdResult = Result<String, CliError>;

fn to_json(value: &impl Serialize) -> CmdResult {
    serde_json::to_string_pretty(value).map_err(|e| CliError::new("Serialization", e.to_string()))
}

pub fn analyze(
    input: &Path,
    norm: NormKind,
    deviation_threshold: f64,
    minimum_threshold: f64,
    kde_csv: Option<&Path>,
    grid_points: usize,
) -> CmdResult {
    let bundle = load_bundle(input)?;
    let mut layers = Vec::new();
    let mut csv = String::from("layer,x,density\n");
    for (spec, tensor) in bundle.iter() {
        let stats = compute_norm_stats(&spec.name, tensor, norm);
        let requirements = check_requirements(&stats, deviation_threshold, minimum_threshold);
        if kde_csv.is_some() {
            let curve = kde_estimate(&stats.norms, grid_points, None)?;
            for (x, d) in curve.grid.iter().zip(&curve.density) {
                let _ = writeln!(csv, "{},{x},{d}", spec.name);
            }
        }
        eprintln!(
            "{:<24} mean {:.4} std {:.4} min/max {:.4} small_deviation {} large_minimum {}",
            spec.name,
            stats.mean,
            stats.std,
            requirements.minimum_ratio,
            requirements.small_deviation,
            requirements.large_minimum
        );
        layers.push(json!({ "stats": stats, "requirements": requirements }));
    }
    if let Some(path) = kde_csv {
        fs::write(path, csv)?;
    }
    to_json(&json!({ "norm": norm, "layers": layers }))
}

pub fn select(
    input: &Path,
    layer: &str,
    criterion: Criterion,
    distance: DistanceKind,
    count: usize,
    mix_norm_fraction: f64,
) -> CmdResult {
    let bundle = load_bundle(input)?;
    let m = bundle
        .tensor(layer)
        .ok_or_else(|| CliError::new("UnknownLayer", format!("bundle has no layer `{layer}`")))?;
    if count > m.rows() {
        return Err(CriteriaError::CountOutOfRange { count, rows: m.rows() }.into());
    }
    let result = match criterion {
        Criterion::NormL1 => select_norm(m, count, NormKind::L1)?,
        Criterion::NormL2 => select_norm(m, count, NormKind::L2)?,
        Criterion::Gm => select_gm(m, count, distance)?,
        Criterion::Mix => {
            let norm_count = (((count as f64) * mix_norm_fraction) + 1e-9).floor() as usize;
            let norm_count = norm_count.min(count);
            select_mix(m, norm_count, count - norm_count, NormKind::L2, distance)?
        }
    };
    to_json(&LayerSelection {
        layer: layer.to_string(),
        result,
    })
}

pub fn prune(
    input: &Path,
    out: &Path,
    cfg: &PruneConfig,
    trainer: TrainerArg,
    seed: u64,
    lr: f64,
    graph: Option<&Path>,
) -> CmdResult {
    cfg.validate()?;
    let bundle = load_bundle(input)?;
    let graph = graph.map(GraphSpec::load).transpose()?;
    let outcome = match trainer {
        TrainerArg::None => run_schedule(bundle, cfg, &mut identity_trainer)?,
        TrainerArg::Toy => {
            let run = ToyRunConfig {
                seed,
                epochs: cfg.epoch_max,
                lr,
                ..ToyRunConfig::default()
            };
            run_schedule(bundle, cfg, &mut ToyTrainer::new(&run))?
        }
    };
    save_bundle(&outcome.bundle, out)?;
    let mut payload = json!({ "masks": outcome.masks, "history": outcome.history });
    if let Some(g) = graph {
        let report = flops_pruned(&g, &PruneRates::uniform(&g, cfg.rate))?;
        eprintln!("{}", report.to_table());
        payload["flops"] = serde_json::to_value(report).expect("plain data");
    }
    to_json(&payload)
}

/// Accepts a bare mask state or any object with a `masks` field.
fn read_masks(path: &Path) -> Result<MaskState, CliError> {
    let text = fs::read_to_string(path)?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::new("MaskParse", e.to_string()))?;
    let inner = value.get("masks").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| CliError::new("MaskParse", e.to_string()))
}

pub fn compact(input: &Path, masks: &Path, graph: &Path, out: &Path) -> CmdResult {
    let bundle = load_bundle(input)?;
    let masks = read_masks(masks)?;
    let graph = GraphSpec::load(graph)?;
    let compact = extract_compact(&bundle, &masks, &graph)?;
    save_bundle(&compact, out)?;
    to_json(&json!({ "layers": compact.layers() }))
}

pub fn flops(graph: &Path, rate: f64) -> CmdResult {
    let graph = GraphSpec::load(graph)?;
    let report = flops_pruned(&graph, &PruneRates::uniform(&graph, rate))?;
    eprintln!("{}", report.to_table());
    to_json(&report)
}

pub fn train_toy(
    run: &ToyRunConfig,
    prune: &PruneConfig,
    out_report: Option<&Path>,
    out_model: Option<&Path>,
) -> CmdResult {
    prune.validate()?;
    let result = run_toy(run, prune)?;
    if let Some(path) = out_model {
        save_bundle(&result.outcome.bundle, path)?;
    }
    let report = json!({
        "config": run,
        "prune": prune,
        "epochs": result.report.epochs,
        "history": result.outcome.history,
        "masks": result.outcome.masks,
    });
    let text = to_json(&report)?;
    if let Some(last) = result.report.epochs.last() {
        eprintln!(
            "epoch {}: loss {:.4} train {:.3} eval {:.3}",
            last.epoch, last.loss, last.train_accuracy, last.eval_accuracy
        );
    }
    match out_report {
        Some(path) => {
            fs::write(path, &text)?;
            to_json(&json!({ "report": path, "final_eval_accuracy": result.report.final_eval_accuracy() }))
        }
        None => Ok(text),
    }
}
