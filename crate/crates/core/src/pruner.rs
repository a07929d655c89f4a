//! The soft filter pruning schedule.
//!
//! Each epoch the trainer updates the weights; every `interval` epochs the
//! configured criterion picks `floor(N * P)` filters per prunable layer and
//! their rows are set to zero. Zeroized filters stay trainable and selection
//! is redone from the current weights at every step, so a filter pruned
//! once can come back. After the last epoch the zero rows can be physically
//! removed with [`extract_compact`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::criteria::{
    select_gm_with, select_mix_with, select_norm, CriteriaError, Criterion, DistanceKind, NormKind, ZeroRowPolicy,
};
use crate::filters::FilterMatrix;
use crate::flops::{pruned_count, GraphSpec};
use crate::model_io::{BundleError, LayerKind, LayerShape, ModelBundle};

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("selection in layer `{layer}` failed: {source}")]
    Selection {
        layer: String,
        #[source]
        source: CriteriaError,
    },
    #[error("TrainerFailure at epoch {epoch}: {message}")]
    TrainerFailure { epoch: usize, message: String },
    #[error("NonSequentialGraph: {0}")]
    NonSequentialGraph(String),
    #[error("MaskShapeMismatch: {0}")]
    MaskShapeMismatch(String),
    #[error(transparent)]
    Bundle(#[from] BundleError),
}

impl PruneError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Selection { source, .. } => source.name(),
            Self::TrainerFailure { .. } => "TrainerFailure",
            Self::NonSequentialGraph(_) => "NonSequentialGraph",
            Self::MaskShapeMismatch(_) => "MaskShapeMismatch",
            Self::Bundle(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Uniform rate `P` in `[0, 1)`.
    pub rate: f64,
    /// Epochs between pruning steps.
    pub interval: usize,
    pub criterion: Criterion,
    pub distance: DistanceKind,
    /// Share of the per-layer budget taken by the norm stage under `Mix`.
    pub mix_norm_fraction: f64,
    /// Norm used by the norm stage of `Mix`.
    pub mix_norm: NormKind,
    pub epoch_max: usize,
    /// Dense layers are skipped unless set; pruning a classifier's output
    /// rows would remove classes.
    pub prune_dense: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            rate: 0.4,
            interval: 1,
            criterion: Criterion::Gm,
            distance: DistanceKind::L2,
            mix_norm_fraction: 0.75,
            mix_norm: NormKind::L2,
            epoch_max: 1,
            prune_dense: false,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        if !(0.0..1.0).contains(&self.rate) {
            return Err(PruneError::InvalidConfig(format!(
                "rate {} is outside [0, 1)",
                self.rate
            )));
        }
        if self.interval == 0 {
            return Err(PruneError::InvalidConfig("interval must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_norm_fraction) {
            return Err(PruneError::InvalidConfig(format!(
                "mix_norm_fraction {} is outside [0, 1]",
                self.mix_norm_fraction
            )));
        }
        Ok(())
    }

    pub fn is_prunable(&self, kind: LayerKind) -> bool {
        kind == LayerKind::Conv2d || self.prune_dense
    }

    /// `(norm_count, gm_count)` of the mix split for a layer of `rows` filters.
    pub fn mix_split(&self, rows: usize) -> (usize, usize) {
        let total = pruned_count(rows, self.rate);
        let norm = ((total as f64 * self.mix_norm_fraction) + 1e-9).floor() as usize;
        let norm = norm.min(total);
        (norm, total - norm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    pub layer: String,
    /// Zeroized filter rows, ascending.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskState {
    pub layers: Vec<LayerMask>,
    /// Epoch of the last pruning step, if any.
    pub epoch: Option<usize>,
}

impl MaskState {
    pub fn get(&self, layer: &str) -> Option<&[usize]> {
        self.layers
            .iter()
            .find(|m| m.layer == layer)
            .map(|m| m.indices.as_slice())
    }

    /// Total size of the per-layer symmetric differences.
    pub fn churn(&self, other: &MaskState) -> usize {
        let mut names: BTreeSet<&str> = self.layers.iter().map(|m| m.layer.as_str()).collect();
        names.extend(other.layers.iter().map(|m| m.layer.as_str()));
        names
            .into_iter()
            .map(|name| {
                let a: BTreeSet<usize> = self.get(name).unwrap_or_default().iter().copied().collect();
                let b: BTreeSet<usize> = other.get(name).unwrap_or_default().iter().copied().collect();
                a.symmetric_difference(&b).count()
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(|m| m.indices.is_empty())
    }
}

/// Picks `count` rows of one layer's current weights.
pub trait FilterSelector {
    fn select(&mut self, layer: &str, weights: &FilterMatrix, count: usize) -> Result<Vec<usize>, CriteriaError>;
}

/// The configured criterion. Under cosine distance an all-zero filter is
/// placed at distance 2.0 from everything instead of failing.
pub struct CriterionSelector<'a>(pub &'a PruneConfig);

impl FilterSelector for CriterionSelector<'_> {
    fn select(&mut self, _layer: &str, weights: &FilterMatrix, count: usize) -> Result<Vec<usize>, CriteriaError> {
        let cfg = self.0;
        let policy = ZeroRowPolicy::MaxDistance;
        let result = match cfg.criterion {
            Criterion::NormL1 => select_norm(weights, count, NormKind::L1)?,
            Criterion::NormL2 => select_norm(weights, count, NormKind::L2)?,
            Criterion::Gm => select_gm_with(weights, count, cfg.distance, policy)?,
            Criterion::Mix => {
                let norm_count = ((count as f64 * cfg.mix_norm_fraction) + 1e-9).floor() as usize;
                let norm_count = norm_count.min(count);
                select_mix_with(
                    weights,
                    norm_count,
                    count - norm_count,
                    cfg.mix_norm,
                    cfg.distance,
                    policy,
                )?
            }
        };
        Ok(result.indices)
    }
}

/// One pruning step with the configured criterion.
pub fn prune_step(bundle: &ModelBundle, cfg: &PruneConfig) -> Result<(ModelBundle, MaskState), PruneError> {
    prune_step_with(bundle, cfg, &mut CriterionSelector(cfg))
}

/// One pruning step with any selector: each prunable layer gets
/// `floor(N * P)` rows chosen from its current weights and zeroized.
pub fn prune_step_with(
    bundle: &ModelBundle,
    cfg: &PruneConfig,
    selector: &mut dyn FilterSelector,
) -> Result<(ModelBundle, MaskState), PruneError> {
    cfg.validate()?;
    let mut out = bundle.clone();
    let mut masks = MaskState::default();
    for i in 0..bundle.len() {
        let spec = &bundle.layers()[i];
        if !cfg.is_prunable(spec.kind) {
            continue;
        }
        let weights = bundle.tensor_at(i);
        let count = pruned_count(weights.rows(), cfg.rate);
        let indices = selector
            .select(&spec.name, weights, count)
            .map_err(|source| PruneError::Selection {
                layer: spec.name.clone(),
                source,
            })?;
        if indices.len() != count || indices.iter().any(|&j| j >= weights.rows()) {
            return Err(PruneError::MaskShapeMismatch(format!(
                "selector returned {:?} for {count} of {} filters in `{}`",
                indices,
                weights.rows(),
                spec.name
            )));
        }
        let tensor = out.tensor_at_mut(i);
        for &j in &indices {
            tensor.zero_row(j);
        }
        masks.layers.push(LayerMask {
            layer: spec.name.clone(),
            indices,
        });
    }
    Ok((out, masks))
}

/// Called once per epoch by [`run_schedule`].
pub trait Trainer {
    /// Trains the bundle in place for one epoch and returns its loss.
    fn train_epoch(&mut self, bundle: &mut ModelBundle, epoch: usize) -> Result<f64, String>;

    /// Runs after the epoch's pruning step (if any).
    fn end_epoch(&mut self, _bundle: &ModelBundle, _epoch: usize) -> Result<(), String> {
        Ok(())
    }
}

impl<F> Trainer for F
where
    F: FnMut(&mut ModelBundle, usize) -> Result<f64, String>,
{
    fn train_epoch(&mut self, bundle: &mut ModelBundle, epoch: usize) -> Result<f64, String> {
        self(bundle, epoch)
    }
}

/// A trainer that leaves the weights alone and reports zero loss.
pub fn identity_trainer(_: &mut ModelBundle, _: usize) -> Result<f64, String> {
    Ok(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub pruned: bool,
    /// Symmetric difference with the previous step's masks (the first step
    /// compares against empty masks). `None` when the epoch did not prune.
    pub mask_churn: Option<usize>,
    /// Per-layer mask sizes after this epoch's step.
    pub mask_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleOutcome {
    #[serde(skip)]
    pub bundle: ModelBundle,
    pub masks: MaskState,
    pub history: Vec<EpochRecord>,
}

pub fn run_schedule(
    bundle: ModelBundle,
    cfg: &PruneConfig,
    trainer: &mut dyn Trainer,
) -> Result<ScheduleOutcome, PruneError> {
    run_schedule_with(bundle, cfg, trainer, &mut CriterionSelector(cfg))
}

/// For epochs `1..=epoch_max`: train, then prune when `epoch % interval == 0`.
pub fn run_schedule_with(
    mut bundle: ModelBundle,
    cfg: &PruneConfig,
    trainer: &mut dyn Trainer,
    selector: &mut dyn FilterSelector,
) -> Result<ScheduleOutcome, PruneError> {
    cfg.validate()?;
    let mut masks = MaskState::default();
    let mut history = Vec::with_capacity(cfg.epoch_max);
    for epoch in 1..=cfg.epoch_max {
        let loss = trainer
            .train_epoch(&mut bundle, epoch)
            .map_err(|message| PruneError::TrainerFailure { epoch, message })?;
        let mut record = EpochRecord {
            epoch,
            loss,
            pruned: false,
            mask_churn: None,
            mask_sizes: None,
        };
        if epoch % cfg.interval == 0 {
            let (next, mut step_masks) = prune_step_with(&bundle, cfg, selector)?;
            step_masks.epoch = Some(epoch);
            record.pruned = true;
            record.mask_churn = Some(masks.churn(&step_masks));
            record.mask_sizes = Some(step_masks.layers.iter().map(|m| m.indices.len()).collect());
            bundle = next;
            masks = step_masks;
        }
        trainer
            .end_epoch(&bundle, epoch)
            .map_err(|message| PruneError::TrainerFailure { epoch, message })?;
        history.push(record);
    }
    Ok(ScheduleOutcome { bundle, masks, history })
}

/// Removes masked filters and the matching input channels of the next layer.
///
/// The graph must be a plain chain whose weighted nodes are exactly the
/// bundle's layers, in order.
pub fn extract_compact(bundle: &ModelBundle, masks: &MaskState, graph: &GraphSpec) -> Result<ModelBundle, PruneError> {
    if !graph.is_sequential() {
        return Err(PruneError::NonSequentialGraph(
            "compact extraction needs a chain without joins or shortcuts".into(),
        ));
    }
    if graph.nodes.len() != bundle.len() {
        return Err(PruneError::MaskShapeMismatch(format!(
            "graph has {} nodes, bundle has {} layers",
            graph.nodes.len(),
            bundle.len()
        )));
    }
    for (node, spec) in graph.nodes.iter().zip(bundle.layers()) {
        if node.name != spec.name
            || node.out_channels != spec.out_channels
            || node.in_channels != spec.in_channels
            || node.kernel != spec.kernel
        {
            return Err(PruneError::MaskShapeMismatch(format!(
                "graph node `{}` does not match bundle layer `{}`",
                node.name, spec.name
            )));
        }
    }
    for mask in &masks.layers {
        let Some(i) = bundle.layer_index(&mask.layer) else {
            return Err(PruneError::MaskShapeMismatch(format!(
                "no layer named `{}`",
                mask.layer
            )));
        };
        let rows = bundle.layers()[i].out_channels;
        let unique: BTreeSet<usize> = mask.indices.iter().copied().collect();
        if unique.len() != mask.indices.len() || unique.iter().any(|&j| j >= rows) || unique.len() >= rows {
            return Err(PruneError::MaskShapeMismatch(format!(
                "mask {:?} does not fit the {rows} filters of `{}`",
                mask.indices, mask.layer
            )));
        }
    }

    let mut layers = Vec::with_capacity(bundle.len());
    let mut prev_kept: Option<Vec<usize>> = None;
    for (spec, tensor) in bundle.iter() {
        let masked: BTreeSet<usize> = masks.get(&spec.name).unwrap_or_default().iter().copied().collect();
        let kept_rows: Vec<usize> = (0..spec.out_channels).filter(|j| !masked.contains(j)).collect();
        let kk = spec.kernel * spec.kernel;
        let kept_in: Vec<usize> = prev_kept.take().unwrap_or_else(|| (0..spec.in_channels).collect());
        let mut values = Vec::with_capacity(kept_rows.len() * kept_in.len() * kk);
        for &j in &kept_rows {
            let row = tensor.row(j);
            for &c in &kept_in {
                values.extend_from_slice(&row[c * kk..(c + 1) * kk]);
            }
        }
        let compact = FilterMatrix::new(kept_rows.len(), kept_in.len() * kk, values).expect("subset of a valid tensor");
        let shape = LayerShape {
            name: spec.name.clone(),
            kind: spec.kind,
            out_channels: kept_rows.len(),
            in_channels: kept_in.len(),
            kernel: spec.kernel,
        };
        layers.push((shape, compact));
        prev_kept = Some(kept_rows);
    }
    Ok(ModelBundle::from_layers(layers)?)
}
