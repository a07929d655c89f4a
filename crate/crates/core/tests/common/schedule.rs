//! Schedule drivers and checks shared by the pruner tests and the acceptance run.

use fpgm_core::flops::pruned_count;
use fpgm_core::pruner::*;
use fpgm_core::rng::Lcg;
use fpgm_core::toytrain::*;
use fpgm_core::ModelBundle;

/// Adds small seeded noise to every weight each epoch, zeroized rows
/// included, and snapshots the bundle after each epoch's pruning step.
pub struct DriftTrainer {
    pub rng: Lcg,
    pub scale: f64,
    pub snapshots: Vec<ModelBundle>,
}

impl DriftTrainer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Lcg::new(seed),
            scale: 0.05,
            snapshots: Vec::new(),
        }
    }
}

impl Trainer for DriftTrainer {
    fn train_epoch(&mut self, bundle: &mut ModelBundle, _epoch: usize) -> Result<f64, String> {
        for i in 0..bundle.len() {
            for v in bundle.tensor_at_mut(i).values_mut() {
                *v += self.scale * self.rng.next_normal();
            }
        }
        Ok(0.0)
    }

    fn end_epoch(&mut self, bundle: &ModelBundle, _epoch: usize) -> Result<(), String> {
        self.snapshots.push(bundle.clone());
        Ok(())
    }
}

/// Runs a 30-epoch drift schedule at `interval` and checks the structural
/// facts of soft pruning. Returns a description of the first violation.
pub fn check_schedule_facts(interval: usize, seed: u64) -> Result<(), String> {
    let epochs = 30;
    let cfg = PruneConfig {
        rate: 0.25,
        interval,
        epoch_max: epochs,
        ..PruneConfig::default()
    };
    let bundle = ToyNet::init(seed).to_bundle().unwrap();
    let mut trainer = DriftTrainer::new(seed ^ 0x55);
    let outcome = run_schedule(bundle.clone(), &cfg, &mut trainer).map_err(|e| e.to_string())?;

    let steps: Vec<usize> = outcome.history.iter().filter(|r| r.pruned).map(|r| r.epoch).collect();
    let expected: Vec<usize> = (1..=epochs).filter(|e| e % interval == 0).collect();
    if steps != expected {
        return Err(format!(
            "interval {interval}: pruned at {steps:?}, expected {expected:?}"
        ));
    }
    if steps.len() != epochs / interval {
        return Err(format!("interval {interval}: {} steps", steps.len()));
    }
    let fc_before = bundle.tensor("fc").unwrap().values().len();
    for record in &outcome.history {
        let snap = &trainer.snapshots[record.epoch - 1];
        if !record.pruned {
            continue;
        }
        let sizes = record.mask_sizes.as_ref().unwrap();
        let want: Vec<usize> = ["conv1", "conv2"]
            .iter()
            .map(|n| pruned_count(snap.tensor(n).unwrap().rows(), cfg.rate))
            .collect();
        if sizes != &want {
            return Err(format!(
                "epoch {}: mask sizes {sizes:?}, expected {want:?}",
                record.epoch
            ));
        }
        if snap.tensor("fc").unwrap().values().len() != fc_before {
            return Err("dense layer changed shape".into());
        }
    }
    // At each step boundary the rows named by that step's mask are exactly zero.
    let mut replay = DriftTrainer::new(seed ^ 0x55);
    let mut b = bundle;
    for epoch in 1..=epochs {
        replay.train_epoch(&mut b, epoch).unwrap();
        if epoch % interval == 0 {
            let (next, masks) = prune_step(&b, &cfg).map_err(|e| e.to_string())?;
            for m in &masks.layers {
                let t = next.tensor(&m.layer).unwrap();
                if m.indices.iter().any(|&j| t.row(j).iter().any(|v| v.to_bits() != 0)) {
                    return Err(format!("epoch {epoch}: masked row of {} not exactly zero", m.layer));
                }
            }
            b = next;
        }
        if b != trainer.snapshots[epoch - 1] {
            return Err(format!("epoch {epoch}: replay diverged from the schedule"));
        }
    }
    Ok(())
}

/// Largest logit difference between a masked toy net and its compact
/// extraction over `inputs` generated samples.
pub fn compact_gap(seed: u64, rate: f64, inputs: usize) -> Result<f64, String> {
    let mut rng = Lcg::new(seed);
    let h1 = 4 + rng.next_below(9);
    let h2 = 4 + rng.next_below(9);
    let net = ToyNet::init_with_widths(seed, IN_CHANNELS, h1, h2, CLASSES);
    let graph = toy_graph(&net);
    let cfg = PruneConfig {
        rate,
        ..PruneConfig::default()
    };
    let (masked, masks) = prune_step(&net.to_bundle().unwrap(), &cfg).map_err(|e| e.to_string())?;
    let compact = extract_compact(&masked, &masks, &graph).map_err(|e| e.to_string())?;
    let full = ToyNet::from_bundle(&masked).map_err(|e| e.to_string())?;
    let small = ToyNet::from_bundle(&compact).map_err(|e| e.to_string())?;
    let expect_rows = |n: usize| n - pruned_count(n, rate);
    if small.conv1.rows() != expect_rows(h1) || small.conv2.rows() != expect_rows(h2) {
        return Err(format!(
            "compact widths {}x{} from {h1}x{h2}",
            small.conv1.rows(),
            small.conv2.rows()
        ));
    }
    let data = gen_dataset(seed.wrapping_add(1000), inputs);
    let (a, _) = forward(&full, &data.images).map_err(|e| e.to_string())?;
    let (b, _) = forward(&small, &data.images).map_err(|e| e.to_string())?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}
