use std::fs;
use std::path::Path;

use serde_json::json;

use fpgm_core::flops::{resnet20_cifar, NodeKind};
use fpgm_core::model_io::LayerKind;
use fpgm_core::rng::Lcg;
use fpgm_core::toytrain::{toy_graph, ToyNet};
use fpgm_core::{save_bundle, FilterMatrix, LayerShape, ModelBundle};

use crate::CliError;

/// Layer whose filters all have unit L2 norm in `resnet_norms.gmpk`.
pub const UNIFORM_NORM_LAYER: &str = "layer1.0.conv_a";

fn normal_matrix(rng: &mut Lcg, rows: usize, cols: usize) -> FilterMatrix {
    FilterMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.next_normal()).collect()).expect("finite")
}

pub fn random_bundle(seed: u64) -> ModelBundle {
    let mut rng = Lcg::new(seed);
    let shapes = [
        LayerShape::conv2d("conv_a", 3, 16, 3),
        LayerShape::conv2d("conv_b", 16, 16, 3),
        LayerShape::dense("fc", 16, 10),
    ];
    let layers = shapes
        .into_iter()
        .map(|s| {
            let cols = s.in_channels * s.kernel * s.kernel;
            let m = normal_matrix(&mut rng, s.out_channels, cols);
            (s, m)
        })
        .collect();
    ModelBundle::from_layers(layers).expect("consistent shapes")
}

pub fn collinear_bundle() -> ModelBundle {
    let line = FilterMatrix::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
    let square = FilterMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [10.0, 10.0]]).unwrap();
    ModelBundle::from_layers(vec![
        (LayerShape::conv2d("line", 1, 3, 1), line),
        (LayerShape::conv2d("square", 2, 4, 1), square),
    ])
    .unwrap()
}

/// Weighted ResNet-20 layers. Every filter gets a random log-normal scale
/// except in [`UNIFORM_NORM_LAYER`], where all filters have norm 1.
pub fn resnet_norms_bundle(seed: u64) -> ModelBundle {
    let mut rng = Lcg::new(seed);
    let mut layers = Vec::new();
    for node in resnet20_cifar().nodes {
        let kind = match node.kind {
            NodeKind::Conv2d => LayerKind::Conv2d,
            NodeKind::Dense => LayerKind::Dense,
            _ => continue,
        };
        let shape = LayerShape {
            name: node.name.clone(),
            kind,
            out_channels: node.out_channels,
            in_channels: node.in_channels,
            kernel: node.kernel,
        };
        let cols = node.in_channels * node.kernel * node.kernel;
        let mut m = normal_matrix(&mut rng, node.out_channels, cols);
        for j in 0..m.rows() {
            let norm = m.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if node.name == UNIFORM_NORM_LAYER {
                1.0 / norm
            } else {
                rng.next_normal().exp() / norm
            };
            m.row_mut(j).iter_mut().for_each(|v| *v *= scale);
        }
        layers.push((shape, m));
    }
    ModelBundle::from_layers(layers).unwrap()
}

pub fn generate(dir: &Path) -> Result<String, CliError> {
    fs::create_dir_all(dir)?;
    let toy = ToyNet::init(7);
    let bundles = [
        ("random.gmpk", random_bundle(1)),
        ("toy.gmpk", toy.to_bundle()?),
        ("collinear.gmpk", collinear_bundle()),
        ("resnet_norms.gmpk", resnet_norms_bundle(20)),
    ];
    let mut written = Vec::new();
    for (name, bundle) in &bundles {
        let path = dir.join(name);
        save_bundle(bundle, &path)?;
        written.push(path.display().to_string());
    }
    for (name, graph) in [
        ("resnet20_cifar.json", resnet20_cifar()),
        ("toy_chain.json", toy_graph(&toy)),
    ] {
        let path = dir.join(name);
        fs::write(&path, graph.to_json_pretty() + "\n")?;
        written.push(path.display().to_string());
    }
    eprintln!("wrote {} fixture files to {}", written.len(), dir.display());
    serde_json::to_string_pretty(&json!({ "files": written }))
        .map_err(|e| CliError::new("Serialization", e.to_string()))
}
