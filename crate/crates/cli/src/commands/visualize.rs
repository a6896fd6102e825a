use hmr_core::decoder::sampling::offset_scales;
use hmr_core::decoder::Hotspot;
use hmr_core::numeric::RngSeed;
use hmr_core::training::synthetic_task;
use hmr_core::Error;
use serde::{Deserialize, Serialize};

use super::{create_dir, load_checkpoint, write};
use crate::features::FeatureFile;
use crate::manifest::RunManifest;
use crate::VisualizeArgs;

pub const HOTSPOT_FILE: &str = "hotspots.json";
/// Pixels per context cell in the graymaps.
pub const IMAGE_SCALE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub slot: usize,
    pub y: f64,
    pub x: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadHotspots {
    pub head: usize,
    pub group: usize,
    pub hotspots: Vec<Spot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHotspots {
    pub layer: usize,
    pub heads: Vec<HeadHotspots>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotspotReport {
    pub sample: usize,
    pub threshold: f64,
    pub offset_range: f64,
    /// Largest possible `|y|` and `|x|` of a sampling position.
    pub position_bound: [f64; 2],
    pub layers: Vec<LayerHotspots>,
}

pub fn image_name(layer: usize, head: usize) -> String {
    format!("layer{layer}_head{head}.pgm")
}

pub fn run(args: &VisualizeArgs) -> anyhow::Result<()> {
    if !(args.threshold >= 0.0) {
        return Err(Error::Config(format!("threshold must be nonnegative, got {}", args.threshold)).into());
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let cfg = &ckpt.config;
    let contexts = match &args.features {
        Some(path) => FeatureFile::load(path)?.contexts()?,
        None => synthetic_task(cfg, RngSeed(args.seed))?.1.into_iter().map(|s| s.context).collect(),
    };
    let context = contexts.get(args.sample).ok_or_else(|| {
        Error::Config(format!("sample index {} out of range ({} samples)", args.sample, contexts.len()))
    })?;
    let mut shape = vec![1];
    shape.extend_from_slice(context.shape());
    let (_, trace) = ckpt.model.predict(&context.reshape(&shape)?)?;

    let d = &cfg.decoder;
    let hot = trace.hotspots(args.threshold)?;
    let per_group = d.num_heads / d.num_groups;
    let layers = (0..trace.layers.len())
        .map(|layer| LayerHotspots {
            layer,
            heads: (0..d.num_heads)
                .map(|head| HeadHotspots {
                    head,
                    group: head / per_group,
                    hotspots: hot
                        .iter()
                        .filter(|h: &&Hotspot| h.layer == layer && h.head == head)
                        .map(|h| Spot { slot: h.slot, y: h.y, x: h.x, weight: h.weight })
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let scales = offset_scales(d.offset_range, d.context_height, d.context_width);
    let report = HotspotReport {
        sample: args.sample,
        threshold: args.threshold,
        offset_range: d.offset_range,
        position_bound: [1.0 + scales[0], 1.0 + scales[1]],
        layers,
    };

    create_dir(&args.out)?;
    let mut manifest = RunManifest::new("visualize", Some(cfg), args.seed);
    manifest.input("checkpoint", &args.checkpoint);
    if let Some(p) = &args.features {
        manifest.input("features", p);
    }
    write(&args.out.join(HOTSPOT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    manifest.output(HOTSPOT_FILE);
    for layer in 0..trace.layers.len() {
        for head in 0..d.num_heads {
            let name = image_name(layer, head);
            write(&args.out.join(&name), trace.heat_image(layer, head, IMAGE_SCALE)?)?;
            manifest.output(name);
        }
    }
    manifest.write(&args.out)?;
    let total: usize = report.layers.iter().flat_map(|l| &l.heads).map(|h| h.hotspots.len()).sum();
    println!("{total} hotspots above {} across {} layers", args.threshold, report.layers.len());
    Ok(())
}
