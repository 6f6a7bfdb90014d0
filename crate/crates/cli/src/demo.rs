//! Writes a synthetic benchmark in the on-disk formats the other commands read.

use std::path::{Path, PathBuf};

use anyhow::Result;
use image::{Rgb, RgbImage};
use lenspipe_core::jsonl;
use lenspipe_core::profile::to_records;
use lenspipe_core::store::EmbeddingStore;
use lenspipe_core::synth::{self, SynthBench, SynthConfig};

use crate::ensure_dir;
use crate::profiles::PoolEntry;

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out: PathBuf,
    pub config: SynthConfig,
    /// Also write a small PNG per history image under `images/`.
    pub images: bool,
}

pub fn write_synth(args: &SynthArgs) -> Result<SynthBench> {
    let bench = synth::generate(&args.config);
    write_bench(&bench, &args.out, args.images)?;
    Ok(bench)
}

pub fn write_bench(bench: &SynthBench, out: &Path, images: bool) -> Result<()> {
    ensure_dir(out)?;
    jsonl::write(&out.join("benchmark.jsonl"), &bench.examples)?;
    let records: Vec<_> = bench.histories.iter().flat_map(to_records).collect();
    jsonl::write(&out.join("profiles.jsonl"), &records)?;
    EmbeddingStore::from_index(&bench.index()?).save(&out.join("embeddings.lensemb"))?;
    let pool: Vec<PoolEntry> = bench
        .item_pools
        .iter()
        .flat_map(|(cat, items)| {
            items.iter().map(move |(id, _)| PoolEntry {
                category: cat.clone(),
                image_id: id.clone(),
            })
        })
        .collect();
    let pool_lines: Vec<String> = pool.iter().map(|p| serde_json::to_string(p).expect("serializes")).collect();
    std::fs::write(out.join("pool.jsonl"), pool_lines.join("\n") + "\n")?;

    if images {
        let root = out.join("images");
        for h in &bench.histories {
            for t in h.items() {
                let path = root.join(&t.image.pixels_ref);
                ensure_dir(path.parent().expect("pixels_ref has a parent"))?;
                swatch(&t.image.image_id, t.image.width.max(1), t.image.height.max(1)).save(&path)?;
            }
        }
    }
    Ok(())
}

/// A flat color derived from the id, with a darker diagonal so cells differ.
fn swatch(id: &str, w: u32, h: u32) -> RgbImage {
    let digest = lenspipe_core::pipeline::sha256_hex(id.as_bytes());
    let byte = |i: usize| u8::from_str_radix(&digest[2 * i..2 * i + 2], 16).expect("hex");
    let base = Rgb([byte(0), byte(1), byte(2)]);
    RgbImage::from_fn(w, h, |x, y| {
        if x == y {
            Rgb(base.0.map(|c| c / 2))
        } else {
            base
        }
    })
}
