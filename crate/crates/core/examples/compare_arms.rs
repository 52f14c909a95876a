//! Trains the seed-only and seed+projection arms side by side.
//!
//! `cargo run --release --example compare_arms -- [seed...]`

use cspn::toy::{train, SizeSource, TrainConfig};

fn main() -> cspn::Result<()> {
    let seeds: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seeds = if seeds.is_empty() { vec![42] } else { seeds };
    for seed in seeds {
        let base = TrainConfig {
            seed,
            ..Default::default()
        };
        let arms = [
            (
                "seed-only",
                TrainConfig {
                    projection_loss: false,
                    ..base.clone()
                },
            ),
            ("oracle", base.clone()),
            (
                "saliency",
                TrainConfig {
                    size_source: SizeSource::Saliency,
                    ..base.clone()
                },
            ),
            (
                "saliency-0.9",
                TrainConfig {
                    size_source: SizeSource::Saliency,
                    tau: 0.9,
                    ..base.clone()
                },
            ),
            (
                "soft",
                TrainConfig {
                    soft_target: true,
                    ..base.clone()
                },
            ),
        ];
        for (name, cfg) in arms {
            let t = std::time::Instant::now();
            let out = train(&cfg)?;
            let curve: Vec<String> = out.history.iter().map(|m| format!("{:.3}", m.val_miou)).collect();
            let last = out.history.last().map(|m| m.val_iou.clone());
            println!(
                "seed {seed} {name:>13}: init {:.3} -> [{}] iou {:?} ({:.1}s)",
                out.initial.mean,
                curve.join(" "),
                last.unwrap_or_default()
                    .iter()
                    .map(|v| v.map(|x| (x * 1000.0).round() / 1000.0))
                    .collect::<Vec<_>>(),
                t.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
