//! One-axis ablations from identical seeds: what changes when the
//! mask pattern or the student's attention span changes.
//!
//!     cargo run --release --example ablation_grid

use umt::pipeline::{run_ablation, AblationAxis, RunConfig};

fn main() -> umt::Result<()> {
    let mut cfg = RunConfig::desk_tiny();
    cfg.data.corpus_size = 4;
    cfg.opt.batch_size = 2;
    cfg.opt.total_steps = 100;
    cfg.opt.warmup_steps = 5;
    cfg.objectives.vtc = false;
    cfg.objectives.vtm = false;
    cfg.objectives.mlm = false;

    for axis in [AblationAxis::MaskKind, AblationAxis::Attention, AblationAxis::AlignedLayers] {
        let table = run_ablation(&cfg, axis, 40)?;
        println!("{table}");
    }
    println!("every variant trains from the same seed, so differences come\n\
              from the varied choice alone");
    Ok(())
}
