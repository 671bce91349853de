//! Checkpointing is exact: training N steps straight through and
//! training N/2, snapshotting, resuming and training N/2 more produce
//! bit-identical parameters, optimizer moments and counters.
//!
//!     cargo run --example checkpoint_resume

use umt::pipeline::{RunConfig, Trainer};

fn main() -> umt::Result<()> {
    let mut cfg = RunConfig::desk_tiny();
    cfg.data.corpus_size = 4;
    cfg.opt.batch_size = 2;
    cfg.opt.total_steps = 16;
    cfg.opt.warmup_steps = 2;
    cfg.objectives.vtc = false;
    cfg.objectives.vtm = false;
    cfg.objectives.mlm = false;

    let mut straight = Trainer::new_stage1(cfg.clone())?;
    straight.run(16, None)?;
    println!(
        "straight run:  16 steps, parameter checksum {:#010x}",
        straight.params_checksum()
    );

    let dir = std::env::temp_dir().join("umt-example-resume");
    std::fs::create_dir_all(&dir)?;
    let snap = dir.join("half.umtk");
    let mut first = Trainer::new_stage1(cfg.clone())?;
    first.run(8, None)?;
    first.save(&snap)?;
    println!(
        "interrupted:    8 steps, snapshot at {} ({} bytes)",
        snap.display(),
        std::fs::metadata(&snap)?.len()
    );

    let mut resumed = Trainer::resume(cfg, &snap)?;
    resumed.run(8, None)?;
    println!(
        "resumed run:   16 steps, parameter checksum {:#010x}",
        resumed.params_checksum()
    );

    assert_eq!(straight.params_checksum(), resumed.params_checksum());
    assert_eq!(straight.tokens_processed(), resumed.tokens_processed());
    assert_eq!(straight.attn_elements(), resumed.attn_elements());
    println!();
    println!(
        "checksums, token counters and attention counters all match: \
         the snapshot restored every bit, including the generator state"
    );
    Ok(())
}
