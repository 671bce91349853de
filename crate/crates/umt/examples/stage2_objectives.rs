//! Second-stage training: the pretrained student meets a text encoder
//! and a cross-modal decoder, trained with feature alignment,
//! video-text contrast, hard-negative matching and masked-language
//! prediction at once.
//!
//!     cargo run --release --example stage2_objectives

use umt::pipeline::{RunConfig, Trainer};

fn main() -> umt::Result<()> {
    let mut cfg = RunConfig::desk_tiny();
    cfg.data.corpus_size = 4;
    cfg.opt.batch_size = 4;
    cfg.opt.total_steps = 60;
    cfg.opt.warmup_steps = 5;
    cfg.allow_scratch_stage2 = true;

    let (mut trainer, _) = Trainer::new_stage2(cfg, None)?;
    println!("batch of 4 pairs; ideal starting points: contrast ln 4 = 1.386,");
    println!("matching ln 2 = 0.693, masked-language ln 64 = 4.159");
    println!();
    println!("step   align     contrast  matching  masked-lm");
    let records = trainer.run(60, None)?;
    for r in records.iter().step_by(6) {
        println!(
            "{:>4}   {:.5}   {:.5}   {:.5}   {:.5}",
            r.step,
            r.uta.unwrap(),
            r.vtc.unwrap(),
            r.vtm.unwrap(),
            r.mlm.unwrap()
        );
    }
    let f = records.first().unwrap();
    let l = records.last().unwrap();
    println!();
    println!(
        "contrast {:.4} -> {:.4}, masked-lm {:.4} -> {:.4}",
        f.vtc.unwrap(),
        l.vtc.unwrap(),
        f.mlm.unwrap(),
        l.mlm.unwrap()
    );
    println!(
        "temperature after training: {:.4} (clamped to [0.001, 0.5])",
        trainer.params().get("mm.temperature").unwrap()[[0, 0]]
    );
    Ok(())
}
