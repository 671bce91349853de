//! First-stage pretraining on a tiny synthetic corpus: the student
//! sees only the unmasked tokens and matches the teacher's features
//! at the last aligned layers. The loss should fall steadily.
//!
//!     cargo run --release --example stage1_alignment

use umt::pipeline::{RunConfig, Trainer};

fn main() -> umt::Result<()> {
    let mut cfg = RunConfig::desk_tiny();
    cfg.data.corpus_size = 4;
    cfg.opt.batch_size = 2;
    cfg.opt.total_steps = 120;
    cfg.opt.warmup_steps = 10;
    cfg.objectives.vtc = false;
    cfg.objectives.vtm = false;
    cfg.objectives.mlm = false;

    let mut trainer = Trainer::new_stage1(cfg)?;
    println!("step   lr         alignment loss");
    let records = trainer.run(120, None)?;
    for r in records.iter().step_by(12) {
        println!("{:>4}   {:.6}   {:.6}", r.step, r.lr, r.uta.unwrap());
    }
    let first = records.first().unwrap().uta.unwrap();
    let last = records.last().unwrap().uta.unwrap();
    println!();
    println!(
        "loss {first:.6} -> {last:.6} ({:.1}x lower) over {} steps",
        first / last,
        records.len()
    );
    println!(
        "student processed {} visible tokens; teacher weights never moved",
        trainer.tokens_processed()
    );
    Ok(())
}
