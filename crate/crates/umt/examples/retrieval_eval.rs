//! Text-video retrieval before and after training: an untrained model
//! retrieves at chance, a briefly trained one finds its pairs.
//!
//!     cargo run --release --example retrieval_eval

use umt::pipeline::{retrieval, RunConfig, Trainer};

fn main() -> umt::Result<()> {
    let mut cfg = RunConfig::desk_tiny();
    cfg.data.corpus_size = 4;
    cfg.opt.batch_size = 4;
    cfg.opt.total_steps = 300;
    cfg.opt.warmup_steps = 10;
    cfg.allow_scratch_stage2 = true;

    let (mut trainer, _) = Trainer::new_stage2(cfg, None)?;
    let (video, text) = trainer.eval_embeddings(4)?;
    println!("before training:");
    println!("{}", retrieval(&video, &text)?);

    trainer.run(300, None)?;

    let (video, text) = trainer.eval_embeddings(4)?;
    println!();
    println!("after 300 steps on the 4-pair corpus:");
    println!("{}", retrieval(&video, &text)?);
    Ok(())
}
