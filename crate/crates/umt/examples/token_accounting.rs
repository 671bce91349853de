//! Why masking pays: token and attention budgets for the reference
//! geometry (224px frames, 16px patches, 196 tokens per frame).
//!
//!     cargo run --example token_accounting

use umt::pipeline::TokenAccount;

fn main() -> umt::Result<()> {
    println!("8-frame clips, 196 tokens per frame:");
    println!();
    for ratio in [0.0, 0.5, 0.6, 0.8, 0.9] {
        let a = TokenAccount::new(8, 196, ratio)?;
        println!("mask ratio {ratio}");
        println!("{a}");
        println!();
    }
    println!("single images at the image mask ratio:");
    let img = TokenAccount::new(1, 196, 0.5)?;
    println!("{img}");
    println!();
    let full = TokenAccount::new(8, 196, 0.0)?;
    let masked = TokenAccount::new(8, 196, 0.8)?;
    println!(
        "hiding 80% of each frame cuts attention work to {:.1}% of the full clip's\n\
         ({} of {} score entries per head per block)",
        100.0 * masked.kept_attn_elements as f64 / full.full_attn_elements as f64,
        masked.kept_attn_elements,
        full.full_attn_elements,
    );
    Ok(())
}
