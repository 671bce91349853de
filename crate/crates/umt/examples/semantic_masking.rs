//! Shows how the frozen teacher's class-token attention steers the
//! mask: tokens the teacher looks at survive, background is hidden.
//!
//!     cargo run --example semantic_masking

use ndarray::Array2;
use umt::data::SynthSpec;
use umt::masking::{random_mask, semantic_mask, tube_mask, MaskPlan};
use umt::pipeline::RunConfig;
use umt::rng::rng_from;
use umt::teacher::{AttentionMap, Teacher};

fn grid_lines(plan: &MaskPlan, frame: usize, cols: usize) -> Vec<String> {
    let l = plan.tokens_per_frame();
    (0..l / cols)
        .map(|r| {
            (0..cols)
                .map(|c| if plan.keep[[frame, r * cols + c]] { '#' } else { '.' })
                .collect()
        })
        .collect()
}

fn main() -> umt::Result<()> {
    let cfg = RunConfig::desk_tiny();
    let teacher = Teacher::init(cfg.teacher, 11)?;
    let grid = cfg.teacher_grid()?;
    let spec = SynthSpec {
        frames: cfg.data.frames,
        height: cfg.data.height,
        width: cfg.data.width,
        vocab_size: cfg.text.vocab_size,
    };
    let item = spec.generate_item(5, 0)?;
    let out = teacher.forward_clip(&item.clip, &grid)?;

    println!("teacher attention over frame 0 (4x4 token grid):");
    for r in 0..4 {
        let row: Vec<String> = (0..4)
            .map(|c| format!("{:5.3}", out.attention.weights[[0, r * 4 + c]]))
            .collect();
        println!("  {}", row.join(" "));
    }

    let mut rng = rng_from(7);
    let ratio = cfg.mask.video_ratio;
    let semantic = semantic_mask(&out.attention, ratio, &mut rng)?;
    let random = random_mask(&grid, ratio, &mut rng)?;
    let tube = tube_mask(&grid, ratio, &mut rng)?;

    println!();
    println!("kept tokens per frame at mask ratio {ratio} ('#' = kept):");
    println!("  {:<14}{:<14}{}", "semantic", "random", "tube");
    for frame in 0..semantic.frames() {
        let s = grid_lines(&semantic, frame, 4);
        let r = grid_lines(&random, frame, 4);
        let t = grid_lines(&tube, frame, 4);
        println!("  frame {frame}");
        for i in 0..s.len() {
            println!("  {:<14}{:<14}{}", s[i], r[i], t[i]);
        }
    }
    println!();
    println!(
        "every plan keeps exactly {} of {} tokens per frame",
        semantic.unmasked_per_frame,
        semantic.tokens_per_frame()
    );

    // The semantic mask is biased toward high-attention tokens. A freshly
    // initialised teacher attends almost uniformly, so to make the bias
    // visible we hand the masker a peaked map: one token holds 40% of the
    // attention mass, the other fifteen share the rest.
    let l = semantic.tokens_per_frame();
    let hot = 5;
    let mut weights = Array2::from_elem((1, l), 0.6 / (l - 1) as f64);
    weights[[0, hot]] = 0.4;
    let peaked = AttentionMap { weights };

    let draws = 2000;
    let mut kept_hot = 0;
    for _ in 0..draws {
        let plan = semantic_mask(&peaked, ratio, &mut rng)?;
        if plan.keep[[0, hot]] {
            kept_hot += 1;
        }
    }
    println!(
        "given a peaked map (one token holds 40% of the attention), that token \
         survived {:.1}% of {draws} draws; uniform chance would be {:.1}%",
        100.0 * kept_hot as f64 / draws as f64,
        100.0 * semantic.unmasked_per_frame as f64 / l as f64,
    );
    Ok(())
}
