//! Token and attention-cost accounting: how much work masking removes
//! for a given clip geometry, computed in closed form.

use crate::error::Result;
use crate::masking::unmasked_count;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenAccount {
    pub frames: usize,
    pub tokens_per_frame: usize,
    /// Tokens entering the network before masking.
    pub full_tokens: usize,
    /// Tokens the student actually processes.
    pub kept_tokens: usize,
    /// Score-matrix entries per head per block with every token kept.
    pub full_attn_elements: u64,
    /// Score-matrix entries per head per block after masking.
    pub kept_attn_elements: u64,
}

impl TokenAccount {
    /// Accounting for a clip of `frames` x `tokens_per_frame` tokens
    /// under a per-frame mask ratio, with joint space-time attention.
    pub fn new(frames: usize, tokens_per_frame: usize, mask_ratio: f64) -> Result<Self> {
        let kept_per_frame = unmasked_count(tokens_per_frame, mask_ratio)?;
        let full = frames * tokens_per_frame;
        let kept = frames * kept_per_frame;
        Ok(TokenAccount {
            frames,
            tokens_per_frame,
            full_tokens: full,
            kept_tokens: kept,
            full_attn_elements: (full as u64) * (full as u64),
            kept_attn_elements: (kept as u64) * (kept as u64),
        })
    }

    /// Fraction of tokens surviving the mask.
    pub fn token_fraction(&self) -> f64 {
        self.kept_tokens as f64 / self.full_tokens as f64
    }

    /// Fraction of attention work surviving the mask; quadratic in the
    /// token fraction.
    pub fn attn_fraction(&self) -> f64 {
        self.kept_attn_elements as f64 / self.full_attn_elements as f64
    }
}

impl std::fmt::Display for TokenAccount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "geometry     {} frames x {} tokens",
            self.frames, self.tokens_per_frame
        )?;
        writeln!(
            f,
            "tokens       {} -> {} ({:.1}% kept)",
            self.full_tokens,
            self.kept_tokens,
            100.0 * self.token_fraction()
        )?;
        write!(
            f,
            "attn/head    {} -> {} ({:.1}% kept)",
            self.full_attn_elements,
            self.kept_attn_elements,
            100.0 * self.attn_fraction()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_budgets() {
        // 224px clips with 16px patches: 196 tokens per frame.
        let full = TokenAccount::new(8, 196, 0.0).unwrap();
        assert_eq!(full.full_tokens, 1568);
        assert_eq!(full.kept_tokens, 1568);
        let masked = TokenAccount::new(8, 196, 0.8).unwrap();
        assert_eq!(masked.kept_tokens, 312);
        let image = TokenAccount::new(1, 196, 0.5).unwrap();
        assert_eq!(image.kept_tokens, 98);
    }

    #[test]
    fn attention_cost_is_quadratic() {
        let a = TokenAccount::new(8, 196, 0.8).unwrap();
        assert_eq!(a.full_attn_elements, 1568 * 1568);
        assert_eq!(a.kept_attn_elements, 312 * 312);
        let tf = a.token_fraction();
        assert!((a.attn_fraction() - tf * tf).abs() < 1e-15);
    }

    #[test]
    fn display_mentions_counts() {
        let a = TokenAccount::new(8, 196, 0.8).unwrap();
        let s = a.to_string();
        assert!(s.contains("1568 -> 312"));
        assert!(s.contains("8 frames x 196 tokens"));
    }

    #[test]
    fn total_mask_is_rejected() {
        assert!(TokenAccount::new(8, 196, 1.0).is_err());
    }
}
