//! Seeded RNG streams and seed derivation.
//!
//! Every stochastic operation takes an explicit [`ChaCha8Rng`] so runs are
//! reproducible. Data items derive their own stream from
//! `(corpus_seed, item_index)`, which keeps parallel batch assembly
//! order-independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer, used to decorrelate derived seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for one data item of a corpus.
pub fn item_rng(corpus_seed: u64, item_index: u64) -> ChaCha8Rng {
    rng_from(mix(corpus_seed ^ mix(item_index)))
}

/// Snapshot of a ChaCha8 stream as six words: four seed words then the
/// 128-bit word position split into (lo, hi).
pub fn rng_state_words(rng: &ChaCha8Rng) -> [u64; 6] {
    let seed = rng.get_seed();
    let mut words = [0u64; 6];
    for (i, chunk) in seed.chunks_exact(8).enumerate() {
        words[i] = u64::from_le_bytes(chunk.try_into().unwrap());
    }
    let pos = rng.get_word_pos();
    words[4] = pos as u64;
    words[5] = (pos >> 64) as u64;
    words
}

pub fn rng_from_state_words(words: &[u64; 6]) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    for i in 0..4 {
        seed[i * 8..(i + 1) * 8].copy_from_slice(&words[i].to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let pos = (words[4] as u128) | ((words[5] as u128) << 64);
    rng.set_word_pos(pos);
    rng
}
