//! The on-disk corpus formats: binary clip containers with CRC
//! integrity, a tab-separated manifest, and the token vocabulary.
//! Everything round-trips bit-exactly and corruption is detected.
//!
//!     cargo run --example corpus_io

use umt::data::{default_vocab, read_clip, read_manifest, write_clip, write_manifest, ManifestEntry, SynthSpec};
use umt::multimodal::{read_vocab, write_vocab};

fn main() -> umt::Result<()> {
    let dir = std::env::temp_dir().join("umt-example-corpus");
    std::fs::create_dir_all(&dir)?;

    let spec = SynthSpec::default();
    let items = spec.generate(4, 99)?;
    let mut entries = Vec::new();
    for item in &items {
        let path = dir.join(format!("clip{:03}.umtc", item.index));
        write_clip(&path, &item.clip)?;
        entries.push(ManifestEntry {
            path: path.clone(),
            label: item.clip.label,
            caption: item.caption.clone(),
        });
        println!(
            "wrote {} ({} bytes), label {:?}, caption {:?}",
            path.file_name().unwrap().to_string_lossy(),
            std::fs::metadata(&path)?.len(),
            item.clip.label,
            item.caption
        );
    }

    let manifest = dir.join("corpus.tsv");
    write_manifest(&manifest, &entries)?;
    let vocab_path = dir.join("tokens.vocab");
    let vocab = default_vocab();
    write_vocab(&vocab_path, &vocab)?;

    // Read everything back and decode the first caption to words.
    let back = read_manifest(&manifest)?;
    let words = read_vocab(&vocab_path)?;
    assert_eq!(back.len(), entries.len());
    let caption_words: Vec<&str> = back[0]
        .caption
        .iter()
        .map(|&id| words[id as usize].as_str())
        .collect();
    println!();
    println!("manifest holds {} entries; first caption reads: {}", back.len(), caption_words.join(" "));

    let clip = read_clip(&back[0].path)?;
    assert_eq!(clip.frames, items[0].clip.frames);
    println!("first clip re-read bit-exactly: {} frames of {}x{}",
        clip.num_frames(), clip.height(), clip.width());

    // Flip one payload byte: the checksum catches it.
    let mut bytes = std::fs::read(&back[0].path)?;
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xFF;
    let bad = dir.join("corrupt.umtc");
    std::fs::write(&bad, &bytes)?;
    match read_clip(&bad) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => unreachable!("corruption must not pass the checksum"),
    }
    Ok(())
}
