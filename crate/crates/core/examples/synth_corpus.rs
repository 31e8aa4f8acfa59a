//! Writes a synthetic face corpus as PNG files plus an annotations file.
//!
//! cargo run --release --example synth_corpus -- OUT_DIR [IMAGES] [SEED]

use std::fs;
use std::path::PathBuf;

use pyrdpm::annotations::write_annotations;
use pyrdpm::synth::{synth_corpus, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().ok_or("usage: synth_corpus OUT_DIR [IMAGES] [SEED]")?);
    let mut cfg = SynthConfig::default();
    if let Some(n) = args.next() {
        cfg.images = n.parse()?;
    }
    if let Some(s) = args.next() {
        cfg.seed = s.parse()?;
    }
    let corpus = synth_corpus(&cfg);
    let (train, test) = corpus.split_at(corpus.len() * 2 / 3);
    for (name, part) in [("train", train), ("test", test)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir)?;
        for s in part {
            s.image.save(dir.join(format!("{}.png", s.id)))?;
        }
        let anns: Vec<_> = part.iter().map(|s| s.annotation()).collect();
        let mut buf = Vec::new();
        write_annotations(&anns, &mut buf)?;
        fs::write(out.join(format!("{name}.csv")), buf)?;
    }
    println!("{} train and {} test images in {}", train.len(), test.len(), out.display());
    Ok(())
}
