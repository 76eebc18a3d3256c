//! Writes a stream as embedding files plus manifest, reads it back, and
//! shows the diagnostics for a damaged file.

use stagebank::data::{decode_embeddings, generate_stream, write_stream, Manifest, StreamSpec};

fn main() -> stagebank::Result<()> {
    let spec = StreamSpec { num_stages: 2, classes_per_stage: 3, feature_dim: 4, ..StreamSpec::default() };
    let stages = generate_stream(&spec)?;
    let dir = std::env::temp_dir().join("stagebank-embedding-files");
    let manifest = write_stream(&dir, spec.mode, &stages)?;
    println!("{}", std::fs::read_to_string(&manifest)?);

    let reread = Manifest::load(&manifest)?.load_stages()?;
    println!("identical after reload: {}", reread.iter().zip(&stages).all(|(a, b)| a.train() == b.train()));

    let mut bytes = std::fs::read(dir.join("stage1_train.esnf"))?;
    bytes.truncate(bytes.len() - 3);
    match decode_embeddings(&bytes, None) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("truncated file rejected: {e}"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
