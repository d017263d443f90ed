//! Writes the synthetic corpus to disk, reads it back and shows the binary
//! motion header.

use choreoflow::io::{
    read_corpus, synth_dataset, write_corpus, MotionFileHeader, SynthConfig, MOTION_MAGIC,
};
use choreoflow::schema::SkeletonSchema;

fn main() {
    let schema = SkeletonSchema::mhr260();
    let corpus = synth_dataset(
        &SynthConfig {
            per_class: 5,
            ..SynthConfig::default()
        },
        &schema,
    )
    .unwrap();
    let dir = std::env::temp_dir().join("choreoflow_corpus");
    let manifest = write_corpus(&corpus, &schema, &dir).unwrap();
    println!(
        "wrote {} items to {}",
        manifest.entries.len(),
        dir.display()
    );

    let bytes = std::fs::read(dir.join(&manifest.entries[0].motion)).unwrap();
    let header = MotionFileHeader::parse(&bytes, MOTION_MAGIC).unwrap();
    println!(
        "{}: {} frames x {} dims at {} fps, identity {}, {} bytes",
        manifest.entries[0].motion,
        header.frames,
        header.dim,
        header.fps,
        header.extra,
        bytes.len()
    );

    let back = read_corpus(&dir, &schema, true).unwrap();
    let same = corpus
        .items
        .iter()
        .zip(&back.items)
        .all(|(a, b)| a.annotation == b.annotation && a.class == b.class);
    println!(
        "read back {} items, annotations and labels match: {same}",
        back.items.len()
    );
}
