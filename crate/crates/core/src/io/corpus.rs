//! Corpus directories: `motions/*.dfm`, `annotations/*.json` and a
//! `manifest.json` pairing them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, read_motion, write_motion, IoError};
use crate::choreo::ChoreoAnnotation;
use crate::repr::MotionSequence;
use crate::schema::SkeletonSchema;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub id: String,
    pub class: Option<String>,
    pub motion: MotionSequence,
    pub annotation: ChoreoAnnotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub schema: String,
    pub items: Vec<CorpusItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    pub motion: String,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub schema: String,
    pub schema_hash: String,
    pub entries: Vec<ManifestEntry>,
}

pub fn write_corpus(
    corpus: &Corpus,
    schema: &SkeletonSchema,
    dir: &Path,
) -> Result<CorpusManifest, IoError> {
    let motions = dir.join("motions");
    let annotations = dir.join("annotations");
    std::fs::create_dir_all(&motions).map_err(io_err(&motions))?;
    std::fs::create_dir_all(&annotations).map_err(io_err(&annotations))?;
    let mut entries = Vec::with_capacity(corpus.items.len());
    for item in &corpus.items {
        let motion = format!("motions/{}.dfm", item.id);
        let annotation = format!("annotations/{}.json", item.id);
        write_motion(&item.motion, schema, &dir.join(&motion))?;
        let path = dir.join(&annotation);
        std::fs::write(&path, item.annotation.to_json_pretty() + "\n").map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            id: item.id.clone(),
            class: item.class.clone(),
            motion,
            annotation,
        });
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        schema: schema.name().to_string(),
        schema_hash: hex::encode(schema.hash()),
        entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_corpus(dir: &Path, schema: &SkeletonSchema, strict: bool) -> Result<Corpus, IoError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(IoError::VersionUnsupported(manifest.version));
    }
    if manifest.schema != schema.name() {
        return Err(IoError::Dimension(format!(
            "corpus is for schema `{}`, not `{}`",
            manifest.schema,
            schema.name()
        )));
    }
    let mut items = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let (motion, _) = read_motion(&dir.join(&e.motion), schema, strict)?;
        let apath = dir.join(&e.annotation);
        let annotation = ChoreoAnnotation::load(&apath).map_err(|err| IoError::Parse {
            path: apath.clone(),
            message: err.to_string(),
        })?;
        items.push(CorpusItem {
            id: e.id,
            class: e.class,
            motion,
            annotation,
        });
    }
    Ok(Corpus {
        schema: manifest.schema,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{synth_dataset, SynthConfig};

    #[test]
    fn corpus_round_trip() {
        let schema = SkeletonSchema::mhr260();
        let corpus = synth_dataset(
            &SynthConfig {
                per_class: 3,
                ..SynthConfig::default()
            },
            &schema,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&corpus, &schema, dir.path()).unwrap();
        assert_eq!(manifest.entries.len(), 6);
        assert_eq!(
            std::fs::read_dir(dir.path().join("motions"))
                .unwrap()
                .count(),
            6
        );
        assert_eq!(
            std::fs::read_dir(dir.path().join("annotations"))
                .unwrap()
                .count(),
            6
        );
        let back = read_corpus(dir.path(), &schema, true).unwrap();
        assert_eq!(back.items.len(), 6);
        for (a, b) in corpus.items.iter().zip(&back.items) {
            assert_eq!(a.annotation, b.annotation);
            assert_eq!(a.class, b.class);
            let max = a
                .motion
                .frames
                .iter()
                .zip(b.motion.frames.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-6);
        }
        assert!(read_corpus(dir.path(), &SkeletonSchema::chain3(), true).is_err());
    }
}
