//! Dataset manifest: where the corpora live and how much of each to use.
//! Relative paths resolve against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::quickdraw::SplitSizes;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokeSource {
    pub category: String,
    pub path: PathBuf,
    pub splits: SplitSizes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub codraw: PathBuf,
    pub embeddings: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clipart: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<PathBuf>,
    #[serde(default)]
    pub strokes: Vec<StrokeSource>,
    /// Caps the number of dialogue sessions loaded per split; `None` loads all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_limit: Option<usize>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CoreError::format(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        m.resolve(base);
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.codraw);
        fix(&mut self.embeddings);
        for p in [
            &mut self.clipart,
            &mut self.categories,
            &mut self.similarity,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        for s in &mut self.strokes {
            fix(&mut s.path);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in &self.strokes {
            if !seen.insert(&s.category) {
                return Err(CoreError::Config(format!(
                    "stroke category {} listed twice",
                    s.category
                )));
            }
            if s.splits.train == 0 {
                return Err(CoreError::Config(format!(
                    "{}: empty training split",
                    s.category
                )));
            }
        }
        Ok(())
    }

    pub fn stroke_source(&self, category: &str) -> Option<&StrokeSource> {
        self.strokes.iter().find(|s| s.category == category)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_manifest_dir() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        std::fs::write(
            &p,
            r#"{"codraw":"codraw.json","embeddings":"/abs/emb.txt",
                "strokes":[{"category":"duck","path":"strokes/duck.ndjson","splits":{"train":64,"valid":0,"test":0}}]}"#,
        )
        .unwrap();
        let m = Manifest::load(&p).unwrap();
        assert_eq!(m.codraw, dir.path().join("codraw.json"));
        assert_eq!(m.embeddings, PathBuf::from("/abs/emb.txt"));
        assert_eq!(
            m.stroke_source("duck").unwrap().path,
            dir.path().join("strokes/duck.ndjson")
        );
        assert_eq!(m.stroke_source("duck").unwrap().splits.train, 64);
    }

    #[test]
    fn duplicate_category_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let s = r#"{"category":"duck","path":"a","splits":{"train":1,"valid":0,"test":0}}"#;
        std::fs::write(
            &p,
            format!(r#"{{"codraw":"c","embeddings":"e","strokes":[{s},{s}]}}"#),
        )
        .unwrap();
        assert!(Manifest::load(&p).is_err());
    }
}
