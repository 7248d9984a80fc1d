//! Line-delimited JSON stroke corpora: one record per line with a `word` category and a
//! `drawing` made of `[[x...], [y...]]` polylines in integer pixel coordinates.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::stroke::{offset_std, Polyline, SketchDrawing};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub word: String,
    pub drawing: Vec<[Vec<f64>; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recognized: Option<bool>,
}

impl StrokeRecord {
    pub fn polylines(&self) -> Result<Vec<Polyline>> {
        self.drawing
            .iter()
            .map(|[xs, ys]| {
                if xs.len() != ys.len() {
                    return Err(CoreError::Input(format!(
                        "{} x values but {} y values",
                        xs.len(),
                        ys.len()
                    )));
                }
                Ok(xs.iter().zip(ys).map(|(&x, &y)| [x, y]).collect())
            })
            .collect()
    }

    pub fn from_polylines(word: &str, lines: &[Polyline]) -> Self {
        Self {
            word: word.to_string(),
            drawing: lines
                .iter()
                .map(|l| {
                    [
                        l.iter().map(|p| p[0]).collect(),
                        l.iter().map(|p| p[1]).collect(),
                    ]
                })
                .collect(),
            key_id: None,
            recognized: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const FULL: SplitSizes = SplitSizes {
        train: 75_000,
        valid: 2_500,
        test: 2_500,
    };
}

/// A category's drawings split three ways, offsets divided by `sigma`.
#[derive(Clone, Debug)]
pub struct StrokeCorpus {
    pub category: String,
    pub train: Vec<SketchDrawing>,
    pub valid: Vec<SketchDrawing>,
    pub test: Vec<SketchDrawing>,
    /// Offset standard deviation of the raw training drawings.
    pub sigma: f64,
    /// Raw (unnormalized, unanchored) training drawings, kept for mask construction.
    pub raw_train: Vec<SketchDrawing>,
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<StrokeRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StrokeRecord = serde_json::from_str(&line).map_err(|e| {
            CoreError::format(format!("{}:{}", path.display(), n + 1), e.to_string())
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: impl AsRef<Path>, records: &[StrokeRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads one category, converts to Stroke-5, splits in file order and normalizes all
/// splits by the training set's offset deviation. Drawings are anchored at their first point.
pub fn load_quickdraw(
    path: impl AsRef<Path>,
    category: &str,
    sizes: SplitSizes,
) -> Result<StrokeCorpus> {
    let records = read_records(&path)?;
    let mut drawings = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.word != category {
            return Err(CoreError::CategoryMismatch {
                expected: category.to_string(),
                found: format!("{} (record {})", r.word, i + 1),
            });
        }
        drawings.push(SketchDrawing::from_raw(&r.polylines()?, category)?);
    }
    split_corpus(category, drawings, sizes)
}

pub fn split_corpus(
    category: &str,
    drawings: Vec<SketchDrawing>,
    sizes: SplitSizes,
) -> Result<StrokeCorpus> {
    let need = sizes.train + sizes.valid + sizes.test;
    if drawings.len() < need {
        return Err(CoreError::Input(format!(
            "{category}: {} drawings, splits need {need}",
            drawings.len()
        )));
    }
    if sizes.train == 0 {
        return Err(CoreError::Input("training split is empty".into()));
    }
    let raw_train: Vec<SketchDrawing> = drawings[..sizes.train].to_vec();
    let anchored: Vec<SketchDrawing> = drawings[..need]
        .iter()
        .map(SketchDrawing::anchored)
        .collect();
    let sigma = offset_std(&anchored[..sizes.train])?;
    let scale = |ds: &[SketchDrawing]| ds.iter().map(|d| d.scaled(1.0 / sigma)).collect::<Vec<_>>();
    Ok(StrokeCorpus {
        category: category.to_string(),
        train: scale(&anchored[..sizes.train]),
        valid: scale(&anchored[sizes.train..sizes.train + sizes.valid]),
        test: scale(&anchored[sizes.train + sizes.valid..need]),
        sigma,
        raw_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(word: &str, k: f64) -> StrokeRecord {
        StrokeRecord::from_polylines(
            word,
            &[
                vec![[10.0, 10.0], [10.0 + k, 30.0], [40.0, 12.0 + k]],
                vec![[5.0, 5.0], [6.0, 9.0]],
            ],
        )
    }

    #[test]
    fn splits_and_subsets() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cat.ndjson");
        let recs: Vec<StrokeRecord> = (0..10).map(|i| record("cat", i as f64)).collect();
        write_records(&p, &recs).unwrap();
        let c = load_quickdraw(
            &p,
            "cat",
            SplitSizes {
                train: 6,
                valid: 2,
                test: 2,
            },
        )
        .unwrap();
        assert_eq!((c.train.len(), c.valid.len(), c.test.len()), (6, 2, 2));
        assert!(c.sigma > 0.0);
        assert_eq!(c.train[0].strokes[1].dx, 0.0);
        let sub = load_quickdraw(
            &p,
            "cat",
            SplitSizes {
                train: 4,
                valid: 0,
                test: 0,
            },
        )
        .unwrap();
        assert_eq!(sub.train.len(), 4);
        assert!(load_quickdraw(
            &p,
            "cat",
            SplitSizes {
                train: 11,
                valid: 0,
                test: 0
            }
        )
        .is_err());
    }

    #[test]
    fn category_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mixed.ndjson");
        write_records(&p, &[record("cat", 1.0), record("dog", 2.0)]).unwrap();
        assert!(matches!(
            load_quickdraw(
                &p,
                "cat",
                SplitSizes {
                    train: 2,
                    valid: 0,
                    test: 0
                }
            ),
            Err(CoreError::CategoryMismatch { .. })
        ));
    }

    #[test]
    fn record_round_trip() {
        let r = record("cat", 3.0);
        let d = SketchDrawing::from_raw(&r.polylines().unwrap(), "cat").unwrap();
        assert_eq!(d.to_absolute(), r.polylines().unwrap());
    }
}
