//! Deterministic desk-scale corpora: templated dialogue sessions, a synthetic word-vector
//! table and small per-category stroke sets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classes::{class_id, person_subtype, SIZE_NAMES};
use crate::clipart::{self, ClipArtMapping};
use crate::codraw::{
    save_codraw, DialogueSession, DialogueTurn, Split, CANVAS_HEIGHT, CANVAS_WIDTH,
};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;
use crate::manifest::{Manifest, StrokeSource};
use crate::quickdraw::{write_records, SplitSizes, StrokeRecord};
use crate::scene::{tokenize, Scene, SceneObject, TOKEN_DIM};
use crate::similarity::SimilarityWeights;
use crate::stroke::Polyline;

pub const FIXTURE_SEED: u64 = 20_240_611;
pub const SESSION_COUNT: usize = 16;
pub const SKETCHES_PER_CATEGORY: usize = 64;
pub const UNKNOWN_INSTRUCTION: &str = "add a sandwich to the scene .";

/// Object names the templates draw from; each resolves to a class id.
const OBJECTS: &[&str] = &[
    "boy",
    "girl",
    "bear",
    "cat",
    "dog",
    "duck",
    "owl",
    "snake",
    "crown",
    "pizza",
    "hamburger",
    "basketball",
    "kite",
    "bucket",
    "balloons",
    "apple tree",
    "pine tree",
    "oak tree",
    "tent",
    "table",
    "bench",
    "fire",
    "sun",
    "cloud",
    "lightning",
    "airplane",
    "rocket",
    "butterfly",
    "bee",
];

const COLUMNS: [(&str, f64); 3] = [("left", 0.2), ("middle", 0.5), ("right", 0.8)];
const ROWS: [(&str, f64); 2] = [("top", 0.25), ("bottom", 0.75)];
const POSES: [&str; 3] = ["standing", "running", "sitting"];
const EXPRESSIONS: [&str; 2] = ["happy", "sad"];

fn snap(v: f64, extent: f64) -> f64 {
    (v * extent).round() / extent
}

fn templated_turn(rng: &mut ChaCha8Rng) -> (String, SceneObject) {
    let name = OBJECTS[rng.random_range(0..OBJECTS.len())];
    let class = class_id(name).expect("fixture object names are classes");
    let size = rng.random_range(0..SIZE_NAMES.len());
    let (col, cx) = COLUMNS[rng.random_range(0..COLUMNS.len())];
    let (row, cy) = ROWS[rng.random_range(0..ROWS.len())];
    let flip = rng.random_bool(0.5);
    let mut subtype = 0;
    let mut words = format!("a {} ", SIZE_NAMES[size]);
    if name == "boy" || name == "girl" {
        let pose = rng.random_range(0..POSES.len());
        let expr = rng.random_range(0..EXPRESSIONS.len());
        subtype = person_subtype(pose, expr);
        words.push_str(&format!("{} {} ", EXPRESSIONS[expr], POSES[pose]));
    }
    let text = format!(
        "{words}{name} at the {row} {col} facing {} .",
        if flip { "left" } else { "right" }
    );
    let x = snap(
        (cx + rng.random_range(-0.03..=0.03)).clamp(0.0, 1.0),
        CANVAS_WIDTH,
    );
    let y = snap(
        (cy + rng.random_range(-0.03..=0.03)).clamp(0.0, 1.0),
        CANVAS_HEIGHT,
    );
    let obj = SceneObject::new(class, subtype, size, flip, x, y).expect("valid fixture object");
    (text, obj)
}

/// Sessions of 2 to 4 turns, each adding one described object; two sessions contain a
/// request for an object outside the vocabulary that leaves the scene unchanged.
pub fn fixture_sessions(seed: u64) -> Vec<DialogueSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SESSION_COUNT)
        .map(|s| {
            let turn_count = rng.random_range(2..=4);
            let unknown_at = match s {
                3 => Some(1),
                11 => Some(turn_count - 1),
                _ => None,
            };
            let mut scene = Scene::default();
            let mut turns = Vec::with_capacity(turn_count);
            for t in 0..turn_count {
                let teller = if unknown_at == Some(t) {
                    UNKNOWN_INSTRUCTION.to_string()
                } else {
                    let (text, obj) = templated_turn(&mut rng);
                    scene.objects.push(obj);
                    text
                };
                turns.push(DialogueTurn {
                    teller,
                    drawer: "ok".into(),
                    scene: scene.clone(),
                });
            }
            DialogueSession {
                id: format!("train_{s:05}"),
                split: Split::Train,
                turns,
                target: scene,
            }
        })
        .collect()
}

/// Every token the sessions use plus all class-name words, each with a N(0, 0.3²) vector.
pub fn fixture_embeddings(sessions: &[DialogueSession], seed: u64) -> Result<EmbeddingTable> {
    let mut words: BTreeSet<String> = BTreeSet::new();
    for s in sessions {
        for t in &s.turns {
            words.extend(tokenize(&t.teller));
        }
    }
    for name in crate::classes::CLASS_NAMES {
        words.extend(tokenize(name));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe_b0d);
    let normal = Normal::new(0.0, 0.3).expect("valid deviation");
    let mut table = EmbeddingTable::new();
    for w in words {
        let v = (0..TOKEN_DIM)
            .map(|_| (normal.sample(&mut rng) * 1e4_f64).round() / 1e4)
            .collect();
        table.insert(&w, v)?;
    }
    Ok(table)
}

/// Stroke categories and the outline variants their sketches are drawn from.
pub fn sketch_categories() -> Vec<(&'static str, Vec<Vec<Polyline>>)> {
    vec![
        (
            "tree",
            vec![
                clipart::pine_tree(),
                clipart::oak_tree(),
                clipart::apple_tree(),
            ],
        ),
        ("duck", vec![clipart::duck()]),
        ("sun", vec![clipart::sun()]),
        ("cloud", vec![clipart::cloud()]),
        ("airplane", vec![clipart::airplane()]),
    ]
}

fn thin(line: &Polyline, stride: usize) -> Polyline {
    let mut out: Polyline = line.iter().step_by(stride).copied().collect();
    if let (Some(last), Some(end)) = (out.last().copied(), line.last().copied()) {
        if last != end {
            out.push(end);
        }
    }
    out
}

/// A hand-drawn-looking copy of an outline: scaled to 100-200 px, jittered, integer
/// coordinates, about 25 to 40 points.
pub fn sketch_from_outline(outline: &[Polyline], rng: &mut impl Rng) -> Vec<Polyline> {
    let total: usize = outline.iter().map(Vec::len).sum();
    let stride = total.div_ceil(36).max(1);
    let scale = rng.random_range(100.0..200.0);
    let sx = scale * rng.random_range(0.9..1.1);
    let sy = scale * rng.random_range(0.9..1.1);
    let (ox, oy) = (rng.random_range(0.0..50.0), rng.random_range(0.0..50.0));
    let mut out = Vec::new();
    for line in outline {
        let mut pts: Polyline = Vec::new();
        for p in thin(line, stride) {
            let q = [
                (ox + p[0] * sx + rng.random_range(-2.0..=2.0))
                    .round()
                    .max(0.0),
                (oy + p[1] * sy + rng.random_range(-2.0..=2.0))
                    .round()
                    .max(0.0),
            ];
            if pts.last() != Some(&q) {
                pts.push(q);
            }
        }
        if pts.len() >= 2 {
            out.push(pts);
        }
    }
    out
}

pub fn fixture_sketches(
    category: &str,
    variants: &[Vec<Polyline>],
    count: usize,
    seed: u64,
) -> Vec<StrokeRecord> {
    let salt: u64 = category
        .bytes()
        .fold(0, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    (0..count)
        .map(|i| {
            let lines = sketch_from_outline(&variants[i % variants.len()], &mut rng);
            let mut r = StrokeRecord::from_polylines(category, &lines);
            r.key_id = Some(format!("{category}-{i:03}"));
            r.recognized = Some(true);
            r
        })
        .collect()
}

/// Writes the complete fixture tree under `dir` and returns the manifest path.
pub fn write_fixtures(dir: impl AsRef<Path>, seed: u64) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("strokes"))?;
    let mapping = ClipArtMapping::builtin();
    let sessions = fixture_sessions(seed);
    save_codraw(dir.join("codraw.json"), &sessions, &mapping)?;
    fixture_embeddings(&sessions, seed)?.save(dir.join("embeddings.txt"), 4)?;
    SimilarityWeights::default().save(dir.join("similarity.json"))?;
    let mut strokes = Vec::new();
    for (category, variants) in sketch_categories() {
        let rel = PathBuf::from(format!("strokes/{category}.ndjson"));
        write_records(
            dir.join(&rel),
            &fixture_sketches(category, &variants, SKETCHES_PER_CATEGORY, seed),
        )?;
        strokes.push(StrokeSource {
            category: category.to_string(),
            path: rel,
            splits: SplitSizes {
                train: SKETCHES_PER_CATEGORY,
                valid: 0,
                test: 0,
            },
        });
    }
    let manifest = Manifest {
        codraw: "codraw.json".into(),
        embeddings: "embeddings.txt".into(),
        clipart: None,
        categories: None,
        similarity: Some("similarity.json".into()),
        strokes,
        session_limit: None,
    };
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sessions_are_deterministic_and_shaped() {
        let a = fixture_sessions(FIXTURE_SEED);
        assert_eq!(a, fixture_sessions(FIXTURE_SEED));
        assert_eq!(a.len(), SESSION_COUNT);
        assert!(a.iter().all(|s| (2..=4).contains(&s.turns.len())));
        let unknown: usize = a
            .iter()
            .flat_map(|s| &s.turns)
            .filter(|t| t.teller == UNKNOWN_INSTRUCTION)
            .count();
        assert_eq!(unknown, 2);
    }

    #[test]
    fn sketches_have_modest_length() {
        for (cat, variants) in sketch_categories() {
            for r in fixture_sketches(cat, &variants, 8, 1) {
                let n: usize = r.polylines().unwrap().iter().map(Vec::len).sum();
                assert!((15..=60).contains(&n), "{cat}: {n} points");
            }
        }
    }
}
