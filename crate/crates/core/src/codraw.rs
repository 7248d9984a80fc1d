//! Dialogue sessions in the collaborative-drawing JSON layout.
//!
//! ```json
//! {"data": {"train_00000": {"abs_t": "<target scene>",
//!   "dialog": [{"msg_t": "<teller>", "msg_d": "<drawer>", "abs_d": "<scene after turn>"}]}}}
//! ```
//!
//! A scene string is `N,` followed by `N` groups of
//! `png,local_idx,obj_idx,x,y,z,flip` with pixel coordinates on a 500×400 canvas, depth
//! `z ∈ {0,1,2}` (0 nearest, i.e. largest) and `flip ∈ {0,1}`. Assets with negative
//! coordinates are not placed and are skipped.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clipart::ClipArtMapping;
use crate::error::{CoreError, Result};
use crate::scene::{Scene, SceneObject};

pub const CANVAS_WIDTH: f64 = 500.0;
pub const CANVAS_HEIGHT: f64 = 400.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn from_key(key: &str) -> Option<Self> {
        if key.starts_with("train") {
            Some(Split::Train)
        } else if key.starts_with("val") {
            Some(Split::Val)
        } else if key.starts_with("test") {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub teller: String,
    pub drawer: String,
    pub scene: Scene,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub id: String,
    pub split: Split,
    pub turns: Vec<DialogueTurn>,
    pub target: Scene,
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    data: BTreeMap<String, RawSession>,
}

#[derive(Serialize, Deserialize)]
struct RawSession {
    abs_t: String,
    dialog: Vec<RawTurn>,
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    msg_t: String,
    #[serde(default)]
    msg_d: String,
    abs_d: String,
}

/// Parses one scene string; `location` prefixes diagnostics.
pub fn parse_scene(s: &str, mapping: &ClipArtMapping, location: &str) -> Result<Scene> {
    let fields: Vec<&str> = s
        .split(',')
        .map(str::trim)
        .filter(|f| !f.is_empty())
        .collect();
    let Some(first) = fields.first() else {
        return Ok(Scene::default());
    };
    let n: usize = first
        .parse()
        .map_err(|_| CoreError::format(location, format!("bad object count {first:?}")))?;
    if fields.len() != 1 + 7 * n {
        return Err(CoreError::format(
            location,
            format!(
                "{n} objects need {} fields, found {}",
                1 + 7 * n,
                fields.len()
            ),
        ));
    }
    let mut objects = Vec::with_capacity(n);
    for k in 0..n {
        let g = &fields[1 + 7 * k..1 + 7 * (k + 1)];
        let num = |i: usize| -> Result<f64> {
            g[i].parse::<f64>().map_err(|_| {
                CoreError::format(location, format!("object {k}: bad number {:?}", g[i]))
            })
        };
        let (x, y, z, flip) = (num(3)?, num(4)?, num(5)?, num(6)?);
        if x < 0.0 || y < 0.0 {
            continue;
        }
        let entry = mapping
            .lookup(g[0])
            .map_err(|e| CoreError::Mapping(format!("{location}: {e}")))?;
        if !(0.0..=2.0).contains(&z) || z.fract() != 0.0 {
            return Err(CoreError::format(
                location,
                format!("object {k}: depth {z} not in 0..=2"),
            ));
        }
        if flip != 0.0 && flip != 1.0 {
            return Err(CoreError::format(
                location,
                format!("object {k}: flip {flip} not 0/1"),
            ));
        }
        objects.push(SceneObject {
            class_id: entry.class_id,
            subtype_id: entry.subtype_id,
            size_id: 2 - z as usize,
            flip: flip == 1.0,
            x: (x / CANVAS_WIDTH).clamp(0.0, 1.0),
            y: (y / CANVAS_HEIGHT).clamp(0.0, 1.0),
        });
    }
    Ok(Scene::new(objects))
}

/// Inverse of [`parse_scene`] (positions rounded to 1e-6 pixel).
pub fn format_scene(scene: &Scene, mapping: &ClipArtMapping) -> Result<String> {
    let mut out = format!("{},", scene.objects.len());
    for (k, o) in scene.objects.iter().enumerate() {
        let png = mapping
            .png_for(o.class_id, o.subtype_id)
            .ok_or_else(|| CoreError::Mapping(format!("no asset for class {}", o.class_id)))?;
        let x = o.x * CANVAS_WIDTH;
        let y = o.y * CANVAS_HEIGHT;
        out.push_str(&format!(
            "{png},{k},{},{},{},{},{},",
            o.class_id,
            trim_float(x),
            trim_float(y),
            2 - o.size_id,
            u8::from(o.flip)
        ));
    }
    Ok(out)
}

fn trim_float(v: f64) -> String {
    let r = (v * 1e6).round() / 1e6;
    format!("{r}")
}

pub fn parse_sessions(
    text: &str,
    mapping: &ClipArtMapping,
    source: &str,
) -> Result<Vec<DialogueSession>> {
    let raw: RawFile = serde_json::from_str(text).map_err(|e| {
        CoreError::format(
            format!("{source}:{}:{}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let mut sessions = Vec::with_capacity(raw.data.len());
    for (key, s) in raw.data {
        let split = Split::from_key(&key).ok_or_else(|| {
            CoreError::format(
                format!("{source}: {key}"),
                "key has no train/val/test prefix",
            )
        })?;
        if s.dialog.is_empty() {
            return Err(CoreError::format(
                format!("{source}: {key}"),
                "session has no turns",
            ));
        }
        let mut turns = Vec::with_capacity(s.dialog.len());
        for (i, t) in s.dialog.iter().enumerate() {
            let loc = format!("{source}: {key} turn {i}");
            let mut scene = parse_scene(&t.abs_d, mapping, &loc)?;
            scene.turn_index = i;
            turns.push(DialogueTurn {
                teller: t.msg_t.clone(),
                drawer: t.msg_d.clone(),
                scene,
            });
        }
        let target = parse_scene(&s.abs_t, mapping, &format!("{source}: {key} target"))?;
        sessions.push(DialogueSession {
            id: key,
            split,
            turns,
            target,
        });
    }
    Ok(sessions)
}

pub fn load_codraw(
    path: impl AsRef<Path>,
    mapping: &ClipArtMapping,
) -> Result<Vec<DialogueSession>> {
    let path = path.as_ref();
    parse_sessions(
        &std::fs::read_to_string(path)?,
        mapping,
        &path.display().to_string(),
    )
}

pub fn sessions_to_json(sessions: &[DialogueSession], mapping: &ClipArtMapping) -> Result<String> {
    let mut data = BTreeMap::new();
    for s in sessions {
        let dialog = s
            .turns
            .iter()
            .map(|t| {
                Ok(RawTurn {
                    msg_t: t.teller.clone(),
                    msg_d: t.drawer.clone(),
                    abs_d: format_scene(&t.scene, mapping)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        data.insert(
            s.id.clone(),
            RawSession {
                abs_t: format_scene(&s.target, mapping)?,
                dialog,
            },
        );
    }
    Ok(serde_json::to_string_pretty(&RawFile { data })?)
}

pub fn save_codraw(
    path: impl AsRef<Path>,
    sessions: &[DialogueSession],
    mapping: &ClipArtMapping,
) -> Result<()> {
    std::fs::write(path, sessions_to_json(sessions, mapping)?)?;
    Ok(())
}

pub fn by_split(sessions: &[DialogueSession], split: Split) -> Vec<DialogueSession> {
    sessions
        .iter()
        .filter(|s| s.split == split)
        .cloned()
        .collect()
}
