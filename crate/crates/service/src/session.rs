//! Per-session state: dialogue context, object registry, undo history and the
//! instruction, redraw and undo transitions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchdial_core::classes::CLASS_NAMES;
use sketchdial_core::error::CoreError;
use sketchdial_core::proposer::{detect_unknown_object, AttentionLayer, Generation};
use sketchdial_core::scene::{ContextWindow, Scene, SceneObject, Turn};
use sketchdial_core::similarity::greedy_match;
use sketchdial_core::stroke::{Polyline, SketchDrawing};

use crate::canvas::{compose_canvas, CanvasRendering};
use crate::engine::{Engine, Sketch, SketchOrigin, SketchSource};
use crate::error::{Result, ServiceError};

pub const MAX_INSTRUCTION_CHARS: usize = 500;
pub const DEFAULT_UNDO_LIMIT: usize = 20;
/// Instructions an object must survive before it may be redrawn.
pub const REDRAW_AFTER_TURNS: usize = 3;
/// Attention views kept per session.
pub const ATTENTION_HISTORY: usize = 10;
pub const EXPORT_VERSION: u32 = 1;

/// Object pose at the time of a user redraw.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserFrame {
    pub x: f64,
    pub y: f64,
    pub size_id: usize,
    pub flip: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub id: u64,
    pub object: SceneObject,
    /// Index of the object in the current scene.
    pub scene_index: usize,
    pub z: Vec<f64>,
    pub drawing: SketchDrawing,
    pub facing_flip: bool,
    pub origin: SketchOrigin,
    pub forced_end: bool,
    pub user_redrawn: bool,
    pub user_polylines: Option<Vec<Polyline>>,
    pub user_frame: Option<UserFrame>,
    pub created_turn: usize,
    /// Instructions survived since creation.
    pub turns_kept: usize,
}

impl RegistryEntry {
    pub fn redraw_eligible(&self) -> bool {
        self.turns_kept >= REDRAW_AFTER_TURNS
    }

    fn apply_sketch(&mut self, s: Sketch) {
        self.z = s.z;
        self.drawing = s.drawing;
        self.facing_flip = s.facing_flip;
        self.origin = s.origin;
        self.forced_end = s.forced_end;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    /// Registry id of the object this row generated; `None` for the end-token row.
    pub object_id: Option<u64>,
    pub position: usize,
    pub weights: Vec<f64>,
}

/// Aggregated attention of one generation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionView {
    pub turn: usize,
    pub labels: Vec<String>,
    /// Context-window turn of each input; `None` for the current instruction.
    pub input_turns: Vec<Option<usize>>,
    pub rows: Vec<AttentionRow>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDiff {
    pub kept: Vec<u64>,
    pub moved: Vec<u64>,
    pub regenerated: Vec<u64>,
    pub added: Vec<u64>,
    pub removed: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Instruction {
        turn: usize,
        text: String,
        unknown_prompt: Option<String>,
    },
    Redraw {
        turn: usize,
        object_id: u64,
    },
    Undo {
        turn: usize,
    },
}

/// Everything an undo restores.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub turn: usize,
    pub context: ContextWindow,
    pub scene: Scene,
    pub registry: Vec<RegistryEntry>,
    pub next_object_id: u64,
    pub attention: Vec<AttentionView>,
    pub pending_prompt: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub seed: u64,
    pub undo_limit: usize,
    pub current: Snapshot,
    pub undo: Vec<Snapshot>,
    /// Append-only; undo does not remove entries.
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub turn: usize,
    pub scene: Scene,
    pub canvas: CanvasRendering,
    pub transcript: Vec<TranscriptEntry>,
    pub unknown_prompt: Option<String>,
    pub undo_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionResponse {
    pub turn: usize,
    pub scene: Scene,
    pub canvas: CanvasRendering,
    pub diff: SceneDiff,
    pub unknown_prompt: Option<String>,
    /// Objects whose decoding hit the step limit.
    pub forced_end: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportFile {
    pub version: u32,
    pub session: SessionState,
}

/// True when `word` is part of an object class name, singular or plural.
pub fn is_class_word(word: &str) -> bool {
    let w = word.to_lowercase();
    let singular = w.strip_suffix('s').unwrap_or(&w);
    CLASS_NAMES
        .iter()
        .flat_map(|n| n.split_whitespace())
        .any(|p| p == w || p == singular)
}

/// Same objects with identical attributes, in any order.
pub fn same_layout(a: &[SceneObject], b: &[SceneObject]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut used = vec![false; b.len()];
    a.iter()
        .all(|o| match (0..b.len()).find(|&k| !used[k] && b[k] == *o) {
            Some(k) => {
                used[k] = true;
                true
            }
            None => false,
        })
}

fn turn_rng(seed: u64, turn: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (turn as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn attention_view(
    g: &Generation,
    turn: usize,
    ids: &[u64],
    layer: AttentionLayer,
) -> AttentionView {
    let map = &g.attention;
    let mut rows: Vec<AttentionRow> = ids
        .iter()
        .enumerate()
        .filter(|(i, _)| map.prompt_position + i < map.len())
        .map(|(i, &id)| {
            let position = map.prompt_position + i;
            AttentionRow {
                object_id: Some(id),
                position,
                weights: map.aggregated_row(layer, position)[..=position].to_vec(),
            }
        })
        .collect();
    if let Some(end) = g.end_position {
        rows.push(AttentionRow {
            object_id: None,
            position: end,
            weights: map.aggregated_row(layer, end)[..=end].to_vec(),
        });
    }
    AttentionView {
        turn,
        labels: map.labels.iter().map(|l| l.display()).collect(),
        input_turns: map.turns.clone(),
        rows,
    }
}

impl SessionState {
    pub fn new(id: impl Into<String>, seed: u64) -> Self {
        Self {
            id: id.into(),
            seed,
            undo_limit: DEFAULT_UNDO_LIMIT,
            current: Snapshot::default(),
            undo: Vec::new(),
            transcript: Vec::new(),
        }
    }

    pub fn canvas(&self) -> CanvasRendering {
        compose_canvas(&self.current.registry)
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            turn: self.current.turn,
            scene: self.current.scene.clone(),
            canvas: self.canvas(),
            transcript: self.transcript.clone(),
            unknown_prompt: self.current.pending_prompt.clone(),
            undo_depth: self.undo.len(),
        }
    }

    fn push_undo(&mut self, snapshot: Snapshot) {
        self.undo.push(snapshot);
        if self.undo.len() > self.undo_limit {
            let excess = self.undo.len() - self.undo_limit;
            self.undo.drain(..excess);
        }
    }

    /// Runs one instruction. On error the state is left untouched.
    pub fn apply_instruction(
        &mut self,
        engine: &Engine,
        text: &str,
    ) -> Result<InstructionResponse> {
        let len = text.chars().count();
        if len > MAX_INSTRUCTION_CHARS {
            return Err(ServiceError::TooLong {
                len,
                max: MAX_INSTRUCTION_CHARS,
            });
        }
        let mut next = self.clone();
        let response = next.instruction_in_place(engine, text)?;
        next.validate()?;
        *self = next;
        Ok(response)
    }

    fn instruction_in_place(&mut self, engine: &Engine, text: &str) -> Result<InstructionResponse> {
        let before = self.current.clone();
        let turn = before.turn + 1;
        let mut rng = turn_rng(self.seed, turn);
        let instruction = engine.embeddings.text_tokens(text);
        let ctx = ContextWindow {
            turns: before.context.turns.clone(),
            current_instruction: instruction.clone(),
        };
        let generation = engine.proposer.generate(&ctx)?;
        let layer = engine.proposer.attention_layer();
        let prompt = if same_layout(&generation.scene.objects, &before.scene.objects) {
            detect_unknown_object(&ctx, &generation, layer).filter(|w| !is_class_word(w))
        } else {
            None
        };

        let cur = &mut self.current;
        let mut diff = SceneDiff::default();
        let mut forced = Vec::new();
        let ids: Vec<u64>;
        if prompt.is_some() {
            ids = Vec::new();
            for e in &mut cur.registry {
                e.turns_kept += 1;
                diff.kept.push(e.id);
            }
        } else {
            let new_objects = &generation.scene.objects;
            let old: Vec<SceneObject> = cur.registry.iter().map(|e| e.object).collect();
            let pairs = greedy_match(new_objects, &old);
            let mut slot: Vec<Option<usize>> = vec![None; new_objects.len()];
            for &(old_i, new_j) in &pairs {
                slot[new_j] = Some(old_i);
            }
            let mut registry = Vec::with_capacity(new_objects.len());
            let mut new_ids = Vec::with_capacity(new_objects.len());
            for (j, o) in new_objects.iter().enumerate() {
                let entry = match slot[j] {
                    Some(i) => {
                        let mut e = cur.registry[i].clone();
                        let prev = e.object;
                        e.object = *o;
                        e.scene_index = j;
                        e.turns_kept += 1;
                        let pose = prev.flip != o.flip
                            || prev.size_id != o.size_id
                            || prev.subtype_id != o.subtype_id;
                        if pose && !e.user_redrawn {
                            let s = engine.sketches.regenerate(o, &e.z, &mut rng)?;
                            e.apply_sketch(s);
                            diff.regenerated.push(e.id);
                        } else if pose || prev.x != o.x || prev.y != o.y {
                            diff.moved.push(e.id);
                        } else {
                            diff.kept.push(e.id);
                        }
                        e
                    }
                    None => {
                        let s = engine.sketches.sample(o, &mut rng)?;
                        let id = cur.next_object_id;
                        cur.next_object_id += 1;
                        diff.added.push(id);
                        RegistryEntry {
                            id,
                            object: *o,
                            scene_index: j,
                            z: s.z,
                            drawing: s.drawing,
                            facing_flip: s.facing_flip,
                            origin: s.origin,
                            forced_end: s.forced_end,
                            user_redrawn: false,
                            user_polylines: None,
                            user_frame: None,
                            created_turn: turn,
                            turns_kept: 0,
                        }
                    }
                };
                if entry.forced_end {
                    forced.push(entry.id);
                }
                new_ids.push(entry.id);
                registry.push(entry);
            }
            let matched: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            for (i, e) in cur.registry.iter().enumerate() {
                if !matched.contains(&i) {
                    diff.removed.push(e.id);
                }
            }
            registry.sort_by_key(|e| e.id);
            cur.registry = registry;
            cur.scene = Scene {
                objects: new_objects.clone(),
                turn_index: turn,
            };
            ids = new_ids;
        }
        cur.scene.turn_index = turn;
        cur.turn = turn;
        cur.pending_prompt = prompt.clone();
        cur.context.push_turn(Turn {
            instruction,
            scene: cur.scene.clone(),
        });
        cur.attention
            .push(attention_view(&generation, turn, &ids, layer));
        if cur.attention.len() > ATTENTION_HISTORY {
            let excess = cur.attention.len() - ATTENTION_HISTORY;
            cur.attention.drain(..excess);
        }
        let response = InstructionResponse {
            turn,
            scene: cur.scene.clone(),
            canvas: compose_canvas(&cur.registry),
            diff,
            unknown_prompt: prompt.clone(),
            forced_end: forced,
        };
        self.push_undo(before);
        self.transcript.push(TranscriptEntry::Instruction {
            turn,
            text: text.to_string(),
            unknown_prompt: prompt,
        });
        Ok(response)
    }

    /// Replaces an object's strokes with user polylines in unit-canvas coordinates.
    pub fn redraw(&mut self, object_id: u64, polylines: Vec<Polyline>) -> Result<CanvasRendering> {
        if polylines
            .iter()
            .flatten()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(ServiceError::BadRequest(
                "polyline coordinates must be finite".into(),
            ));
        }
        let before = self.current.clone();
        let Some(e) = self.current.registry.iter_mut().find(|e| e.id == object_id) else {
            return Err(ServiceError::NotFound(format!("object {object_id}")));
        };
        let drawing = SketchDrawing::from_raw(&polylines, e.object.class_name()).map_err(
            |err| match err {
                CoreError::EmptySketch => {
                    ServiceError::BadRequest("redraw needs at least one non-empty polyline".into())
                }
                other => other.into(),
            },
        )?;
        let o = e.object;
        e.drawing = drawing;
        e.origin = SketchOrigin::User;
        e.user_redrawn = true;
        e.forced_end = false;
        e.user_polylines = Some(polylines);
        e.user_frame = Some(UserFrame {
            x: o.x,
            y: o.y,
            size_id: o.size_id,
            flip: o.flip,
        });
        self.push_undo(before);
        self.transcript.push(TranscriptEntry::Redraw {
            turn: self.current.turn,
            object_id,
        });
        Ok(self.canvas())
    }

    pub fn undo(&mut self) -> Result<SessionView> {
        let Some(prev) = self.undo.pop() else {
            return Err(ServiceError::Conflict("nothing to undo".into()));
        };
        self.current = prev;
        self.transcript.push(TranscriptEntry::Undo {
            turn: self.current.turn,
        });
        Ok(self.view())
    }

    /// The attention view of `turn`, or of the latest generation when `None`.
    pub fn attention(&self, turn: Option<usize>) -> Result<&AttentionView> {
        let views = &self.current.attention;
        let found = match turn {
            Some(t) => views.iter().find(|v| v.turn == t),
            None => views.last(),
        };
        found.ok_or_else(|| match turn {
            Some(t) => ServiceError::NotFound(format!("attention for turn {t}")),
            None => ServiceError::NotFound("no generation yet".into()),
        })
    }

    pub fn export(&self) -> ExportFile {
        ExportFile {
            version: EXPORT_VERSION,
            session: self.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.export())?)
    }

    pub fn import(file: ExportFile) -> Result<Self> {
        if file.version != EXPORT_VERSION {
            return Err(ServiceError::BadRequest(format!(
                "unsupported export version {}",
                file.version
            )));
        }
        file.session.validate()?;
        Ok(file.session)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::import(serde_json::from_str(s)?)
    }

    /// Registry matches the scene, ids are unique and the undo stack is within bounds.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(ServiceError::BadRequest(format!(
                "inconsistent session: {m}"
            )))
        };
        if self.undo.len() > self.undo_limit {
            return bad(format!(
                "undo stack {} over limit {}",
                self.undo.len(),
                self.undo_limit
            ));
        }
        for s in std::iter::once(&self.current).chain(&self.undo) {
            if s.registry.len() != s.scene.objects.len() {
                return bad(format!(
                    "{} registry entries for {} objects",
                    s.registry.len(),
                    s.scene.objects.len()
                ));
            }
            let mut seen = vec![false; s.scene.objects.len()];
            for (k, e) in s.registry.iter().enumerate() {
                if k > 0 && s.registry[k - 1].id >= e.id {
                    return bad("registry ids not strictly increasing".into());
                }
                if e.id >= s.next_object_id {
                    return bad(format!(
                        "object id {} not below next id {}",
                        e.id, s.next_object_id
                    ));
                }
                match s.scene.objects.get(e.scene_index) {
                    Some(o) if *o == e.object && !seen[e.scene_index] => seen[e.scene_index] = true,
                    _ => return bad(format!("object {} does not match its scene slot", e.id)),
                }
                e.object.validate().map_err(ServiceError::from)?;
                e.drawing.validate().map_err(ServiceError::from)?;
            }
        }
        Ok(())
    }
}

/// Draws every object of a standalone scene with fresh latents.
pub fn render_scene(
    scene: &Scene,
    sketches: &dyn SketchSource,
    seed: u64,
) -> Result<CanvasRendering> {
    let mut rng = turn_rng(seed, 0);
    let mut registry = Vec::with_capacity(scene.objects.len());
    for (j, o) in scene.objects.iter().enumerate() {
        o.validate()?;
        let s = sketches.sample(o, &mut rng)?;
        registry.push(RegistryEntry {
            id: j as u64,
            object: *o,
            scene_index: j,
            z: s.z,
            drawing: s.drawing,
            facing_flip: s.facing_flip,
            origin: s.origin,
            forced_end: s.forced_end,
            user_redrawn: false,
            user_polylines: None,
            user_frame: None,
            created_turn: 0,
            turns_kept: 0,
        });
    }
    Ok(compose_canvas(&registry))
}
