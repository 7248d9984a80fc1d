//! Discrete scene representation, its 102-d vector encoding and the interleaved
//! text/scene sequence fed to the composition model.

use serde::{Deserialize, Serialize};

use crate::classes::{class_name, CLASS_COUNT, SIZE_COUNT, SUBTYPE_COUNT};
use crate::error::{CoreError, Result};

pub const START_INDEX: usize = 0;
pub const END_INDEX: usize = 1;
pub const CLASS_OFFSET: usize = 2;
pub const SUBTYPE_OFFSET: usize = CLASS_OFFSET + CLASS_COUNT;
pub const SIZE_OFFSET: usize = SUBTYPE_OFFSET + SUBTYPE_COUNT;
pub const FLIP_OFFSET: usize = SIZE_OFFSET + SIZE_COUNT;
pub const X_INDEX: usize = FLIP_OFFSET + 2;
pub const Y_INDEX: usize = X_INDEX + 1;
pub const OBJECT_DIM: usize = Y_INDEX + 1;
pub const TOKEN_DIM: usize = 300;
pub const PADDED_DIM: usize = OBJECT_DIM + TOKEN_DIM;
pub const CONTEXT_TURNS: usize = 10;
pub const DEFAULT_MAX_OBJECTS: usize = 20;

/// One clip-art-level object: class, subtype, size, orientation and center position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(rename = "subtype")]
    pub subtype_id: usize,
    #[serde(rename = "size")]
    pub size_id: usize,
    pub flip: bool,
    pub x: f64,
    pub y: f64,
}

impl SceneObject {
    pub fn new(
        class_id: usize,
        subtype_id: usize,
        size_id: usize,
        flip: bool,
        x: f64,
        y: f64,
    ) -> Result<Self> {
        let o = Self {
            class_id,
            subtype_id,
            size_id,
            flip,
            x,
            y,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_id >= CLASS_COUNT {
            return Err(CoreError::InvalidObject(format!(
                "class {} out of range",
                self.class_id
            )));
        }
        if self.subtype_id >= SUBTYPE_COUNT {
            return Err(CoreError::InvalidObject(format!(
                "subtype {} out of range",
                self.subtype_id
            )));
        }
        if self.size_id >= SIZE_COUNT {
            return Err(CoreError::InvalidObject(format!(
                "size {} out of range",
                self.size_id
            )));
        }
        if !(0.0..=1.0).contains(&self.x) || !(0.0..=1.0).contains(&self.y) {
            return Err(CoreError::InvalidObject(format!(
                "position ({}, {}) outside the unit canvas",
                self.x, self.y
            )));
        }
        Ok(())
    }

    pub fn class_name(&self) -> &'static str {
        class_name(self.class_id).unwrap_or("unknown")
    }
}

/// An element of a serialized scene: the two sentinels or an object.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SceneToken {
    Start,
    End,
    Object(SceneObject),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Start,
    End,
    Object,
}

impl SceneToken {
    pub fn kind(&self) -> TokenKind {
        match self {
            SceneToken::Start => TokenKind::Start,
            SceneToken::End => TokenKind::End,
            SceneToken::Object(_) => TokenKind::Object,
        }
    }
}

/// `[1_s, 1_e, class(58), subtype(35), size(3), flip(2), x, y]`
pub fn encode_token(token: &SceneToken) -> Vec<f64> {
    let mut v = vec![0.0; OBJECT_DIM];
    match token {
        SceneToken::Start => v[START_INDEX] = 1.0,
        SceneToken::End => v[END_INDEX] = 1.0,
        SceneToken::Object(o) => {
            v[CLASS_OFFSET + o.class_id] = 1.0;
            v[SUBTYPE_OFFSET + o.subtype_id] = 1.0;
            v[SIZE_OFFSET + o.size_id] = 1.0;
            v[FLIP_OFFSET + usize::from(o.flip)] = 1.0;
            v[X_INDEX] = o.x;
            v[Y_INDEX] = o.y;
        }
    }
    v
}

pub fn encode_object(o: &SceneObject) -> Vec<f64> {
    encode_token(&SceneToken::Object(*o))
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse of [`encode_token`] that also accepts soft (probability) blocks.
pub fn decode_token(v: &[f64]) -> Result<SceneToken> {
    if v.len() != OBJECT_DIM {
        return Err(CoreError::Dimension {
            expected: OBJECT_DIM,
            got: v.len(),
        });
    }
    let kind = argmax(&[
        v[START_INDEX],
        v[END_INDEX],
        1.0 - v[START_INDEX] - v[END_INDEX],
    ]);
    Ok(match kind {
        0 => SceneToken::Start,
        1 => SceneToken::End,
        _ => SceneToken::Object(SceneObject {
            class_id: argmax(&v[CLASS_OFFSET..SUBTYPE_OFFSET]),
            subtype_id: argmax(&v[SUBTYPE_OFFSET..SIZE_OFFSET]),
            size_id: argmax(&v[SIZE_OFFSET..FLIP_OFFSET]),
            flip: argmax(&v[FLIP_OFFSET..X_INDEX]) == 1,
            x: v[X_INDEX].clamp(0.0, 1.0),
            y: v[Y_INDEX].clamp(0.0, 1.0),
        }),
    })
}

/// `[v, 0_300]`
pub fn pad_object(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != OBJECT_DIM {
        return Err(CoreError::Dimension {
            expected: OBJECT_DIM,
            got: v.len(),
        });
    }
    let mut out = v.to_vec();
    out.resize(PADDED_DIM, 0.0);
    Ok(out)
}

/// `[0_102, w]`
pub fn pad_token(w: &[f64]) -> Result<Vec<f64>> {
    if w.len() != TOKEN_DIM {
        return Err(CoreError::Dimension {
            expected: TOKEN_DIM,
            got: w.len(),
        });
    }
    let mut out = vec![0.0; OBJECT_DIM];
    out.extend_from_slice(w);
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub turn_index: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl Scene {
    pub fn new(objects: Vec<SceneObject>) -> Self {
        Self {
            objects,
            turn_index: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// The scene as a sentinel-bracketed token list.
    pub fn tokens(&self) -> Vec<SceneToken> {
        let mut t = Vec::with_capacity(self.objects.len() + 2);
        t.push(SceneToken::Start);
        t.extend(self.objects.iter().map(|o| SceneToken::Object(*o)));
        t.push(SceneToken::End);
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.objects.iter().try_for_each(SceneObject::validate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }
}

/// Lowercases and splits on whitespace and punctuation; punctuation marks are kept
/// as their own tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextToken {
    pub surface: String,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub instruction: Vec<TextToken>,
    pub scene: Scene,
}

/// Dialogue history (at most [`CONTEXT_TURNS`] turns) plus the instruction being answered.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub turns: Vec<Turn>,
    pub current_instruction: Vec<TextToken>,
}

impl ContextWindow {
    /// Appends a finished turn, dropping the oldest once the window is full.
    pub fn push_turn(&mut self, turn: Turn) {
        self.turns.push(turn);
        if self.turns.len() > CONTEXT_TURNS {
            let excess = self.turns.len() - CONTEXT_TURNS;
            self.turns.drain(..excess);
        }
    }
}

/// Order of a past turn's instruction and scene within the sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOrder {
    #[default]
    InstructionFirst,
    SceneFirst,
}

/// What a sequence row stands for; used to label attention maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum InputLabel {
    Token(String),
    Start,
    End,
    Object(usize),
}

impl InputLabel {
    pub fn display(&self) -> String {
        match self {
            InputLabel::Token(s) => s.clone(),
            InputLabel::Start => "<start>".into(),
            InputLabel::End => "<end>".into(),
            InputLabel::Object(c) => class_name(*c).unwrap_or("unknown").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceRow {
    pub vector: Vec<f64>,
    pub label: InputLabel,
    /// Position in the context window; `None` for the current instruction and prompt.
    pub turn: Option<usize>,
}

fn token_rows(tokens: &[TextToken], turn: Option<usize>, out: &mut Vec<SequenceRow>) -> Result<()> {
    for t in tokens {
        out.push(SequenceRow {
            vector: pad_token(&t.embedding)?,
            label: InputLabel::Token(t.surface.clone()),
            turn,
        });
    }
    Ok(())
}

pub fn scene_token_row(token: &SceneToken, turn: Option<usize>) -> SequenceRow {
    let label = match token {
        SceneToken::Start => InputLabel::Start,
        SceneToken::End => InputLabel::End,
        SceneToken::Object(o) => InputLabel::Object(o.class_id),
    };
    let mut vector = encode_token(token);
    vector.resize(PADDED_DIM, 0.0);
    SequenceRow {
        vector,
        label,
        turn,
    }
}

/// Interleaves the window chronologically and ends with the current instruction
/// followed by a start sentinel as the generation prompt.
///
/// Length is `Σ (m_j + l_j + 2) + m_i + 1`.
pub fn build_context_sequence(ctx: &ContextWindow, order: TurnOrder) -> Result<Vec<SequenceRow>> {
    if ctx.turns.len() > CONTEXT_TURNS {
        return Err(CoreError::Context(format!(
            "{} turns exceed the window of {CONTEXT_TURNS}",
            ctx.turns.len()
        )));
    }
    let mut out = Vec::new();
    for (j, turn) in ctx.turns.iter().enumerate() {
        let scene_rows: Vec<SequenceRow> = turn
            .scene
            .tokens()
            .iter()
            .map(|t| scene_token_row(t, Some(j)))
            .collect();
        match order {
            TurnOrder::InstructionFirst => {
                token_rows(&turn.instruction, Some(j), &mut out)?;
                out.extend(scene_rows);
            }
            TurnOrder::SceneFirst => {
                out.extend(scene_rows);
                token_rows(&turn.instruction, Some(j), &mut out)?;
            }
        }
    }
    token_rows(&ctx.current_instruction, None, &mut out)?;
    out.push(scene_token_row(&SceneToken::Start, None));
    Ok(out)
}

pub fn expected_sequence_length(ctx: &ContextWindow) -> usize {
    ctx.turns
        .iter()
        .map(|t| t.instruction.len() + t.scene.len() + 2)
        .sum::<usize>()
        + ctx.current_instruction.len()
        + 1
}
