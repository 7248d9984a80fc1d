//! Attention maps from a generation pass, per-object attention rankings and
//! unknown-object detection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sketchdial_nn::Tensor;

use crate::scene::{ContextWindow, InputLabel, SequenceRow};

use super::Generation;

/// Which transformer layer's attention to read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "layer")]
pub enum AttentionLayer {
    #[default]
    Last,
    Index(usize),
    Mean,
}

/// Causal attention weights of every layer and head over one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub labels: Vec<InputLabel>,
    /// Context-window turn of each row; `None` for the current instruction and the scene being generated.
    pub turns: Vec<Option<usize>>,
    /// Row holding the start sentinel that prompts the first object.
    pub prompt_position: usize,
    /// `weights[layer][head]` is a row-major `len × len` matrix.
    pub weights: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeight {
    pub position: usize,
    pub label: String,
    pub weight: f64,
}

impl AttentionMap {
    pub fn from_tensors(
        seq: &[SequenceRow],
        prompt_position: usize,
        weights: &[Vec<Tensor>],
    ) -> Self {
        Self {
            labels: seq.iter().map(|r| r.label.clone()).collect(),
            turns: seq.iter().map(|r| r.turn).collect(),
            prompt_position,
            weights: weights
                .iter()
                .map(|layer| layer.iter().map(|t| t.data().to_vec()).collect())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn heads(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn row(&self, layer: usize, head: usize, position: usize) -> &[f64] {
        let n = self.len();
        &self.weights[layer][head][position * n..(position + 1) * n]
    }

    /// Head-averaged attention of one row at the selected layer(s).
    pub fn aggregated_row(&self, layer: AttentionLayer, position: usize) -> Vec<f64> {
        let n = self.len();
        let layers: Vec<usize> = match layer {
            AttentionLayer::Last => vec![self.layers().saturating_sub(1)],
            AttentionLayer::Index(i) => vec![i.min(self.layers().saturating_sub(1))],
            AttentionLayer::Mean => (0..self.layers()).collect(),
        };
        let mut out = vec![0.0; n];
        let mut count = 0.0;
        for &l in &layers {
            for h in 0..self.heads() {
                for (o, w) in out.iter_mut().zip(self.row(l, h, position)) {
                    *o += w;
                }
                count += 1.0;
            }
        }
        if count > 0.0 {
            out.iter_mut().for_each(|v| *v /= count);
        }
        out
    }

    /// Inputs ranked by attention from `position`, heaviest first (earlier rows win ties).
    pub fn ranked(&self, layer: AttentionLayer, position: usize) -> Vec<AttentionWeight> {
        let row = self.aggregated_row(layer, position);
        let mut out: Vec<AttentionWeight> = row
            .iter()
            .enumerate()
            .take(position + 1)
            .map(|(i, &w)| AttentionWeight {
                position: i,
                label: self.labels[i].display(),
                weight: w,
            })
            .collect();
        out.sort_by(|a, b| {
            b.weight
                .total_cmp(&a.weight)
                .then(a.position.cmp(&b.position))
        });
        out
    }
}

/// Ranked attention of the row that generated object `index` of the current scene.
pub fn attention_for_object(
    map: &AttentionMap,
    index: usize,
    layer: AttentionLayer,
) -> Option<Vec<AttentionWeight>> {
    let position = map.prompt_position + index;
    (position < map.len()).then(|| map.ranked(layer, position))
}

/// Function words and generic drawing verbs that never name an object.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "at", "by", "for", "with", "from",
    "into", "onto", "is", "are", "was", "be", "it", "its", "it's", "this", "that", "there", "here",
    "some", "one", "please", "now", "then", "also", "add", "put", "place", "draw", "make",
    "insert", "scene", "picture", "image", "canvas", "i", "you", "we", "me", "my", "your", "his",
    "her", "he", "she", "they", "them", "left", "right", "top", "bottom", "middle", "center",
    "side", "corner", "up", "down", "near", "next", "above", "below", "under", "over", "small",
    "medium", "large", "big", "little", "facing", "just", "very",
];

fn is_candidate(surface: &str) -> bool {
    surface.chars().any(char::is_alphanumeric)
        && !STOPWORDS.contains(&surface.to_lowercase().as_str())
}

fn class_counts(objects: &[crate::scene::SceneObject]) -> HashMap<usize, usize> {
    let mut m = HashMap::new();
    for o in objects {
        *m.entry(o.class_id).or_insert(0) += 1;
    }
    m
}

/// When the regenerated scene adds nothing over the previous turn's scene, returns the
/// current-instruction word with the highest attention at the end-token row.
pub fn detect_unknown_object(
    ctx: &ContextWindow,
    generation: &Generation,
    layer: AttentionLayer,
) -> Option<String> {
    let previous = ctx
        .turns
        .last()
        .map(|t| class_counts(&t.scene.objects))
        .unwrap_or_default();
    let now = class_counts(&generation.scene.objects);
    if now
        .iter()
        .any(|(c, n)| *n > previous.get(c).copied().unwrap_or(0))
    {
        return None;
    }
    let end = generation.end_position?;
    let map = &generation.attention;
    let row = map.aggregated_row(layer, end);
    let mut best: Option<(usize, f64)> = None;
    for (i, label) in map.labels.iter().enumerate().take(end + 1) {
        if map.turns[i].is_some() {
            continue;
        }
        if let InputLabel::Token(s) = label {
            if is_candidate(s) && best.is_none_or(|(_, w)| row[i] > w) {
                best = Some((i, row[i]));
            }
        }
    }
    best.and_then(|(i, _)| match &map.labels[i] {
        InputLabel::Token(s) => Some(s.clone()),
        _ => None,
    })
}
