#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::{Arc, Mutex};

use rand_chacha::ChaCha8Rng;
use sketchdial_core::categories::CategoryRegistry;
use sketchdial_core::classes::class_id;
use sketchdial_core::clipart::ClipArtMapping;
use sketchdial_core::embeddings::EmbeddingTable;
use sketchdial_core::error::{CoreError, Result};
use sketchdial_core::generator::{GeneratorConfig, ObjectGenerator};
use sketchdial_core::proposer::{AttentionMap, Generation};
use sketchdial_core::scene::{
    build_context_sequence, scene_token_row, ContextWindow, Scene, SceneObject, SceneToken,
    TurnOrder, TOKEN_DIM,
};
use sketchdial_service::engine::{Engine, GeneratorBank, LayoutProposer, Sketch, SketchSource};

/// Returns a fixed scene per instruction; unknown instructions repeat the previous scene.
#[derive(Default)]
pub struct ScriptedProposer {
    pub scenes: HashMap<String, Vec<SceneObject>>,
    /// `(entered, release)`: signals on entry, then waits for a release message.
    pub gate: Option<(Mutex<Sender<()>>, Mutex<Receiver<()>>)>,
}

impl ScriptedProposer {
    pub fn with(mut self, text: &str, objects: Vec<SceneObject>) -> Self {
        self.scenes.insert(text.to_string(), objects);
        self
    }
}

fn uniform_causal(n: usize) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            w[i * n + j] = 1.0 / (i + 1) as f64;
        }
    }
    w
}

impl LayoutProposer for ScriptedProposer {
    fn generate(&self, ctx: &ContextWindow) -> Result<Generation> {
        if let Some((entered, release)) = &self.gate {
            entered.lock().unwrap().send(()).unwrap();
            release.lock().unwrap().recv().unwrap();
        }
        let text: Vec<&str> = ctx
            .current_instruction
            .iter()
            .map(|t| t.surface.as_str())
            .collect();
        let objects = match self.scenes.get(&text.join(" ")) {
            Some(o) => o.clone(),
            None => ctx
                .turns
                .last()
                .map(|t| t.scene.objects.clone())
                .unwrap_or_default(),
        };
        let mut rows = build_context_sequence(ctx, TurnOrder::InstructionFirst)?;
        let prompt = rows.len() - 1;
        for o in &objects {
            rows.push(scene_token_row(&SceneToken::Object(*o), None));
        }
        let n = rows.len();
        let attention = AttentionMap {
            labels: rows.iter().map(|r| r.label.clone()).collect(),
            turns: rows.iter().map(|r| r.turn).collect(),
            prompt_position: prompt,
            weights: vec![vec![uniform_causal(n)]],
        };
        Ok(Generation {
            scene: Scene::new(objects),
            attention,
            truncated: false,
            end_position: Some(n - 1),
            dropped_turns: 0,
        })
    }
}

/// Delegates to an inner source and fails on the `fail_at`-th call (0-based).
pub struct FailingSource {
    pub inner: GeneratorBank,
    pub calls: AtomicUsize,
    pub fail_at: usize,
}

impl FailingSource {
    fn tick(&self) -> Result<()> {
        if self.calls.fetch_add(1, Ordering::SeqCst) == self.fail_at {
            return Err(CoreError::Input("injected generator fault".into()));
        }
        Ok(())
    }
}

impl SketchSource for FailingSource {
    fn sample(&self, object: &SceneObject, rng: &mut ChaCha8Rng) -> Result<Sketch> {
        self.tick()?;
        self.inner.sample(object, rng)
    }

    fn regenerate(&self, object: &SceneObject, z: &[f64], rng: &mut ChaCha8Rng) -> Result<Sketch> {
        self.tick()?;
        self.inner.regenerate(object, z, rng)
    }
}

pub fn obj(class: &str, size: usize, flip: bool, x: f64, y: f64) -> SceneObject {
    SceneObject::new(class_id(class).unwrap(), 0, size, flip, x, y).unwrap()
}

pub fn tiny_generator(category: &str) -> ObjectGenerator {
    ObjectGenerator::new(GeneratorConfig {
        category: category.into(),
        encoder_hidden: 8,
        decoder_hidden: 12,
        mixtures: 2,
        max_decode_steps: 25,
        seed: 11,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

/// Clip-art fallback for every class plus an untrained generator for ducks.
pub fn bank() -> GeneratorBank {
    let mut b = GeneratorBank::new(CategoryRegistry::builtin(), ClipArtMapping::builtin());
    b.insert("duck", tiny_generator("duck"));
    b
}

pub fn embeddings() -> EmbeddingTable {
    let mut t = EmbeddingTable::new();
    for (i, w) in [
        "draw", "a", "duck", "sun", "tree", "move", "flip", "the", "unicorn",
    ]
    .iter()
    .enumerate()
    {
        let mut v = vec![0.0; TOKEN_DIM];
        v[i] = 1.0;
        t.insert(w, v).unwrap();
    }
    t
}

pub fn script() -> ScriptedProposer {
    ScriptedProposer::default()
        .with("draw a duck", vec![obj("duck", 1, false, 0.5, 0.5)])
        .with(
            "draw a sun",
            vec![
                obj("duck", 1, false, 0.5, 0.5),
                obj("sun", 2, false, 0.8, 0.1),
            ],
        )
        .with(
            "move the duck",
            vec![
                obj("duck", 1, false, 0.3, 0.6),
                obj("sun", 2, false, 0.8, 0.1),
            ],
        )
        .with(
            "flip the duck",
            vec![
                obj("duck", 1, true, 0.3, 0.6),
                obj("sun", 2, false, 0.8, 0.1),
            ],
        )
        .with(
            "draw a tree",
            vec![
                obj("sun", 2, false, 0.8, 0.1),
                obj("pine tree", 2, false, 0.2, 0.4),
            ],
        )
}

pub fn engine_with(proposer: ScriptedProposer, sketches: Box<dyn SketchSource>) -> Engine {
    Engine {
        proposer: Box::new(proposer),
        sketches,
        embeddings: embeddings(),
    }
}

pub fn engine() -> Engine {
    engine_with(script(), Box::new(bank()))
}

pub fn failing_engine(fail_at: usize) -> Engine {
    engine_with(
        script(),
        Box::new(FailingSource {
            inner: bank(),
            calls: AtomicUsize::new(0),
            fail_at,
        }),
    )
}

pub fn shared<T>(v: T) -> Arc<T> {
    Arc::new(v)
}
