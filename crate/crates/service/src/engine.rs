//! Model interfaces used by sessions, with implementations backed by the trained models.

use std::collections::HashMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchdial_core::categories::CategoryRegistry;
use sketchdial_core::clipart::ClipArtMapping;
use sketchdial_core::embeddings::EmbeddingTable;
use sketchdial_core::error::{CoreError, Result};
use sketchdial_core::generator::{sample_prior, GeneratorCondition, ObjectGenerator};
use sketchdial_core::proposer::{AttentionLayer, CompositionProposer, Generation};
use sketchdial_core::scene::{ContextWindow, SceneObject};
use sketchdial_core::stroke::SketchDrawing;

/// Scene layout from dialogue context.
pub trait LayoutProposer: Send + Sync {
    fn generate(&self, ctx: &ContextWindow) -> Result<Generation>;

    fn attention_layer(&self) -> AttentionLayer {
        AttentionLayer::Last
    }
}

impl LayoutProposer for CompositionProposer {
    fn generate(&self, ctx: &ContextWindow) -> Result<Generation> {
        self.generate_scene(ctx)
    }

    fn attention_layer(&self) -> AttentionLayer {
        self.config.attention_layer
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchOrigin {
    Generated,
    /// Clip-art silhouette used when no generator covers the class.
    ClipArt,
    User,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sketch {
    pub drawing: SketchDrawing,
    pub z: Vec<f64>,
    /// The drawing already faces the flipped direction.
    pub facing_flip: bool,
    pub forced_end: bool,
    pub origin: SketchOrigin,
}

/// Stroke-level drawings for scene objects.
pub trait SketchSource: Send + Sync {
    /// A new drawing from a fresh latent sample.
    fn sample(&self, object: &SceneObject, rng: &mut ChaCha8Rng) -> Result<Sketch>;

    /// The same latent decoded under the object's current pose.
    fn regenerate(&self, object: &SceneObject, z: &[f64], rng: &mut ChaCha8Rng) -> Result<Sketch>;
}

pub const LATENT_DIM: usize = 128;

/// Per-category generators with clip-art masks as pose conditions.
pub struct GeneratorBank {
    pub registry: CategoryRegistry,
    pub mapping: ClipArtMapping,
    pub generators: HashMap<String, ObjectGenerator>,
    pub temperature: f64,
}

impl GeneratorBank {
    pub fn new(registry: CategoryRegistry, mapping: ClipArtMapping) -> Self {
        Self {
            registry,
            mapping,
            generators: HashMap::new(),
            temperature: 0.4,
        }
    }

    /// Loads every checkpoint named in the registry.
    pub fn load(registry: CategoryRegistry, mapping: ClipArtMapping) -> Result<Self> {
        let mut bank = Self::new(registry, mapping);
        for c in &bank.registry.categories {
            if let Some(p) = &c.checkpoint {
                bank.generators
                    .insert(c.name.clone(), ObjectGenerator::load(p)?);
            }
        }
        Ok(bank)
    }

    pub fn insert(&mut self, category: &str, generator: ObjectGenerator) {
        self.generators.insert(category.to_string(), generator);
    }

    pub fn generator_for(&self, class_id: usize) -> Option<&ObjectGenerator> {
        let c = self.registry.category_for_class(class_id)?;
        self.generators.get(&c.name)
    }

    pub fn condition(&self, g: &ObjectGenerator, o: &SceneObject) -> Result<GeneratorCondition> {
        GeneratorCondition::from_clipart(
            &self.mapping,
            o.class_id,
            o.subtype_id,
            o.flip,
            g.mask_resolution(),
        )
    }

    fn silhouette(&self, o: &SceneObject, z: Vec<f64>) -> Result<Sketch> {
        let e = self
            .mapping
            .find(o.class_id, o.subtype_id)
            .ok_or_else(|| CoreError::Mapping(format!("no clip art for class {}", o.class_id)))?;
        Ok(Sketch {
            drawing: SketchDrawing::from_raw(&e.silhouette, o.class_name())?,
            z,
            facing_flip: false,
            forced_end: false,
            origin: SketchOrigin::ClipArt,
        })
    }

    fn decode(
        &self,
        g: &ObjectGenerator,
        o: &SceneObject,
        z: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<Sketch> {
        let cond = self.condition(g, o)?;
        let r = g.decode(z, &cond, self.temperature, g.config.max_decode_steps, rng)?;
        Ok(Sketch {
            drawing: r.drawing,
            z: r.z,
            facing_flip: o.flip,
            forced_end: r.forced_end,
            origin: SketchOrigin::Generated,
        })
    }
}

impl SketchSource for GeneratorBank {
    fn sample(&self, object: &SceneObject, rng: &mut ChaCha8Rng) -> Result<Sketch> {
        match self.generator_for(object.class_id) {
            Some(g) => {
                let z = g.sample_prior(rng);
                self.decode(g, object, &z, rng)
            }
            None => self.silhouette(object, sample_prior(LATENT_DIM, rng)),
        }
    }

    fn regenerate(&self, object: &SceneObject, z: &[f64], rng: &mut ChaCha8Rng) -> Result<Sketch> {
        match self.generator_for(object.class_id) {
            Some(g) if z.len() == g.latent_dim() => self.decode(g, object, z, rng),
            Some(g) => {
                let z = g.sample_prior(rng);
                self.decode(g, object, &z, rng)
            }
            None => self.silhouette(object, z.to_vec()),
        }
    }
}

/// Everything a session needs to answer instructions.
pub struct Engine {
    pub proposer: Box<dyn LayoutProposer>,
    pub sketches: Box<dyn SketchSource>,
    pub embeddings: EmbeddingTable,
}

impl Engine {
    /// Loads a proposer checkpoint, an embedding table and the generator checkpoints named
    /// in a category registry (the built-in one when `categories` is `None`).
    pub fn load(
        proposer: &Path,
        embeddings: &Path,
        categories: Option<&Path>,
        clipart: Option<&Path>,
    ) -> Result<Self> {
        let registry = match categories {
            Some(p) => CategoryRegistry::load(p)?,
            None => CategoryRegistry::builtin(),
        };
        let mapping = match clipart {
            Some(p) => ClipArtMapping::load(p)?,
            None => ClipArtMapping::builtin(),
        };
        Ok(Self {
            proposer: Box::new(CompositionProposer::load(proposer)?),
            sketches: Box::new(GeneratorBank::load(registry, mapping)?),
            embeddings: EmbeddingTable::load(embeddings, None)?,
        })
    }
}
