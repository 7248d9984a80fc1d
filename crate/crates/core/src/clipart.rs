//! Clip-art assets: file name to (class, subtype) mapping plus an outline silhouette per
//! asset, used to build generator masks at inference time.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classes::{CLASS_COUNT, CLASS_NAMES, PERSON_EXPRESSIONS, PERSON_POSES};
use crate::error::{CoreError, Result};
use crate::raster::{build_mask, render_polylines, Bitmap};
use crate::stroke::Polyline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipArtEntry {
    pub png: String,
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(rename = "subtype")]
    pub subtype_id: usize,
    pub silhouette: Vec<Polyline>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipArtMapping {
    entries: Vec<ClipArtEntry>,
    by_png: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct MappingFile {
    assets: Vec<ClipArtEntry>,
}

impl ClipArtMapping {
    pub fn new(entries: Vec<ClipArtEntry>) -> Result<Self> {
        let mut by_png = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            if e.class_id >= CLASS_COUNT {
                return Err(CoreError::Mapping(format!(
                    "{}: class {} out of range",
                    e.png, e.class_id
                )));
            }
            if e.silhouette.iter().all(|p| p.is_empty()) {
                return Err(CoreError::Mapping(format!("{}: empty silhouette", e.png)));
            }
            if by_png.insert(e.png.clone(), i).is_some() {
                return Err(CoreError::Mapping(format!("duplicate asset {}", e.png)));
            }
        }
        Ok(Self { entries, by_png })
    }

    /// The built-in asset set: one asset per class, 35 pose/expression assets per person.
    pub fn builtin() -> Self {
        let mut entries = Vec::new();
        for (class_id, name) in CLASS_NAMES.iter().enumerate() {
            if class_id < 2 {
                for pose in 0..PERSON_POSES {
                    for expr in 0..PERSON_EXPRESSIONS {
                        entries.push(ClipArtEntry {
                            png: format!("{}_{pose}_{expr}.png", name.replace(' ', "_")),
                            class_id,
                            subtype_id: pose * PERSON_EXPRESSIONS + expr,
                            silhouette: person(class_id == 1, pose),
                        });
                    }
                }
            } else {
                entries.push(ClipArtEntry {
                    png: format!("{}.png", name.replace(' ', "_")),
                    class_id,
                    subtype_id: 0,
                    silhouette: silhouette_for(class_id),
                });
            }
        }
        Self::new(entries).expect("built-in assets are valid")
    }

    pub fn entries(&self) -> &[ClipArtEntry] {
        &self.entries
    }

    pub fn lookup(&self, png: &str) -> Result<&ClipArtEntry> {
        self.by_png
            .get(png)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| CoreError::Mapping(format!("unknown clip-art asset {png}")))
    }

    /// The asset for a class and subtype, falling back to any asset of the class.
    pub fn find(&self, class_id: usize, subtype_id: usize) -> Option<&ClipArtEntry> {
        self.entries
            .iter()
            .find(|e| e.class_id == class_id && e.subtype_id == subtype_id)
            .or_else(|| self.entries.iter().find(|e| e.class_id == class_id))
    }

    pub fn png_for(&self, class_id: usize, subtype_id: usize) -> Option<&str> {
        self.find(class_id, subtype_id).map(|e| e.png.as_str())
    }

    /// Span-filled silhouette mask at `res × res`, mirrored when `flip` is set.
    pub fn mask(
        &self,
        class_id: usize,
        subtype_id: usize,
        flip: bool,
        res: usize,
    ) -> Result<Bitmap> {
        let e = self
            .find(class_id, subtype_id)
            .ok_or_else(|| CoreError::Mapping(format!("no clip art for class {class_id}")))?;
        let m = build_mask(&render_polylines(&e.silhouette, res, res)?);
        Ok(if flip { m.flipped_horizontal() } else { m })
    }

    /// Height over width of the silhouette's extent.
    pub fn aspect_ratio(&self, class_id: usize, subtype_id: usize) -> Result<f64> {
        let e = self
            .find(class_id, subtype_id)
            .ok_or_else(|| CoreError::Mapping(format!("no clip art for class {class_id}")))?;
        let pts: Vec<&[f64; 2]> = e.silhouette.iter().flatten().collect();
        let (xmin, xmax) = pts
            .iter()
            .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[0]), a.1.max(p[0])));
        let (ymin, ymax) = pts
            .iter()
            .fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p[1]), a.1.max(p[1])));
        if xmax <= xmin {
            return Err(CoreError::DegenerateGeometry(format!(
                "{} has zero width",
                e.png
            )));
        }
        Ok((ymax - ymin) / (xmax - xmin))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MappingFile = serde_json::from_str(&text)?;
        Self::new(file.assets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = MappingFile {
            assets: self.entries.clone(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }
}

fn round3(p: [f64; 2]) -> [f64; 2] {
    [
        (p[0] * 1000.0).round() / 1000.0,
        (p[1] * 1000.0).round() / 1000.0,
    ]
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Polyline {
    (0..=n)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            round3([cx + rx * t.cos(), cy + ry * t.sin()])
        })
        .collect()
}

fn closed(points: &[[f64; 2]]) -> Polyline {
    let mut p: Polyline = points.iter().copied().map(round3).collect();
    p.push(p[0]);
    p
}

fn line(points: &[[f64; 2]]) -> Polyline {
    points.iter().copied().map(round3).collect()
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polyline {
    closed(&[[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
}

fn trunk() -> Polyline {
    rect(0.44, 0.75, 0.56, 1.0)
}

/// Round crown with fruit dots.
pub fn apple_tree() -> Vec<Polyline> {
    let mut v = vec![ellipse(0.5, 0.4, 0.38, 0.36, 24), trunk()];
    for (x, y) in [(0.35, 0.35), (0.6, 0.3), (0.5, 0.5)] {
        v.push(ellipse(x, y, 0.04, 0.04, 8));
    }
    v
}

/// Stacked triangles, narrow and tall.
pub fn pine_tree() -> Vec<Polyline> {
    vec![
        closed(&[[0.5, 0.0], [0.75, 0.35], [0.25, 0.35]]),
        closed(&[[0.5, 0.2], [0.85, 0.6], [0.15, 0.6]]),
        closed(&[[0.5, 0.4], [0.95, 0.8], [0.05, 0.8]]),
        rect(0.44, 0.8, 0.56, 1.0),
    ]
}

/// Wide lobed crown.
pub fn oak_tree() -> Vec<Polyline> {
    let mut crown = Vec::new();
    let n = 40;
    for i in 0..=n {
        let t = 2.0 * PI * i as f64 / n as f64;
        let r = 1.0 + 0.12 * (5.0 * t).cos();
        crown.push(round3([
            0.5 + 0.5 * r * t.cos() / 1.12,
            0.35 + 0.3 * r * t.sin() / 1.12,
        ]));
    }
    vec![crown, rect(0.42, 0.62, 0.58, 1.0)]
}

fn person(girl: bool, pose: usize) -> Vec<Polyline> {
    let arm = 0.1 + 0.05 * pose as f64;
    let skirt = if girl { 0.32 } else { 0.22 };
    vec![
        ellipse(0.5, 0.12, 0.12, 0.12, 16),
        closed(&[
            [0.38, 0.26],
            [0.62, 0.26],
            [0.5 + skirt, 0.62],
            [0.5 - skirt, 0.62],
        ]),
        line(&[[0.38, 0.3], [0.1, 0.3 + arm]]),
        line(&[[0.62, 0.3], [0.9, 0.3 + arm * (1.0 + (pose % 2) as f64)]]),
        line(&[[0.44, 0.62], [0.4, 1.0]]),
        line(&[[0.56, 0.62], [0.6, 1.0]]),
    ]
}

/// Body, head to the right with a beak; facing right.
pub fn duck() -> Vec<Polyline> {
    vec![
        ellipse(0.42, 0.62, 0.4, 0.22, 24),
        ellipse(0.74, 0.3, 0.14, 0.14, 16),
        closed(&[[0.87, 0.27], [1.0, 0.32], [0.87, 0.36]]),
    ]
}

/// Fuselage with the nose pointing right.
pub fn airplane() -> Vec<Polyline> {
    vec![
        closed(&[
            [0.0, 0.42],
            [0.85, 0.42],
            [1.0, 0.5],
            [0.85, 0.58],
            [0.0, 0.58],
        ]),
        closed(&[[0.4, 0.42], [0.55, 0.0], [0.62, 0.0], [0.6, 0.42]]),
        closed(&[[0.4, 0.58], [0.55, 1.0], [0.62, 1.0], [0.6, 0.58]]),
        closed(&[[0.02, 0.42], [0.0, 0.2], [0.1, 0.2], [0.14, 0.42]]),
    ]
}

pub fn sun() -> Vec<Polyline> {
    let mut v = vec![ellipse(0.5, 0.5, 0.28, 0.28, 24)];
    for i in 0..8 {
        let t = 2.0 * PI * i as f64 / 8.0;
        v.push(line(&[
            [0.5 + 0.34 * t.cos(), 0.5 + 0.34 * t.sin()],
            [0.5 + 0.5 * t.cos(), 0.5 + 0.5 * t.sin()],
        ]));
    }
    v
}

pub fn cloud() -> Vec<Polyline> {
    let mut pts = Vec::new();
    let n = 48;
    for i in 0..=n {
        let t = 2.0 * PI * i as f64 / n as f64;
        let bump = 1.0 + 0.15 * (6.0 * t).cos().abs();
        pts.push(round3([
            0.5 + 0.5 * bump * t.cos() / 1.15,
            0.5 + 0.3 * bump * t.sin() / 1.15,
        ]));
    }
    vec![pts]
}

fn silhouette_for(class_id: usize) -> Vec<Polyline> {
    let name = CLASS_NAMES[class_id];
    match name {
        "bear" => vec![
            ellipse(0.45, 0.6, 0.4, 0.3, 24),
            ellipse(0.8, 0.3, 0.17, 0.17, 16),
        ],
        "cat" | "dog" => vec![
            ellipse(0.45, 0.6, 0.35, 0.18, 20),
            ellipse(0.8, 0.35, 0.15, 0.15, 16),
            line(&[[0.1, 0.55], [0.0, 0.2]]),
            line(&[[0.25, 0.72], [0.25, 1.0]]),
            line(&[[0.65, 0.72], [0.65, 1.0]]),
        ],
        "duck" => duck(),
        "owl" => vec![
            ellipse(0.5, 0.55, 0.35, 0.45, 24),
            ellipse(0.38, 0.35, 0.08, 0.08, 8),
            ellipse(0.62, 0.35, 0.08, 0.08, 8),
        ],
        "snake" => vec![line(&[
            [0.0, 0.5],
            [0.2, 0.2],
            [0.4, 0.5],
            [0.6, 0.8],
            [0.8, 0.5],
            [1.0, 0.3],
        ])],
        "crown" => vec![closed(&[
            [0.0, 1.0],
            [0.0, 0.0],
            [0.25, 0.5],
            [0.5, 0.0],
            [0.75, 0.5],
            [1.0, 0.0],
            [1.0, 1.0],
        ])],
        "sunglasses" | "glasses" => vec![
            ellipse(0.22, 0.5, 0.2, 0.2, 16),
            ellipse(0.78, 0.5, 0.2, 0.2, 16),
            line(&[[0.42, 0.5], [0.58, 0.5]]),
        ],
        "pie" | "pizza" => vec![closed(&[[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]])],
        "hot dog" | "frisbee" | "baseball bat" => vec![ellipse(0.5, 0.5, 0.5, 0.12, 20)],
        "ketchup" | "mustard" | "drink" | "bucket" => {
            vec![closed(&[[0.1, 0.0], [0.9, 0.0], [0.75, 1.0], [0.25, 1.0]])]
        }
        "hamburger" => vec![
            ellipse(0.5, 0.3, 0.5, 0.25, 20),
            rect(0.0, 0.45, 1.0, 0.6),
            ellipse(0.5, 0.75, 0.5, 0.2, 20),
        ],
        "baseball glove" => vec![
            ellipse(0.5, 0.55, 0.4, 0.45, 20),
            line(&[[0.2, 0.3], [0.1, 0.0]]),
        ],
        "basketball" | "beach ball" | "football" | "soccer ball" | "tennis ball" => {
            vec![ellipse(0.5, 0.5, 0.5, 0.5, 24)]
        }
        "tennis racket" => vec![ellipse(0.5, 0.3, 0.3, 0.3, 20), rect(0.46, 0.6, 0.54, 1.0)],
        "kite" => vec![
            closed(&[[0.5, 0.0], [1.0, 0.35], [0.5, 0.7], [0.0, 0.35]]),
            line(&[[0.5, 0.7], [0.4, 0.85], [0.55, 1.0]]),
        ],
        "shovel" => vec![
            closed(&[[0.35, 0.6], [0.65, 0.6], [0.5, 1.0]]),
            rect(0.47, 0.0, 0.53, 0.6),
        ],
        "balloons" => vec![
            ellipse(0.3, 0.2, 0.2, 0.2, 16),
            ellipse(0.7, 0.25, 0.2, 0.2, 16),
            line(&[[0.3, 0.4], [0.5, 1.0], [0.7, 0.45]]),
        ],
        "apple tree" => apple_tree(),
        "pine tree" => pine_tree(),
        "oak tree" => oak_tree(),
        "slide" => vec![line(&[[0.0, 1.0], [0.0, 0.0], [0.2, 0.0], [1.0, 1.0]])],
        "sandbox" => vec![rect(0.0, 0.0, 1.0, 0.4)],
        "swing set" => vec![
            line(&[[0.0, 1.0], [0.15, 0.0], [0.85, 0.0], [1.0, 1.0]]),
            line(&[[0.5, 0.0], [0.5, 0.7]]),
        ],
        "tent" => vec![closed(&[[0.5, 0.0], [1.0, 0.8], [0.0, 0.8]])],
        "table" | "bench" | "grill" => vec![
            rect(0.0, 0.3, 1.0, 0.45),
            line(&[[0.1, 0.45], [0.1, 1.0]]),
            line(&[[0.9, 0.45], [0.9, 1.0]]),
        ],
        "fire" => vec![closed(&[
            [0.5, 0.0],
            [0.8, 0.5],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.2, 0.5],
        ])],
        "sun" => sun(),
        "cloud" => cloud(),
        "rain cloud" => {
            let mut v = cloud();
            v.push(line(&[[0.3, 0.85], [0.25, 1.1]]));
            v.push(line(&[[0.6, 0.85], [0.55, 1.1]]));
            v
        }
        "lightning" => vec![closed(&[
            [0.4, 0.0],
            [0.8, 0.0],
            [0.55, 0.4],
            [0.8, 0.4],
            [0.2, 1.0],
            [0.4, 0.5],
            [0.2, 0.5],
        ])],
        "airplane" => airplane(),
        "rocket" => vec![
            closed(&[[0.5, 0.0], [0.7, 0.3], [0.7, 0.85], [0.3, 0.85], [0.3, 0.3]]),
            closed(&[[0.3, 0.65], [0.1, 1.0], [0.9, 1.0], [0.7, 0.65]]),
        ],
        "butterfly" => vec![
            ellipse(0.25, 0.5, 0.25, 0.4, 16),
            ellipse(0.75, 0.5, 0.25, 0.4, 16),
        ],
        "bee" => vec![
            ellipse(0.5, 0.6, 0.4, 0.25, 20),
            ellipse(0.4, 0.25, 0.15, 0.12, 12),
            ellipse(0.6, 0.25, 0.15, 0.12, 12),
        ],
        // hats
        _ => vec![closed(&[
            [0.15, 0.0],
            [0.85, 0.0],
            [0.9, 0.8],
            [1.0, 1.0],
            [0.0, 1.0],
            [0.1, 0.8],
        ])],
    }
}
