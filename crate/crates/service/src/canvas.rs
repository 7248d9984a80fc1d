//! Placement of per-object drawings on the unit canvas, plus SVG and bitmap output.

use serde::{Deserialize, Serialize};
use sketchdial_core::raster::{draw_line, Bitmap};
use sketchdial_core::stroke::Polyline;

use crate::engine::SketchOrigin;
use crate::session::RegistryEntry;

/// Canvas height over width.
pub const CANVAS_ASPECT: f64 = 0.75;
/// Larger drawing extent per size level, as a fraction of canvas width.
pub const SIZE_SCALES: [f64; 3] = [0.12, 0.18, 0.26];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub id: u64,
    pub class_id: usize,
    pub class_name: String,
    /// Drawing order; later objects are painted on top.
    pub z_order: usize,
    /// Absolute polylines in unit-canvas coordinates (x right, y down, both in [0, 1] on canvas).
    pub polylines: Vec<Polyline>,
    pub redraw_eligible: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CanvasRendering {
    pub aspect: f64,
    pub objects: Vec<PlacedObject>,
}

pub fn size_scale(size_id: usize) -> f64 {
    SIZE_SCALES[size_id.min(SIZE_SCALES.len() - 1)]
}

fn bounds(lines: &[Polyline]) -> Option<(f64, f64, f64, f64)> {
    let mut it = lines.iter().flatten();
    let f = it.next()?;
    Some(it.fold((f[0], f[1], f[0], f[1]), |b, p| {
        (b.0.min(p[0]), b.1.min(p[1]), b.2.max(p[0]), b.3.max(p[1]))
    }))
}

/// Scales a drawing so its larger physical extent equals the size level's share of the
/// canvas width, centers it at `(x, y)` and mirrors it about that center when `mirror` is set.
pub fn place_drawing(
    lines: &[Polyline],
    x: f64,
    y: f64,
    size_id: usize,
    mirror: bool,
) -> Vec<Polyline> {
    let Some((x0, y0, x1, y1)) = bounds(lines) else {
        return Vec::new();
    };
    let extent = (x1 - x0).max(y1 - y0);
    let k = if extent > 0.0 {
        size_scale(size_id) / extent
    } else {
        0.0
    };
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let sx = if mirror { -k } else { k };
    lines
        .iter()
        .map(|l| {
            l.iter()
                .map(|p| [x + (p[0] - mx) * sx, y + (p[1] - my) * k / CANVAS_ASPECT])
                .collect()
        })
        .collect()
}

/// Moves user strokes with their object: translated by the object's displacement since the
/// redraw, rescaled about the object center on size changes and mirrored on flip changes.
pub fn place_user_drawing(lines: &[Polyline], entry: &RegistryEntry) -> Vec<Polyline> {
    let Some(frame) = entry.user_frame else {
        return lines.to_vec();
    };
    let o = &entry.object;
    if frame.x == o.x && frame.y == o.y && frame.size_id == o.size_id && frame.flip == o.flip {
        return lines.to_vec();
    }
    let k = size_scale(o.size_id) / size_scale(frame.size_id);
    let sx = if frame.flip != o.flip { -k } else { k };
    lines
        .iter()
        .map(|l| {
            l.iter()
                .map(|p| [o.x + (p[0] - frame.x) * sx, o.y + (p[1] - frame.y) * k])
                .collect()
        })
        .collect()
}

/// Places every registry entry; z-order follows creation order (ascending id).
pub fn compose_canvas(registry: &[RegistryEntry]) -> CanvasRendering {
    let mut entries: Vec<&RegistryEntry> = registry.iter().collect();
    entries.sort_by_key(|e| e.id);
    let objects = entries
        .iter()
        .enumerate()
        .map(|(z, e)| {
            let o = &e.object;
            let polylines = match (&e.origin, &e.user_polylines) {
                (SketchOrigin::User, Some(lines)) => place_user_drawing(lines, e),
                _ => place_drawing(
                    &e.drawing.to_absolute(),
                    o.x,
                    o.y,
                    o.size_id,
                    o.flip != e.facing_flip,
                ),
            };
            PlacedObject {
                id: e.id,
                class_id: o.class_id,
                class_name: o.class_name().to_string(),
                z_order: z,
                polylines,
                redraw_eligible: e.redraw_eligible(),
            }
        })
        .collect();
    CanvasRendering {
        aspect: CANVAS_ASPECT,
        objects,
    }
}

impl CanvasRendering {
    /// SVG document `width` pixels wide with the canvas aspect.
    pub fn to_svg(&self, width: usize) -> String {
        let w = width as f64;
        let h = (w * self.aspect).round();
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{h}\" viewBox=\"0 0 {width} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        );
        for o in &self.objects {
            s.push_str(&format!(
                "<g id=\"object-{}\" class=\"{}\">\n",
                o.id, o.class_name
            ));
            for l in &o.polylines {
                let pts: Vec<String> = l
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", p[0] * w, p[1] * h))
                    .collect();
                s.push_str(&format!(
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-linecap=\"round\" stroke-linejoin=\"round\"/>\n",
                    pts.join(" ")
                ));
            }
            s.push_str("</g>\n");
        }
        s.push_str("</svg>\n");
        s
    }

    /// One-bit raster of the strokes, `width` pixels wide.
    pub fn to_bitmap(&self, width: usize) -> sketchdial_core::error::Result<Bitmap> {
        let h = ((width as f64) * self.aspect).round().max(1.0) as usize;
        let mut b = Bitmap::new(width, h)?;
        let px = |p: &[f64; 2]| {
            (
                (p[0] * width as f64).round() as i64,
                (p[1] * h as f64).round() as i64,
            )
        };
        for o in &self.objects {
            for l in &o.polylines {
                if l.len() == 1 {
                    draw_line(&mut b, px(&l[0]), px(&l[0]));
                }
                for seg in l.windows(2) {
                    draw_line(&mut b, px(&seg[0]), px(&seg[1]));
                }
            }
        }
        Ok(b)
    }
}
