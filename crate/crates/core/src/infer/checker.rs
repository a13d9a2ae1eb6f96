//! Pixel-level verification of captions: palette labeling, connected
//! components, fill-ratio shape classification and grid positions.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::scene::{gen_scene_in, Category, Claim, Color, Shape, GRID};
use crate::error::Result;
use crate::visual::ImageBuffer;

/// Shape thresholds measured on ground-truth renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub renders: usize,
    pub image_side: usize,
    /// Observed fill-ratio range `[min, max]` per shape, in `Shape::ALL` order.
    pub fill_ranges: [[f64; 2]; 3],
    /// Fill ratio below which a component is a triangle.
    pub triangle_below: f64,
    /// Fill ratio at or above which a component is a square.
    pub square_from: f64,
    /// Smallest object area seen, as a fraction of a grid cell.
    pub min_object_area: f64,
}

const ASSET: &str = include_str!("../../assets/shape_calibration.json");

impl Calibration {
    /// The calibration shipped with the crate.
    pub fn shipped() -> &'static Calibration {
        static C: OnceLock<Calibration> = OnceLock::new();
        C.get_or_init(|| serde_json::from_str(ASSET).expect("bundled calibration parses"))
    }

    pub fn classify(&self, fill: f64) -> Shape {
        if fill < self.triangle_below {
            Shape::Triangle
        } else if fill >= self.square_from {
            Shape::Square
        } else {
            Shape::Circle
        }
    }
}

/// A connected region of one palette color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub color: Color,
    pub area: usize,
    /// Centroid in pixels, `(x, y)`.
    pub centroid: (f64, f64),
    /// Area over bounding-box area.
    pub fill: f64,
}

impl Component {
    /// Centroid in grid units, `(column, row)`, each in `[0, GRID)`.
    pub fn grid_position(&self, side: usize) -> (f32, f32) {
        let cell = side as f64 / GRID as f64;
        (
            (self.centroid.0 / cell).floor().clamp(0.0, (GRID - 1) as f64) as f32,
            (self.centroid.1 / cell).floor().clamp(0.0, (GRID - 1) as f64) as f32,
        )
    }
}

/// Index into `Color::ALL` of the nearest palette entry, or `None` for background.
fn label(rgb: [f32; 3]) -> Option<usize> {
    let d = |c: [f32; 3]| (0..3).map(|i| (rgb[i] - c[i]).powi(2)).sum::<f32>();
    let mut best = None;
    let mut best_d = d([0.0; 3]);
    for (i, c) in Color::ALL.iter().enumerate() {
        let di = d(c.rgb());
        if di < best_d {
            best_d = di;
            best = Some(i);
        }
    }
    best
}

/// Four-connected components of equal palette label.
pub fn components(img: &ImageBuffer) -> Vec<Component> {
    let (h, w) = (img.height, img.width);
    let labels: Vec<Option<usize>> = (0..h * w).map(|i| label(img.pixel(i / w, i % w))).collect();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        let Some(l) = labels[start] else { continue };
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut area, mut sx, mut sy) = (0usize, 0.0, 0.0);
        let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            area += 1;
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            let mut visit = |j: usize| {
                if !seen[j] && labels[j] == Some(l) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        let bbox = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        out.push(Component {
            color: Color::ALL[l],
            area,
            centroid: (sx / area as f64, sy / area as f64),
            fill: area as f64 / bbox,
        });
    }
    out
}

/// An object found in an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub shape: Shape,
    pub color: Color,
    pub position: (f32, f32),
}

pub fn detect(img: &ImageBuffer, cal: &Calibration) -> Vec<Detection> {
    let cell = img.width as f64 / GRID as f64;
    let min_area = (cal.min_object_area * 0.5 * cell * cell).max(1.0);
    components(img)
        .into_iter()
        .filter(|c| c.area as f64 >= min_area)
        .map(|c| Detection {
            shape: cal.classify(c.fill),
            color: c.color,
            position: c.grid_position(img.width),
        })
        .collect()
}

/// Whether the objects found in `img` satisfy `claim`. The object check of the
/// single-object category ignores color; the colors category requires it.
pub fn check(img: &ImageBuffer, category: Category, claim: &Claim, cal: &Calibration) -> bool {
    let found = detect(img, cal);
    let has = |s: Shape| found.iter().any(|d| d.shape == s);
    let has_colored = |c: Color, s: Shape| found.iter().any(|d| d.shape == s && d.color == c);
    match (category, claim) {
        (Category::SingleObject, Claim::Object { shape, .. }) => has(*shape),
        (_, Claim::Object { shape, color }) => has_colored(*color, *shape),
        (_, Claim::Pair { a, b }) => has(*a) && has(*b),
        (_, Claim::Count { shape, n }) => found.iter().filter(|d| d.shape == *shape).count() == *n,
        (_, Claim::Relation { a, relation, b }) => found.iter().any(|da| {
            da.shape == *a
                && found
                    .iter()
                    .any(|db| db.shape == *b && !std::ptr::eq(da, db) && relation.holds(da.position, db.position))
        }),
        (_, Claim::ColoredPair { a, b }) => has_colored(a.0, a.1) && has_colored(b.0, b.1),
    }
}

/// Measures fill ratios of every shape over `renders` random ground-truth scenes
/// and places the thresholds midway between neighboring shape ranges.
pub fn calibrate(renders: usize, side: usize, seed: u64) -> Result<Calibration> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranges = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    let mut min_area = f64::INFINITY;
    let cell = (side / GRID) as f64;
    for i in 0..renders {
        let cat = Category::ALL[i % Category::ALL.len()];
        let scene = gen_scene_in(cat, &mut rng, side);
        let comps = components(&scene.image);
        for o in &scene.spec.objects {
            let cx = (o.col() as f64 + 0.5) * cell;
            let cy = (o.row() as f64 + 0.5) * cell;
            let c = comps
                .iter()
                .filter(|c| c.color == o.color)
                .min_by(|a, b| {
                    let da = (a.centroid.0 - cx).hypot(a.centroid.1 - cy);
                    let db = (b.centroid.0 - cx).hypot(b.centroid.1 - cy);
                    da.total_cmp(&db)
                })
                .expect("every rendered object forms a component");
            let k = Shape::ALL.iter().position(|&s| s == o.shape).expect("known shape");
            ranges[k][0] = ranges[k][0].min(c.fill);
            ranges[k][1] = ranges[k][1].max(c.fill);
            min_area = min_area.min(c.area as f64 / (cell * cell));
        }
    }
    let [circle, square, triangle] = ranges;
    Ok(Calibration {
        renders,
        image_side: side,
        fill_ranges: ranges,
        triangle_below: (triangle[1] + circle[0]) / 2.0,
        square_from: (circle[1] + square[0]) / 2.0,
        min_object_area: min_area,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn shipped_calibration_separates_shapes() {
        let c = Calibration::shipped();
        let [circle, square, triangle] = c.fill_ranges;
        assert!(triangle[1] < c.triangle_below && c.triangle_below < circle[0]);
        assert!(circle[1] < c.square_from && c.square_from <= square[0]);
        let fresh = calibrate(300, c.image_side, 99).unwrap();
        assert_eq!(fresh.classify(triangle[1]), Shape::Triangle);
        assert_eq!(fresh.classify(circle[0]), Shape::Circle);
        assert_eq!(fresh.classify(square[0]), Shape::Square);
    }

    #[test]
    fn ground_truth_renders_always_pass() {
        let cal = Calibration::shipped();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for cat in Category::ALL {
            for _ in 0..200 {
                let s = gen_scene_in(cat, &mut rng, 48);
                assert!(check(&s.image, cat, &s.claim, cal), "{cat}: {:?}", s.spec);
            }
        }
    }

    #[test]
    fn blank_and_noise_images_fail() {
        let cal = Calibration::shipped();
        let blank = ImageBuffer::filled(48, 48, [0.0; 3]).unwrap();
        let claim = Claim::Object {
            shape: Shape::Circle,
            color: Color::Red,
        };
        assert!(!check(&blank, Category::SingleObject, &claim, cal));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        for _ in 0..100 {
            let data = (0..48 * 48 * 3).map(|_| rng.random::<f32>()).collect();
            let img = ImageBuffer::from_data(48, 48, data).unwrap();
            hits += check(&img, Category::SingleObject, &claim, cal) as usize;
        }
        assert!(hits <= 2, "{hits} noise images passed");
    }
}
