//! Procedural shapes scenes: a 3×3 grid of cells, at most one flat-colored
//! object per cell, on a black background.

use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::visual::ImageBuffer;

pub const GRID: usize = 3;
pub const CELLS: usize = GRID * GRID;
pub const MAX_OBJECTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            Shape::Circle => "circles",
            Shape::Square => "squares",
            Shape::Triangle => "triangles",
        }
    }

    /// Whether the pixel center at offset `(dx, dy)` from the object center is inside.
    pub fn covers(self, side: f32, dx: f32, dy: f32) -> bool {
        let h = side / 2.0;
        match self {
            Shape::Circle => dx * dx + dy * dy < h * h,
            Shape::Square => dx.abs() < h && dy.abs() < h,
            Shape::Triangle => dy > -h && dy < h && dx.abs() < (dy + h) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Purple,
    Cyan,
    Orange,
    White,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Purple,
        Color::Cyan,
        Color::Orange,
        Color::White,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Purple => "purple",
            Color::Cyan => "cyan",
            Color::Orange => "orange",
            Color::White => "white",
        }
    }

    pub fn rgb8(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 200, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::Purple => [150, 0, 200],
            Color::Cyan => [0, 255, 255],
            Color::Orange => [255, 140, 0],
            Color::White => [255, 255, 255],
        }
    }

    pub fn rgb(self) -> [f32; 3] {
        self.rgb8().map(|c| c as f32 / 255.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn name(self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }

    /// Object side in pixels for a given cell side (8 and 12 for 16-pixel cells).
    pub fn side(self, cell: usize) -> f32 {
        match self {
            Size::Small => cell as f32 / 2.0,
            Size::Large => cell as f32 * 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub color: Color,
    pub size: Size,
    /// Grid cell in raster order, `0..9`.
    pub cell: usize,
}

impl SceneObject {
    pub fn row(&self) -> usize {
        self.cell / GRID
    }

    pub fn col(&self) -> usize {
        self.cell % GRID
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    pub fn phrase(self) -> &'static str {
        match self {
            Relation::LeftOf => "left of",
            Relation::RightOf => "right of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    /// Whether grid position `a` stands in this relation to `b`.
    pub fn holds(self, a: (f32, f32), b: (f32, f32)) -> bool {
        match self {
            Relation::LeftOf => a.0 < b.0,
            Relation::RightOf => a.0 > b.0,
            Relation::Above => a.1 < b.1,
            Relation::Below => a.1 > b.1,
        }
    }
}

pub fn position_name(cell: usize) -> &'static str {
    const NAMES: [&str; CELLS] = [
        "top left",
        "top",
        "top right",
        "left",
        "center",
        "right",
        "bottom left",
        "bottom",
        "bottom right",
    ];
    NAMES[cell]
}

pub fn count_word(n: usize) -> &'static str {
    ["zero", "one", "two", "three", "four"][n]
}

/// The six compositional evaluation categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SingleObject,
    TwoObjects,
    Counting,
    Colors,
    Position,
    ColorAttribution,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::SingleObject,
        Category::TwoObjects,
        Category::Counting,
        Category::Colors,
        Category::Position,
        Category::ColorAttribution,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::SingleObject => "single_object",
            Category::TwoObjects => "two_objects",
            Category::Counting => "counting",
            Category::Colors => "colors",
            Category::Position => "position",
            Category::ColorAttribution => "color_attribution",
        }
    }

    /// Column heading used in the evaluation table.
    pub fn title(self) -> &'static str {
        match self {
            Category::SingleObject => "Single Obj.",
            Category::TwoObjects => "Two Obj.",
            Category::Counting => "Counting",
            Category::Colors => "Colors",
            Category::Position => "Position",
            Category::ColorAttribution => "Color Attri.",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What a caption asserts about an image; this is what the checker verifies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Claim {
    /// "a red circle"
    Object { shape: Shape, color: Color },
    /// "a circle and a square"
    Pair { a: Shape, b: Shape },
    /// "three circles"
    Count { shape: Shape, n: usize },
    /// "a circle left of a square"
    Relation { a: Shape, relation: Relation, b: Shape },
    /// "a red circle and a blue square"
    ColoredPair { a: (Color, Shape), b: (Color, Shape) },
}

impl Claim {
    pub fn caption(&self) -> String {
        match self {
            Claim::Object { shape, color } => format!("a {} {}", color.name(), shape.name()),
            Claim::Pair { a, b } => format!("a {} and a {}", a.name(), b.name()),
            Claim::Count { shape, n } => format!("{} {}", count_word(*n), shape.plural()),
            Claim::Relation { a, relation, b } => format!("a {} {} a {}", a.name(), relation.phrase(), b.name()),
            Claim::ColoredPair { a, b } => {
                format!("a {} {} and a {} {}", a.0.name(), a.1.name(), b.0.name(), b.1.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapesSceneSpec {
    pub objects: Vec<SceneObject>,
    /// `(a, relation, b)` over object indices, for every ordered pair in distinct rows or columns.
    pub relations: Vec<(usize, Relation, usize)>,
}

impl ShapesSceneSpec {
    pub fn new(mut objects: Vec<SceneObject>) -> Result<Self> {
        if objects.is_empty() || objects.len() > MAX_OBJECTS {
            return Err(Error::domain(format!("scenes hold 1 to {MAX_OBJECTS} objects")));
        }
        objects.sort_by_key(|o| o.cell);
        if objects.windows(2).any(|w| w[0].cell == w[1].cell) || objects.iter().any(|o| o.cell >= CELLS) {
            return Err(Error::domain("objects must occupy distinct grid cells"));
        }
        let mut relations = Vec::new();
        for (i, a) in objects.iter().enumerate() {
            for (j, b) in objects.iter().enumerate() {
                if i == j {
                    continue;
                }
                let pa = (a.col() as f32, a.row() as f32);
                let pb = (b.col() as f32, b.row() as f32);
                for r in Relation::ALL {
                    if r.holds(pa, pb) {
                        relations.push((i, r, j));
                    }
                }
            }
        }
        Ok(Self { objects, relations })
    }

    /// Pixel-exact, antialiasing-free rendering on an `side × side` canvas.
    pub fn render(&self, side: usize) -> ImageBuffer {
        let cell = side / GRID;
        let mut img = ImageBuffer::filled(side, side, [0.0; 3]).expect("nonzero side");
        for o in &self.objects {
            let s = o.size.side(cell);
            let cx = (o.col() * cell) as f32 + cell as f32 / 2.0;
            let cy = (o.row() * cell) as f32 + cell as f32 / 2.0;
            let rgb = o.color.rgb();
            for y in o.row() * cell..(o.row() + 1) * cell {
                for x in o.col() * cell..(o.col() + 1) * cell {
                    if o.shape.covers(s, x as f32 + 0.5 - cx, y as f32 + 0.5 - cy) {
                        img.set_pixel(y, x, rgb);
                    }
                }
            }
        }
        img
    }

    /// "a large red circle at top left and a small blue square at center"
    pub fn dense_caption(&self) -> String {
        self.objects
            .iter()
            .map(|o| {
                format!(
                    "a {} {} {} at {}",
                    o.size.name(),
                    o.color.name(),
                    o.shape.name(),
                    position_name(o.cell)
                )
            })
            .collect::<Vec<_>>()
            .join(" and ")
    }

    pub fn count(&self, shape: Shape) -> usize {
        self.objects.iter().filter(|o| o.shape == shape).count()
    }
}

/// One rendered scene with the claim its template caption makes.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub category: Category,
    pub spec: ShapesSceneSpec,
    pub claim: Claim,
    pub image: ImageBuffer,
}

impl Scene {
    pub fn caption(&self) -> String {
        self.claim.caption()
    }
}

fn object<R: Rng>(rng: &mut R, shape: Shape, color: Color, cell: usize) -> SceneObject {
    let size = if rng.random_bool(0.5) { Size::Small } else { Size::Large };
    SceneObject {
        shape,
        color,
        size,
        cell,
    }
}

fn any_color<R: Rng>(rng: &mut R) -> Color {
    *Color::ALL.choose(rng).expect("palette")
}

fn two_shapes<R: Rng>(rng: &mut R) -> (Shape, Shape) {
    let mut s = Shape::ALL;
    s.shuffle(rng);
    (s[0], s[1])
}

fn cells<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut c: Vec<usize> = (0..CELLS).collect();
    c.shuffle(rng);
    c.truncate(n);
    c
}

/// A scene whose template caption belongs to `category`, rendered at `side`.
pub fn gen_scene_in<R: Rng>(category: Category, rng: &mut R, side: usize) -> Scene {
    let (objects, claim) = match category {
        Category::SingleObject | Category::Colors => {
            let shape = *Shape::ALL.choose(rng).expect("shapes");
            let color = any_color(rng);
            let cell = rng.random_range(0..CELLS);
            let o = object(rng, shape, color, cell);
            (vec![o], Claim::Object { shape, color })
        }
        Category::TwoObjects => {
            let (a, b) = two_shapes(rng);
            let c = cells(rng, 2);
            let (ca, cb) = (any_color(rng), any_color(rng));
            (vec![object(rng, a, ca, c[0]), object(rng, b, cb, c[1])], Claim::Pair { a, b })
        }
        Category::Counting => {
            let shape = *Shape::ALL.choose(rng).expect("shapes");
            let n = rng.random_range(2..=MAX_OBJECTS);
            let objs = cells(rng, n)
                .into_iter()
                .map(|c| {
                    let color = any_color(rng);
                    object(rng, shape, color, c)
                })
                .collect();
            (objs, Claim::Count { shape, n })
        }
        Category::Position => {
            let (a, b) = two_shapes(rng);
            let relation = *Relation::ALL.choose(rng).expect("relations");
            let (ca, cb) = loop {
                let c = cells(rng, 2);
                let pa = ((c[0] % GRID) as f32, (c[0] / GRID) as f32);
                let pb = ((c[1] % GRID) as f32, (c[1] / GRID) as f32);
                if relation.holds(pa, pb) {
                    break (c[0], c[1]);
                }
            };
            let (ka, kb) = (any_color(rng), any_color(rng));
            (
                vec![object(rng, a, ka, ca), object(rng, b, kb, cb)],
                Claim::Relation { a, relation, b },
            )
        }
        Category::ColorAttribution => {
            let (a, b) = two_shapes(rng);
            let mut colors = Color::ALL;
            colors.shuffle(rng);
            let c = cells(rng, 2);
            (
                vec![object(rng, a, colors[0], c[0]), object(rng, b, colors[1], c[1])],
                Claim::ColoredPair {
                    a: (colors[0], a),
                    b: (colors[1], b),
                },
            )
        }
    };
    let spec = ShapesSceneSpec::new(objects).expect("generated scenes are valid");
    let image = spec.render(side);
    Scene {
        category,
        spec,
        claim,
        image,
    }
}

/// Deterministic scene for `seed`; the category is drawn uniformly.
pub fn gen_scene(seed: u64, side: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let category = *Category::ALL.choose(&mut rng).expect("categories");
    gen_scene_in(category, &mut rng, side)
}

/// Category-name prompt for a single-object scene, e.g. "red circle".
pub fn category_prompt(spec: &ShapesSceneSpec) -> Option<String> {
    match spec.objects.as_slice() {
        [o] => Some(format!("{} {}", o.color.name(), o.shape.name())),
        _ => None,
    }
}

/// A question about the scene with a unique, short answer.
pub fn question_answer<R: Rng>(spec: &ShapesSceneSpec, rng: &mut R) -> (String, String) {
    let singles: Vec<&SceneObject> = spec
        .objects
        .iter()
        .filter(|o| spec.count(o.shape) == 1)
        .collect();
    let choice = rng.random_range(0..3);
    match (choice, singles.choose(rng)) {
        (1, Some(o)) => (format!("what color is the {}", o.shape.name()), o.color.name().to_string()),
        (2, Some(o)) => (format!("where is the {}", o.shape.name()), position_name(o.cell).to_string()),
        _ => {
            let shape = *Shape::ALL.choose(rng).expect("shapes");
            (
                format!("how many {} are there", shape.plural()),
                count_word(spec.count(shape)).to_string(),
            )
        }
    }
}

/// Free text about the domain for the pure-text corpus.
pub fn text_passage<R: Rng>(rng: &mut R) -> String {
    match rng.random_range(0..4) {
        0 => "a square has four sides".into(),
        1 => "a triangle has three sides".into(),
        2 => "a circle is round".into(),
        _ => {
            let scene = gen_scene_in(*Category::ALL.choose(rng).expect("categories"), rng, 48);
            scene.spec.dense_caption()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vocab;

    #[test]
    fn render_is_deterministic_and_exact() {
        let a = gen_scene(42, 48);
        let b = gen_scene(42, 48);
        assert_eq!(a.image.to_rgb8(), b.image.to_rgb8());
        let palette: Vec<[u8; 3]> = Color::ALL.iter().map(|c| c.rgb8()).collect();
        for px in a.image.to_rgb8().chunks(3) {
            assert!(px == [0, 0, 0] || palette.contains(&[px[0], px[1], px[2]]));
        }
    }

    #[test]
    fn object_sizes_in_pixels() {
        let spec = |shape, size| {
            ShapesSceneSpec::new(vec![SceneObject {
                shape,
                color: Color::White,
                size,
                cell: 4,
            }])
            .unwrap()
            .render(48)
        };
        let lit = |img: &ImageBuffer| img.data.chunks(3).filter(|p| p[0] > 0.0).count();
        assert_eq!(lit(&spec(Shape::Square, Size::Small)), 64);
        assert_eq!(lit(&spec(Shape::Square, Size::Large)), 144);
        let c = lit(&spec(Shape::Circle, Size::Large));
        assert!(c > 100 && c < 144, "{c}");
    }

    #[test]
    fn single_red_circle_caption() {
        let spec = ShapesSceneSpec::new(vec![SceneObject {
            shape: Shape::Circle,
            color: Color::Red,
            size: Size::Large,
            cell: 4,
        }])
        .unwrap();
        let claim = Claim::Object {
            shape: Shape::Circle,
            color: Color::Red,
        };
        assert_eq!(claim.caption(), "a red circle");
        assert_eq!(spec.dense_caption(), "a large red circle at center");
        assert_eq!(category_prompt(&spec).unwrap(), "red circle");
    }

    #[test]
    fn spec_validation() {
        let o = |cell| SceneObject {
            shape: Shape::Square,
            color: Color::Blue,
            size: Size::Small,
            cell,
        };
        assert!(ShapesSceneSpec::new(vec![]).is_err());
        assert!(ShapesSceneSpec::new(vec![o(1), o(1)]).is_err());
        assert!(ShapesSceneSpec::new(vec![o(0), o(1), o(2), o(3), o(4)]).is_err());
        let s = ShapesSceneSpec::new(vec![o(2), o(0)]).unwrap();
        assert_eq!(s.objects[0].cell, 0);
        assert!(s.relations.contains(&(0, Relation::LeftOf, 1)));
        assert!(!s.relations.iter().any(|r| r.1 == Relation::Above));
    }

    #[test]
    fn every_caption_encodes() {
        let vocab = Vocab::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..300 {
            let s = gen_scene(seed, 48);
            vocab.encode(&s.caption()).unwrap();
            vocab.encode(&s.spec.dense_caption()).unwrap();
            let (q, a) = question_answer(&s.spec, &mut rng);
            vocab.encode(&q).unwrap();
            vocab.encode(&a).unwrap();
            vocab.encode(&text_passage(&mut rng)).unwrap();
        }
    }

    #[test]
    fn claims_hold_on_their_specs() {
        for seed in 0..500 {
            let s = gen_scene(seed, 48);
            match &s.claim {
                Claim::Count { shape, n } => assert_eq!(s.spec.count(*shape), *n),
                Claim::Relation { a, relation, b } => {
                    let ia = s.spec.objects.iter().position(|o| o.shape == *a).unwrap();
                    let ib = s.spec.objects.iter().position(|o| o.shape == *b).unwrap();
                    assert!(s.spec.relations.contains(&(ia, *relation, ib)));
                }
                Claim::ColoredPair { a, b } => {
                    assert!(a.0 != b.0 && a.1 != b.1);
                }
                _ => {}
            }
        }
    }
}
