use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    White,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Stripes,
    Dots,
    Checker,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross, Shape::Ring];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Cyan,
        Color::Magenta,
        Color::White,
        Color::Black,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
            Color::White => "white",
            Color::Black => "black",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Channel intensities in `[0, 1]`.
    pub fn rgb(self) -> [f64; 3] {
        match self {
            Color::Red => [1.0, 0.0, 0.0],
            Color::Green => [0.0, 1.0, 0.0],
            Color::Blue => [0.0, 0.0, 1.0],
            Color::Yellow => [1.0, 1.0, 0.0],
            Color::Cyan => [0.0, 1.0, 1.0],
            Color::Magenta => [1.0, 0.0, 1.0],
            Color::White => [1.0, 1.0, 1.0],
            Color::Black => [0.0, 0.0, 0.0],
        }
    }

    /// Pixel value in `[-1, 1]`.
    pub fn pixel(self) -> [f64; 3] {
        self.rgb().map(|c| 2.0 * c - 1.0)
    }

    /// Texture accent: the color pulled halfway toward mid-gray. Always
    /// nearer to its own color than to any other prototype.
    pub fn shade_pixel(self) -> [f64; 3] {
        self.pixel().map(|c| 0.5 * c)
    }
}

impl Texture {
    pub const ALL: [Texture; 4] = [Texture::Solid, Texture::Stripes, Texture::Dots, Texture::Checker];

    pub fn word(self) -> &'static str {
        match self {
            Texture::Solid => "solid",
            Texture::Stripes => "striped",
            Texture::Dots => "dotted",
            Texture::Checker => "checkered",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether the pixel at shape-local integer offset `(lx, ly)` carries the accent shade.
    pub fn shaded(self, lx: i32, ly: i32) -> bool {
        match self {
            Texture::Solid => false,
            Texture::Stripes => ly.div_euclid(2).rem_euclid(2) == 1,
            Texture::Dots => matches!(lx.rem_euclid(4), 1 | 2) && matches!(ly.rem_euclid(4), 1 | 2),
            Texture::Checker => (lx.div_euclid(2) + ly.div_euclid(2)).rem_euclid(2) == 1,
        }
    }
}

pub const MIN_SCALE: f64 = 0.3;
pub const MAX_SCALE: f64 = 0.8;
/// Scale used for every enumerated spec.
pub const CANONICAL_SCALE: f64 = 0.75;

/// Number of ids in the enumeration, including invalid fill == background slots.
pub const SPEC_ID_SPACE: usize = 5 * 8 * 4 * 8;

/// Procedural description of one synthetic visual concept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub shape: Shape,
    pub fill_color: Color,
    pub texture: Texture,
    pub background_color: Color,
    pub scale: f64,
    pub is_novel: bool,
}

/// Held-out `(texture, color, shape)` combinations. Every shape, color and
/// texture still appears in the pretraining corpus through other triples.
pub fn is_novel_triple(shape: Shape, fill: Color, texture: Texture) -> bool {
    (shape.index() + 2 * fill.index() + 3 * texture.index()) % 10 == 7
}

impl ConceptSpec {
    pub fn new(shape: Shape, fill_color: Color, texture: Texture, background_color: Color) -> Result<Self> {
        Self::with_scale(shape, fill_color, texture, background_color, CANONICAL_SCALE)
    }

    pub fn with_scale(
        shape: Shape,
        fill_color: Color,
        texture: Texture,
        background_color: Color,
        scale: f64,
    ) -> Result<Self> {
        if fill_color == background_color {
            return Err(Error::Usage(format!(
                "fill and background are both {}",
                fill_color.word()
            )));
        }
        if !(MIN_SCALE..=MAX_SCALE).contains(&scale) {
            return Err(Error::Usage(format!("scale {scale} outside [{MIN_SCALE}, {MAX_SCALE}]")));
        }
        Ok(Self {
            shape,
            fill_color,
            texture,
            background_color,
            scale,
            is_novel: is_novel_triple(shape, fill_color, texture),
        })
    }

    /// Position in the `(shape, fill, texture, background)` enumeration.
    pub fn id(&self) -> usize {
        ((self.shape.index() * 8 + self.fill_color.index()) * 4 + self.texture.index()) * 8
            + self.background_color.index()
    }

    pub fn from_id(id: usize) -> Result<Self> {
        if id >= SPEC_ID_SPACE {
            return Err(Error::Lookup(format!("spec id {id} out of range")));
        }
        let bg = Color::ALL[id % 8];
        let texture = Texture::ALL[(id / 8) % 4];
        let fill = Color::ALL[(id / 32) % 8];
        let shape = Shape::ALL[id / 256];
        Self::new(shape, fill, texture, bg)
    }

    /// Parse `texture:color:shape:background`, e.g. `striped:red:circle:blue`.
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        let [texture, fill, shape, bg] = parts.as_slice() else {
            return Err(Error::Usage(format!(
                "concept spec `{text}` must look like texture:color:shape:background"
            )));
        };
        let texture = Texture::ALL
            .into_iter()
            .find(|t| t.word() == *texture)
            .ok_or_else(|| Error::Usage(format!("unknown texture `{texture}`")))?;
        let fill = parse_color(fill)?;
        let shape = Shape::ALL
            .into_iter()
            .find(|s| s.word() == *shape)
            .ok_or_else(|| Error::Usage(format!("unknown shape `{shape}`")))?;
        let bg = parse_color(bg)?;
        Self::new(shape, fill, texture, bg)
    }

    pub fn label(&self) -> String {
        format!(
            "{}:{}:{}:{}",
            self.texture.word(),
            self.fill_color.word(),
            self.shape.word(),
            self.background_color.word()
        )
    }
}

fn parse_color(word: &str) -> Result<Color> {
    Color::ALL
        .into_iter()
        .find(|c| c.word() == word)
        .ok_or_else(|| Error::Usage(format!("unknown color `{word}`")))
}

/// All valid specs at the canonical scale, in id order.
pub fn all_specs() -> Vec<ConceptSpec> {
    (0..SPEC_ID_SPACE).filter_map(|id| ConceptSpec::from_id(id).ok()).collect()
}

pub fn held_in_specs() -> Vec<ConceptSpec> {
    all_specs().into_iter().filter(|s| !s.is_novel).collect()
}

pub fn novel_specs() -> Vec<ConceptSpec> {
    all_specs().into_iter().filter(|s| s.is_novel).collect()
}
