//! 3×3 local pattern operators on real-valued planes: LBP, the uniform-pattern
//! mapping, LTP, and the local tetra pattern family (direction codes, tetra
//! codes, their binary split and the gradient-magnitude pattern).
//!
//! All operators compare neighbours `q_n` against the centre `p` using a
//! [`NeighborhoodOrder`]; the unit step is `u[x] = 1` for `x >= 0`.
//! Gradients use the right neighbour as `q_h` and the lower neighbour as `q_v`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::GrayImage;

/// Number of histogram bins per channel: 58 uniform codes plus one catch-all.
pub const UNIFORM_BINS: usize = 59;
/// 12 tetra binary channels and one magnitude channel.
pub const CHANNELS: usize = 13;

/// Real-valued row-major plane; texture operators and Gabor responses live here.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::param(
                "plane",
                format!("{} values for {width}x{height}", data.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().iter().map(|&p| p as f64).collect(),
        }
    }

    /// Promotes the `w`×`h` window at `(x, y)` of an 8-bit image.
    pub fn from_gray_window(img: &GrayImage, x: usize, y: usize, w: usize, h: usize) -> Result<Self> {
        if x + w > img.width() || y + h > img.height() {
            return Err(Error::param("window", "exceeds image bounds"));
        }
        Self::from_fn(w, h, |dx, dy| img.get(x + dx, y + dy) as f64)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// The order in which the 8 neighbours are assigned bits `n = 0..7`,
/// as `(dy, dx)` offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodOrder {
    offsets: [(i8, i8); 8],
}

impl Default for NeighborhoodOrder {
    /// Starts at the top-left neighbour and runs clockwise.
    fn default() -> Self {
        Self {
            offsets: [
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, 1),
                (1, 1),
                (1, 0),
                (1, -1),
                (0, -1),
            ],
        }
    }
}

impl NeighborhoodOrder {
    pub fn new(offsets: [(i8, i8); 8]) -> Result<Self> {
        let mut seen = [false; 9];
        for &(dy, dx) in &offsets {
            if !(-1..=1).contains(&dy) || !(-1..=1).contains(&dx) || (dy, dx) == (0, 0) {
                return Err(Error::param(
                    "neighborhood_order",
                    format!("({dy},{dx}) is not a 3x3 neighbour"),
                ));
            }
            let slot = ((dy + 1) * 3 + dx + 1) as usize;
            if std::mem::replace(&mut seen[slot], true) {
                return Err(Error::param(
                    "neighborhood_order",
                    format!("({dy},{dx}) listed twice"),
                ));
            }
        }
        Ok(Self { offsets })
    }

    pub fn offsets(&self) -> &[(i8, i8); 8] {
        &self.offsets
    }

    #[inline]
    fn neighbor(&self, n: usize, x: usize, y: usize) -> (usize, usize) {
        let (dy, dx) = self.offsets[n];
        ((x as isize + dx as isize) as usize, (y as isize + dy as isize) as usize)
    }
}

/// Quadrant of the `(G_h, G_v)` gradient, `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction(u8);

impl Direction {
    pub const ALL: [Direction; 4] = [Direction(1), Direction(2), Direction(3), Direction(4)];

    pub fn new(value: u8) -> Result<Self> {
        if (1..=4).contains(&value) {
            Ok(Direction(value))
        } else {
            Err(Error::param("direction", format!("{value} not in 1..=4")))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    #[inline]
    pub fn from_gradients(gh: f64, gv: f64) -> Self {
        Direction(match (gh >= 0.0, gv >= 0.0) {
            (true, true) => 1,
            (false, true) => 2,
            (false, false) => 3,
            (true, false) => 4,
        })
    }

    /// The three directions other than `self`, ascending.
    pub fn others(self) -> [Direction; 3] {
        let mut out = [Direction(0); 3];
        let mut k = 0;
        for d in Direction::ALL {
            if d != self {
                out[k] = d;
                k += 1;
            }
        }
        out
    }
}

/// One of the 13 tetra-pattern-family histogram channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Binary pattern marking neighbours whose direction equals `target`,
    /// collected at pixels whose own direction is `center`.
    Tetra { center: Direction, target: Direction },
    Magnitude,
}

impl Channel {
    /// Channels in layout order: `(center 1, targets 2,3,4)`, `(center 2,
    /// targets 1,3,4)`, ..., then the magnitude channel.
    pub fn all() -> [Channel; CHANNELS] {
        let mut out = [Channel::Magnitude; CHANNELS];
        let mut k = 0;
        for center in Direction::ALL {
            for target in center.others() {
                out[k] = Channel::Tetra { center, target };
                k += 1;
            }
        }
        out
    }

    /// Position of the first of the three channels for `center`.
    #[inline]
    pub fn tetra_base(center: Direction) -> usize {
        (center.0 as usize - 1) * 3
    }
}

/// Number of circular 0/1 changes in an 8-bit code.
#[inline]
pub fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

const fn build_uniform_table() -> [u8; 256] {
    let mut table = [58u8; 256];
    let mut rank = 0u8;
    let mut code = 0usize;
    while code < 256 {
        let c = code as u8;
        if (c ^ c.rotate_right(1)).count_ones() <= 2 {
            table[code] = rank;
            rank += 1;
        }
        code += 1;
    }
    table
}

static UNIFORM_TABLE: [u8; 256] = build_uniform_table();

/// Rank of `code` among the 58 uniform codes in ascending order, or 58 for
/// non-uniform codes.
#[inline]
pub fn uniform_index(code: u8) -> usize {
    UNIFORM_TABLE[code as usize] as usize
}

fn require_interior(plane: &Plane, x: usize, y: usize, lo: usize, hi: usize) -> Result<()> {
    if x < lo || y < lo || x + hi >= plane.width || y + hi >= plane.height {
        return Err(Error::param(
            "pixel",
            format!(
                "({x},{y}) lacks the required neighbours in a {}x{} plane",
                plane.width, plane.height
            ),
        ));
    }
    Ok(())
}

/// `Σ 2ⁿ·u[I(q_n) − I(p)]`.
pub fn lbp(plane: &Plane, x: usize, y: usize, order: &NeighborhoodOrder) -> Result<u8> {
    require_interior(plane, x, y, 1, 1)?;
    let c = plane.get(x, y);
    let mut code = 0u8;
    for n in 0..8 {
        let (qx, qy) = order.neighbor(n, x, y);
        code |= ((plane.get(qx, qy) - c >= 0.0) as u8) << n;
    }
    Ok(code)
}

/// Upper and lower binary halves of the ternary pattern with dead zone `t`.
pub fn ltp(
    plane: &Plane,
    x: usize,
    y: usize,
    t: f64,
    order: &NeighborhoodOrder,
) -> Result<(u8, u8)> {
    if !(t > 0.0) {
        return Err(Error::param("ltp_threshold", format!("{t} must be > 0")));
    }
    require_interior(plane, x, y, 1, 1)?;
    let c = plane.get(x, y);
    let (mut upper, mut lower) = (0u8, 0u8);
    for n in 0..8 {
        let (qx, qy) = order.neighbor(n, x, y);
        let diff = plane.get(qx, qy) - c;
        if diff >= t {
            upper |= 1 << n;
        } else if diff <= -t {
            lower |= 1 << n;
        }
    }
    Ok((upper, lower))
}

#[inline]
fn gradients(plane: &Plane, x: usize, y: usize) -> (f64, f64) {
    let c = plane.get(x, y);
    (plane.get(x + 1, y) - c, plane.get(x, y + 1) - c)
}

/// Quadrant code of the centre pixel's gradient.
pub fn direction_code(plane: &Plane, x: usize, y: usize) -> Result<Direction> {
    require_interior(plane, x, y, 0, 1)?;
    let (gh, gv) = gradients(plane, x, y);
    Ok(Direction::from_gradients(gh, gv))
}

/// Per-neighbour tetra symbols: 0 where the neighbour shares the centre's
/// direction, otherwise the neighbour's direction.
pub fn ltrp(plane: &Plane, x: usize, y: usize, order: &NeighborhoodOrder) -> Result<[u8; 8]> {
    require_interior(plane, x, y, 1, 2)?;
    let center = direction_code(plane, x, y)?;
    let mut tetra = [0u8; 8];
    for (n, t) in tetra.iter_mut().enumerate() {
        let (qx, qy) = order.neighbor(n, x, y);
        let (gh, gv) = gradients(plane, qx, qy);
        let d = Direction::from_gradients(gh, gv);
        *t = if d == center { 0 } else { d.0 };
    }
    Ok(tetra)
}

/// Splits a tetra code into one binary pattern per non-centre direction,
/// ascending by direction.
pub fn ltrp_binary_split(tetra: &[u8; 8], center: Direction) -> [u8; 3] {
    let mut out = [0u8; 3];
    for (k, d) in center.others().into_iter().enumerate() {
        for (n, &t) in tetra.iter().enumerate() {
            out[k] |= ((t == d.0) as u8) << n;
        }
    }
    out
}

/// `Σ 2ⁿ·u[G_m(p) − G_m(q_n)]` with `G_m = √(G_h² + G_v²)`.
pub fn magnitude_pattern(
    plane: &Plane,
    x: usize,
    y: usize,
    order: &NeighborhoodOrder,
) -> Result<u8> {
    require_interior(plane, x, y, 1, 2)?;
    let mag = |x, y| {
        let (gh, gv) = gradients(plane, x, y);
        (gh * gh + gv * gv).sqrt()
    };
    let c = mag(x, y);
    let mut code = 0u8;
    for n in 0..8 {
        let (qx, qy) = order.neighbor(n, x, y);
        code |= ((c - mag(qx, qy) >= 0.0) as u8) << n;
    }
    Ok(code)
}

/// Direction and gradient magnitude precomputed for every pixel that has a
/// right and a lower neighbour.
pub struct GradientField {
    width: usize,
    height: usize,
    dirs: Vec<Direction>,
    mags: Vec<f64>,
}

/// The tetra-family codes of one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TetraCodes {
    pub center: Direction,
    pub split: [u8; 3],
    pub magnitude: u8,
}

impl GradientField {
    pub fn new(plane: &Plane) -> Self {
        let (width, height) = (plane.width, plane.height);
        let mut dirs = vec![Direction(1); width * height];
        let mut mags = vec![0.0; width * height];
        for y in 0..height.saturating_sub(1) {
            for x in 0..width.saturating_sub(1) {
                let (gh, gv) = gradients(plane, x, y);
                dirs[y * width + x] = Direction::from_gradients(gh, gv);
                mags[y * width + x] = (gh * gh + gv * gv).sqrt();
            }
        }
        Self {
            width,
            height,
            dirs,
            mags,
        }
    }

    /// Whether the full tetra footprint around `(x, y)` is in bounds.
    #[inline]
    pub fn has_footprint(&self, x: usize, y: usize) -> bool {
        x >= 1 && y >= 1 && x + 2 < self.width && y + 2 < self.height
    }

    /// Tetra split and magnitude pattern at `(x, y)`; the caller guarantees
    /// [`Self::has_footprint`].
    #[inline]
    pub fn codes(&self, x: usize, y: usize, order: &NeighborhoodOrder) -> TetraCodes {
        let i = y * self.width + x;
        let center = self.dirs[i];
        let cm = self.mags[i];
        let others = center.others();
        let mut split = [0u8; 3];
        let mut magnitude = 0u8;
        for n in 0..8 {
            let (qx, qy) = order.neighbor(n, x, y);
            let j = qy * self.width + qx;
            let d = self.dirs[j];
            if d != center {
                let k = others.iter().position(|&o| o == d).unwrap_or(0);
                split[k] |= 1 << n;
            }
            magnitude |= ((cm - self.mags[j] >= 0.0) as u8) << n;
        }
        TetraCodes {
            center,
            split,
            magnitude,
        }
    }
}
