//! Parametric shape families rendered into small grayscale images.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::imgproc::GrayImage;
use crate::nn::Rng;

pub const BACKGROUND: f64 = 16.0;
pub const FOREGROUND: f64 = 224.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Bar,
    Cross,
    LShape,
    Disk,
    Ring,
    Corner,
    Tee,
    U,
    X,
    Z,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::Bar,
        Family::Cross,
        Family::LShape,
        Family::Disk,
        Family::Ring,
        Family::Corner,
        Family::Tee,
        Family::U,
        Family::X,
        Family::Z,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Bar => "bar",
            Family::Cross => "cross",
            Family::LShape => "lshape",
            Family::Disk => "disk",
            Family::Ring => "ring",
            Family::Corner => "corner",
            Family::Tee => "tee",
            Family::U => "u",
            Family::X => "x",
            Family::Z => "z",
        }
    }

    pub fn from_index(i: usize) -> Family {
        Self::ALL[i % Self::ALL.len()]
    }

    fn primitives(self) -> Vec<Primitive> {
        use Primitive::*;
        let seg = |ax, ay, bx, by, t| Segment {
            a: (ax, ay),
            b: (bx, by),
            half: t / 2.0,
        };
        match self {
            Family::Bar => vec![seg(-0.85, 0.0, 0.85, 0.0, 0.4)],
            Family::Cross => vec![
                seg(-0.85, 0.0, 0.85, 0.0, 0.3),
                seg(0.0, -0.85, 0.0, 0.85, 0.3),
            ],
            // a pistol-like silhouette: long barrel with a grip hanging off one end
            Family::LShape => vec![
                seg(-0.8, -0.45, 0.85, -0.45, 0.35),
                seg(-0.6, -0.45, -0.6, 0.85, 0.35),
            ],
            Family::Disk => vec![Disk {
                c: (0.0, 0.0),
                r: 0.7,
            }],
            Family::Ring => vec![Ring {
                c: (0.0, 0.0),
                inner: 0.45,
                outer: 0.85,
            }],
            Family::Corner => vec![Triangle {
                p: [(-0.85, -0.85), (-0.85, 0.85), (0.85, 0.85)],
            }],
            Family::Tee => vec![
                seg(-0.85, -0.7, 0.85, -0.7, 0.3),
                seg(0.0, -0.7, 0.0, 0.85, 0.3),
            ],
            Family::U => vec![
                seg(-0.65, -0.85, -0.65, 0.7, 0.3),
                seg(-0.65, 0.7, 0.65, 0.7, 0.3),
                seg(0.65, 0.7, 0.65, -0.85, 0.3),
            ],
            Family::X => vec![
                seg(-0.75, -0.75, 0.75, 0.75, 0.3),
                seg(-0.75, 0.75, 0.75, -0.75, 0.3),
            ],
            Family::Z => vec![
                seg(-0.75, -0.75, 0.75, -0.75, 0.3),
                seg(0.75, -0.75, -0.75, 0.75, 0.3),
                seg(-0.75, 0.75, 0.75, 0.75, 0.3),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Segment {
        a: (f64, f64),
        b: (f64, f64),
        half: f64,
    },
    Disk {
        c: (f64, f64),
        r: f64,
    },
    Ring {
        c: (f64, f64),
        inner: f64,
        outer: f64,
    },
    Triangle {
        p: [(f64, f64); 3],
    },
}

impl Primitive {
    fn contains(&self, (x, y): (f64, f64)) -> bool {
        match *self {
            Primitive::Segment { a, b, half } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let t = (((x - a.0) * dx + (y - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                let (px, py) = (a.0 + t * dx - x, a.1 + t * dy - y);
                px * px + py * py <= half * half
            }
            Primitive::Disk { c, r } => (x - c.0).powi(2) + (y - c.1).powi(2) <= r * r,
            Primitive::Ring { c, inner, outer } => {
                let d2 = (x - c.0).powi(2) + (y - c.1).powi(2);
                d2 <= outer * outer && d2 >= inner * inner
            }
            Primitive::Triangle { p } => {
                let side = |a: (f64, f64), b: (f64, f64)| {
                    (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0)
                };
                let (s0, s1, s2) = (side(p[0], p[1]), side(p[1], p[2]), side(p[2], p[0]));
                (s0 >= 0.0 && s1 >= 0.0 && s2 >= 0.0) || (s0 <= 0.0 && s1 <= 0.0 && s2 <= 0.0)
            }
        }
    }
}

/// Placement of a shape inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    /// Centre offset from the image centre, pixels.
    pub dx: f64,
    pub dy: f64,
    /// Half-extent of the unit shape as a fraction of half the image side.
    pub scale: f64,
    /// Radians.
    pub rotation: f64,
    /// Horizontal stretch for class variants beyond the ten base families.
    pub stretch: f64,
}

impl Pose {
    pub const CENTERED: Pose = Pose {
        dx: 0.0,
        dy: 0.0,
        scale: 0.8,
        rotation: 0.0,
        stretch: 1.0,
    };

    pub const MAX_SHIFT: f64 = 3.0;
    pub const SCALE_RANGE: (f64, f64) = (0.7, 0.9);
    pub const MAX_ROTATION: f64 = 15.0 * std::f64::consts::PI / 180.0;

    pub fn random(rng: &mut Rng, stretch: f64) -> Pose {
        Pose {
            dx: rng.gen_range(-Self::MAX_SHIFT..=Self::MAX_SHIFT),
            dy: rng.gen_range(-Self::MAX_SHIFT..=Self::MAX_SHIFT),
            scale: rng.gen_range(Self::SCALE_RANGE.0..=Self::SCALE_RANGE.1),
            rotation: rng.gen_range(-Self::MAX_ROTATION..=Self::MAX_ROTATION),
            stretch,
        }
    }
}

/// Renders `family` at `pose` into a `size x size` image, adding Gaussian
/// noise with standard deviation `noise_std` (fraction of the 0..255 range).
pub fn render_shape(
    family: Family,
    pose: Pose,
    size: usize,
    noise_std: f64,
    rng: &mut Rng,
) -> GrayImage {
    let prims = family.primitives();
    let half = size as f64 / 2.0;
    let radius = pose.scale * half;
    let (sin, cos) = pose.rotation.sin_cos();
    let noise =
        (noise_std > 0.0).then(|| Normal::new(0.0, noise_std * 255.0).expect("positive std"));
    GrayImage::from_fn(size, size, |x, y| {
        let px = x as f64 + 0.5 - half - pose.dx;
        let py = y as f64 + 0.5 - half - pose.dy;
        // inverse rotation into shape coordinates
        let u = (cos * px + sin * py) / (radius * pose.stretch);
        let v = (-sin * px + cos * py) / radius;
        let inside = prims.iter().any(|p| p.contains((u, v)));
        let mut value = if inside { FOREGROUND } else { BACKGROUND };
        if let Some(n) = &noise {
            value += n.sample(rng);
        }
        value.round().clamp(0.0, 255.0) as u8
    })
    .expect("size >= 1")
}
