use core::f64::consts::TAU;
use core::fmt;

/// A point in meters; `z` is height.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        libm::sqrt(dx * dx + dy * dy + dz * dz)
    }

    /// Distance in the horizontal plane, ignoring height.
    pub fn planar_distance(&self, other: &Point3) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.3}, {:.3}, {:.3})", self.x, self.y, self.z)
    }
}

/// Normalizes an angle into `[0, 2π)`.
pub fn normalize_heading(theta: f64) -> f64 {
    let mut h = libm::fmod(theta, TAU);
    if h < 0.0 {
        h += TAU;
    }
    // fmod of a value just below 0 can round up to TAU
    if h >= TAU {
        h = 0.0;
    }
    h
}

/// Position plus heading. Heading 0 faces +x, increasing counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub position: Point3,
    heading: f64,
}

impl Pose {
    pub fn new(position: Point3, heading: f64) -> Self {
        Self {
            position,
            heading: normalize_heading(heading),
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn set_heading(&mut self, heading: f64) {
        self.heading = normalize_heading(heading);
    }

    /// Unit vector the pose faces, in the horizontal plane.
    pub fn forward(&self) -> (f64, f64) {
        (libm::cos(self.heading), libm::sin(self.heading))
    }

    /// Unit vector to the pose's right, in the horizontal plane.
    pub fn right(&self) -> (f64, f64) {
        (libm::sin(self.heading), -libm::cos(self.heading))
    }
}
