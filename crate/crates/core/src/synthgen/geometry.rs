use crate::scene::Point;

pub fn dir(h: f64) -> Point {
    [h.cos(), h.sin()]
}

pub fn left_normal(h: f64) -> Point {
    [-h.sin(), h.cos()]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

/// Constant-curvature piece: a line when `curvature == 0`, else a circular arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Seg {
    pub start: Point,
    pub heading: f64,
    pub curvature: f64,
    pub length: f64,
}

impl Seg {
    pub fn line(start: Point, heading: f64, length: f64) -> Self {
        Self {
            start,
            heading,
            curvature: 0.0,
            length,
        }
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        self.heading + self.curvature * s
    }

    pub fn point_at(&self, s: f64) -> Point {
        let k = self.curvature;
        if k.abs() < 1e-12 {
            return add(self.start, scale(dir(self.heading), s));
        }
        let h = self.heading;
        let t = h + k * s;
        [
            self.start[0] + (t.sin() - h.sin()) / k,
            self.start[1] - (t.cos() - h.cos()) / k,
        ]
    }

    pub fn end(&self) -> Point {
        self.point_at(self.length)
    }

    pub fn end_heading(&self) -> f64 {
        self.heading_at(self.length)
    }

    /// The parallel curve displaced `off` meters along the left normal.
    pub fn offset(&self, off: f64) -> Seg {
        let f = 1.0 - self.curvature * off;
        Seg {
            start: add(self.start, scale(left_normal(self.heading), off)),
            heading: self.heading,
            curvature: self.curvature / f,
            length: self.length * f,
        }
    }
}

/// Chained segments parameterized by arc length, extended linearly past
/// both ends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Route {
    segs: Vec<Seg>,
}

impl Route {
    pub fn new(segs: Vec<Seg>) -> Self {
        assert!(!segs.is_empty());
        Self { segs }
    }

    pub fn segs(&self) -> &[Seg] {
        &self.segs
    }

    pub fn length(&self) -> f64 {
        self.segs.iter().map(|s| s.length).sum()
    }

    pub fn start(&self) -> Point {
        self.segs[0].start
    }

    pub fn end(&self) -> Point {
        self.segs.last().unwrap().end()
    }

    pub fn end_heading(&self) -> f64 {
        self.segs.last().unwrap().end_heading()
    }

    pub fn then(&self, other: &Route) -> Route {
        Route::new(self.segs.iter().chain(&other.segs).copied().collect())
    }

    pub fn offset(&self, off: f64) -> Route {
        Route::new(self.segs.iter().map(|s| s.offset(off)).collect())
    }

    fn locate(&self, s: f64) -> (Seg, f64) {
        let first = self.segs[0];
        if s < 0.0 {
            return (Seg::line(first.start, first.heading, 0.0), s);
        }
        let mut rest = s;
        for seg in &self.segs {
            if rest <= seg.length {
                return (*seg, rest);
            }
            rest -= seg.length;
        }
        let last = self.segs.last().unwrap();
        (Seg::line(last.end(), last.end_heading(), 0.0), rest)
    }

    pub fn point_at(&self, s: f64) -> Point {
        let (seg, local) = self.locate(s);
        seg.point_at(local)
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        let (seg, local) = self.locate(s);
        seg.heading_at(local)
    }
}
