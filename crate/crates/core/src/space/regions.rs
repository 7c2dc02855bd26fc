use crate::error::{Error, GeometryClause, Result};

use super::Grid;

/// Open interval `(left, right)` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

impl Interval {
    pub const fn new(left: f64, right: f64) -> Self {
        Self { left, right }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.left < x && x < self.right
    }

    pub fn length(&self) -> f64 {
        (self.right - self.left).max(0.0)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let left = self.left.max(other.left);
        let right = self.right.min(other.right);
        (left < right).then_some(Interval { left, right })
    }

    fn is_valid(&self) -> bool {
        self.left.is_finite() && self.right.is_finite() && 0.0 <= self.left && self.left < self.right && self.right <= 1.0
    }
}

/// Leader region `O`, follower region `D`, observation regions `O_d^0..2` and
/// the auxiliary set `B` used by the weight functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Regions {
    pub o: Interval,
    pub d: Interval,
    pub od0: Interval,
    pub od1: Interval,
    pub od2: Interval,
    pub b: Option<Interval>,
}

impl Regions {
    fn named(&self) -> [(&'static str, Interval); 5] {
        [("O", self.o), ("D", self.d), ("Od0", self.od0), ("Od1", self.od1), ("Od2", self.od2)]
    }

    /// `B` as given, or the middle half of the longest piece of
    /// `(O ∩ O_d^0) ∖ (O_d^1 ∪ O_d^2)`.
    pub fn auxiliary(&self) -> Option<Interval> {
        if self.b.is_some() {
            return self.b;
        }
        let base = self.o.intersect(&self.od0)?;
        let mut pieces = vec![base];
        for cut in [self.od1, self.od2] {
            pieces = pieces
                .into_iter()
                .flat_map(|p| {
                    let mut out = Vec::with_capacity(2);
                    if cut.left > p.left {
                        out.push(Interval::new(p.left, cut.left.min(p.right)));
                    }
                    if cut.right < p.right {
                        out.push(Interval::new(cut.right.max(p.left), p.right));
                    }
                    out.into_iter().filter(|i| i.length() > 0.0).collect::<Vec<_>>()
                })
                .collect();
        }
        let longest = pieces.into_iter().max_by(|a, b| a.length().total_cmp(&b.length()))?;
        let quarter = 0.25 * longest.length();
        Some(Interval::new(longest.left + quarter, longest.right - quarter))
    }

    /// Every violated requirement, in a fixed order.
    pub fn violations(&self, grid: &Grid) -> Vec<Error> {
        let mut out = Vec::new();
        for (name, iv) in self.named().into_iter().chain(self.b.map(|b| ("B", b))) {
            if !iv.is_valid() {
                out.push(Error::InvalidInterval { name: name.into(), left: iv.left, right: iv.right });
            }
        }
        if !out.is_empty() {
            return out;
        }
        let xs = grid.x_points();
        for (name, iv) in self.named() {
            if !xs.iter().any(|&x| iv.contains(x)) {
                out.push(Error::ViolatedGeometry(GeometryClause::EmptyRegion(name)));
            }
        }
        if xs.iter().any(|&x| self.o.contains(x) && self.d.contains(x)) {
            out.push(Error::ViolatedGeometry(GeometryClause::ControlFollowerOverlap));
        }
        let in_both = |x: f64| self.o.contains(x) && self.od0.contains(x);
        if !xs.iter().any(|&x| in_both(x)) {
            out.push(Error::ViolatedGeometry(GeometryClause::IntersectionEmpty));
        } else if !xs.iter().any(|&x| in_both(x) && !self.od1.contains(x) && !self.od2.contains(x)) {
            out.push(Error::ViolatedGeometry(GeometryClause::IntersectionCovered));
        }
        if let Some(b) = self.b {
            let inside = self.o.intersect(&self.od0).is_some_and(|c| c.left <= b.left && b.right <= c.right);
            if !inside || b.left <= 0.0 || b.right >= 1.0 {
                out.push(Error::ViolatedGeometry(GeometryClause::AuxiliaryOutside));
            }
        }
        out
    }
}

/// Sharp 0/1 indicators at the interior grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub o: Vec<f64>,
    pub d: Vec<f64>,
    pub od0: Vec<f64>,
    pub od1: Vec<f64>,
    pub od2: Vec<f64>,
    pub b: Vec<f64>,
    pub b_interval: Interval,
}

impl RegionMask {
    pub fn build(grid: &Grid, regions: &Regions) -> Result<Self> {
        if let Some(e) = regions.violations(grid).into_iter().next() {
            return Err(e);
        }
        let b_interval = regions
            .auxiliary()
            .ok_or(Error::ViolatedGeometry(GeometryClause::IntersectionCovered))?;
        let ind = |iv: Interval| grid.sample(|x| if iv.contains(x) { 1.0 } else { 0.0 });
        Ok(Self {
            o: ind(regions.o),
            d: ind(regions.d),
            od0: ind(regions.od0),
            od1: ind(regions.od1),
            od2: ind(regions.od2),
            b: ind(b_interval),
            b_interval,
        })
    }

    /// Tracking masks for derivative orders 0, 1, 2.
    pub fn observation(&self, order: usize) -> &[f64] {
        match order {
            0 => &self.od0,
            1 => &self.od1,
            2 => &self.od2,
            _ => panic!("observation order must be 0, 1 or 2"),
        }
    }
}

/// Builds masks from `(name, left, right)` triples; names are `O`, `D`,
/// `Od0`, `Od1`, `Od2` and optionally `B` (case and underscores ignored).
pub fn region_mask(grid: &Grid, intervals: &[(&str, f64, f64)]) -> Result<RegionMask> {
    let mut slots: [Option<Interval>; 6] = [None; 6];
    for &(name, left, right) in intervals {
        let key: String = name.chars().filter(|c| *c != '_').flat_map(char::to_lowercase).collect();
        let slot = match key.as_str() {
            "o" => 0,
            "d" => 1,
            "od0" => 2,
            "od1" => 3,
            "od2" => 4,
            "b" => 5,
            _ => {
                return Err(Error::InvalidParameter { name: "regions", reason: format!("unknown region {name:?}") })
            }
        };
        slots[slot] = Some(Interval::new(left, right));
    }
    let need = |i: usize, name: &str| {
        slots[i].ok_or_else(|| Error::InvalidParameter { name: "regions", reason: format!("region {name} missing") })
    };
    let regions = Regions {
        o: need(0, "O")?,
        d: need(1, "D")?,
        od0: need(2, "Od0")?,
        od1: need(3, "Od1")?,
        od2: need(4, "Od2")?,
        b: slots[5],
    };
    RegionMask::build(grid, &regions)
}
