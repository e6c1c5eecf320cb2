//! Planar point sets, the coordinatewise strict order on points, and the
//! permutation induced by a point configuration.
//!
//! All types here are immutable after construction and all operations are
//! pure, so everything is safe to share across threads.

use std::io::{BufRead, Write};

use thiserror::Error;

/// Errors from point-set and permutation construction.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CoreError {
    #[error("point ({x}, {y}) lies outside the unit square or is not finite")]
    OutOfRange { x: f64, y: f64 },
    #[error("duplicate {axis}-coordinate {value} shared by points {first} and {second}")]
    DuplicateCoordinate {
        axis: char,
        value: f64,
        first: usize,
        second: usize,
    },
    #[error("one-line notation of length {n} is not a bijection of 1..={n} (offending value {value})")]
    NotABijection { n: usize, value: u32 },
    #[error("point-set CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// A point of the unit square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    /// Builds a point, rejecting coordinates outside `[0, 1]` or non-finite
    /// values.
    pub fn new(x: f64, y: f64) -> Result<Self, CoreError> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) || !x.is_finite() || !y.is_finite()
        {
            return Err(CoreError::OutOfRange { x, y });
        }
        Ok(Self { x, y })
    }

    /// Construction without the range check, for samplers whose output is
    /// in range by construction.
    pub(crate) fn new_unchecked(x: f64, y: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
        Self { x, y }
    }
}

/// `p` strictly below-left of `q` in both coordinates.
pub fn increasing_pair(p: Point, q: Point) -> bool {
    p.x < q.x && p.y < q.y
}

/// L1 distance between two points.
pub fn l1_dist(p: Point, q: Point) -> f64 {
    (p.x - q.x).abs() + (p.y - q.y).abs()
}

/// An ordered list of points with pairwise distinct x-coordinates and
/// pairwise distinct y-coordinates.
///
/// Distinctness is what makes the induced permutation well defined; it is
/// validated on construction. Samplers enforce it by re-drawing colliding
/// points, so for sampled sets the check never fires.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Point>,
}

impl PointSet {
    pub fn new(points: Vec<Point>) -> Result<Self, CoreError> {
        for p in &points {
            if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                return Err(CoreError::OutOfRange { x: p.x, y: p.y });
            }
        }
        check_distinct(&points, 'x', |p| p.x)?;
        check_distinct(&points, 'y', |p| p.y)?;
        Ok(Self { points })
    }

    /// Construction for samplers that have already enforced distinctness.
    pub(crate) fn from_distinct_points(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Writes the `x,y` CSV form with 17-significant-digit decimal
    /// encoding, enough for an exact `f64` round trip.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y")?;
        for p in &self.points {
            writeln!(out, "{:.16e},{:.16e}", p.x, p.y)?;
        }
        Ok(())
    }

    /// Reads the CSV form produced by [`PointSet::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, CoreError> {
        let mut points = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line.map_err(|e| CoreError::Csv {
                line: idx + 1,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if idx == 0 {
                if line != "x,y" {
                    return Err(CoreError::Csv {
                        line: 1,
                        message: format!("expected header `x,y`, found `{line}`"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (xs, ys) = line.split_once(',').ok_or_else(|| CoreError::Csv {
                line: idx + 1,
                message: "expected two comma-separated fields".into(),
            })?;
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| CoreError::Csv {
                    line: idx + 1,
                    message: format!("bad float `{s}`: {e}"),
                })
            };
            let p = Point::new(parse(xs)?, parse(ys)?)?;
            points.push(p);
        }
        Self::new(points)
    }
}

fn check_distinct<F: Fn(&Point) -> f64>(
    points: &[Point],
    axis: char,
    coord: F,
) -> Result<(), CoreError> {
    let mut idx: Vec<u32> = (0..points.len() as u32).collect();
    idx.sort_unstable_by(|&a, &b| coord(&points[a as usize]).total_cmp(&coord(&points[b as usize])));
    for w in idx.windows(2) {
        let (a, b) = (w[0] as usize, w[1] as usize);
        if coord(&points[a]) == coord(&points[b]) {
            return Err(CoreError::DuplicateCoordinate {
                axis,
                value: coord(&points[a]),
                first: a.min(b),
                second: a.max(b),
            });
        }
    }
    Ok(())
}

/// A permutation in one-line notation: `image[i] = sigma(i + 1)`, with
/// values in `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    image: Vec<u32>,
}

impl Permutation {
    pub fn from_one_line(image: Vec<u32>) -> Result<Self, CoreError> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &v in &image {
            if v == 0 || v as usize > n || seen[v as usize - 1] {
                return Err(CoreError::NotABijection { n, value: v });
            }
            seen[v as usize - 1] = true;
        }
        Ok(Self { image })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            image: (1..=n as u32).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image.is_empty()
    }

    /// One-line notation, 1-based values.
    pub fn image(&self) -> &[u32] {
        &self.image
    }

    /// The permutation read right to left; its LIS is the longest
    /// decreasing subsequence of `self`.
    pub fn reversed(&self) -> Self {
        let mut image = self.image.clone();
        image.reverse();
        Self { image }
    }
}

/// The permutation induced by a point set: the point with `i`-th lowest
/// x-coordinate is sent to the rank of its y-coordinate.
///
/// Computed by a double argsort: order the points by x, then rank each
/// point's y among all y values. `O(N log N)`, deterministic. Coordinate
/// collisions are hard errors so that sampler bugs surface instead of
/// being tie-broken away.
pub fn perm_of_points(ps: &PointSet) -> Result<Permutation, CoreError> {
    let pts = ps.points();
    let n = pts.len();
    let mut by_x: Vec<u32> = (0..n as u32).collect();
    by_x.sort_unstable_by(|&a, &b| pts[a as usize].x.total_cmp(&pts[b as usize].x));
    let mut by_y: Vec<u32> = (0..n as u32).collect();
    by_y.sort_unstable_by(|&a, &b| pts[a as usize].y.total_cmp(&pts[b as usize].y));

    for w in by_x.windows(2) {
        let (a, b) = (w[0] as usize, w[1] as usize);
        if pts[a].x == pts[b].x {
            return Err(CoreError::DuplicateCoordinate {
                axis: 'x',
                value: pts[a].x,
                first: a.min(b),
                second: a.max(b),
            });
        }
    }
    let mut y_rank = vec![0u32; n];
    for (rank, &i) in by_y.iter().enumerate() {
        let i = i as usize;
        if rank > 0 {
            let prev = by_y[rank - 1] as usize;
            if pts[prev].y == pts[i].y {
                return Err(CoreError::DuplicateCoordinate {
                    axis: 'y',
                    value: pts[i].y,
                    first: prev.min(i),
                    second: prev.max(i),
                });
            }
        }
        y_rank[i] = rank as u32 + 1;
    }

    let image = by_x.iter().map(|&i| y_rank[i as usize]).collect();
    Ok(Permutation { image })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> Point {
        Point::new(x, y).unwrap()
    }

    #[test]
    fn increasing_pair_examples() {
        assert!(increasing_pair(pt(0.1, 0.2), pt(0.3, 0.4)));
        assert!(!increasing_pair(pt(0.1, 0.2), pt(0.1, 0.4)));
        assert!(!increasing_pair(pt(0.5, 0.9), pt(0.6, 0.1)));
    }

    #[test]
    fn l1_dist_examples() {
        assert_eq!(l1_dist(pt(1.0, 1.0), pt(1.0, 1.0)), 0.0);
        assert_eq!(l1_dist(pt(0.0, 0.0), pt(1.0, 1.0)), 2.0);
        assert_eq!(l1_dist(pt(0.25, 0.5), pt(0.5, 0.25)), 0.5);
    }

    #[test]
    fn l1_dist_symmetric() {
        let (p, q) = (pt(0.3, 0.8), pt(0.9, 0.1));
        assert_eq!(l1_dist(p, q), l1_dist(q, p));
    }

    #[test]
    fn perm_of_points_hand_example() {
        // Independently derived by hand rank computation.
        let ps = PointSet::new(vec![pt(0.1, 0.3), pt(0.2, 0.1), pt(0.3, 0.4)]).unwrap();
        let perm = perm_of_points(&ps).unwrap();
        assert_eq!(perm.image(), &[2, 1, 3]);
    }

    #[test]
    fn perm_of_points_matches_counting_oracle() {
        // O(n^2) oracle: sigma(i) = #{ j : y_j <= y of the i-th lowest x }.
        let pts = vec![
            pt(0.11, 0.62),
            pt(0.75, 0.21),
            pt(0.40, 0.95),
            pt(0.02, 0.33),
            pt(0.58, 0.08),
            pt(0.93, 0.77),
        ];
        let ps = PointSet::new(pts.clone()).unwrap();
        let perm = perm_of_points(&ps).unwrap();

        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.sort_by(|&a, &b| pts[a].x.total_cmp(&pts[b].x));
        let oracle: Vec<u32> = order
            .iter()
            .map(|&i| pts.iter().filter(|q| q.y <= pts[i].y).count() as u32)
            .collect();
        assert_eq!(perm.image(), oracle.as_slice());
    }

    #[test]
    fn leftmost_point_second_from_bottom_maps_to_two() {
        // Configuration whose leftmost point is second from the bottom.
        let ps = PointSet::new(vec![pt(0.05, 0.30), pt(0.40, 0.10), pt(0.70, 0.80)]).unwrap();
        let perm = perm_of_points(&ps).unwrap();
        assert_eq!(perm.image()[0], 2);
    }

    #[test]
    fn diagonal_points_give_identity() {
        let ps = PointSet::new((0..20).map(|i| pt(0.02 + i as f64 * 0.04, 0.02 + i as f64 * 0.04)).collect())
            .unwrap();
        assert_eq!(perm_of_points(&ps).unwrap(), Permutation::identity(20));
    }

    #[test]
    fn antidiagonal_points_give_reversal() {
        let n = 15usize;
        let ps = PointSet::new(
            (0..n)
                .map(|i| pt(0.01 + i as f64 * 0.05, 0.99 - i as f64 * 0.05))
                .collect(),
        )
        .unwrap();
        let perm = perm_of_points(&ps).unwrap();
        let expected: Vec<u32> = (1..=n as u32).rev().collect();
        assert_eq!(perm.image(), expected.as_slice());
    }

    #[test]
    fn duplicate_coordinates_are_rejected() {
        let err = PointSet::new(vec![pt(0.1, 0.2), pt(0.1, 0.4)]).unwrap_err();
        assert!(matches!(err, CoreError::DuplicateCoordinate { axis: 'x', .. }));
        let err = PointSet::new(vec![pt(0.1, 0.4), pt(0.3, 0.4)]).unwrap_err();
        assert!(matches!(err, CoreError::DuplicateCoordinate { axis: 'y', .. }));
    }

    #[test]
    fn reparameterization_leaves_permutation_unchanged() {
        let pts = vec![
            pt(0.11, 0.62),
            pt(0.75, 0.21),
            pt(0.40, 0.95),
            pt(0.02, 0.33),
            pt(0.58, 0.08),
        ];
        let base = perm_of_points(&PointSet::new(pts.clone()).unwrap()).unwrap();
        // Strictly increasing maps of [0,1] into itself.
        let cube = |t: f64| t * t * t;
        let soft = |t: f64| (t.exp() - 1.0) / (1f64.exp() - 1.0);
        let mapped_x: Vec<Point> = pts.iter().map(|p| pt(cube(p.x), p.y)).collect();
        let mapped_y: Vec<Point> = pts.iter().map(|p| pt(p.x, soft(p.y))).collect();
        assert_eq!(
            perm_of_points(&PointSet::new(mapped_x).unwrap()).unwrap(),
            base
        );
        assert_eq!(
            perm_of_points(&PointSet::new(mapped_y).unwrap()).unwrap(),
            base
        );
    }

    #[test]
    fn permutation_validation() {
        assert!(Permutation::from_one_line(vec![2, 4, 1, 3]).is_ok());
        assert!(matches!(
            Permutation::from_one_line(vec![1, 1, 2]),
            Err(CoreError::NotABijection { value: 1, .. })
        ));
        assert!(matches!(
            Permutation::from_one_line(vec![0, 1]),
            Err(CoreError::NotABijection { value: 0, .. })
        ));
        assert!(matches!(
            Permutation::from_one_line(vec![3, 1]),
            Err(CoreError::NotABijection { value: 3, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pts: Vec<Point> = vec![
            pt(0.1234567890123456, 0.9),
            pt(1.0 / 3.0, 2.0f64.sqrt() - 0.5),
            pt(1e-17, 1.0),
        ];
        let ps = PointSet::new(pts).unwrap();
        let mut buf = Vec::new();
        ps.write_csv(&mut buf).unwrap();
        let back = PointSet::read_csv(&buf[..]).unwrap();
        for (a, b) in ps.points().iter().zip(back.points()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn csv_rejects_bad_header() {
        let err = PointSet::read_csv("a,b\n0.1,0.2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, CoreError::Csv { line: 1, .. }));
    }
}
