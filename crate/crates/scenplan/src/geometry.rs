//! Obstacle footprints as convex polytopes in the 2-D output plane.
//!
//! An obstacle vehicle at a forecast time is a rectangle described by an
//! [`OvState`] (center, yaw, length, width). The planner needs two views of
//! it: the halfspace view ([`Polytope`], rows `a_j . y <= b_j` whose
//! intersection is the occupied set) and the vertex view ([`VertexSet`],
//! counter-clockwise corners). A cluster of forecast states is covered by
//! [`overapproximate`]: halfspace directions are fixed from the cluster mean
//! yaw and each offset is pushed out to the farthest sample vertex, which is
//! the tightest cover expressible with those directions.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Normalizes an angle to `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let r = theta.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r - two_pi
    } else {
        r
    }
}

#[inline]
fn rotate(yaw: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

#[inline]
pub(crate) fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Pose and footprint of one obstacle vehicle at one time step.
/// Yaw is normalized to `(-pi, pi]` on construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Footprint extent along the heading axis.
    pub length: f64,
    /// Footprint extent across the heading axis.
    pub width: f64,
}

impl OvState {
    pub fn new(x: f64, y: f64, yaw: f64, length: f64, width: f64) -> Self {
        OvState {
            x,
            y,
            yaw: normalize_angle(yaw),
            length,
            width,
        }
    }

    #[inline]
    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// One halfspace `normal . y <= offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: [f64; 2],
    pub offset: f64,
}

/// Convex region given as an intersection of halfspaces. Normals are unit
/// length for everything this crate constructs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    pub rows: Vec<HalfSpace>,
}

impl Polytope {
    /// Signed interior depth of `point`: the smallest slack `offset - normal .
    /// point` over all rows. Positive strictly inside, negative outside,
    /// zero on the boundary.
    pub fn interior_depth(&self, point: [f64; 2]) -> f64 {
        self.rows
            .iter()
            .map(|r| r.offset - dot(r.normal, point))
            .fold(f64::INFINITY, f64::min)
    }

    /// Whether the polytope contains the entire axis-aligned box
    /// `[lo, hi]` (checked at the box corners, which suffices by convexity).
    pub fn contains_box(&self, lo: [f64; 2], hi: [f64; 2]) -> bool {
        [
            [lo[0], lo[1]],
            [hi[0], lo[1]],
            [hi[0], hi[1]],
            [lo[0], hi[1]],
        ]
        .into_iter()
        .all(|c| contains(self, c, false))
    }
}

/// Counter-clockwise corner list of a convex footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub points: Vec<[f64; 2]>,
}

impl VertexSet {
    /// Support value: the farthest extent of the vertex set along `dir`.
    pub fn support(&self, dir: [f64; 2]) -> f64 {
        self.points
            .iter()
            .map(|&p| dot(dir, p))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_footprint(state: &OvState, inflation: f64) -> Result<(f64, f64)> {
    if !(state.length >= 0.0 && state.width >= 0.0 && inflation >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "length, width, inflation must be nonnegative (got {}, {}, {})",
            state.length, state.width, inflation
        )));
    }
    Ok((state.length / 2.0 + inflation, state.width / 2.0 + inflation))
}

/// Outward halfspace directions for an `halfspaces`-row cover at heading
/// `yaw`. For 4 rows the order is front, rear, left, right (matching the
/// rectangle's faces); for other counts the directions sweep the circle at
/// equal angles starting from the heading.
fn cover_directions(yaw: f64, halfspaces: usize) -> Vec<[f64; 2]> {
    if halfspaces == 4 {
        [0.0, std::f64::consts::PI, std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2]
            .iter()
            .map(|&a| rotate(yaw + a, [1.0, 0.0]))
            .collect()
    } else {
        (0..halfspaces)
            .map(|j| {
                let a = yaw + 2.0 * std::f64::consts::PI * j as f64 / halfspaces as f64;
                rotate(a, [1.0, 0.0])
            })
            .collect()
    }
}

/// Halfspace form of one obstacle's (optionally inflated) rectangular
/// footprint, using `halfspaces >= 3` outward directions tied to the yaw.
/// With 4 halfspaces this is the exact rectangle, rows ordered front, rear,
/// left, right; with more, a circumscribed polygon.
pub fn obstacle_polytope(state: &OvState, halfspaces: usize, inflation: f64) -> Result<Polytope> {
    if halfspaces < 3 {
        return Err(Error::InvalidArgument(format!(
            "a bounded cover needs at least 3 halfspaces, got {halfspaces}"
        )));
    }
    check_footprint(state, inflation)?;
    let verts = obstacle_vertices(state, inflation)?;
    let rows = cover_directions(state.yaw, halfspaces)
        .into_iter()
        .map(|normal| HalfSpace {
            normal,
            offset: verts.support(normal),
        })
        .collect();
    Ok(Polytope { rows })
}

/// Corner list of the (optionally inflated) footprint rectangle,
/// counter-clockwise starting at the front-left corner.
pub fn obstacle_vertices(state: &OvState, inflation: f64) -> Result<VertexSet> {
    let (hl, hw) = check_footprint(state, inflation)?;
    let c = state.center();
    let points = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]]
        .into_iter()
        .map(|local| {
            let r = rotate(state.yaw, local);
            [c[0] + r[0], c[1] + r[1]]
        })
        .collect();
    Ok(VertexSet { points })
}

/// Componentwise mean pose of a cluster. Positions and extents average
/// arithmetically; yaw uses the circular mean so headings straddling the
/// `+-pi` cut average correctly.
pub fn cluster_mean_state(states: &[OvState]) -> Result<OvState> {
    if states.is_empty() {
        return Err(Error::DegenerateClustering(
            "cannot take the mean of an empty cluster".into(),
        ));
    }
    let n = states.len() as f64;
    let mut x = 0.0;
    let mut y = 0.0;
    let mut sin = 0.0;
    let mut cos = 0.0;
    let mut length = 0.0;
    let mut width = 0.0;
    for s in states {
        x += s.x;
        y += s.y;
        sin += s.yaw.sin();
        cos += s.yaw.cos();
        length += s.length;
        width += s.width;
    }
    Ok(OvState::new(
        x / n,
        y / n,
        sin.atan2(cos),
        length / n,
        width / n,
    ))
}

/// Tightest cover of a cluster of footprints using halfspace directions fixed
/// from the cluster mean yaw: each offset is the support of the union of all
/// (inflated) sample footprints along that direction. Every sample footprint
/// is contained, and every row touches at least one sample vertex.
pub fn overapproximate(
    samples: &[OvState],
    halfspaces: usize,
    inflation: f64,
) -> Result<Polytope> {
    if halfspaces < 3 {
        return Err(Error::InvalidArgument(format!(
            "a bounded cover needs at least 3 halfspaces, got {halfspaces}"
        )));
    }
    let mean = cluster_mean_state(samples)?;
    let dirs = cover_directions(mean.yaw, halfspaces);
    let mut offsets = vec![f64::NEG_INFINITY; halfspaces];
    for s in samples {
        let verts = obstacle_vertices(s, inflation)?;
        for (j, &d) in dirs.iter().enumerate() {
            offsets[j] = offsets[j].max(verts.support(d));
        }
    }
    Ok(Polytope {
        rows: dirs
            .into_iter()
            .zip(offsets)
            .map(|(normal, offset)| HalfSpace { normal, offset })
            .collect(),
    })
}

/// Membership test. `strict` demands `normal . point < offset` on every row
/// (open interior); otherwise `<=` (closed set).
pub fn contains(polytope: &Polytope, point: [f64; 2], strict: bool) -> bool {
    polytope.rows.iter().all(|r| {
        let lhs = dot(r.normal, point);
        if strict {
            lhs < r.offset
        } else {
            lhs <= r.offset
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    /// Polytope equality up to row ordering.
    fn same_rows(p: &Polytope, q: &Polytope, tol: f64) -> bool {
        p.rows.len() == q.rows.len()
            && p.rows.iter().all(|r| {
                q.rows.iter().any(|s| {
                    (r.normal[0] - s.normal[0]).abs() < tol
                        && (r.normal[1] - s.normal[1]).abs() < tol
                        && (r.offset - s.offset).abs() < tol
                })
            })
    }

    #[test]
    fn axis_aligned_rectangle_offsets() {
        // 4 x 2 rectangle at the origin: offsets 2, 2, 1, 1 for the
        // front/rear/left/right rows.
        let p = obstacle_polytope(&OvState::new(0.0, 0.0, 0.0, 4.0, 2.0), 4, 0.0).unwrap();
        let expect = [
            ([1.0, 0.0], 2.0),
            ([-1.0, 0.0], 2.0),
            ([0.0, 1.0], 1.0),
            ([0.0, -1.0], 1.0),
        ];
        for (row, (n, b)) in p.rows.iter().zip(expect) {
            assert_close(row.normal[0], n[0], 1e-12);
            assert_close(row.normal[1], n[1], 1e-12);
            assert_close(row.offset, b, 1e-12);
        }
    }

    #[test]
    fn quarter_turn_swaps_extents() {
        // Rotating the 4 x 2 rectangle by pi/2 gives the same axis-aligned
        // family with offsets 1, 1, 2, 2 under the (+x, -x, +y, -y) reading.
        let p = obstacle_polytope(
            &OvState::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 4.0, 2.0),
            4,
            0.0,
        )
        .unwrap();
        let want = Polytope {
            rows: vec![
                HalfSpace { normal: [1.0, 0.0], offset: 1.0 },
                HalfSpace { normal: [-1.0, 0.0], offset: 1.0 },
                HalfSpace { normal: [0.0, 1.0], offset: 2.0 },
                HalfSpace { normal: [0.0, -1.0], offset: 2.0 },
            ],
        };
        assert!(same_rows(&p, &want, 1e-9));
    }

    #[test]
    fn vertices_are_counter_clockwise_from_front_left() {
        let v = obstacle_vertices(&OvState::new(0.0, 0.0, 0.0, 4.0, 2.0), 0.0).unwrap();
        assert_eq!(
            v.points,
            vec![[2.0, 1.0], [-2.0, 1.0], [-2.0, -1.0], [2.0, -1.0]]
        );
        // Shoelace area positive => counter-clockwise.
        let area: f64 = v
            .points
            .iter()
            .zip(v.points.iter().cycle().skip(1))
            .map(|(a, b)| a[0] * b[1] - b[0] * a[1])
            .sum();
        assert!(area > 0.0);
    }

    #[test]
    fn inflation_grows_every_face() {
        let s = OvState::new(1.0, -2.0, 0.3, 4.0, 2.0);
        let p0 = obstacle_polytope(&s, 4, 0.0).unwrap();
        let p1 = obstacle_polytope(&s, 4, 0.25).unwrap();
        for (a, b) in p0.rows.iter().zip(&p1.rows) {
            assert_close(b.offset - a.offset, 0.25, 1e-12);
        }
    }

    #[test]
    fn rotation_equivariance_of_vertices() {
        let mut rng = CounterRng::from_key(&[61]);
        for _ in 0..200 {
            let yaw = rng.uniform_in(-4.0, 4.0);
            let extra = rng.uniform_in(-3.0, 3.0);
            let s0 = OvState::new(0.0, 0.0, yaw, 4.4, 1.8);
            let s1 = OvState::new(0.0, 0.0, yaw + extra, 4.4, 1.8);
            let v0 = obstacle_vertices(&s0, 0.1).unwrap();
            let v1 = obstacle_vertices(&s1, 0.1).unwrap();
            for (a, b) in v0.points.iter().zip(&v1.points) {
                let r = rotate(extra, *a);
                assert_close(r[0], b[0], 1e-9);
                assert_close(r[1], b[1], 1e-9);
            }
        }
    }

    #[test]
    fn contains_distinguishes_interior_boundary_exterior() {
        let p = obstacle_polytope(&OvState::new(0.0, 0.0, 0.0, 4.0, 2.0), 4, 0.0).unwrap();
        assert!(contains(&p, [0.0, 0.0], true));
        assert!(contains(&p, [2.0, 0.0], false));
        assert!(!contains(&p, [2.0, 0.0], true)); // boundary is not interior
        assert!(!contains(&p, [2.1, 0.0], false));
        assert!(p.interior_depth([0.0, 0.0]) > 0.9);
        assert_close(p.interior_depth([2.0, 0.0]), 0.0, 1e-12);
        assert!(p.interior_depth([3.0, 0.0]) < 0.0);
    }

    #[test]
    fn mean_state_uses_circular_yaw() {
        let a = OvState::new(0.0, 0.0, std::f64::consts::PI - 0.1, 4.0, 2.0);
        let b = OvState::new(2.0, 2.0, -std::f64::consts::PI + 0.1, 4.0, 2.0);
        let m = cluster_mean_state(&[a, b]).unwrap();
        assert_close(m.x, 1.0, 1e-12);
        assert_close(m.y, 1.0, 1e-12);
        // Arithmetic mean of the yaws would be ~0; the circular mean is pi.
        assert_close(m.yaw.abs(), std::f64::consts::PI, 1e-9);
    }

    #[test]
    fn yaw_is_normalized_on_construction() {
        assert_close(
            OvState::new(0.0, 0.0, 3.0 * std::f64::consts::PI, 1.0, 1.0).yaw,
            std::f64::consts::PI,
            1e-12,
        );
        assert_close(
            OvState::new(0.0, 0.0, -std::f64::consts::PI, 1.0, 1.0).yaw,
            std::f64::consts::PI,
            1e-12,
        );
        assert_close(OvState::new(0.0, 0.0, -1.0, 1.0, 1.0).yaw, -1.0, 1e-12);
    }

    #[test]
    fn two_unit_squares_overapproximate_to_their_bounding_box() {
        let a = OvState::new(0.0, 0.0, 0.0, 1.0, 1.0);
        let b = OvState::new(3.0, 0.0, 0.0, 1.0, 1.0);
        let p = overapproximate(&[a, b], 4, 0.0).unwrap();
        let want = Polytope {
            rows: vec![
                HalfSpace { normal: [1.0, 0.0], offset: 3.5 },
                HalfSpace { normal: [-1.0, 0.0], offset: 0.5 },
                HalfSpace { normal: [0.0, 1.0], offset: 0.5 },
                HalfSpace { normal: [0.0, -1.0], offset: 0.5 },
            ],
        };
        assert!(same_rows(&p, &want, 1e-12));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(cluster_mean_state(&[]).is_err());
        assert!(overapproximate(&[], 4, 0.0).is_err());
        let s = OvState::new(0.0, 0.0, 0.0, 1.0, 1.0);
        assert!(obstacle_polytope(&s, 2, 0.0).is_err());
        assert!(obstacle_polytope(&s, 4, -0.1).is_err());
        assert!(obstacle_polytope(&OvState::new(0.0, 0.0, 0.0, -1.0, 1.0), 4, 0.0).is_err());
    }

    proptest! {
        /// Containment: every sample vertex lies inside the cluster cover.
        /// Tightness: every cover row is touched by some sample vertex.
        #[test]
        fn cover_is_containing_and_tight(
            seed in 0u64..500,
            n_samples in 1usize..12,
            halfspaces in prop_oneof![Just(4usize), Just(6), Just(8)],
        ) {
            let mut rng = CounterRng::from_key(&[seed, 1701]);
            let samples: Vec<OvState> = (0..n_samples)
                .map(|_| OvState::new(
                    rng.uniform_in(-10.0, 10.0),
                    rng.uniform_in(-10.0, 10.0),
                    rng.uniform_in(-4.0, 4.0),
                    rng.uniform_in(0.5, 6.0),
                    rng.uniform_in(0.5, 3.0),
                ))
                .collect();
            let cover = overapproximate(&samples, halfspaces, 0.1).unwrap();
            for s in &samples {
                for v in obstacle_vertices(s, 0.1).unwrap().points {
                    prop_assert!(cover.interior_depth(v) >= -1e-9);
                }
            }
            for row in &cover.rows {
                let reach = samples
                    .iter()
                    .map(|s| obstacle_vertices(s, 0.1).unwrap().support(row.normal))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((row.offset - reach).abs() <= 1e-9);
            }
        }

        /// The halfspace and vertex views describe the same rectangle.
        #[test]
        fn polytope_and_vertices_agree(
            x in -20.0f64..20.0,
            y in -20.0f64..20.0,
            yaw in -7.0f64..7.0,
            length in 0.2f64..8.0,
            width in 0.2f64..4.0,
        ) {
            let s = OvState::new(x, y, yaw, length, width);
            let p = obstacle_polytope(&s, 4, 0.0).unwrap();
            let v = obstacle_vertices(&s, 0.0).unwrap();
            for corner in &v.points {
                // On the boundary: contained non-strictly, not strictly.
                prop_assert!(contains(&p, *corner, false) || p.interior_depth(*corner) > -1e-9);
                prop_assert!(p.interior_depth(*corner).abs() < 1e-9);
            }
            prop_assert!(contains(&p, s.center(), true));
        }
    }
}
