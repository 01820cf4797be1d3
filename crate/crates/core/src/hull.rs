//! Planar convex hulls (Andrew's monotone chain).

pub type Point = [f64; 2];

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Hull vertices in counter-clockwise order starting from the lowest-x
/// (then lowest-y) point. Collinear boundary points are dropped; identical
/// input points give one vertex, collinear input gives the two extremes.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Shoelace area; zero for fewer than three vertices.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for (i, a) in poly.iter().enumerate() {
        let b = &poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * twice.abs()
}

fn segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

/// Whether `p` lies inside or within `tol` of a CCW convex polygon.
pub fn contains(hull: &[Point], p: &Point, tol: f64) -> bool {
    match hull.len() {
        0 => false,
        1 => segment_distance(p, &hull[0], &hull[0]) <= tol,
        2 => segment_distance(p, &hull[0], &hull[1]) <= tol,
        n => (0..n).all(|i| {
            let a = &hull[i];
            let b = &hull[(i + 1) % n];
            let edge = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            cross(a, b, p) >= -tol * edge
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_with_center() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.5]];
        let hull = convex_hull(&pts);
        assert_eq!(hull, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(polygon_area(&hull), 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(convex_hull(&[[2.0, 3.0]; 5]), vec![[2.0, 3.0]]);
        let line: Vec<Point> = (0..10).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert_eq!(convex_hull(&line), vec![[0.0, 0.0], [9.0, 18.0]]);
        assert!(convex_hull(&[]).is_empty());
    }

    #[test]
    fn collinear_edge_points_are_dropped() {
        let pts = [
            [0.0, 0.0],
            [1.0, 0.0],
            [2.0, 0.0],
            [2.0, 2.0],
            [0.0, 2.0],
            [1.0, 2.0],
        ];
        assert_eq!(convex_hull(&pts).len(), 4);
    }

    #[test]
    fn containment() {
        let hull = convex_hull(&[[0.0, 0.0], [2.0, 0.0], [2.0, 2.0], [0.0, 2.0]]);
        assert!(contains(&hull, &[1.0, 1.0], 0.0));
        assert!(contains(&hull, &[2.0, 1.0], 1e-9));
        assert!(!contains(&hull, &[2.1, 1.0], 1e-9));
        assert!(contains(&[[1.0, 1.0], [3.0, 1.0]], &[2.0, 1.0], 1e-9));
    }
}
