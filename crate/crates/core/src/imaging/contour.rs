use std::collections::VecDeque;

use super::BinaryImage;

/// Closed boundary walk of one 8-connected foreground component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(i32, i32)>,
}

// Moore neighbourhood, clockwise (y grows downwards) starting west.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(dx: isize, dy: isize) -> usize {
    RING.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is a Moore neighbour")
}

/// Outer contours of every 8-connected component, ordered by the raster
/// position of each component's first pixel.
///
/// Each boundary is followed clockwise with Moore-neighbour tracing and
/// stopped by Jacob's criterion in its transition form: the walk ends when
/// the start pixel is about to be left exactly as it was the first time.
pub fn find_contours(bin: &BinaryImage) -> Vec<Contour> {
    let (w, h) = (bin.width(), bin.height());
    let mut label = vec![false; w * h];
    let mut contours = Vec::new();

    for y in 0..h {
        for x in 0..w {
            if !bin.is_set(x, y) || label[y * w + x] {
                continue;
            }
            mark_component(bin, &mut label, x, y);
            contours.push(trace(bin, (x as isize, y as isize)));
        }
    }
    contours
}

fn mark_component(bin: &BinaryImage, label: &mut [bool], x: usize, y: usize) {
    let w = bin.width();
    let mut queue = VecDeque::from([(x as isize, y as isize)]);
    label[y * w + x] = true;
    while let Some((cx, cy)) = queue.pop_front() {
        for (dx, dy) in RING {
            let (nx, ny) = (cx + dx, cy + dy);
            if bin.is_set_signed(nx, ny) {
                let j = ny as usize * w + nx as usize;
                if !label[j] {
                    label[j] = true;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
}

fn trace(bin: &BinaryImage, start: (isize, isize)) -> Contour {
    // The raster-first pixel of a component always has background to the west.
    let step = |cur: (isize, isize), back: usize| -> Option<((isize, isize), usize)> {
        let k = (1..=8)
            .map(|i| (back + i) % 8)
            .find(|&d| bin.is_set_signed(cur.0 + RING[d].0, cur.1 + RING[d].1))?;
        let next = (cur.0 + RING[k].0, cur.1 + RING[k].1);
        let prev = RING[(k + 7) % 8];
        let back = ring_index(cur.0 + prev.0 - next.0, cur.1 + prev.1 - next.1);
        Some((next, back))
    };

    let mut points = vec![(start.0 as i32, start.1 as i32)];
    let Some(first) = step(start, 0) else {
        return Contour { points }; // isolated pixel
    };
    let mut state = first;
    // Bounded by the number of (pixel, backtrack) states.
    for _ in 0..8 * bin.width() * bin.height() {
        let (cur, back) = state;
        let Some(next) = step(cur, back) else { break };
        // Jacob's criterion: stop once the start pixel would be left through
        // the same transition as at the beginning, which is exactly when the
        // walk starts repeating.
        if cur == start && next == first {
            break;
        }
        points.push((cur.0 as i32, cur.1 as i32));
        state = next;
    }
    Contour { points }
}

/// Absolute shoelace area; fewer than three points enclose nothing.
pub fn contour_area(c: &Contour) -> f64 {
    let pts = &c.points;
    if pts.len() < 3 {
        return 0.0;
    }
    let twice: i64 = pts
        .iter()
        .zip(pts.iter().cycle().skip(1))
        .map(|(&(x0, y0), &(x1, y1))| x0 as i64 * y1 as i64 - x1 as i64 * y0 as i64)
        .sum();
    twice.abs() as f64 / 2.0
}

/// Renders contours as 255-valued closed 1-px polylines on black.
pub fn draw_contours(width: usize, height: usize, contours: &[Contour]) -> BinaryImage {
    let mut on = vec![false; width * height];
    let mut plot = |x: i32, y: i32| {
        if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
            on[y as usize * width + x as usize] = true;
        }
    };
    for c in contours {
        let n = c.points.len();
        for i in 0..n {
            let (a, b) = (c.points[i], c.points[(i + 1) % n]);
            // integer DDA; consecutive contour points are adjacent already
            let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
            for s in 0..=steps {
                let x = a.0 + (b.0 - a.0) * s / steps;
                let y = a.1 + (b.1 - a.1) * s / steps;
                plot(x, y);
            }
        }
    }
    BinaryImage::from_mask(width, height, |i| on[i])
}
