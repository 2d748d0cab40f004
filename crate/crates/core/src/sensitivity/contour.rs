//! Marching-squares isolines on a rectangular grid.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isoline {
    pub level: f64,
    /// Line segments as ((x0, y0), (x1, y1)) in axis coordinates.
    pub segments: Vec<[(f64, f64); 2]>,
}

/// Isolines of `z[row][col]` where rows follow `ys` and columns follow `xs`.
/// Squares touching a missing value are skipped.
pub fn isolines(xs: &[f64], ys: &[f64], z: &[Vec<Option<f64>>], levels: &[f64]) -> Vec<Isoline> {
    levels
        .iter()
        .map(|&level| Isoline {
            level,
            segments: segments_at(xs, ys, z, level),
        })
        .collect()
}

fn segments_at(xs: &[f64], ys: &[f64], z: &[Vec<Option<f64>>], level: f64) -> Vec<[(f64, f64); 2]> {
    let mut out = Vec::new();
    for r in 0..ys.len().saturating_sub(1) {
        for c in 0..xs.len().saturating_sub(1) {
            // corners counter-clockwise from bottom-left
            let corners = [(r, c), (r, c + 1), (r + 1, c + 1), (r + 1, c)];
            let vals: Option<Vec<f64>> = corners.iter().map(|&(i, j)| z[i][j]).collect();
            let Some(v) = vals else { continue };
            let pts: Vec<(f64, f64)> = corners.iter().map(|&(i, j)| (xs[j], ys[i])).collect();
            // crossing point on each edge k = (corner k, corner k+1)
            let cross = |k: usize| -> Option<(f64, f64)> {
                let (a, b) = (v[k], v[(k + 1) % 4]);
                if (a < level) == (b < level) {
                    return None;
                }
                let f = (level - a) / (b - a);
                let (p, q) = (pts[k], pts[(k + 1) % 4]);
                Some((p.0 + f * (q.0 - p.0), p.1 + f * (q.1 - p.1)))
            };
            let hits: Vec<(usize, (f64, f64))> = (0..4).filter_map(|k| cross(k).map(|p| (k, p))).collect();
            match hits.len() {
                2 => out.push([hits[0].1, hits[1].1]),
                4 => {
                    // saddle: resolve with the centre value
                    let centre = v.iter().sum::<f64>() / 4.0;
                    let bl_above = v[0] >= level;
                    if (centre >= level) == bl_above {
                        out.push([hits[0].1, hits[1].1]);
                        out.push([hits[2].1, hits[3].1]);
                    } else {
                        out.push([hits[0].1, hits[3].1]);
                        out.push([hits[1].1, hits[2].1]);
                    }
                }
                _ => {}
            }
        }
    }
    out
}

/// Round-valued contour levels spanning `[lo, hi]`, about `target` of them.
pub fn nice_levels(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo || target == 0 {
        return Vec::new();
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}
