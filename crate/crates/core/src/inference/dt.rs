//! Generalized distance transforms under concave quadratic deformation
//! costs, computed in linear time from the upper envelope of lines.

use crate::context::MAX_QUADRATIC;
use crate::error::{PoseError, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTransform1d {
    pub values: Vec<f64>,
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTransform2d {
    pub values: Grid,
    /// Linear cell index of the maximizing source for each target cell.
    pub sources: Vec<usize>,
}

fn check_quadratic(w: f64) -> Result<()> {
    // also rejects NaN
    if w <= MAX_QUADRATIC {
        Ok(())
    } else {
        Err(PoseError::NonConcave(w))
    }
}

/// `g[x] = max_q f[q] + w_lin * d + w_quad * d^2` with `d = x - q - anchor`.
/// Ties go to the smaller source index. `-inf` inputs never win unless every
/// input is `-inf`.
pub fn distance_transform_1d(
    scores: &[f64],
    w_lin: f64,
    w_quad: f64,
    anchor: f64,
) -> Result<DistanceTransform1d> {
    check_quadratic(w_quad)?;
    if scores.is_empty() {
        return Err(PoseError::InvalidArgument("empty score array".into()));
    }
    let n = scores.len();
    let mut values = vec![0.0; n];
    let mut sources = vec![0; n];
    transform_line(
        scores,
        w_lin,
        w_quad,
        anchor,
        &mut LineScratch::default(),
        &mut values,
        &mut sources,
    );
    Ok(DistanceTransform1d { values, sources })
}

/// Scratch buffers reused across lines.
#[derive(Default)]
struct LineScratch {
    hull: Vec<usize>,
    intercept: Vec<f64>,
}

/// Core 1D pass.
fn transform_line(
    f: &[f64],
    w_lin: f64,
    w_quad: f64,
    anchor: f64,
    scratch: &mut LineScratch,
    values: &mut [f64],
    sources: &mut [usize],
) {
    let n = f.len();
    let c = -w_quad;
    // Each source q is the line h_q(t) = 2 c q t + I_q in t = x - anchor,
    // I_q = f[q] - c q^2 - w_lin q; the answer is the upper envelope plus a
    // term common to all lines. Line b overtakes line a (a < b) at
    // (I_a - I_b) / (2 c (b - a)), so crossings compare without division.
    let LineScratch { hull, intercept } = scratch;
    intercept.clear();
    intercept.extend(
        f.iter()
            .enumerate()
            .map(|(q, &v)| v - c * (q * q) as f64 - w_lin * q as f64),
    );
    hull.clear();
    for q in 0..n {
        if f[q] == f64::NEG_INFINITY {
            continue;
        }
        while hull.len() >= 2 {
            let l = hull[hull.len() - 2];
            let m = hull[hull.len() - 1];
            // cross(l, q) <= cross(l, m)
            if (intercept[l] - intercept[q]) * (m - l) as f64
                <= (intercept[l] - intercept[m]) * (q - l) as f64
            {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(q);
    }
    if hull.is_empty() {
        values.fill(f64::NEG_INFINITY);
        sources.fill(0);
        return;
    }
    // Hull member k owns the run of x where no later member has overtaken
    // it; filling runs keeps the data-dependent branches per hull member
    // rather than per cell. Ties stay with the earlier (smaller) source.
    let mut x = 0;
    for k in 0..hull.len() {
        let q = hull[k];
        let end = match hull.get(k + 1) {
            Some(&r) => {
                let z = (intercept[q] - intercept[r]) / (2.0 * c * (r - q) as f64);
                let first = (z + anchor).floor() + 1.0;
                if first <= x as f64 {
                    x
                } else if first >= n as f64 {
                    n
                } else {
                    first as usize
                }
            }
            None => n,
        };
        for (xi, (v, s)) in values[x..end]
            .iter_mut()
            .zip(&mut sources[x..end])
            .enumerate()
        {
            let d = (x + xi) as f64 - q as f64 - anchor;
            *v = f[q] + w_lin * d + w_quad * d * d;
            *s = q;
        }
        x = end;
    }
}

/// Columns handled together in the column pass: one cache line of `f64`.
const GROUP: usize = 8;

/// Buffers kept per thread; inference runs many transforms back to back.
#[derive(Default)]
struct Workspace {
    line: LineScratch,
    // the input, column-major, columns `h + 8` apart
    cols: Vec<f64>,
    col_val: Vec<f64>,
    col_src: Vec<usize>,
    // column-pass result, rows `w + 8` apart so that a power-of-two width
    // does not map a whole column onto a handful of cache sets
    mid: Vec<f64>,
    mid_src: Vec<u32>,
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<Workspace> = std::cell::RefCell::new(Workspace::default());
}

/// Separable 2D transform with deformation weights `[w_dx, w_dy, w_dx2, w_dy2]`:
/// `g[x, y] = max f[x', y'] + w . [dx, dy, dx^2, dy^2]`, `d = (x, y) - (x', y') - anchor`.
pub fn distance_transform_2d(
    map: &Grid,
    weights: [f64; 4],
    anchor: [f64; 2],
) -> Result<DistanceTransform2d> {
    let mut out = DistanceTransform2d {
        values: Grid::new(0, 0, Vec::new()),
        sources: Vec::new(),
    };
    distance_transform_2d_into(map, weights, anchor, &mut out)?;
    Ok(out)
}

/// [`distance_transform_2d`] into an existing result, reusing its storage.
///
/// Columns go first: the input is copied column-major in bands of `GROUP`
/// rows, which reads `GROUP` sequential streams, and column results return
/// to row order `GROUP` columns at a time, so every access covers whole cache
/// lines. The row pass then streams into the output.
pub fn distance_transform_2d_into(
    map: &Grid,
    weights: [f64; 4],
    anchor: [f64; 2],
    result: &mut DistanceTransform2d,
) -> Result<()> {
    check_quadratic(weights[2])?;
    check_quadratic(weights[3])?;
    let (w, h) = (map.width, map.height);
    if w == 0 || h == 0 {
        return Err(PoseError::InvalidArgument("empty grid".into()));
    }
    if h > u32::MAX as usize {
        return Err(PoseError::InvalidArgument("grid too tall".into()));
    }
    let n = w * h;
    result.values.width = w;
    result.values.height = h;
    // every cell is overwritten below
    result.values.data.resize(n, 0.0);
    result.sources.resize(n, 0);
    let out = &mut result.values.data;
    let sources = &mut result.sources;
    WORKSPACE.with(|ws| {
        let ws = &mut *ws.borrow_mut();
        let rs = w + 8;
        let hs = h + 8;
        ws.cols.resize(w * hs, 0.0);
        ws.col_val.resize(GROUP * h, 0.0);
        ws.col_src.resize(GROUP * h, 0);
        ws.mid.resize(h * rs, 0.0);
        ws.mid_src.resize(h * rs, 0);
        let Workspace {
            line,
            cols,
            col_val,
            col_src,
            mid,
            mid_src,
        } = ws;

        for y0 in (0..h).step_by(GROUP) {
            let g = (h - y0).min(GROUP);
            for x in 0..w {
                for r in 0..g {
                    cols[x * hs + y0 + r] = map.data[(y0 + r) * w + x];
                }
            }
        }
        for x0 in (0..w).step_by(GROUP) {
            let g = (w - x0).min(GROUP);
            for c in 0..g {
                let col = c * h..(c + 1) * h;
                let x = x0 + c;
                transform_line(
                    &cols[x * hs..x * hs + h],
                    weights[1],
                    weights[3],
                    anchor[1],
                    line,
                    &mut col_val[col.clone()],
                    &mut col_src[col],
                );
            }
            for y in 0..h {
                for c in 0..g {
                    mid[y * rs + x0 + c] = col_val[c * h + y];
                    mid_src[y * rs + x0 + c] = col_src[c * h + y] as u32;
                }
            }
        }

        for y in 0..h {
            let r = y * w..(y + 1) * w;
            let row = &mid[y * rs..y * rs + w];
            transform_line(
                row,
                weights[0],
                weights[2],
                anchor[0],
                line,
                &mut out[r.clone()],
                &mut sources[r.clone()],
            );
            let sy = &mid_src[y * rs..y * rs + w];
            for s in &mut sources[r] {
                *s += sy[*s] as usize * w;
            }
        }
    });
    Ok(())
}
