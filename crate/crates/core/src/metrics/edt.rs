//! Exact squared Euclidean distance transform on an anisotropic grid
//! (lower envelope of parabolas, two separable passes).

/// One 1D pass: `out[i] = min_j ((i - j) * spacing)^2 + f[j]` over finite `f[j]`.
fn pass_1d(f: &[f64], spacing: f64, out: &mut [f64], hull: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    hull.clear();
    bounds.clear();
    let s2 = spacing * spacing;
    let key = |q: usize| f[q] + (q as f64).powi(2) * s2;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let Some(&v) = hull.last() else {
                hull.push(q);
                bounds.push(f64::NEG_INFINITY);
                break;
            };
            // position (in index units) where the parabolas rooted at v and q meet
            let cross = (key(q) - key(v)) / (2.0 * s2 * (q as f64 - v as f64));
            if cross <= *bounds.last().unwrap() {
                hull.pop();
                bounds.pop();
            } else {
                hull.push(q);
                bounds.push(cross);
                break;
            }
        }
    }
    if hull.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while k + 1 < hull.len() && bounds[k + 1] < i as f64 {
            k += 1;
        }
        let v = hull[k];
        let d = (i as f64 - v as f64) * spacing;
        *o = d * d + f[v];
    }
}

/// Squared distance (in physical units) from every pixel to the nearest
/// foreground pixel. All-infinite when `fg` is empty.
pub fn squared_distance_transform(fg: &[bool], h: usize, w: usize, spacing: (f64, f64)) -> Vec<f64> {
    assert_eq!(fg.len(), h * w);
    let mut grid: Vec<f64> = fg.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let mut hull = Vec::new();
    let mut bounds = Vec::new();

    // columns, row spacing
    let mut col = vec![0.0; h];
    let mut out = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = grid[r * w + c];
        }
        pass_1d(&col, spacing.0, &mut out, &mut hull, &mut bounds);
        for r in 0..h {
            grid[r * w + c] = out[r];
        }
    }
    // rows, column spacing
    let mut row_out = vec![0.0; w];
    for r in 0..h {
        let row = &grid[r * w..(r + 1) * w];
        pass_1d(row, spacing.1, &mut row_out, &mut hull, &mut bounds);
        grid[r * w..(r + 1) * w].copy_from_slice(&row_out);
    }
    grid
}
