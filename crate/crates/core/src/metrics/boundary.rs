use crate::data::BinaryMask;
use crate::error::Result;

/// Contour tolerance as a fraction of the image diagonal.
pub const BOUNDARY_TOLERANCE_FRACTION: f64 = 0.008;

/// `round(0.008 · diagonal)` pixels.
pub fn default_tolerance(width: usize, height: usize) -> f64 {
    (BOUNDARY_TOLERANCE_FRACTION * (width as f64).hypot(height as f64)).round()
}

/// Foreground pixels with at least one 4-neighbour in the background. Pixels
/// outside the frame count as background.
pub fn contour(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (x, y) = (x as isize, y as isize);
        mask.get_signed(x, y)
            && !(mask.get_signed(x - 1, y)
                && mask.get_signed(x + 1, y)
                && mask.get_signed(x, y - 1)
                && mask.get_signed(x, y + 1))
    })
}

/// 1-D lower envelope of parabolas (Felzenszwalb & Huttenlocher). Infinite
/// entries never touch the envelope and are skipped.
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let mut sites = f.iter().enumerate().filter(|(_, x)| x.is_finite()).map(|(i, _)| i);
    let Some(first) = sites.next() else {
        out.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let height = |i: usize| f[i] + (i * i) as f64;
    for q in sites {
        let mut s;
        loop {
            let p = v[k];
            s = (height(q) - height(p)) / (2.0 * (q - p) as f64);
            if s > z[k] {
                break;
            }
            k -= 1;
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest set pixel
/// of `seeds` (`+∞` when `seeds` is empty). Values are integers held in `f64`.
pub fn squared_distance_transform(seeds: &BinaryMask) -> Vec<f64> {
    let (w, h) = seeds.dims();
    let mut grid: Vec<f64> = seeds
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let n = w.max(h);
    let (mut f, mut out) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

/// Fraction of `from`'s contour pixels within `tol` of `to`'s contour.
fn matched_fraction(from: &BinaryMask, to_distance: &[f64], tol: f64) -> f64 {
    let limit = tol * tol;
    let total = from.count();
    let hits = from
        .bits()
        .iter()
        .zip(to_distance)
        .filter(|(&b, &d)| b && d <= limit)
        .count();
    hits as f64 / total as f64
}

/// Contour F-measure with a Euclidean pixel tolerance.
///
/// Both contours empty gives 1.0 and exactly one empty gives 0.0.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tol: f64) -> Result<f64> {
    super::same_dims(pred, gt, "boundary_f")?;
    let (cp, cg) = (contour(pred), contour(gt));
    match (cp.is_empty(), cg.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let precision = matched_fraction(&cp, &squared_distance_transform(&cg), tol);
    let recall = matched_fraction(&cg, &squared_distance_transform(&cp), tol);
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}
