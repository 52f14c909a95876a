//! Binary morphology on small masks (8-neighbourhood, out-of-bounds = outside).

pub fn dilate(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for y in 0..height {
        for x in 0..width {
            if mask[y * width + x] {
                continue;
            }
            out[y * width + x] = neighbours(y, x, height, width).any(|(ny, nx)| mask[ny * width + nx]);
        }
    }
    out
}

pub fn erode(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = mask.to_vec();
    for y in 0..height {
        for x in 0..width {
            if !mask[y * width + x] {
                continue;
            }
            let on_border = y == 0 || x == 0 || y + 1 == height || x + 1 == width;
            out[y * width + x] = !on_border && neighbours(y, x, height, width).all(|(ny, nx)| mask[ny * width + nx]);
        }
    }
    out
}

/// Chessboard distance from each inside pixel to the nearest outside pixel,
/// capped at `cap`. Outside pixels get 0.
pub fn depth(mask: &[bool], height: usize, width: usize, cap: u8) -> Vec<u8> {
    let mut out = vec![0u8; mask.len()];
    let mut current = mask.to_vec();
    for level in 1..=cap {
        for (o, &m) in out.iter_mut().zip(&current) {
            if m {
                *o = level;
            }
        }
        current = erode(&current, height, width);
        if !current.iter().any(|&m| m) {
            break;
        }
    }
    out
}

fn neighbours(y: usize, x: usize, height: usize, width: usize) -> impl Iterator<Item = (usize, usize)> {
    let ys = y.saturating_sub(1)..=(y + 1).min(height - 1);
    ys.flat_map(move |ny| (x.saturating_sub(1)..=(x + 1).min(width - 1)).map(move |nx| (ny, nx)))
        .filter(move |&(ny, nx)| (ny, nx) != (y, x))
}
