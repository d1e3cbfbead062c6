//! Intra and inter prediction and integer full-search motion estimation.

use super::IntraDir;
use crate::frame::Frame;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MotionVector {
    pub x: i32,
    pub y: i32,
}

impl MotionVector {
    pub const ZERO: MotionVector = MotionVector { x: 0, y: 0 };

    pub const fn new(x: i32, y: i32) -> MotionVector {
        MotionVector { x, y }
    }

    pub fn l1(&self) -> i32 {
        self.x.abs() + self.y.abs()
    }
}

/// Reconstructed neighbors of an `n x n` block at `(x, y)`.
struct Neighbors {
    top: Option<Vec<i32>>,
    left: Option<Vec<i32>>,
}

fn neighbors(recon: &Frame, x: usize, y: usize, n: usize) -> Neighbors {
    let top = (y > 0).then(|| {
        (0..n)
            .map(|i| recon.get((x + i).min(recon.width - 1), y - 1) as i32)
            .collect()
    });
    let left = (x > 0).then(|| {
        (0..n)
            .map(|i| recon.get(x - 1, (y + i).min(recon.height - 1)) as i32)
            .collect()
    });
    Neighbors { top, left }
}

/// Intra prediction from the reconstructed pels above and to the left.
///
/// A missing side is replaced by the first sample of the other side; with
/// both missing the block predicts mid-gray. DC averages only the
/// available sides.
pub fn intra_predict(recon: &Frame, x: usize, y: usize, n: usize, dir: IntraDir) -> Vec<i32> {
    let nb = neighbors(recon, x, y, n);
    let mid = recon.mid_gray() as i32;
    if dir == IntraDir::Dc {
        let (sum, count) = [&nb.top, &nb.left].iter().filter_map(|s| s.as_ref()).fold(
            (0i64, 0i64),
            |(s, c), v| {
                (
                    s + v.iter().map(|&p| p as i64).sum::<i64>(),
                    c + v.len() as i64,
                )
            },
        );
        let dc = if count == 0 {
            mid
        } else {
            ((sum + count / 2) / count) as i32
        };
        return vec![dc; n * n];
    }
    let (top, left) = match (nb.top, nb.left) {
        (Some(t), Some(l)) => (t, l),
        (Some(t), None) => {
            let l = vec![t[0]; n];
            (t, l)
        }
        (None, Some(l)) => (vec![l[0]; n], l),
        (None, None) => (vec![mid; n], vec![mid; n]),
    };
    let mut out = vec![0; n * n];
    match dir {
        IntraDir::Horizontal => {
            for j in 0..n {
                out[j * n..(j + 1) * n].fill(left[j]);
            }
        }
        IntraDir::Vertical => {
            for j in 0..n {
                out[j * n..(j + 1) * n].copy_from_slice(&top);
            }
        }
        IntraDir::Planar => {
            let shift = n.trailing_zeros() + 1;
            let (tr, bl) = (top[n - 1], left[n - 1]);
            let n_i = n as i32;
            for j in 0..n {
                for i in 0..n {
                    let (ii, jj) = (i as i32, j as i32);
                    let h = (n_i - 1 - ii) * left[j] + (ii + 1) * tr;
                    let v = (n_i - 1 - jj) * top[i] + (jj + 1) * bl;
                    out[j * n + i] = (h + v + n_i) >> shift;
                }
            }
        }
        IntraDir::Dc => unreachable!(),
    }
    out
}

/// Motion-compensated prediction with clamped reference fetches.
pub fn inter_predict(
    reference: &Frame,
    x: usize,
    y: usize,
    n: usize,
    mv: MotionVector,
) -> Vec<i32> {
    let mut out = Vec::with_capacity(n * n);
    let (sx, sy) = (x as isize + mv.x as isize, y as isize + mv.y as isize);
    let inside = sx >= 0
        && sy >= 0
        && sx as usize + n <= reference.width
        && sy as usize + n <= reference.height;
    for j in 0..n {
        if inside {
            let off = (sy as usize + j) * reference.width + sx as usize;
            out.extend(reference.luma[off..off + n].iter().map(|&v| v as i32));
        } else {
            out.extend(
                (0..n).map(|i| reference.get_clamped(sx + i as isize, sy + j as isize) as i32),
            );
        }
    }
    out
}

/// Sum of squared differences between the source block and a prediction.
pub fn ssd(src: &Frame, x: usize, y: usize, n: usize, pred: &[i32]) -> u64 {
    let mut acc = 0u64;
    for j in 0..n {
        let row = &src.luma[(y + j) * src.width + x..(y + j) * src.width + x + n];
        for (i, &s) in row.iter().enumerate() {
            let d = s as i64 - pred[j * n + i] as i64;
            acc += (d * d) as u64;
        }
    }
    acc
}

fn block_ssd_at(
    curr: &Frame,
    x: usize,
    y: usize,
    n: usize,
    reference: &Frame,
    mv: MotionVector,
    bound: u64,
) -> u64 {
    let (sx, sy) = (x as isize + mv.x as isize, y as isize + mv.y as isize);
    let inside = sx >= 0
        && sy >= 0
        && sx as usize + n <= reference.width
        && sy as usize + n <= reference.height;
    let mut acc = 0u64;
    for j in 0..n {
        let c = &curr.luma[(y + j) * curr.width + x..(y + j) * curr.width + x + n];
        if inside {
            let off = (sy as usize + j) * reference.width + sx as usize;
            let r = &reference.luma[off..off + n];
            for i in 0..n {
                let d = c[i] as i64 - r[i] as i64;
                acc += (d * d) as u64;
            }
        } else {
            for (i, &cv) in c.iter().enumerate() {
                let d = cv as i64 - reference.get_clamped(sx + i as isize, sy + j as isize) as i64;
                acc += (d * d) as u64;
            }
        }
        if acc > bound {
            return acc;
        }
    }
    acc
}

/// Full search over `center +- range` for the displacement with the least
/// SSD. Ties go to the smaller `|mv|` (L1), then to the earlier candidate
/// in raster order.
pub fn motion_search(
    curr: &Frame,
    x: usize,
    y: usize,
    n: usize,
    reference: &Frame,
    center: MotionVector,
    range: i32,
) -> (MotionVector, u64) {
    let mut best = (
        center,
        block_ssd_at(curr, x, y, n, reference, center, u64::MAX),
    );
    for dy in -range..=range {
        for dx in -range..=range {
            let mv = MotionVector::new(center.x + dx, center.y + dy);
            if mv == center {
                continue;
            }
            let d = block_ssd_at(curr, x, y, n, reference, mv, best.1);
            let better = d < best.1
                || (d == best.1
                    && (mv.l1() < best.0.l1()
                        || (mv.l1() == best.0.l1() && (mv.y, mv.x) < (best.0.y, best.0.x))));
            if better {
                best = (mv, d);
            }
        }
    }
    best
}
