//! Block matching. A block of the current frame at `origin` is compared
//! against the reference block at `origin − (dx, dy)`, so the returned
//! displacement is the motion of the block content from reference to
//! current frame.

use super::{count_sad, MotionError};
use crate::videoio::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchResult {
    pub dx: i32,
    pub dy: i32,
    pub sad: u32,
}

impl SearchResult {
    /// Total order used to pick the best candidate: lower SAD, then smaller
    /// `|dx|+|dy|`, then smaller `dy`, then smaller `dx`.
    fn key(&self) -> (u32, i32, i32, i32) {
        (self.sad, self.dx.abs() + self.dy.abs(), self.dy, self.dx)
    }

    fn better_than(&self, other: &SearchResult) -> bool {
        self.key() < other.key()
    }
}

struct Matcher<'a> {
    cur: &'a Frame,
    reference: &'a Frame,
    x: usize,
    y: usize,
    size: usize,
    range: i32,
}

impl<'a> Matcher<'a> {
    fn new(
        cur: &'a Frame,
        reference: &'a Frame,
        origin: (usize, usize),
        size: usize,
        range: usize,
    ) -> Result<Self, MotionError> {
        if (cur.width(), cur.height()) != (reference.width(), reference.height()) {
            return Err(MotionError::SizeMismatch(
                (cur.width(), cur.height()),
                (reference.width(), reference.height()),
            ));
        }
        let (x, y) = origin;
        if size == 0 || x + size > cur.width() || y + size > cur.height() {
            return Err(MotionError::BlockOutOfBounds {
                x,
                y,
                size,
                width: cur.width(),
                height: cur.height(),
            });
        }
        Ok(Self {
            cur,
            reference,
            x,
            y,
            size,
            range: range.min(i32::MAX as usize) as i32,
        })
    }

    /// SAD at displacement `(dx, dy)`, or `None` when the reference block
    /// would leave the frame or exceed the search range.
    fn eval(&self, dx: i32, dy: i32) -> Option<SearchResult> {
        if dx.abs() > self.range || dy.abs() > self.range {
            return None;
        }
        let rx = self.x as i64 - dx as i64;
        let ry = self.y as i64 - dy as i64;
        let (w, h) = (self.reference.width() as i64, self.reference.height() as i64);
        if rx < 0 || ry < 0 || rx + self.size as i64 > w || ry + self.size as i64 > h {
            return None;
        }
        count_sad();
        let (rx, ry) = (rx as usize, ry as usize);
        let width = self.cur.width();
        let (cl, rl) = (self.cur.luma(), self.reference.luma());
        let mut sad = 0u32;
        for row in 0..self.size {
            let c = &cl[(self.y + row) * width + self.x..][..self.size];
            let r = &rl[(ry + row) * width + rx..][..self.size];
            sad += c
                .iter()
                .zip(r)
                .map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs())
                .sum::<u32>();
        }
        Some(SearchResult { dx, dy, sad })
    }
}

/// Three-step search: nine candidates around the current centre at step 4,
/// recentre, step 2, recentre, step 1. Larger ranges start at the largest
/// power of two not exceeding `(range + 1) / 2`.
pub fn three_step_search(
    cur: &Frame,
    reference: &Frame,
    origin: (usize, usize),
    block_size: usize,
    search_range: usize,
) -> Result<SearchResult, MotionError> {
    let m = Matcher::new(cur, reference, origin, block_size, search_range)?;
    let mut best = m.eval(0, 0).expect("zero displacement is always in bounds");
    let half = (search_range.max(1) as i32 + 1) / 2;
    let mut step = 1i32;
    while step * 2 <= half {
        step *= 2;
    }
    if search_range == 0 {
        return Ok(best);
    }
    while step >= 1 {
        let (cx, cy) = (best.dx, best.dy);
        let mut local = best;
        for sy in -1..=1 {
            for sx in -1..=1 {
                if sx == 0 && sy == 0 {
                    continue;
                }
                if let Some(cand) = m.eval(cx + sx * step, cy + sy * step) {
                    if cand.better_than(&local) {
                        local = cand;
                    }
                }
            }
        }
        best = local;
        step /= 2;
    }
    Ok(best)
}

/// Exhaustive scan of the `(2r+1)²` window with the same tie-breaking as
/// [`three_step_search`].
pub fn full_search(
    cur: &Frame,
    reference: &Frame,
    origin: (usize, usize),
    block_size: usize,
    search_range: usize,
) -> Result<SearchResult, MotionError> {
    let m = Matcher::new(cur, reference, origin, block_size, search_range)?;
    let r = m.range;
    let mut best = m.eval(0, 0).expect("zero displacement is always in bounds");
    for dy in -r..=r {
        for dx in -r..=r {
            if let Some(cand) = m.eval(dx, dy) {
                if cand.better_than(&best) {
                    best = cand;
                }
            }
        }
    }
    Ok(best)
}
