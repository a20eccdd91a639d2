use crate::frame_io::Frame;
use crate::raster::Plane;

use super::TrackError;

/// Smallest side a pyramid level may have.
pub const MIN_LEVEL_SIDE: usize = 8;

/// Box-filtered image pyramid; level 0 is full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Pyramid {
    levels: Vec<Plane>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Plane] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, l: usize) -> &Plane {
        &self.levels[l]
    }
}

fn half(parent: &Plane) -> Plane {
    let (w, h) = (parent.width() / 2, parent.height() / 2);
    Plane::from_fn(w, h, |x, y| {
        let (sx, sy) = (2 * x, 2 * y);
        let top = (parent.get(sx, sy) as f64 + parent.get(sx + 1, sy) as f64) * 0.5;
        let bottom = (parent.get(sx, sy + 1) as f64 + parent.get(sx + 1, sy + 1) as f64) * 0.5;
        ((top + bottom) * 0.5) as f32
    })
}

pub fn build_pyramid_from_plane(gray: &Plane, max_levels: usize) -> Result<Pyramid, TrackError> {
    if gray.width() < MIN_LEVEL_SIDE || gray.height() < MIN_LEVEL_SIDE {
        return Err(TrackError::FrameTooSmall { width: gray.width(), height: gray.height() });
    }
    let mut levels = vec![gray.clone()];
    while levels.len() < max_levels {
        let last = levels.last().unwrap();
        if last.width() / 2 < MIN_LEVEL_SIDE || last.height() / 2 < MIN_LEVEL_SIDE {
            break;
        }
        let next = half(last);
        levels.push(next);
    }
    Ok(Pyramid { levels })
}

/// Halves the frame repeatedly (2x2 box filter) while both sides stay >= 8,
/// keeping at most `max_levels` levels.
pub fn build_pyramid(f: &Frame, max_levels: usize) -> Result<Pyramid, TrackError> {
    build_pyramid_from_plane(&f.gray, max_levels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(w: usize, h: usize, v: f32) -> Frame {
        Frame::from_gray(0, Plane::filled(w, h, v)).unwrap()
    }

    #[test]
    fn halving_rule() {
        let p = build_pyramid(&frame(256, 256, 0.3), 4).unwrap();
        let sides: Vec<usize> = p.levels().iter().map(|l| l.width()).collect();
        assert_eq!(sides, vec![256, 128, 64, 32]);
    }

    #[test]
    fn odd_sizes_floor() {
        let p = build_pyramid(&frame(37, 20, 0.3), 10).unwrap();
        let dims: Vec<(usize, usize)> = p.levels().iter().map(|l| (l.width(), l.height())).collect();
        assert_eq!(dims, vec![(37, 20), (18, 10)]);
    }

    #[test]
    fn constant_stays_constant() {
        let v = 0.123_456_7f32;
        let p = build_pyramid(&frame(64, 48, v), 5).unwrap();
        for level in p.levels() {
            assert!(level.data().iter().all(|&x| x == v));
        }
    }

    #[test]
    fn stop_rule_and_too_small() {
        assert_eq!(build_pyramid(&frame(8, 8, 0.0), 6).unwrap().len(), 1);
        assert!(matches!(build_pyramid(&frame(7, 30, 0.0), 3), Err(TrackError::FrameTooSmall { .. })));
    }

    #[test]
    fn box_filter_average() {
        let g = Plane::from_fn(16, 16, |x, y| ((x + 2 * y) % 5) as f32 / 4.0);
        let p = build_pyramid_from_plane(&g, 2).unwrap();
        let expect = (g.get(2, 4) + g.get(3, 4) + g.get(2, 5) + g.get(3, 5)) / 4.0;
        assert!((p.level(1).get(1, 2) - expect).abs() < 1e-6);
    }
}
