use rand::Rng;

use crate::tensor::Tensor;

/// Side of the center crop used for zooming, as a fraction of the input.
pub const ZOOM_SCALE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    /// Clockwise.
    R90,
    R180,
    R270,
}

/// Which transforms one training image receives; applied in field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentPlan {
    pub flip: bool,
    pub rotation: Option<Rotation>,
    pub zoom: bool,
}

impl AugmentPlan {
    /// Each transform independently with probability 0.5; the rotation angle
    /// is uniform over 90/180/270 for square images and 180 otherwise.
    pub fn sample(rng: &mut impl Rng, square: bool) -> Self {
        let flip = rng.random_bool(0.5);
        let rotate = rng.random_bool(0.5);
        let angle = rng.random_range(0..3u8);
        let zoom = rng.random_bool(0.5);
        let rotation = rotate.then_some(match (square, angle) {
            (true, 0) => Rotation::R90,
            (true, 2) => Rotation::R270,
            _ => Rotation::R180,
        });
        Self {
            flip,
            rotation,
            zoom,
        }
    }

    pub fn apply(&self, img: &Tensor<f32>) -> Tensor<f32> {
        let mut out = img.clone();
        if self.flip {
            out = flip_horizontal(&out);
        }
        if let Some(r) = self.rotation {
            out = rotate(&out, r);
        }
        if self.zoom {
            out = center_zoom(&out);
        }
        out
    }
}

pub fn augment(img: &Tensor<f32>, rng: &mut impl Rng) -> Tensor<f32> {
    let s = img.shape();
    AugmentPlan::sample(rng, s[1] == s[2]).apply(img)
}

/// Builds `C × h × w` from a source-pixel lookup `(y, x) → (sy, sx)`.
fn remap(
    img: &Tensor<f32>,
    h: usize,
    w: usize,
    f: impl Fn(usize, usize) -> (usize, usize),
) -> Tensor<f32> {
    let (c, ih, iw) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let src = img.data();
    Tensor::from_fn(vec![c, h, w], |i| {
        let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
        let (sy, sx) = f(y, x);
        src[ch * ih * iw + sy * iw + sx]
    })
}

pub fn flip_horizontal(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    remap(img, h, w, |y, x| (y, w - 1 - x))
}

/// Non-square inputs only support [`Rotation::R180`].
pub fn rotate(img: &Tensor<f32>, r: Rotation) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    match r {
        Rotation::R180 => remap(img, h, w, |y, x| (h - 1 - y, w - 1 - x)),
        Rotation::R90 => {
            assert_eq!(h, w, "90° rotation needs a square image");
            remap(img, h, w, |y, x| (h - 1 - x, y))
        }
        Rotation::R270 => {
            assert_eq!(h, w, "270° rotation needs a square image");
            remap(img, h, w, |y, x| (x, w - 1 - y))
        }
    }
}

/// Crops the central `0.8` region and resizes it back, nearest-neighbor.
pub fn center_zoom(img: &Tensor<f32>) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let ch = ((h as f64 * ZOOM_SCALE).round() as usize).max(1);
    let cw = ((w as f64 * ZOOM_SCALE).round() as usize).max(1);
    let (oy, ox) = ((h - ch) / 2, (w - cw) / 2);
    remap(img, h, w, |y, x| (oy + y * ch / h, ox + x * cw / w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pattern(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(vec![3, h, w], |i| i as f32)
    }

    #[test]
    fn empty_plan_is_identity() {
        let img = pattern(4, 4);
        assert_eq!(AugmentPlan::default().apply(&img), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let img = pattern(3, 5);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
    }

    #[test]
    fn half_turn_reverses_each_plane() {
        let img = pattern(4, 4);
        let r = rotate(&img, Rotation::R180);
        for c in 0..3 {
            let plane = &img.data()[c * 16..(c + 1) * 16];
            let mut rev = plane.to_vec();
            rev.reverse();
            assert_eq!(&r.data()[c * 16..(c + 1) * 16], rev.as_slice());
        }
    }

    #[test]
    fn quarter_turns_compose() {
        let img = pattern(4, 4);
        let r90 = rotate(&img, Rotation::R90);
        assert_eq!(rotate(&r90, Rotation::R90), rotate(&img, Rotation::R180));
        assert_eq!(rotate(&r90, Rotation::R270), img);
        // Clockwise: the top-left pixel moves to the top-right corner.
        assert_eq!(r90.at(&[0, 0, 3]), img.at(&[0, 0, 0]));
    }

    #[test]
    fn zoom_keeps_shape_and_samples_the_center() {
        let img = pattern(10, 10);
        let z = center_zoom(&img);
        assert_eq!(z.shape(), img.shape());
        assert_eq!(z.at(&[0, 0, 0]), img.at(&[0, 1, 1]));
        assert_eq!(z.at(&[2, 9, 9]), img.at(&[2, 8, 8]));
    }

    #[test]
    fn shape_is_preserved_and_stream_is_seeded() {
        let img = pattern(6, 6);
        let mut a = ChaCha8Rng::seed_from_u64(2);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = augment(&img, &mut a);
            assert_eq!(x.shape(), img.shape());
            assert_eq!(x, augment(&img, &mut b));
        }
    }

    #[test]
    fn non_square_only_rotates_half_turns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = AugmentPlan::sample(&mut rng, false);
            assert!(matches!(p.rotation, None | Some(Rotation::R180)));
        }
    }
}
