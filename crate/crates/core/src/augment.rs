//! Seeded image augmentation (rotation, width/height shift, horizontal flip,
//! zoom, brightness) and the oversampling plan for the training split.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::split::largest_remainder;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    /// Maximum absolute rotation in degrees.
    pub rotation: f64,
    /// Maximum shift as a fraction of the width.
    pub width_shift: f64,
    /// Maximum shift as a fraction of the height.
    pub height_shift: f64,
    /// Probability of a horizontal flip.
    pub horizontal_flip: f64,
    /// Scale range; values above 1 magnify.
    pub zoom: (f64, f64),
    /// Multiplicative brightness range.
    pub brightness: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation: 40.0,
            width_shift: 0.2,
            height_shift: 0.2,
            horizontal_flip: 0.5,
            zoom: (0.8, 1.2),
            brightness: (0.8, 1.2),
        }
    }
}

impl AugmentParams {
    /// Every transform disabled.
    pub fn identity() -> Self {
        AugmentParams {
            rotation: 0.0,
            width_shift: 0.0,
            height_shift: 0.0,
            horizontal_flip: 0.0,
            zoom: (1.0, 1.0),
            brightness: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && hi >= lo && hi.is_finite();
        if !(self.rotation >= 0.0 && self.rotation.is_finite()) {
            return Err(Error::invalid(format!("rotation must be a non-negative angle, got {}", self.rotation)));
        }
        for (name, v) in [("width_shift", self.width_shift), ("height_shift", self.height_shift)] {
            if !(0.0..=0.5).contains(&v) {
                return Err(Error::invalid(format!("{name} must be in [0, 0.5], got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.horizontal_flip) {
            return Err(Error::invalid(format!("horizontal_flip must be a probability, got {}", self.horizontal_flip)));
        }
        if !range_ok(self.zoom) || !range_ok(self.brightness) {
            return Err(Error::invalid("zoom and brightness ranges must be positive with min <= max"));
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Mirror index into `0..n` with the edge pixel repeated (`d c b a | a b c d`).
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Applies one random draw of every transform. Output has the input's shape
/// and values clamped to `[0, 1]`.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    image: &Tensor<T>,
    params: &AugmentParams,
    rng: &mut R,
) -> Result<Tensor<T>> {
    params.validate()?;
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape("augment", format!("image must be [H,W,C], got {:?}", image.shape())));
    };

    let angle = draw(rng, -params.rotation, params.rotation).to_radians();
    let tx = draw(rng, -params.width_shift, params.width_shift) * w as f64;
    let ty = draw(rng, -params.height_shift, params.height_shift) * h as f64;
    let flip = params.horizontal_flip > 0.0 && rng.random::<f64>() < params.horizontal_flip;
    let scale = draw(rng, params.zoom.0, params.zoom.1);
    let gain = draw(rng, params.brightness.0, params.brightness.1);

    let src = image.data();
    let mut out = if angle == 0.0 && tx == 0.0 && ty == 0.0 && scale == 1.0 {
        src.to_vec()
    } else {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let (sin, cos) = angle.sin_cos();
        let mut out = Vec::with_capacity(src.len());
        for y in 0..h {
            for x in 0..w {
                // Inverse map: undo shift, then rotation, then zoom.
                let u = x as f64 - cx - tx;
                let v = y as f64 - cy - ty;
                let sx = (cos * u + sin * v) / scale + cx;
                let sy = (-sin * u + cos * v) / scale + cy;
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (T::of(sx - x0), T::of(sy - y0));
                let (x0, y0) = (x0 as isize, y0 as isize);
                let xs = [reflect(x0, w), reflect(x0 + 1, w)];
                let ys = [reflect(y0, h), reflect(y0 + 1, h)];
                for ch in 0..c {
                    let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                    let top = at(ys[0], xs[0]) * (T::one() - fx) + at(ys[0], xs[1]) * fx;
                    let bottom = at(ys[1], xs[0]) * (T::one() - fx) + at(ys[1], xs[1]) * fx;
                    out.push(top * (T::one() - fy) + bottom * fy);
                }
            }
        }
        out
    };

    if flip {
        for row in out.chunks_exact_mut(w * c) {
            for x in 0..w / 2 {
                for ch in 0..c {
                    row.swap(x * c + ch, (w - 1 - x) * c + ch);
                }
            }
        }
    }
    let gain = T::of(gain);
    for v in &mut out {
        *v = (*v * gain).max(T::zero()).min(T::one());
    }
    Tensor::new(image.shape(), out)
}

/// Number of augmented copies to make of each original, per class, so that
/// every class reaches `target` images. Within a class the extra images are
/// spread by largest remainder, earlier originals first.
pub fn oversample_plan(counts: &[usize], target: usize) -> Result<Vec<Vec<usize>>> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if target < max {
        return Err(Error::invalid(format!("target {target} is below the largest class size {max}")));
    }
    counts
        .iter()
        .enumerate()
        .map(|(class, &n)| {
            if n == 0 {
                return if target == 0 {
                    Ok(Vec::new())
                } else {
                    Err(Error::invalid(format!("class {class} has no images to oversample")))
                };
            }
            Ok(largest_remainder(target - n, &vec![1.0; n]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn image(seed: u64) -> Tensor<f32> {
        let mut rng = SeedStream::new(seed).rng();
        Tensor::new(&[6, 5, 3], (0..90).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let x = image(1);
        let y = augment(&x, &AugmentParams::identity(), &mut SeedStream::new(2).rng()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn flip_is_involution() {
        let params = AugmentParams { horizontal_flip: 1.0, ..AugmentParams::identity() };
        let x = image(3);
        let once = augment(&x, &params, &mut SeedStream::new(4).rng()).unwrap();
        assert_ne!(once, x);
        assert_eq!(once.data()[0..3], x.data()[12..15]);
        let twice = augment(&once, &params, &mut SeedStream::new(5).rng()).unwrap();
        assert_eq!(twice, x);
    }

    #[test]
    fn brightness_halves_constant_image() {
        let params = AugmentParams { brightness: (0.5, 0.5), ..AugmentParams::identity() };
        let x = Tensor::<f32>::full(&[4, 4, 3], 0.8);
        let y = augment(&x, &params, &mut SeedStream::new(0).rng()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.4));
    }

    #[test]
    fn defaults_stay_in_range_and_are_seeded() {
        let x = image(7);
        let p = AugmentParams::default();
        let a = augment(&x, &p, &mut SeedStream::new(8).rng()).unwrap();
        let b = augment(&x, &p, &mut SeedStream::new(8).rng()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn rejects_bad_params() {
        let x = image(1);
        let p = AugmentParams { width_shift: 0.7, ..AugmentParams::identity() };
        assert!(augment(&x, &p, &mut SeedStream::new(0).rng()).is_err());
        let p = AugmentParams { zoom: (0.0, 1.0), ..AugmentParams::identity() };
        assert!(augment(&x, &p, &mut SeedStream::new(0).rng()).is_err());
    }

    #[test]
    fn plan_examples() {
        let plan = oversample_plan(&[50, 100], 100).unwrap();
        assert_eq!(plan[0], vec![1; 50]);
        assert_eq!(plan[1], vec![0; 100]);

        assert!(oversample_plan(&[5, 5], 5).unwrap().iter().flatten().all(|&m| m == 0));

        let plan = oversample_plan(&[30], 100).unwrap();
        assert_eq!(plan[0].iter().filter(|&&m| m == 3).count(), 10);
        assert_eq!(plan[0].iter().filter(|&&m| m == 2).count(), 20);

        assert!(oversample_plan(&[10, 20], 15).is_err());
    }
}
