use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackgroundFamily {
    Flat,
    Gradient,
    Checker,
}

pub fn make_background<R: Rng + ?Sized>(rng: &mut R, height: usize, width: usize) -> Frame {
    make_background_with_family(rng, height, width).0
}

pub fn make_background_with_family<R: Rng + ?Sized>(
    rng: &mut R,
    height: usize,
    width: usize,
) -> (Frame, BackgroundFamily) {
    let color = |rng: &mut R| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
    let family = match rng.gen_range(0..3) {
        0 => BackgroundFamily::Flat,
        1 => BackgroundFamily::Gradient,
        _ => BackgroundFamily::Checker,
    };
    let frame = match family {
        BackgroundFamily::Flat => Frame::filled(height, width, color(rng)),
        BackgroundFamily::Gradient => {
            let (a, b) = (color(rng), color(rng));
            let vertical = rng.gen::<bool>();
            let mut f = Frame::filled(height, width, a);
            for i in 0..height {
                for j in 0..width {
                    let s = if vertical {
                        (i as f64 + 0.5) / height as f64
                    } else {
                        (j as f64 + 0.5) / width as f64
                    };
                    f.set_rgb(i, j, [0, 1, 2].map(|k| a[k] + s * (b[k] - a[k])));
                }
            }
            f
        }
        BackgroundFamily::Checker => {
            let (a, b) = (color(rng), color(rng));
            let cell = rng.gen_range(2..=8);
            let mut f = Frame::filled(height, width, a);
            for i in 0..height {
                for j in 0..width {
                    if (i / cell + j / cell) % 2 == 1 {
                        f.set_rgb(i, j, b);
                    }
                }
            }
            f
        }
    };
    (frame, family)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn seeded_backgrounds_repeat() {
        let a = make_background(&mut ChaCha8Rng::seed_from_u64(3), 32, 32);
        let b = make_background(&mut ChaCha8Rng::seed_from_u64(3), 32, 32);
        assert_eq!(a, b);
        assert!(a.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn families_are_varied() {
        let families: HashSet<_> = (0..100)
            .map(|s| make_background_with_family(&mut ChaCha8Rng::seed_from_u64(s), 8, 8).1)
            .collect();
        assert!(families.len() >= 3);
    }

    #[test]
    fn gradients_are_monotone_along_their_axis() {
        let mut checked = 0;
        for s in 0..200 {
            let (f, fam) = make_background_with_family(&mut ChaCha8Rng::seed_from_u64(s), 16, 16);
            if fam != BackgroundFamily::Gradient {
                continue;
            }
            let vertical = f.rgb(0, 0) == f.rgb(0, 15);
            for k in 0..3 {
                let line: Vec<f64> = (0..16)
                    .map(|x| if vertical { f.rgb(x, 5)[k] } else { f.rgb(5, x)[k] })
                    .collect();
                let inc = line.windows(2).all(|w| w[1] >= w[0]);
                let dec = line.windows(2).all(|w| w[1] <= w[0]);
                assert!(inc || dec, "seed {s} channel {k} not monotone");
            }
            checked += 1;
        }
        assert!(checked > 10);
    }
}
