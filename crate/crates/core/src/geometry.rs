//! Axis-aligned boxes, IoU, and the jittered-box sampler used to manufacture
//! crops at controlled overlap with a ground-truth box.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous-coordinate box with strictly positive area.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !(finite && x1 < x2 && y1 < y2) {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union. Intersection extents clamp at zero.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterConfig {
    /// Largest per-corner displacement as a fraction of the box width/height.
    pub max_shift_frac: f64,
    pub min_iou: f64,
    pub max_attempts: usize,
    /// Only move corners outward, so every sample contains the ground truth.
    pub enlarge_only: bool,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            max_shift_frac: 0.3,
            min_iou: 0.5,
            max_attempts: 1000,
            enlarge_only: false,
        }
    }
}

impl JitterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_shift_frac >= 0.0 && self.max_shift_frac <= 1.0) {
            return Err(Error::Config(format!(
                "max_shift_frac {} outside [0, 1]",
                self.max_shift_frac
            )));
        }
        if !(self.min_iou > 0.0 && self.min_iou <= 1.0) {
            return Err(Error::Config(format!(
                "min_iou {} outside (0, 1]",
                self.min_iou
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be positive".into()));
        }
        Ok(())
    }
}

fn shift<R: Rng + ?Sized>(rng: &mut R, span: f64) -> f64 {
    if span > 0.0 {
        rng.random_range(-span..=span)
    } else {
        0.0
    }
}

fn outward<R: Rng + ?Sized>(rng: &mut R, span: f64) -> f64 {
    if span > 0.0 {
        rng.random_range(0.0..=span)
    } else {
        0.0
    }
}

/// Moves each corner coordinate independently and keeps the first draw whose
/// IoU with `gt` reaches `cfg.min_iou`. The returned score is `iou(gt, box)`.
pub fn jitter_box<R: Rng + ?Sized>(
    gt: &BoundingBox,
    cfg: &JitterConfig,
    rng: &mut R,
) -> Result<(BoundingBox, f64)> {
    cfg.validate()?;
    let sx = cfg.max_shift_frac * gt.width();
    let sy = cfg.max_shift_frac * gt.height();
    for _ in 0..cfg.max_attempts {
        let (x1, y1, x2, y2) = if cfg.enlarge_only {
            (
                gt.x1 - outward(rng, sx),
                gt.y1 - outward(rng, sy),
                gt.x2 + outward(rng, sx),
                gt.y2 + outward(rng, sy),
            )
        } else {
            (
                gt.x1 + shift(rng, sx),
                gt.y1 + shift(rng, sy),
                gt.x2 + shift(rng, sx),
                gt.y2 + shift(rng, sy),
            )
        };
        let Ok(candidate) = BoundingBox::new(x1, y1, x2, y2) else {
            continue;
        };
        let score = iou(gt, &candidate);
        if score >= cfg.min_iou {
            return Ok((candidate, score));
        }
    }
    Err(Error::SamplingExhausted {
        what: format!("no jittered box reached iou {}", cfg.min_iou),
        attempts: cfg.max_attempts,
    })
}

pub fn sample_augmented_boxes<R: Rng + ?Sized>(
    gt: &BoundingBox,
    n: usize,
    cfg: &JitterConfig,
    rng: &mut R,
) -> Result<Vec<(BoundingBox, f64)>> {
    (0..n).map(|_| jitter_box(gt, cfg, rng)).collect()
}

/// Draws a jittered box whose IoU with `gt` lies within `tol` of `target`
/// and never below 0.5. A target of exactly 1 returns `gt` itself.
pub fn jitter_to_iou<R: Rng + ?Sized>(
    gt: &BoundingBox,
    target: f64,
    tol: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<(BoundingBox, f64)> {
    if !(0.5..=1.0).contains(&target) {
        return Err(Error::IouDomain(target));
    }
    if target == 1.0 {
        return Ok((*gt, 1.0));
    }
    // Shift span chosen so the target sits comfortably inside the reachable
    // IoU range of a single draw.
    let cfg = JitterConfig {
        max_shift_frac: (1.2 * (1.0 - target) + 0.02).min(1.0),
        min_iou: (target - tol).max(0.5),
        max_attempts: 1,
        enlarge_only: false,
    };
    for _ in 0..max_attempts {
        if let Ok((b, s)) = jitter_box(gt, &cfg, rng) {
            if (s - target).abs() <= tol {
                return Ok((b, s));
            }
        }
    }
    Err(Error::SamplingExhausted {
        what: format!("no box within {tol} of iou {target}"),
        attempts: max_attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn hand_cases() {
        let b = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&b, &bb(3.0, 3.0, 4.0, 4.0)), 0.0);
        assert_eq!(iou(&b, &bb(1.0, 1.0, 3.0, 3.0)), 1.0 / 7.0);
        // touching edges share no area
        assert_eq!(iou(&b, &bb(2.0, 0.0, 3.0, 2.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 3.0, 1.0, 2.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, f64::NAN, 2.0).is_err());
    }

    #[test]
    fn vanishing_shift_returns_ground_truth() {
        let gt = bb(10.0, 20.0, 50.0, 90.0);
        let cfg = JitterConfig {
            max_shift_frac: 0.0,
            ..Default::default()
        };
        let (b, s) = jitter_box(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b, gt);
        assert_eq!(s, 1.0);
        let cfg = JitterConfig {
            max_shift_frac: 1e-12,
            ..Default::default()
        };
        let (_, s) = jitter_box(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s > 1.0 - 1e-10);
    }

    #[test]
    fn accepted_samples_respect_min_iou_and_score() {
        let gt = bb(0.0, 0.0, 1.0, 1.0);
        let cfg = JitterConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = sample_augmented_boxes(&gt, 500, &cfg, &mut rng).unwrap();
        assert_eq!(samples.len(), 500);
        for (b, s) in &samples {
            assert!(*s >= 0.5 && *s <= 1.0);
            assert_eq!(s.to_bits(), iou(&gt, b).to_bits());
        }
        assert!(sample_augmented_boxes(&gt, 0, &cfg, &mut rng)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let gt = bb(3.0, 4.0, 30.0, 40.0);
        let cfg = JitterConfig::default();
        let a = sample_augmented_boxes(&gt, 50, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_augmented_boxes(&gt, 50, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iou_histogram_covers_every_decile() {
        let gt = bb(0.0, 0.0, 1.0, 1.0);
        let cfg = JitterConfig {
            max_shift_frac: 0.3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bins = [0usize; 10];
        for (_, s) in sample_augmented_boxes(&gt, 10_000, &cfg, &mut rng).unwrap() {
            bins[(((s - 0.5) / 0.05) as usize).min(9)] += 1;
        }
        assert!(bins.iter().all(|&c| c > 0), "{bins:?}");
    }

    #[test]
    fn impossible_threshold_exhausts() {
        let gt = bb(0.0, 0.0, 1.0, 1.0);
        let cfg = JitterConfig {
            max_shift_frac: 1.0,
            min_iou: 1.0,
            max_attempts: 20,
            enlarge_only: false,
        };
        let err = jitter_box(&gt, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { attempts: 20, .. }));
        assert!(JitterConfig {
            min_iou: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn enlarge_only_contains_ground_truth() {
        let gt = bb(0.0, 0.0, 4.0, 2.0);
        let cfg = JitterConfig {
            enlarge_only: true,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (b, s) in sample_augmented_boxes(&gt, 200, &cfg, &mut rng).unwrap() {
            let [x1, y1, x2, y2] = b.coords();
            assert!(x1 <= 0.0 && y1 <= 0.0 && x2 >= 4.0 && y2 >= 2.0);
            assert!((s - gt.area() / b.area()).abs() < 1e-12);
        }
    }

    #[test]
    fn targeted_jitter_hits_tolerance() {
        let gt = bb(100.0, 50.0, 260.0, 170.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &t in &[0.5, 0.55, 0.7, 0.85, 0.95, 0.99] {
            let (b, s) = jitter_to_iou(&gt, t, 0.02, 10_000, &mut rng).unwrap();
            assert!((s - t).abs() <= 0.02 && s >= 0.5);
            assert_eq!(s, iou(&gt, &b));
        }
        assert_eq!(
            jitter_to_iou(&gt, 1.0, 0.02, 1, &mut rng).unwrap(),
            (gt, 1.0)
        );
        assert!(matches!(
            jitter_to_iou(&gt, 0.4, 0.02, 1, &mut rng),
            Err(Error::IouDomain(_))
        ));
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0f64..50.0, -50.0f64..50.0, 0.1f64..40.0, 0.1f64..40.0)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn iou_symmetry_and_invariances(a in arb_box(), b in arb_box(), dx in -100.0f64..100.0, dy in -100.0f64..100.0, k in 0.1f64..10.0) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou(&b, &a)).abs() <= 1e-12);
            let t = |bx: &BoundingBox| {
                let [x1, y1, x2, y2] = bx.coords();
                BoundingBox::new(k * x1 + dx, k * y1 + dy, k * x2 + dx, k * y2 + dy).unwrap()
            };
            prop_assert!((iou(&t(&a), &t(&b)) - ab).abs() <= 1e-12);
            prop_assert_eq!(iou(&a, &a), 1.0);
        }
    }
}
