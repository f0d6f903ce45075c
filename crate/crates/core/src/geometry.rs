//! Rotated boxes, the rigid RoI transform, and box measures.
//!
//! Boxes carry the center, extent and the rotation of their longest edge
//! against the x-axis. Angles live in [-pi/2, pi/2); a box is unchanged by
//! rotating it a full half-turn, so every angle is stored canonicalized.
//! GIoU and the L1 measure act on the axis-aligned (cx, cy, w, h) vector
//! only; orientation is handled exclusively by the cosine angle term.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Center/size/orientation box. `cx`, `cy`, `w`, `h` are in normalized image
/// units for annotations and in absolute pixels inside [`RoIParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedBox<S: Scalar = f64> {
    cx: S,
    cy: S,
    w: S,
    h: S,
    theta: S,
}

impl<S: Scalar> RotatedBox<S> {
    /// Validates extents and stores the angle canonicalized into
    /// [-pi/2, pi/2).
    pub fn new(cx: S, cy: S, w: S, h: S, theta: S) -> Result<Self> {
        for (name, v) in [("cx", cx), ("cy", cy), ("w", w), ("h", h), ("theta", theta)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("RotatedBox field {name}")));
            }
        }
        if w <= S::zero() || h <= S::zero() {
            return Err(Error::InvalidArgument(format!(
                "RotatedBox extents must be positive, got w={w}, h={h}"
            )));
        }
        Ok(RotatedBox {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle_unchecked(theta),
        })
    }

    pub fn cx(&self) -> S {
        self.cx
    }
    pub fn cy(&self) -> S {
        self.cy
    }
    pub fn w(&self) -> S {
        self.w
    }
    pub fn h(&self) -> S {
        self.h
    }
    pub fn theta(&self) -> S {
        self.theta
    }

    /// Axis-aligned bounding rectangle of the rotated box as
    /// `(x_min, y_min, x_max, y_max)`.
    pub fn bounding_rect(&self) -> (S, S, S, S) {
        let two = S::lit(2.0);
        let (c, s) = (self.theta.cos().abs(), self.theta.sin().abs());
        let half_w = (self.w * c + self.h * s) / two;
        let half_h = (self.w * s + self.h * c) / two;
        (
            self.cx - half_w,
            self.cy - half_h,
            self.cx + half_w,
            self.cy + half_h,
        )
    }

    /// The four corners, counter-clockwise from the (-w/2, -h/2) corner in
    /// box-local coordinates.
    pub fn corners(&self) -> [(S, S); 4] {
        let two = S::lit(2.0);
        let (hw, hh) = (self.w / two, self.h / two);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
            .map(|(u, v)| (self.cx + c * u - s * v, self.cy + s * u + c * v))
    }

    /// Scales a normalized box into pixel units of a `w_px` by `h_px` map,
    /// under the pixel-center convention.
    pub fn to_pixels(&self, w_px: usize, h_px: usize) -> RotatedBox<S> {
        let half = S::lit(0.5);
        let (sw, sh) = (
            S::from_usize(w_px).expect("width fits scalar"),
            S::from_usize(h_px).expect("height fits scalar"),
        );
        RotatedBox {
            cx: self.cx * sw - half,
            cy: self.cy * sh - half,
            w: self.w * sw,
            h: self.h * sh,
            theta: self.theta,
        }
    }
}

/// Rotated region plus the output grid extents of the aligned feature crop.
#[derive(Debug, Clone)]
pub struct RoIParams<S: Scalar = f64> {
    pub bbox: RotatedBox<S>,
    pub out_h: usize,
    pub out_w: usize,
}

impl<S: Scalar> RoIParams<S> {
    pub fn new(bbox: RotatedBox<S>, out_h: usize, out_w: usize) -> Result<Self> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(
                "RoI output extents must be at least 1".into(),
            ));
        }
        Ok(RoIParams { bbox, out_h, out_w })
    }
}

/// A `[C,H,W]` activation map.
#[derive(Debug, Clone)]
pub struct FeatureMap<S: Scalar = f64> {
    values: Tensor<S>,
}

impl<S: Scalar> FeatureMap<S> {
    pub fn new(values: Tensor<S>) -> Result<Self> {
        if values.shape().len() != 3 {
            return Err(Error::ShapeMismatch {
                op: "FeatureMap",
                lhs: values.shape().to_vec(),
                rhs: vec![0, 0, 0],
            });
        }
        Ok(FeatureMap { values })
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }
    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }
    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }
    pub fn tensor(&self) -> &Tensor<S> {
        &self.values
    }
}

/// Canonicalizes `theta` into [-pi/2, pi/2) modulo pi; rejects non-finite
/// input.
pub fn normalize_angle<S: Scalar>(theta: S) -> Result<S> {
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "normalize_angle: non-finite input {theta}"
        )));
    }
    Ok(normalize_angle_unchecked(theta))
}

pub(crate) fn normalize_angle_unchecked<S: Scalar>(theta: S) -> S {
    let pi = S::PI();
    let half = pi / S::lit(2.0);
    let mut r = theta % pi; // (-pi, pi)
    if r < -half {
        r += pi;
    } else if r >= half {
        r -= pi;
    }
    r
}

/// The rigid map of the RoI transform: translate the RoI center to the
/// origin, then rotate by the RoI angle.
pub fn affine_point<S: Scalar>(x: S, y: S, roi: &RoIParams<S>) -> (S, S) {
    let (c, s) = (roi.bbox.theta.cos(), roi.bbox.theta.sin());
    let dx = x - roi.bbox.cx;
    let dy = y - roi.bbox.cy;
    (c * dx + s * dy, -s * dx + c * dy)
}

/// Source pixel coordinates for each output cell of the RoI grid: cell
/// centers span the box extent in box-local coordinates and are carried back
/// into the map by the inverse of [`affine_point`].
pub fn roi_sample_points<S: Scalar>(roi: &RoIParams<S>) -> Vec<(S, S)> {
    let half = S::lit(0.5);
    let (c, s) = (roi.bbox.theta.cos(), roi.bbox.theta.sin());
    let (ow, oh) = (
        S::from_usize(roi.out_w).expect("grid fits scalar"),
        S::from_usize(roi.out_h).expect("grid fits scalar"),
    );
    let mut pts = Vec::with_capacity(roi.out_h * roi.out_w);
    for i in 0..roi.out_h {
        let v = ((S::from_usize(i).unwrap() + half) / oh - half) * roi.bbox.h;
        for j in 0..roi.out_w {
            let u = ((S::from_usize(j).unwrap() + half) / ow - half) * roi.bbox.w;
            pts.push((roi.bbox.cx + c * u - s * v, roi.bbox.cy + s * u + c * v));
        }
    }
    pts
}

/// Extracts an axis-aligned `[C, out_h, out_w]` crop of `map` under the RoI's
/// rigid transform, one bilinear sample per output cell. Differentiable with
/// respect to the map values.
pub fn rotated_roi_align<S: Scalar>(
    map: &FeatureMap<S>,
    roi: &RoIParams<S>,
) -> Result<Tensor<S>> {
    let pts = roi_sample_points(roi);
    let sampled = map.tensor().bilinear_sample_many(&pts); // [C, oh*ow]
    sampled.reshape(&[map.channels(), roi.out_h, roi.out_w])
}

/// Generalized IoU of the axis-aligned (cx, cy, w, h) components, in (-1, 1].
pub fn giou<S: Scalar>(a: &RotatedBox<S>, b: &RotatedBox<S>) -> S {
    let two = S::lit(2.0);
    let (ax1, ax2) = (a.cx - a.w / two, a.cx + a.w / two);
    let (ay1, ay2) = (a.cy - a.h / two, a.cy + a.h / two);
    let (bx1, bx2) = (b.cx - b.w / two, b.cx + b.w / two);
    let (by1, by2) = (b.cy - b.h / two, b.cy + b.h / two);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(S::zero());
    let ih = (ay2.min(by2) - ay1.max(by1)).max(S::zero());
    let inter = iw * ih;
    // areas from the same corner differences, so identical boxes give exactly 1
    let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
    let encl = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    inter / union - (encl - union) / encl
}

/// Sum of absolute differences over (cx, cy, w, h).
pub fn box_l1<S: Scalar>(a: &RotatedBox<S>, b: &RotatedBox<S>) -> S {
    (a.cx - b.cx).abs() + (a.cy - b.cy).abs() + (a.w - b.w).abs() + (a.h - b.h).abs()
}

/// Cosine angle embedding loss `1 - cos(a_hat - a)`, in [0, 2].
pub fn angle_loss<S: Scalar>(a: S, a_hat: S) -> S {
    S::one() - (a_hat - a).cos()
}

/// Plain IoU of two axis-aligned rectangles `(x1, y1, x2, y2)`.
pub fn rect_iou<S: Scalar>(a: (S, S, S, S), b: (S, S, S, S)) -> S {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(S::zero());
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(S::zero());
    let inter = iw * ih;
    let area_a = (a.2 - a.0) * (a.3 - a.1);
    let area_b = (b.2 - b.0) * (b.3 - b.1);
    let union = area_a + area_b - inter;
    if union <= S::zero() {
        S::zero()
    } else {
        inter / union
    }
}

/// IoU of the bounding rectangles of two rotated boxes (the matching measure
/// used by the evaluation metrics).
pub fn bounding_rect_iou<S: Scalar>(a: &RotatedBox<S>, b: &RotatedBox<S>) -> S {
    rect_iou(a.bounding_rect(), b.bounding_rect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rb(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> RotatedBox<f64> {
        RotatedBox::new(cx, cy, w, h, theta).unwrap()
    }

    #[test]
    fn normalize_angle_examples() {
        assert_eq!(normalize_angle(0.0).unwrap(), 0.0);
        assert!(normalize_angle(std::f64::consts::PI).unwrap().abs() < 1e-15);
        let got = normalize_angle(3.0 * std::f64::consts::FRAC_PI_4).unwrap();
        assert!((got + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!(normalize_angle(f64::NAN).is_err());
        assert!(normalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn affine_point_worked_examples() {
        let roi = RoIParams::new(rb(4.0, 3.0, 2.0, 1.0, 0.0), 2, 2).unwrap();
        assert_eq!(affine_point(4.0, 3.0, &roi), (0.0, 0.0));
        let (x, y) = affine_point(7.0, 1.0, &roi);
        assert!((x - 3.0).abs() < 1e-12 && (y + 2.0).abs() < 1e-12);

        // alpha = pi/2 canonicalizes to -pi/2: evaluate the matrices directly.
        let a = std::f64::consts::FRAC_PI_2 - 1e-9;
        let roi = RoIParams::new(rb(4.0, 3.0, 2.0, 1.0, a), 2, 2).unwrap();
        let (x, y) = affine_point(5.0, 3.0, &roi);
        assert!((x - 0.0).abs() < 1e-6 && (y + 1.0).abs() < 1e-6);
    }

    #[test]
    fn giou_worked_examples() {
        let a = rb(0.5, 0.5, 0.2, 0.1, 0.0);
        assert!((giou(&a, &a) - 1.0).abs() < 1e-15);

        let a = rb(0.25, 0.25, 0.2, 0.2, 0.0);
        let b = rb(0.75, 0.75, 0.2, 0.2, 0.0);
        let expected = -(0.49 - 0.08) / 0.49;
        assert!((giou(&a, &b) - expected).abs() < 1e-12);
        assert!((expected - (-0.8367)).abs() < 1e-4);

        // nested: GIoU equals IoU = area(B)/area(A)
        let outer = rb(0.5, 0.5, 0.4, 0.4, 0.0);
        let inner = rb(0.5, 0.5, 0.2, 0.4, 0.0);
        let expect = (0.2 * 0.4) / (0.4 * 0.4);
        assert!((giou(&outer, &inner) - expect).abs() < 1e-12);
    }

    #[test]
    fn giou_monte_carlo_cross_check() {
        use rand::{Rng, SeedableRng};
        let a = rb(0.25, 0.25, 0.2, 0.2, 0.0);
        let b = rb(0.75, 0.75, 0.2, 0.2, 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let (mut hits_i, mut hits_u, mut hits_c) = (0u32, 0u32, 0u32);
        let inside = |bx: &RotatedBox<f64>, x: f64, y: f64| {
            (x - bx.cx()).abs() <= bx.w() / 2.0 && (y - bx.cy()).abs() <= bx.h() / 2.0
        };
        for _ in 0..n {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            let (ia, ib) = (inside(&a, x, y), inside(&b, x, y));
            if ia && ib {
                hits_i += 1;
            }
            if ia || ib {
                hits_u += 1;
            }
            if (0.15..=0.85).contains(&x) && (0.15..=0.85).contains(&y) {
                hits_c += 1;
            }
        }
        let (i, u, c) = (
            hits_i as f64 / n as f64,
            hits_u as f64 / n as f64,
            hits_c as f64 / n as f64,
        );
        let mc = i / u - (c - u) / c;
        assert!((mc - giou(&a, &b)).abs() < 1e-2, "mc={mc}");
    }

    #[test]
    fn box_l1_examples() {
        let a = rb(0.5, 0.5, 0.2, 0.1, 0.0);
        assert_eq!(box_l1(&a, &a), 0.0);
        let b = rb(0.6, 0.5, 0.2, 0.1, 0.0);
        assert!((box_l1(&a, &b) - 0.1).abs() < 1e-15);
        let c = rb(0.6, 0.6, 0.3, 0.2, 0.0);
        assert!((box_l1(&a, &c) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn angle_loss_examples() {
        assert_eq!(angle_loss(0.0, 0.0), 0.0);
        assert!((angle_loss(0.0, std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-12);
        assert!(
            (angle_loss(std::f64::consts::FRAC_PI_4, -std::f64::consts::FRAC_PI_4) - 1.0).abs()
                < 1e-12
        );
    }

    #[test]
    fn roi_align_constant_map() {
        let map = FeatureMap::new(Tensor::full(&[2, 5, 7], 3.25)).unwrap();
        let roi = RoIParams::new(rb(3.0, 2.0, 3.0, 2.0, 0.7), 3, 4).unwrap();
        let out = rotated_roi_align(&map, &roi).unwrap();
        assert_eq!(out.shape(), &[2, 3, 4]);
        assert!(out.values().iter().all(|&v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn roi_align_identity_crop() {
        let (h, w) = (4, 6);
        let data: Vec<f64> = (0..h * w).map(|i| i as f64 * 0.37 - 1.0).collect();
        let map = FeatureMap::new(Tensor::from_vec(&[1, h, w], data.clone()).unwrap()).unwrap();
        let bbox = rb(
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
            w as f64,
            h as f64,
            0.0,
        );
        let roi = RoIParams::new(bbox, h, w).unwrap();
        let out = rotated_roi_align(&map, &roi).unwrap();
        for (o, d) in out.values().iter().zip(&data) {
            assert!((o - d).abs() < 1e-10);
        }
    }

    #[test]
    fn roi_align_pi_rotation_equivalence() {
        let data: Vec<f64> = (0..3 * 6 * 6).map(|i| (i as f64).sin()).collect();
        let map = FeatureMap::new(Tensor::from_vec(&[3, 6, 6], data).unwrap()).unwrap();
        let a = RoIParams::new(rb(2.5, 2.5, 3.0, 2.0, 0.4), 2, 3).unwrap();
        let b = RoIParams::new(rb(2.5, 2.5, 3.0, 2.0, 0.4 + std::f64::consts::PI), 2, 3).unwrap();
        let oa = rotated_roi_align(&map, &a).unwrap();
        let ob = rotated_roi_align(&map, &b).unwrap();
        assert_eq!(oa.values(), ob.values());
    }

    proptest! {
        #[test]
        fn normalize_angle_is_canonical_and_mod_pi(theta in -20.0f64..20.0) {
            let r = normalize_angle(theta).unwrap();
            prop_assert!((-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2).contains(&r));
            let k = (theta - r) / std::f64::consts::PI;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }

        #[test]
        fn giou_is_symmetric_and_bounded(
            acx in 0.0f64..1.0, acy in 0.0f64..1.0, aw in 0.01f64..0.6, ah in 0.01f64..0.6,
            bcx in 0.0f64..1.0, bcy in 0.0f64..1.0, bw in 0.01f64..0.6, bh in 0.01f64..0.6,
        ) {
            let a = rb(acx, acy, aw, ah, 0.0);
            let b = rb(bcx, bcy, bw, bh, 0.0);
            let g1 = giou(&a, &b);
            let g2 = giou(&b, &a);
            prop_assert!((g1 - g2).abs() < 1e-12);
            prop_assert!(g1 > -1.0 && g1 <= 1.0 + 1e-12);
        }

        #[test]
        fn affine_point_is_rigid(
            cx in -5.0f64..5.0, cy in -5.0f64..5.0, theta in -3.0f64..3.0,
            x1 in -5.0f64..5.0, y1 in -5.0f64..5.0, x2 in -5.0f64..5.0, y2 in -5.0f64..5.0,
        ) {
            let roi = RoIParams::new(rb(cx, cy, 1.0, 1.0, theta), 1, 1).unwrap();
            let p1 = affine_point(x1, y1, &roi);
            let p2 = affine_point(x2, y2, &roi);
            let before = ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt();
            let after = ((p1.0 - p2.0).powi(2) + (p1.1 - p2.1).powi(2)).sqrt();
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn angle_loss_vanishes_on_full_turns(a in -3.0f64..3.0, k in -3i32..4) {
            let loss = angle_loss(a, a + 2.0 * std::f64::consts::PI * k as f64);
            prop_assert!(loss.abs() < 1e-9);
        }
    }
}
