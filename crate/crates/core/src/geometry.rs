//! Normalized image-space geometry.

/// A point in normalized image coordinates, `[0, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Center {
    pub x: f64,
    pub y: f64,
}

impl Center {
    pub const fn new(x: f64, y: f64) -> Self {
        Center { x, y }
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    /// Cell `(i, j)` of the `g x g` grid containing this point. Cells are
    /// half-open except the last row/column, which also takes the `1.0` edge.
    pub fn cell(&self, g: usize) -> (usize, usize) {
        (axis_cell(self.x, g), axis_cell(self.y, g))
    }
}

#[inline]
fn axis_cell(u: f64, g: usize) -> usize {
    let scaled = libm::floor(u * g as f64);
    if scaled <= 0.0 {
        0
    } else {
        (scaled as usize).min(g - 1)
    }
}

/// Axis-aligned box in center form, `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        NormBox { cx, cy, w, h }
    }

    /// Build from top-left corner form `(x, y, w, h)`.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        NormBox { cx: x + w / 2.0, cy: y + h / 2.0, w, h }
    }

    pub fn center(&self) -> Center {
        Center::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Corners `(x0, y0, x1, y1)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0)
    }

    /// Clip to the unit square, keeping center form.
    pub fn clipped(&self) -> NormBox {
        let (x0, y0, x1, y1) = self.corners();
        if x0 >= 0.0 && y0 >= 0.0 && x1 <= 1.0 && y1 <= 1.0 {
            return *self;
        }
        let x0 = x0.clamp(0.0, 1.0);
        let y0 = y0.clamp(0.0, 1.0);
        let x1 = x1.clamp(0.0, 1.0);
        let y1 = y1.clamp(0.0, 1.0);
        NormBox::from_xywh(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &NormBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

/// Free-function form of [`NormBox::iou`].
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_clamps_top_edge() {
        assert_eq!(Center::new(1.0, 1.0).cell(4), (3, 3));
        assert_eq!(Center::new(0.0, 0.0).cell(4), (0, 0));
        assert_eq!(Center::new(0.5, 0.5).cell(1), (0, 0));
        assert_eq!(Center::new(0.49, 0.51).cell(2), (0, 1));
    }

    #[test]
    fn iou_cases() {
        let a = NormBox::from_xywh(0.0, 0.0, 2.0, 2.0);
        let b = NormBox::from_xywh(1.0, 1.0, 2.0, 2.0);
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        let far = NormBox::from_xywh(5.0, 5.0, 1.0, 1.0);
        assert_eq!(a.iou(&far), 0.0);
        let empty = NormBox::new(0.5, 0.5, 0.0, 0.0);
        assert_eq!(empty.iou(&empty), 0.0);
    }

    #[test]
    fn clip_keeps_inside_boxes() {
        let b = NormBox::new(0.5, 0.5, 0.2, 0.2);
        assert_eq!(b.clipped(), b);
        let c = NormBox::new(0.95, 0.5, 0.2, 0.2).clipped();
        assert!((c.corners().2 - 1.0).abs() < 1e-12);
        assert!((c.w - 0.15).abs() < 1e-12);
    }
}
