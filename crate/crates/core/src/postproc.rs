//! Box overlap and greedy non-maximum suppression.

use crate::model::Detection;

/// Axis-aligned box with top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn intersection(&self, other: &Rect) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy NMS over parallel box/score slices. Returns kept indices in
/// descending score order; equal scores keep input order. A box is dropped
/// only when its IOU with a kept box is strictly above `thresh`.
pub fn nms_indices(boxes: &[Rect], scores: &[f64], thresh: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    // stable sort keeps insertion order among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let top = order[i];
        keep.push(top);
        for j in (i + 1)..order.len() {
            if !suppressed[j] && iou(&boxes[top], &boxes[order[j]]) > thresh {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(dets: Vec<Detection>, thresh: f64) -> Vec<Detection> {
    let boxes: Vec<Rect> = dets.iter().map(|d| d.bbox).collect();
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let keep = nms_indices(&boxes, &scores, thresh);
    let mut slots: Vec<Option<Detection>> = dets.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("each index kept once"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: Rect, score: f64) -> Detection {
        Detection {
            image_id: "img".into(),
            bbox: b,
            score,
            component_id: 0,
            level_index: 1,
            cell: (0, 0),
        }
    }

    #[test]
    fn iou_analytic() {
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &Rect::new(20.0, 20.0, 5.0, 5.0)), 0.0);
        let b = Rect::new(5.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-15);
        assert_eq!(iou(&Rect::default(), &Rect::default()), 0.0);
    }

    #[test]
    fn nms_trivial_cases() {
        assert!(nms(Vec::new(), 0.3).is_empty());
        let one = nms(vec![det(Rect::new(1.0, 1.0, 4.0, 4.0), 0.5)], 0.3);
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn nms_hand_case() {
        // x-shift s on a 10x10 box: iou = (10-s)/(10+s), which is 0.5 at s = 10/3
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        let b = Rect::new(10.0 / 3.0, 0.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 0.5).abs() < 1e-12);
        let c = Rect::new(50.0, 50.0, 10.0, 10.0);
        let kept = nms(vec![det(b, 0.8), det(c, 0.7), det(a, 0.9)], 0.3);
        let scores: Vec<f64> = kept.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
    }

    #[test]
    fn overlap_exactly_at_threshold_survives() {
        // iou = (10-s)/(10+s) = 1/3 at s = 5
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        let b = Rect::new(5.0, 0.0, 10.0, 10.0);
        let keep = nms_indices(&[a, b], &[1.0, 0.5], 1.0 / 3.0);
        assert_eq!(keep, vec![0, 1]);
    }

    #[test]
    fn ties_keep_input_order() {
        let a = Rect::new(0.0, 0.0, 10.0, 10.0);
        let keep = nms_indices(&[a, a, a], &[0.5, 0.5, 0.5], 0.3);
        assert_eq!(keep, vec![0]);
    }
}
