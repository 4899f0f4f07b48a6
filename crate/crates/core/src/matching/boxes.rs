use crate::dataset::BoundingBox;
use crate::error::Result;

/// GIoU of two `[x0, y0, x1, y1]` boxes with positive extent.
pub(crate) fn giou_raw(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    giou_with_grad(a, b).0
}

pub fn giou(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(giou_raw(&a.to_array(), &b.to_array()))
}

/// GIoU and its gradient with respect to the first box. At kinks the
/// one-sided derivative favouring the first box is used.
pub fn giou_with_grad(p: &[f64; 4], g: &[f64; 4]) -> (f64, [f64; 4]) {
    let (pw, ph) = (p[2] - p[0], p[3] - p[1]);
    let area_p = pw * ph;
    let area_g = (g[2] - g[0]) * (g[3] - g[1]);

    let iw = p[2].min(g[2]) - p[0].max(g[0]);
    let ih = p[3].min(g[3]) - p[1].max(g[1]);
    let overlapping = iw > 0.0 && ih > 0.0;
    let inter = if overlapping { iw * ih } else { 0.0 };
    let union = area_p + area_g - inter;
    let ew = p[2].max(g[2]) - p[0].min(g[0]);
    let eh = p[3].max(g[3]) - p[1].min(g[1]);
    let enclosing = ew * eh;
    let value = inter / union - 1.0 + union / enclosing;

    let d_area_p = [-ph, -pw, ph, pw];
    let mut d_inter = [0.0; 4];
    if overlapping {
        let d_iw = [
            if p[0] >= g[0] { -1.0 } else { 0.0 },
            0.0,
            if p[2] <= g[2] { 1.0 } else { 0.0 },
            0.0,
        ];
        let d_ih = [
            0.0,
            if p[1] >= g[1] { -1.0 } else { 0.0 },
            0.0,
            if p[3] <= g[3] { 1.0 } else { 0.0 },
        ];
        for k in 0..4 {
            d_inter[k] = ih * d_iw[k] + iw * d_ih[k];
        }
    }
    let d_enclosing = [
        if p[0] <= g[0] { -eh } else { 0.0 },
        if p[1] <= g[1] { -ew } else { 0.0 },
        if p[2] >= g[2] { eh } else { 0.0 },
        if p[3] >= g[3] { ew } else { 0.0 },
    ];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area_p[k] - d_inter[k];
        grad[k] = d_inter[k] / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_enclosing[k] / (enclosing * enclosing);
    }
    (value, grad)
}

/// L1 distance and its (sub)gradient with respect to the first box.
pub fn l1_with_grad(p: &[f64; 4], g: &[f64; 4]) -> (f64, [f64; 4]) {
    let mut grad = [0.0; 4];
    let mut value = 0.0;
    for k in 0..4 {
        let d = p[k] - g[k];
        value += d.abs();
        grad[k] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    (value, grad)
}
