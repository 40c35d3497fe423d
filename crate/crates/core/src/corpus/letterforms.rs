//! Stroke skeletons for the 26 capitals and a distance-field rasterizer.
//!
//! Skeleton coordinates live in a unit box, x to the right and y down. The
//! drawer applies width, aspect, slant and serifs as geometric transforms,
//! so every planted attribute is a deterministic function of the style.

use std::f64::consts::PI;

type Pt = (f64, f64);

/// Parameters of one rendered style.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Style {
    /// Stroke width in em units.
    pub stroke: f64,
    /// Letter width as a fraction of the em box.
    pub width: f64,
    /// Horizontal shear; positive leans the top to the right.
    pub slant: f64,
    pub serif: bool,
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Vec<Pt> {
    let steps = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|s| {
            let t = (from_deg + (to_deg - from_deg) * s as f64 / steps as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn line(pts: &[Pt]) -> Vec<Pt> {
    pts.to_vec()
}

fn join(mut a: Vec<Pt>, b: Vec<Pt>) -> Vec<Pt> {
    a.extend(b);
    a
}

/// Polyline strokes of capital `c` (class index 0..26).
pub fn skeleton(class: usize) -> Vec<Vec<Pt>> {
    match class {
        0 => vec![line(&[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]), line(&[(0.22, 0.62), (0.78, 0.62)])],
        1 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            join(line(&[(0.0, 0.0), (0.55, 0.0)]), join(arc(0.55, 0.25, 0.35, 0.25, -90.0, 90.0), line(&[(0.0, 0.5)]))),
            join(line(&[(0.0, 0.5), (0.6, 0.5)]), join(arc(0.6, 0.75, 0.4, 0.25, -90.0, 90.0), line(&[(0.0, 1.0)]))),
        ],
        2 => vec![arc(0.55, 0.5, 0.5, 0.5, -40.0, -320.0)],
        3 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            join(line(&[(0.0, 0.0), (0.45, 0.0)]), join(arc(0.45, 0.5, 0.55, 0.5, -90.0, 90.0), line(&[(0.0, 1.0)]))),
        ],
        4 => vec![
            line(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]),
            line(&[(0.0, 0.5), (0.8, 0.5)]),
        ],
        5 => vec![line(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]), line(&[(0.0, 0.5), (0.8, 0.5)])],
        6 => vec![
            arc(0.55, 0.5, 0.5, 0.5, -40.0, -360.0),
            line(&[(1.05, 0.5), (1.05, 0.85)]),
            line(&[(0.6, 0.55), (1.05, 0.55)]),
        ],
        7 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            line(&[(1.0, 0.0), (1.0, 1.0)]),
            line(&[(0.0, 0.5), (1.0, 0.5)]),
        ],
        8 => vec![line(&[(0.5, 0.0), (0.5, 1.0)])],
        9 => vec![join(line(&[(0.85, 0.0), (0.85, 0.68)]), arc(0.475, 0.68, 0.375, 0.32, 0.0, 180.0))],
        10 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            line(&[(1.0, 0.0), (0.0, 0.6)]),
            line(&[(0.32, 0.42), (1.0, 1.0)]),
        ],
        11 => vec![line(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        12 => vec![line(&[(0.0, 1.0), (0.0, 0.0), (0.5, 0.7), (1.0, 0.0), (1.0, 1.0)])],
        13 => vec![line(&[(0.0, 1.0), (0.0, 0.0), (1.0, 1.0), (1.0, 0.0)])],
        14 => vec![arc(0.5, 0.5, 0.5, 0.5, 0.0, 360.0)],
        15 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            join(line(&[(0.0, 0.0), (0.6, 0.0)]), join(arc(0.6, 0.275, 0.4, 0.275, -90.0, 90.0), line(&[(0.0, 0.55)]))),
        ],
        16 => vec![arc(0.5, 0.5, 0.5, 0.5, 0.0, 360.0), line(&[(0.6, 0.72), (1.0, 1.0)])],
        17 => vec![
            line(&[(0.0, 0.0), (0.0, 1.0)]),
            join(line(&[(0.0, 0.0), (0.6, 0.0)]), join(arc(0.6, 0.275, 0.4, 0.275, -90.0, 90.0), line(&[(0.0, 0.55)]))),
            line(&[(0.45, 0.55), (1.0, 1.0)]),
        ],
        18 => vec![join(
            arc(0.5, 0.26, 0.45, 0.26, -20.0, -270.0),
            arc(0.5, 0.74, 0.5, 0.26, -90.0, 160.0),
        )],
        19 => vec![line(&[(0.0, 0.0), (1.0, 0.0)]), line(&[(0.5, 0.0), (0.5, 1.0)])],
        20 => vec![join(
            join(line(&[(0.0, 0.0)]), arc(0.5, 0.65, 0.5, 0.35, 180.0, 0.0)),
            line(&[(1.0, 0.0)]),
        )],
        21 => vec![line(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)])],
        22 => vec![line(&[(0.0, 0.0), (0.25, 1.0), (0.5, 0.35), (0.75, 1.0), (1.0, 0.0)])],
        23 => vec![line(&[(0.0, 0.0), (1.0, 1.0)]), line(&[(1.0, 0.0), (0.0, 1.0)])],
        24 => vec![line(&[(0.0, 0.0), (0.5, 0.5), (1.0, 0.0)]), line(&[(0.5, 0.5), (0.5, 1.0)])],
        25 => vec![line(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        _ => panic!("character class {class} out of range"),
    }
}

const TOP: f64 = 0.15;
const BOTTOM: f64 = 0.85;

/// Maps skeleton coordinates into the em box under `style`.
fn place(p: Pt, style: &Style) -> Pt {
    let y = TOP + p.1 * (BOTTOM - TOP);
    let x = 0.5 + (p.0 - 0.5) * style.width;
    (x + (0.5 - y) * style.slant, y)
}

/// Short horizontal bars at vertical stroke ends touching the cap or base line.
fn serifs(strokes: &[Vec<Pt>], style: &Style) -> Vec<(Pt, Pt)> {
    let half = 0.09 * style.width.max(0.5) + style.stroke * 0.5;
    let mut out = Vec::new();
    for s in strokes {
        if s.len() < 2 {
            continue;
        }
        for (end, next) in [(s[0], s[1]), (s[s.len() - 1], s[s.len() - 2])] {
            let (dx, dy) = (next.0 - end.0, next.1 - end.1);
            let on_line = end.1 <= 0.02 || end.1 >= 0.98;
            if on_line && dy.abs() > dx.abs() {
                let c = place(end, style);
                out.push(((c.0 - half, c.1), (c.0 + half, c.1)));
            }
        }
    }
    out
}

fn segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

/// Antialiased raster of class `class`, `side x side`, ink = 1.
pub fn render(class: usize, style: &Style, side: usize) -> Vec<f32> {
    let strokes = skeleton(class);
    let mut segments: Vec<(Pt, Pt, f64)> = Vec::new();
    for s in &strokes {
        for w in s.windows(2) {
            segments.push((place(w[0], style), place(w[1], style), style.stroke));
        }
    }
    if style.serif {
        let thickness = (style.stroke * 0.6).max(0.035);
        for (a, b) in serifs(&strokes, style) {
            segments.push((a, b, thickness));
        }
    }
    let pixel = 1.0 / side as f64;
    let mut out = vec![0.0f32; side * side];
    for y in 0..side {
        for x in 0..side {
            let p = ((x as f64 + 0.5) * pixel, (y as f64 + 0.5) * pixel);
            let mut best = 0.0f64;
            for &(a, b, w) in &segments {
                let d = segment_distance(p, a, b);
                let cov = ((w * 0.5 - d) / pixel + 0.5).clamp(0.0, 1.0);
                if cov > best {
                    best = cov;
                    if best >= 1.0 {
                        break;
                    }
                }
            }
            out[y * side + x] = best as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regular() -> Style {
        Style {
            stroke: 0.09,
            width: 0.6,
            slant: 0.0,
            serif: false,
        }
    }

    #[test]
    fn every_class_has_ink() {
        for c in 0..26 {
            let img = render(c, &regular(), 32);
            let ink: f32 = img.iter().sum();
            assert!(ink > 10.0, "class {c} nearly empty");
            assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn bold_has_more_ink_than_thin() {
        let mut thin = regular();
        thin.stroke = 0.04;
        let mut bold = regular();
        bold.stroke = 0.16;
        for c in 0..26 {
            let a: f32 = render(c, &thin, 32).iter().sum();
            let b: f32 = render(c, &bold, 32).iter().sum();
            assert!(b > 1.5 * a);
        }
    }

    #[test]
    fn serifs_add_ink_to_stemmed_letters() {
        let mut s = regular();
        let plain: f32 = render(7, &s, 64).iter().sum();
        s.serif = true;
        let serifed: f32 = render(7, &s, 64).iter().sum();
        assert!(serifed > plain);
    }
}
