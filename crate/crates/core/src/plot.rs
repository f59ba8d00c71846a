//! Deterministic SVG figure emission: line plots with standard-error bands.
//! Pure string construction with fixed styling, so identical data yields
//! byte-identical files.

use crate::eval::PrequentialCurve;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Half-width of the shaded band (standard error), per point.
    pub band: Vec<f64>,
}

impl Series {
    pub fn from_curve(curve: &PrequentialCurve, label: &str) -> Self {
        Series {
            label: label.to_string(),
            xs: curve.context_sizes.iter().map(|&c| c as f64).collect(),
            ys: curve.mean_error.clone(),
            band: curve.stderr.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            title: String::new(),
            x_label: "datapoints seen".into(),
            y_label: "generalization error".into(),
            width: 640.0,
            height: 420.0,
        }
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi - lo).is_finite() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let start = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = start;
    while t <= hi + step * 1e-9 {
        ticks.push(t);
        t += step;
    }
    ticks
}

/// Renders one figure with a shaded standard-error band per series.
pub fn render_svg(series: &[Series], opts: &PlotOptions) -> String {
    let (w, h) = (opts.width, opts.height);
    let (ml, mr, mt, mb) = (62.0, 16.0, 36.0, 46.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, &x) in s.xs.iter().enumerate() {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(s.ys[i] - s.band[i]);
            y_max = y_max.max(s.ys[i] + s.band[i]);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;
    let x_span = (x_max - x_min).max(1e-12);

    let px = |x: f64| ml + (x - x_min) / x_span * pw;
    let py = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" \
         text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        opts.title
    ));

    // axes
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    svg.push_str(&format!(
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - mb
    ));
    for t in nice_ticks(x_min, x_max, 6) {
        let x = px(t);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#cccccc\"/>\n",
            mt,
            h - mb
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            h - mb + 16.0,
            fmt(t)
        ));
    }
    for t in nice_ticks(y_min, y_max, 5) {
        let y = py(t);
        svg.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y:.2}\" x2=\"{}\" y2=\"{y:.2}\" stroke=\"#cccccc\"/>\n",
            w - mr
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            ml - 6.0,
            y + 4.0,
            fmt(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">{}</text>\n",
        ml + pw / 2.0,
        h - 8.0,
        opts.x_label
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0,
        opts.y_label
    ));

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        if s.xs.is_empty() {
            continue;
        }
        // band polygon: upper path then reversed lower path
        let mut band = String::from("<polygon points=\"");
        for (i, &x) in s.xs.iter().enumerate() {
            band.push_str(&format!("{:.2},{:.2} ", px(x), py(s.ys[i] + s.band[i])));
        }
        for (i, &x) in s.xs.iter().enumerate().rev() {
            band.push_str(&format!("{:.2},{:.2} ", px(x), py(s.ys[i] - s.band[i])));
        }
        band.push_str(&format!(
            "\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
        ));
        svg.push_str(&band);

        let mut line = String::from("<polyline points=\"");
        for (i, &x) in s.xs.iter().enumerate() {
            line.push_str(&format!("{:.2},{:.2} ", px(x), py(s.ys[i])));
        }
        line.push_str(&format!(
            "\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n"
        ));
        svg.push_str(&line);

        // legend entry
        let ly = mt + 14.0 + 16.0 * si as f64;
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly:.2}\" x2=\"{}\" y2=\"{ly:.2}\" stroke=\"{color}\" \
             stroke-width=\"2\"/>\n",
            w - mr - 150.0,
            w - mr - 126.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            w - mr - 120.0,
            ly + 4.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
