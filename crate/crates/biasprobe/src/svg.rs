//! Minimal static SVG bar charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#c0504d", "#4f81bd", "#9bbb59", "#8064a2", "#f79646", "#4bacc6"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One cluster of bars sharing an x-axis label.
#[derive(Debug, Clone)]
pub struct Group {
    pub label: String,
    /// Value per series, `None` leaves a gap.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub series: Vec<String>,
    pub groups: Vec<Group>,
    /// Fixed y range; otherwise fitted to the data and zero.
    pub y_range: Option<(f64, f64)>,
}

impl BarChart {
    pub fn render(&self) -> String {
        let (w, h) = (640.0, 320.0);
        let (left, right, top, bottom) = (56.0, 16.0, 36.0, 64.0);
        let plot_w = w - left - right;
        let plot_h = h - top - bottom;
        let values = self.groups.iter().flat_map(|g| g.values.iter().flatten().copied());
        let (mut lo, mut hi) =
            self.y_range.unwrap_or_else(|| values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v))));
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        if self.y_range.is_none() {
            let pad = (hi - lo) * 0.05;
            hi += if hi > 0.0 { pad } else { 0.0 };
            lo -= if lo < 0.0 { pad } else { 0.0 };
        }
        let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

        let mut s = String::new();
        let _ = write!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
            w / 2.0,
            escape(&self.title)
        );
        let _ = write!(
            s,
            r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            top + plot_h / 2.0,
            escape(&self.y_label)
        );
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let yy = y(v);
            let _ = write!(
                s,
                r##"<line x1="{left}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                w - right,
                left - 4.0,
                yy + 4.0
            );
        }
        let zero = y(0.0_f64.clamp(lo, hi));
        let _ = write!(s, r##"<line x1="{left}" y1="{zero:.1}" x2="{}" y2="{zero:.1}" stroke="#333"/>"##, w - right);

        let n_groups = self.groups.len().max(1) as f64;
        let n_series = self.series.len().max(1) as f64;
        let group_w = plot_w / n_groups;
        let bar_w = group_w * 0.8 / n_series;
        for (gi, g) in self.groups.iter().enumerate() {
            let gx = left + group_w * gi as f64;
            for (si, v) in g.values.iter().enumerate() {
                let Some(v) = v else { continue };
                let x = gx + group_w * 0.1 + bar_w * si as f64;
                let (y0, y1) = (y(v.max(0.0).min(hi)), y(v.min(0.0).max(lo)));
                let _ = write!(
                    s,
                    r#"<rect x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v:.2}</title></rect>"#,
                    bar_w,
                    (y1 - y0).max(0.0),
                    PALETTE[si % PALETTE.len()],
                    escape(&self.series[si])
                );
            }
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                gx + group_w / 2.0,
                top + plot_h + 16.0,
                escape(&g.label)
            );
        }
        for (si, name) in self.series.iter().enumerate() {
            let x = left + 110.0 * si as f64;
            let yy = h - 18.0;
            let _ = write!(
                s,
                r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{yy}">{}</text>"#,
                yy - 9.0,
                PALETTE[si % PALETTE.len()],
                x + 14.0,
                escape(name)
            );
        }
        s.push_str("</svg>");
        s
    }
}
