//! MAP-versus-timestep chart as a standalone SVG.

use std::fmt::Write;

use crate::eval::AggregateCurve;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders one line per strategy with a ±1 std band, legend in input order.
/// Output depends only on the curves, so re-rendering from a saved aggregate
/// reproduces the same bytes. Returns `None` when there is nothing to draw.
pub fn render_map_chart(curves: &[AggregateCurve], title: &str) -> Option<String> {
    let t_max = curves.iter().map(AggregateCurve::len).max()?;
    if t_max == 0 {
        return None;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let span = (t_max - 1).max(1) as f64;
    let x = |t: usize| LEFT + plot_w * t as f64 / span;
    let y = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );

    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#e0e0e0"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 6.0,
            yy + 4.0
        );
    }
    let ticks = 5.min(t_max - 1).max(1);
    for k in 0..=ticks {
        let t = ((t_max - 1) * k).div_ceil(ticks);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{t}</text>"#,
            x(t),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">timestep</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">MAP</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let n = c.len();
        if n == 0 {
            continue;
        }
        let mut band = String::new();
        for t in 0..n {
            let _ = write!(band, "{:.2},{:.2} ", x(t), y(c.map_mean[t] + c.map_std[t]));
        }
        for t in (0..n).rev() {
            let _ = write!(band, "{:.2},{:.2} ", x(t), y(c.map_mean[t] - c.map_std[t]));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = (0..n).map(|t| format!("{:.2},{:.2}", x(t), y(c.map_mean[t]))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&c.strategy)
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(name: &str, n: usize) -> AggregateCurve {
        AggregateCurve {
            strategy: name.into(),
            map_mean: (0..n).map(|t| 0.3 + 0.01 * t as f64).collect(),
            map_std: vec![0.05; n],
            mapauc_mean: vec![0.3; n],
            n_species: 2,
            n_seeds: 3,
        }
    }

    #[test]
    fn empty_is_none() {
        assert!(render_map_chart(&[], "x").is_none());
    }

    #[test]
    fn legend_order_and_determinism() {
        let curves = [curve("WA_HSS+", 10), curve("LR_uncertain", 10)];
        let a = render_map_chart(&curves, "demo").unwrap();
        assert_eq!(a, render_map_chart(&curves, "demo").unwrap());
        let i = a.find(">WA_HSS+<").unwrap();
        let j = a.find(">LR_uncertain<").unwrap();
        assert!(i < j);
        assert_eq!(a.matches("<polyline").count(), 2);
        assert_eq!(a.matches("<polygon").count(), 2);
    }

    #[test]
    fn single_timestep() {
        assert!(render_map_chart(&[curve("a", 1)], "t").is_some());
    }
}
