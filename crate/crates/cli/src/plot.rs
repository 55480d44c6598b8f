//! Minimal SVG line chart for width sweeps. CSV remains the canonical
//! output; the chart is a convenience.

use tbn_core::model::SweepPoint;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_BOTTOM: f64 = 50.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_RIGHT: f64 = 20.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    mean: Vec<f64>,
    std: Vec<f64>,
}

pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let series = [
        Series {
            label: "verb",
            color: "#1f77b4",
            mean: points.iter().map(|p| p.verb_mean).collect(),
            std: points.iter().map(|p| p.verb_std).collect(),
        },
        Series {
            label: "noun",
            color: "#ff7f0e",
            mean: points.iter().map(|p| p.noun_mean).collect(),
            std: points.iter().map(|p| p.noun_std).collect(),
        },
        Series {
            label: "action",
            color: "#2ca02c",
            mean: points.iter().map(|p| p.action_mean).collect(),
            std: points.iter().map(|p| p.action_std).collect(),
        },
    ];
    let y_max = series
        .iter()
        .flat_map(|s| s.mean.iter().zip(&s.std).map(|(m, d)| m + d))
        .fold(0.0f64, f64::max)
        .max(0.05)
        * 1.05;
    let n = points.len().max(2);
    let x = |i: usize| {
        MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) * i as f64 / (n - 1) as f64
    };
    let y = |v: f64| {
        let usable = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        HEIGHT - MARGIN_BOTTOM - usable * (v / y_max)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{}\" stroke=\"#333\"/>\n",
        HEIGHT - MARGIN_BOTTOM
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_LEFT}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#333\"/>\n",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT
    ));
    // Y ticks.
    let mut tick = 0.0;
    while tick <= y_max {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" fill=\"#333\">{tick:.2}</text>\n",
            MARGIN_LEFT - 6.0,
            y(tick) + 4.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_LEFT}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"#ddd\"/>\n",
            y(tick),
            WIDTH - MARGIN_RIGHT
        ));
        tick += (y_max / 5.0).max(0.01);
    }
    // X labels.
    for (i, p) in points.iter().enumerate() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" fill=\"#333\">{}</text>\n",
            x(i),
            HEIGHT - MARGIN_BOTTOM + 18.0,
            p.label
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333\">binding window width</text>\n",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#333\" transform=\"rotate(-90 14 {0})\">top-1 accuracy</text>\n",
        (MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0
    ));

    for (si, s) in series.iter().enumerate() {
        // Standard-deviation band.
        let mut band = String::from("<polygon points=\"");
        for (i, (m, d)) in s.mean.iter().zip(&s.std).enumerate() {
            band.push_str(&format!("{:.1},{:.1} ", x(i), y((m + d).min(y_max))));
        }
        for (i, (m, d)) in s.mean.iter().zip(&s.std).enumerate().rev() {
            band.push_str(&format!("{:.1},{:.1} ", x(i), y((m - d).max(0.0))));
        }
        band.push_str(&format!("\" fill=\"{}\" opacity=\"0.15\"/>\n", s.color));
        svg.push_str(&band);
        // Mean line.
        let mut line = String::from("<polyline fill=\"none\" points=\"");
        for (i, m) in s.mean.iter().enumerate() {
            line.push_str(&format!("{:.1},{:.1} ", x(i), y(*m)));
        }
        line.push_str(&format!("\" stroke=\"{}\" stroke-width=\"2\"/>\n", s.color));
        svg.push_str(&line);
        // Legend.
        let ly = MARGIN_TOP + 16.0 * si as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n",
            WIDTH - 110.0,
            ly,
            s.color
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#333\">{}</text>\n",
            WIDTH - 92.0,
            ly + 5.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emits_well_formed_svg_with_all_series() {
        let points = vec![
            SweepPoint {
                label: "sync".into(),
                width_rel: 0.0,
                runs: 3,
                verb_mean: 0.2,
                verb_std: 0.02,
                noun_mean: 0.25,
                noun_std: 0.01,
                action_mean: 0.15,
                action_std: 0.02,
            },
            SweepPoint {
                label: "T/10".into(),
                width_rel: 0.1,
                runs: 3,
                verb_mean: 0.4,
                verb_std: 0.03,
                noun_mean: 0.42,
                noun_std: 0.02,
                action_mean: 0.3,
                action_std: 0.03,
            },
        ];
        let svg = sweep_svg(&points);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert_eq!(svg.matches("<polygon").count(), 3);
        assert!(svg.contains("T/10"));
    }
}
