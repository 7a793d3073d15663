//! Figure data and SVG rendering.
//!
//! Every figure is first written as CSV; the SVG is rendered by parsing that
//! CSV text, so the drawing can only show numbers that are in the file. Each
//! bar carries its number verbatim in a `data-value` attribute.

use std::fmt::Write as _;

use durel_core::GroupId;

use crate::error::CliError;

pub const RANK_HEADER: [&str; 5] = ["rank", "lemma", "pos", "delta_later", "class"];
pub const HISTOGRAMS_HEADER: [&str; 9] = [
    "lemma", "pos", "group", "count_0", "count_1", "count_2", "count_3", "count_4", "total",
];
pub const HIST_FIGURE_HEADER: [&str; 3] = ["group", "value", "count"];

const VALUE_LABELS: [&str; 5] = ["0 cannot decide", "1 unrelated", "2 distantly related", "3 closely related", "4 identical"];
const VALUE_COLORS: [&str; 5] = ["#b0b0b0", "#d7301f", "#fc8d59", "#74a9cf", "#0570b0"];

fn bad(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{what}: {e}"))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn check_header(r: &mut csv::Reader<&[u8]>, expected: &[&str], what: &str) -> Result<(), CliError> {
    let h = r.headers().map_err(|e| bad(what, e))?;
    if h.iter().take(expected.len()).collect::<Vec<_>>() != expected {
        return Err(bad(what, format!("unexpected header {:?}", h.iter().collect::<Vec<_>>())));
    }
    Ok(())
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 input")
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn target_label(lemma: &str, pos: &str) -> String {
    if pos.is_empty() {
        lemma.to_owned()
    } else {
        format!("{lemma}/{pos}")
    }
}

/// Ranked bar data from a measures CSV: descending Δ-LATER, undefined last,
/// input order kept among equals.
pub fn rank_figure_csv(measures_csv: &str) -> Result<String, CliError> {
    let mut r = reader(measures_csv);
    check_header(&mut r, &["lemma", "pos"], "measures CSV")?;
    let h = r.headers().map_err(|e| bad("measures CSV", e))?.clone();
    let col = |name: &str| {
        h.iter()
            .position(|c| c == name)
            .ok_or_else(|| bad("measures CSV", format!("no {name} column")))
    };
    let (dl, class) = (col("delta_later")?, col("class")?);

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad("measures CSV", e))?;
        let value = rec[dl].to_owned();
        let parsed = if value.is_empty() {
            None
        } else {
            Some(value.parse::<f64>().map_err(|e| bad("measures CSV", e))?)
        };
        rows.push((parsed, vec![rec[0].to_owned(), rec[1].to_owned(), value, rec[class].to_owned()]));
    }
    rows.sort_by(|a, b| match (a.0, b.0) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let rows: Vec<Vec<String>> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut r))| {
            r.insert(0, (i + 1).to_string());
            r
        })
        .collect();
    Ok(to_csv(&RANK_HEADER, &rows))
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 2.5 {
        2.5
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn class_color(class: &str) -> &'static str {
    match class {
        "INNOVATIVE" => "#c0392b",
        "REDUCTIVE" => "#2471a3",
        "STABLE" => "#7f8c8d",
        _ => "#cccccc",
    }
}

fn svg_open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n",
        escape(title)
    );
}

/// Renders the ranked Δ-LATER bar chart from [`rank_figure_csv`] output.
pub fn render_rank_svg(fig_csv: &str) -> Result<String, CliError> {
    let mut r = reader(fig_csv);
    check_header(&mut r, &RANK_HEADER, "rank figure CSV")?;
    let mut bars = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad("rank figure CSV", e))?;
        let text = rec[3].to_owned();
        let v = if text.is_empty() {
            None
        } else {
            Some(text.parse::<f64>().map_err(|e| bad("rank figure CSV", e))?)
        };
        bars.push((target_label(&rec[1], &rec[2]), text, v, rec[4].to_owned()));
    }

    let (left, right, top, plot_h, label_h) = (60.0, 20.0, 40.0, 240.0, 120.0);
    let bar_w = 26.0;
    let width = left + right + bar_w * bars.len().max(1) as f64;
    let height = top + plot_h + label_h;

    let values: Vec<f64> = bars.iter().filter_map(|b| b.2).collect();
    let mut lo = values.iter().copied().fold(0.0f64, f64::min);
    let mut hi = values.iter().copied().fold(0.0f64, f64::max);
    if hi - lo < 1e-12 {
        lo = -1.0;
        hi = 1.0;
    }
    let step = nice_step(hi - lo);
    lo = (lo / step).floor() * step;
    hi = (hi / step).ceil() * step;
    let y = |v: f64| top + (hi - v) / (hi - lo) * plot_h;

    let mut s = String::new();
    svg_open(&mut s, width, height, "Targets ranked by Δ-LATER");
    let _ = writeln!(s, "<text x=\"{left}\" y=\"20\" font-size=\"14\">Targets ranked by Δ-LATER</text>");
    let mut tick = lo;
    while tick <= hi + step * 1e-6 {
        let ty = y(tick);
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{}\" y1=\"{ty:.2}\" y2=\"{ty:.2}\" stroke=\"#e0e0e0\"/>\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{:.2}</text>",
            width - right,
            left - 6.0,
            ty + 4.0,
            tick
        );
        tick += step;
    }
    let zero = y(0.0);
    for (i, (label, text, v, class)) in bars.iter().enumerate() {
        let x = left + bar_w * i as f64 + 3.0;
        let (ry, rh) = match v {
            Some(v) => (y(v.max(0.0)), (y(v.min(0.0)) - y(v.max(0.0))).abs()),
            None => (zero, 0.0),
        };
        let _ = writeln!(
            s,
            "<rect class=\"bar\" x=\"{x:.2}\" y=\"{ry:.2}\" width=\"{:.2}\" height=\"{rh:.2}\" fill=\"{}\" \
             data-target=\"{}\" data-value=\"{}\"><title>{}: {}</title></rect>",
            bar_w - 6.0,
            class_color(class),
            escape(label),
            escape(text),
            escape(label),
            if text.is_empty() { "undefined" } else { text.as_str() },
        );
        let lx = x + (bar_w - 6.0) / 2.0;
        let ly = top + plot_h + 8.0;
        let _ = writeln!(
            s,
            "<text x=\"{lx:.2}\" y=\"{ly:.2}\" text-anchor=\"end\" transform=\"rotate(-60 {lx:.2} {ly:.2})\">{}</text>",
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" x2=\"{}\" y1=\"{zero:.2}\" y2=\"{zero:.2}\" stroke=\"#333333\"/>",
        width - right
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// One histogram figure per target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramFigure {
    pub label: String,
    /// File name stem, unique within one plot run.
    pub stem: String,
    pub csv: String,
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Splits a histograms CSV into per-target `group,value,count` tables.
pub fn histogram_figure_csvs(histograms_csv: &str) -> Result<Vec<HistogramFigure>, CliError> {
    let mut r = reader(histograms_csv);
    check_header(&mut r, &HISTOGRAMS_HEADER, "histograms CSV")?;
    let mut order: Vec<(String, String)> = Vec::new();
    let mut rows: Vec<Vec<Vec<String>>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad("histograms CSV", e))?;
        let target = (rec[0].to_owned(), rec[1].to_owned());
        let idx = match order.iter().position(|t| *t == target) {
            Some(i) => i,
            None => {
                order.push(target);
                rows.push(Vec::new());
                order.len() - 1
            }
        };
        let group: GroupId = rec[2].parse().map_err(|e| bad("histograms CSV", e))?;
        for v in 0..5 {
            let count = &rec[3 + v];
            count
                .parse::<u64>()
                .map_err(|e| bad("histograms CSV", format!("count {count:?}: {e}")))?;
            rows[idx].push(vec![group.as_str().to_owned(), v.to_string(), count.to_owned()]);
        }
    }
    Ok(order
        .into_iter()
        .zip(rows)
        .enumerate()
        .map(|(i, ((lemma, pos), rows))| {
            let label = target_label(&lemma, &pos);
            HistogramFigure {
                stem: format!("hist_{:02}_{}", i + 1, slug(&label)),
                label,
                csv: to_csv(&HIST_FIGURE_HEADER, &rows),
            }
        })
        .collect())
}

/// Grouped bars of judgment counts, one cluster per group.
pub fn render_histogram_svg(title: &str, fig_csv: &str) -> Result<String, CliError> {
    let mut r = reader(fig_csv);
    check_header(&mut r, &HIST_FIGURE_HEADER, "histogram figure CSV")?;
    let mut cells = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad("histogram figure CSV", e))?;
        let group: GroupId = rec[0].parse().map_err(|e| bad("histogram figure CSV", e))?;
        let value: usize = rec[1]
            .parse()
            .ok()
            .filter(|v| *v < 5)
            .ok_or_else(|| bad("histogram figure CSV", format!("value {:?}", &rec[1])))?;
        let count: u64 = rec[2].parse().map_err(|e| bad("histogram figure CSV", e))?;
        cells.push((group, value, rec[2].to_owned(), count));
    }

    let (left, top, plot_h, bottom) = (50.0, 40.0, 200.0, 90.0);
    let (bar_w, cluster_gap) = (16.0, 24.0);
    let cluster_w = bar_w * 5.0;
    let width = left + 3.0 * cluster_w + 4.0 * cluster_gap;
    let height = top + plot_h + bottom;
    let max = cells.iter().map(|c| c.3).max().unwrap_or(0).max(1) as f64;
    let step = nice_step(max).max(1.0);
    let y_max = (max / step).ceil() * step;
    let y = |v: f64| top + (1.0 - v / y_max) * plot_h;

    let mut s = String::new();
    svg_open(&mut s, width, height, &format!("Judgment counts for {title}"));
    let _ = writeln!(s, "<text x=\"{left}\" y=\"20\" font-size=\"14\">{}</text>", escape(title));
    let mut tick = 0.0;
    while tick <= y_max + 1e-9 {
        let ty = y(tick);
        let _ = writeln!(
            s,
            "<line x1=\"{left}\" x2=\"{width}\" y1=\"{ty:.2}\" y2=\"{ty:.2}\" stroke=\"#e0e0e0\"/>\
             <text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{tick}</text>",
            left - 6.0,
            ty + 4.0
        );
        tick += step;
    }
    for (gi, g) in GroupId::ALL.iter().enumerate() {
        let x0 = left + cluster_gap + gi as f64 * (cluster_w + cluster_gap);
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x0 + cluster_w / 2.0,
            top + plot_h + 16.0,
            g.as_str()
        );
        for (group, value, text, count) in cells.iter().filter(|c| c.0 == *g) {
            let x = x0 + bar_w * *value as f64;
            let ry = y(*count as f64);
            let _ = writeln!(
                s,
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{ry:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\" \
                 data-group=\"{}\" data-judgment=\"{value}\" data-value=\"{}\"><title>{} {}: {}</title></rect>",
                bar_w - 2.0,
                top + plot_h - ry,
                VALUE_COLORS[*value],
                group.as_str(),
                escape(text),
                group.as_str(),
                VALUE_LABELS[*value],
                escape(text),
            );
        }
    }
    let _ = writeln!(
        s,
        "<line x1=\"{left}\" x2=\"{width}\" y1=\"{0:.2}\" y2=\"{0:.2}\" stroke=\"#333333\"/>",
        top + plot_h
    );
    for (v, label) in VALUE_LABELS.iter().enumerate() {
        let lx = left + (v % 3) as f64 * 120.0;
        let ly = top + plot_h + 40.0 + (v / 3) as f64 * 18.0;
        let _ = writeln!(
            s,
            "<rect x=\"{lx:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>\
             <text x=\"{:.2}\" y=\"{ly:.2}\">{label}</text>",
            ly - 9.0,
            VALUE_COLORS[v],
            lx + 14.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}
