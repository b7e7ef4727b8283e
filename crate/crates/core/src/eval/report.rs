use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::corrupt::Category;
use super::robustness::EvalReport;
use super::{EvalError, Result};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Plain-text table with one row per named report. The corrupted column is
/// the uniform mean over all evaluated (kind, severity) cells.
pub fn render_table(rows: &[(String, EvalReport)]) -> String {
    let mut header = vec!["run".to_string(), "clean".into(), "corrupted".into()];
    header.extend(Category::ALL.iter().map(|c| c.as_str().to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone(), format!("{:.2}", r.clean_top1), fmt_opt(r.corrupted_mean)];
            row.extend(Category::ALL.iter().map(|c| fmt_opt(r.category_means.get(c).copied())));
            row
        })
        .collect();
    let widths: Vec<usize> = (0..header.len()).map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0)).collect();
    let line = |cells: &[String]| {
        cells.iter().zip(&widths).enumerate().map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") }).collect::<Vec<_>>().join("  ")
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

/// Every cell of every report as `run,kind,severity,accuracy`, with the
/// clean accuracy on a `clean,0` row.
pub fn report_csv(rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("run,kind,severity,accuracy\n");
    for (name, r) in rows {
        let _ = writeln!(out, "{name},clean,0,{}", r.clean_top1);
        for c in &r.cells {
            let _ = writeln!(out, "{name},{},{},{}", c.kind, c.severity, c.accuracy);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Draws one polyline per series (points sorted by x) on white axes.
/// Series colors follow first appearance in `points`.
pub fn write_sweep_plot(points: &[SweepPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(EvalError::Config("nothing to plot".into()));
    }
    let (w, h, m) = (480u32, 320u32, 24.0);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let xr = if xmax > xmin { xmax - xmin } else { 1.0 };
    let yr = if ymax > ymin { ymax - ymin } else { 1.0 };
    let to_px = |x: f64, y: f64| (m + (x - xmin) / xr * (w as f64 - 2.0 * m), h as f64 - m - (y - ymin) / yr * (h as f64 - 2.0 * m));
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (m, h as f64 - m), (w as f64 - m, h as f64 - m), axis);
    draw_line(&mut img, (m, m), (m, h as f64 - m), axis);
    let mut series: Vec<&str> = Vec::new();
    for p in points {
        if !series.contains(&p.series.as_str()) {
            series.push(&p.series);
        }
    }
    for (si, name) in series.iter().enumerate() {
        let color = Rgb(PALETTE[si % PALETTE.len()]);
        let mut pts: Vec<(f64, f64)> = points.iter().filter(|p| p.series == *name).map(|p| to_px(p.x, p.y)).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &pts {
            for d in -2i32..=2 {
                draw_line(&mut img, (x + d as f64, y - 2.0), (x + d as f64, y + 2.0), color);
            }
        }
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
