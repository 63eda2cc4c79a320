use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::math::format_real;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MseRow {
    pub t: usize,
    pub variant: String,
    pub mse: f64,
    pub stderr: f64,
    pub n_trials: usize,
    /// Set when a single trial leaves the standard error undefined.
    pub stderr_degenerate: bool,
}

/// Per-step mean squared errors, one row per `(t, variant)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MseTable {
    pub rows: Vec<MseRow>,
}

pub const CSV_HEADER: &str = "t,variant,mse,stderr,n_trials";

impl MseTable {
    pub fn get(&self, variant: &str, t: usize) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.variant == variant && r.t == t)
    }

    /// Variant names in first-appearance order.
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    pub fn series(&self, variant: &str) -> Vec<&MseRow> {
        self.rows.iter().filter(|r| r.variant == variant).collect()
    }

    pub fn extend(&mut self, other: MseTable) {
        self.rows.extend(other.rows);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.t,
                r.variant,
                format_real(r.mse),
                format_real(r.stderr),
                r.n_trials
            )?;
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(Error::Config("missing MSE table header".into()));
        }
        let bad = |line: &str| Error::Config(format!("malformed MSE row `{line}`"));
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 5 {
                    return Err(bad(line));
                }
                let n_trials: usize = f[4].parse().map_err(|_| bad(line))?;
                Ok(MseRow {
                    t: f[0].parse().map_err(|_| bad(line))?,
                    variant: f[1].to_string(),
                    mse: f[2].parse().map_err(|_| bad(line))?,
                    stderr: f[3].parse().map_err(|_| bad(line))?,
                    n_trials,
                    stderr_degenerate: n_trials < 2,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { rows })
    }

    /// Line chart of MSE against `t`, one polyline per variant.
    pub fn to_svg(&self, log_scale: bool) -> String {
        const W: f64 = 720.0;
        const H: f64 = 440.0;
        const M: f64 = 60.0;
        const COLOURS: [&str; 10] = [
            "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
            "#bcbd22", "#17becf",
        ];
        let variants = self.variants();
        let value = |mse: f64| if log_scale { mse.max(1e-300).log10() } else { mse };
        let (mut t_max, mut lo, mut hi) = (1usize, f64::INFINITY, f64::NEG_INFINITY);
        for r in &self.rows {
            t_max = t_max.max(r.t);
            if !log_scale || r.mse > 0.0 {
                lo = lo.min(value(r.mse));
                hi = hi.max(value(r.mse));
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let px = |t: usize| M + (t as f64 - 1.0) / (t_max.max(2) as f64 - 1.0) * (W - 2.0 * M);
        let py = |v: f64| H - M - (v - lo) / (hi - lo) * (H - 2.0 * M);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{M}" y1="{y}" x2="{x}" y2="{y}" stroke="black"/><line x1="{M}" y1="{M}" x2="{M}" y2="{y}" stroke="black"/>"#,
            x = W - M,
            y = H - M
        );
        let y_label = if log_scale { "log10 MSE" } else { "MSE" };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12">t</text><text x="8" y="{}" font-size="12">{y_label}</text>"#,
            W / 2.0,
            H - 20.0,
            M - 12.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{:.1}" font-size="10">{}</text><text x="8" y="{:.1}" font-size="10">{}</text>"#,
            py(hi),
            format_tick(hi),
            py(lo),
            format_tick(lo)
        );
        for (i, name) in variants.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            let points: Vec<String> = self
                .series(name)
                .iter()
                .filter(|r| !log_scale || r.mse > 0.0)
                .map(|r| format!("{:.2},{:.2}", px(r.t), py(value(r.mse))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
            let ly = M + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<g class="legend"><line x1="{x0}" y1="{ly}" x2="{x1}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{tx}" y="{ty}" font-size="11">{name}</text></g>"#,
                x0 = W - M - 130.0,
                x1 = W - M - 110.0,
                tx = W - M - 105.0,
                ty = ly + 4.0
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

fn format_tick(v: f64) -> String {
    format!("{v:.3}")
}

/// Mean and standard error of per-trial losses; `losses[i][t−1]` is the
/// loss of trial `i` at step `t`. The standard error is the sample standard
/// deviation over `√M`, reported as 0 (and flagged) for a single trial.
pub fn aggregate_losses(variant: &str, losses: &[Vec<f64>]) -> Result<MseTable> {
    let Some(first) = losses.first() else {
        return Err(Error::Config("no trials to aggregate".into()));
    };
    let steps = first.len();
    if losses.iter().any(|l| l.len() != steps) {
        return Err(Error::DimensionMismatch {
            expected: steps,
            got: losses.iter().map(Vec::len).find(|&n| n != steps).unwrap_or(steps),
        });
    }
    let m = losses.len();
    let rows = (0..steps)
        .map(|i| {
            let mean = losses.iter().map(|l| l[i]).sum::<f64>() / m as f64;
            let stderr = if m > 1 {
                let var = losses.iter().map(|l| (l[i] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                (var / m as f64).sqrt()
            } else {
                0.0
            };
            MseRow {
                t: i + 1,
                variant: variant.to_string(),
                mse: mean,
                stderr,
                n_trials: m,
                stderr_degenerate: m < 2,
            }
        })
        .collect();
    Ok(MseTable { rows })
}

/// [`aggregate_losses`] of the squared prediction errors.
pub fn aggregate_mse(variant: &str, errors: &[Vec<f64>]) -> Result<MseTable> {
    let squared: Vec<Vec<f64>> = errors
        .iter()
        .map(|e| e.iter().map(|v| v * v).collect())
        .collect();
    aggregate_losses(variant, &squared)
}

/// Writes the CSV to `path` and, when requested, an SVG chart next to it.
/// Returns the paths written.
pub fn write_outputs(table: &MseTable, path: &Path, svg: bool, log_scale: bool) -> Result<Vec<PathBuf>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut written = vec![path.to_path_buf()];
    let mut buf = Vec::new();
    table.write_csv(&mut buf)?;
    std::fs::write(path, buf)?;
    if svg {
        let svg_path = path.with_extension("svg");
        std::fs::write(&svg_path, table.to_svg(log_scale))?;
        written.push(svg_path);
    }
    Ok(written)
}
