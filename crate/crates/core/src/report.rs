//! Figure-analogue outputs: box plots of test R^2 across seeds, Davies-
//! Bouldin bar charts, 2-D latent scatter plots, and centroid-distance
//! heatmaps. Every SVG gets a sibling data table with the exact plotted
//! numbers, and all files are written atomically (temp file + rename) with
//! no timestamps, so reruns are byte-identical.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Write bytes via a temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One completed experiment cell.
#[derive(Debug, Clone)]
pub struct MatrixCell {
    pub regime: String,
    pub criterion: String,
    pub seed: u64,
    pub r_squared: f64,
    pub davies_bouldin: f64,
    pub embedding_path: PathBuf,
}

/// Results over the full (regime, criterion, seed) grid.
#[derive(Debug, Clone)]
pub struct ExperimentMatrix {
    pub regimes: Vec<String>,
    pub criteria: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<MatrixCell>,
}

impl ExperimentMatrix {
    /// Check the grid is complete with no duplicate cells; report every
    /// missing (regime, criterion, seed) triple.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for cell in &self.cells {
            if !seen.insert((cell.regime.clone(), cell.criterion.clone(), cell.seed)) {
                return Err(Error::Validation(format!(
                    "duplicate matrix cell ({}, {}, {})",
                    cell.regime, cell.criterion, cell.seed
                )));
            }
        }
        let mut missing = Vec::new();
        for regime in &self.regimes {
            for criterion in &self.criteria {
                for &seed in &self.seeds {
                    if !seen.contains(&(regime.clone(), criterion.clone(), seed)) {
                        missing.push(format!("({regime}, {criterion}, {seed})"));
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "experiment matrix is missing cells: {}",
                missing.join(", ")
            )));
        }
        Ok(())
    }

    fn cell(&self, regime: &str, criterion: &str, seed: u64) -> &MatrixCell {
        self.cells
            .iter()
            .find(|c| c.regime == regime && c.criterion == criterion && c.seed == seed)
            .expect("validated matrix")
    }
}

/// Five-number box-plot summary with quartiles by linear interpolation on
/// the sorted sample.
pub fn boxplot_stats(values: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::Validation("box plot of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    };
    Ok((sorted[0], q(0.25), q(0.5), q(0.75), sorted[sorted.len() - 1]))
}

const PALETTE: [&str; 10] = [
    "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951", "#ff8ab7", "#a463f2", "#97bbf5",
    "#9c6b4e", "#9498a0",
];

fn fnum(v: f64) -> String {
    format!("{v:.4}")
}

struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    fn new(width: f64, height: f64) -> Self {
        Svg {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, w: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="{w}"/>"#,
            fnum(x1),
            fnum(y1),
            fnum(x2),
            fnum(y2)
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="{stroke}"/>"#,
            fnum(x),
            fnum(y),
            fnum(w.max(0.0)),
            fnum(h.max(0.0))
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{}" cy="{}" r="{}" fill="{fill}"/>"#,
            fnum(x),
            fnum(y),
            fnum(r)
        );
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{}" y="{}" font-size="{}" font-family="sans-serif" text-anchor="{anchor}">{content}</text>"#,
            fnum(x),
            fnum(y),
            fnum(size)
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\">\n<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n{}</svg>\n",
            fnum(self.width),
            fnum(self.height),
            fnum(self.width),
            fnum(self.height),
            self.body
        )
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    top: f64,
    bottom: f64,
}

impl Scale {
    fn new(values: &[f64], top: f64, bottom: f64) -> Self {
        let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.08 * (hi - lo);
        Scale {
            lo: lo - pad,
            hi: hi + pad,
            top,
            bottom,
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.bottom - (v - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)
    }

    /// Horizontal mapping: lo lands on `top` (left), hi on `bottom` (right).
    fn x(&self, v: f64) -> f64 {
        self.top + (v - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)
    }
}

fn render_boxplot_svg(title: &str, regimes: &[String], stats: &[(f64, f64, f64, f64, f64)]) -> String {
    let (width, height) = (460.0, 320.0);
    let mut svg = Svg::new(width, height);
    let all: Vec<f64> = stats.iter().flat_map(|s| [s.0, s.4]).collect();
    let scale = Scale::new(&all, 40.0, height - 50.0);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    svg.line(50.0, scale.top, 50.0, scale.bottom, "#333", 1.0);
    svg.line(50.0, scale.bottom, width - 20.0, scale.bottom, "#333", 1.0);
    for tick in 0..=4 {
        let v = scale.lo + (scale.hi - scale.lo) * tick as f64 / 4.0;
        let y = scale.y(v);
        svg.line(46.0, y, 50.0, y, "#333", 1.0);
        svg.text(42.0, y + 3.0, 9.0, "end", &format!("{v:.2}"));
    }
    let slot = (width - 90.0) / regimes.len() as f64;
    for (i, (regime, s)) in regimes.iter().zip(stats).enumerate() {
        let cx = 50.0 + slot * (i as f64 + 0.5);
        let half = slot * 0.18;
        let color = PALETTE[i % PALETTE.len()];
        let (min, q1, med, q3, max) = *s;
        svg.line(cx, scale.y(min), cx, scale.y(q1), "#333", 1.0);
        svg.line(cx, scale.y(q3), cx, scale.y(max), "#333", 1.0);
        svg.line(cx - half, scale.y(min), cx + half, scale.y(min), "#333", 1.0);
        svg.line(cx - half, scale.y(max), cx + half, scale.y(max), "#333", 1.0);
        svg.rect(
            cx - half,
            scale.y(q3),
            2.0 * half,
            scale.y(q1) - scale.y(q3),
            color,
            "#333",
        );
        svg.line(cx - half, scale.y(med), cx + half, scale.y(med), "#000", 1.5);
        svg.text(cx, height - 32.0, 10.0, "middle", regime);
    }
    svg.finish()
}

fn render_bar_svg(title: &str, regimes: &[String], values: &[f64]) -> String {
    let (width, height) = (460.0, 320.0);
    let mut svg = Svg::new(width, height);
    let mut padded: Vec<f64> = values.to_vec();
    padded.push(0.0);
    let scale = Scale::new(&padded, 40.0, height - 50.0);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    svg.line(50.0, scale.top, 50.0, scale.bottom, "#333", 1.0);
    svg.line(50.0, scale.bottom, width - 20.0, scale.bottom, "#333", 1.0);
    for tick in 0..=4 {
        let v = scale.lo + (scale.hi - scale.lo) * tick as f64 / 4.0;
        let y = scale.y(v);
        svg.line(46.0, y, 50.0, y, "#333", 1.0);
        svg.text(42.0, y + 3.0, 9.0, "end", &format!("{v:.2}"));
    }
    let slot = (width - 90.0) / regimes.len() as f64;
    let zero_y = scale.y(0.0);
    for (i, (regime, &v)) in regimes.iter().zip(values).enumerate() {
        let cx = 50.0 + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        let y = scale.y(v);
        svg.rect(
            cx - half,
            y.min(zero_y),
            2.0 * half,
            (zero_y - y).abs(),
            PALETTE[i % PALETTE.len()],
            "#333",
        );
        svg.text(cx, y.min(zero_y) - 4.0, 9.0, "middle", &format!("{v:.3}"));
        svg.text(cx, height - 32.0, 10.0, "middle", regime);
    }
    svg.finish()
}

fn render_scatter_svg(title: &str, points: &[[f64; 2]], bins: &[usize]) -> String {
    let (width, height) = (420.0, 420.0);
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    let xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    let sx = Scale::new(&xs, 40.0, width - 20.0);
    let sy = Scale::new(&ys, 40.0, height - 30.0);
    for (p, &bin) in points.iter().zip(bins) {
        svg.circle(sx.x(p[0]), sy.y(p[1]), 4.0, PALETTE[bin % PALETTE.len()]);
    }
    let legend: BTreeSet<usize> = bins.iter().copied().collect();
    for (i, bin) in legend.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        svg.circle(width - 60.0, y - 3.0, 4.0, PALETTE[bin % PALETTE.len()]);
        svg.text(width - 50.0, y, 10.0, "start", &format!("bin {bin}"));
    }
    svg.finish()
}

fn render_heatmap_svg(title: &str, bins: &[usize], matrix: &Array2<f64>) -> String {
    let k = bins.len();
    let cell = 56.0;
    let (x0, y0) = (70.0, 50.0);
    let width = x0 + cell * k as f64 + 20.0;
    let height = y0 + cell * k as f64 + 30.0;
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    let max = matrix.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    for i in 0..k {
        for j in 0..k {
            let v = matrix[[i, j]];
            let shade = (255.0 - 205.0 * (v / max)) as u8;
            let fill = format!("#{shade:02x}{shade:02x}ff");
            svg.rect(
                x0 + cell * j as f64,
                y0 + cell * i as f64,
                cell,
                cell,
                &fill,
                "#666",
            );
            svg.text(
                x0 + cell * (j as f64 + 0.5),
                y0 + cell * (i as f64 + 0.55),
                10.0,
                "middle",
                &format!("{v:.2}"),
            );
        }
        svg.text(
            x0 - 8.0,
            y0 + cell * (i as f64 + 0.55),
            10.0,
            "end",
            &format!("bin {}", bins[i]),
        );
        svg.text(
            x0 + cell * (i as f64 + 0.5),
            y0 + cell * k as f64 + 14.0,
            10.0,
            "middle",
            &format!("bin {}", bins[i]),
        );
    }
    svg.finish()
}

/// Render every figure and data table for a validated matrix. `tsne_seed`
/// and `perplexity` control the scatter projections, which are computed from
/// the first configured seed's embeddings per (regime, criterion).
pub fn render_reports(
    matrix: &ExperimentMatrix,
    out_dir: &Path,
    perplexity: f64,
    tsne_seed: u64,
) -> Result<Vec<PathBuf>> {
    matrix.validate()?;
    let mut written = Vec::new();
    let first_seed = matrix.seeds[0];
    for criterion in &matrix.criteria {
        let dir = out_dir.join(criterion);

        // Box plot of R^2 across seeds, one box per regime.
        let mut box_tsv = String::from("regime\tmin\tq1\tmedian\tq3\tmax\n");
        let mut stats = Vec::new();
        for regime in &matrix.regimes {
            let values: Vec<f64> = matrix
                .seeds
                .iter()
                .map(|&s| matrix.cell(regime, criterion, s).r_squared)
                .collect();
            let s = boxplot_stats(&values)?;
            let _ = writeln!(
                box_tsv,
                "{regime}\t{}\t{}\t{}\t{}\t{}",
                s.0, s.1, s.2, s.3, s.4
            );
            stats.push(s);
        }
        let box_svg = render_boxplot_svg(
            &format!("Test R^2 by model ({criterion})"),
            &matrix.regimes,
            &stats,
        );
        for (name, content) in [("r2_box.tsv", box_tsv), ("r2_box.svg", box_svg)] {
            let path = dir.join(name);
            write_atomic(&path, content.as_bytes())?;
            written.push(path);
        }

        // Davies-Bouldin bar chart (mean across seeds).
        let mut db_tsv = String::from("regime\tdavies_bouldin_mean\n");
        let mut db_means = Vec::new();
        for regime in &matrix.regimes {
            let mean = matrix
                .seeds
                .iter()
                .map(|&s| matrix.cell(regime, criterion, s).davies_bouldin)
                .sum::<f64>()
                / matrix.seeds.len() as f64;
            let _ = writeln!(db_tsv, "{regime}\t{mean}");
            db_means.push(mean);
        }
        let db_svg = render_bar_svg(
            &format!("Davies-Bouldin index by model ({criterion})"),
            &matrix.regimes,
            &db_means,
        );
        for (name, content) in [("db_bar.tsv", db_tsv), ("db_bar.svg", db_svg)] {
            let path = dir.join(name);
            write_atomic(&path, content.as_bytes())?;
            written.push(path);
        }

        // Per-regime latent scatter and centroid heatmap from the first
        // configured seed.
        for regime in &matrix.regimes {
            let cell = matrix.cell(regime, criterion, first_seed);
            let (_, bins, ratings, latents) =
                crate::eval::read_embedding_table(&cell.embedding_path)?;
            let n = latents.nrows();
            let eff_perplexity = perplexity.min((n as f64 - 1.0) / 3.0 * 0.999);
            let points = crate::eval::project_2d(latents.view(), eff_perplexity, tsne_seed)?;
            let mut scatter_tsv = String::from("x\ty\tbin\n");
            for (p, &bin) in points.iter().zip(&bins) {
                let _ = writeln!(scatter_tsv, "{}\t{}\t{bin}", p[0], p[1]);
            }
            let scatter_svg = render_scatter_svg(
                &format!("Latent space of {regime} ({criterion}, seed {first_seed})"),
                &points,
                &bins,
            );
            let scatter_tsv_path = dir.join(format!("{regime}_scatter.tsv"));
            write_atomic(&scatter_tsv_path, scatter_tsv.as_bytes())?;
            written.push(scatter_tsv_path);
            let scatter_path = dir.join(format!("{regime}_scatter.svg"));
            write_atomic(&scatter_path, scatter_svg.as_bytes())?;
            written.push(scatter_path);

            let rating_bins = crate::loss::RatingBins::new(
                bins.iter().max().map(|&m| (m + 1).max(2)).unwrap_or(2),
            )?;
            let emb = crate::eval::EmbeddingSet::new(
                latents,
                ratings,
                (0..n).map(|i| format!("p{i}")).collect(),
                &rating_bins,
            )?;
            let (occupied, dist) = crate::eval::centroid_distance_matrix(&emb)?;
            let mut centroid_tsv = String::from("bin");
            for &b in &occupied {
                let _ = write!(centroid_tsv, "\t{b}");
            }
            centroid_tsv.push('\n');
            for (i, &b) in occupied.iter().enumerate() {
                let _ = write!(centroid_tsv, "{b}");
                for j in 0..occupied.len() {
                    let _ = write!(centroid_tsv, "\t{}", dist[[i, j]]);
                }
                centroid_tsv.push('\n');
            }
            let heat_svg = render_heatmap_svg(
                &format!("Centroid distances of {regime} ({criterion})"),
                &occupied,
                &dist,
            );
            let centroid_tsv_path = dir.join(format!("{regime}_centroid.tsv"));
            write_atomic(&centroid_tsv_path, centroid_tsv.as_bytes())?;
            written.push(centroid_tsv_path);
            let heat_path = dir.join(format!("{regime}_centroid.svg"));
            write_atomic(&heat_path, heat_svg.as_bytes())?;
            written.push(heat_path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn boxplot_examples() {
        assert_eq!(
            boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert_eq!(
            boxplot_stats(&[7.0]).unwrap(),
            (7.0, 7.0, 7.0, 7.0, 7.0)
        );
        assert_eq!(
            boxplot_stats(&[4.0, 2.0, 3.0, 1.0]).unwrap(),
            (1.0, 1.75, 2.5, 3.25, 4.0)
        );
        assert!(boxplot_stats(&[]).is_err());
    }

    proptest! {
        #[test]
        fn boxplot_is_monotone(values in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let (min, q1, med, q3, max) = boxplot_stats(&values).unwrap();
            prop_assert!(min <= q1 && q1 <= med && med <= q3 && q3 <= max);
        }
    }

    #[test]
    fn missing_cell_is_named() {
        let matrix = ExperimentMatrix {
            regimes: vec!["baseline".into()],
            criteria: vec!["note_accuracy".into()],
            seeds: vec![0, 1],
            cells: vec![MatrixCell {
                regime: "baseline".into(),
                criterion: "note_accuracy".into(),
                seed: 0,
                r_squared: 0.5,
                davies_bouldin: 1.0,
                embedding_path: PathBuf::new(),
            }],
        };
        let err = matrix.validate().unwrap_err().to_string();
        assert!(err.contains("(baseline, note_accuracy, 1)"), "{err}");
    }

    #[test]
    fn duplicate_cell_is_rejected() {
        let cell = MatrixCell {
            regime: "baseline".into(),
            criterion: "note_accuracy".into(),
            seed: 0,
            r_squared: 0.5,
            davies_bouldin: 1.0,
            embedding_path: PathBuf::new(),
        };
        let matrix = ExperimentMatrix {
            regimes: vec!["baseline".into()],
            criteria: vec!["note_accuracy".into()],
            seeds: vec![0],
            cells: vec![cell.clone(), cell],
        };
        assert!(matrix.validate().is_err());
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/dir/file.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(!path.with_extension("txt.tmp").exists());
    }
}
