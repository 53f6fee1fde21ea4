use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::error::CliResult;

/// Output directory that remembers the names of the files written to it.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn open(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        self.files.push(name.to_string());
        Ok(BufWriter::new(File::create(self.root.join(name))?))
    }

    pub fn matrix(&mut self, name: &str, headers: &[String], m: &DMatrix<f64>) -> CliResult<()> {
        let w = self.open(name)?;
        mqrif::io::write_matrix_csv(w, headers, m)?;
        Ok(())
    }

    pub fn table(&mut self, name: &str, headers: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let w = self.open(name)?;
        mqrif::io::write_table(w, headers, rows)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        self.files.push(name.to_string());
        std::fs::write(self.root.join(name), body)?;
        Ok(())
    }

    /// Writes `manifest.json`; the file list holds names only, never paths.
    pub fn finish(mut self, command: &str, seed: u64, settings: Value, results: Value) -> CliResult<()> {
        let manifest = json!({
            "tool": "mqrif",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "seed": seed,
            "settings": settings,
            "results": results,
            "outputs": self.files,
        });
        let mut body = serde_json::to_string_pretty(&manifest)?;
        body.push('\n');
        self.files.push("manifest.json".into());
        std::fs::write(self.root.join("manifest.json"), body)?;
        Ok(())
    }
}

/// File-name label for a level, e.g. `tau0.25`.
pub fn tau_label(tau: f64) -> String {
    format!("tau{tau}")
}

/// Closed polyline of the converged vertices of a planar contour.
pub fn contour_svg(points: &[[f64; 2]], tau: f64) -> String {
    let size = 480.0;
    let pad = 20.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = (size - 2.0 * pad) / span;
    let mut coords: Vec<String> = points
        .iter()
        .map(|p| format!("{:.3},{:.3}", pad + (p[0] - x0) * scale, size - pad - (p[1] - y0) * scale))
        .collect();
    if let Some(first) = coords.first().cloned() {
        coords.push(first);
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <title>M-quantile contour, tau = {tau}</title>\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <polyline fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"{}\"/>\n\
         </svg>\n",
        coords.join(" ")
    )
}
