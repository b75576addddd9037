//! Regenerates the deterministic fixture set under `crates/core/fixtures/`.
//!
//! ```text
//! cargo run -p stainkit --example make_fixtures
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stainkit::eval::{write_feature_csv, FeatureRecord};
use stainkit::image::save_image;
use stainkit::nn::{ConvWeights, FusionBlock, Tensor4, DEFAULT_DEMOD_EPS, DEFAULT_SIMAM_LAMBDA};
use stainkit::stain::{vec_mat, DEFAULT_STAIN_MATRIX};
use stainkit::weights::TensorFile;
use stainkit::RgbImage;

const TILE: usize = 64;
const FEATURE_DIM: usize = 16;

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Sum of random Gaussian blobs, scaled into `[0, peak]`.
fn blob_field(rng: &mut ChaCha8Rng, blobs: usize, peak: f64) -> Vec<f64> {
    let centers: Vec<(f64, f64, f64)> = (0..blobs)
        .map(|_| {
            (
                rng.gen_range(0.0..TILE as f64),
                rng.gen_range(0.0..TILE as f64),
                rng.gen_range(3.0..9.0),
            )
        })
        .collect();
    let mut field = vec![0.0; TILE * TILE];
    for (i, v) in field.iter_mut().enumerate() {
        let (y, x) = ((i / TILE) as f64, (i % TILE) as f64);
        *v = centers
            .iter()
            .map(|(cy, cx, r)| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * r * r)).exp())
            .sum();
    }
    let max = field.iter().cloned().fold(f64::MIN, f64::max);
    field.iter().map(|v| peak * v / max).collect()
}

/// Renders stain concentrations (H, E, DAB) as `exp(-c · P)`.
fn render(h: &[f64], e: &[f64], dab: &[f64]) -> RgbImage {
    RgbImage::from_fn(TILE, TILE, |r, c| {
        let i = r * TILE + c;
        vec_mat([-h[i], -e[i], -dab[i]], &DEFAULT_STAIN_MATRIX).map(f64::exp)
    })
}

fn write_const16(path: &Path, value: f64) {
    let s = (value * 65535.0).round() as u16;
    ImageBuffer::from_fn(16, 16, |_, _| Rgb([s, s, s])).save(path).unwrap();
}

fn feature_records(rng: &mut ChaCha8Rng, prefix: &str, n: usize, centers: &[Vec<f64>], spread: f64) -> Vec<FeatureRecord> {
    (0..n)
        .map(|i| {
            let label = (i % 4) as u8;
            let v = centers[label as usize]
                .iter()
                .map(|c| c + rng.gen_range(-spread..spread))
                .collect();
            FeatureRecord::new(format!("{prefix}{i:03}"), label, v)
        })
        .collect()
}

fn main() {
    let dir = fixtures_dir();
    fs::create_dir_all(&dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20240521);

    let zeros = vec![0.0; TILE * TILE];
    let h = blob_field(&mut rng, 14, 1.1);
    let e = blob_field(&mut rng, 10, 0.8);
    save_image(&render(&h, &e, &zeros), dir.join("he_tile.png")).unwrap();

    let h = blob_field(&mut rng, 12, 0.7);
    let dab = blob_field(&mut rng, 8, 1.3);
    save_image(&render(&h, &zeros, &dab), dir.join("ihc_tile.png")).unwrap();
    let dab2 = blob_field(&mut rng, 8, 1.0);
    save_image(&render(&h, &zeros, &dab2), dir.join("ihc_generated.png")).unwrap();

    write_const16(&dir.join("const_050.png"), 0.5);
    write_const16(&dir.join("const_060.png"), 0.6);

    let centers: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..FEATURE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let library = feature_records(&mut rng, "gt", 200, &centers, 1.2);
    let queries = feature_records(&mut rng, "gen", 200, &centers, 1.6);
    write_feature_csv(&library, fs::File::create(dir.join("library.csv")).unwrap()).unwrap();
    write_feature_csv(&queries, fs::File::create(dir.join("queries.csv")).unwrap()).unwrap();

    let pair = |rng: &mut ChaCha8Rng| -> String {
        (0..2)
            .map(|_| {
                (0..8)
                    .map(|_| format!("{:?}", rng.gen_range(-1.0..1.0f64)))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    };
    fs::write(dir.join("h_pair.csv"), pair(&mut rng)).unwrap();
    fs::write(dir.join("cmp_pair.csv"), pair(&mut rng)).unwrap();

    let ch = 4;
    let conv = |rng: &mut ChaCha8Rng, bias: bool| ConvWeights {
        weight: Tensor4::from_fn([ch, ch, 3, 3], |_| rng.gen_range(-0.5..0.5)),
        bias: bias.then(|| (0..ch).map(|_| rng.gen_range(-0.1..0.1)).collect()),
    };
    let block = FusionBlock {
        conv1: conv(&mut rng, true),
        conv2: conv(&mut rng, true),
        eps: DEFAULT_DEMOD_EPS,
        lambda: DEFAULT_SIMAM_LAMBDA,
    };
    TensorFile::from_fusion_block(&block)
        .save(dir.join("fusion_block.bin"))
        .unwrap();

    println!("fixtures written to {}", dir.display());
}
