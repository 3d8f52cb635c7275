//! Image directories as evaluation sets, and corruption of whole trees.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use capscore_core::corrupt::{is_image_path, random_noise_image, Corruption, RasterImage};
use capscore_core::rng::SeededRng;
use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::error::{CliError, Result};
use crate::manifest::NoiseSpec;

/// Image files under `dir` as `(sample id, path)`, sorted by relative path.
/// The id is the relative path without extension, `/`-separated.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Walk {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if !entry.file_type().is_file() || !is_image_path(path) {
            continue;
        }
        let rel = path.strip_prefix(dir).expect("walk stays under its root");
        let id = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        out.push((id, path.to_path_buf()));
    }
    Ok(out)
}

/// Seed for the `index`-th image of a set corrupted with `seed`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    SeededRng::derive(seed, index as u64).next_u64()
}

/// Loads every image under `dir`, optionally corrupted.
pub fn load_images(dir: &Path, corruption: Option<(Corruption, u64)>) -> Result<Vec<(String, RasterImage)>> {
    list_images(dir)?
        .into_par_iter()
        .enumerate()
        .map(|(i, (id, path))| {
            let img = RasterImage::load(&path)?;
            Ok(match corruption {
                Some((c, seed)) => (id, c.apply(&img, image_seed(seed, i))),
                None => (id, img),
            })
        })
        .collect()
}

pub fn noise_images(spec: &NoiseSpec) -> Vec<(String, RasterImage)> {
    (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let img = random_noise_image(spec.width, spec.height, image_seed(spec.seed, i));
            (format!("noise{i:05}"), img)
        })
        .collect()
}

#[derive(Serialize)]
struct CorruptionLine<'a> {
    input: &'a str,
    output: &'a str,
    #[serde(flatten)]
    corruption: Corruption,
    seed: u64,
}

/// File in the output tree listing one line per corrupted image.
pub const CORRUPTION_LOG: &str = "corruptions.jsonl";

/// Applies `corruption` to every image under `input`, writing the same
/// relative paths under `output`. Other files (such as reference captions)
/// are copied unchanged. Returns the number of images written.
pub fn corrupt_tree(input: &Path, output: &Path, corruption: Corruption, seed: u64) -> Result<usize> {
    corruption.validate()?;
    let images = list_images(input)?;
    let written: Vec<(String, String, u64)> = images
        .par_iter()
        .enumerate()
        .map(|(i, (_, path))| {
            let rel = path.strip_prefix(input).expect("listed under input");
            let dest = output.join(rel);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            let s = image_seed(seed, i);
            corruption.apply(&RasterImage::load(path)?, s).save(&dest)?;
            let rel = rel.to_string_lossy().replace('\\', "/");
            Ok((rel.clone(), rel, s))
        })
        .collect::<Result<_>>()?;

    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Walk {
            path: input.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if entry.file_type().is_file() && !is_image_path(path) {
            let dest = output.join(path.strip_prefix(input).expect("under input"));
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            fs::copy(path, &dest).map_err(|e| CliError::io(path, e))?;
        }
    }

    fs::create_dir_all(output).map_err(|e| CliError::io(output, e))?;
    let log_path = output.join(CORRUPTION_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    for (input, output, seed) in &written {
        let line = serde_json::to_string(&CorruptionLine {
            input,
            output,
            corruption,
            seed: *seed,
        })
        .map_err(capscore_core::Error::from)?;
        writeln!(log, "{line}").map_err(|e| CliError::io(&log_path, e))?;
    }
    Ok(written.len())
}
