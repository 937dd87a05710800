use std::path::PathBuf;

use clap::{Args, ValueEnum};
use lineup_core::facespace::{
    interpolate, nearest_neighbor, perturb, perturbation_sigma, sample_prior, Decoder, EigenfaceModel, LatentPoint,
    PERTURB_LEVELS,
};
use lineup_core::imagecore::{lanczos_resample, tile_grid, write_png, Image, ResampleSpec};
use rand::Rng;
use serde::Serialize;

use super::{load_model, read_corpus, rng, write_json};
use crate::error::{data, runtime, usage, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureMode {
    /// rows × cols prior samples (default 4 × 8).
    Samples,
    /// One interpolation per row, `cols` points each (default 4 × 7).
    Interp,
    /// One row per perturbation level around a single seed (4 × cols, default 8).
    Perturb,
    /// Sample | nearest corpus image pairs (rows × 2, default 8 rows).
    Nn,
}

#[derive(Debug, Args)]
pub struct FiguresArgs {
    /// Eigenface model file.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: FigureMode,
    /// Output PNG; a JSON sidecar is written next to it.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Perturbation scale of level 1.
    #[arg(long, default_value_t = 0.25)]
    pub base_sigma: f64,
    /// Training corpus for nearest-neighbor search.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Draw nn queries from the corpus instead of the prior.
    #[arg(long)]
    pub from_corpus: bool,
    /// Resample every tile to this side.
    #[arg(long)]
    pub tile_side: Option<usize>,
}

#[derive(Debug, Serialize)]
struct NeighborPair {
    query: String,
    neighbor_index: usize,
    neighbor_file: String,
    correlation: f64,
}

#[derive(Debug, Serialize)]
struct Sidecar {
    mode: FigureMode,
    seed: u64,
    rows: usize,
    cols: usize,
    tile_side: usize,
    /// Latent point of every tile in row-major order; nn rows hold the
    /// query latent only when it came from the prior.
    latents: Vec<Option<LatentPoint>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    sigmas: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    neighbors: Vec<NeighborPair>,
}

fn geometry(args: &FiguresArgs) -> Result<(usize, usize)> {
    let fixed = |name: &str, given: Option<usize>, want: usize| match given {
        Some(v) if v != want => Err(usage(format!("{:?} mode has exactly {want} {name}", args.mode))),
        _ => Ok(want),
    };
    let (rows, cols) = match args.mode {
        FigureMode::Samples => (args.rows.unwrap_or(4), args.cols.unwrap_or(8)),
        FigureMode::Interp => (args.rows.unwrap_or(4), args.cols.unwrap_or(7)),
        FigureMode::Perturb => (fixed("rows", args.rows, PERTURB_LEVELS as usize)?, args.cols.unwrap_or(8)),
        FigureMode::Nn => (args.rows.unwrap_or(8), fixed("columns", args.cols, 2)?),
    };
    if rows == 0 || cols == 0 {
        return Err(usage("rows and columns must be positive"));
    }
    if args.mode == FigureMode::Interp && cols < 2 {
        return Err(usage("interpolation needs at least 2 columns"));
    }
    Ok((rows, cols))
}

fn decode_all(model: &EigenfaceModel, zs: &[LatentPoint]) -> Result<Vec<Image>> {
    zs.iter().map(|z| model.decode(z).map_err(runtime)).collect()
}

pub fn run(args: &FiguresArgs, seed: u64) -> Result<()> {
    let (rows, cols) = geometry(args)?;
    if !(args.base_sigma.is_finite() && args.base_sigma >= 0.0) {
        return Err(usage("--base-sigma must be finite and non-negative"));
    }
    if args.tile_side == Some(0) {
        return Err(usage("--tile-side must be positive"));
    }
    if args.mode != FigureMode::Nn && (args.corpus.is_some() || args.from_corpus) {
        return Err(usage("--corpus and --from-corpus apply to nn mode only"));
    }
    let model = load_model(&args.model)?;
    let d = model.dim();
    let mut rng = rng(seed, 0);
    let mut sidecar = Sidecar {
        mode: args.mode,
        seed,
        rows,
        cols,
        tile_side: args.tile_side.unwrap_or(model.image_side()),
        latents: Vec::new(),
        sigmas: Vec::new(),
        neighbors: Vec::new(),
    };

    let tiles = match args.mode {
        FigureMode::Samples => {
            let zs: Vec<LatentPoint> = (0..rows * cols).map(|_| sample_prior(d, &mut rng)).collect();
            let tiles = decode_all(&model, &zs)?;
            sidecar.latents = zs.into_iter().map(Some).collect();
            tiles
        }
        FigureMode::Interp => {
            let mut zs = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let z0 = sample_prior(d, &mut rng);
                let z1 = sample_prior(d, &mut rng);
                zs.extend(interpolate(&z0, &z1, cols).map_err(usage)?);
            }
            let tiles = decode_all(&model, &zs)?;
            sidecar.latents = zs.into_iter().map(Some).collect();
            tiles
        }
        FigureMode::Perturb => {
            let base = sample_prior(d, &mut rng);
            let mut zs = Vec::with_capacity(rows * cols);
            for level in 1..=PERTURB_LEVELS {
                sidecar.sigmas.push(perturbation_sigma(level, args.base_sigma).map_err(usage)?);
                for _ in 0..cols {
                    zs.push(perturb(&base, level, args.base_sigma, &mut rng).map_err(usage)?);
                }
            }
            let tiles = decode_all(&model, &zs)?;
            sidecar.latents = zs.into_iter().map(Some).collect();
            tiles
        }
        FigureMode::Nn => {
            let dir = args.corpus.as_ref().ok_or_else(|| usage("nn mode needs --corpus"))?;
            let corpus = read_corpus(dir)?;
            if corpus.is_empty() {
                return Err(data(format!("no PNG files in {}", dir.display())));
            }
            let images: Vec<Image> = corpus.iter().map(|(_, img)| img.clone()).collect();
            let mut tiles = Vec::with_capacity(rows * 2);
            for row in 0..rows {
                let (query, label, z) = if args.from_corpus {
                    let j = rng.random_range(0..images.len());
                    (images[j].clone(), format!("corpus:{}", corpus[j].0), None)
                } else {
                    let z = sample_prior(d, &mut rng);
                    (model.decode(&z).map_err(runtime)?, "prior".to_string(), Some(z))
                };
                let (k, r) = nearest_neighbor(&images, &query).map_err(data)?;
                println!("{row}\tquery={label}\tneighbor={}\tcorrelation={r:.6}", corpus[k].0);
                sidecar.neighbors.push(NeighborPair {
                    query: label,
                    neighbor_index: k,
                    neighbor_file: corpus[k].0.clone(),
                    correlation: r,
                });
                sidecar.latents.extend([z, None]);
                tiles.push(query);
                tiles.push(images[k].clone());
            }
            tiles
        }
    };

    let tiles = match args.tile_side {
        Some(side) => tiles
            .iter()
            .map(|t| lanczos_resample(t, ResampleSpec::square(side)).map_err(runtime))
            .collect::<Result<Vec<_>>>()?,
        None => tiles,
    };
    let grid = tile_grid(&tiles, rows, cols).map_err(data)?;
    write_png(&args.out, &grid).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;
    write_json(&args.out.with_extension("json"), &sidecar)?;
    println!("wrote {rows}x{cols} grid to {}", args.out.display());
    Ok(())
}
