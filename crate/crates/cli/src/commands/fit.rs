use std::path::PathBuf;

use clap::Args;
use lineup_core::facespace::{fit_eigenfaces, write_model, FaceSpaceError};
use lineup_core::imagecore::Image;

use super::read_corpus;
use crate::error::{data, runtime, usage, Result};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory of aligned PNGs.
    pub aligned: PathBuf,
    /// Number of components.
    #[arg(long, short)]
    pub d: usize,
    /// Model file to write.
    #[arg(long, short)]
    pub out: PathBuf,
}

pub fn run(args: &FitArgs) -> Result<()> {
    if args.d == 0 {
        return Err(usage("--d must be positive"));
    }
    let images: Vec<Image> = read_corpus(&args.aligned)?.into_iter().map(|(_, img)| img).collect();
    let model = fit_eigenfaces(&images, args.d).map_err(|e| match e {
        FaceSpaceError::Io(e) => runtime(e),
        e => data(e),
    })?;
    write_model(&args.out, &model).map_err(|e| runtime(format!("{}: {e}", args.out.display())))?;

    println!("fitted {} components on {} images of side {}", model.dim(), images.len(), model.image_side());
    println!("component\tscale\texplained\tcumulative");
    let mut cumulative = 0.0;
    for (i, (ratio, scale)) in model.explained_variance_ratio().iter().zip(model.scales()).enumerate() {
        cumulative += ratio;
        println!("{}\t{scale:.6}\t{ratio:.6}\t{cumulative:.6}", i + 1);
    }
    Ok(())
}
