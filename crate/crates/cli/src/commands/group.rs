//! `vcgeo group`: overlap-based view regrouping.

use std::path::PathBuf;

use clap::Args;
use vcgeo_core::dataio::{regroup_dataset, Dataset};

use crate::{usage, CliError};

#[derive(Args)]
pub struct GroupArgs {
    /// Source dataset directory or manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Frames per regrouped sequence.
    #[arg(long, default_value_t = 3)]
    pub num_view: usize,
}

pub fn run(args: &GroupArgs) -> Result<(), CliError> {
    if args.num_view < 2 {
        return Err(usage("--num-view must be at least 2"));
    }
    let dataset = Dataset::open(&args.data)?;
    let source = dataset.ids().count();
    let (manifest, written) = regroup_dataset(&dataset, args.num_view, &args.out)?;
    println!(
        "regrouped {source} sequences into {written} groups of {} at {}",
        args.num_view,
        manifest.display()
    );
    Ok(())
}
