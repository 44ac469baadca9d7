//! Generate small GridWorld and Bouncing Balls containers, read them back and
//! print a summary of each.
//!
//! cargo run --release --example generate_datasets -- /tmp/setcon-data

use std::path::PathBuf;

use setcon::datasets::{
    generate_balls_dataset, generate_gridworld_dataset, gridworld_state_space, read_dataset, write_dataset,
    BallsConfig, GridWorldConfig,
};

fn main() -> setcon::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("setcon-data"));

    let gw = generate_gridworld_dataset(7, &GridWorldConfig::default(), 64, 16)?;
    let balls = generate_balls_dataset(7, &BallsConfig::default(), 64, 16)?;
    for ds in [&gw, &balls] {
        let dir = root.join(ds.kind.name());
        write_dataset(ds, &dir)?;
        let back = read_dataset(&dir)?;
        assert_eq!(&back, ds);
        let s = &back.sequences[0];
        println!(
            "{:<9} {} sequences ({} train / {} eval), {} frames of {}x{} -> {}",
            back.kind.name(),
            back.sequences.len(),
            back.train().len(),
            back.eval().len(),
            s.num_frames(),
            s.height(),
            s.width(),
            dir.display()
        );
    }
    println!(
        "3-object 5x5 GridWorld starting states: {}",
        gridworld_state_space(3, 5)
    );
    Ok(())
}
