//! Simulate Bouncing Balls and print per-ball speeds over time along with an
//! ASCII rendering of the ground-truth masks.
//!
//! cargo run --release --example bouncing_balls

use setcon::datasets::{bouncing_balls_sequence, bouncing_balls_trace, BallsConfig};

fn main() -> setcon::Result<()> {
    let cfg = BallsConfig {
        size: 16,
        ..BallsConfig::default()
    };
    let trace = bouncing_balls_trace(4, &cfg)?;
    for (t, state) in trace.iter().enumerate().step_by(3) {
        let speeds: Vec<String> = state.balls.iter().map(|b| format!("{:.6}", b.speed())).collect();
        println!("t={t:>2} speeds {}", speeds.join(" "));
    }
    let seq = bouncing_balls_sequence(4, &cfg)?;
    let mask = seq.mask(0);
    for row in mask.chunks(seq.width()) {
        let line: String = row
            .iter()
            .map(|&m| if m == 0 { '.' } else { char::from(b'0' + m) })
            .collect();
        println!("{line}");
    }
    Ok(())
}
