//! Random-policy statistics for a corpus under one condition.
//!
//! cargo run --example random_walk -- [A|B] [episodes] [corpus.json]
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dt_core::{fixtures, Condition, Episode, EpisodeConfig, TelemetryConfig, Termination};

fn main() {
    let cond: Condition = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(Condition::A);
    let n: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(20_000);
    let corpus = Arc::new(match std::env::args().nth(3) {
        Some(p) => dt_core::Corpus::load(std::path::Path::new(&p)).unwrap(),
        None => fixtures::sar_corpus().unwrap(),
    });
    let mut ep = Episode::new(corpus.clone(), TelemetryConfig::for_provider(corpus.provider().kind()), EpisodeConfig::with_condition(cond)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut solved, mut tk, mut cc, mut turns, mut si) = (0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        ep.reset();
        loop {
            let o = ep.step(rng.random_range(0..corpus.num_actions())).unwrap();
            if o.done {
                if o.cause == Some(Termination::AllResolved) {
                    solved += 1;
                }
                break;
            }
        }
        let t = ep.totals();
        tk += t.total_knowledge;
        cc += t.complete_categories as f64;
        turns += t.turns as f64;
        si += t.mean_si;
    }
    let n = n as f64;
    println!("{cond}: solved {:.4} tk {:.3} cc {:.2} turns {:.1} si {:.3}", solved as f64 / n, tk / n, cc / n, turns / n, si / n);
}
