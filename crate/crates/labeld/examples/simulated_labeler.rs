//! Drives a labeling session with a simulated annotator who prefers the
//! higher true return but answers "not sure" on near ties, then ranks the
//! demonstrations from the exported votes.

use trex_core::demos::{generate_demos, rank_by_votes, train_demonstrator};
use trex_core::policy::LearnerConfig;
use trex_core::presets;
use trex_labeld::{Choice, LabelSession, DEFAULT_TARGET_VOTES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = presets::extrap9();
    let checkpoints = train_demonstrator(&spec, &LearnerConfig::default(), 0)?;
    let demos = generate_demos(&spec, &checkpoints, 1, 0)?;
    let mut session = LabelSession::new("example", &spec, &demos, 1, DEFAULT_TARGET_VOTES)?;

    while let Some(p) = session.next_pair() {
        let (l, r) = (demos[p.left].gt_return, demos[p.right].gt_return);
        let choice = if (l - r).abs() < 1.0 {
            Choice::NotSure
        } else if l > r {
            Choice::ABetter
        } else {
            Choice::BBetter
        };
        session.vote(&p.pair_id, choice)?;
    }
    let status = session.status();
    println!("{} votes, {}/{} pairs retired", status.votes, status.retired, status.pairs);

    let ds = rank_by_votes(&demos, &session.export())?;
    println!("{} decided pairs, agreement with true returns {:.3}", ds.pairs.len(), ds.order_correctness);
    Ok(())
}
