mod common;

use common::{bandit, fixed_batch_critic, BANDIT_PEAK};

#[test]
fn bandit_action_converges_to_peak() {
    let run = bandit(11, 20_000);
    assert!(
        (run.action - BANDIT_PEAK).abs() < 0.1,
        "deterministic action {} after {} updates",
        run.action,
        run.updates
    );
}

#[test]
fn critic_fits_a_fixed_batch() {
    let (first, last) = fixed_batch_critic(5, 200);
    assert!(last < 0.1 * first, "critic loss {first} -> {last}");
}
