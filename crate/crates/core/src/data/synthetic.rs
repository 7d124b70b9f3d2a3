use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::InteractionEvent;

/// A log in which users and items each fall into one of two taste groups
/// and a user clicks exactly the items of their own group. Every user sees
/// `per_user` items drawn uniformly, one per time step.
pub fn synthetic_events(
    users: usize,
    items: usize,
    per_user: usize,
    seed: u64,
) -> Vec<InteractionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(users * per_user);
    for t in 0..per_user {
        for u in 0..users {
            let i = rng.gen_range(0..items);
            out.push(InteractionEvent {
                user_id: format!("u{u:03}"),
                item_id: format!("i{i:03}"),
                label: u8::from(u % 2 == i % 2),
                timestamp: t as i64,
                raw_rating: None,
            });
        }
    }
    out
}
