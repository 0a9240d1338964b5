//! Stable string hashing, identical on every platform and release.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `s`.
pub fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed for one corpus item: the run seed mixed with a stable hash of the item id,
/// so item results do not depend on corpus order.
pub fn item_seed(global_seed: u64, item_id: &str) -> u64 {
    global_seed ^ fnv1a(item_id)
}
