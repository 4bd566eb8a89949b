/// Constant-time byte equality. The loop always walks the longer input and
/// folds differences into an accumulator, so the duration does not depend on
/// where the first mismatch sits.
#[inline(never)]
pub fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    let mut diff = a.len() ^ b.len();
    for i in 0..a.len().max(b.len()) {
        let x = *a.get(i).unwrap_or(&0);
        let y = *b.get(i).unwrap_or(&0);
        diff |= std::hint::black_box((x ^ y) as usize);
    }
    std::hint::black_box(diff) == 0
}
