//! Numeric formatting and hashing for machine-readable outputs.

/// Format a float so that parsing the string recovers the exact value, with
/// at least six significant digits (zero-padded when the shortest exact
/// representation is shorter).
pub fn fmt_f64(v: f64) -> String {
    let mut s = v.to_string();
    if !v.is_finite() {
        return s;
    }
    let significant = s
        .chars()
        .filter(char::is_ascii_digit)
        .collect::<String>()
        .trim_start_matches('0')
        .len();
    if significant < 6 {
        if !s.contains('.') {
            s.push('.');
        }
        for _ in 0..(6 - significant) {
            s.push('0');
        }
    }
    s
}

/// FNV-1a over a byte stream; used to fingerprint corpora in sweep metadata.
#[derive(Clone, Copy)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}
