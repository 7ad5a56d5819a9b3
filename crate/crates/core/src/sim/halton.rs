const PRIMES: [u64; 50] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109,
    113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
];

fn nth_prime(k: usize) -> u64 {
    if k < PRIMES.len() {
        return PRIMES[k];
    }
    let mut found = PRIMES.len();
    let mut c = PRIMES[PRIMES.len() - 1];
    loop {
        c += 2;
        if (3..).step_by(2).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            if found == k {
                return c;
            }
            found += 1;
        }
    }
}

/// Van der Corput radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % base) as f64 * f;
        index /= base;
        f *= inv;
    }
    r
}

/// First `count` Halton points (indices 1..=count) with the first `p` primes
/// as bases, mapped to `[-1, 1]^p`. Row-major, `count * p` values.
pub fn halton_grid(count: usize, p: usize) -> Vec<f64> {
    let bases: Vec<u64> = (0..p).map(nth_prime).collect();
    let mut out = Vec::with_capacity(count * p);
    for i in 1..=count as u64 {
        out.extend(bases.iter().map(|&b| 2.0 * radical_inverse(i, b) - 1.0));
    }
    out
}
