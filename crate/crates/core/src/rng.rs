//! Philox4x32-10 counter-based generator.
//!
//! Every draw is a pure function of `(seed, counter)`, so a simulation can
//! address its random numbers by block, cycle and draw index instead of by
//! position in a shared stream.

pub const RNG_ALGORITHM: &str = "philox4x32-10";

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = u64::from(a) * u64::from(b);
    ((p >> 32) as u32, p as u32)
}

impl Philox4x32 {
    pub fn new(seed: u64) -> Self {
        Self::with_key([seed as u32, (seed >> 32) as u32])
    }

    pub fn with_key(key: [u32; 2]) -> Self {
        Self { key }
    }

    #[inline]
    pub fn block(&self, counter: [u32; 4]) -> [u32; 4] {
        let mut ctr = counter;
        let mut key = self.key;
        for round in 0..10 {
            if round > 0 {
                key[0] = key[0].wrapping_add(W0);
                key[1] = key[1].wrapping_add(W1);
            }
            let (hi0, lo0) = mulhilo(M0, ctr[0]);
            let (hi1, lo1) = mulhilo(M1, ctr[2]);
            ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
        }
        ctr
    }

    /// Two 64-bit words for a (stream, index) address within a domain.
    #[inline]
    pub fn words(&self, domain: u32, stream: u64, index: u32) -> [u64; 2] {
        let out = self.block([stream as u32, (stream >> 32) as u32, index, domain]);
        [
            u64::from(out[0]) | (u64::from(out[1]) << 32),
            u64::from(out[2]) | (u64::from(out[3]) << 32),
        ]
    }
}

/// Maps 64 random bits to the open interval (0, 1).
#[inline]
pub fn to_open_unit(x: u64) -> f64 {
    ((x >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Sequential uniforms from one addressed stream, two per Philox block.
#[derive(Debug, Clone)]
pub struct CounterStream {
    gen: Philox4x32,
    domain: u32,
    stream: u64,
    index: u32,
    buffered: Option<u64>,
}

impl CounterStream {
    pub fn new(gen: Philox4x32, domain: u32, stream: u64) -> Self {
        Self {
            gen,
            domain,
            stream,
            index: 0,
            buffered: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        if let Some(x) = self.buffered.take() {
            return x;
        }
        let [a, b] = self.gen.words(self.domain, self.stream, self.index);
        self.index = self.index.wrapping_add(1);
        self.buffered = Some(b);
        a
    }

    pub fn uniform(&mut self) -> f64 {
        to_open_unit(self.next_u64())
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
